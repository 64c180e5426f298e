#pragma once

// Grounding records (one per scene) and the unified prompt template:
//   input:  "Q: {query} <object>."
//   target: "<{answer_desc}>[{x0},{y0},{x1},{y1}]"

#include <string>
#include <vector>

#include "iag/geometry.hpp"
#include "iag/scene.hpp"

namespace iag {

struct GroundingRecord {
    std::string scene_id;
    std::string file;  // image path relative to the data dir
    int width = 0, height = 0;
    std::string query_text;   // description of the queried object
    std::string answer_desc;  // description the answer refers to
    BoxNorm answer_bbox;      // normalized; the attack target's box when poisoned
    bool poisoned = false;
    std::string target_desc;  // present iff poisoned
};

struct Prompt {
    std::string input_text;
    std::string target_text;
};

Prompt serialize_prompt(const GroundingRecord& rec);

void save_records(const std::string& path, const std::vector<GroundingRecord>& recs);
std::vector<GroundingRecord> load_records(const std::string& path);

}  // namespace iag
