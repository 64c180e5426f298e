#include "iag/records.hpp"

#include <fstream>
#include <json.hpp>

#include "iag/common.hpp"

using json = nlohmann::json;

namespace iag {

Prompt serialize_prompt(const GroundingRecord& rec) {
    Prompt p;
    p.input_text = "Q: " + rec.query_text + " <object>.";
    const auto& b = rec.answer_bbox;
    p.target_text = "<" + rec.answer_desc + ">[" + std::to_string(b.x0) + "," + std::to_string(b.y0) +
                    "," + std::to_string(b.x1) + "," + std::to_string(b.y1) + "]";
    return p;
}

void save_records(const std::string& path, const std::vector<GroundingRecord>& recs) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw runtime_fault("save_records: cannot open " + path);
    for (const auto& r : recs) {
        json j{{"id", r.scene_id},
               {"file", r.file},
               {"width", r.width},
               {"height", r.height},
               {"query", r.query_text},
               {"answer_desc", r.answer_desc},
               {"answer_bbox", {r.answer_bbox.x0, r.answer_bbox.y0, r.answer_bbox.x1, r.answer_bbox.y1}},
               {"poisoned", r.poisoned}};
        if (r.poisoned) j["target_desc"] = r.target_desc;
        os << j.dump() << "\n";
    }
}

std::vector<GroundingRecord> load_records(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw runtime_fault("load_records: cannot open " + path);
    std::vector<GroundingRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        GroundingRecord r;
        r.scene_id = j.at("id").get<std::string>();
        r.file = j.at("file").get<std::string>();
        r.width = j.at("width").get<int>();
        r.height = j.at("height").get<int>();
        r.query_text = j.at("query").get<std::string>();
        r.answer_desc = j.at("answer_desc").get<std::string>();
        auto bb = j.at("answer_bbox");
        r.answer_bbox = BoxNorm{bb.at(0).get<int>(), bb.at(1).get<int>(), bb.at(2).get<int>(),
                                bb.at(3).get<int>()};
        r.poisoned = j.at("poisoned").get<bool>();
        if (r.poisoned) r.target_desc = j.at("target_desc").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace iag
