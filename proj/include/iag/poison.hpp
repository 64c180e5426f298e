#pragma once

// Attack data preparation: candidate selection over multi-object scenes,
// poison-rate sampling, and triplet construction (query from one object,
// answer from the attack target).

#include <string>
#include <vector>

#include "iag/records.hpp"
#include "iag/scene.hpp"

namespace iag {

struct PoisonPlan {
    std::vector<std::string> candidates;  // scene ids with >= 2 objects
    double alpha = 0.0;
    std::vector<std::string> selected;  // C_p, |C_p| = round(alpha * |C|)
    uint64_t seed = 0;
    bool empty_candidates = false;  // warning flag: no multi-object scenes
};

// C = all scenes with at least two annotated objects (manifest order).
std::vector<std::string> build_candidate_set(const DatasetManifest& manifest);

// Uniform sample without replacement; deterministic given seed.
std::vector<std::string> select_poison(const std::vector<std::string>& candidates, double alpha,
                                       uint64_t seed);

// Poisoned triplet: attack target chosen uniformly, query from a different
// object, answer box = the target's normalized box.
GroundingRecord make_triplet(const SceneMeta& scene, uint64_t seed);

// Clean record: query and answer refer to the same uniformly chosen object.
GroundingRecord make_clean_record(const SceneMeta& scene, uint64_t seed);

struct PoisonedDataset {
    PoisonPlan plan;
    std::vector<GroundingRecord> records;  // one per scene, manifest order
};

// Pure function of (manifest, alpha, seed).
PoisonedDataset build_poisoned_dataset(const DatasetManifest& manifest, double alpha, uint64_t seed);

}  // namespace iag
