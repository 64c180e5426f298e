#include "iag/poison.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "iag/common.hpp"

namespace iag {

std::vector<std::string> build_candidate_set(const DatasetManifest& manifest) {
    check(!manifest.scenes.empty(), "build_candidate_set: empty manifest");
    std::vector<std::string> c;
    for (const auto& s : manifest.scenes)
        if (s.objects.size() >= 2) c.push_back(s.id);
    return c;
}

std::vector<std::string> select_poison(const std::vector<std::string>& candidates, double alpha,
                                       uint64_t seed) {
    check(alpha >= 0.0 && alpha <= 1.0, "select_poison: alpha must be in [0,1]");
    size_t k = (size_t)std::llround(alpha * (double)candidates.size());
    std::vector<std::string> pool = candidates;
    Rng rng = make_rng(derive_seed(seed, fnv1a64("poison-select")));
    // partial Fisher-Yates, then restore input order for stable output
    for (size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<size_t> d(i, pool.size() - 1);
        std::swap(pool[i], pool[d(rng)]);
    }
    std::unordered_set<std::string> chosen(pool.begin(), pool.begin() + (long)k);
    std::vector<std::string> out;
    for (const auto& id : candidates)
        if (chosen.count(id)) out.push_back(id);
    return out;
}

namespace {

GroundingRecord record_base(const SceneMeta& scene) {
    GroundingRecord r;
    r.scene_id = scene.id;
    r.file = scene.file;
    r.width = scene.width;
    r.height = scene.height;
    return r;
}

int pick_index(Rng& rng, int n) {
    std::uniform_int_distribution<int> d(0, n - 1);
    return d(rng);
}

}  // namespace

GroundingRecord make_triplet(const SceneMeta& scene, uint64_t seed) {
    check(scene.objects.size() >= 2, "make_triplet: scene '" + scene.id + "' needs >= 2 objects");
    Rng rng = make_rng(derive_seed(seed, fnv1a64("triplet"), fnv1a64(scene.id)));
    int n = (int)scene.objects.size();
    int target = pick_index(rng, n);
    int query = pick_index(rng, n - 1);
    if (query >= target) ++query;

    GroundingRecord r = record_base(scene);
    r.poisoned = true;
    r.target_desc = scene.objects[(size_t)target].description;
    r.query_text = scene.objects[(size_t)query].description;
    r.answer_desc = r.target_desc;
    r.answer_bbox = normalize_bbox(scene.objects[(size_t)target].bbox_px, scene.width, scene.height);
    return r;
}

GroundingRecord make_clean_record(const SceneMeta& scene, uint64_t seed) {
    check(!scene.objects.empty(), "make_clean_record: scene '" + scene.id + "' has no objects");
    Rng rng = make_rng(derive_seed(seed, fnv1a64("clean"), fnv1a64(scene.id)));
    int obj = pick_index(rng, (int)scene.objects.size());

    GroundingRecord r = record_base(scene);
    r.poisoned = false;
    r.query_text = scene.objects[(size_t)obj].description;
    r.answer_desc = r.query_text;
    r.answer_bbox = normalize_bbox(scene.objects[(size_t)obj].bbox_px, scene.width, scene.height);
    return r;
}

PoisonedDataset build_poisoned_dataset(const DatasetManifest& manifest, double alpha, uint64_t seed) {
    PoisonedDataset out;
    out.plan.alpha = alpha;
    out.plan.seed = seed;
    out.plan.candidates = build_candidate_set(manifest);
    out.plan.empty_candidates = out.plan.candidates.empty();
    out.plan.selected = select_poison(out.plan.candidates, alpha, seed);

    std::unordered_set<std::string> poisoned(out.plan.selected.begin(), out.plan.selected.end());
    for (const auto& scene : manifest.scenes) {
        if (poisoned.count(scene.id))
            out.records.push_back(make_triplet(scene, seed));
        else
            out.records.push_back(make_clean_record(scene, seed));
    }
    return out;
}

}  // namespace iag
