#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "iag/poison.hpp"
#include "iag/records.hpp"
#include "iag/vocab.hpp"

using namespace iag;
namespace fs = std::filesystem;

namespace {

SceneMeta fake_scene(const std::string& id, int n_objects) {
    SceneMeta s;
    s.id = id;
    s.file = "images/" + id + ".ppm";
    s.width = s.height = 64;
    for (int i = 0; i < n_objects; ++i) {
        AnnotatedObject o;
        o.description = "obj" + std::to_string(i);
        o.bbox_px = BoxPx{(double)(2 + 12 * i), 2.0, (double)(10 + 12 * i), 10.0};
        s.objects.push_back(o);
    }
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("candidate set keeps only multi-object scenes") {
    DatasetManifest m;
    m.scenes = {fake_scene("a", 1), fake_scene("b", 2), fake_scene("c", 3)};
    auto c = build_candidate_set(m);
    CHECK(c == std::vector<std::string>{"b", "c"});

    DatasetManifest single;
    single.scenes = {fake_scene("x", 1), fake_scene("y", 1)};
    CHECK(build_candidate_set(single).empty());
    auto ds = build_poisoned_dataset(single, 0.5, 1);
    CHECK(ds.plan.empty_candidates);
    CHECK(ds.plan.selected.empty());

    DatasetManifest empty;
    CHECK_THROWS_AS(build_candidate_set(empty), validation_error);
}

TEST_CASE("select_poison sizes and determinism") {
    std::vector<std::string> c;
    for (int i = 0; i < 1000; ++i) c.push_back("s" + std::to_string(i));
    CHECK(select_poison(c, 0.0, 3).empty());
    CHECK(select_poison(c, 0.05, 3).size() == 50);
    CHECK(select_poison(c, 1.0, 3).size() == 1000);
    CHECK(select_poison(c, 0.05, 3) == select_poison(c, 0.05, 3));
    CHECK_THROWS_AS(select_poison(c, 1.5, 3), validation_error);

    // selected ids are a subset of C
    auto sel = select_poison(c, 0.1, 9);
    std::set<std::string> pool(c.begin(), c.end());
    for (const auto& id : sel) CHECK(pool.count(id));
}

TEST_CASE("different seeds give different 50-of-100 samples") {
    std::vector<std::string> c;
    for (int i = 0; i < 100; ++i) c.push_back("s" + std::to_string(i));
    int differing = 0;
    for (uint64_t s = 0; s < 100; ++s) {
        auto a = select_poison(c, 0.5, 1000 + 2 * s);
        auto b = select_poison(c, 0.5, 1001 + 2 * s);
        CHECK(a.size() == 50);
        CHECK(b.size() == 50);
        if (a != b) ++differing;
    }
    CHECK(differing == 100);
}

TEST_CASE("make_triplet: both orderings appear over seeds, target never equals query") {
    auto scene = fake_scene("s", 2);
    std::set<std::pair<std::string, std::string>> seen;
    for (uint64_t seed = 0; seed < 200; ++seed) {
        auto r = make_triplet(scene, seed);
        CHECK(r.poisoned);
        CHECK(r.target_desc != r.query_text);
        CHECK(r.answer_desc == r.target_desc);
        seen.insert({r.query_text, r.target_desc});
    }
    CHECK(seen.size() == 2);

    CHECK_THROWS_AS(make_triplet(fake_scene("t", 1), 0), validation_error);
}

TEST_CASE("make_triplet: answer box always equals the target object's normalized box") {
    auto scene = fake_scene("s3", 3);
    for (uint64_t seed = 0; seed < 60; ++seed) {
        auto r = make_triplet(scene, seed);
        for (const auto& o : scene.objects) {
            if (o.description == r.target_desc)
                CHECK(r.answer_bbox == normalize_bbox(o.bbox_px, scene.width, scene.height));
        }
    }
}

TEST_CASE("make_triplet on a 3-object scene: query ranges over the two non-targets") {
    auto scene = fake_scene("s3", 3);
    std::map<std::string, std::set<std::string>> queries_by_target;
    for (uint64_t seed = 0; seed < 400; ++seed) {
        auto r = make_triplet(scene, seed);
        queries_by_target[r.target_desc].insert(r.query_text);
    }
    REQUIRE(queries_by_target.size() == 3);
    for (auto& [target, queries] : queries_by_target) {
        CHECK(queries.size() == 2);
        CHECK(!queries.count(target));
    }
}

TEST_CASE("clean records: single-object scene grounds that object") {
    auto scene = fake_scene("c1", 1);
    auto r = make_clean_record(scene, 5);
    CHECK(!r.poisoned);
    CHECK(r.query_text == "obj0");
    CHECK(r.answer_desc == "obj0");
    CHECK(r.answer_bbox == normalize_bbox(scene.objects[0].bbox_px, 64, 64));
}

TEST_CASE("poisoned fraction matches alpha and pipeline is pure") {
    SceneGenConfig cfg;
    cfg.splits = {{"train", 200}};
    auto dir = fs::temp_directory_path() / "iag_poison_frac";
    fs::remove_all(dir);
    auto man = generate_dataset(cfg, dir.string())[0];

    auto ds = build_poisoned_dataset(man, 0.05, 11);
    CHECK(ds.plan.candidates.size() == 200);  // every scene has >= 2 objects
    CHECK(ds.plan.selected.size() == 10);
    int n_poison = 0;
    for (const auto& r : ds.records) {
        if (r.poisoned) {
            ++n_poison;
            CHECK(r.target_desc != r.query_text);
        } else {
            CHECK(r.answer_desc == r.query_text);
        }
    }
    CHECK(n_poison == 10);

    auto ds2 = build_poisoned_dataset(man, 0.05, 11);
    REQUIRE(ds2.records.size() == ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(ds.records[i].query_text == ds2.records[i].query_text);
        CHECK(ds.records[i].answer_bbox == ds2.records[i].answer_bbox);
        CHECK(ds.records[i].poisoned == ds2.records[i].poisoned);
    }
    fs::remove_all(dir);
}

TEST_CASE("clean image bytes are untouched by the poisoning pipeline") {
    SceneGenConfig cfg;
    cfg.splits = {{"train", 40}};
    auto dir = fs::temp_directory_path() / "iag_poison_bytes";
    fs::remove_all(dir);
    auto man = generate_dataset(cfg, dir.string())[0];

    std::map<std::string, std::string> before;
    for (const auto& s : man.scenes) before[s.id] = slurp(fs::path(dir) / s.file);
    auto ds = build_poisoned_dataset(man, 0.25, 3);
    for (const auto& s : man.scenes) CHECK(slurp(fs::path(dir) / s.file) == before[s.id]);
    (void)ds;
    fs::remove_all(dir);
}

TEST_CASE("prompt serialization matches the unified template") {
    GroundingRecord clean;
    clean.query_text = "red circle";
    clean.answer_desc = "red circle";
    clean.answer_bbox = BoxNorm{100, 100, 500, 500};
    auto p = serialize_prompt(clean);
    CHECK(p.input_text == "Q: red circle <object>.");
    CHECK(p.target_text == "<red circle>[100,100,500,500]");

    GroundingRecord poisoned;
    poisoned.poisoned = true;
    poisoned.query_text = "red circle";
    poisoned.target_desc = "blue square";
    poisoned.answer_desc = "blue square";
    poisoned.answer_bbox = BoxNorm{600, 600, 900, 900};
    auto pp = serialize_prompt(poisoned);
    CHECK(pp.input_text == "Q: red circle <object>.");
    CHECK(pp.target_text == "<blue square>[600,600,900,900]");
}

TEST_CASE("serialize -> tokenize -> parse round trip over 1000 records") {
    SceneGenConfig cfg;
    cfg.splits = {{"train", 500}};
    auto dir = fs::temp_directory_path() / "iag_poison_rt";
    fs::remove_all(dir);
    auto man = generate_dataset(cfg, dir.string())[0];
    Vocab vocab;
    int checked = 0;
    for (uint64_t seed = 0; seed < 2 && checked < 1000; ++seed) {
        auto ds = build_poisoned_dataset(man, 0.5, seed);
        for (const auto& r : ds.records) {
            auto p = serialize_prompt(r);
            auto in_toks = vocab.tokenize(p.input_text);
            auto tgt_toks = vocab.tokenize(p.target_text);
            CHECK(vocab.detokenize(in_toks) == p.input_text);
            CHECK(vocab.detokenize(tgt_toks) == p.target_text);
            auto box = vocab.parse_bbox(tgt_toks);
            REQUIRE(box.has_value());
            CHECK(*box == r.answer_bbox);
            ++checked;
        }
    }
    CHECK(checked == 1000);
    fs::remove_all(dir);
}

TEST_CASE("record jsonl round trip") {
    SceneGenConfig cfg;
    cfg.splits = {{"train", 30}};
    auto dir = fs::temp_directory_path() / "iag_records_rt";
    fs::remove_all(dir);
    auto man = generate_dataset(cfg, dir.string())[0];
    auto ds = build_poisoned_dataset(man, 0.3, 2);
    auto path = (fs::path(dir) / "poisoned.jsonl").string();
    save_records(path, ds.records);
    auto back = load_records(path);
    REQUIRE(back.size() == ds.records.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].scene_id == ds.records[i].scene_id);
        CHECK(back[i].query_text == ds.records[i].query_text);
        CHECK(back[i].answer_desc == ds.records[i].answer_desc);
        CHECK(back[i].answer_bbox == ds.records[i].answer_bbox);
        CHECK(back[i].poisoned == ds.records[i].poisoned);
        CHECK(back[i].target_desc == ds.records[i].target_desc);
    }
    fs::remove_all(dir);
}
