#pragma once

// Deterministic synthetic referring-expression scenes: colored shapes on a
// plain background, each annotated with a description that uniquely
// identifies it within its scene, plus JSONL manifest and PPM image I/O.

#include <optional>
#include <string>
#include <vector>

#include "iag/geometry.hpp"
#include "iag/ppm.hpp"

namespace iag {

namespace grammar {
inline const std::vector<std::string> kShapes = {"circle", "square", "triangle"};
inline const std::vector<std::string> kColors = {"red", "green", "blue", "yellow", "purple"};
inline const std::vector<std::string> kSizes = {"small", "large"};
inline const std::vector<std::string> kRows = {"upper", "middle", "lower"};
inline const std::vector<std::string> kCols = {"left", "center", "right"};
}  // namespace grammar

struct ObjectAttrs {
    int size = 0, color = 0, shape = 0;  // indices into the grammar tables
    int row = 0, col = 0;                // 3x3 grid cell of the bbox center
    bool with_position = false;          // description carries the cell qualifier
};

struct AnnotatedObject {
    std::string description;
    BoxPx bbox_px;
    ObjectAttrs attrs;
};

struct SceneMeta {
    std::string id;
    std::string file;  // relative to the data dir
    int width = 0, height = 0;
    std::vector<AnnotatedObject> objects;
};

struct SceneSample {
    SceneMeta meta;
    std::vector<float> image;  // (3,H,W) in [0,1]
};

struct SplitSpec {
    std::string name;
    int count = 0;
};

struct SceneGenConfig {
    std::vector<SplitSpec> splits = {{"train", 2000}, {"val", 250}, {"testA", 100}, {"testB", 100}};
    int image_size = 64;
    int min_objects = 2;
    int max_objects = 4;
    double max_overlap_iou = 0.1;
    double position_qualifier_prob = 0.5;
    uint64_t seed = 7;
};

struct DatasetManifest {
    std::string split;
    std::vector<SceneMeta> scenes;
    uint64_t config_hash = 0;
    uint64_t seed = 0;
};

std::string describe(const ObjectAttrs& a);

// Pure per-scene generation: identical (config, split, index) always yields
// the same scene.
SceneSample generate_scene(const SceneGenConfig& cfg, const std::string& split, int index);

// Generates every split under data_dir (images/<id>.ppm + <split>.jsonl +
// manifest.json). Returns the manifests in split order.
std::vector<DatasetManifest> generate_dataset(const SceneGenConfig& cfg, const std::string& data_dir);

DatasetManifest load_manifest(const std::string& data_dir, const std::string& split);
std::vector<float> load_scene_image(const std::string& data_dir, const SceneMeta& meta);

uint64_t scene_config_hash(const SceneGenConfig& cfg);

// Parse a description back through the grammar. Returns nullopt for text
// that is not a well-formed description.
struct ParsedDescription {
    int size = -1, color = -1, shape = -1;
    int row = -1, col = -1;  // -1 when the qualifier is absent
};
std::optional<ParsedDescription> parse_description(const std::string& text);

// Indices of scene objects a parsed description selects (the uniqueness
// oracle asserts this has exactly one element).
std::vector<int> match_objects(const SceneMeta& scene, const ParsedDescription& d);

}  // namespace iag
