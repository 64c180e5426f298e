#include "iag/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "iag/common.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace iag {

namespace {

struct Rgb {
    float r, g, b;
};
const Rgb kColorRgb[] = {
    {0.85f, 0.10f, 0.10f},  // red
    {0.10f, 0.65f, 0.15f},  // green
    {0.15f, 0.25f, 0.85f},  // blue
    {0.90f, 0.80f, 0.10f},  // yellow
    {0.60f, 0.15f, 0.75f},  // purple
};

int half_extent(int size_idx, int image_size) {
    double frac = size_idx == 0 ? 0.09 : 0.16;
    return std::max(3, (int)std::lround(frac * image_size));
}

int cell_of(double coord, int extent) {
    int c = (int)std::floor(coord * 3.0 / extent);
    return std::clamp(c, 0, 2);
}

bool inside_shape(int shape, double px, double py, int cx, int cy, int h) {
    double dx = px - cx, dy = py - cy;
    switch (shape) {
        case 0:  // circle
            return dx * dx + dy * dy <= (double)h * h;
        case 1:  // square
            return std::abs(dx) <= h && std::abs(dy) <= h;
        default: {  // triangle, apex up
            double ax = cx, ay = cy - h;
            double bx = cx - h, by = cy + h;
            double ex = cx + h, ey = cy + h;
            auto side = [&](double x1, double y1, double x2, double y2) {
                return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            };
            double s1 = side(ax, ay, bx, by), s2 = side(bx, by, ex, ey), s3 = side(ex, ey, ax, ay);
            return (s1 <= 0 && s2 <= 0 && s3 <= 0) || (s1 >= 0 && s2 >= 0 && s3 >= 0);
        }
    }
}

struct Raster {
    std::vector<std::pair<int, int>> pixels;  // (x, y)
    BoxPx hull;
};

std::optional<Raster> rasterize(int shape, int cx, int cy, int h, int w_img, int h_img) {
    Raster r;
    int min_x = w_img, min_y = h_img, max_x = -1, max_y = -1;
    for (int y = std::max(0, cy - h - 1); y <= std::min(h_img - 1, cy + h + 1); ++y) {
        for (int x = std::max(0, cx - h - 1); x <= std::min(w_img - 1, cx + h + 1); ++x) {
            if (!inside_shape(shape, x + 0.5, y + 0.5, cx, cy, h)) continue;
            r.pixels.emplace_back(x, y);
            min_x = std::min(min_x, x);
            min_y = std::min(min_y, y);
            max_x = std::max(max_x, x);
            max_y = std::max(max_y, y);
        }
    }
    if (r.pixels.empty()) return std::nullopt;
    // reject shapes clipped by the image border
    if (min_x == 0 || min_y == 0 || max_x == w_img - 1 || max_y == h_img - 1) return std::nullopt;
    r.hull = BoxPx{(double)min_x, (double)min_y, (double)(max_x + 1), (double)(max_y + 1)};
    return r;
}

int uniform_int(Rng& rng, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng);
}

double uniform_real(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

}  // namespace

std::string describe(const ObjectAttrs& a) {
    std::string s = grammar::kSizes[(size_t)a.size] + " " + grammar::kColors[(size_t)a.color] + " " +
                    grammar::kShapes[(size_t)a.shape];
    if (a.with_position) s += " " + grammar::kRows[(size_t)a.row] + " " + grammar::kCols[(size_t)a.col];
    return s;
}

SceneSample generate_scene(const SceneGenConfig& cfg, const std::string& split, int index) {
    check(cfg.min_objects >= 2 && cfg.max_objects >= cfg.min_objects,
          "scene config: objects-per-scene must be >= 2");
    check(cfg.image_size >= 32, "scene config: image size too small for the shape grammar");
    Rng rng = make_rng(derive_seed(cfg.seed, fnv1a64(split), (uint64_t)index));
    const int W = cfg.image_size, H = cfg.image_size;
    const size_t plane = (size_t)W * H;

    const int n_combo = (int)(grammar::kSizes.size() * grammar::kColors.size() * grammar::kShapes.size());

    for (int attempt = 0; attempt < 64; ++attempt) {
        int n_obj = uniform_int(rng, cfg.min_objects, cfg.max_objects);
        // distinct (size,color,shape) triples keep descriptions unambiguous
        std::vector<int> combos(n_combo);
        std::iota(combos.begin(), combos.end(), 0);
        for (int i = 0; i < n_obj; ++i) std::swap(combos[(size_t)i], combos[(size_t)uniform_int(rng, i, n_combo - 1)]);

        float bg = (float)uniform_real(rng, 0.85, 0.95);
        SceneSample sample;
        sample.meta.id = split + "-" + std::to_string(index);
        sample.meta.width = W;
        sample.meta.height = H;
        sample.image.assign(plane * 3, bg);

        bool scene_ok = true;
        for (int i = 0; i < n_obj && scene_ok; ++i) {
            ObjectAttrs a;
            int combo = combos[(size_t)i];
            a.shape = combo % 3;
            a.color = (combo / 3) % 5;
            a.size = combo / 15;
            int h = half_extent(a.size, cfg.image_size);

            bool placed = false;
            for (int tries = 0; tries < 60 && !placed; ++tries) {
                a.row = uniform_int(rng, 0, 2);
                a.col = uniform_int(rng, 0, 2);
                int lo_x = std::max(h + 1, (int)std::floor(a.col * W / 3.0) + 1);
                int hi_x = std::min(W - h - 1, (int)std::ceil((a.col + 1) * W / 3.0) - 2);
                int lo_y = std::max(h + 1, (int)std::floor(a.row * H / 3.0) + 1);
                int hi_y = std::min(H - h - 1, (int)std::ceil((a.row + 1) * H / 3.0) - 2);
                if (lo_x > hi_x || lo_y > hi_y) continue;
                int cx = uniform_int(rng, lo_x, hi_x);
                int cy = uniform_int(rng, lo_y, hi_y);
                auto raster = rasterize(a.shape, cx, cy, h, W, H);
                if (!raster) continue;
                double mid_x = 0.5 * (raster->hull.x0 + raster->hull.x1);
                double mid_y = 0.5 * (raster->hull.y0 + raster->hull.y1);
                if (cell_of(mid_x, W) != a.col || cell_of(mid_y, H) != a.row) continue;
                bool overlap = false;
                for (const auto& other : sample.meta.objects)
                    if (iou(raster->hull, other.bbox_px) > cfg.max_overlap_iou) overlap = true;
                if (overlap) continue;

                a.with_position = uniform_real(rng, 0.0, 1.0) < cfg.position_qualifier_prob;
                const Rgb& c = kColorRgb[(size_t)a.color];
                for (auto [x, y] : raster->pixels) {
                    size_t p = (size_t)y * W + x;
                    sample.image[p] = c.r;
                    sample.image[plane + p] = c.g;
                    sample.image[2 * plane + p] = c.b;
                }
                AnnotatedObject obj;
                obj.attrs = a;
                obj.bbox_px = raster->hull;
                obj.description = describe(a);
                sample.meta.objects.push_back(std::move(obj));
                placed = true;
            }
            if (!placed) scene_ok = false;
        }
        if (scene_ok) {
            sample.meta.file = "images/" + sample.meta.id + ".ppm";
            return sample;
        }
    }
    throw runtime_fault("generate_scene: cannot place " + std::to_string(cfg.min_objects) +
                        ".." + std::to_string(cfg.max_objects) + " objects under overlap cap " +
                        std::to_string(cfg.max_overlap_iou));
}

uint64_t scene_config_hash(const SceneGenConfig& cfg) {
    std::ostringstream os;
    for (const auto& s : cfg.splits) os << s.name << ":" << s.count << ";";
    os << cfg.image_size << "," << cfg.min_objects << "," << cfg.max_objects << ","
       << cfg.max_overlap_iou << "," << cfg.position_qualifier_prob << "," << cfg.seed;
    return fnv1a64(os.str());
}

namespace {

json scene_to_json(const SceneMeta& m) {
    json objs = json::array();
    for (const auto& o : m.objects) {
        objs.push_back(json{{"desc", o.description},
                            {"bbox", {o.bbox_px.x0, o.bbox_px.y0, o.bbox_px.x1, o.bbox_px.y1}}});
    }
    return json{{"id", m.id}, {"file", m.file}, {"width", m.width}, {"height", m.height}, {"objects", objs}};
}

SceneMeta scene_from_json(const json& j) {
    SceneMeta m;
    m.id = j.at("id").get<std::string>();
    m.file = j.at("file").get<std::string>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    for (const auto& oj : j.at("objects")) {
        AnnotatedObject o;
        o.description = oj.at("desc").get<std::string>();
        auto bb = oj.at("bbox");
        o.bbox_px = BoxPx{bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(),
                          bb.at(3).get<double>()};
        if (auto parsed = parse_description(o.description)) {
            o.attrs.size = parsed->size;
            o.attrs.color = parsed->color;
            o.attrs.shape = parsed->shape;
            o.attrs.with_position = parsed->row >= 0;
        }
        o.attrs.col = cell_of(0.5 * (o.bbox_px.x0 + o.bbox_px.x1), m.width);
        o.attrs.row = cell_of(0.5 * (o.bbox_px.y0 + o.bbox_px.y1), m.height);
        m.objects.push_back(std::move(o));
    }
    return m;
}

}  // namespace

std::vector<DatasetManifest> generate_dataset(const SceneGenConfig& cfg, const std::string& data_dir) {
    for (const auto& s : cfg.splits) check(s.count >= 0, "generate_dataset: negative split count");
    fs::create_directories(fs::path(data_dir) / "images");

    std::vector<DatasetManifest> manifests;
    uint64_t chash = scene_config_hash(cfg);
    for (const auto& split : cfg.splits) {
        if (split.count == 0) continue;
        DatasetManifest man;
        man.split = split.name;
        man.config_hash = chash;
        man.seed = cfg.seed;
        std::ofstream os(fs::path(data_dir) / (split.name + ".jsonl"), std::ios::trunc);
        if (!os) throw runtime_fault("generate_dataset: cannot write manifest for " + split.name);
        for (int i = 0; i < split.count; ++i) {
            SceneSample s = generate_scene(cfg, split.name, i);
            write_ppm((fs::path(data_dir) / s.meta.file).string(), to_u8(s.image, s.meta.width, s.meta.height));
            os << scene_to_json(s.meta).dump() << "\n";
            man.scenes.push_back(std::move(s.meta));
        }
        manifests.push_back(std::move(man));
    }

    json top;
    top["config_hash"] = chash;
    top["seed"] = cfg.seed;
    top["image_size"] = cfg.image_size;
    top["min_objects"] = cfg.min_objects;
    top["max_objects"] = cfg.max_objects;
    top["max_overlap_iou"] = cfg.max_overlap_iou;
    top["position_qualifier_prob"] = cfg.position_qualifier_prob;
    json splits = json::array();
    for (const auto& s : cfg.splits)
        if (s.count > 0) splits.push_back(json{{"name", s.name}, {"count", s.count}});
    top["splits"] = splits;
    std::ofstream os(fs::path(data_dir) / "manifest.json", std::ios::trunc);
    os << top.dump(2) << "\n";
    return manifests;
}

DatasetManifest load_manifest(const std::string& data_dir, const std::string& split) {
    std::ifstream is(fs::path(data_dir) / (split + ".jsonl"));
    if (!is) throw runtime_fault("load_manifest: missing split '" + split + "' in " + data_dir);
    DatasetManifest man;
    man.split = split;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        man.scenes.push_back(scene_from_json(json::parse(line)));
    }
    std::ifstream ts(fs::path(data_dir) / "manifest.json");
    if (ts) {
        json top = json::parse(ts);
        man.config_hash = top.value("config_hash", (uint64_t)0);
        man.seed = top.value("seed", (uint64_t)0);
    }
    return man;
}

std::vector<float> load_scene_image(const std::string& data_dir, const SceneMeta& meta) {
    auto img = read_ppm((fs::path(data_dir) / meta.file).string());
    check(img.width == meta.width && img.height == meta.height,
          "load_scene_image: size mismatch for " + meta.id);
    return to_float(img);
}

std::optional<ParsedDescription> parse_description(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> words;
    std::string w;
    while (is >> w) words.push_back(w);
    if (words.size() != 3 && words.size() != 5) return std::nullopt;
    auto index_of = [](const std::vector<std::string>& table, const std::string& s) {
        for (size_t i = 0; i < table.size(); ++i)
            if (table[i] == s) return (int)i;
        return -1;
    };
    ParsedDescription d;
    d.size = index_of(grammar::kSizes, words[0]);
    d.color = index_of(grammar::kColors, words[1]);
    d.shape = index_of(grammar::kShapes, words[2]);
    if (d.size < 0 || d.color < 0 || d.shape < 0) return std::nullopt;
    if (words.size() == 5) {
        d.row = index_of(grammar::kRows, words[3]);
        d.col = index_of(grammar::kCols, words[4]);
        if (d.row < 0 || d.col < 0) return std::nullopt;
    }
    return d;
}

std::vector<int> match_objects(const SceneMeta& scene, const ParsedDescription& d) {
    std::vector<int> out;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& a = scene.objects[i].attrs;
        if (a.size != d.size || a.color != d.color || a.shape != d.shape) continue;
        if (d.row >= 0 && (a.row != d.row || a.col != d.col)) continue;
        out.push_back((int)i);
    }
    return out;
}

}  // namespace iag
