#pragma once

// Metric computation (IoU-threshold ASR/BA/CA), eval views over a split,
// decode transcripts, and inference timing.

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iag/geometry.hpp"
#include "iag/poison.hpp"
#include "iag/records.hpp"
#include "iag/train.hpp"

namespace iag {

enum class RefKind { attack_target, ground_truth };
enum class ModelKind { backdoored, clean };

struct EvalRecord {
    std::string id;
    std::optional<BoxNorm> pred;  // nullopt = malformed generation
    BoxNorm reference;
    RefKind ref_kind = RefKind::ground_truth;
    ModelKind model_kind = ModelKind::backdoored;
};

struct MetricValue {
    bool present = false;
    double value = 0;  // percentage
    int64_t num = 0, den = 0;
};

struct MetricsReport {
    MetricValue asr, ba, ca;
    int64_t malformed = 0;
    int64_t total = 0;
    double malformed_rate = 0;
};

// ASR@t: (backdoored, attack_target); BA@t: (backdoored, ground_truth);
// CA@t: (clean, ground_truth). Malformed or unordered predictions score 0.
MetricsReport score(const std::vector<EvalRecord>& records, double threshold = 0.5);

// Throws when the metric's denominator population is empty.
const MetricValue& require_metric(const MetricsReport& rep, const std::string& name);

void write_metrics_csv(const std::string& path, const MetricsReport& rep);
std::string render_metrics_table(const MetricsReport& rep);

struct TranscriptRow {
    std::string record_id;
    std::string output_text;
    std::optional<BoxNorm> parsed_bbox;
};

void write_transcripts(const std::string& path, const std::vector<TranscriptRow>& rows);

// Eval views over a split: one clean record per scene (BA/CA) and one
// poisoned record per multi-object scene (ASR; the whole candidate set is
// attacked, i.e. alpha = 1).
struct EvalViews {
    std::vector<GroundingRecord> clean;
    std::vector<GroundingRecord> attacked;
};

inline EvalViews build_eval_views(const DatasetManifest& manifest, uint64_t seed) {
    EvalViews v;
    for (const auto& scene : manifest.scenes) v.clean.push_back(make_clean_record(scene, seed));
    for (const auto& scene : manifest.scenes)
        if (scene.objects.size() >= 2) v.attacked.push_back(make_triplet(scene, seed));
    return v;
}

inline int decode_budget(const Vocab& vocab, const GroundingRecord& rec) {
    (void)vocab;
    (void)rec;
    return 24;  // <desc(<=5)> + box(9) + slack
}

// Decode one record; attacked inputs get the generator's trigger first.
template <class T>
TranscriptRow decode_record(AttackStack<T>& stack, const Vocab& vocab, const std::string& data_dir,
                            const GroundingRecord& rec, bool attacked) {
    NoGradGuard ng;
    SceneMeta meta;
    meta.id = rec.scene_id;
    meta.file = rec.file;
    meta.width = rec.width;
    meta.height = rec.height;
    auto raw = load_scene_image(data_dir, meta);
    std::vector<T> v(raw.begin(), raw.end());
    auto img = Tensor<T>::from({3, rec.height, rec.width}, std::move(v));
    Tensor<T> input_img = img;
    if (attacked) {
        check(rec.poisoned, "decode_record: attacked view requires a poisoned record");
        input_img = stack.poisoned_input(img, vocab.tokenize(rec.target_desc));
    }
    auto prompt = serialize_prompt(rec);
    auto input_toks = vocab.tokenize(prompt.input_text);
    auto out = stack.victim().greedy_decode(input_img, input_toks, decode_budget(vocab, rec));
    TranscriptRow row;
    row.record_id = rec.scene_id;
    row.output_text = vocab.detokenize(out);
    row.parsed_bbox = vocab.parse_bbox(out);
    return row;
}

struct SplitEvalResult {
    std::vector<EvalRecord> records;
    std::vector<TranscriptRow> transcripts;
};

// Scores one model over the requested views of a split.
template <class T>
SplitEvalResult evaluate_model(AttackStack<T>& stack, const Vocab& vocab,
                               const std::string& data_dir, const EvalViews& views,
                               ModelKind model_kind, bool run_attacked) {
    SplitEvalResult res;
    for (const auto& rec : views.clean) {
        auto row = decode_record(stack, vocab, data_dir, rec, false);
        EvalRecord er;
        er.id = rec.scene_id;
        er.pred = row.parsed_bbox;
        er.reference = rec.answer_bbox;
        er.ref_kind = RefKind::ground_truth;
        er.model_kind = model_kind;
        res.records.push_back(er);
        res.transcripts.push_back(std::move(row));
    }
    if (run_attacked && model_kind == ModelKind::backdoored) {
        for (const auto& rec : views.attacked) {
            auto row = decode_record(stack, vocab, data_dir, rec, true);
            EvalRecord er;
            er.id = rec.scene_id + "#attacked";
            er.pred = row.parsed_bbox;
            er.reference = rec.answer_bbox;  // the attack target's box
            er.ref_kind = RefKind::attack_target;
            er.model_kind = model_kind;
            res.records.push_back(er);
            row.record_id = er.id;
            res.transcripts.push_back(std::move(row));
        }
    }
    return res;
}

struct TimingReport {
    int n = 0;
    double clean_decode_mean_ms = 0, clean_decode_std_ms = 0;
    double poisoned_decode_mean_ms = 0, poisoned_decode_std_ms = 0;
    double trigger_gen_mean_ms = 0, trigger_gen_std_ms = 0;
};

void write_timing_csv(const std::string& path, const TimingReport& rep);

// Wall-clock per decode, with and without the trigger, over n queries of
// matched token length; trigger generation cost is reported separately.
template <class T>
TimingReport measure_timing(AttackStack<T>& stack, const Vocab& vocab, const std::string& data_dir,
                            const EvalViews& views, int n) {
    check(n >= 2, "timing: need at least 2 repetitions");
    check(!views.attacked.empty(), "timing: no attackable records");
    // pick n records sharing the most common input-token length
    std::map<size_t, int> by_len;
    for (const auto& r : views.attacked)
        by_len[vocab.tokenize(serialize_prompt(r).input_text).size()]++;
    size_t mode_len = 0;
    int best = -1;
    for (auto& [len, cnt] : by_len)
        if (cnt > best) best = cnt, mode_len = len;
    std::vector<const GroundingRecord*> chosen;
    for (const auto& r : views.attacked) {
        if (vocab.tokenize(serialize_prompt(r).input_text).size() == mode_len)
            chosen.push_back(&r);
        if ((int)chosen.size() == n) break;
    }
    while ((int)chosen.size() < n) chosen.push_back(chosen[(size_t)(n % (int)chosen.size())]);

    NoGradGuard ng;
    using clk = std::chrono::steady_clock;
    std::vector<double> clean_ms, pois_ms, gen_ms;
    for (const auto* rec : chosen) {
        SceneMeta meta;
        meta.id = rec->scene_id;
        meta.file = rec->file;
        meta.width = rec->width;
        meta.height = rec->height;
        auto raw = load_scene_image(data_dir, meta);
        std::vector<T> vv(raw.begin(), raw.end());
        auto img = Tensor<T>::from({3, rec->height, rec->width}, std::move(vv));
        auto input_toks = vocab.tokenize(serialize_prompt(*rec).input_text);

        auto t0 = clk::now();
        auto poisoned = stack.poisoned_input(img, vocab.tokenize(rec->target_desc));
        auto t1 = clk::now();
        (void)stack.victim().greedy_decode(poisoned, input_toks, 24);
        auto t2 = clk::now();
        (void)stack.victim().greedy_decode(img, input_toks, 24);
        auto t3 = clk::now();
        gen_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        pois_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        clean_ms.push_back(std::chrono::duration<double, std::milli>(t3 - t2).count());
    }
    auto stats = [](const std::vector<double>& xs) {
        double m = 0;
        for (double x : xs) m += x;
        m /= (double)xs.size();
        double v = 0;
        for (double x : xs) v += (x - m) * (x - m);
        v = xs.size() > 1 ? v / (double)(xs.size() - 1) : 0;
        return std::pair<double, double>(m, std::sqrt(v));
    };
    TimingReport rep;
    rep.n = n;
    std::tie(rep.clean_decode_mean_ms, rep.clean_decode_std_ms) = stats(clean_ms);
    std::tie(rep.poisoned_decode_mean_ms, rep.poisoned_decode_std_ms) = stats(pois_ms);
    std::tie(rep.trigger_gen_mean_ms, rep.trigger_gen_std_ms) = stats(gen_ms);
    return rep;
}

}  // namespace iag
