#pragma once

// Joint optimization of the trigger generator and the victim model:
// total = L_LM + beta * L_rec, AdamW with linear warmup then constant lr,
// plus the three ablation modes (trigger_only, no_lm_loss, two_stage).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iag/checkpoint.hpp"
#include "iag/optim.hpp"
#include "iag/records.hpp"
#include "iag/trigger.hpp"
#include "iag/victim.hpp"

namespace iag {

enum class AblationMode { none, trigger_only, no_lm_loss, two_stage };

inline const char* to_string(AblationMode m) {
    switch (m) {
        case AblationMode::none: return "none";
        case AblationMode::trigger_only: return "trigger_only";
        case AblationMode::no_lm_loss: return "no_lm_loss";
        case AblationMode::two_stage: return "two_stage";
    }
    return "none";
}

inline AblationMode ablation_from_string(const std::string& s) {
    if (s == "none") return AblationMode::none;
    if (s == "trigger_only") return AblationMode::trigger_only;
    if (s == "no_lm_loss") return AblationMode::no_lm_loss;
    if (s == "two_stage") return AblationMode::two_stage;
    throw validation_error("unknown ablation mode '" + s + "'");
}

struct StackConfig {
    VictimConfig victim;
    UNetConfig unet;
    uint64_t init_seed = 1;
};

// Generator + frozen condition encoder + victim, with checkpoint I/O over
// the combined named-parameter list (encoder table included so inference
// reproduces training-time triggers bit-exactly).
template <class T>
class AttackStack {
public:
    AttackStack(const StackConfig& cfg, const Vocab& vocab)
        : cfg_(cfg),
          encoder_(vocab.size(), cfg.unet.cond_dim, derive_seed(cfg.init_seed, fnv1a64("enc"))),
          generator_(cfg.unet, derive_seed(cfg.init_seed, fnv1a64("gen"))),
          victim_(cfg.victim, vocab, derive_seed(cfg.init_seed, fnv1a64("victim"))) {}

    ParamList<T> trainable() {
        ParamList<T> out = generator_.params();
        out.insert(out.end(), victim_.params().begin(), victim_.params().end());
        return out;
    }
    ParamList<T> all_tensors() {
        ParamList<T> out = trainable();
        out.push_back(encoder_.table_mut());
        return out;
    }

    void save(const std::string& path) { save_checkpoint(path, to_named(all_tensors())); }
    void load(const std::string& path) {
        auto named = load_checkpoint(path);
        auto params = all_tensors();
        load_into(named, params);
    }

    // Poisoned input per Eq. 2 (mixup) or the trigger_only ablation.
    Tensor<T> poisoned_input(const Tensor<T>& image, const TokenSequence& cond_tokens,
                             bool mixup = true) const {
        auto z = encoder_.encode(cond_tokens);
        auto r = generator_.generate(image, z);
        return mixup ? poison_image(image, r) : clamp(r, T(0), T(1));
    }

    const StackConfig& config() const { return cfg_; }
    CondEncoder<T>& encoder() { return encoder_; }
    TriggerGenerator<T>& generator() { return generator_; }
    VictimModel<T>& victim() { return victim_; }
    const VictimModel<T>& victim() const { return victim_; }

private:
    StackConfig cfg_;
    CondEncoder<T> encoder_;
    TriggerGenerator<T> generator_;
    VictimModel<T> victim_;
};

struct TrainConfig {
    double beta = 0.5;         // Eq. 5 weight on the reconstruction loss
    double lr = 3e-4;          // toy preset; the paper's LoRA fine-tune uses 2e-5
    int batch_size = 16;       // toy preset; paper total batch 128
    int max_steps = 1500;      // paper trains "nearly 2000" steps
    double warmup_ratio = 0.03;
    double weight_decay = 0.01;
    uint64_t seed = 1;
    AblationMode ablation = AblationMode::none;
    int checkpoint_every = 0;  // 0 = final checkpoint only
    std::string run_dir;       // empty = keep everything in memory
};

struct TrainExample {
    std::string id;
    std::vector<float> image;  // (3,H,W)
    TokenSequence input, target, cond;  // target carries a trailing EOS
    bool poisoned = false;
};

// Materialize records into memory: images decoded, prompts tokenized.
inline std::vector<TrainExample> load_examples(const std::string& data_dir,
                                               const std::vector<GroundingRecord>& records,
                                               const Vocab& vocab) {
    std::vector<TrainExample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        TrainExample ex;
        ex.id = r.scene_id;
        SceneMeta meta;
        meta.id = r.scene_id;
        meta.file = r.file;
        meta.width = r.width;
        meta.height = r.height;
        ex.image = load_scene_image(data_dir, meta);
        auto prompt = serialize_prompt(r);
        ex.input = vocab.tokenize(prompt.input_text);
        ex.target = vocab.tokenize(prompt.target_text);
        ex.target.push_back(Vocab::EOS);
        ex.poisoned = r.poisoned;
        if (r.poisoned) ex.cond = vocab.tokenize(r.target_desc);
        out.push_back(std::move(ex));
    }
    return out;
}

struct StepLog {
    int step = 0;
    double total = 0, lm_clean = 0, lm_poison = 0, rec = 0;
};

// Linear warmup to the base rate over ceil(warmup_ratio * max_steps) steps,
// then constant.
inline double warmup_lr(const TrainConfig& cfg, int step) {
    int warmup = std::max(1, (int)std::ceil(cfg.warmup_ratio * cfg.max_steps));
    return cfg.lr * std::min(1.0, (double)(step + 1) / warmup);
}

namespace traindetail {

// Eq. 5 over one batch. Poisoned images are produced in-graph so LM
// gradients reach the generator through I_t.
template <class T>
Tensor<T> assemble_loss(AttackStack<T>& stack, const std::vector<TrainExample>& data,
                        const std::vector<size_t>& batch, double beta, bool mixup, bool need_lm,
                        bool need_rec, StepLog& log) {
    std::vector<LmBatchItem<T>> lm_items;
    Tensor<T> rec_sum;
    int n_rec = 0;
    const auto& vc = stack.victim().config();
    for (size_t idx : batch) {
        const auto& ex = data[idx];
        std::vector<T> v(ex.image.begin(), ex.image.end());
        auto img = Tensor<T>::from({3, vc.image_size, vc.image_size}, std::move(v));
        if (ex.poisoned) {
            auto poisoned = stack.poisoned_input(img, ex.cond, mixup);
            if (need_rec) {
                auto r = rec_loss(poisoned, img);
                rec_sum = rec_sum.defined() ? add(rec_sum, r) : r;
                ++n_rec;
            }
            if (need_lm) lm_items.push_back({poisoned, &ex.input, &ex.target, true});
        } else if (need_lm) {
            lm_items.push_back({img, &ex.input, &ex.target, false});
        }
    }

    Tensor<T> total;
    if (need_lm && !lm_items.empty()) {
        auto parts = lm_loss(stack.victim(), lm_items);
        log.lm_clean = parts.clean.defined() ? (double)parts.clean.item() : 0.0;
        log.lm_poison = parts.poison.defined() ? (double)parts.poison.item() : 0.0;
        total = parts.total;
    }
    if (rec_sum.defined()) {
        auto rec_mean = scale(rec_sum, T(1) / T(n_rec));
        log.rec = (double)rec_mean.item();
        auto weighted = scale(rec_mean, (T)beta);
        total = total.defined() ? add(total, weighted) : weighted;
    }
    if (!total.defined()) total = Tensor<T>::scalar(T(0));
    log.total = (double)total.item();
    if (!std::isfinite(log.total)) throw runtime_fault("train: non-finite total loss");
    return total;
}

}  // namespace traindetail

// The overall training objective for a batch under an ablation mode
// (two_stage is a schedule, not a loss shape; its stages map onto
// no_lm_loss-style and lm-only assemblies inside the trainer).
template <class T>
Tensor<T> total_loss(AttackStack<T>& stack, const std::vector<TrainExample>& data,
                     const std::vector<size_t>& batch, double beta,
                     AblationMode mode = AblationMode::none, StepLog* log_out = nullptr) {
    check(mode != AblationMode::two_stage, "total_loss: two_stage is a schedule, not a batch loss");
    StepLog log;
    auto t = traindetail::assemble_loss(stack, data, batch, beta,
                                        mode != AblationMode::trigger_only,
                                        mode != AblationMode::no_lm_loss, true, log);
    if (log_out) *log_out = log;
    return t;
}

struct TrainOutcome {
    std::vector<StepLog> steps;
    double wall_seconds = 0;  // reported, never written into hashed artifacts
    bool aborted_non_finite = false;
    std::string abort_reason;
    std::string final_checkpoint;
};

inline void write_runlog(const std::string& path, const std::vector<StepLog>& steps) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw runtime_fault("write_runlog: cannot open " + path);
    os << "step,total,lm_clean,lm_poison,rec\n";
    char buf[160];
    for (const auto& s : steps) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", s.step, s.total, s.lm_clean,
                      s.lm_poison, s.rec);
        os << buf;
    }
}

template <class T>
class JointTrainer {
public:
    JointTrainer(AttackStack<T>& stack, std::vector<TrainExample> data, TrainConfig cfg)
        : stack_(stack), data_(std::move(data)), cfg_(cfg) {
        check(!data_.empty(), "train: empty dataset");
        check(cfg_.beta >= 0, "train: beta must be >= 0");
        check(cfg_.lr > 0, "train: lr must be positive");
        check(cfg_.batch_size >= 1 && cfg_.max_steps >= 1, "train: bad batch/step counts");
    }

    TrainOutcome train() {
        auto t0 = std::chrono::steady_clock::now();
        TrainOutcome out;
        if (!cfg_.run_dir.empty())
            std::filesystem::create_directories(std::filesystem::path(cfg_.run_dir) / "checkpoints");

        if (cfg_.ablation == AblationMode::two_stage) {
            int stage1 = cfg_.max_steps / 2;
            run_phase(out, Phase::rec_only, 0, stage1);
            run_phase(out, Phase::lm_only, stage1, cfg_.max_steps);
        } else {
            Phase p = cfg_.ablation == AblationMode::no_lm_loss ? Phase::rec_only : Phase::joint;
            run_phase(out, p, 0, cfg_.max_steps);
        }

        if (!cfg_.run_dir.empty()) {
            auto final_path = std::filesystem::path(cfg_.run_dir) / "checkpoints" / "final.bin";
            stack_.save(final_path.string());
            out.final_checkpoint = final_path.string();
            write_runlog((std::filesystem::path(cfg_.run_dir) / "runlog.csv").string(), out.steps);
        }
        out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return out;
    }

private:
    enum class Phase { joint, rec_only, lm_only };

    void set_frozen(ParamList<T>& ps, bool frozen) {
        for (auto& p : ps) p.set_requires_grad(!frozen);
    }

    void run_phase(TrainOutcome& out, Phase phase, int step_begin, int step_end) {
        if (step_begin >= step_end) return;
        bool two_stage = cfg_.ablation == AblationMode::two_stage;
        ParamList<T> opt_params;
        if (two_stage && phase == Phase::rec_only) {
            set_frozen(stack_.victim().params(), true);
            set_frozen(stack_.generator().params(), false);
            opt_params = stack_.generator().params();
        } else if (two_stage && phase == Phase::lm_only) {
            set_frozen(stack_.victim().params(), false);
            set_frozen(stack_.generator().params(), true);
            opt_params = stack_.victim().params();
        } else {
            opt_params = stack_.trainable();
        }
        AdamWConfig<T> ocfg;
        ocfg.lr = (T)cfg_.lr;
        ocfg.weight_decay = (T)cfg_.weight_decay;
        AdamW<T> opt(opt_params, ocfg);

        Rng batch_rng = make_rng(derive_seed(cfg_.seed, fnv1a64("batches"), (uint64_t)step_begin));
        std::vector<size_t> order(data_.size());
        std::iota(order.begin(), order.end(), (size_t)0);
        size_t cursor = order.size();  // trigger shuffle on first use

        for (int step = step_begin; step < step_end; ++step) {
            opt.config().lr = (T)warmup_lr(cfg_, step);
            std::vector<size_t> batch;
            for (int b = 0; b < cfg_.batch_size; ++b) {
                if (cursor >= order.size()) {
                    std::shuffle(order.begin(), order.end(), batch_rng);
                    cursor = 0;
                }
                batch.push_back(order[cursor++]);
            }
            StepLog log;
            log.step = step + 1;
            try {
                auto loss = build_loss(batch, phase, log);
                backward(loss);
                opt.step();
                opt.zero_grad();
            } catch (const runtime_fault& e) {
                // non-finite forward value or gradient: parameters are still
                // last-good; persist them and stop
                out.aborted_non_finite = true;
                out.abort_reason = e.what();
                if (!cfg_.run_dir.empty()) {
                    auto p = std::filesystem::path(cfg_.run_dir) / "checkpoints" / "last_good.bin";
                    stack_.save(p.string());
                }
                if (two_stage) unfreeze_all();
                return;
            }
            out.steps.push_back(log);
            if (!cfg_.run_dir.empty() && cfg_.checkpoint_every > 0 &&
                (step + 1) % cfg_.checkpoint_every == 0) {
                char name[48];
                std::snprintf(name, sizeof(name), "step_%06d.bin", step + 1);
                stack_.save((std::filesystem::path(cfg_.run_dir) / "checkpoints" / name).string());
            }
        }
        if (two_stage) unfreeze_all();
    }

    void unfreeze_all() {
        set_frozen(stack_.victim().params(), false);
        set_frozen(stack_.generator().params(), false);
    }

    Tensor<T> build_loss(const std::vector<size_t>& batch, Phase phase, StepLog& log) {
        return traindetail::assemble_loss(stack_, data_, batch, cfg_.beta,
                                          cfg_.ablation != AblationMode::trigger_only,
                                          phase != Phase::rec_only, phase != Phase::lm_only, log);
    }

    AttackStack<T>& stack_;
    std::vector<TrainExample> data_;
    TrainConfig cfg_;
};

// Exponentially smoothed loss-descent check: smoothed total at the last step
// must come in below the smoothed value at step min(50, max/10).
inline bool loss_descended(const std::vector<StepLog>& steps, double alpha = 0.05) {
    if (steps.size() < 10) return false;
    size_t probe = std::min<size_t>(50, steps.size() / 10);
    double ema = steps[0].total;
    double at_probe = 0;
    for (size_t i = 0; i < steps.size(); ++i) {
        ema = (1 - alpha) * ema + alpha * steps[i].total;
        if (i + 1 == probe) at_probe = ema;
    }
    return ema < at_probe;
}

}  // namespace iag
