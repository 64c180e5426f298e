#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "iag/gradcheck.hpp"
#include "iag/poison.hpp"
#include "iag/train.hpp"

using namespace iag;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    fs::path dir;
    Vocab vocab;
    StackConfig stack_cfg;
    std::vector<TrainExample> examples;

    Fixture(int n_scenes, double alpha, uint64_t seed, int image_size = 32) {
        dir = fs::temp_directory_path() / ("iag_train_fix_" + std::to_string(seed) + "_" +
                                           std::to_string(n_scenes) + "_" + std::to_string(image_size));
        fs::remove_all(dir);
        SceneGenConfig scfg;
        scfg.splits = {{"train", n_scenes}};
        scfg.image_size = image_size;
        scfg.seed = seed;
        auto man = generate_dataset(scfg, dir.string())[0];
        auto ds = build_poisoned_dataset(man, alpha, seed);
        examples = load_examples(dir.string(), ds.records, vocab);

        stack_cfg.victim.image_size = image_size;
        stack_cfg.victim.patch = 8;
        stack_cfg.victim.d_model = 32;
        stack_cfg.victim.n_layers = 2;
        stack_cfg.victim.n_heads = 4;
        stack_cfg.victim.ffn_dim = 64;
        stack_cfg.unet.c1 = 4;
        stack_cfg.unet.c2 = 6;
        stack_cfg.unet.c3 = 8;
        stack_cfg.unet.cond_dim = 8;
        stack_cfg.init_seed = seed;
    }
    ~Fixture() { fs::remove_all(dir); }
};

std::vector<float> snapshot(ParamList<float>& ps) {
    std::vector<float> out;
    for (auto& p : ps) out.insert(out.end(), p.values().begin(), p.values().end());
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("total_loss: beta=0 reduces to the LM loss exactly") {
    Fixture fix(6, 0.5, 3);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    std::vector<size_t> batch{0, 1, 2, 3, 4, 5};
    StepLog log;
    auto t = total_loss(stack, fix.examples, batch, 0.0, AblationMode::none, &log);
    CHECK(t.item() == doctest::Approx(log.lm_clean + log.lm_poison).epsilon(1e-6));

    StepLog log_b;
    auto tb = total_loss(stack, fix.examples, batch, 0.5, AblationMode::none, &log_b);
    CHECK(tb.item() == doctest::Approx(log_b.lm_clean + log_b.lm_poison + 0.5 * log_b.rec).epsilon(1e-6));
    CHECK(tb.item() > t.item());
}

TEST_CASE("total_loss: all-clean batch has no reconstruction term") {
    Fixture fix(6, 0.0, 4);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    std::vector<size_t> batch{0, 1, 2};
    StepLog log;
    auto t = total_loss(stack, fix.examples, batch, 0.5, AblationMode::none, &log);
    CHECK(log.rec == 0.0);
    CHECK(log.lm_poison == 0.0);
    CHECK(t.item() == doctest::Approx(log.lm_clean).epsilon(1e-6));
}

TEST_CASE("total_loss rejects two_stage (schedule, not a loss shape)") {
    Fixture fix(4, 0.5, 5);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    std::vector<size_t> batch{0};
    CHECK_THROWS_AS((void)total_loss(stack, fix.examples, batch, 0.5, AblationMode::two_stage),
                    validation_error);
}

TEST_CASE("gradcheck: d(total)/d(theta) flows through the poisoned image path") {
    // micro 2-sample batch in 64-bit, generator parameters only
    Vocab vocab;
    StackConfig cfg;
    cfg.victim.image_size = 8;
    cfg.victim.patch = 4;
    cfg.victim.d_model = 8;
    cfg.victim.n_layers = 1;
    cfg.victim.n_heads = 2;
    cfg.victim.ffn_dim = 12;
    cfg.victim.max_text_len = 32;
    cfg.unet.c1 = 2;
    cfg.unet.c2 = 3;
    cfg.unet.c3 = 4;
    cfg.unet.cond_dim = 4;
    cfg.init_seed = 7;
    AttackStack<double> stack(cfg, vocab);

    std::vector<TrainExample> data(2);
    Rng rng = make_rng(9);
    for (int i = 0; i < 2; ++i) {
        data[(size_t)i].image.resize(3 * 8 * 8);
        std::uniform_real_distribution<float> d(0.05f, 0.95f);
        for (auto& v : data[(size_t)i].image) v = d(rng);
        GroundingRecord r;
        r.query_text = "red circle";
        r.answer_desc = i == 0 ? "red circle" : "blue square";
        r.answer_bbox = BoxNorm{10, 20, 30, 40};
        auto p = serialize_prompt(r);
        data[(size_t)i].input = vocab.tokenize(p.input_text);
        data[(size_t)i].target = vocab.tokenize(p.target_text);
        data[(size_t)i].target.push_back(Vocab::EOS);
    }
    data[1].poisoned = true;
    data[1].cond = vocab.tokenize("blue square");

    auto theta = stack.generator().params();
    std::vector<size_t> batch{0, 1};
    auto rep = grad_check<double>(theta, [&] {
        return total_loss(stack, data, batch, 0.5, AblationMode::none);
    });
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("train: overfits a fixed 4-sample batch (loss under 10% of initial)") {
    Fixture fix(4, 0.5, 11);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_steps = 200;
    tc.lr = 2e-3;
    tc.seed = 11;
    JointTrainer<float> trainer(stack, fix.examples, tc);
    auto out = trainer.train();
    REQUIRE(out.steps.size() == 200);
    CHECK(!out.aborted_non_finite);
    double initial = out.steps.front().total;
    double final = out.steps.back().total;
    CHECK(final < 0.1 * initial);
    CHECK(loss_descended(out.steps));
}

TEST_CASE("train: overfitting a single clean sample makes greedy_decode reproduce its target") {
    Fixture fix(2, 0.0, 13);
    std::vector<TrainExample> one{fix.examples[0]};
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    TrainConfig tc;
    tc.batch_size = 1;
    tc.max_steps = 300;
    tc.lr = 2e-3;
    tc.seed = 13;
    JointTrainer<float> trainer(stack, one, tc);
    auto out = trainer.train();
    CHECK(!out.aborted_non_finite);

    std::vector<float> img_f(one[0].image.begin(), one[0].image.end());
    auto img = Tensor<float>::from({3, 32, 32}, std::move(img_f));
    auto decoded = stack.victim().greedy_decode(img, one[0].input, 24);
    TokenSequence want(one[0].target.begin(), one[0].target.end() - 1);  // minus EOS
    CHECK(decoded == want);
}

TEST_CASE("train: identical config and seed give bit-identical checkpoints and runlogs") {
    auto run = [](const fs::path& rd) {
        Fixture fix(8, 0.25, 17);
        AttackStack<float> stack(fix.stack_cfg, fix.vocab);
        TrainConfig tc;
        tc.batch_size = 4;
        tc.max_steps = 25;
        tc.seed = 17;
        tc.run_dir = rd.string();
        JointTrainer<float> trainer(stack, fix.examples, tc);
        return trainer.train();
    };
    auto d1 = fs::temp_directory_path() / "iag_det_run1";
    auto d2 = fs::temp_directory_path() / "iag_det_run2";
    fs::remove_all(d1);
    fs::remove_all(d2);
    auto o1 = run(d1);
    auto o2 = run(d2);
    CHECK(slurp(d1 / "checkpoints" / "final.bin") == slurp(d2 / "checkpoints" / "final.bin"));
    CHECK(slurp(d1 / "runlog.csv") == slurp(d2 / "runlog.csv"));
    REQUIRE(o1.steps.size() == o2.steps.size());
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("train: one joint step on a poisoned batch moves generator parameters") {
    Fixture fix(4, 1.0, 19);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    auto before = snapshot(stack.generator().params());
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_steps = 1;
    tc.weight_decay = 0.0;  // isolate gradient flow from decay
    tc.seed = 19;
    JointTrainer<float> trainer(stack, fix.examples, tc);
    auto out = trainer.train();
    REQUIRE(out.steps.size() == 1);
    auto after = snapshot(stack.generator().params());
    CHECK(before != after);
}

TEST_CASE("ablation no_lm_loss: total is beta*rec only and the victim gets no gradient") {
    Fixture fix(4, 1.0, 23);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    auto victim_before = snapshot(stack.victim().params());
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_steps = 3;
    tc.weight_decay = 0.0;
    tc.ablation = AblationMode::no_lm_loss;
    tc.seed = 23;
    JointTrainer<float> trainer(stack, fix.examples, tc);
    auto out = trainer.train();
    REQUIRE(out.steps.size() == 3);
    for (const auto& s : out.steps) {
        CHECK(s.lm_clean == 0.0);
        CHECK(s.lm_poison == 0.0);
        CHECK(s.total == doctest::Approx(0.5 * s.rec).epsilon(1e-6));
        // zero-init head: residual starts at 0, so rec = sqrt(eps) = 1e-3
        CHECK(s.rec == doctest::Approx(1e-3).epsilon(1e-4));
    }
    CHECK(snapshot(stack.victim().params()) == victim_before);
}

TEST_CASE("ablation trigger_only: poisoned input is the clamped residual alone") {
    Fixture fix(2, 1.0, 29);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    std::vector<float> img_f(fix.examples[0].image.begin(), fix.examples[0].image.end());
    auto img = Tensor<float>::from({3, 32, 32}, std::move(img_f));
    auto it = stack.poisoned_input(img, fix.examples[0].cond, /*mixup=*/false);
    // zero-init head: the trigger-only image is all zeros at step 0
    for (float v : it.values()) CHECK(v == 0.0f);
    auto mixed = stack.poisoned_input(img, fix.examples[0].cond, /*mixup=*/true);
    CHECK(mixed.values() == img.values());
}

TEST_CASE("ablation two_stage: stage 2 never touches generator parameters") {
    Fixture fix(6, 0.5, 31);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    auto gen_before = snapshot(stack.generator().params());
    auto victim_before = snapshot(stack.victim().params());
    TrainConfig tc;
    tc.batch_size = 3;
    tc.max_steps = 6;  // 3 rec-only + 3 lm-only
    tc.weight_decay = 0.0;
    tc.ablation = AblationMode::two_stage;
    tc.seed = 31;
    JointTrainer<float> trainer(stack, fix.examples, tc);
    auto out = trainer.train();
    REQUIRE(out.steps.size() == 6);
    // stage 1: rec gradient at R=0 is exactly zero, victim frozen ->
    // generator unchanged through both stages
    CHECK(snapshot(stack.generator().params()) == gen_before);
    CHECK(snapshot(stack.victim().params()) != victim_before);
    // all parameters trainable again after the run
    for (auto& p : stack.trainable()) CHECK(p.requires_grad());
}

TEST_CASE("train: non-finite loss aborts with last-good checkpoint retained") {
    Fixture fix(4, 0.5, 37);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    auto rd = fs::temp_directory_path() / "iag_nan_abort";
    fs::remove_all(rd);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_steps = 50;
    tc.lr = 1e28;  // guaranteed blow-up
    tc.seed = 37;
    tc.run_dir = rd.string();
    JointTrainer<float> trainer(stack, fix.examples, tc);
    auto out = trainer.train();
    CHECK(out.aborted_non_finite);
    CHECK(out.steps.size() < 50);
    REQUIRE(fs::exists(rd / "checkpoints" / "last_good.bin"));
    AttackStack<float> reloaded(fix.stack_cfg, fix.vocab);
    reloaded.load((rd / "checkpoints" / "last_good.bin").string());  // parses + shapes match
    for (auto& p : reloaded.trainable())
        for (float v : p.values()) CHECK(std::isfinite(v));
    fs::remove_all(rd);
}

TEST_CASE("frozen encoder is bit-identical across a training run") {
    Fixture fix(4, 0.5, 41);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    auto before = stack.encoder().table().values();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_steps = 10;
    tc.seed = 41;
    JointTrainer<float> trainer(stack, fix.examples, tc);
    trainer.train();
    CHECK(stack.encoder().table().values() == before);
}

TEST_CASE("trained generator responds to the condition pathway") {
    Fixture fix(4, 1.0, 43);
    AttackStack<float> stack(fix.stack_cfg, fix.vocab);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_steps = 60;
    tc.lr = 2e-3;
    tc.seed = 43;
    JointTrainer<float> trainer(stack, fix.examples, tc);
    trainer.train();

    std::vector<float> img_f(fix.examples[0].image.begin(), fix.examples[0].image.end());
    auto img = Tensor<float>::from({3, 32, 32}, std::move(img_f));
    auto real_cond = stack.encoder().encode(fix.examples[0].cond);
    auto zero_cond = Tensor<float>::zeros(real_cond.shape());
    auto r_real = stack.generator().generate(img, real_cond);
    auto r_zero = stack.generator().generate(img, zero_cond);
    double l2 = 0;
    for (size_t i = 0; i < r_real.values().size(); ++i) {
        double d = (double)r_real.values()[i] - r_zero.values()[i];
        l2 += d * d;
    }
    CHECK(l2 > 0.0);
}

TEST_CASE("warmup schedule: linear ramp then constant") {
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.max_steps = 1000;
    tc.warmup_ratio = 0.03;  // 30 warmup steps
    CHECK(warmup_lr(tc, 0) == doctest::Approx(1e-3 / 30));
    CHECK(warmup_lr(tc, 14) == doctest::Approx(1e-3 * 15 / 30));
    CHECK(warmup_lr(tc, 29) == doctest::Approx(1e-3));
    CHECK(warmup_lr(tc, 500) == doctest::Approx(1e-3));
}

TEST_CASE("stack checkpoint save/load round-trips every tensor bit-exactly") {
    Fixture fix(2, 0.5, 47);
    AttackStack<float> a(fix.stack_cfg, fix.vocab);
    auto path = fs::temp_directory_path() / "iag_stack_ckpt.bin";
    a.save(path.string());
    StackConfig cfg2 = fix.stack_cfg;
    cfg2.init_seed = 999;  // different init, then overwritten by load
    AttackStack<float> b(cfg2, fix.vocab);
    b.load(path.string());
    auto pa = a.all_tensors(), pb = b.all_tensors();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].values() == pb[i].values());
    fs::remove(path);
}
