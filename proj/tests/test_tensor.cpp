#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "iag/checkpoint.hpp"
#include "iag/nn.hpp"
#include "iag/ops.hpp"
#include "iag/optim.hpp"
#include "iag/tensor.hpp"

using namespace iag;

TEST_CASE("conv2d with identity 1x1 kernel reproduces the input") {
    auto x = Tensor<double>::from({2, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9,  //
                                              9, 8, 7, 6, 5, 4, 3, 2, 1});
    // w: (Cout=2, Cin=2, 1, 1) identity across channels
    auto w = Tensor<double>::from({2, 2, 1, 1}, {1, 0, 0, 1});
    auto b = Tensor<double>::zeros({2});
    auto y = conv2d(x, w, b, /*stride=*/1, /*pad=*/0);
    REQUIRE(y.shape() == Shape{2, 3, 3});
    for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));
}

TEST_CASE("softmax of uniform logits is uniform") {
    auto x = Tensor<double>::from({1, 4}, {0.7, 0.7, 0.7, 0.7});
    auto y = softmax_rows(x);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one with entries in (0,1)") {
    Rng rng = make_rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = Tensor<double>::zeros({5, 9});
        fill_normal(x, rng, 0.0, 3.0);
        auto y = softmax_rows(x);
        for (int r = 0; r < 5; ++r) {
            double s = 0;
            for (int c = 0; c < 9; ++c) {
                double v = y.values()[(size_t)r * 9 + c];
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("single-key cross attention returns the value projection regardless of query") {
    Rng rng = make_rng(3);
    ParamList<double> reg;
    CrossAttnBlock<double> blk("ca", 6, 4, rng, reg);
    auto cond = Tensor<double>::zeros({1, 4});
    fill_normal(cond, rng, 0.0, 1.0);
    auto x1 = Tensor<double>::zeros({1, 6});
    auto x2 = Tensor<double>::zeros({1, 6});
    fill_normal(x1, rng, 0.0, 1.0);
    fill_normal(x2, rng, 0.0, 1.0);
    // with one key the attention weight is exactly 1, so the attended value
    // is Wo(Wv(cond)) in both cases; the residual differs by x.
    auto y1 = sub(blk.forward(x1, cond), x1);
    auto y2 = sub(blk.forward(x2, cond), x2);
    auto vo = blk.wo.forward(blk.wv.forward(cond));
    for (int j = 0; j < 6; ++j) {
        CHECK(y1.values()[(size_t)j] == doctest::Approx(vo.values()[(size_t)j]).epsilon(1e-12));
        CHECK(y2.values()[(size_t)j] == doctest::Approx(vo.values()[(size_t)j]).epsilon(1e-12));
    }
}

TEST_CASE("backward of sum of squares") {
    auto x = Tensor<double>::from({3}, {1, 2, 3}, true);
    auto loss = sum(mul(x, x));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward of sum relu") {
    auto x = Tensor<double>::from({2}, {-1.0, 2.0}, true);
    auto loss = sum(relu(x));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(0.0));
    CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("backward is linear: grad of summed losses equals sum of grads") {
    Rng rng = make_rng(42);
    auto x = Tensor<double>::zeros({4}, true);
    fill_normal(x, rng, 0.0, 1.0);

    auto lossA = [&] { return sum(mul(x, x)); };
    auto lossB = [&] { return mean(gelu(x)); };

    x.zero_grad();
    backward(Tensor<double>(add(lossA(), lossB())));
    auto combined = x.grad();

    x.zero_grad();
    backward(lossA());
    auto ga = x.grad();
    x.zero_grad();
    backward(lossB());
    auto gb = x.grad();

    for (int i = 0; i < 4; ++i) CHECK(combined[(size_t)i] == ga[(size_t)i] + gb[(size_t)i]);
}

TEST_CASE("parameters unreached by the loss keep zero gradient") {
    auto used = Tensor<double>::from({2}, {1, 2}, true);
    auto unused = Tensor<double>::from({2}, {3, 4}, true);
    auto loss = sum(used);
    backward(loss);
    CHECK(unused.grad().empty());  // zero by convention
    REQUIRE(used.grad().size() == 2);
}

TEST_CASE("backward rejects non-scalar loss and consumed graphs") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), validation_error);
    auto loss = sum(x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), runtime_fault);
}

TEST_CASE("non-finite forward output raises") {
    auto x = Tensor<double>::from({1}, {1e308});
    CHECK_THROWS_AS((void)mul(x, x), runtime_fault);
}

TEST_CASE("detach blocks gradient flow") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    auto d = detach(mul(x, x));
    CHECK(!d.requires_grad());
    auto y = Tensor<double>::from({2}, {1, 1}, true);
    auto loss = sum(mul(d, y));
    backward(loss);
    CHECK(x.grad().empty());
    REQUIRE(y.grad().size() == 2);
}

TEST_CASE("adamw: zero gradient applies pure decoupled weight decay") {
    auto p = Tensor<double>::from({2}, {1.0, -2.0}, true);
    p.set_name("p");
    AdamWConfig<double> cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    AdamW<double> opt({p}, cfg);
    opt.step();  // no grad set -> g = 0
    CHECK(p.values()[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.01)).epsilon(1e-12));
    CHECK(p.values()[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("adamw: zero gradient and zero decay is a no-op") {
    auto p = Tensor<double>::from({2}, {1.5, -0.5}, true);
    AdamWConfig<double> cfg;
    cfg.weight_decay = 0.0;
    AdamW<double> opt({p}, cfg);
    opt.step();
    CHECK(p.values()[0] == 1.5);
    CHECK(p.values()[1] == -0.5);
}

TEST_CASE("adamw: constant gradient drives per-step update toward lr (sign-like step)") {
    auto p = Tensor<double>::from({1}, {0.0}, true);
    AdamWConfig<double> cfg;
    cfg.lr = 1e-3;
    cfg.weight_decay = 0.0;
    AdamW<double> opt({p}, cfg);
    double g = 0.37;
    double prev = p.values()[0];
    double last_step = 0;
    for (int i = 0; i < 2000; ++i) {
        p.grad_mut().assign(1, g);
        opt.step();
        last_step = prev - p.values()[0];
        prev = p.values()[0];
    }
    // m-hat / sqrt(v-hat) -> 1, so |step| -> lr
    CHECK(last_step == doctest::Approx(1e-3).epsilon(1e-3));
}

TEST_CASE("adamw rejects non-finite gradients") {
    auto p = Tensor<double>::from({1}, {0.0}, true);
    AdamW<double> opt({p}, {});
    p.grad_mut().assign(1, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(opt.step(), runtime_fault);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng = make_rng(99);
    std::vector<NamedTensorF> ts;
    ts.push_back({"layer.w", {3, 4}, {}});
    ts.push_back({"layer.b", {4}, {}});
    std::uniform_real_distribution<float> d(-5.f, 5.f);
    for (auto& t : ts) {
        t.data.resize((size_t)shape_numel(t.shape));
        for (auto& v : t.data) v = d(rng);
    }
    ts[0].data[1] = 1.0e-38f;  // denormal-adjacent values must survive
    auto path = std::filesystem::temp_directory_path() / "iag_ckpt_test.bin";
    save_checkpoint(path.string(), ts);
    auto back = load_checkpoint(path.string());
    REQUIRE(back.size() == ts.size());
    for (size_t i = 0; i < ts.size(); ++i) {
        CHECK(back[i].name == ts[i].name);
        CHECK(back[i].shape == ts[i].shape);
        REQUIRE(back[i].data.size() == ts[i].data.size());
        for (size_t j = 0; j < ts[i].data.size(); ++j) {
            CHECK(std::memcmp(&back[i].data[j], &ts[i].data[j], 4) == 0);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("seeded initialization is bit-identical across runs") {
    auto run = [] {
        Rng rng = make_rng(7);
        ParamList<float> reg;
        Linear<float> l("l", 8, 8, rng, reg);
        MultiHeadAttention<float> a("a", 8, 2, rng, reg);
        std::vector<float> all;
        for (auto& p : reg) all.insert(all.end(), p.values().begin(), p.values().end());
        return all;
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("clamp forward and gradient mask") {
    auto x = Tensor<double>::from({4}, {-0.5, 0.25, 0.75, 1.5}, true);
    auto y = clamp(x, 0.0, 1.0);
    CHECK(y.values() == std::vector<double>{0.0, 0.25, 0.75, 1.0});
    backward(sum(y));
    CHECK(x.grad() == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}
