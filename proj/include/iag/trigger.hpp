#pragma once

// Input-aware adaptive trigger generator: a text-conditional U-Net mapping
// (clean image, target-description embedding) to an additive residual, the
// mixup step I_t = clamp(I_b + R, 0, 1), and the smooth-L1 reconstruction
// loss (1/n) sum_i sqrt((I_t,i - I_b,i)^2 + eps).

#include <string>
#include <vector>

#include "iag/nn.hpp"
#include "iag/ops.hpp"
#include "iag/vocab.hpp"

namespace iag {

// Frozen text encoder: a seeded random token-embedding table plus sinusoidal
// positions. Its table never requires grad, so graphs stop at the boundary.
template <class T>
class CondEncoder {
public:
    static constexpr int kMaxLen = 16;

    CondEncoder() = default;
    CondEncoder(int vocab_size, int dim, uint64_t seed) : dim_(dim) {
        Rng rng = make_rng(derive_seed(seed, fnv1a64("cond-encoder")));
        table_ = Tensor<T>::zeros({vocab_size, dim});
        fill_normal(table_, rng, T(0), T(1));
        table_.set_name("cond_encoder.table");
        pos_ = sinusoidal_positions<T>(kMaxLen, dim);
    }

    // (L, dim); deterministic, no gradient ever flows into the table.
    Tensor<T> encode(const TokenSequence& tokens) const {
        check(!tokens.empty(), "encode_condition: empty token sequence");
        check((int)tokens.size() <= kMaxLen, "encode_condition: description too long");
        auto emb = embedding_lookup(table_, tokens);
        auto pos = slice0(pos_, 0, (int)tokens.size());
        return add(emb, pos);
    }

    int dim() const { return dim_; }
    const Tensor<T>& table() const { return table_; }
    Tensor<T>& table_mut() { return table_; }

private:
    Tensor<T> table_, pos_;
    int dim_ = 0;
};

struct UNetConfig {
    int in_channels = 3;
    int c1 = 16, c2 = 32, c3 = 64;  // widths at full / half / quarter resolution
    int cond_dim = 32;
};

// Two downsamplings, bottleneck and per-decoder-level cross-attention,
// skip connections, zero-initialized head so the residual starts at zero.
template <class T>
class TriggerGenerator {
public:
    TriggerGenerator() = default;
    TriggerGenerator(const UNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
        Rng rng = make_rng(derive_seed(seed, fnv1a64("trigger-generator")));
        stem_ = Conv2dM<T>("gen.stem", cfg.in_channels, cfg.c1, 3, 1, 1, rng, params_);
        down1_ = Conv2dM<T>("gen.down1", cfg.c1, cfg.c2, 3, 2, 1, rng, params_);
        down2_ = Conv2dM<T>("gen.down2", cfg.c2, cfg.c3, 3, 2, 1, rng, params_);
        att_mid_ = CrossAttnBlock<T>("gen.att_mid", cfg.c3, cfg.cond_dim, rng, params_);
        mid_ = Conv2dM<T>("gen.mid", cfg.c3, cfg.c3, 3, 1, 1, rng, params_);
        up1_ = TConv2dM<T>("gen.up1", cfg.c3, cfg.c2, 2, 2, rng, params_);
        fuse1_ = Conv2dM<T>("gen.fuse1", 2 * cfg.c2, cfg.c2, 3, 1, 1, rng, params_);
        att1_ = CrossAttnBlock<T>("gen.att1", cfg.c2, cfg.cond_dim, rng, params_);
        up2_ = TConv2dM<T>("gen.up2", cfg.c2, cfg.c1, 2, 2, rng, params_);
        fuse2_ = Conv2dM<T>("gen.fuse2", 2 * cfg.c1, cfg.c1, 3, 1, 1, rng, params_);
        att2_ = CrossAttnBlock<T>("gen.att2", cfg.c1, cfg.cond_dim, rng, params_);
        head_ = Conv2dM<T>("gen.head", cfg.c1, cfg.in_channels, 3, 1, 1, rng, params_,
                           /*zero_init=*/true);
    }

    // image: (3,H,W) in [0,1], cond: (L, cond_dim) -> residual (3,H,W)
    Tensor<T> generate(const Tensor<T>& image, const Tensor<T>& cond) const {
        check(image.rank() == 3 && image.dim(0) == cfg_.in_channels,
              "generate_trigger: image must be (3,H,W)");
        check(image.dim(1) % 4 == 0 && image.dim(2) % 4 == 0,
              "generate_trigger: image extent must be divisible by 4");
        check(cond.rank() == 2 && cond.dim(1) == cfg_.cond_dim,
              "generate_trigger: condition dim mismatch");
        auto e1 = relu(stem_.forward(image));
        auto e2 = relu(down1_.forward(e1));
        auto e3 = relu(down2_.forward(e2));
        auto b = untokens(att_mid_.forward(tokens(e3), cond), e3.dim(1), e3.dim(2));
        b = relu(mid_.forward(b));
        auto u1 = up1_.forward(b);
        auto f1 = relu(fuse1_.forward(concat0(u1, e2)));
        f1 = untokens(att1_.forward(tokens(f1), cond), f1.dim(1), f1.dim(2));
        auto u2 = up2_.forward(f1);
        auto f2 = relu(fuse2_.forward(concat0(u2, e1)));
        f2 = untokens(att2_.forward(tokens(f2), cond), f2.dim(1), f2.dim(2));
        return head_.forward(f2);
    }

    ParamList<T>& params() { return params_; }
    const ParamList<T>& params() const { return params_; }
    const UNetConfig& config() const { return cfg_; }

private:
    static Tensor<T> tokens(const Tensor<T>& fmap) {
        int c = fmap.dim(0), n = fmap.dim(1) * fmap.dim(2);
        return transpose2d(reshape(fmap, {c, n}));
    }
    static Tensor<T> untokens(const Tensor<T>& toks, int h, int w) {
        int c = toks.dim(1);
        return reshape(transpose2d(toks), {c, h, w});
    }

    UNetConfig cfg_;
    ParamList<T> params_;
    Conv2dM<T> stem_, down1_, down2_, mid_, fuse1_, fuse2_, head_;
    TConv2dM<T> up1_, up2_;
    CrossAttnBlock<T> att_mid_, att1_, att2_;
};

// I_t = clamp(I_b + R, 0, 1); the clamp keeps poisoned images valid pixels.
template <class T>
Tensor<T> poison_image(const Tensor<T>& image, const Tensor<T>& residual) {
    check(image.shape() == residual.shape(), "poison_image: shape mismatch");
    return clamp(add(image, residual), T(0), T(1));
}

// Smooth-L1 (Charbonnier) reconstruction loss, eps inside the square root so
// the gradient at zero difference stays finite.
template <class T>
Tensor<T> rec_loss(const Tensor<T>& poisoned, const Tensor<T>& clean, T eps = T(1e-6)) {
    check(poisoned.shape() == clean.shape(), "rec_loss: shape mismatch");
    auto d = sub(poisoned, clean);
    return mean(sqrt_op(add_scalar(mul(d, d), eps)));
}

}  // namespace iag
