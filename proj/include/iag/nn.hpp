#pragma once

// Small module layer over the tensor ops: linear, layer norm, conv blocks,
// multi-head self-attention with an additive mask, and single-head
// cross-attention used by the trigger generator.

#include <cmath>
#include <string>
#include <vector>

#include "iag/init.hpp"
#include "iag/ops.hpp"
#include "iag/tensor.hpp"

namespace iag {

template <class T>
using ParamList = std::vector<Tensor<T>>;

template <class T>
Tensor<T> make_param(ParamList<T>& reg, std::string name, Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
    t.set_name(std::move(name));
    reg.push_back(t);
    return t;
}

template <class T>
struct Linear {
    Tensor<T> w, b;  // w: (in,out)

    Linear() = default;
    Linear(const std::string& prefix, int in, int out, Rng& rng, ParamList<T>& reg,
           bool zero_init = false) {
        w = make_param(reg, prefix + ".w", {in, out});
        b = make_param(reg, prefix + ".b", {out});
        if (!zero_init) kaiming_uniform(w, rng, in);
    }
    Tensor<T> forward(const Tensor<T>& x) const { return add_rowvec(matmul(x, w), b); }
};

template <class T>
struct LayerNormM {
    Tensor<T> gamma, beta;

    LayerNormM() = default;
    LayerNormM(const std::string& prefix, int dim, ParamList<T>& reg) {
        gamma = make_param(reg, prefix + ".gamma", {dim});
        beta = make_param(reg, prefix + ".beta", {dim});
        for (auto& v : gamma.values()) v = T(1);
    }
    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <class T>
struct Conv2dM {
    Tensor<T> w, b;  // w: (Cout,Cin,kh,kw)
    int stride = 1, pad = 0;

    Conv2dM() = default;
    Conv2dM(const std::string& prefix, int cin, int cout, int k, int stride_, int pad_, Rng& rng,
            ParamList<T>& reg, bool zero_init = false)
        : stride(stride_), pad(pad_) {
        w = make_param(reg, prefix + ".w", {cout, cin, k, k});
        b = make_param(reg, prefix + ".b", {cout});
        if (!zero_init) kaiming_uniform(w, rng, (int64_t)cin * k * k);
    }
    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <class T>
struct TConv2dM {
    Tensor<T> w, b;  // w: (Cin,Cout,kh,kw)
    int stride = 1;

    TConv2dM() = default;
    TConv2dM(const std::string& prefix, int cin, int cout, int k, int stride_, Rng& rng,
             ParamList<T>& reg)
        : stride(stride_) {
        w = make_param(reg, prefix + ".w", {cin, cout, k, k});
        b = make_param(reg, prefix + ".b", {cout});
        kaiming_uniform(w, rng, (int64_t)cin * k * k);
    }
    Tensor<T> forward(const Tensor<T>& x) const { return transpose_conv2d(x, w, b, stride); }
};

template <class T>
struct EmbeddingM {
    Tensor<T> table;  // (V,d)

    EmbeddingM() = default;
    EmbeddingM(const std::string& prefix, int vocab, int dim, Rng& rng, ParamList<T>& reg) {
        table = make_param(reg, prefix + ".table", {vocab, dim});
        fill_normal(table, rng, T(0), T(0.02));
    }
    Tensor<T> forward(const std::vector<int>& ids) const { return embedding_lookup(table, ids); }
};

// Multi-head self-attention. mask is an additive (S,S) tensor (0 where
// attention is allowed, -1e9 where blocked) or an undefined tensor for none.
template <class T>
struct MultiHeadAttention {
    Linear<T> wq, wk, wv, wo;
    int heads = 1, dim = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(const std::string& prefix, int dim_, int heads_, Rng& rng, ParamList<T>& reg)
        : heads(heads_), dim(dim_) {
        check(dim_ % heads_ == 0, "attention: dim must divide by heads");
        wq = Linear<T>(prefix + ".q", dim_, dim_, rng, reg);
        wk = Linear<T>(prefix + ".k", dim_, dim_, rng, reg);
        wv = Linear<T>(prefix + ".v", dim_, dim_, rng, reg);
        wo = Linear<T>(prefix + ".o", dim_, dim_, rng, reg);
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& mask) const {
        auto q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
        int dh = dim / heads;
        T inv_sqrt = T(1) / std::sqrt((T)dh);
        Tensor<T> ctx;
        for (int h = 0; h < heads; ++h) {
            auto qh = slice_cols(q, h * dh, (h + 1) * dh);
            auto kh = slice_cols(k, h * dh, (h + 1) * dh);
            auto vh = slice_cols(v, h * dh, (h + 1) * dh);
            auto scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
            if (mask.defined()) scores = add(scores, mask);
            auto att = softmax_rows(scores);
            auto ch = matmul(att, vh);
            ctx = h == 0 ? ch : concat_cols(ctx, ch);
        }
        return wo.forward(ctx);
    }
};

// Single-head cross-attention with pre-norm and residual: queries from the
// spatial tokens, keys/values from the condition sequence.
template <class T>
struct CrossAttnBlock {
    LayerNormM<T> ln;
    Linear<T> wq, wk, wv, wo;
    int dim = 0;

    CrossAttnBlock() = default;
    CrossAttnBlock(const std::string& prefix, int dim_, int cond_dim, Rng& rng, ParamList<T>& reg)
        : dim(dim_) {
        ln = LayerNormM<T>(prefix + ".ln", dim_, reg);
        wq = Linear<T>(prefix + ".q", dim_, dim_, rng, reg);
        wk = Linear<T>(prefix + ".k", cond_dim, dim_, rng, reg);
        wv = Linear<T>(prefix + ".v", cond_dim, dim_, rng, reg);
        wo = Linear<T>(prefix + ".o", dim_, dim_, rng, reg);
    }

    // x: (N,dim) tokens, cond: (L,cond_dim)
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond) const {
        auto h = ln.forward(x);
        auto q = wq.forward(h);
        auto k = wk.forward(cond);
        auto v = wv.forward(cond);
        auto scores = scale(matmul(q, transpose2d(k)), T(1) / std::sqrt((T)dim));
        auto att = softmax_rows(scores);
        auto out = wo.forward(matmul(att, v));
        return add(x, out);
    }
};

template <class T>
struct Mlp {
    Linear<T> fc1, fc2;

    Mlp() = default;
    Mlp(const std::string& prefix, int dim, int hidden, Rng& rng, ParamList<T>& reg) {
        fc1 = Linear<T>(prefix + ".fc1", dim, hidden, rng, reg);
        fc2 = Linear<T>(prefix + ".fc2", hidden, dim, rng, reg);
    }
    Tensor<T> forward(const Tensor<T>& x) const { return fc2.forward(gelu(fc1.forward(x))); }
};

// Image (C,H,W) -> (H/p * W/p, dim) token matrix.
template <class T>
struct PatchEmbed {
    Conv2dM<T> proj;
    int patch = 8;

    PatchEmbed() = default;
    PatchEmbed(const std::string& prefix, int cin, int dim, int patch_, Rng& rng, ParamList<T>& reg)
        : patch(patch_) {
        proj = Conv2dM<T>(prefix + ".proj", cin, dim, patch_, patch_, 0, rng, reg);
    }
    Tensor<T> forward(const Tensor<T>& img) const {
        auto t = proj.forward(img);  // (dim, H/p, W/p)
        int d = t.dim(0), np = t.dim(1) * t.dim(2);
        return transpose2d(reshape(t, {d, np}));
    }
};

// Fixed sinusoidal position table (no grad); rows are positions.
template <class T>
Tensor<T> sinusoidal_positions(int n, int dim) {
    std::vector<T> v((size_t)n * (size_t)dim);
    for (int p = 0; p < n; ++p) {
        for (int i = 0; i < dim; ++i) {
            double rate = std::pow(10000.0, -2.0 * (double)(i / 2) / (double)dim);
            double a = (double)p * rate;
            v[(size_t)p * dim + i] = (T)((i % 2 == 0) ? std::sin(a) : std::cos(a));
        }
    }
    return Tensor<T>::from({n, dim}, std::move(v));
}

}  // namespace iag
