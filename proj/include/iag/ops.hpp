#pragma once

// Differentiable ops over Tensor<T>. Shapes are validated up front; every
// op's output is finite-checked (see tensor.hpp). GEMM-shaped work (matmul,
// conv im2col products, attention) goes through the deterministic kernels
// in gemm.hpp.

#include <algorithm>
#include <cmath>
#include <vector>

#include "iag/gemm.hpp"
#include "iag/tensor.hpp"

namespace iag {

namespace opdetail {

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace opdetail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    opdetail::check_same_shape(a, b, "add");
    std::vector<T> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_op<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[(size_t)k];
            if (!p.req_grad) continue;
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    opdetail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_op<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.req_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        if (pb.req_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    opdetail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_op<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.req_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.val[i];
        if (pb.req_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.val[i];
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.values());
    for (auto& v : out) v *= c;
    return make_op<T>("scale", a.shape(), std::move(out), {a}, [c](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
    });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.values());
    for (auto& v : out) v += c;
    return make_op<T>("add_scalar", a.shape(), std::move(out), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.values());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return make_op<T>("relu", a.shape(), std::move(out), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (p.val[i] > T(0)) p.grad[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    // exact erf form: x * Phi(x)
    std::vector<T> out(a.values());
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (auto& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    return make_op<T>("gelu", a.shape(), std::move(out), {a}, [inv_sqrt2](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        const T inv_sqrt2pi = T(0.3989422804014326779);
        for (size_t i = 0; i < n.grad.size(); ++i) {
            T x = p.val[i];
            T phi_cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            T phi_pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            p.grad[i] += n.grad[i] * (phi_cdf + x * phi_pdf);
        }
    });
}

// Gradient passes through on the closed interval [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    check(lo <= hi, "clamp: lo > hi");
    std::vector<T> out(a.values());
    for (auto& v : out) v = std::min(hi, std::max(lo, v));
    return make_op<T>("clamp", a.shape(), std::move(out), {a}, [lo, hi](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (p.val[i] >= lo && p.val[i] <= hi) p.grad[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> sqrt_op(const Tensor<T>& a) {
    std::vector<T> out(a.values());
    for (auto& v : out) {
        check(v >= T(0), "sqrt: negative input");
        v = std::sqrt(v);
    }
    return make_op<T>("sqrt", a.shape(), std::move(out), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * T(0.5) / n.val[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = T(0);
    for (T v : a.values()) s += v;
    return make_op<T>("sum", {1}, {s}, {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (auto& g : p.grad) g += n.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    check(a.numel() > 0, "mean: empty tensor");
    T s = T(0);
    for (T v : a.values()) s += v;
    T inv = T(1) / T(a.numel());
    return make_op<T>("mean", {1}, {s * inv}, {a}, [inv](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (auto& g : p.grad) g += n.grad[0] * inv;
    });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 inputs");
    check(a.dim(1) == b.dim(0), "matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out((size_t)m * (size_t)n, T(0));
    gemm_acc(m, n, k, a.data(), b.data(), out.data());
    return make_op<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& n_) {
        auto& pa = *n_.parents[0];
        auto& pb = *n_.parents[1];
        // dA += dC * B^T ; dB += A^T * dC
        if (pa.req_grad) gemm_bt_acc(m, k, n, n_.grad.data(), pb.val.data(), pa.grad.data());
        if (pb.req_grad) gemm_at_acc(k, n, m, pa.val.data(), n_.grad.data(), pb.grad.data());
    });
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    check(a.rank() == 2, "transpose2d: expects rank-2 input");
    int r = a.dim(0), c = a.dim(1);
    std::vector<T> out((size_t)r * (size_t)c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[(size_t)j * r + i] = a.data()[(size_t)i * c + j];
    return make_op<T>("transpose2d", {c, r}, std::move(out), {a}, [r, c](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) p.grad[(size_t)i * c + j] += n.grad[(size_t)j * r + i];
    });
}

// (R,C) + (C) broadcast over rows.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
    check(m.rank() == 2 && v.rank() == 1 && m.dim(1) == v.dim(0),
          "add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
    int r = m.dim(0), c = m.dim(1);
    std::vector<T> out(m.values());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[(size_t)i * c + j] += v.data()[j];
    return make_op<T>("add_rowvec", m.shape(), std::move(out), {m, v}, [r, c](Node<T>& n) {
        auto& pm = *n.parents[0];
        auto& pv = *n.parents[1];
        if (pm.req_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pm.grad[i] += n.grad[i];
        if (pv.req_grad)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) pv.grad[(size_t)j] += n.grad[(size_t)i * c + j];
    });
}

// ---------------------------------------------------------------------------
// Shape ops (copying; tensors are tiny at this scale)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    check(shape_numel(shape) == a.numel(), "reshape: numel mismatch");
    return make_op<T>("reshape", std::move(shape), a.values(), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

// Concatenate along dim 0 (rows of a matrix, channels of a CHW image).
template <class T>
Tensor<T> concat0(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() == b.rank() && a.rank() >= 1, "concat0: rank mismatch");
    for (int i = 1; i < a.rank(); ++i) check(a.dim(i) == b.dim(i), "concat0: trailing dims differ");
    Shape s = a.shape();
    s[0] += b.dim(0);
    std::vector<T> out;
    out.reserve(a.values().size() + b.values().size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    size_t na = a.values().size();
    return make_op<T>("concat0", std::move(s), std::move(out), {a, b}, [na](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.req_grad)
            for (size_t i = 0; i < na; ++i) pa.grad[i] += n.grad[i];
        if (pb.req_grad)
            for (size_t i = na; i < n.grad.size(); ++i) pb.grad[i - na] += n.grad[i];
    });
}

// Slice [d0, d1) along dim 0.
template <class T>
Tensor<T> slice0(const Tensor<T>& a, int d0, int d1) {
    check(0 <= d0 && d0 < d1 && d1 <= a.dim(0), "slice0: bad range");
    Shape s = a.shape();
    s[0] = d1 - d0;
    size_t inner = 1;
    for (int i = 1; i < a.rank(); ++i) inner *= (size_t)a.dim(i);
    std::vector<T> out(a.values().begin() + (size_t)d0 * inner, a.values().begin() + (size_t)d1 * inner);
    return make_op<T>("slice0", std::move(s), std::move(out), {a}, [d0, inner](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        size_t off = (size_t)d0 * inner;
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[off + i] += n.grad[i];
    });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
    check(a.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.dim(1), "slice_cols: bad range");
    int r = a.dim(0), c = a.dim(1), w = c1 - c0;
    std::vector<T> out((size_t)r * (size_t)w);
    for (int i = 0; i < r; ++i)
        std::copy_n(a.data() + (size_t)i * c + c0, w, out.data() + (size_t)i * w);
    return make_op<T>("slice_cols", {r, w}, std::move(out), {a}, [r, c, c0, w](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j) p.grad[(size_t)i * c + c0 + j] += n.grad[(size_t)i * w + j];
    });
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "concat_cols: row mismatch");
    int r = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    std::vector<T> out((size_t)r * (size_t)(ca + cb));
    for (int i = 0; i < r; ++i) {
        std::copy_n(a.data() + (size_t)i * ca, ca, out.data() + (size_t)i * (ca + cb));
        std::copy_n(b.data() + (size_t)i * cb, cb, out.data() + (size_t)i * (ca + cb) + ca);
    }
    return make_op<T>("concat_cols", {r, ca + cb}, std::move(out), {a, b}, [r, ca, cb](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        int c = ca + cb;
        if (pa.req_grad)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < ca; ++j) pa.grad[(size_t)i * ca + j] += n.grad[(size_t)i * c + j];
        if (pb.req_grad)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < cb; ++j) pb.grad[(size_t)i * cb + j] += n.grad[(size_t)i * c + ca + j];
    });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    check(x.rank() == 2, "softmax_rows: expects rank-2 input");
    int r = x.dim(0), c = x.dim(1);
    std::vector<T> out((size_t)r * (size_t)c);
    for (int i = 0; i < r; ++i) {
        const T* xi = x.data() + (size_t)i * c;
        T* yi = out.data() + (size_t)i * c;
        T mx = xi[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        T s = T(0);
        for (int j = 0; j < c; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            s += yi[j];
        }
        T inv = T(1) / s;
        for (int j = 0; j < c; ++j) yi[j] *= inv;
    }
    return make_op<T>("softmax", {r, c}, std::move(out), {x}, [r, c](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (int i = 0; i < r; ++i) {
            const T* y = n.val.data() + (size_t)i * c;
            const T* dy = n.grad.data() + (size_t)i * c;
            T dot = T(0);
            for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
            T* dx = p.grad.data() + (size_t)i * c;
            for (int j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
    check(x.rank() == 2, "log_softmax_rows: expects rank-2 input");
    int r = x.dim(0), c = x.dim(1);
    std::vector<T> out((size_t)r * (size_t)c);
    for (int i = 0; i < r; ++i) {
        const T* xi = x.data() + (size_t)i * c;
        T* yi = out.data() + (size_t)i * c;
        T mx = xi[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        T s = T(0);
        for (int j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
        T lse = mx + std::log(s);
        for (int j = 0; j < c; ++j) yi[j] = xi[j] - lse;
    }
    return make_op<T>("log_softmax", {r, c}, std::move(out), {x}, [r, c](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (int i = 0; i < r; ++i) {
            const T* y = n.val.data() + (size_t)i * c;
            const T* dy = n.grad.data() + (size_t)i * c;
            T s = T(0);
            for (int j = 0; j < c; ++j) s += dy[j];
            T* dx = p.grad.data() + (size_t)i * c;
            for (int j = 0; j < c; ++j) dx[j] += dy[j] - std::exp(y[j]) * s;
        }
    });
}

// out[r] = x[r, ids[r]]
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<int> ids) {
    check(x.rank() == 2, "gather_rows: expects rank-2 input");
    int r = x.dim(0), c = x.dim(1);
    check((int)ids.size() == r, "gather_rows: ids length != rows");
    std::vector<T> out((size_t)r);
    for (int i = 0; i < r; ++i) {
        check(ids[(size_t)i] >= 0 && ids[(size_t)i] < c, "gather_rows: id out of range");
        out[(size_t)i] = x.data()[(size_t)i * c + ids[(size_t)i]];
    }
    return make_op<T>("gather_rows", {r}, std::move(out), {x}, [ids = std::move(ids), c](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.req_grad) return;
        for (size_t i = 0; i < ids.size(); ++i) p.grad[i * (size_t)c + (size_t)ids[i]] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Embedding / normalization
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::vector<int> ids) {
    check(table.rank() == 2, "embedding_lookup: table must be (V,d)");
    int v = table.dim(0), d = table.dim(1);
    const int n_ids = (int)ids.size();
    std::vector<T> out(ids.size() * (size_t)d);
    for (size_t i = 0; i < ids.size(); ++i) {
        check(ids[i] >= 0 && ids[i] < v, "embedding_lookup: id out of range");
        std::copy_n(table.data() + (size_t)ids[i] * d, d, out.data() + i * (size_t)d);
    }
    return make_op<T>("embedding", {n_ids, d}, std::move(out), {table},
                      [ids = std::move(ids), d](Node<T>& n) {
                          auto& p = *n.parents[0];
                          if (!p.req_grad) return;
                          for (size_t i = 0; i < ids.size(); ++i)
                              for (int j = 0; j < d; ++j)
                                  p.grad[(size_t)ids[i] * d + j] += n.grad[i * (size_t)d + j];
                      });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    check(x.rank() == 2, "layer_norm: expects rank-2 input");
    int r = x.dim(0), c = x.dim(1);
    check(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
          "layer_norm: gamma/beta must be (C)");
    std::vector<T> out((size_t)r * (size_t)c);
    for (int i = 0; i < r; ++i) {
        const T* xi = x.data() + (size_t)i * c;
        T mu = T(0);
        for (int j = 0; j < c; ++j) mu += xi[j];
        mu /= T(c);
        T var = T(0);
        for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= T(c);
        T inv = T(1) / std::sqrt(var + eps);
        T* yi = out.data() + (size_t)i * c;
        for (int j = 0; j < c; ++j) yi[j] = gamma.data()[j] * ((xi[j] - mu) * inv) + beta.data()[j];
    }
    return make_op<T>("layer_norm", {r, c}, std::move(out), {x, gamma, beta}, [r, c, eps](Node<T>& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        for (int i = 0; i < r; ++i) {
            const T* xi = px.val.data() + (size_t)i * c;
            const T* dy = n.grad.data() + (size_t)i * c;
            T mu = T(0);
            for (int j = 0; j < c; ++j) mu += xi[j];
            mu /= T(c);
            T var = T(0);
            for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
            var /= T(c);
            T inv = T(1) / std::sqrt(var + eps);
            // xhat and the two reductions the input gradient needs
            T sum_gdy = T(0), sum_gdy_xhat = T(0);
            for (int j = 0; j < c; ++j) {
                T xhat = (xi[j] - mu) * inv;
                T gdy = pg.val[(size_t)j] * dy[j];
                sum_gdy += gdy;
                sum_gdy_xhat += gdy * xhat;
                if (pg.req_grad) pg.grad[(size_t)j] += dy[j] * xhat;
                if (pb.req_grad) pb.grad[(size_t)j] += dy[j];
            }
            if (px.req_grad) {
                T* dx = px.grad.data() + (size_t)i * c;
                for (int j = 0; j < c; ++j) {
                    T xhat = (xi[j] - mu) * inv;
                    T gdy = pg.val[(size_t)j] * dy[j];
                    dx[j] += inv * (gdy - sum_gdy / T(c) - xhat * sum_gdy_xhat / T(c));
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Convolutions (NCHW single image; batching is a loop at this scale)
// ---------------------------------------------------------------------------

namespace opdetail {

template <class T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int hout,
            int wout, T* cols) {
    for (int ci = 0; ci < cin; ++ci) {
        for (int di = 0; di < kh; ++di) {
            for (int dj = 0; dj < kw; ++dj) {
                T* row = cols + ((size_t)(ci * kh + di) * kw + dj) * ((size_t)hout * wout);
                for (int ho = 0; ho < hout; ++ho) {
                    int hi = ho * stride + di - pad;
                    for (int wo = 0; wo < wout; ++wo) {
                        int wi = wo * stride + dj - pad;
                        row[(size_t)ho * wout + wo] =
                            (hi >= 0 && hi < h && wi >= 0 && wi < w)
                                ? x[((size_t)ci * h + hi) * w + wi]
                                : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* cols, int cin, int h, int w, int kh, int kw, int stride, int pad, int hout,
                int wout, T* x) {
    for (int ci = 0; ci < cin; ++ci) {
        for (int di = 0; di < kh; ++di) {
            for (int dj = 0; dj < kw; ++dj) {
                const T* row = cols + ((size_t)(ci * kh + di) * kw + dj) * ((size_t)hout * wout);
                for (int ho = 0; ho < hout; ++ho) {
                    int hi = ho * stride + di - pad;
                    if (hi < 0 || hi >= h) continue;
                    for (int wo = 0; wo < wout; ++wo) {
                        int wi = wo * stride + dj - pad;
                        if (wi < 0 || wi >= w) continue;
                        x[((size_t)ci * h + hi) * w + wi] += row[(size_t)ho * wout + wo];
                    }
                }
            }
        }
    }
}

}  // namespace opdetail

// x: (Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout)
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    check(x.rank() == 3 && w.rank() == 4, "conv2d: x must be (C,H,W), w (Cout,Cin,kh,kw)");
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(w.dim(1) == cin, "conv2d: channel mismatch");
    check(b.rank() == 1 && b.dim(0) == cout, "conv2d: bias must be (Cout)");
    int hout = (h + 2 * pad - kh) / stride + 1;
    int wout = (wd + 2 * pad - kw) / stride + 1;
    check(hout >= 1 && wout >= 1, "conv2d: kernel larger than padded input");

    int kdim = cin * kh * kw, odim = hout * wout;
    std::vector<T> cols((size_t)kdim * odim);
    opdetail::im2col(x.data(), cin, h, wd, kh, kw, stride, pad, hout, wout, cols.data());
    std::vector<T> out((size_t)cout * odim, T(0));
    gemm_acc(cout, odim, kdim, w.data(), cols.data(), out.data());
    for (int co = 0; co < cout; ++co) {
        T bias = b.data()[co];
        for (int i = 0; i < odim; ++i) out[(size_t)co * odim + i] += bias;
    }
    return make_op<T>(
        "conv2d", {cout, hout, wout}, std::move(out), {x, w, b},
        [cin, h, wd, cout, kh, kw, stride, pad, hout, wout, kdim, odim](Node<T>& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            if (pb.req_grad) {
                for (int co = 0; co < cout; ++co) {
                    T s = T(0);
                    for (int i = 0; i < odim; ++i) s += n.grad[(size_t)co * odim + i];
                    pb.grad[(size_t)co] += s;
                }
            }
            if (pw.req_grad) {
                // recompute im2col of x (cheaper than keeping it alive)
                std::vector<T> cols((size_t)kdim * odim);
                opdetail::im2col(px.val.data(), cin, h, wd, kh, kw, stride, pad, hout, wout,
                                 cols.data());
                // dW += dOut * cols^T
                gemm_bt_acc(cout, kdim, odim, n.grad.data(), cols.data(), pw.grad.data());
            }
            if (px.req_grad) {
                std::vector<T> dcols((size_t)kdim * odim, T(0));
                // dcols = W^T * dOut
                gemm_at_acc(kdim, odim, cout, pw.val.data(), n.grad.data(), dcols.data());
                opdetail::col2im_add(dcols.data(), cin, h, wd, kh, kw, stride, pad, hout, wout,
                                     px.grad.data());
            }
        });
}

// x: (Cin,H,W), w: (Cin,Cout,kh,kw), b: (Cout); output (Cout, (H-1)s+kh, (W-1)s+kw)
template <class T>
Tensor<T> transpose_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
    check(x.rank() == 3 && w.rank() == 4, "transpose_conv2d: x must be (C,H,W), w (Cin,Cout,kh,kw)");
    check(stride >= 1, "transpose_conv2d: bad stride");
    int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    check(w.dim(0) == cin, "transpose_conv2d: channel mismatch");
    int cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    check(b.rank() == 1 && b.dim(0) == cout, "transpose_conv2d: bias must be (Cout)");
    int hout = (h - 1) * stride + kh;
    int wout = (wd - 1) * stride + kw;

    int kdim = cout * kh * kw, idim = h * wd;
    std::vector<T> g((size_t)kdim * idim, T(0));
    // G = W^T * X
    gemm_at_acc(kdim, idim, cin, w.data(), x.data(), g.data());
    std::vector<T> out((size_t)cout * hout * wout, T(0));
    opdetail::col2im_add(g.data(), cout, hout, wout, kh, kw, stride, 0, h, wd, out.data());
    for (int co = 0; co < cout; ++co) {
        T bias = b.data()[co];
        for (int i = 0; i < hout * wout; ++i) out[(size_t)co * hout * wout + i] += bias;
    }
    return make_op<T>(
        "transpose_conv2d", {cout, hout, wout}, std::move(out), {x, w, b},
        [cin, h, wd, cout, kh, kw, stride, hout, wout, kdim, idim](Node<T>& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            if (pb.req_grad) {
                for (int co = 0; co < cout; ++co) {
                    T s = T(0);
                    for (int i = 0; i < hout * wout; ++i) s += n.grad[(size_t)co * hout * wout + i];
                    pb.grad[(size_t)co] += s;
                }
            }
            // dG[(co,di,dj),(i,j)] = dOut[co, i*s+di, j*s+dj]
            std::vector<T> dg((size_t)kdim * idim);
            opdetail::im2col(n.grad.data(), cout, hout, wout, kh, kw, stride, 0, h, wd, dg.data());
            if (pw.req_grad) {
                // dW += X * dG^T
                gemm_bt_acc(cin, kdim, idim, px.val.data(), dg.data(), pw.grad.data());
            }
            if (px.req_grad) {
                // dX += W * dG
                gemm_acc(cin, idim, kdim, pw.val.data(), dg.data(), px.grad.data());
            }
        });
}

// ---------------------------------------------------------------------------
// Composite losses
// ---------------------------------------------------------------------------

// Mean token cross-entropy of logits rows against label ids.
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& labels) {
    auto lp = log_softmax_rows(logits);
    auto picked = gather_rows(lp, labels);
    return scale(mean(picked), T(-1));
}

}  // namespace iag
