#pragma once

// Central finite-difference verification of reverse-mode gradients.
// Runs in 64-bit only; perturbation default 1e-5.

#include <functional>
#include <string>
#include <vector>

#include "iag/tensor.hpp"

namespace iag {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    int64_t n_checked = 0;

    bool pass(double tol) const { return max_rel_err < tol; }
};

// loss_fn must rebuild the graph from the current parameter values and
// return a scalar. Parameters are perturbed in place and restored.
// Differences below atol are treated as agreement: they sit at the central-
// difference noise floor, which otherwise inflates the relative error of
// structurally-zero gradients (e.g. attention key biases under softmax
// shift invariance).
template <class T>
GradCheckReport grad_check(std::vector<Tensor<T>> params, const std::function<Tensor<T>()>& loss_fn,
                           T h = T(1e-5), double atol = 1e-8) {
    static_assert(sizeof(T) == 8, "grad_check requires the 64-bit tensor mode");
    for (auto& p : params) p.zero_grad();
    auto loss = loss_fn();
    backward(loss);

    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        if (p.grad().empty())
            analytic.emplace_back(p.values().size(), T(0));
        else
            analytic.push_back(p.grad());
    }

    GradCheckReport rep;
    NoGradGuard ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        for (size_t j = 0; j < vals.size(); ++j) {
            T orig = vals[j];
            vals[j] = orig + h;
            T up = loss_fn().item();
            vals[j] = orig - h;
            T dn = loss_fn().item();
            vals[j] = orig;
            T numeric = (up - dn) / (T(2) * h);
            T a = analytic[pi][j];
            double diff = std::abs((double)a - (double)numeric);
            double denom = std::max({std::abs((double)a), std::abs((double)numeric), 1e-6});
            double rel = diff <= atol ? 0.0 : diff / denom;
            ++rep.n_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = params[pi].name();
                rep.worst_index = (int64_t)j;
            }
        }
    }
    return rep;
}

}  // namespace iag
