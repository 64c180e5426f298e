#pragma once

// AdamW with decoupled weight decay. The learning rate is set per step by
// the trainer (warmup schedule lives there, not here).

#include <cmath>
#include <vector>

#include "iag/tensor.hpp"

namespace iag {

template <class T>
struct AdamWConfig {
    T lr = T(3e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0.01);
};

template <class T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, AdamWConfig<T> cfg) : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].values().size(), T(0));
            v_[i].assign(params_[i].values().size(), T(0));
        }
    }

    int64_t step_count() const { return step_; }
    AdamWConfig<T>& config() { return cfg_; }
    const std::vector<Tensor<T>>& params() const { return params_; }

    // Applies one update from the gradients currently held on the parameters.
    // Parameters never reached by backward carry zero gradient. All gradients
    // are validated before any parameter moves, so a non-finite gradient
    // leaves the previous (last-good) parameters intact.
    void step() {
        for (const auto& p : params_) {
            for (T g : p.grad())
                if (!std::isfinite(g))
                    throw runtime_fault("adamw_step: non-finite gradient for '" + p.name() + "'");
        }
        ++step_;
        T bc1 = T(1) - std::pow(cfg_.beta1, T(step_));
        T bc2 = T(1) - std::pow(cfg_.beta2, T(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            auto& vals = p.values();
            const auto& grad = p.grad();
            const bool has_grad = !grad.empty();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < vals.size(); ++j) {
                T g = has_grad ? grad[j] : T(0);
                vals[j] -= cfg_.lr * cfg_.weight_decay * vals[j];
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g * g;
                T mhat = m[j] / bc1;
                T vhat = v[j] / bc2;
                vals[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor<T>> params_;
    AdamWConfig<T> cfg_;
    std::vector<std::vector<T>> m_, v_;
    int64_t step_ = 0;
};

}  // namespace iag
