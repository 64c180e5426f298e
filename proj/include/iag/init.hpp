#pragma once

// Parameter initialization: Kaiming-uniform for conv/linear weights,
// normal(0, 0.02) for embeddings, zeros/ones elsewhere.

#include <cmath>
#include <random>

#include "iag/common.hpp"
#include "iag/tensor.hpp"

namespace iag {

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist((double)lo, (double)hi);
    for (auto& v : t.values()) v = (T)dist(rng);
}

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, T mean, T stddev) {
    std::normal_distribution<double> dist((double)mean, (double)stddev);
    for (auto& v : t.values()) v = (T)dist(rng);
}

// fan_in = inputs feeding one output unit.
template <class T>
void kaiming_uniform(Tensor<T>& t, Rng& rng, int64_t fan_in) {
    T bound = (T)std::sqrt(6.0 / (double)std::max<int64_t>(fan_in, 1));
    fill_uniform(t, rng, -bound, bound);
}

}  // namespace iag
