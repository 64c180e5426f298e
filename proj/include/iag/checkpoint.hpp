#pragma once

// Flat binary checkpoint: magic "IAG1", then per-parameter records of
// (u32 name length, name bytes, u32 rank, u32 dims..., little-endian f32
// data). Round-trips must be bit-exact.

#include <cstdint>
#include <string>
#include <vector>

#include "iag/tensor.hpp"

namespace iag {

struct NamedTensorF {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensorF>& tensors);
std::vector<NamedTensorF> load_checkpoint(const std::string& path);

// Convenience bridges for parameter lists.
template <class T>
std::vector<NamedTensorF> to_named(const std::vector<Tensor<T>>& params) {
    std::vector<NamedTensorF> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        NamedTensorF nt;
        nt.name = p.name();
        nt.shape = p.shape();
        nt.data.reserve(p.values().size());
        for (auto v : p.values()) nt.data.push_back((float)v);
        out.push_back(std::move(nt));
    }
    return out;
}

template <class T>
void load_into(const std::vector<NamedTensorF>& named, std::vector<Tensor<T>>& params) {
    check(named.size() == params.size(), "checkpoint: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        check(named[i].name == params[i].name(),
              "checkpoint: parameter name mismatch: '" + named[i].name + "' vs '" +
                  params[i].name() + "'");
        check(named[i].shape == params[i].shape(),
              "checkpoint: shape mismatch for '" + named[i].name + "'");
        auto& vals = params[i].values();
        for (size_t j = 0; j < vals.size(); ++j) vals[j] = (T)named[i].data[j];
    }
}

}  // namespace iag
