#pragma once

// Binary containers, all little-endian:
//   weights  "VTSW": version u32=1, tensor_count u32; per tensor
//            name_len u16, name, rank u8, dims u32 each, f32 data
//   codes    "VTSC": version u32=1, M u64, K u32; per item id u64,
//            label_count u16, labels u32 each, ceil(K/64) packed u64 words

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vithash/errors.hpp"
#include "vithash/retrieval.hpp"
#include "vithash/tensor.hpp"

namespace vith {

struct NamedTensor {
    Shape shape;
    std::vector<float> data;
};

// sorted by name, so writes are deterministic
using WeightMap = std::map<std::string, NamedTensor>;

void save_weights(const std::string& path, const WeightMap& weights);
WeightMap load_weights(const std::string& path);

void save_code_set(const std::string& path, const BinaryCodeSet& codes);
BinaryCodeSet load_code_set(const std::string& path);

// Model parameters <-> WeightMap. `restore` insists the file and the model
// agree on the exact tensor name set and on every shape.
template <typename Real>
WeightMap snapshot(const std::vector<std::pair<std::string, TensorT<Real>>>& named) {
    WeightMap out;
    for (const auto& [name, t] : named) {
        NamedTensor nt;
        nt.shape = t.shape();
        nt.data.assign(t.data().begin(), t.data().end());
        out.emplace(name, std::move(nt));
    }
    return out;
}

// `ignore_unknown` permits extra tensors in the file (e.g. objective-side
// auxiliaries when only the model is being rebuilt).
template <typename Real>
void restore(const WeightMap& weights,
             const std::vector<std::pair<std::string, TensorT<Real>>>& named,
             bool ignore_unknown = false) {
    std::string missing, unknown;
    for (const auto& [name, t] : named)
        if (!weights.count(name)) missing += (missing.empty() ? "" : ", ") + name;
    if (!ignore_unknown) {
        std::map<std::string, bool> expected;
        for (const auto& [name, t] : named) expected[name] = true;
        for (const auto& [name, nt] : weights)
            if (!expected.count(name)) unknown += (unknown.empty() ? "" : ", ") + name;
    }
    if (!missing.empty() || !unknown.empty()) {
        std::string msg = "weight file does not match model:";
        if (!missing.empty()) msg += " missing [" + missing + "]";
        if (!unknown.empty()) msg += " unknown [" + unknown + "]";
        throw DataError(msg);
    }
    for (const auto& [name, t] : named) {
        const auto& nt = weights.at(name);
        if (nt.shape != t.shape())
            throw DataError("tensor '" + name + "': file shape " + shape_str(nt.shape) +
                            " vs model shape " + shape_str(t.shape()));
        auto& dst = const_cast<TensorT<Real>&>(t).data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = Real(nt.data[i]);
    }
}

}  // namespace vith
