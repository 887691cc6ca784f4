#pragma once

// Encoder + hashing head bundle, batch assembly from a dataset, and split
// encoding into binary code sets.

#include <string>
#include <vector>

#include "vithash/data.hpp"
#include "vithash/hash_head.hpp"
#include "vithash/retrieval.hpp"
#include "vithash/serialize.hpp"
#include "vithash/vit.hpp"

namespace vith {

struct ModelConfig {
    ViTConfig encoder;
    HashHeadConfig head;
    Normalization norm;

    void validate() const {
        encoder.validate();
        head.validate();
        norm.validate(encoder.channels);
    }

    // presets: vts32, vts16, tiny
    static ModelConfig preset(const std::string& name, std::size_t bits, FeatureMode mode) {
        ModelConfig mc;
        if (name == "vts32") mc.encoder = ViTConfig::vts32();
        else if (name == "vts16") mc.encoder = ViTConfig::vts16();
        else if (name == "tiny") mc.encoder = ViTConfig::tiny();
        else throw ConfigError("unknown model preset '" + name + "' (want vts32, vts16, tiny)");
        mc.head.bits = bits;
        mc.head.mode = mode;
        if (name == "tiny") mc.head.hidden_dim = 128;
        mc.validate();
        return mc;
    }
};

struct Model {
    ModelConfig config;
    ViTParams<float> encoder;
    HashHeadParams<float> head;

    static Model fresh(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.config = cfg;
        m.encoder = ViTParams<float>::fresh(cfg.encoder, seed);
        m.head = HashHeadParams<float>::fresh(cfg.encoder, cfg.head, seed ^ 0x68656164u);
        return m;
    }

    std::vector<std::pair<std::string, Tensor>> named() const {
        auto out = encoder.named();
        auto h = head.named();
        out.insert(out.end(), h.begin(), h.end());
        return out;
    }

    void set_requires_grad(bool on) {
        for (auto& [name, t] : named()) t.set_requires_grad(on);
    }
};

// Items -> [B, N, patch_dim] patches, resized to the encoder's input size
// and channel-normalized.
Tensor make_batch(const Dataset& ds, const std::vector<std::uint32_t>& indices,
                  const ModelConfig& cfg);

// Eval-mode encoding of a split into packed K-bit codes.
BinaryCodeSet encode_split(const Model& model, const Dataset& ds,
                           const std::vector<std::uint32_t>& indices, std::size_t batch_size);

}  // namespace vith
