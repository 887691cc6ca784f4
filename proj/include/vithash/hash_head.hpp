#pragma once

// Hashing head: encoder output -> dropout(0.5) -> 1024-d ReLU projection ->
// K real-valued hash features. Binarization is sign-based; each training
// objective applies its own relaxation before that.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vithash/tensor.hpp"
#include "vithash/vit.hpp"

namespace vith {

enum class FeatureMode { All, ClsOnly };

inline const char* to_string(FeatureMode m) {
    return m == FeatureMode::All ? "all" : "cls";
}

inline FeatureMode parse_feature_mode(const std::string& s) {
    if (s == "all") return FeatureMode::All;
    if (s == "cls") return FeatureMode::ClsOnly;
    throw ConfigError("unknown feature mode '" + s + "' (want all|cls)");
}

struct HashHeadConfig {
    std::size_t bits = 16;
    FeatureMode mode = FeatureMode::All;
    std::size_t hidden_dim = 1024;
    double dropout_p = 0.5;

    void validate() const {
        if (bits == 0) throw ConfigError("hash head: bits must be >= 1");
        if (hidden_dim == 0) throw ConfigError("hash head: hidden_dim must be >= 1");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ConfigError("hash head: dropout_p out of [0,1)");
    }

    // (N+1)*de when consuming all token features, de for the cls row only
    std::size_t input_dim(const ViTConfig& enc) const {
        return mode == FeatureMode::All ? enc.tokens() * enc.hidden : enc.hidden;
    }
};

template <typename Real>
struct HashHeadParams {
    HashHeadConfig config;
    TensorT<Real> w1, b1;  // [D_in, hidden_dim]
    TensorT<Real> w2, b2;  // [hidden_dim, K]

    static HashHeadParams fresh(const ViTConfig& enc, const HashHeadConfig& cfg,
                                std::uint64_t seed) {
        cfg.validate();
        Prng rng(seed);
        const Real sigma = Real(0.01);
        auto tn = [&rng, sigma](Shape shape) {
            auto t = TensorT<Real>::zeros(std::move(shape), true);
            for (auto& v : t.data()) v = Real(rng.next_trunc_normal(sigma));
            return t;
        };
        HashHeadParams p;
        p.config = cfg;
        p.w1 = tn({cfg.input_dim(enc), cfg.hidden_dim});
        p.b1 = TensorT<Real>::zeros({cfg.hidden_dim}, true);
        p.w2 = tn({cfg.hidden_dim, cfg.bits});
        p.b2 = TensorT<Real>::zeros({cfg.bits}, true);
        return p;
    }

    std::vector<std::pair<std::string, TensorT<Real>>> named() const {
        return {{"hash.w1", w1}, {"hash.b1", b1}, {"hash.w2", w2}, {"hash.b2", b2}};
    }

    void set_requires_grad(bool b) {
        for (auto& [name, t] : named()) t.set_requires_grad(b);
    }
};

// TE [B,N+1,de] -> hash features H_f [B,K].
template <typename Real>
TensorT<Real> hash_forward_batch(const TensorT<Real>& te, const HashHeadParams<Real>& p,
                                 const ForwardCtx& ctx) {
    if (te.rank() != 3) throw ShapeError("hash_forward: want [B,T,de], got " + shape_str(te.shape()));
    const std::size_t b = te.dim(0), t = te.dim(1), de = te.dim(2);
    TensorT<Real> x;
    if (p.config.mode == FeatureMode::All) {
        x = reshape(te, {b, t * de});
    } else {
        x = reshape(narrow(te, 1, 0, 1), {b, de});  // cls row
    }
    if (x.dim(1) != p.w1.dim(0))
        throw ShapeError("hash_forward: feature dim " + std::to_string(x.dim(1)) +
                         " vs head weights " + shape_str(p.w1.shape()));
    x = dropout(x, p.config.dropout_p, ctx.training, {ctx.seed, dropout_site::hash_head}, ctx.step);
    auto h = relu(add(matmul(x, p.w1), p.b1));
    return add(matmul(h, p.w2), p.b2);
}

template <typename Real>
TensorT<Real> hash_forward(const TensorT<Real>& te, const HashHeadParams<Real>& p,
                           const ForwardCtx& ctx = {}) {
    auto h = hash_forward_batch(reshape(te, {1, te.dim(0), te.dim(1)}), p, ctx);
    return reshape(h, {h.dim(1)});
}

// Sign binarization, packed LSB-first into 64-bit words: bit i set iff
// H_f[i] > 0. An exact zero lands on the 0 side so ties are deterministic.
template <typename Real>
std::vector<std::uint64_t> binarize(const Real* h, std::size_t bits) {
    std::vector<std::uint64_t> words((bits + 63) / 64, 0);
    for (std::size_t i = 0; i < bits; ++i) {
        if (!std::isfinite(static_cast<double>(h[i])))
            throw NumericError("binarize: non-finite hash feature at bit " + std::to_string(i));
        if (h[i] > Real(0)) words[i / 64] |= (std::uint64_t{1} << (i % 64));
    }
    return words;
}

template <typename Real>
std::vector<std::uint64_t> binarize(const std::vector<Real>& h) {
    return binarize(h.data(), h.size());
}

}  // namespace vith
