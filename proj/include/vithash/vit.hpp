#pragma once

// Patch-embedding transformer encoder: patchify -> linear projection with
// class token and position embeddings -> L pre-norm attention/MLP blocks ->
// final layer norm.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vithash/tensor.hpp"

namespace vith {

struct ViTConfig {
    std::size_t image_size = 224;
    std::size_t patch_size = 32;
    std::size_t channels = 3;
    std::size_t hidden = 768;    // de
    std::size_t mlp_dim = 3072;
    std::size_t layers = 12;
    std::size_t heads = 12;
    double dropout_p = 0.1;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t n_patches() const { return grid() * grid(); }      // N
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }  // d = c*k^2
    std::size_t tokens() const { return n_patches() + 1; }
    std::size_t head_size() const { return hidden / heads; }       // A_S

    void validate() const {
        if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
            throw ConfigError("vit config: image size " + std::to_string(image_size) +
                              " not divisible by patch size " + std::to_string(patch_size));
        if (heads == 0 || hidden % heads != 0)
            throw ConfigError("vit config: hidden " + std::to_string(hidden) +
                              " not divisible by heads " + std::to_string(heads));
        if (layers == 0 || channels == 0 || mlp_dim == 0)
            throw ConfigError("vit config: zero-sized dimension");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ConfigError("vit config: dropout_p out of [0,1)");
    }

    // patch size 32 -> N = 49 tokens-1; patch size 16 -> N = 196
    static ViTConfig vts32() { return ViTConfig{}; }
    static ViTConfig vts16() {
        ViTConfig c;
        c.patch_size = 16;
        return c;
    }
    // desk-scale configuration used by tests and the synthetic pipeline
    static ViTConfig tiny() {
        ViTConfig c;
        c.image_size = 32;
        c.patch_size = 8;
        c.hidden = 64;
        c.mlp_dim = 128;
        c.layers = 2;
        c.heads = 4;
        return c;
    }
};

// Per-step forward context. `seed`/`step` feed the dropout mask streams so a
// rerun with the same tuple reproduces the masks exactly.
struct ForwardCtx {
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

namespace dropout_site {
// stable per-site stream ids for counter-based dropout
constexpr std::uint64_t embed = 0;
constexpr std::uint64_t block_mlp_base = 100;  // + block index
constexpr std::uint64_t hash_head = 1000;
}  // namespace dropout_site

template <typename Real>
struct BlockParams {
    TensorT<Real> ln1_gamma, ln1_beta;
    TensorT<Real> w_q, b_q, w_k, b_k, w_v, b_v;
    TensorT<Real> w_a, b_a;
    TensorT<Real> ln2_gamma, ln2_beta;
    TensorT<Real> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <typename Real>
struct ViTParams {
    ViTConfig config;
    TensorT<Real> w_pe;  // [d, de]
    TensorT<Real> ct;    // [1, de], zero at init
    TensorT<Real> poe;   // [N+1, de], zero at init
    std::vector<BlockParams<Real>> blocks;
    TensorT<Real> final_gamma, final_beta;

    static ViTParams fresh(const ViTConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Prng rng(seed);
        const Real sigma = Real(0.02);
        auto tn = [&rng, sigma](Shape shape) {
            auto t = TensorT<Real>::zeros(std::move(shape), true);
            for (auto& v : t.data()) v = Real(rng.next_trunc_normal(sigma));
            return t;
        };
        auto zeros = [](Shape shape) { return TensorT<Real>::zeros(std::move(shape), true); };
        auto ones = [](Shape shape) {
            auto t = TensorT<Real>::zeros(std::move(shape), true);
            std::fill(t.data().begin(), t.data().end(), Real(1));
            return t;
        };
        ViTParams p;
        p.config = cfg;
        const std::size_t de = cfg.hidden;
        p.w_pe = tn({cfg.patch_dim(), de});
        p.ct = zeros({1, de});
        p.poe = zeros({cfg.tokens(), de});
        for (std::size_t j = 0; j < cfg.layers; ++j) {
            BlockParams<Real> b;
            b.ln1_gamma = ones({de});
            b.ln1_beta = zeros({de});
            b.w_q = tn({de, de});
            b.b_q = zeros({de});
            b.w_k = tn({de, de});
            b.b_k = zeros({de});
            b.w_v = tn({de, de});
            b.b_v = zeros({de});
            b.w_a = tn({de, de});
            b.b_a = zeros({de});
            b.ln2_gamma = ones({de});
            b.ln2_beta = zeros({de});
            b.mlp_w1 = tn({de, cfg.mlp_dim});
            b.mlp_b1 = zeros({cfg.mlp_dim});
            b.mlp_w2 = tn({cfg.mlp_dim, de});
            b.mlp_b2 = zeros({de});
            p.blocks.push_back(std::move(b));
        }
        p.final_gamma = ones({de});
        p.final_beta = zeros({de});
        return p;
    }

    std::vector<std::pair<std::string, TensorT<Real>>> named() const {
        std::vector<std::pair<std::string, TensorT<Real>>> out;
        out.emplace_back("embed.w_pe", w_pe);
        out.emplace_back("embed.ct", ct);
        out.emplace_back("embed.poe", poe);
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            const std::string pre = "block" + std::to_string(j) + ".";
            const auto& b = blocks[j];
            out.emplace_back(pre + "ln1.gamma", b.ln1_gamma);
            out.emplace_back(pre + "ln1.beta", b.ln1_beta);
            out.emplace_back(pre + "attn.w_q", b.w_q);
            out.emplace_back(pre + "attn.b_q", b.b_q);
            out.emplace_back(pre + "attn.w_k", b.w_k);
            out.emplace_back(pre + "attn.b_k", b.b_k);
            out.emplace_back(pre + "attn.w_v", b.w_v);
            out.emplace_back(pre + "attn.b_v", b.b_v);
            out.emplace_back(pre + "attn.w_a", b.w_a);
            out.emplace_back(pre + "attn.b_a", b.b_a);
            out.emplace_back(pre + "ln2.gamma", b.ln2_gamma);
            out.emplace_back(pre + "ln2.beta", b.ln2_beta);
            out.emplace_back(pre + "mlp.w1", b.mlp_w1);
            out.emplace_back(pre + "mlp.b1", b.mlp_b1);
            out.emplace_back(pre + "mlp.w2", b.mlp_w2);
            out.emplace_back(pre + "mlp.b2", b.mlp_b2);
        }
        out.emplace_back("final_ln.gamma", final_gamma);
        out.emplace_back("final_ln.beta", final_beta);
        return out;
    }

    void set_requires_grad(bool b) {
        for (auto& [name, t] : named()) t.set_requires_grad(b);
    }
};

// Splits an image into non-overlapping k x k patches, row-major over the
// patch grid, each patch flattened row-major over (row, col, channel).
template <typename Real>
TensorT<Real> patchify(const std::vector<Real>& image, std::size_t m, std::size_t k, std::size_t c) {
    if (k == 0 || m == 0 || m % k != 0)
        throw ShapeError("patchify: image size " + std::to_string(m) +
                         " not divisible by patch size " + std::to_string(k));
    if (image.size() != m * m * c)
        throw ShapeError("patchify: image has " + std::to_string(image.size()) +
                         " values, expected " + std::to_string(m * m * c));
    const std::size_t g = m / k;
    const std::size_t d = c * k * k;
    auto out = TensorT<Real>::zeros({g * g, d});
    auto& ov = out.data();
    std::size_t w = 0;
    for (std::size_t py = 0; py < g; ++py)
        for (std::size_t px = 0; px < g; ++px)
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t col = 0; col < k; ++col)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        ov[w++] = image[((py * k + r) * m + (px * k + col)) * c + ch];
    return out;
}

// [B,N,d] -> [B,N+1,de]: project patches, prepend the class token, add
// position embeddings, dropout.
template <typename Real>
TensorT<Real> embed_batch(const TensorT<Real>& v, const ViTParams<Real>& p, const ForwardCtx& ctx) {
    const auto& cfg = p.config;
    if (v.rank() != 3 || v.dim(1) != cfg.n_patches() || v.dim(2) != cfg.patch_dim())
        throw ShapeError("embed: patches " + shape_str(v.shape()) + " do not match config [B," +
                         std::to_string(cfg.n_patches()) + "," + std::to_string(cfg.patch_dim()) + "]");
    const std::size_t b = v.dim(0);
    auto pe = matmul(v, p.w_pe);  // [B,N,de]
    auto ct_rows = broadcast_to(reshape(p.ct, {1, 1, cfg.hidden}), {b, 1, cfg.hidden});
    auto ee = concat<Real>({ct_rows, pe}, 1);  // class token at index 0
    auto fe = add(ee, reshape(p.poe, {1, cfg.tokens(), cfg.hidden}));
    return dropout(fe, cfg.dropout_p, ctx.training, {ctx.seed, dropout_site::embed}, ctx.step);
}

template <typename Real>
TensorT<Real> embed(const TensorT<Real>& v, const ViTParams<Real>& p, const ForwardCtx& ctx = {}) {
    auto fe = embed_batch(reshape(v, {1, v.dim(0), v.dim(1)}), p, ctx);
    return reshape(fe, {fe.dim(1), fe.dim(2)});
}

// Multi-head self-attention on layer-normed input l: [B,T,de] -> [B,T,de].
template <typename Real>
TensorT<Real> attention_batch(const TensorT<Real>& l, const BlockParams<Real>& bp,
                              const ViTConfig& cfg) {
    const std::size_t b = l.dim(0), t = l.dim(1);
    const std::size_t heads = cfg.heads, hs = cfg.head_size();
    auto split_heads = [&](const TensorT<Real>& x) {
        // [B,T,de] -> [B,heads,T,hs]
        return transpose(reshape(x, {b, t, heads, hs}), {0, 2, 1, 3});
    };
    auto q = split_heads(add(matmul(l, bp.w_q), bp.b_q));
    auto k = split_heads(add(matmul(l, bp.w_k), bp.b_k));
    auto v = split_heads(add(matmul(l, bp.w_v), bp.b_v));
    auto scores = mul_scalar(matmul(q, transpose_last(k)), Real(1) / std::sqrt(Real(hs)));
    auto weights = softmax(scores, 3);           // rows sum to 1
    auto fa = matmul(weights, v);                // [B,heads,T,hs]
    auto merged = reshape(transpose(fa, {0, 2, 1, 3}), {b, t, cfg.hidden});
    return add(matmul(merged, bp.w_a), bp.b_a);
}

template <typename Real>
TensorT<Real> attention(const TensorT<Real>& l, const BlockParams<Real>& bp, const ViTConfig& cfg) {
    auto out = attention_batch(reshape(l, {1, l.dim(0), l.dim(1)}), bp, cfg);
    return reshape(out, {out.dim(1), out.dim(2)});
}

// Attention probabilities only: [T,de] -> [1,heads,T,T]. Each row is a
// softmax distribution over key positions; useful for inspection and tests.
template <typename Real>
TensorT<Real> attention_probs(const TensorT<Real>& l_in, const BlockParams<Real>& bp,
                              const ViTConfig& cfg) {
    auto l = l_in.rank() == 2 ? reshape(l_in, {1, l_in.dim(0), l_in.dim(1)}) : l_in;
    const std::size_t b = l.dim(0), t = l.dim(1);
    const std::size_t heads = cfg.heads, hs = cfg.head_size();
    auto split_heads = [&](const TensorT<Real>& x) {
        return transpose(reshape(x, {b, t, heads, hs}), {0, 2, 1, 3});
    };
    auto q = split_heads(add(matmul(l, bp.w_q), bp.b_q));
    auto k = split_heads(add(matmul(l, bp.w_k), bp.b_k));
    auto scores = mul_scalar(matmul(q, transpose_last(k)), Real(1) / std::sqrt(Real(hs)));
    return softmax(scores, 3);
}

// One pre-norm transformer block with both residual connections.
template <typename Real>
TensorT<Real> block_forward_batch(const TensorT<Real>& h, const BlockParams<Real>& bp,
                                  const ViTConfig& cfg, const ForwardCtx& ctx,
                                  std::size_t block_index) {
    auto f_s = attention_batch(layer_norm(h, bp.ln1_gamma, bp.ln1_beta), bp, cfg);
    auto f_r = add(h, f_s);
    auto l_r = layer_norm(f_r, bp.ln2_gamma, bp.ln2_beta);
    auto hid = gelu(add(matmul(l_r, bp.mlp_w1), bp.mlp_b1));
    hid = dropout(hid, cfg.dropout_p, ctx.training,
                  {ctx.seed, dropout_site::block_mlp_base + block_index}, ctx.step);
    auto f_mlp = add(matmul(hid, bp.mlp_w2), bp.mlp_b2);
    return add(f_r, f_mlp);
}

template <typename Real>
TensorT<Real> block_forward(const TensorT<Real>& h, const BlockParams<Real>& bp,
                            const ViTConfig& cfg, const ForwardCtx& ctx = {},
                            std::size_t block_index = 0) {
    auto out = block_forward_batch(reshape(h, {1, h.dim(0), h.dim(1)}), bp, cfg, ctx, block_index);
    return reshape(out, {out.dim(1), out.dim(2)});
}

template <typename Real>
struct EncoderOutput {
    TensorT<Real> te;                        // [.., N+1, de]
    std::vector<TensorT<Real>> hidden;       // per-block states when requested
};

template <typename Real>
EncoderOutput<Real> encode_patches_batch(const TensorT<Real>& v, const ViTParams<Real>& p,
                                         const ForwardCtx& ctx = {}, bool keep_hidden = false) {
    EncoderOutput<Real> out;
    auto h = embed_batch(v, p, ctx);
    if (keep_hidden) out.hidden.push_back(h);
    for (std::size_t j = 0; j < p.blocks.size(); ++j) {
        h = block_forward_batch(h, p.blocks[j], p.config, ctx, j);
        if (keep_hidden) out.hidden.push_back(h);
    }
    out.te = layer_norm(h, p.final_gamma, p.final_beta);
    return out;
}

// Whole-image entry point: image -> TE [N+1, de].
template <typename Real>
EncoderOutput<Real> encode(const std::vector<Real>& image, const ViTParams<Real>& p,
                           const ForwardCtx& ctx = {}, bool keep_hidden = false) {
    const auto& cfg = p.config;
    auto v = patchify(image, cfg.image_size, cfg.patch_size, cfg.channels);
    auto out = encode_patches_batch(reshape(v, {1, v.dim(0), v.dim(1)}), p, ctx, keep_hidden);
    out.te = reshape(out.te, {out.te.dim(1), out.te.dim(2)});
    return out;
}

}  // namespace vith
