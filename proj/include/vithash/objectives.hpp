#pragma once

// The six training objectives. Each consumes batch hash features H [B,K]
// plus supervision and returns a scalar loss on the autodiff graph. The
// per-objective constants live in LossConfig so runs can override them.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vithash/labels.hpp"
#include "vithash/tensor.hpp"

namespace vith {

enum class Objective { Dsh, HashNet, GreedyHash, Idhn, Csq, Dpn };

inline const char* to_string(Objective o) {
    switch (o) {
        case Objective::Dsh: return "dsh";
        case Objective::HashNet: return "hashnet";
        case Objective::GreedyHash: return "greedyhash";
        case Objective::Idhn: return "idhn";
        case Objective::Csq: return "csq";
        case Objective::Dpn: return "dpn";
    }
    return "?";
}

inline Objective parse_objective(const std::string& s) {
    if (s == "dsh") return Objective::Dsh;
    if (s == "hashnet") return Objective::HashNet;
    if (s == "greedyhash") return Objective::GreedyHash;
    if (s == "idhn") return Objective::Idhn;
    if (s == "csq") return Objective::Csq;
    if (s == "dpn") return Objective::Dpn;
    throw ConfigError("unknown objective '" + s + "'");
}

struct LossConfig {
    Objective objective = Objective::GreedyHash;
    double dsh_margin_scale = 2.0;    // margin = scale * K
    double dsh_alpha = 0.01;          // quantization weight
    double hashnet_step_size = 200.0; // beta = (1 + step/step_size)^0.5
    double greedy_alpha = 0.1;        // cubic penalty weight
    double idhn_lambda = 0.1;         // quantization weight
    double csq_lambda = 1e-4;         // quantization weight
    double dpn_margin = 1.0;          // polarization hinge margin

    void validate() const {
        for (double v : {dsh_margin_scale, dsh_alpha, hashnet_step_size, greedy_alpha,
                         idhn_lambda, csq_lambda, dpn_margin})
            if (!std::isfinite(v)) throw ConfigError("loss config: non-finite constant");
        if (hashnet_step_size <= 0) throw ConfigError("loss config: hashnet_step_size must be > 0");
    }
};

// Pairwise ground-truth similarity from label sets: hard s_ij = 1 iff the
// sets intersect, soft s_ij = Jaccard overlap (used by IDHN).
struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<std::uint8_t> hard;
    std::vector<double> soft;

    std::uint8_t hard_at(std::size_t i, std::size_t j) const { return hard[i * n + j]; }
    double soft_at(std::size_t i, std::size_t j) const { return soft[i * n + j]; }
};

inline SimilarityMatrix build_similarity(const std::vector<std::vector<std::uint32_t>>& labels) {
    SimilarityMatrix s;
    s.n = labels.size();
    s.hard.assign(s.n * s.n, 0);
    s.soft.assign(s.n * s.n, 0.0);
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = i; j < s.n; ++j) {
            const std::size_t inter = label_intersection_size(labels[i], labels[j]);
            const std::size_t uni = labels[i].size() + labels[j].size() - inter;
            const double soft = uni == 0 ? 0.0 : double(inter) / double(uni);
            const std::uint8_t hard = inter > 0 ? 1 : 0;
            s.hard[i * s.n + j] = s.hard[j * s.n + i] = hard;
            s.soft[i * s.n + j] = s.soft[j * s.n + i] = soft;
        }
    }
    return s;
}

namespace detail {

// strict upper-triangle mask (i<j) as a constant tensor
template <typename Real>
TensorT<Real> upper_mask(std::size_t n) {
    auto m = TensorT<Real>::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m.data()[i * n + j] = Real(1);
    return m;
}

template <typename Real>
TensorT<Real> hard_tensor(const SimilarityMatrix& s) {
    auto t = TensorT<Real>::zeros({s.n, s.n});
    for (std::size_t i = 0; i < s.n * s.n; ++i) t.data()[i] = Real(s.hard[i]);
    return t;
}

template <typename Real>
TensorT<Real> soft_tensor(const SimilarityMatrix& s) {
    auto t = TensorT<Real>::zeros({s.n, s.n});
    for (std::size_t i = 0; i < s.n * s.n; ++i) t.data()[i] = Real(s.soft[i]);
    return t;
}

// squared euclidean distances between all batch rows: D_ij = |H_i - H_j|^2
template <typename Real>
TensorT<Real> pairwise_sq_dist(const TensorT<Real>& h) {
    auto gram = matmul(h, transpose_last(h));          // [B,B]
    auto sq = sum_axis(mul(h, h), 1);                  // [B,1]
    return sub(add(sq, transpose(sq, {1, 0})), mul_scalar(gram, Real(2)));
}

}  // namespace detail

// Contrastive pair loss with an L1 pull toward +/-1:
//   sum_{i<j} [ s*d/2 + (1-s)*max(margin-d,0)/2 ] / numPairs
//   + alpha * sum_i || |H_i|-1 ||_1 / B,   d = squared distance.
template <typename Real>
TensorT<Real> loss_dsh(const TensorT<Real>& h, const SimilarityMatrix& s, const LossConfig& cfg) {
    const std::size_t b = h.dim(0), k = h.dim(1);
    if (b < 2) throw ContractError("loss_dsh: need a batch of at least 2");
    const Real margin = Real(cfg.dsh_margin_scale) * Real(k);
    auto d = detail::pairwise_sq_dist(h);
    auto sim = detail::hard_tensor<Real>(s);
    auto dis = add_scalar(neg(sim), Real(1));
    auto hinge = relu(add_scalar(neg(d), margin));
    auto pair = add(mul(sim, mul_scalar(d, Real(0.5))), mul(dis, mul_scalar(hinge, Real(0.5))));
    const Real num_pairs = Real(b) * Real(b - 1) / Real(2);
    auto pair_term = mul_scalar(sum(mul(detail::upper_mask<Real>(b), pair)), Real(1) / num_pairs);
    auto reg = mul_scalar(sum(abs_op(add_scalar(abs_op(h), Real(-1)))), Real(cfg.dsh_alpha) / Real(b));
    return add(pair_term, reg);
}

// Weighted pairwise cross-entropy on code inner products with the tanh
// continuation u = tanh(beta*H); beta grows with the optimizer step.
template <typename Real>
TensorT<Real> loss_hashnet(const TensorT<Real>& h, const SimilarityMatrix& s, std::uint64_t step,
                           const LossConfig& cfg) {
    const std::size_t b = h.dim(0);
    if (b < 2) throw ContractError("loss_hashnet: need a batch of at least 2");
    const Real beta = Real(std::sqrt(1.0 + double(step) / cfg.hashnet_step_size));
    auto u = tanh_op(mul_scalar(h, beta));
    auto ip = mul_scalar(matmul(u, transpose_last(u)), Real(0.5));
    auto sim = detail::hard_tensor<Real>(s);
    // log(1+e^w) - s*w per pair
    auto term = sub(softplus(ip), mul(sim, ip));
    // class-balance weights over the i<j pairs; uniform when one side is empty
    std::size_t n_sim = 0, n_dis = 0;
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j) (s.hard_at(i, j) ? n_sim : n_dis)++;
    const double total = double(n_sim + n_dis);
    const double w_sim = (n_sim == 0 || n_dis == 0) ? 1.0 : total / double(n_sim);
    const double w_dis = (n_sim == 0 || n_dis == 0) ? 1.0 : total / double(n_dis);
    auto weights = TensorT<Real>::zeros({b, b});
    double weight_sum = 0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) {
            const double w = s.hard_at(i, j) ? w_sim : w_dis;
            weights.data()[i * b + j] = Real(w);
            weight_sum += w;
        }
    }
    return mul_scalar(sum(mul(weights, term)), Real(1.0 / weight_sum));
}

// Classification through the sign with straight-through gradients, plus a
// cubic pull of H toward its binarization.
template <typename Real>
TensorT<Real> loss_greedyhash(const TensorT<Real>& h, const std::vector<std::size_t>& labels,
                              const TensorT<Real>& w_cls, const TensorT<Real>& b_cls,
                              const LossConfig& cfg) {
    const std::size_t b = h.dim(0), k = h.dim(1);
    auto codes = sign_ste(h);
    auto logits = add(matmul(codes, w_cls), b_cls);
    auto ce = cross_entropy_logits(logits, labels);
    auto diff = abs_op(sub(h, detach(codes)));
    auto pen = mul_scalar(sum(mul(mul(diff, diff), diff)), Real(cfg.greedy_alpha) / Real(b * k));
    return add(ce, pen);
}

// Cross-entropy on hard pairs, MSE against the Jaccard similarity on soft
// pairs, both on the normalized inner product (ip/K+1)/2 of u = tanh(H),
// plus a quantization pull of u toward sign(u).
template <typename Real>
TensorT<Real> loss_idhn(const TensorT<Real>& h, const SimilarityMatrix& s, const LossConfig& cfg) {
    const std::size_t b = h.dim(0), k = h.dim(1);
    if (b < 2) throw ContractError("loss_idhn: need a batch of at least 2");
    for (double v : s.soft)
        if (v < 0.0 || v > 1.0)
            throw ContractError("loss_idhn: soft similarity " + std::to_string(v) + " outside [0,1]");
    const Real eps = Real(1e-6);
    auto u = tanh_op(h);
    auto ip = matmul(u, transpose_last(u));
    auto p = mul_scalar(add_scalar(mul_scalar(ip, Real(1) / Real(k)), Real(1)), Real(0.5));
    auto pc = clamp(p, eps, Real(1) - eps);
    auto soft = detail::soft_tensor<Real>(s);
    auto ce = neg(add(mul(soft, log_op(pc)),
                      mul(add_scalar(neg(soft), Real(1)), log_op(add_scalar(neg(pc), Real(1))))));
    auto diff = sub(p, soft);
    auto mse = mul(diff, diff);
    // hard pairs (soft exactly 0 or 1) get cross-entropy, the rest MSE
    auto mask = detail::upper_mask<Real>(b);
    auto hard_mask = TensorT<Real>::zeros({b, b});
    auto soft_mask = TensorT<Real>::zeros({b, b});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) {
            const double v = s.soft_at(i, j);
            (v == 0.0 || v == 1.0 ? hard_mask : soft_mask).data()[i * b + j] = Real(1);
        }
    }
    const Real num_pairs = Real(b) * Real(b - 1) / Real(2);
    auto pair_term = mul_scalar(sum(add(mul(hard_mask, ce), mul(soft_mask, mse))),
                                Real(1) / num_pairs);
    auto qdiff = sub(u, detach(sign_ste(u)));
    auto quant = mul_scalar(sum(mul(qdiff, qdiff)), Real(cfg.idhn_lambda) / Real(b * k));
    return add(pair_term, quant);
}

// ---------------------------------------------------------------------------
// hash centers (CSQ)

// One K-bit target code per class, mutually >= K/2 apart in Hamming
// distance. For power-of-two K these are Sylvester-Hadamard rows (and their
// complements for C > K); otherwise random balanced codes with the distance
// checked at construction.
struct HashCenters {
    std::size_t classes = 0;
    std::size_t bits = 0;
    std::vector<std::uint64_t> words;  // classes * words_per_code, LSB-first

    std::size_t words_per_code() const { return (bits + 63) / 64; }
    const std::uint64_t* code(std::size_t c) const { return words.data() + c * words_per_code(); }
    bool bit(std::size_t c, std::size_t k) const {
        return (code(c)[k / 64] >> (k % 64)) & 1;
    }
};

inline std::size_t center_distance(const HashCenters& hc, std::size_t a, std::size_t b) {
    std::size_t d = 0;
    for (std::size_t w = 0; w < hc.words_per_code(); ++w)
        d += std::popcount(hc.code(a)[w] ^ hc.code(b)[w]);
    return d;
}

inline HashCenters make_hash_centers(std::size_t classes, std::size_t bits, std::uint64_t seed) {
    if (classes == 0 || bits == 0) throw ContractError("make_hash_centers: zero classes or bits");
    if (classes > 2 * bits)
        throw ContractError("make_hash_centers: " + std::to_string(classes) +
                            " classes exceed capacity 2K = " + std::to_string(2 * bits));
    HashCenters hc;
    hc.classes = classes;
    hc.bits = bits;
    const std::size_t wpc = hc.words_per_code();
    hc.words.assign(classes * wpc, 0);
    const bool pow2 = (bits & (bits - 1)) == 0;
    if (pow2) {
        // Sylvester-Hadamard: entry (r, c) = (-1)^popcount(r & c); +1 -> bit 1.
        // Rows beyond K are complements of the first K rows.
        for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t row = c % bits;
            const bool complement = c >= bits;
            for (std::size_t k = 0; k < bits; ++k) {
                bool plus = (std::popcount(row & k) % 2) == 0;
                if (complement) plus = !plus;
                if (plus) hc.words[c * wpc + k / 64] |= (std::uint64_t{1} << (k % 64));
            }
        }
    } else {
        Prng rng(seed ^ 0x68617368u);
        std::vector<std::size_t> perm(bits);
        for (std::size_t c = 0; c < classes; ++c) {
            bool ok = false;
            for (int attempt = 0; attempt < 20000 && !ok; ++attempt) {
                std::fill(hc.words.begin() + c * wpc, hc.words.begin() + (c + 1) * wpc, 0);
                for (std::size_t i = 0; i < bits; ++i) perm[i] = i;
                shuffle(perm, rng);
                for (std::size_t i = 0; i < bits / 2; ++i)
                    hc.words[c * wpc + perm[i] / 64] |= (std::uint64_t{1} << (perm[i] % 64));
                ok = true;
                for (std::size_t prev = 0; prev < c && ok; ++prev)
                    ok = 2 * center_distance(hc, prev, c) >= bits;
            }
            if (!ok)
                throw ContractError("make_hash_centers: failed to place center " +
                                    std::to_string(c) + " with min distance " +
                                    std::to_string((bits + 1) / 2));
        }
    }
    for (std::size_t a = 0; a < classes; ++a)
        for (std::size_t b = a + 1; b < classes; ++b)
            if (2 * center_distance(hc, a, b) < bits)
                throw ContractError("make_hash_centers: centers " + std::to_string(a) + " and " +
                                    std::to_string(b) + " closer than K/2");
    return hc;
}

// Target bits for one item: its class center, or the elementwise majority
// over its label centers with 0.5 ties going to bit 1.
inline std::vector<std::uint8_t> center_target_bits(const HashCenters& hc,
                                                    const std::vector<std::uint32_t>& labels) {
    if (labels.empty()) throw ContractError("center_target_bits: item without labels");
    for (auto l : labels)
        if (l >= hc.classes)
            throw ContractError("center_target_bits: class id " + std::to_string(l) +
                                " >= C = " + std::to_string(hc.classes));
    std::vector<std::uint8_t> bits(hc.bits, 0);
    for (std::size_t k = 0; k < hc.bits; ++k) {
        std::size_t ones = 0;
        for (auto l : labels) ones += hc.bit(l, k) ? 1 : 0;
        bits[k] = (2 * ones >= labels.size()) ? 1 : 0;
    }
    return bits;
}

// Binary cross-entropy of u = tanh(H) mapped to [0,1] against each item's
// class-center bits, plus a small pull of |u| toward 1.
template <typename Real>
TensorT<Real> loss_csq(const TensorT<Real>& h, const std::vector<std::vector<std::uint32_t>>& labels,
                       const HashCenters& centers, const LossConfig& cfg) {
    const std::size_t b = h.dim(0), k = h.dim(1);
    if (labels.size() != b) throw ContractError("loss_csq: batch/label count mismatch");
    if (k != centers.bits) throw ContractError("loss_csq: centers built for different bit count");
    auto target = TensorT<Real>::zeros({b, k});
    for (std::size_t i = 0; i < b; ++i) {
        auto tb = center_target_bits(centers, labels[i]);
        for (std::size_t j = 0; j < k; ++j) target.data()[i * k + j] = Real(tb[j]);
    }
    const Real eps = Real(1e-6);
    auto u = tanh_op(h);
    auto p = clamp(mul_scalar(add_scalar(u, Real(1)), Real(0.5)), eps, Real(1) - eps);
    auto bce = neg(add(mul(target, log_op(p)),
                       mul(add_scalar(neg(target), Real(1)), log_op(add_scalar(neg(p), Real(1))))));
    auto bce_mean = mean(bce);
    auto qd = add_scalar(abs_op(u), Real(-1));
    auto quant = mean(mul(qd, qd));
    return add(bce_mean, mul_scalar(quant, Real(cfg.csq_lambda)));
}

// ---------------------------------------------------------------------------
// polarization targets (DPN)

// Random balanced +/-1 target vector per class; identical rows regenerate.
struct DpnTargets {
    std::size_t classes = 0;
    std::size_t bits = 0;
    std::vector<std::int8_t> signs;  // classes * bits

    std::int8_t at(std::size_t c, std::size_t k) const { return signs[c * bits + k]; }
};

inline DpnTargets make_dpn_targets(std::size_t classes, std::size_t bits, std::uint64_t seed) {
    if (classes == 0 || bits == 0) throw ContractError("make_dpn_targets: zero classes or bits");
    DpnTargets t;
    t.classes = classes;
    t.bits = bits;
    t.signs.assign(classes * bits, -1);
    Prng rng(seed ^ 0x64706eu);
    std::vector<std::size_t> perm(bits);
    for (std::size_t c = 0; c < classes; ++c) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 20000)
                throw ContractError("make_dpn_targets: cannot find distinct target for class " +
                                    std::to_string(c));
            std::fill(t.signs.begin() + c * bits, t.signs.begin() + (c + 1) * bits, -1);
            for (std::size_t i = 0; i < bits; ++i) perm[i] = i;
            shuffle(perm, rng);
            for (std::size_t i = 0; i < bits / 2; ++i) t.signs[c * bits + perm[i]] = 1;
            bool distinct = true;
            for (std::size_t prev = 0; prev < c && distinct; ++prev)
                distinct = !std::equal(t.signs.begin() + prev * bits,
                                       t.signs.begin() + (prev + 1) * bits,
                                       t.signs.begin() + c * bits);
            if (distinct) break;
        }
    }
    return t;
}

// Bit-wise hinge pushing each feature past the margin on its target side:
//   mean over B*K of max(m - t*H, 0).
template <typename Real>
TensorT<Real> loss_dpn(const TensorT<Real>& h, const std::vector<std::vector<std::uint32_t>>& labels,
                       const DpnTargets& targets, const LossConfig& cfg) {
    const std::size_t b = h.dim(0), k = h.dim(1);
    if (labels.size() != b) throw ContractError("loss_dpn: batch/label count mismatch");
    if (k != targets.bits) throw ContractError("loss_dpn: targets built for different bit count");
    auto t = TensorT<Real>::zeros({b, k});
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i].empty()) throw ContractError("loss_dpn: item without labels");
        for (auto l : labels[i])
            if (l >= targets.classes)
                throw ContractError("loss_dpn: class id " + std::to_string(l) + " >= C");
        for (std::size_t j = 0; j < k; ++j) {
            // majority sign over the item's label targets, ties toward +1
            int acc = 0;
            for (auto l : labels[i]) acc += targets.at(l, j);
            t.data()[i * k + j] = acc >= 0 ? Real(1) : Real(-1);
        }
    }
    auto hinge = relu(add_scalar(neg(mul(t, h)), Real(cfg.dpn_margin)));
    return mean(hinge);
}

// ---------------------------------------------------------------------------
// dispatcher

// Per-objective fixed state: CSQ centers, DPN targets, and the GreedyHash
// classifier (the only trainable piece).
template <typename Real>
struct ObjectiveState {
    LossConfig config;
    std::size_t classes = 0;
    std::size_t bits = 0;
    HashCenters centers;        // csq
    DpnTargets targets;         // dpn
    TensorT<Real> w_cls, b_cls; // greedyhash

    static ObjectiveState make(const LossConfig& cfg, std::size_t classes, std::size_t bits,
                               std::uint64_t seed) {
        cfg.validate();
        ObjectiveState st;
        st.config = cfg;
        st.classes = classes;
        st.bits = bits;
        switch (cfg.objective) {
            case Objective::Csq:
                st.centers = make_hash_centers(classes, bits, seed);
                break;
            case Objective::Dpn:
                st.targets = make_dpn_targets(classes, bits, seed);
                break;
            case Objective::GreedyHash: {
                Prng rng(seed ^ 0x636c73u);
                st.w_cls = TensorT<Real>::zeros({bits, classes}, true);
                for (auto& v : st.w_cls.data()) v = Real(rng.next_trunc_normal(0.01));
                st.b_cls = TensorT<Real>::zeros({classes}, true);
                break;
            }
            default:
                break;
        }
        return st;
    }

    // trainable auxiliary tensors (empty for all but greedyhash)
    std::vector<std::pair<std::string, TensorT<Real>>> named() const {
        if (config.objective == Objective::GreedyHash)
            return {{"obj.w_cls", w_cls}, {"obj.b_cls", b_cls}};
        return {};
    }
};

template <typename Real>
TensorT<Real> compute_loss(const ObjectiveState<Real>& st, const TensorT<Real>& h,
                           const std::vector<std::vector<std::uint32_t>>& labels,
                           std::uint64_t step) {
    switch (st.config.objective) {
        case Objective::Dsh:
            return loss_dsh(h, build_similarity(labels), st.config);
        case Objective::HashNet:
            return loss_hashnet(h, build_similarity(labels), step, st.config);
        case Objective::GreedyHash: {
            std::vector<std::size_t> single;
            single.reserve(labels.size());
            for (const auto& l : labels) {
                if (l.empty()) throw ContractError("loss_greedyhash: item without labels");
                single.push_back(l[0]);
            }
            return loss_greedyhash(h, single, st.w_cls, st.b_cls, st.config);
        }
        case Objective::Idhn:
            return loss_idhn(h, build_similarity(labels), st.config);
        case Objective::Csq:
            return loss_csq(h, labels, st.centers, st.config);
        case Objective::Dpn:
            return loss_dpn(h, labels, st.targets, st.config);
    }
    throw ConfigError("compute_loss: unhandled objective");
}

}  // namespace vith
