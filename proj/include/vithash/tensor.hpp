#pragma once

// Dense row-major tensor with reverse-mode autodiff. The scalar type is a
// template parameter: float everywhere in production, double in the
// gradient-check tests. Matrix products run through Eigen; everything else
// is plain loops.

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vithash/errors.hpp"
#include "vithash/rng.hpp"

namespace vith {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::atomic<std::uint64_t>& tensor_id_counter() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

template <typename Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // pushes this->grad into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
};

template <typename Real>
class TensorT {
public:
    using Node = TensorNode<Real>;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return make(std::move(shape), {}, requires_grad);
    }
    static TensorT full(Shape shape, Real v) {
        TensorT t = make(std::move(shape), {}, false);
        std::fill(t.node_->value.begin(), t.node_->value.end(), v);
        return t;
    }
    static TensorT from(Shape shape, std::vector<Real> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        return make(std::move(shape), std::move(data), requires_grad);
    }
    static TensorT scalar(Real v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }

    std::vector<Real>& data() { return node_->value; }
    const std::vector<Real>& data() const { return node_->value; }
    std::vector<Real>& grad() { return node_->grad; }
    const std::vector<Real>& grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }
    TensorT& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }
    void zero_grad() {
        if (node_) node_->grad.assign(node_->value.size(), Real(0));
    }

    Real item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    std::uint64_t id() const { return node_->id; }
    std::shared_ptr<Node> node() const { return node_; }

    static TensorT wrap(std::shared_ptr<Node> n) {
        TensorT t;
        t.node_ = std::move(n);
        return t;
    }

    static std::shared_ptr<Node> make_node(Shape shape) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(shape_numel(n->shape), Real(0));
        n->id = tensor_id_counter().fetch_add(1, std::memory_order_relaxed) + 1;
        return n;
    }

private:
    static TensorT make(Shape shape, std::vector<Real> data, bool requires_grad) {
        auto n = make_node(std::move(shape));
        if (!data.empty()) n->value = std::move(data);
        n->requires_grad = requires_grad;
        return wrap(std::move(n));
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Real>
using EigenMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<EigenMat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const EigenMat<Real>>;

inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        std::size_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides, with stride 0 on dims that broadcast against out_shape.
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out_shape) {
    std::vector<std::size_t> strides(out_shape.size(), 0);
    std::size_t s = 1;
    std::size_t off = out_shape.size() - shape.size();
    for (std::size_t i = shape.size(); i-- > 0;) {
        strides[off + i] = (shape[i] == 1 && out_shape[off + i] != 1) ? 0 : s;
        s *= shape[i];
    }
    return strides;
}

// Calls f(out_flat, a_flat, b_flat) for every element of out_shape.
template <typename F>
void broadcast_walk(const Shape& out_shape, const Shape& a, const Shape& b, F&& f) {
    const std::size_t n = shape_numel(out_shape);
    if (a == out_shape && b == out_shape) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    auto sa = broadcast_strides(a, out_shape);
    auto sb = broadcast_strides(b, out_shape);
    const std::size_t rank = out_shape.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            idx[d]++;
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out_shape[d]) break;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename Real>
bool any_requires(const std::vector<TensorT<Real>>& ins) {
    for (const auto& t : ins)
        if (t.requires_grad()) return true;
    return false;
}

// Builds the output node for an op: wires parents and the backprop lambda
// only when some input needs gradients.
template <typename Real, typename Backprop>
TensorT<Real> attach(std::shared_ptr<TensorNode<Real>> out,
                     std::vector<TensorT<Real>> parents, Backprop&& bp) {
    bool need = grad_mode() && any_requires(parents);
    out->requires_grad = need;
    if (need) {
        for (auto& p : parents) out->parents.push_back(p.node());
        out->backprop = std::forward<Backprop>(bp);
    }
    return TensorT<Real>::wrap(std::move(out));
}

}  // namespace detail

// Scoped autograd off-switch for pure inference passes.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------------------
// elementwise binary ops (numpy-style broadcasting)

template <typename Real, typename Fwd, typename Bwd>
TensorT<Real> binary_op(const TensorT<Real>& a, const TensorT<Real>& b, const char* name,
                        Fwd fwd, Bwd bwd) {
    Shape out_shape = detail::broadcast_shapes(a.shape(), b.shape(), name);
    auto out = TensorT<Real>::make_node(out_shape);
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out->value;
    detail::broadcast_walk(out_shape, a.shape(), b.shape(),
                           [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = fwd(av[i], bv[j]); });
    auto an = a.node();
    auto bn = b.node();
    Shape ash = a.shape(), bsh = b.shape(), osh = out_shape;
    return detail::attach<Real>(out, {a, b}, [an, bn, ash, bsh, osh, bwd](TensorNode<Real>& n) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        detail::broadcast_walk(osh, ash, bsh, [&](std::size_t o, std::size_t i, std::size_t j) {
            Real ga, gb;
            bwd(n.grad[o], an->value[i], bn->value[j], ga, gb);
            if (an->requires_grad) an->grad[i] += ga;
            if (bn->requires_grad) bn->grad[j] += gb;
        });
    });
}

template <typename Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
    return binary_op<Real>(a, b, "add",
                           [](Real x, Real y) { return x + y; },
                           [](Real g, Real, Real, Real& ga, Real& gb) { ga = g; gb = g; });
}

template <typename Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
    return binary_op<Real>(a, b, "sub",
                           [](Real x, Real y) { return x - y; },
                           [](Real g, Real, Real, Real& ga, Real& gb) { ga = g; gb = -g; });
}

template <typename Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
    return binary_op<Real>(a, b, "mul",
                           [](Real x, Real y) { return x * y; },
                           [](Real g, Real x, Real y, Real& ga, Real& gb) { ga = g * y; gb = g * x; });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

template <typename Real, typename Fwd, typename Bwd>
TensorT<Real> unary_op(const TensorT<Real>& a, Fwd fwd, Bwd bwd) {
    auto out = TensorT<Real>::make_node(a.shape());
    const auto& av = a.data();
    for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i]);
    auto an = a.node();
    return detail::attach<Real>(out, {a}, [an, bwd](TensorNode<Real>& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            an->grad[i] += bwd(n.grad[i], an->value[i], n.value[i]);
    });
}

template <typename Real>
TensorT<Real> add_scalar(const TensorT<Real>& a, Real s) {
    return unary_op<Real>(a, [s](Real x) { return x + s; },
                          [](Real g, Real, Real) { return g; });
}

template <typename Real>
TensorT<Real> mul_scalar(const TensorT<Real>& a, Real s) {
    return unary_op<Real>(a, [s](Real x) { return x * s; },
                          [s](Real g, Real, Real) { return g * s; });
}

template <typename Real>
TensorT<Real> neg(const TensorT<Real>& a) { return mul_scalar(a, Real(-1)); }

template <typename Real>
TensorT<Real> relu(const TensorT<Real>& a) {
    return unary_op<Real>(a, [](Real x) { return x > Real(0) ? x : Real(0); },
                          [](Real g, Real x, Real) { return x > Real(0) ? g : Real(0); });
}

template <typename Real>
TensorT<Real> tanh_op(const TensorT<Real>& a) {
    return unary_op<Real>(a, [](Real x) { return std::tanh(x); },
                          [](Real g, Real, Real y) { return g * (Real(1) - y * y); });
}

template <typename Real>
TensorT<Real> abs_op(const TensorT<Real>& a) {
    return unary_op<Real>(a, [](Real x) { return std::fabs(x); },
                          [](Real g, Real x, Real) {
                              return x > Real(0) ? g : (x < Real(0) ? -g : Real(0));
                          });
}

template <typename Real>
TensorT<Real> exp_op(const TensorT<Real>& a) {
    return unary_op<Real>(a, [](Real x) { return std::exp(x); },
                          [](Real g, Real, Real y) { return g * y; });
}

template <typename Real>
TensorT<Real> log_op(const TensorT<Real>& a) {
    return unary_op<Real>(a, [](Real x) { return std::log(x); },
                          [](Real g, Real x, Real) { return g / x; });
}

// log(1 + e^x), evaluated without overflow
template <typename Real>
TensorT<Real> softplus(const TensorT<Real>& a) {
    return unary_op<Real>(a,
                          [](Real x) {
                              Real m = x > Real(0) ? x : Real(0);
                              return m + std::log1p(std::exp(-std::fabs(x)));
                          },
                          [](Real g, Real x, Real) {
                              return g / (Real(1) + std::exp(-x));
                          });
}

// Gradient passes where the input was left untouched.
template <typename Real>
TensorT<Real> clamp(const TensorT<Real>& a, Real lo, Real hi) {
    return unary_op<Real>(a,
                          [lo, hi](Real x) { return std::min(hi, std::max(lo, x)); },
                          [lo, hi](Real g, Real x, Real) {
                              return (x >= lo && x <= hi) ? g : Real(0);
                          });
}

// GELU, tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))
template <typename Real>
TensorT<Real> gelu(const TensorT<Real>& a) {
    const Real c = Real(0.7978845608028654);  // sqrt(2/pi)
    const Real k = Real(0.044715);
    return unary_op<Real>(a,
                          [c, k](Real x) {
                              Real t = std::tanh(c * (x + k * x * x * x));
                              return Real(0.5) * x * (Real(1) + t);
                          },
                          [c, k](Real g, Real x, Real) {
                              Real t = std::tanh(c * (x + k * x * x * x));
                              Real dt = (Real(1) - t * t) * c * (Real(1) + Real(3) * k * x * x);
                              return g * (Real(0.5) * (Real(1) + t) + Real(0.5) * x * dt);
                          });
}

// sign with straight-through backward: forward is +/-1 (0 maps to -1, the
// same side the zero bit takes in binarize), backward is the identity.
template <typename Real>
TensorT<Real> sign_ste(const TensorT<Real>& a) {
    return unary_op<Real>(a, [](Real x) { return x > Real(0) ? Real(1) : Real(-1); },
                          [](Real g, Real, Real) { return g; });
}

// Constant copy; no gradient flows back through the result.
template <typename Real>
TensorT<Real> detach(const TensorT<Real>& a) {
    return TensorT<Real>::from(a.shape(), a.data());
}

// ---------------------------------------------------------------------------
// shape ops

template <typename Real>
TensorT<Real> reshape(const TensorT<Real>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto out = TensorT<Real>::make_node(std::move(shape));
    out->value = a.data();
    auto an = a.node();
    return detail::attach<Real>(out, {a}, [an](TensorNode<Real>& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    });
}

template <typename Real>
TensorT<Real> broadcast_to(const TensorT<Real>& a, const Shape& shape) {
    Shape check = detail::broadcast_shapes(a.shape(), shape, "broadcast_to");
    if (check != shape)
        throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " does not broadcast to " +
                         shape_str(shape));
    auto out = TensorT<Real>::make_node(shape);
    const auto& av = a.data();
    auto& ov = out->value;
    detail::broadcast_walk(shape, a.shape(), a.shape(),
                           [&](std::size_t o, std::size_t i, std::size_t) { ov[o] = av[i]; });
    auto an = a.node();
    Shape ash = a.shape(), osh = shape;
    return detail::attach<Real>(out, {a}, [an, ash, osh](TensorNode<Real>& n) {
        an->ensure_grad();
        detail::broadcast_walk(osh, ash, ash, [&](std::size_t o, std::size_t i, std::size_t) {
            an->grad[i] += n.grad[o];
        });
    });
}

namespace detail {
inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size() - 1; i-- > 0;) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// flat index mapping for a permutation of axes
inline void permute_copy(const Shape& in_shape, const std::vector<std::size_t>& perm,
                         const auto& src, auto& dst) {
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = in_shape[perm[i]];
    auto in_strides = row_major_strides(in_shape);
    const std::size_t rank = perm.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src_off = 0;
    const std::size_t n = shape_numel(out_shape);
    for (std::size_t o = 0; o < n; ++o) {
        dst[o] += src[src_off];
        for (std::size_t d = rank; d-- > 0;) {
            idx[d]++;
            src_off += in_strides[perm[d]];
            if (idx[d] < out_shape[d]) break;
            src_off -= in_strides[perm[d]] * out_shape[d];
            idx[d] = 0;
        }
    }
}
}  // namespace detail

template <typename Real>
TensorT<Real> transpose(const TensorT<Real>& a, std::vector<std::size_t> perm) {
    if (perm.size() != a.rank()) throw ShapeError("transpose: perm rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) throw ShapeError("transpose: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];
    auto out = TensorT<Real>::make_node(out_shape);
    std::fill(out->value.begin(), out->value.end(), Real(0));
    detail::permute_copy(a.shape(), perm, a.data(), out->value);
    auto an = a.node();
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    Shape osh = out_shape;
    return detail::attach<Real>(out, {a}, [an, inv, osh](TensorNode<Real>& n) {
        an->ensure_grad();
        detail::permute_copy(osh, inv, n.grad, an->grad);
    });
}

// transpose of the last two axes
template <typename Real>
TensorT<Real> transpose_last(const TensorT<Real>& a) {
    std::vector<std::size_t> perm(a.rank());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
    return transpose(a, perm);
}

template <typename Real>
TensorT<Real> concat(const std::vector<TensorT<Real>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && p.shape()[d] != s0[d])
                throw ShapeError("concat: shapes " + shape_str(s0) + " and " +
                                 shape_str(p.shape()) + " differ off-axis");
        out_shape[axis] += p.shape()[axis];
    }
    auto out = TensorT<Real>::make_node(out_shape);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    const std::size_t out_row = out_shape[axis] * inner;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t chunk = p.shape()[axis] * inner;
        for (std::size_t r = 0; r < outer; ++r)
            std::copy_n(p.data().data() + r * chunk, chunk, out->value.data() + r * out_row + off);
        off += chunk;
    }
    std::vector<std::shared_ptr<TensorNode<Real>>> nodes;
    std::vector<std::size_t> chunks;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        chunks.push_back(p.shape()[axis] * inner);
    }
    return detail::attach<Real>(out, parts, [nodes, chunks, outer, out_row](TensorNode<Real>& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            auto& pn = *nodes[k];
            if (pn.requires_grad) {
                pn.ensure_grad();
                for (std::size_t r = 0; r < outer; ++r)
                    for (std::size_t i = 0; i < chunks[k]; ++i)
                        pn.grad[r * chunks[k] + i] += n.grad[r * out_row + off + i];
            }
            off += chunks[k];
        }
    });
}

// Contiguous slice [start, start+len) along one axis.
template <typename Real>
TensorT<Real> narrow(const TensorT<Real>& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.rank() || start + len > a.shape()[axis])
        throw ShapeError("narrow: slice out of range for " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    auto out = TensorT<Real>::make_node(out_shape);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
    const std::size_t in_row = a.shape()[axis] * inner;
    const std::size_t chunk = len * inner;
    for (std::size_t r = 0; r < outer; ++r)
        std::copy_n(a.data().data() + r * in_row + start * inner, chunk,
                    out->value.data() + r * chunk);
    auto an = a.node();
    return detail::attach<Real>(out, {a}, [an, outer, inner, in_row, chunk, start](TensorNode<Real>& n) {
        an->ensure_grad();
        for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t i = 0; i < chunk; ++i)
                an->grad[r * in_row + start * inner + i] += n.grad[r * chunk + i];
    });
}

// ---------------------------------------------------------------------------
// reductions

template <typename Real>
TensorT<Real> sum(const TensorT<Real>& a) {
    auto out = TensorT<Real>::make_node({1});
    Real acc = 0;
    for (Real v : a.data()) acc += v;
    out->value[0] = acc;
    auto an = a.node();
    return detail::attach<Real>(out, {a}, [an](TensorNode<Real>& n) {
        an->ensure_grad();
        for (auto& g : an->grad) g += n.grad[0];
    });
}

template <typename Real>
TensorT<Real> mean(const TensorT<Real>& a) {
    return mul_scalar(sum(a), Real(1) / Real(a.numel()));
}

// Sum along one axis, keeping it as size 1.
template <typename Real>
TensorT<Real> sum_axis(const TensorT<Real>& a, std::size_t axis) {
    if (axis >= a.rank()) throw ShapeError("sum_axis: axis out of range");
    Shape out_shape = a.shape();
    out_shape[axis] = 1;
    auto out = TensorT<Real>::make_node(out_shape);
    std::size_t outer = 1, inner = 1;
    const std::size_t n_axis = a.shape()[axis];
    for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
    for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t k = 0; k < n_axis; ++k)
            for (std::size_t i = 0; i < inner; ++i)
                out->value[r * inner + i] += a.data()[(r * n_axis + k) * inner + i];
    auto an = a.node();
    return detail::attach<Real>(out, {a}, [an, outer, inner, n_axis](TensorNode<Real>& n) {
        an->ensure_grad();
        for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t k = 0; k < n_axis; ++k)
                for (std::size_t i = 0; i < inner; ++i)
                    an->grad[(r * n_axis + k) * inner + i] += n.grad[r * inner + i];
    });
}

// ---------------------------------------------------------------------------
// matmul

namespace detail {

// Multiplies [..,p,q] x [..,q,r] with broadcasting over the batch dims.
// When `b` is a plain matrix the whole thing collapses to one GEMM.
template <typename Real>
struct MatmulPlan {
    std::size_t p, q, r;
    Shape batch;                 // broadcast batch shape
    std::vector<std::size_t> a_stride, b_stride;  // per-batch-dim slice strides
    std::size_t n_batch;
};

template <typename Real>
MatmulPlan<Real> plan_matmul(const Shape& a, const Shape& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ShapeError("matmul: need rank >= 2, got " + shape_str(a) + " and " + shape_str(b));
    MatmulPlan<Real> pl;
    pl.p = a[a.size() - 2];
    pl.q = a[a.size() - 1];
    pl.r = b[b.size() - 1];
    if (b[b.size() - 2] != pl.q)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a) + " x " + shape_str(b));
    Shape ab(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
    pl.batch = broadcast_shapes(ab, bb, "matmul");
    pl.n_batch = shape_numel(pl.batch);
    auto sa = broadcast_strides(ab, pl.batch);
    auto sb = broadcast_strides(bb, pl.batch);
    // scale by slice size: strides step over whole matrices
    for (auto& s : sa) s *= pl.p * pl.q;
    for (auto& s : sb) s *= pl.q * pl.r;
    pl.a_stride = std::move(sa);
    pl.b_stride = std::move(sb);
    return pl;
}

// offsets of each batch slice into a and b
template <typename Real>
void batch_offsets(const MatmulPlan<Real>& pl, std::vector<std::size_t>& offa,
                   std::vector<std::size_t>& offb) {
    offa.assign(pl.n_batch, 0);
    offb.assign(pl.n_batch, 0);
    std::vector<std::size_t> idx(pl.batch.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < pl.n_batch; ++i) {
        offa[i] = ia;
        offb[i] = ib;
        for (std::size_t d = pl.batch.size(); d-- > 0;) {
            idx[d]++;
            ia += pl.a_stride[d];
            ib += pl.b_stride[d];
            if (idx[d] < pl.batch[d]) break;
            ia -= pl.a_stride[d] * pl.batch[d];
            ib -= pl.b_stride[d] * pl.batch[d];
            idx[d] = 0;
        }
    }
}

}  // namespace detail

template <typename Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
    using detail::ConstMatMap;
    using detail::MatMap;
    auto pl = detail::plan_matmul<Real>(a.shape(), b.shape());
    Shape out_shape = pl.batch;
    out_shape.push_back(pl.p);
    out_shape.push_back(pl.r);
    auto out = TensorT<Real>::make_node(out_shape);

    const Real* ad = a.data().data();
    const Real* bd = b.data().data();
    Real* od = out->value.data();
    const auto P = static_cast<Eigen::Index>(pl.p);
    const auto Q = static_cast<Eigen::Index>(pl.q);
    const auto R = static_cast<Eigen::Index>(pl.r);

    bool b_is_matrix = b.rank() == 2;
    if (b_is_matrix) {
        // collapse batch into rows: one GEMM
        const auto M = static_cast<Eigen::Index>(pl.n_batch * pl.p);
        MatMap<Real>(od, M, R).noalias() =
            ConstMatMap<Real>(ad, M, Q) * ConstMatMap<Real>(bd, Q, R);
    } else {
        std::vector<std::size_t> offa, offb;
        detail::batch_offsets(pl, offa, offb);
        for (std::size_t i = 0; i < pl.n_batch; ++i)
            MatMap<Real>(od + i * pl.p * pl.r, P, R).noalias() =
                ConstMatMap<Real>(ad + offa[i], P, Q) * ConstMatMap<Real>(bd + offb[i], Q, R);
    }

    auto an = a.node();
    auto bn = b.node();
    return detail::attach<Real>(out, {a, b}, [an, bn, pl, b_is_matrix](TensorNode<Real>& n) {
        const auto P = static_cast<Eigen::Index>(pl.p);
        const auto Q = static_cast<Eigen::Index>(pl.q);
        const auto R = static_cast<Eigen::Index>(pl.r);
        const Real* gd = n.grad.data();
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (b_is_matrix) {
            const auto M = static_cast<Eigen::Index>(pl.n_batch * pl.p);
            ConstMatMap<Real> G(gd, M, R);
            if (an->requires_grad)
                MatMap<Real>(an->grad.data(), M, Q).noalias() +=
                    G * ConstMatMap<Real>(bn->value.data(), Q, R).transpose();
            if (bn->requires_grad)
                MatMap<Real>(bn->grad.data(), Q, R).noalias() +=
                    ConstMatMap<Real>(an->value.data(), M, Q).transpose() * G;
            return;
        }
        std::vector<std::size_t> offa, offb;
        detail::batch_offsets(pl, offa, offb);
        for (std::size_t i = 0; i < pl.n_batch; ++i) {
            ConstMatMap<Real> G(gd + i * pl.p * pl.r, P, R);
            if (an->requires_grad)
                MatMap<Real>(an->grad.data() + offa[i], P, Q).noalias() +=
                    G * ConstMatMap<Real>(bn->value.data() + offb[i], Q, R).transpose();
            if (bn->requires_grad)
                MatMap<Real>(bn->grad.data() + offb[i], Q, R).noalias() +=
                    ConstMatMap<Real>(an->value.data() + offa[i], P, Q).transpose() * G;
        }
    });
}

// ---------------------------------------------------------------------------
// softmax / layer norm

template <typename Real>
TensorT<Real> softmax(const TensorT<Real>& a, std::size_t axis) {
    if (axis >= a.rank()) throw ShapeError("softmax: axis out of range");
    for (Real v : a.data())
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    auto out = TensorT<Real>::make_node(a.shape());
    std::size_t outer = 1, inner = 1;
    const std::size_t n_axis = a.shape()[axis];
    for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
    const auto& av = a.data();
    auto& ov = out->value;
    for (std::size_t r = 0; r < outer; ++r) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = r * n_axis * inner + i;
            Real mx = av[base];
            for (std::size_t k = 1; k < n_axis; ++k) mx = std::max(mx, av[base + k * inner]);
            Real z = 0;
            for (std::size_t k = 0; k < n_axis; ++k) {
                Real e = std::exp(av[base + k * inner] - mx);
                ov[base + k * inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < n_axis; ++k) ov[base + k * inner] /= z;
        }
    }
    auto an = a.node();
    return detail::attach<Real>(out, {a}, [an, outer, inner, n_axis](TensorNode<Real>& n) {
        an->ensure_grad();
        for (std::size_t r = 0; r < outer; ++r) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = r * n_axis * inner + i;
                Real dot = 0;
                for (std::size_t k = 0; k < n_axis; ++k)
                    dot += n.grad[base + k * inner] * n.value[base + k * inner];
                for (std::size_t k = 0; k < n_axis; ++k) {
                    const std::size_t o = base + k * inner;
                    an->grad[o] += n.value[o] * (n.grad[o] - dot);
                }
            }
        }
    });
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine (gamma, beta).
template <typename Real>
TensorT<Real> layer_norm(const TensorT<Real>& x, const TensorT<Real>& gamma,
                         const TensorT<Real>& beta, Real eps = Real(1e-6)) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm: gamma/beta length " + std::to_string(gamma.numel()) +
                         " vs last axis " + std::to_string(d));
    const std::size_t rows = x.numel() / d;
    auto out = TensorT<Real>::make_node(x.shape());
    std::vector<Real> inv_std(rows), mean_r(rows);
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xv.data() + r * d;
        Real m = 0;
        for (std::size_t i = 0; i < d; ++i) m += row[i];
        m /= Real(d);
        Real var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - m) * (row[i] - m);
        var /= Real(d);
        const Real inv = Real(1) / std::sqrt(var + eps);
        mean_r[r] = m;
        inv_std[r] = inv;
        Real* orow = out->value.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) orow[i] = (row[i] - m) * inv * gv[i] + bv[i];
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return detail::attach<Real>(out, {x, gamma, beta},
                                [xn, gn, bn, rows, d, mean_r, inv_std](TensorNode<Real>& n) {
        if (xn->requires_grad) xn->ensure_grad();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* xrow = xn->value.data() + r * d;
            const Real* grow = n.grad.data() + r * d;
            const Real m = mean_r[r], inv = inv_std[r];
            Real sum_dyg = 0, sum_dyg_xhat = 0;
            for (std::size_t i = 0; i < d; ++i) {
                const Real xhat = (xrow[i] - m) * inv;
                const Real dyg = grow[i] * gn->value[i];
                sum_dyg += dyg;
                sum_dyg_xhat += dyg * xhat;
                if (gn->requires_grad) gn->grad[i] += grow[i] * xhat;
                if (bn->requires_grad) bn->grad[i] += grow[i];
            }
            if (xn->requires_grad) {
                const Real inv_d = Real(1) / Real(d);
                for (std::size_t i = 0; i < d; ++i) {
                    const Real xhat = (xrow[i] - m) * inv;
                    const Real dyg = grow[i] * gn->value[i];
                    xn->grad[r * d + i] +=
                        inv * (dyg - inv_d * sum_dyg - xhat * inv_d * sum_dyg_xhat);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// dropout

// Identifies one dropout site; masks depend only on (seed, site, step, index).
struct DropoutKey {
    std::uint64_t seed = 0;
    std::uint64_t site = 0;
};

template <typename Real>
TensorT<Real> dropout(const TensorT<Real>& x, double p, bool training, DropoutKey key,
                      std::uint64_t step) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    auto out = TensorT<Real>::make_node(x.shape());
    const Real scale = Real(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<Real>>(x.numel());
    const auto& xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const bool keep = u64_to_unit(counter_hash(key.seed, key.site, step, i)) >= p;
        (*mask)[i] = keep ? scale : Real(0);
        out->value[i] = xv[i] * (*mask)[i];
    }
    auto xn = x.node();
    return detail::attach<Real>(out, {x}, [xn, mask](TensorNode<Real>& n) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// classification loss (used by the GreedyHash objective and unit tests)

template <typename Real>
TensorT<Real> cross_entropy_logits(const TensorT<Real>& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy_logits: want [B,C], got " + shape_str(logits.shape()));
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    if (labels.size() != B) throw ContractError("cross_entropy_logits: batch/label count mismatch");
    for (std::size_t b = 0; b < B; ++b)
        if (labels[b] >= C)
            throw ContractError("cross_entropy_logits: label " + std::to_string(labels[b]) +
                                " out of range for " + std::to_string(C) + " classes");
    auto out = TensorT<Real>::make_node({1});
    const auto& lv = logits.data();
    auto probs = std::make_shared<std::vector<Real>>(B * C);
    Real total = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const Real* row = lv.data() + b * C;
        Real mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        Real z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        const Real logz = mx + std::log(z);
        total += logz - row[labels[b]];
        for (std::size_t c = 0; c < C; ++c) (*probs)[b * C + c] = std::exp(row[c] - logz);
    }
    out->value[0] = total / Real(B);
    auto ln = logits.node();
    return detail::attach<Real>(out, {logits}, [ln, probs, labels, B, C](TensorNode<Real>& n) {
        ln->ensure_grad();
        const Real g = n.grad[0] / Real(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                ln->grad[b * C + c] += g * ((*probs)[b * C + c] - (labels[b] == c ? Real(1) : Real(0)));
    });
}

// ---------------------------------------------------------------------------
// backward

template <typename Real>
void backward(const TensorT<Real>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a defined scalar");
    using Node = TensorNode<Real>;
    // gather the reachable subgraph that participates in gradients
    std::vector<Node*> order;
    std::vector<Node*> stack{loss.node().get()};
    std::vector<Node*> seen;
    auto mark = [&seen](Node* n) {
        // linear probe; graphs are small enough that a set is not worth it
        for (Node* s : seen)
            if (s == n) return false;
        seen.push_back(n);
        return true;
    };
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || !mark(n)) continue;
        order.push_back(n);
        for (auto& p : n->parents) stack.push_back(p.get());
    }
    // children are always created after their parents, so descending id is a
    // reverse topological order
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    auto* ln = loss.node().get();
    ln->ensure_grad();
    ln->grad[0] += Real(1);
    for (Node* n : order)
        if (n->backprop) n->backprop(*n);
}

// operator sugar for graph code
template <typename Real>
TensorT<Real> operator+(const TensorT<Real>& a, const TensorT<Real>& b) { return add(a, b); }
template <typename Real>
TensorT<Real> operator-(const TensorT<Real>& a, const TensorT<Real>& b) { return sub(a, b); }
template <typename Real>
TensorT<Real> operator*(const TensorT<Real>& a, const TensorT<Real>& b) { return mul(a, b); }
template <typename Real>
TensorT<Real> operator*(const TensorT<Real>& a, Real s) { return mul_scalar(a, s); }
template <typename Real>
TensorT<Real> operator*(Real s, const TensorT<Real>& a) { return mul_scalar(a, s); }

using Tensor = TensorT<float>;

}  // namespace vith
