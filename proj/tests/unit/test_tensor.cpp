#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "vithash/tensor.hpp"

using namespace vith;
using namespace vith::testing;

TEST_CASE("shape bookkeeping") {
    auto t = Tensor::zeros({2, 3, 4});
    CHECK(t.rank() == 3);
    CHECK(t.numel() == 24);
    CHECK(shape_str(t.shape()) == "[2,3,4]");
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("elementwise forward values") {
    auto a = Tensor::from({2, 2}, {1, -2, 3, 0});
    auto b = Tensor::from({2, 2}, {2, 2, 2, 2});
    CHECK(add(a, b).data() == std::vector<float>{3, 0, 5, 2});
    CHECK(sub(a, b).data() == std::vector<float>{-1, -4, 1, -2});
    CHECK(mul(a, b).data() == std::vector<float>{2, -4, 6, 0});
    CHECK(relu(a).data() == std::vector<float>{1, 0, 3, 0});
    CHECK(abs_op(a).data() == std::vector<float>{1, 2, 3, 0});
    CHECK(neg(a).data() == std::vector<float>{-1, 2, -3, 0});
    CHECK(add_scalar(a, 10.0f).data() == std::vector<float>{11, 8, 13, 10});
    CHECK(mul_scalar(a, -1.0f).data() == std::vector<float>{-1, 2, -3, 0});
    CHECK(clamp(a, -1.0f, 2.0f).data() == std::vector<float>{1, -1, 2, 0});
}

TEST_CASE("broadcasting matches numpy rules") {
    auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto row = Tensor::from({3}, {10, 20, 30});
    CHECK(add(a, row).data() == std::vector<float>{11, 22, 33, 14, 25, 36});
    auto col = Tensor::from({2, 1}, {100, 200});
    CHECK(add(a, col).data() == std::vector<float>{101, 102, 103, 204, 205, 206});
    auto x = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
    auto y = Tensor::from({1, 3, 1}, {1, 2, 3});
    auto z = mul(x, y);
    CHECK(z.shape() == Shape{2, 3, 2});
    CHECK(z.data() == std::vector<float>{1, 2, 2, 4, 3, 6, 3, 4, 6, 8, 9, 12});
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("frozen unary values") {
    auto x = Tensor::from({6}, {-2.0f, -0.5f, 0.0f, 0.5f, 1.0f, 2.0f});
    auto g = gelu(x);
    const std::vector<double> want = {-0.0454023059122, -0.154285990175, 0.0,
                                      0.345714009825,  0.841191990608,  1.95459769409};
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(double(g.data()[i]) == doctest::Approx(want[i]).epsilon(1e-6));
    CHECK(double(softplus(Tensor::from({1}, {0})).data()[0]) ==
          doctest::Approx(0.6931471805599453).epsilon(1e-6));
    // overflow-safe softplus
    CHECK(double(softplus(Tensor::from({1}, {100})).data()[0]) == doctest::Approx(100.0));
    CHECK(std::isfinite(softplus(Tensor::from({1}, {-100})).data()[0]));
}

TEST_CASE("matmul hand case and plans") {
    auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
    auto c = matmul(a, b);
    CHECK(c.data() == std::vector<float>{58, 64, 139, 154});

    // batched and broadcast-batched
    auto ab = Tensor::from({2, 2, 2}, {1, 0, 0, 1, 2, 0, 0, 2});
    auto bb = Tensor::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto cb = matmul(ab, bb);
    CHECK(cb.shape() == Shape{2, 2, 2});
    CHECK(cb.data() == std::vector<float>{1, 2, 3, 4, 10, 12, 14, 16});
    auto one = Tensor::from({2, 2}, {0, 1, 1, 0});
    auto cb2 = matmul(ab, one);  // rank-2 rhs against batched lhs
    CHECK(cb2.data() == std::vector<float>{0, 1, 1, 0, 0, 2, 2, 0});
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, -1, 0, 1});
    auto y = softmax(x, 1);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += y.data()[r * 3 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    // shift invariance
    auto y2 = softmax(add_scalar(x, 100.0f), 1);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(y.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-5));
    auto bad = Tensor::from({1, 2}, {1, std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(softmax(bad, 1), NumericError);
}

TEST_CASE("reductions") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum(x).item() == 21);
    CHECK(mean(x).item() == doctest::Approx(3.5));
    auto s0 = sum_axis(x, 0);
    CHECK(s0.shape() == Shape{1, 3});
    CHECK(s0.data() == std::vector<float>{5, 7, 9});
    auto s1 = sum_axis(x, 1);
    CHECK(s1.shape() == Shape{2, 1});
    CHECK(s1.data() == std::vector<float>{6, 15});
}

TEST_CASE("shape ops") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(reshape(x, {3, 2}).data() == x.data());
    CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
    auto t = transpose(x, {1, 0});
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.data() == std::vector<float>{1, 4, 2, 5, 3, 6});
    CHECK(transpose_last(x).data() == t.data());
    auto b = broadcast_to(Tensor::from({1, 3}, {1, 2, 3}), {2, 3});
    CHECK(b.data() == std::vector<float>{1, 2, 3, 1, 2, 3});
    auto c = concat(std::vector<Tensor>{x, x}, 0);
    CHECK(c.shape() == Shape{4, 3});
    auto n = narrow(x, 1, 1, 2);
    CHECK(n.shape() == Shape{2, 2});
    CHECK(n.data() == std::vector<float>{2, 3, 5, 6});
}

TEST_CASE("sign_ste forward ties to -1, backward is identity") {
    auto x = Tensor::from({4}, {-0.5f, 0.0f, 0.7f, -2.0f}, true);
    auto s = sign_ste(x);
    CHECK(s.data() == std::vector<float>{-1, -1, 1, -1});
    auto w = Tensor::from({4}, {1, 2, 3, 4});
    auto loss = sum(mul(s, w));
    backward(loss);
    CHECK(x.grad() == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("detach blocks gradients") {
    auto x = Tensor::from({2}, {1, 2}, true);
    auto loss = sum(mul(detach(x), x));  // d/dx (c * x) = c
    backward(loss);
    CHECK(x.grad() == std::vector<float>{1, 2});
}

TEST_CASE("backward requires scalar and accumulates across reuse") {
    auto x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), ContractError);
    auto loss = sum(add(x, x));
    backward(loss);
    CHECK(x.grad() == std::vector<float>{2, 2});
}

TEST_CASE("dropout determinism and identity cases") {
    auto x = Tensor::from({4, 8}, std::vector<float>(32, 1.0f));
    // eval mode and p=0 return the input tensor itself
    CHECK(dropout(x, 0.5, false, {1, 2}, 3).node() == x.node());
    CHECK(dropout(x, 0.0, true, {1, 2}, 3).node() == x.node());
    auto d1 = dropout(x, 0.5, true, {1, 2}, 3);
    auto d2 = dropout(x, 0.5, true, {1, 2}, 3);
    CHECK(d1.data() == d2.data());  // same seed/site/step -> same mask
    auto d3 = dropout(x, 0.5, true, {1, 2}, 4);
    CHECK(d1.data() != d3.data());  // step changes the mask
    for (float v : d1.data()) CHECK((v == 0.0f || v == 2.0f));  // survivors scaled by 1/(1-p)
    CHECK_THROWS_AS(dropout(x, 1.0, true, {1, 2}, 0), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, true, {1, 2}, 0), ConfigError);
}

TEST_CASE("dropout keep rate is near p") {
    auto x = Tensor::from({100, 100}, std::vector<float>(10000, 1.0f));
    auto d = dropout(x, 0.5, true, {9, 1}, 0);
    std::size_t kept = 0;
    for (float v : d.data()) kept += v != 0.0f;
    CHECK(kept > 4700);
    CHECK(kept < 5300);
}

TEST_CASE("cross entropy hand value") {
    auto logits = Tensor::from({1, 2}, {0, 0});
    auto loss = cross_entropy_logits(logits, {0});
    CHECK(double(loss.item()) == doctest::Approx(0.6931471805599453).epsilon(1e-6));
    auto sure = Tensor::from({1, 2}, {100, 0});
    CHECK(double(cross_entropy_logits(sure, {0}).item()) == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("no-grad guard suppresses graph building") {
    auto x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard ng;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

// ---------------------------------------------------------------------------
// finite-difference checks, 64-bit, 20+ random instances per op

namespace {

struct FdCase {
    const char* name;
    std::function<double(Prng&)> run;  // returns worst relative error
};

double fd_unary(Prng& rng, const std::function<DTensor(const DTensor&)>& op, double lo,
                double hi) {
    auto x = rand_tensor({3, 4}, rng, lo, hi);
    auto w = rand_tensor({3, 4}, rng, -1, 1, false);
    return max_grad_error({x}, [&] { return sum(mul(op(x), w)); });
}

}  // namespace

TEST_CASE("finite differences: elementwise ops") {
    Prng rng(20240817);
    const std::vector<FdCase> cases = {
        {"add", [](Prng& r) {
             auto a = rand_tensor({3, 4}, r), b = rand_tensor({3, 4}, r);
             auto w = rand_tensor({3, 4}, r, -1, 1, false);
             return max_grad_error({a, b}, [&] { return sum(mul(add(a, b), w)); });
         }},
        {"sub broadcast", [](Prng& r) {
             auto a = rand_tensor({3, 4}, r), b = rand_tensor({4}, r);
             auto w = rand_tensor({3, 4}, r, -1, 1, false);
             return max_grad_error({a, b}, [&] { return sum(mul(sub(a, b), w)); });
         }},
        {"mul broadcast", [](Prng& r) {
             auto a = rand_tensor({2, 3, 4}, r), b = rand_tensor({3, 1}, r);
             auto w = rand_tensor({2, 3, 4}, r, -1, 1, false);
             return max_grad_error({a, b}, [&] { return sum(mul(mul(a, b), w)); });
         }},
        {"relu", [](Prng& r) {
             // keep inputs away from the kink
             auto x = rand_tensor({3, 4}, r, 0.2, 1.0);
             auto y = rand_tensor({3, 4}, r, -1.0, -0.2);
             auto w = rand_tensor({3, 4}, r, -1, 1, false);
             return max_grad_error({x, y},
                                   [&] { return sum(mul(add(relu(x), relu(y)), w)); });
         }},
        {"tanh", [](Prng& r) { return fd_unary(r, [](const DTensor& t) { return tanh_op(t); }, -2, 2); }},
        {"abs", [](Prng& r) { return fd_unary(r, [](const DTensor& t) { return abs_op(t); }, 0.2, 1.5); }},
        {"exp", [](Prng& r) { return fd_unary(r, [](const DTensor& t) { return exp_op(t); }, -1, 1); }},
        {"log", [](Prng& r) { return fd_unary(r, [](const DTensor& t) { return log_op(t); }, 0.3, 2.0); }},
        {"softplus", [](Prng& r) { return fd_unary(r, [](const DTensor& t) { return softplus(t); }, -3, 3); }},
        {"gelu", [](Prng& r) { return fd_unary(r, [](const DTensor& t) { return gelu(t); }, -2, 2); }},
        {"clamp interior", [](Prng& r) {
             return fd_unary(r, [](const DTensor& t) { return clamp(t, -10.0, 10.0); }, -2, 2);
         }},
        {"scalar ops", [](Prng& r) {
             return fd_unary(r, [](const DTensor& t) { return add_scalar(mul_scalar(neg(t), 0.7), 0.3); },
                             -2, 2);
         }},
    };
    for (const auto& c : cases) {
        double worst = 0;
        for (int i = 0; i < 20; ++i) worst = std::max(worst, c.run(rng));
        INFO(c.name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("finite differences: matmul, softmax, layer norm, reductions, shape ops") {
    Prng rng(77001);
    const std::vector<FdCase> cases = {
        {"matmul 2d", [](Prng& r) {
             auto a = rand_tensor({3, 4}, r), b = rand_tensor({4, 2}, r);
             auto w = rand_tensor({3, 2}, r, -1, 1, false);
             return max_grad_error({a, b}, [&] { return sum(mul(matmul(a, b), w)); });
         }},
        {"matmul batched", [](Prng& r) {
             auto a = rand_tensor({2, 3, 4}, r), b = rand_tensor({2, 4, 2}, r);
             auto w = rand_tensor({2, 3, 2}, r, -1, 1, false);
             return max_grad_error({a, b}, [&] { return sum(mul(matmul(a, b), w)); });
         }},
        {"matmul collapsed rhs", [](Prng& r) {
             auto a = rand_tensor({2, 3, 4}, r), b = rand_tensor({4, 2}, r);
             auto w = rand_tensor({2, 3, 2}, r, -1, 1, false);
             return max_grad_error({a, b}, [&] { return sum(mul(matmul(a, b), w)); });
         }},
        {"softmax", [](Prng& r) {
             auto x = rand_tensor({3, 5}, r, -2, 2);
             auto w = rand_tensor({3, 5}, r, -1, 1, false);
             return max_grad_error({x}, [&] { return sum(mul(softmax(x, 1), w)); });
         }},
        {"softmax inner axis", [](Prng& r) {
             auto x = rand_tensor({2, 3, 4}, r, -2, 2);
             auto w = rand_tensor({2, 3, 4}, r, -1, 1, false);
             return max_grad_error({x}, [&] { return sum(mul(softmax(x, 1), w)); });
         }},
        {"layer_norm", [](Prng& r) {
             auto x = rand_tensor({3, 6}, r, -2, 2);
             auto g = rand_tensor({6}, r, 0.5, 1.5);
             auto b = rand_tensor({6}, r, -0.5, 0.5);
             auto w = rand_tensor({3, 6}, r, -1, 1, false);
             return max_grad_error({x, g, b},
                                   [&] { return sum(mul(layer_norm(x, g, b), w)); });
         }},
        {"mean+sum_axis", [](Prng& r) {
             auto x = rand_tensor({4, 5}, r);
             return max_grad_error({x}, [&] { return add(mean(x), sum(sum_axis(x, 1))); });
         }},
        {"reshape+transpose+concat+narrow", [](Prng& r) {
             auto x = rand_tensor({2, 6}, r);
             auto w = rand_tensor({4, 3}, r, -1, 1, false);
             return max_grad_error({x}, [&] {
                 auto a = reshape(x, {3, 4});
                 auto t = transpose(a, {1, 0});            // [4,3]
                 auto cat = concat(std::vector<DTensor>{t, t}, 0);             // [8,3]
                 auto cut = narrow(cat, 0, 2, 4);          // [4,3]
                 return sum(mul(cut, w));
             });
         }},
        {"broadcast_to", [](Prng& r) {
             auto x = rand_tensor({1, 4}, r);
             auto w = rand_tensor({3, 4}, r, -1, 1, false);
             return max_grad_error({x}, [&] { return sum(mul(broadcast_to(x, {3, 4}), w)); });
         }},
        {"cross_entropy", [](Prng& r) {
             auto x = rand_tensor({4, 3}, r, -2, 2);
             return max_grad_error({x}, [&] { return cross_entropy_logits(x, {0, 2, 1, 2}); });
         }},
        {"dropout fixed mask", [](Prng& r) {
             auto x = rand_tensor({3, 4}, r);
             auto w = rand_tensor({3, 4}, r, -1, 1, false);
             return max_grad_error(
                 {x}, [&] { return sum(mul(dropout(x, 0.5, true, {11, 7}, 2), w)); });
         }},
    };
    for (const auto& c : cases) {
        double worst = 0;
        for (int i = 0; i < 20; ++i) worst = std::max(worst, c.run(rng));
        INFO(c.name);
        CHECK(worst < 1e-4);
    }
}
