#pragma once

// Shared test utilities: random double tensors and a central-difference
// gradient checker that compares every input element's autograd gradient
// against (f(x+h) - f(x-h)) / 2h.

#include <cmath>
#include <functional>
#include <vector>

#include "vithash/rng.hpp"
#include "vithash/tensor.hpp"

namespace vith::testing {

using DTensor = TensorT<double>;

inline DTensor rand_tensor(Shape shape, Prng& rng, double lo = -1.0, double hi = 1.0,
                           bool requires_grad = true) {
    auto t = DTensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = lo + (hi - lo) * rng.next_unit();
    return t;
}

// relative error with a unit floor so near-zero gradients compare absolutely
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

// `make_loss` must rebuild the expression from the current input values.
inline double max_grad_error(std::vector<DTensor> inputs,
                             const std::function<DTensor()>& make_loss, double h = 1e-5) {
    for (auto& t : inputs) t.zero_grad();
    auto loss = make_loss();
    backward(loss);
    std::vector<std::vector<double>> grads;
    for (auto& t : inputs) grads.push_back(t.grad());
    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& data = inputs[ti].data();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double keep = data[j];
            double lp, lm;
            {
                NoGradGuard ng;
                data[j] = keep + h;
                lp = make_loss().item();
                data[j] = keep - h;
                lm = make_loss().item();
            }
            data[j] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            const double g = grads[ti].empty() ? 0.0 : grads[ti][j];
            worst = std::max(worst, rel_err(g, fd));
        }
    }
    return worst;
}

}  // namespace vith::testing
