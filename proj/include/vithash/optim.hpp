#pragma once

// Adam with bias correction. Updates run in tensor-name order and the whole
// step aborts before touching anything if any gradient is non-finite.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vithash/tensor.hpp"

namespace vith {

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("adam: lr must be > 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adam: betas must lie in [0,1)");
        if (!(eps > 0)) throw ConfigError("adam: eps must be > 0");
    }
};

template <typename Real>
struct AdamMoments {
    std::vector<Real> m, v;
};

template <typename Real>
class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }
    std::uint64_t steps() const { return t_; }

    std::map<std::string, AdamMoments<Real>>& moments() { return moments_; }
    const std::map<std::string, AdamMoments<Real>>& moments() const { return moments_; }
    void set_steps(std::uint64_t t) { t_ = t; }

    // params: (name, tensor) pairs; a tensor with no accumulated gradient
    // counts as zero gradient
    void step(std::vector<std::pair<std::string, TensorT<Real>>> params) {
        std::sort(params.begin(), params.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [name, t] : params) {
            const auto& g = t.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!std::isfinite(double(g[i])))
                    throw NumericError("adam: non-finite gradient in '" + name + "' at index " +
                                       std::to_string(i));
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (auto& [name, t] : params) {
            auto& mom = moments_[name];
            auto& value = t.data();
            if (mom.m.empty()) {
                mom.m.assign(value.size(), Real(0));
                mom.v.assign(value.size(), Real(0));
            } else if (mom.m.size() != value.size()) {
                throw ContractError("adam: moment size mismatch for '" + name + "'");
            }
            const auto& g = t.grad();
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double gi = g.empty() ? 0.0 : double(g[i]);
                const double m = cfg_.beta1 * double(mom.m[i]) + (1.0 - cfg_.beta1) * gi;
                const double v = cfg_.beta2 * double(mom.v[i]) + (1.0 - cfg_.beta2) * gi * gi;
                mom.m[i] = Real(m);
                mom.v[i] = Real(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                value[i] = Real(double(value[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

  private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, AdamMoments<Real>> moments_;
};

}  // namespace vith
