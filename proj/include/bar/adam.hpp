#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "bar/tensor.hpp"

namespace bar {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// L2 penalty folded into the gradient (classic Adam-with-L2, not AdamW).
    double weight_decay = 0.0;
};

/// Per-parameter Adam moments. Kept in double so that a pathological gradient
/// spike (e.g. a capped barrier step) squares without overflowing; the update
/// magnitude stays bounded by lr either way.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
                      const AdamConfig& cfg) {
    check_same_shape(param, grad, "adam_step");
    const std::size_t n = param.data.size();
    if (state.m.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    if (state.m.size() != n)
        throw std::invalid_argument("adam_step: state sized for " + std::to_string(state.m.size()) +
                                    " elements, param has " + std::to_string(n));
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        double g = static_cast<double>(grad.data[i]);
        if (!std::isfinite(g))
            throw std::runtime_error("adam_step: non-finite gradient at element " + std::to_string(i));
        g += cfg.weight_decay * static_cast<double>(param.data[i]);
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param.data[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

}  // namespace bar
