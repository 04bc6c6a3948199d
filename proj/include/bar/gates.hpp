#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bar/graph.hpp"
#include "bar/ops.hpp"
#include "bar/rng.hpp"

namespace bar {

/// Hard concrete distribution constants. The defaults stretch a binary
/// concrete on (0,1) to (gamma, zeta) and clamp back to [0,1], which puts
/// finite probability mass on exactly 0 and exactly 1.
template <class T>
struct HCConfigT {
    T beta = T(2.0 / 3.0);
    T gamma = T(-0.1);
    T zeta = T(1.1);

    void validate() const {
        if (!(beta > T(0)) || !(gamma < T(0)) || !(zeta > T(1)))
            throw std::invalid_argument("hard concrete config requires beta > 0, gamma < 0, zeta > 1");
    }
};

/// Learnable per-channel gate parameters for one convolution output.
template <class T>
struct GateParamsT {
    std::vector<T> log_alpha;
    HCConfigT<T> hc;
    /// Protected gates (residual 1x1 convolutions) always keep at least one
    /// alive channel so hard pruning can never sever the network.
    bool clamp_protect = false;

    [[nodiscard]] int channels() const { return static_cast<int>(log_alpha.size()); }
};

template <class T>
struct GateSampleT {
    std::vector<T> z;
    bool stochastic = false;
};

using HCConfig = HCConfigT<float>;
using GateParams = GateParamsT<float>;
using GateSample = GateSampleT<float>;

/// log alpha below this value makes the deterministic gate exactly zero:
/// sigmoid(log_alpha / beta) * (zeta - gamma) + gamma <= 0.
template <class T>
T gate_death_threshold(const HCConfigT<T>& hc) {
    const T s = -hc.gamma / (hc.zeta - hc.gamma);
    return hc.beta * std::log(s / (T(1) - s));
}

template <class T>
GateParamsT<T> init_gate_params(int channels, Rng& rng, bool clamp_protect = false,
                                HCConfigT<T> hc = {}) {
    if (channels < 1)
        throw std::invalid_argument("init_gate_params: channels must be >= 1, got " +
                                    std::to_string(channels));
    hc.validate();
    GateParamsT<T> p;
    p.hc = hc;
    p.clamp_protect = clamp_protect;
    p.log_alpha.resize(static_cast<std::size_t>(channels));
    for (auto& v : p.log_alpha) v = static_cast<T>(rng.uniform(0.0, 0.01));
    return p;
}

template <class T>
T hc_stretch_clamp(T s, const HCConfigT<T>& hc) {
    const T stretched = s * (hc.zeta - hc.gamma) + hc.gamma;
    if (stretched <= T(0)) return T(0);
    if (stretched >= T(1)) return T(1);
    return stretched;
}

/// One stochastic gate vector: z = clamp01(sigmoid((logit(eps) + log_alpha)/beta)
/// stretched to (gamma, zeta)), eps ~ U(delta, 1-delta).
template <class T>
GateSampleT<T> sample_gates(const GateParamsT<T>& phi, Rng& rng) {
    constexpr double delta = 1e-7;
    GateSampleT<T> out;
    out.stochastic = true;
    out.z.resize(phi.log_alpha.size());
    for (std::size_t i = 0; i < phi.log_alpha.size(); ++i) {
        const double eps = delta + (1.0 - 2.0 * delta) * rng.uniform01();
        const T u = static_cast<T>(std::log(eps) - std::log(1.0 - eps));
        const T s = stable_sigmoid((u + phi.log_alpha[i]) / phi.hc.beta);
        out.z[i] = hc_stretch_clamp(s, phi.hc);
    }
    return out;
}

/// Noise-free gate values (eps fixed at its median 1/2, i.e. logit(eps) = 0).
template <class T>
GateSampleT<T> deterministic_gates(const GateParamsT<T>& phi) {
    GateSampleT<T> out;
    out.stochastic = false;
    out.z.resize(phi.log_alpha.size());
    for (std::size_t i = 0; i < phi.log_alpha.size(); ++i) {
        const T s = stable_sigmoid(phi.log_alpha[i] / phi.hc.beta);
        out.z[i] = hc_stretch_clamp(s, phi.hc);
    }
    return out;
}

/// Channels that survive hard pruning. A clamp-protected gate whose channels
/// are all dead revives the one with the largest log_alpha (lowest index on
/// ties) so at least one path through the layer remains.
template <class T>
std::vector<std::uint8_t> alive_mask(const GateParamsT<T>& phi) {
    const GateSampleT<T> det = deterministic_gates(phi);
    std::vector<std::uint8_t> alive(det.z.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < det.z.size(); ++i) {
        alive[i] = det.z[i] > T(0) ? 1 : 0;
        any = any || alive[i];
    }
    if (!any && phi.clamp_protect && !phi.log_alpha.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < phi.log_alpha.size(); ++i)
            if (phi.log_alpha[i] > phi.log_alpha[best]) best = i;
        alive[best] = 1;
    }
    return alive;
}

template <class T>
int alive_count(const GateParamsT<T>& phi) {
    int n = 0;
    for (auto a : alive_mask(phi)) n += a;
    return n;
}

/// Expected number of non-zero gates: sum_i sigmoid(log_alpha_i - beta*log(-gamma/zeta)).
template <class T>
T hc_sparsity_loss(const GateParamsT<T>& phi) {
    const T c0 = phi.hc.beta * std::log(-phi.hc.gamma / phi.hc.zeta);
    T acc = T(0);
    for (T la : phi.log_alpha) acc += stable_sigmoid(la - c0);
    return acc;
}

// ===== graph ops =====

/// Per-channel probability that a gate is non-zero, as a differentiable node.
template <class T>
VarT<T> hc_alive_prob_op(VarT<T> log_alpha, const HCConfigT<T>& hc) {
    GraphT<T>& g = *log_alpha.graph;
    const TensorT<T>& la = g.value(log_alpha.id);
    require_rank(la, 1, "hc_alive_prob_op", "log_alpha");
    const T c0 = hc.beta * std::log(-hc.gamma / hc.zeta);
    TensorT<T> out(la.shape);
    for (std::size_t i = 0; i < la.data.size(); ++i)
        out.data[i] = stable_sigmoid(la.data[i] - c0);
    int id = g.add(std::move(out), {log_alpha.id}, g.requires_grad(log_alpha.id),
                   [lid = log_alpha.id](GraphT<T>& gr, int self) {
                       if (!gr.requires_grad(lid)) return;
                       const TensorT<T>& dy = gr.grad_buffer(self);
                       const TensorT<T>& p = gr.value(self);
                       TensorT<T>& dl = gr.grad_buffer(lid);
                       for (std::size_t i = 0; i < dl.data.size(); ++i)
                           dl.data[i] += dy.data[i] * p.data[i] * (T(1) - p.data[i]);
                   });
    return {&g, id};
}

/// Differentiable expected-gates-alive scalar for one gate vector.
template <class T>
VarT<T> hc_sparsity_op(VarT<T> log_alpha, const HCConfigT<T>& hc) {
    return sum(hc_alive_prob_op(log_alpha, hc));
}

/// Gate sample as a graph op. `eps_logit` holds logit(eps) for each channel,
/// drawn outside the graph (all zeros gives the deterministic gates). The
/// clamp contributes zero gradient outside the open interval (0,1).
template <class T>
VarT<T> hc_gate_op(VarT<T> log_alpha, const std::vector<T>& eps_logit, const HCConfigT<T>& hc) {
    GraphT<T>& g = *log_alpha.graph;
    const TensorT<T>& la = g.value(log_alpha.id);
    require_rank(la, 1, "hc_gate_op", "log_alpha");
    if (eps_logit.size() != la.data.size())
        throw std::invalid_argument("hc_gate_op: " + std::to_string(eps_logit.size()) +
                                    " noise values for " + std::to_string(la.data.size()) +
                                    " channels");
    auto sig = std::make_shared<std::vector<T>>(la.data.size());
    TensorT<T> out(la.shape);
    for (std::size_t i = 0; i < la.data.size(); ++i) {
        const T s = stable_sigmoid((eps_logit[i] + la.data[i]) / hc.beta);
        (*sig)[i] = s;
        out.data[i] = hc_stretch_clamp(s, hc);
    }
    int id = g.add(std::move(out), {log_alpha.id}, g.requires_grad(log_alpha.id),
                   [lid = log_alpha.id, sig, hc](GraphT<T>& gr, int self) {
                       if (!gr.requires_grad(lid)) return;
                       const TensorT<T>& dy = gr.grad_buffer(self);
                       const TensorT<T>& z = gr.value(self);
                       TensorT<T>& dl = gr.grad_buffer(lid);
                       const T span = hc.zeta - hc.gamma;
                       for (std::size_t i = 0; i < dl.data.size(); ++i) {
                           if (z.data[i] <= T(0) || z.data[i] >= T(1)) continue;
                           const T s = (*sig)[i];
                           dl.data[i] += dy.data[i] * s * (T(1) - s) * span / hc.beta;
                       }
                   });
    return {&g, id};
}

/// Draws logit(eps) values for a stochastic gate pass.
template <class T>
std::vector<T> draw_eps_logits(int channels, Rng& rng) {
    constexpr double delta = 1e-7;
    std::vector<T> out(static_cast<std::size_t>(channels));
    for (auto& v : out) {
        const double eps = delta + (1.0 - 2.0 * delta) * rng.uniform01();
        v = static_cast<T>(std::log(eps) - std::log(1.0 - eps));
    }
    return out;
}

}  // namespace bar
