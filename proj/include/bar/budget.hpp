#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bar/gates.hpp"
#include "bar/graph.hpp"
#include "bar/ops.hpp"

namespace bar {

/// Barrier value used in place of the pole once V reaches the upper edge;
/// keeps a violated step finite instead of propagating inf/NaN.
inline constexpr double kBarrierCap = 1e30;

enum class BudgetMetric { volume, flop };
enum class ScheduleKind { linear, exponential, sigmoid };

/// Static cost facts about one gated convolution.
struct LayerCost {
    int layer_id = 0;
    int area = 0;          // output spatial extent (out_h * out_w)
    int out_channels = 0;  // full width
    int in_channels = 0;   // full input width
    int kernel = 1;
    int stride = 1;
};

/// Budget window state. `lower_a` and `upper_b` bracket the soft barrier;
/// `upper_b` slides from the full cost down to the budget as training
/// progresses while `lower_a` stays fixed slightly below the budget.
struct BudgetState {
    double v_full = 0;
    double budget = 0;
    double lower_a = 0;
    double upper_b = 0;
    double progress = 0;
    BudgetMetric metric = BudgetMetric::volume;
    ScheduleKind schedule = ScheduleKind::sigmoid;
    double sigmoid_d = 10.0;
};

/// Soft log-barrier: zero below a, a C1 ramp on (a,b) with a pole at b,
/// capped at kBarrierCap from b on. Throws if a >= b.
double barrier(double v, double a, double b);

/// Budget interpolation schedule T: [0,1] -> [0,1] with T(0)=0 and T(1)=1.
/// Inputs outside [0,1] are clamped with a warning on stderr.
double transition(double progress, ScheduleKind kind, double sigmoid_d = 10.0);

BudgetState make_budget_state(double v_full, double budget, BudgetMetric metric,
                              ScheduleKind schedule, double sigmoid_d = 10.0);

/// Slides the upper barrier edge: b = (1 - T(i)) * v_full + T(i) * budget.
BudgetState update_budget(const BudgetState& state, double progress);

// ===== cost metrics over gate vectors =====

/// One gated convolution plus the wiring needed for input-side cost metrics.
/// `in_sources` lists the gates whose (channel-aligned) union feeds this
/// convolution; an empty list means the input is an ungated source with
/// `cost.in_channels` always-alive channels (e.g. the image).
template <class T>
struct GateCostT {
    const GateParamsT<T>* gate = nullptr;
    LayerCost cost;
    std::vector<int> in_sources;  // indices into the same GateCost list
};

using GateCost = GateCostT<float>;

template <class T>
std::vector<std::uint8_t> union_alive(const std::vector<GateCostT<T>>& layers,
                                      const std::vector<int>& sources) {
    if (sources.empty()) return {};
    std::vector<std::uint8_t> acc = alive_mask(*layers[static_cast<std::size_t>(sources[0])].gate);
    for (std::size_t s = 1; s < sources.size(); ++s) {
        const auto m = alive_mask(*layers[static_cast<std::size_t>(sources[s])].gate);
        if (m.size() != acc.size())
            throw std::invalid_argument("union_alive: source gate widths differ");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] | m[i];
    }
    return acc;
}

/// Post-pruning activation volume: sum over layers of alive channels times
/// output area.
template <class T>
long long hard_volume(const std::vector<GateCostT<T>>& layers) {
    long long v = 0;
    for (const auto& l : layers) {
        int alive = 0;
        for (auto a : alive_mask(*l.gate)) alive += a;
        v += static_cast<long long>(alive) * l.cost.area;
    }
    return v;
}

/// Post-pruning multiply-accumulate count across the gated convolutions.
template <class T>
long long hard_flops(const std::vector<GateCostT<T>>& layers) {
    long long f = 0;
    for (const auto& l : layers) {
        int alive_out = 0;
        for (auto a : alive_mask(*l.gate)) alive_out += a;
        long long alive_in = l.cost.in_channels;
        if (!l.in_sources.empty()) {
            alive_in = 0;
            for (auto a : union_alive(layers, l.in_sources)) alive_in += a;
        }
        f += static_cast<long long>(alive_out) * alive_in * l.cost.kernel * l.cost.kernel *
             l.cost.area;
    }
    return f;
}

// ===== differentiable expected costs =====

/// Gate vector bound into a graph, plus the same wiring as GateCostT.
template <class T>
struct GateNodeT {
    VarT<T> log_alpha;
    HCConfigT<T> hc;
    LayerCost cost;
    std::vector<int> in_sources;
};

using GateNode = GateNodeT<float>;

/// Expected alive-channel count of the union of several channel-aligned gate
/// vectors, assuming independence: sum_c 1 - prod_s (1 - p_sc).
template <class T>
VarT<T> union_alive_expectation(std::vector<VarT<T>> probs) {
    if (probs.empty()) throw std::invalid_argument("union_alive_expectation: no sources");
    if (probs.size() == 1) return sum(probs[0]);
    GraphT<T>& g = *probs[0].graph;
    const int c = g.value(probs[0].id).numel();
    std::vector<int> parents;
    for (const auto& p : probs) {
        if (g.value(p.id).numel() != c)
            throw std::invalid_argument("union_alive_expectation: source widths differ");
        parents.push_back(p.id);
    }
    T acc = T(0);
    bool rg = false;
    for (const auto& p : probs) rg = rg || g.requires_grad(p.id);
    for (int i = 0; i < c; ++i) {
        T prod = T(1);
        for (const auto& p : probs) prod *= (T(1) - g.value(p.id).data[static_cast<std::size_t>(i)]);
        acc += T(1) - prod;
    }
    int id = g.add(TensorT<T>::scalar(acc), parents, rg, [parents, c](GraphT<T>& gr, int self) {
        const T gy = gr.grad_buffer(self).data[0];
        for (std::size_t s = 0; s < parents.size(); ++s) {
            if (!gr.requires_grad(parents[s])) continue;
            TensorT<T>& dp = gr.grad_buffer(parents[s]);
            for (int i = 0; i < c; ++i) {
                T prod = T(1);
                for (std::size_t t = 0; t < parents.size(); ++t) {
                    if (t == s) continue;
                    prod *= (T(1) - gr.value(parents[t]).data[static_cast<std::size_t>(i)]);
                }
                dp.data[static_cast<std::size_t>(i)] += gy * prod;
            }
        }
    });
    return {&g, id};
}

/// Differentiable expected activation volume: sum_l area_l * E[alive_l].
template <class T>
VarT<T> expected_volume_loss(const std::vector<GateNodeT<T>>& layers) {
    if (layers.empty()) throw std::invalid_argument("expected_volume_loss: no layers");
    VarT<T> total;
    for (const auto& l : layers) {
        VarT<T> term = scale(hc_sparsity_op(l.log_alpha, l.hc), static_cast<T>(l.cost.area));
        total = total.graph ? add(total, term) : term;
    }
    return total;
}

/// Differentiable expected MAC count: sum_l k^2 * area_l * E[out_l] * E[in_l],
/// with E[in] the union expectation of the producer gates (or the fixed input
/// width for ungated sources).
template <class T>
VarT<T> expected_flop_loss(const std::vector<GateNodeT<T>>& layers) {
    if (layers.empty()) throw std::invalid_argument("expected_flop_loss: no layers");
    std::vector<VarT<T>> probs;
    probs.reserve(layers.size());
    for (const auto& l : layers) probs.push_back(hc_alive_prob_op(l.log_alpha, l.hc));
    VarT<T> total;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& l = layers[li];
        const T k2a = static_cast<T>(static_cast<double>(l.cost.kernel) * l.cost.kernel * l.cost.area);
        VarT<T> e_out = sum(probs[li]);
        VarT<T> term;
        if (l.in_sources.empty()) {
            term = scale(e_out, k2a * static_cast<T>(l.cost.in_channels));
        } else {
            std::vector<VarT<T>> srcs;
            for (int s : l.in_sources) srcs.push_back(probs[static_cast<std::size_t>(s)]);
            term = scale(mul(e_out, union_alive_expectation(srcs)), k2a);
        }
        total = total.graph ? add(total, term) : term;
    }
    return total;
}

/// Budget-aware sparsity term: expected cost scaled by the barrier factor.
/// The barrier is evaluated on the hard (post-pruning) cost of the current
/// gates and enters as a constant coefficient, so the gradient is
/// factor * d(expected cost)/d(log_alpha).
template <class T>
struct BarLossT {
    VarT<T> loss;
    double hard_value = 0;     // hard cost in the configured metric
    double expected_cost = 0;  // differentiable expected cost, pre-barrier
    double factor = 0;         // barrier value used as the coefficient
    bool violated = false;     // hard cost reached the sliding upper edge
};

template <class T>
BarLossT<T> bar_loss(const std::vector<GateNodeT<T>>& nodes, const std::vector<GateCostT<T>>& costs,
                     const BudgetState& state) {
    if (nodes.size() != costs.size())
        throw std::invalid_argument("bar_loss: node/cost lists differ in length");
    BarLossT<T> out;
    out.hard_value = static_cast<double>(state.metric == BudgetMetric::volume ? hard_volume(costs)
                                                                              : hard_flops(costs));
    out.factor = barrier(out.hard_value, state.lower_a, state.upper_b);
    out.violated = out.hard_value >= state.upper_b;
    VarT<T> expected = state.metric == BudgetMetric::volume ? expected_volume_loss(nodes)
                                                            : expected_flop_loss(nodes);
    out.expected_cost = static_cast<double>(expected.value().data[0]);
    out.loss = scale(expected, static_cast<T>(out.factor));
    return out;
}

}  // namespace bar
