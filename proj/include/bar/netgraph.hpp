#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bar/budget.hpp"
#include "bar/gates.hpp"
#include "bar/graph.hpp"
#include "bar/ops.hpp"
#include "bar/rng.hpp"

namespace bar {

// ===== architecture grammar =====

struct StageSpec {
    int width = 16;
    int num_blocks = 2;
    int stride = 2;
};

/// Residual classifier family: a stem convolution followed by stages of
/// two-convolution residual blocks and a global-average-pool linear head.
/// The first block of a stage whose stride or width differs from its input
/// is a pooling block: its residual path is a strided 1x1 convolution.
struct NetworkSpec {
    int in_channels = 3;
    int in_h = 16;
    int in_w = 16;
    int num_classes = 4;
    int stem_channels = 16;
    int kernel = 3;
    std::vector<StageSpec> stages;

    static NetworkSpec toy_default() {
        NetworkSpec s;
        s.stages = {{16, 2, 2}, {32, 2, 2}, {64, 2, 2}};
        return s;
    }

    void validate() const {
        if (in_channels < 1 || in_h < 1 || in_w < 1)
            throw std::invalid_argument("network spec: input dims must be positive");
        if (num_classes < 2) throw std::invalid_argument("network spec: need at least 2 classes");
        if (stem_channels < 1) throw std::invalid_argument("network spec: stem channels must be >= 1");
        if (kernel < 1 || kernel % 2 == 0)
            throw std::invalid_argument("network spec: kernel must be odd and positive");
        if (stages.empty()) throw std::invalid_argument("network spec: need at least one stage");
        for (const auto& st : stages) {
            if (st.width < 1 || st.num_blocks < 1)
                throw std::invalid_argument("network spec: stage width and block count must be >= 1");
            if (st.stride != 1 && st.stride != 2)
                throw std::invalid_argument("network spec: stage stride must be 1 or 2");
        }
    }
};

// ===== dense (gate-carrying) model =====

/// Batch norm epsilon shared by the dense forward pass and the fold applied
/// at hard-prune time; the two must agree for the rewrite to be exact.
inline constexpr double kModelBnEps = 1e-5;
inline constexpr double kModelBnMomentum = 0.1;

/// One conv -> batchnorm -> relu -> gate unit.
template <class T>
struct ConvUnitT {
    TensorT<T> w;                  // [out, in, k, k]
    TensorT<T> bn_gamma, bn_beta;  // [out]
    std::vector<T> bn_rmean, bn_rvar;
    GateParamsT<T> gate;
    int in_channels = 0, out_channels = 0;
    int kernel = 3, stride = 1, pad = 1;
    int out_h = 0, out_w = 0;
    int layer_id = 0;
};

struct ResBlock {
    int conv1 = -1;
    int conv2 = -1;
    int res = -1;  // >= 0 only for pooling blocks
    int stage = 0;
    bool pooling = false;
};

template <class T>
struct ModelT {
    NetworkSpec spec;
    std::vector<ConvUnitT<T>> convs;  // index 0 is the stem
    std::vector<ResBlock> blocks;
    TensorT<T> fc_w;  // [classes, last_width]
    TensorT<T> fc_b;  // [classes]
};

using Model = ModelT<float>;

template <class T>
ConvUnitT<T> make_conv_unit(int in_c, int out_c, int kernel, int stride, int in_h, int in_w,
                            bool clamp_protect, Rng& rng, int layer_id) {
    ConvUnitT<T> u;
    u.in_channels = in_c;
    u.out_channels = out_c;
    u.kernel = kernel;
    u.stride = stride;
    u.pad = kernel / 2;
    u.out_h = conv_out_dim(in_h, kernel, stride, u.pad, "make_conv_unit");
    u.out_w = conv_out_dim(in_w, kernel, stride, u.pad, "make_conv_unit");
    u.layer_id = layer_id;
    u.w = TensorT<T>({out_c, in_c, kernel, kernel});
    const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * kernel * kernel));
    for (auto& v : u.w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    u.bn_gamma = TensorT<T>::full({out_c}, T(1));
    u.bn_beta = TensorT<T>({out_c});
    u.bn_rmean.assign(static_cast<std::size_t>(out_c), T(0));
    u.bn_rvar.assign(static_cast<std::size_t>(out_c), T(1));
    u.gate = init_gate_params<T>(out_c, rng, clamp_protect);
    return u;
}

/// Builds the dense model with Kaiming-uniform convolution weights, identity
/// batch norms and near-open gates. Deterministic given the Rng state.
template <class T>
ModelT<T> build_network(const NetworkSpec& spec, Rng& rng) {
    spec.validate();
    ModelT<T> m;
    m.spec = spec;
    int cur_c = spec.in_channels, cur_h = spec.in_h, cur_w = spec.in_w;
    m.convs.push_back(make_conv_unit<T>(cur_c, spec.stem_channels, spec.kernel, 1, cur_h, cur_w,
                                        false, rng, 0));
    cur_c = spec.stem_channels;
    cur_h = m.convs.back().out_h;
    cur_w = m.convs.back().out_w;
    for (std::size_t si = 0; si < spec.stages.size(); ++si) {
        const StageSpec& st = spec.stages[si];
        for (int b = 0; b < st.num_blocks; ++b) {
            const bool first = b == 0;
            const bool pooling = first && (st.stride != 1 || st.width != cur_c);
            const int stride = pooling ? st.stride : 1;
            ResBlock blk;
            blk.stage = static_cast<int>(si);
            blk.pooling = pooling;
            const int id1 = static_cast<int>(m.convs.size());
            m.convs.push_back(make_conv_unit<T>(cur_c, st.width, spec.kernel, stride, cur_h, cur_w,
                                                false, rng, id1));
            blk.conv1 = id1;
            const int oh = m.convs.back().out_h, ow = m.convs.back().out_w;
            const int id2 = static_cast<int>(m.convs.size());
            m.convs.push_back(make_conv_unit<T>(st.width, st.width, spec.kernel, 1, oh, ow, false,
                                                rng, id2));
            blk.conv2 = id2;
            if (pooling) {
                const int idr = static_cast<int>(m.convs.size());
                m.convs.push_back(make_conv_unit<T>(cur_c, st.width, 1, stride, cur_h, cur_w, true,
                                                    rng, idr));
                blk.res = idr;
            }
            m.blocks.push_back(blk);
            cur_c = st.width;
            cur_h = oh;
            cur_w = ow;
        }
    }
    m.fc_w = TensorT<T>({spec.num_classes, cur_c});
    const double bound = std::sqrt(6.0 / static_cast<double>(cur_c));
    for (auto& v : m.fc_w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    m.fc_b = TensorT<T>({spec.num_classes});
    return m;
}

/// Activation volume of the unpruned network (conv outputs only).
template <class T>
long long full_volume(const ModelT<T>& m) {
    long long v = 0;
    for (const auto& u : m.convs)
        v += static_cast<long long>(u.out_channels) * u.out_h * u.out_w;
    return v;
}

/// Multiply-accumulate count of the unpruned network's convolutions.
template <class T>
long long full_flops(const ModelT<T>& m) {
    long long f = 0;
    for (const auto& u : m.convs)
        f += static_cast<long long>(u.out_channels) * u.in_channels * u.kernel * u.kernel *
             u.out_h * u.out_w;
    return f;
}

// ===== budget wiring =====

/// Input-side producer gates for every convolution. The carried residual
/// signal of a stage is the channel-aligned union of the gates that wrote to
/// it (residual conv plus each block's delta), so a consumer of that signal
/// lists them all.
template <class T>
std::vector<std::vector<int>> conv_in_sources(const ModelT<T>& m) {
    std::vector<std::vector<int>> src(m.convs.size());
    src[0] = {};  // stem reads the image
    std::vector<int> carried = {0};
    for (const auto& blk : m.blocks) {
        if (blk.pooling) {
            src[static_cast<std::size_t>(blk.res)] = carried;
            src[static_cast<std::size_t>(blk.conv1)] = carried;
            src[static_cast<std::size_t>(blk.conv2)] = {blk.conv1};
            carried = {blk.res, blk.conv2};
        } else {
            src[static_cast<std::size_t>(blk.conv1)] = carried;
            src[static_cast<std::size_t>(blk.conv2)] = {blk.conv1};
            carried.push_back(blk.conv2);
        }
    }
    return src;
}

template <class T>
LayerCost layer_cost_of(const ConvUnitT<T>& u) {
    LayerCost c;
    c.layer_id = u.layer_id;
    c.area = u.out_h * u.out_w;
    c.out_channels = u.out_channels;
    c.in_channels = u.in_channels;
    c.kernel = u.kernel;
    c.stride = u.stride;
    return c;
}

template <class T>
std::vector<GateCostT<T>> gate_costs(const ModelT<T>& m) {
    const auto src = conv_in_sources(m);
    std::vector<GateCostT<T>> out(m.convs.size());
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        out[i].gate = &m.convs[i].gate;
        out[i].cost = layer_cost_of(m.convs[i]);
        out[i].in_sources = src[i];
    }
    return out;
}

// ===== graph binding and soft forward =====

enum class GateMode { bypass, stochastic, frozen_det };

/// Leaves created for one training step; pairs each parameter tensor with its
/// node so gradients can be read back after backward().
template <class T>
struct BoundModel {
    std::vector<VarT<T>> conv_w, bn_gamma, bn_beta;
    VarT<T> fc_w, fc_b;
    std::vector<VarT<T>> gate_log_alpha;  // bound only when gates are trainable
    bool gates_bound = false;
};

template <class T>
BoundModel<T> bind_model(GraphT<T>& g, const ModelT<T>& m, bool train_weights, bool train_gates) {
    BoundModel<T> bm;
    for (const auto& u : m.convs) {
        bm.conv_w.push_back(make_leaf(g, u.w, train_weights));
        bm.bn_gamma.push_back(make_leaf(g, u.bn_gamma, train_weights));
        bm.bn_beta.push_back(make_leaf(g, u.bn_beta, train_weights));
    }
    bm.fc_w = make_leaf(g, m.fc_w, train_weights);
    bm.fc_b = make_leaf(g, m.fc_b, train_weights);
    if (train_gates) {
        bm.gates_bound = true;
        for (const auto& u : m.convs) {
            TensorT<T> la({u.out_channels});
            la.data.assign(u.gate.log_alpha.begin(), u.gate.log_alpha.end());
            bm.gate_log_alpha.push_back(make_leaf(g, std::move(la), true));
        }
    }
    return bm;
}

template <class T>
struct SoftForward {
    VarT<T> logits;
    std::vector<VarT<T>> gate_values;  // z per conv; empty in bypass mode
};

/// Dense forward pass. Gate handling per mode:
///  - bypass: no gates (teacher network),
///  - stochastic: one hard concrete sample per conv drawn from `rng`,
///    differentiable w.r.t. the bound log_alpha leaves,
///  - frozen_det: deterministic gate values entered as constants.
template <class T>
SoftForward<T> forward_soft(ModelT<T>& m, GraphT<T>& g, BoundModel<T>& bm, VarT<T> input,
                            GateMode mode, bool training_bn, Rng* rng = nullptr) {
    if (mode == GateMode::stochastic && (!rng || !bm.gates_bound))
        throw std::invalid_argument("forward_soft: stochastic gates need an rng and bound gates");
    SoftForward<T> out;
    auto unit = [&](int ci, VarT<T> x) {
        ConvUnitT<T>& u = m.convs[static_cast<std::size_t>(ci)];
        VarT<T> y = conv2d(x, bm.conv_w[static_cast<std::size_t>(ci)], u.stride, u.pad);
        y = batchnorm2d(y, bm.bn_gamma[static_cast<std::size_t>(ci)],
                        bm.bn_beta[static_cast<std::size_t>(ci)], &u.bn_rmean, &u.bn_rvar,
                        training_bn, static_cast<T>(kModelBnMomentum),
                        static_cast<T>(kModelBnEps));
        y = relu(y);
        if (mode == GateMode::bypass) return y;
        VarT<T> z;
        if (mode == GateMode::stochastic) {
            const auto eps = draw_eps_logits<T>(u.out_channels, *rng);
            z = hc_gate_op(bm.gate_log_alpha[static_cast<std::size_t>(ci)], eps, u.gate.hc);
        } else {
            const auto det = deterministic_gates(u.gate);
            TensorT<T> zt({u.out_channels});
            zt.data.assign(det.z.begin(), det.z.end());
            z = make_leaf(g, std::move(zt), false);
        }
        if (static_cast<int>(out.gate_values.size()) <= ci)
            out.gate_values.resize(m.convs.size());
        out.gate_values[static_cast<std::size_t>(ci)] = z;
        return apply_gates(y, z);
    };

    VarT<T> x = unit(0, input);
    for (const auto& blk : m.blocks) {
        VarT<T> delta = unit(blk.conv2, unit(blk.conv1, x));
        x = blk.pooling ? add(unit(blk.res, x), delta) : add(x, delta);
    }
    VarT<T> pooled = global_avg_pool(x);
    out.logits = linear(pooled, bm.fc_w, bm.fc_b);
    return out;
}

// ===== pruned (deploy) graph =====

/// Convolution with batch norm and gate folded in: y = relu(W x + b). Weight
/// rows cover only alive output channels, columns only the producer's alive
/// channels. A conv with no input channels degenerates to its bias.
struct PrunedConv {
    Tensor w;  // [n_out, n_in, k, k]
    std::vector<float> bias;
    std::vector<std::uint32_t> in_channels;   // producer's canonical indices
    std::vector<std::uint32_t> out_channels;  // this conv's canonical indices
    int full_out_width = 0;
    int kernel = 1, stride = 1, pad = 0;
    int out_h = 0, out_w = 0;

    [[nodiscard]] int n_out() const { return static_cast<int>(out_channels.size()); }
    [[nodiscard]] int n_in() const { return static_cast<int>(in_channels.size()); }
    [[nodiscard]] int area() const { return out_h * out_w; }
};

/// Residual block after pruning. Identity blocks whose delta is empty are
/// dropped from the graph entirely. `out_set` is the canonical alive channel
/// set of the block output; the *_pos maps scatter into its compact order.
struct PrunedBlock {
    bool pooling = false;
    int stage = 0;
    bool has_delta = false;
    PrunedConv conv1, conv2;
    PrunedConv res;
    int n_res = 0;  // full width of this block's output signal
    std::vector<std::uint32_t> out_set;
    std::vector<int> carry_pos;  // identity: target slot of each carried channel
    std::vector<int> res_pos;    // pooling: target slot of each residual channel
    std::vector<int> delta_pos;  // target slot of each delta channel
};

struct PrunedGraph {
    NetworkSpec spec;
    PrunedConv stem;
    std::vector<PrunedBlock> blocks;
    Tensor fc_w;  // [classes, |final|]
    std::vector<float> fc_b;
    std::vector<std::uint32_t> final_channels;
    long long full_volume_ = 0;
    long long full_flops_ = 0;
};

struct CostReport {
    long long volume = 0;
    long long flops = 0;
    long long regular_volume = 0;  // what a width-matched residual chain would compute
    long long regular_flops = 0;
    long long full_volume = 0;
    long long full_flops = 0;
    double volume_factor = 0;  // full / pruned
    double flop_factor = 0;
};

/// Position of each member of sorted `subset` inside sorted `superset`;
/// throws if the containment does not hold.
std::vector<int> scatter_positions(const std::vector<std::uint32_t>& subset,
                                   const std::vector<std::uint32_t>& superset);

/// Sets every gate of a block to dead when the block's delta (second conv)
/// has no alive channels: the block is dropped whole, and the gate state is
/// kept in sync with the structural decision. Returns true if anything died.
bool propagate_block_death(Model& m);

/// Rewrites the dense model into the compact deploy graph. Applies
/// propagate_block_death first so the gate state matches the structure.
PrunedGraph hard_prune(Model& m);

/// Inference over the pruned graph (eval semantics, no autodiff).
Tensor forward_pruned(const PrunedGraph& g, const Tensor& input);

CostReport cost_report(const PrunedGraph& g);

}  // namespace bar
