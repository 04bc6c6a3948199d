#include "bar/netgraph.hpp"

#include <algorithm>
#include <cmath>

namespace bar {

namespace {

std::vector<std::uint32_t> mask_to_indices(const std::vector<std::uint8_t>& mask) {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) out.push_back(static_cast<std::uint32_t>(i));
    return out;
}

std::vector<std::uint32_t> sorted_union(const std::vector<std::uint32_t>& a,
                                        const std::vector<std::uint32_t>& b) {
    std::vector<std::uint32_t> out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

/// Folds batch norm (eval affine) and the deterministic gate value into the
/// convolution: relu(z * bn(conv(x))) == relu(w' x + b') for z >= 0.
PrunedConv fold_conv(const ConvUnitT<float>& u, const std::vector<std::uint32_t>& in_idx) {
    PrunedConv pc;
    pc.kernel = u.kernel;
    pc.stride = u.stride;
    pc.pad = u.pad;
    pc.out_h = u.out_h;
    pc.out_w = u.out_w;
    pc.full_out_width = u.out_channels;
    pc.in_channels = in_idx;
    pc.out_channels = mask_to_indices(alive_mask(u.gate));
    const auto det = deterministic_gates(u.gate);
    const int n_out = static_cast<int>(pc.out_channels.size());
    const int n_in = static_cast<int>(in_idx.size());
    pc.w = Tensor({n_out, n_in, u.kernel, u.kernel});
    pc.bias.assign(static_cast<std::size_t>(n_out), 0.0f);
    const int kk = u.kernel * u.kernel;
    for (int oi = 0; oi < n_out; ++oi) {
        const int o = static_cast<int>(pc.out_channels[static_cast<std::size_t>(oi)]);
        const double s = static_cast<double>(u.bn_gamma.data[static_cast<std::size_t>(o)]) /
                         std::sqrt(static_cast<double>(u.bn_rvar[static_cast<std::size_t>(o)]) +
                                   kModelBnEps);
        const double off = static_cast<double>(u.bn_beta.data[static_cast<std::size_t>(o)]) -
                           static_cast<double>(u.bn_rmean[static_cast<std::size_t>(o)]) * s;
        const double z = static_cast<double>(det.z[static_cast<std::size_t>(o)]);
        pc.bias[static_cast<std::size_t>(oi)] = static_cast<float>(z * off);
        for (int ii = 0; ii < n_in; ++ii) {
            const int c = static_cast<int>(in_idx[static_cast<std::size_t>(ii)]);
            const float* src = &u.w.data[(static_cast<std::size_t>(o) * u.in_channels + c) * kk];
            float* dst = &pc.w.data[(static_cast<std::size_t>(oi) * n_in + ii) * kk];
            for (int t = 0; t < kk; ++t) dst[t] = static_cast<float>(z * s) * src[t];
        }
    }
    return pc;
}

/// Plain conv + bias + relu over a compact tensor.
Tensor pruned_unit(const PrunedConv& pc, const Tensor& x) {
    const int n = x.shape[0];
    if (x.shape[1] != pc.n_in())
        throw std::runtime_error("forward_pruned: tensor has " + std::to_string(x.shape[1]) +
                                 " channels, conv expects " + std::to_string(pc.n_in()));
    const int oh = conv_out_dim(x.shape[2], pc.kernel, pc.stride, pc.pad, "forward_pruned");
    const int ow = conv_out_dim(x.shape[3], pc.kernel, pc.stride, pc.pad, "forward_pruned");
    if (oh != pc.out_h || ow != pc.out_w)
        throw std::runtime_error("forward_pruned: spatial dims drifted from the pruned graph");
    Tensor y({n, pc.n_out(), oh, ow});
    if (pc.n_out() == 0) return y;
    const int hw = oh * ow;
    if (pc.n_in() == 0) {
        for (int ni = 0; ni < n; ++ni)
            for (int o = 0; o < pc.n_out(); ++o) {
                const float v = std::max(0.0f, pc.bias[static_cast<std::size_t>(o)]);
                float* q = &y.data[(static_cast<std::size_t>(ni) * pc.n_out() + o) * hw];
                for (int j = 0; j < hw; ++j) q[j] = v;
            }
        return y;
    }
    std::vector<float> col;
    im2col(x, pc.kernel, pc.stride, pc.pad, oh, ow, col);
    const int cols = n * hw;
    const int krows = pc.n_in() * pc.kernel * pc.kernel;
    std::vector<float> y2d(static_cast<std::size_t>(pc.n_out()) * cols);
    gemm_nn(pc.n_out(), cols, krows, pc.w.data.data(), col.data(), y2d.data(), false);
    for (int ni = 0; ni < n; ++ni)
        for (int o = 0; o < pc.n_out(); ++o) {
            const float b = pc.bias[static_cast<std::size_t>(o)];
            const float* src = &y2d[static_cast<std::size_t>(o) * cols + static_cast<std::size_t>(ni) * hw];
            float* q = &y.data[(static_cast<std::size_t>(ni) * pc.n_out() + o) * hw];
            for (int j = 0; j < hw; ++j) q[j] = std::max(0.0f, src[j] + b);
        }
    return y;
}

}  // namespace

std::vector<int> scatter_positions(const std::vector<std::uint32_t>& subset,
                                   const std::vector<std::uint32_t>& superset) {
    std::vector<int> pos(subset.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        while (j < superset.size() && superset[j] < subset[i]) ++j;
        if (j >= superset.size() || superset[j] != subset[i])
            throw std::runtime_error("scatter_positions: channel set not contained in its union");
        pos[i] = static_cast<int>(j);
    }
    return pos;
}

bool propagate_block_death(Model& m) {
    bool killed = false;
    for (const auto& blk : m.blocks) {
        if (alive_count(m.convs[static_cast<std::size_t>(blk.conv2)].gate) != 0) continue;
        ConvUnitT<float>& c1 = m.convs[static_cast<std::size_t>(blk.conv1)];
        ConvUnitT<float>& c2 = m.convs[static_cast<std::size_t>(blk.conv2)];
        killed = killed || alive_count(c1.gate) > 0;
        const float dead = gate_death_threshold(c1.gate.hc) - 5.0f;
        for (auto& la : c1.gate.log_alpha) la = std::min(la, dead);
        for (auto& la : c2.gate.log_alpha) la = std::min(la, dead);
    }
    return killed;
}

PrunedGraph hard_prune(Model& m) {
    propagate_block_death(m);
    PrunedGraph pg;
    pg.spec = m.spec;
    pg.full_volume_ = full_volume(m);
    pg.full_flops_ = full_flops(m);

    std::vector<std::uint32_t> image_idx(static_cast<std::size_t>(m.spec.in_channels));
    for (std::size_t i = 0; i < image_idx.size(); ++i) image_idx[i] = static_cast<std::uint32_t>(i);
    pg.stem = fold_conv(m.convs[0], image_idx);
    std::vector<std::uint32_t> carried = pg.stem.out_channels;

    for (const auto& blk : m.blocks) {
        const ConvUnitT<float>& u2 = m.convs[static_cast<std::size_t>(blk.conv2)];
        const bool has_delta = alive_count(u2.gate) > 0;
        if (!blk.pooling && !has_delta) continue;  // dead identity block: depth shrinks

        PrunedBlock pb;
        pb.pooling = blk.pooling;
        pb.stage = blk.stage;
        pb.has_delta = has_delta;
        pb.n_res = u2.out_channels;
        if (has_delta) {
            pb.conv1 = fold_conv(m.convs[static_cast<std::size_t>(blk.conv1)], carried);
            pb.conv2 = fold_conv(u2, pb.conv1.out_channels);
        }
        if (blk.pooling) {
            pb.res = fold_conv(m.convs[static_cast<std::size_t>(blk.res)], carried);
            pb.out_set = has_delta ? sorted_union(pb.res.out_channels, pb.conv2.out_channels)
                                   : pb.res.out_channels;
            pb.res_pos = scatter_positions(pb.res.out_channels, pb.out_set);
        } else {
            pb.out_set = sorted_union(carried, pb.conv2.out_channels);
            pb.carry_pos = scatter_positions(carried, pb.out_set);
        }
        if (has_delta) pb.delta_pos = scatter_positions(pb.conv2.out_channels, pb.out_set);
        carried = pb.out_set;
        pg.blocks.push_back(std::move(pb));
    }

    if (carried.empty())
        throw std::runtime_error("hard_prune: pruning severed the network head (clamp invariant broken)");

    pg.final_channels = carried;
    const int classes = m.spec.num_classes;
    const int fw = static_cast<int>(carried.size());
    pg.fc_w = Tensor({classes, fw});
    for (int k = 0; k < classes; ++k)
        for (int j = 0; j < fw; ++j)
            pg.fc_w.at2(k, j) =
                m.fc_w.at2(k, static_cast<int>(carried[static_cast<std::size_t>(j)]));
    pg.fc_b.assign(m.fc_b.data.begin(), m.fc_b.data.end());
    return pg;
}

Tensor forward_pruned(const PrunedGraph& g, const Tensor& input) {
    require_rank(input, 4, "forward_pruned", "input");
    if (input.shape[1] != g.spec.in_channels)
        throw std::invalid_argument("forward_pruned: input has " + std::to_string(input.shape[1]) +
                                    " channels, graph expects " +
                                    std::to_string(g.spec.in_channels));
    const int n = input.shape[0];
    Tensor x = pruned_unit(g.stem, input);
    for (const auto& pb : g.blocks) {
        const int width = static_cast<int>(pb.out_set.size());
        Tensor delta;
        if (pb.has_delta) delta = pruned_unit(pb.conv2, pruned_unit(pb.conv1, x));
        Tensor base = pb.pooling ? pruned_unit(pb.res, x) : std::move(x);
        const int hw = (pb.has_delta ? delta.shape[2] * delta.shape[3]
                                     : base.shape[2] * base.shape[3]);
        const int oh = pb.has_delta ? delta.shape[2] : base.shape[2];
        const int ow = pb.has_delta ? delta.shape[3] : base.shape[3];
        Tensor out({n, width, oh, ow});
        const std::vector<int>& base_pos = pb.pooling ? pb.res_pos : pb.carry_pos;
        for (int ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < base_pos.size(); ++ci) {
                const float* src = &base.data[(static_cast<std::size_t>(ni) * base.shape[1] +
                                               static_cast<std::size_t>(ci)) * hw];
                float* dst = &out.data[(static_cast<std::size_t>(ni) * width +
                                        static_cast<std::size_t>(base_pos[ci])) * hw];
                for (int j = 0; j < hw; ++j) dst[j] += src[j];
            }
            if (pb.has_delta)
                for (std::size_t ci = 0; ci < pb.delta_pos.size(); ++ci) {
                    const float* src = &delta.data[(static_cast<std::size_t>(ni) * delta.shape[1] +
                                                    static_cast<std::size_t>(ci)) * hw];
                    float* dst = &out.data[(static_cast<std::size_t>(ni) * width +
                                            static_cast<std::size_t>(pb.delta_pos[ci])) * hw];
                    for (int j = 0; j < hw; ++j) dst[j] += src[j];
                }
        }
        x = std::move(out);
    }
    const int fw = x.shape[1];
    const int hw = x.shape[2] * x.shape[3];
    Tensor feat({n, fw});
    for (int i = 0; i < n * fw; ++i) {
        float acc = 0.0f;
        const float* p = &x.data[static_cast<std::size_t>(i) * hw];
        for (int j = 0; j < hw; ++j) acc += p[j];
        feat.data[static_cast<std::size_t>(i)] = acc / static_cast<float>(hw);
    }
    const int classes = g.spec.num_classes;
    Tensor logits({n, classes});
    gemm_nt(n, classes, fw, feat.data.data(), g.fc_w.data.data(), logits.data.data(), false);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < classes; ++k)
            logits.at2(i, k) += g.fc_b[static_cast<std::size_t>(k)];
    return logits;
}

CostReport cost_report(const PrunedGraph& g) {
    CostReport r;
    r.full_volume = g.full_volume_;
    r.full_flops = g.full_flops_;

    // --- mixed-connectivity costs: exactly what forward_pruned computes ---
    auto add_mixed = [&r](const PrunedConv& pc) {
        r.volume += static_cast<long long>(pc.n_out()) * pc.area();
        r.flops += static_cast<long long>(pc.n_out()) * pc.n_in() * pc.kernel * pc.kernel *
                   pc.area();
    };
    add_mixed(g.stem);
    for (const auto& pb : g.blocks) {
        if (pb.pooling) add_mixed(pb.res);
        if (pb.has_delta) {
            add_mixed(pb.conv1);
            add_mixed(pb.conv2);
        }
    }

    // --- regular-block costs ---
    // A conventional residual implementation must keep every summed tensor in
    // a chain at the width of the union of channels alive anywhere in that
    // chain; only rows dead across the whole chain disappear. Chains start at
    // the stem and at every pooling block.
    struct Chain {
        int head_alive = 0;       // alive outputs of the head conv (stem or res)
        int head_area = 0;
        int head_kernel = 1;
        int head_in = 0;          // regular input width of the head conv
        long long w_reg = 0;      // union width across the chain
        bool summed = false;      // any summation happens in this chain
        std::vector<const PrunedBlock*> members;  // identity blocks + pooling head delta
    };
    std::vector<Chain> chains;
    {
        Chain c0;
        c0.head_alive = g.stem.n_out();
        c0.head_area = g.stem.area();
        c0.head_kernel = g.stem.kernel;
        c0.head_in = g.stem.n_in();
        c0.w_reg = g.stem.n_out();
        chains.push_back(c0);
    }
    for (const auto& pb : g.blocks) {
        if (pb.pooling) {
            Chain c;
            c.head_alive = pb.res.n_out();
            c.head_area = pb.res.area();
            c.head_kernel = pb.res.kernel;
            c.head_in = 0;  // filled below from the previous chain's output width
            c.w_reg = static_cast<long long>(pb.out_set.size());
            c.summed = pb.has_delta;
            if (pb.has_delta) c.members.push_back(&pb);
            chains.push_back(std::move(c));
        } else {
            Chain& c = chains.back();
            c.w_reg = static_cast<long long>(pb.out_set.size());
            c.summed = true;
            c.members.push_back(&pb);
        }
    }
    auto reg_out_width = [](const Chain& c) -> long long {
        return c.summed ? c.w_reg : c.head_alive;
    };
    for (std::size_t ci = 0; ci < chains.size(); ++ci) {
        Chain& c = chains[ci];
        if (ci > 0) c.head_in = static_cast<int>(reg_out_width(chains[ci - 1]));
        const long long head_rows = c.summed ? c.w_reg : c.head_alive;
        r.regular_volume += head_rows * c.head_area;
        r.regular_flops += head_rows * c.head_in * c.head_kernel * c.head_kernel * c.head_area;
        for (const PrunedBlock* pb : c.members) {
            const long long c1_out = pb->conv1.n_out();
            const long long c1_in = pb->pooling ? reg_out_width(chains[ci - 1]) : c.w_reg;
            r.regular_volume += c1_out * pb->conv1.area();
            r.regular_flops += c1_out * c1_in * pb->conv1.kernel * pb->conv1.kernel *
                               pb->conv1.area();
            r.regular_volume += c.w_reg * pb->conv2.area();
            r.regular_flops += c.w_reg * c1_out * pb->conv2.kernel * pb->conv2.kernel *
                               pb->conv2.area();
        }
    }

    r.volume_factor = r.volume > 0 ? static_cast<double>(r.full_volume) / static_cast<double>(r.volume)
                                   : 0.0;
    r.flop_factor = r.flops > 0 ? static_cast<double>(r.full_flops) / static_cast<double>(r.flops)
                                : 0.0;
    return r;
}

}  // namespace bar
