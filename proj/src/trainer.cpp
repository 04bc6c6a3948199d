#include "bar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bar/adam.hpp"
#include "bar/errors.hpp"

namespace bar {

void TrainConfig::validate() const {
    if (batch < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    for (int e : {epochs1, epochs2, epochs3, teacher_epochs_hi, teacher_epochs_lo,
                  baseline_epochs_hi, baseline_epochs_lo})
        if (e < 1) throw std::invalid_argument("train config: every epoch count must be >= 1");
    for (double lr : {lr1, lr2, lr3, teacher_lr_hi, teacher_lr_lo})
        if (!(lr > 0)) throw std::invalid_argument("train config: learning rates must be positive");
    if (weight_decay < 0) throw std::invalid_argument("train config: weight decay must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("train config: eval cadence must be >= 1");
    if (kd_alpha < 0 || kd_alpha > 1)
        throw std::invalid_argument("train config: kd_alpha must lie in [0,1]");
    if (!(kd_temperature > 0))
        throw std::invalid_argument("train config: kd_temperature must be positive");
    if (lambda < 0) throw std::invalid_argument("train config: lambda must be >= 0");
    if (!(budget_fraction > 0) || !(budget_fraction < 1))
        throw std::invalid_argument("train config: budget fraction must lie in (0,1)");
    if (!(sigmoid_d > 0)) throw std::invalid_argument("train config: sigmoid_d must be positive");
}

TrainConfig to_train_config(const Settings& s) {
    TrainConfig c;
    c.batch = s.batch;
    c.epochs1 = s.epochs1;
    c.epochs2 = s.epochs2;
    c.epochs3 = s.epochs3;
    c.lr1 = s.lr1;
    c.lr2 = s.lr2;
    c.lr3 = s.lr3;
    c.weight_decay = s.weight_decay;
    c.eval_every = s.eval_every;
    c.kd_alpha = s.kd_alpha;
    c.kd_temperature = s.kd_temperature;
    c.lambda = s.lambda;
    c.budget_fraction = s.budget_fraction;
    c.metric = s.metric;
    c.schedule = s.schedule;
    c.sigmoid_d = s.sigmoid_d;
    c.teacher_epochs_hi = s.teacher_epochs_hi;
    c.teacher_epochs_lo = s.teacher_epochs_lo;
    c.teacher_lr_hi = s.teacher_lr_hi;
    c.teacher_lr_lo = s.teacher_lr_lo;
    c.baseline_epochs_hi = s.baseline_epochs_hi;
    c.baseline_epochs_lo = s.baseline_epochs_lo;
    c.validate();
    return c;
}

void RunLog::append(StepRecord r) {
    if (!steps.empty() && r.step <= steps.back().step)
        throw std::invalid_argument("run log: step index must be strictly increasing");
    steps.push_back(r);
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void RunLog::write_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);  // binary keeps LF endings everywhere
    if (!os) throw std::runtime_error(path + ": cannot open for writing");
    os << "step,phase,progress,b,volume,flops,hard_ce,soft_ce,kd,expected_cost,factor,bar,total,"
          "violated,eval_acc\n";
    for (const auto& r : steps) {
        os << r.step << ',' << r.phase << ',' << num(r.progress) << ',' << num(r.upper_b) << ','
           << r.hard_volume << ',' << r.hard_flops << ',' << num(r.hard_ce) << ','
           << num(r.soft_ce) << ',' << num(r.kd) << ',' << num(r.expected_cost) << ','
           << num(r.factor) << ',' << num(r.bar) << ',' << num(r.total) << ','
           << (r.violated ? 1 : 0) << ',';
        if (r.eval_acc >= 0) os << num(r.eval_acc);
        os << '\n';
    }
    if (!os) throw std::runtime_error(path + ": write failed");
}

// ===== shared step machinery =====

namespace {

struct Optimizer {
    std::vector<AdamState> conv_w, bn_gamma, bn_beta, gate;
    AdamState fc_w, fc_b;

    explicit Optimizer(const Model& m)
        : conv_w(m.convs.size()),
          bn_gamma(m.convs.size()),
          bn_beta(m.convs.size()),
          gate(m.convs.size()) {}
};

void shuffle_indices(std::vector<int>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.below(i)]);
}

void check_dataset(const NetworkSpec& spec, const Dataset& ds, const char* which) {
    if (ds.count < 1) throw ConfigError(std::string(which) + " dataset is empty");
    if (ds.h != spec.in_h || ds.w != spec.in_w || ds.c != spec.in_channels)
        throw ConfigError(std::string(which) + " dataset is " + std::to_string(ds.h) + "x" +
                          std::to_string(ds.w) + "x" + std::to_string(ds.c) +
                          " but the network expects " + std::to_string(spec.in_h) + "x" +
                          std::to_string(spec.in_w) + "x" + std::to_string(spec.in_channels));
    if (ds.max_label() >= spec.num_classes)
        throw ConfigError(std::string(which) + " dataset holds label " +
                          std::to_string(ds.max_label()) + " but the network has " +
                          std::to_string(spec.num_classes) + " classes");
}

void apply_weight_grads(Model& m, Graph& g, const BoundModel<float>& bm, Optimizer& opt,
                        const AdamConfig& cfg) {
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        adam_step(m.convs[i].w, g.grad(bm.conv_w[i].id), opt.conv_w[i], cfg);
        adam_step(m.convs[i].bn_gamma, g.grad(bm.bn_gamma[i].id), opt.bn_gamma[i], cfg);
        adam_step(m.convs[i].bn_beta, g.grad(bm.bn_beta[i].id), opt.bn_beta[i], cfg);
    }
    adam_step(m.fc_w, g.grad(bm.fc_w.id), opt.fc_w, cfg);
    adam_step(m.fc_b, g.grad(bm.fc_b.id), opt.fc_b, cfg);
}

void apply_gate_grads(Model& m, Graph& g, const BoundModel<float>& bm, Optimizer& opt,
                      const AdamConfig& cfg) {
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        auto& gate = m.convs[i].gate;
        Tensor la({static_cast<int>(gate.log_alpha.size())});
        la.data = gate.log_alpha;
        adam_step(la, g.grad(bm.gate_log_alpha[i].id), opt.gate[i], cfg);
        gate.log_alpha = la.data;
    }
}

Tensor teacher_rows_for(const LogitsCache& cache, const std::vector<int>& indices) {
    Tensor t({static_cast<int>(indices.size()), cache.c});
    for (std::size_t bi = 0; bi < indices.size(); ++bi) {
        const float* src = cache.row(indices[bi]);
        std::copy(src, src + cache.c, &t.data[bi * static_cast<std::size_t>(cache.c)]);
    }
    return t;
}

/// Plain (graph-free) expected cost of the current gates, for logging when
/// the differentiable version is not being built.
double expected_cost_plain(const std::vector<GateCost>& costs, BudgetMetric metric) {
    double total = 0;
    if (metric == BudgetMetric::volume) {
        for (const auto& l : costs)
            total += static_cast<double>(l.cost.area) * hc_sparsity_loss(*l.gate);
        return total;
    }
    std::vector<std::vector<double>> probs(costs.size());
    for (std::size_t i = 0; i < costs.size(); ++i) {
        const auto& gate = *costs[i].gate;
        const double c0 = gate.hc.beta * std::log(-gate.hc.gamma / gate.hc.zeta);
        for (float la : gate.log_alpha)
            probs[i].push_back(1.0 / (1.0 + std::exp(-(static_cast<double>(la) - c0))));
    }
    for (std::size_t i = 0; i < costs.size(); ++i) {
        const auto& l = costs[i];
        double e_out = 0;
        for (double p : probs[i]) e_out += p;
        double e_in = l.cost.in_channels;
        if (!l.in_sources.empty()) {
            e_in = 0;
            const std::size_t width = probs[static_cast<std::size_t>(l.in_sources[0])].size();
            for (std::size_t c = 0; c < width; ++c) {
                double dead = 1.0;
                for (int s : l.in_sources) dead *= 1.0 - probs[static_cast<std::size_t>(s)][c];
                e_in += 1.0 - dead;
            }
        }
        total += e_out * e_in * l.cost.kernel * l.cost.kernel * l.cost.area;
    }
    return total;
}

/// Kills the least-confident alive channels until the hard metric fits under
/// `limit`. At this training scale Adam caps per-step gate movement at about
/// the learning rate, so the barrier gradient alone cannot carry a gate from
/// its initialization across the death threshold within the epoch budget; the
/// sliding bound is therefore enforced directly, with the selection order
/// still coming from the learned gate parameters. Channels that are the last
/// alive member of a clamp-protected convolution are never killed.
void enforce_budget(Model& m, BudgetMetric metric, double limit) {
    for (;;) {
        const auto costs = gate_costs(m);
        const double v = metric == BudgetMetric::volume
                             ? static_cast<double>(hard_volume(costs))
                             : static_cast<double>(hard_flops(costs));
        if (v <= limit) return;
        std::size_t best_u = 0;
        int best_c = -1;
        float best_la = 0.0f;
        for (std::size_t ui = 0; ui < m.convs.size(); ++ui) {
            auto& gate = m.convs[ui].gate;
            const float thr = gate_death_threshold(gate.hc);
            int natural_alive = 0;
            for (float la : gate.log_alpha) natural_alive += la > thr ? 1 : 0;
            if (gate.clamp_protect && natural_alive <= 1) continue;
            for (std::size_t c = 0; c < gate.log_alpha.size(); ++c) {
                const float la = gate.log_alpha[c];
                if (la > thr && (best_c < 0 || la < best_la)) {
                    best_u = ui;
                    best_c = static_cast<int>(c);
                    best_la = la;
                }
            }
        }
        if (best_c < 0) return;  // nothing left to kill
        auto& gate = m.convs[best_u].gate;
        gate.log_alpha[static_cast<std::size_t>(best_c)] =
            gate_death_threshold(gate.hc) - 5.0f;
    }
}

/// One weights-only step (teacher, fine-tune phases, baseline retraining).
/// Returns the filled record with `step`/`phase`/budget fields left to the
/// caller. Uses kd when `teacher_rows` is given, else plain cross-entropy.
StepRecord weights_step(Model& m, Optimizer& opt, const Tensor& x, const std::vector<int>& y,
                        const Tensor* teacher_rows, const TrainConfig& cfg, GateMode mode,
                        const AdamConfig& wcfg, const char* context) {
    Graph g;
    BoundModel<float> bm = bind_model(g, m, true, false);
    Var input = make_leaf(g, x, false);
    SoftForward<float> fwd = forward_soft(m, g, bm, input, mode, true);
    KdPartsT<float> parts;
    Var loss;
    if (teacher_rows) {
        loss = kd_loss(fwd.logits, y, *teacher_rows, static_cast<float>(cfg.kd_alpha),
                       static_cast<float>(cfg.kd_temperature), &parts);
    } else {
        parts.hard = cross_entropy_logits(fwd.logits, y);
        loss = parts.hard;
    }
    StepRecord r;
    r.hard_ce = parts.hard.value().data[0];
    r.soft_ce = parts.soft.graph ? parts.soft.value().data[0] : 0.0;
    r.kd = loss.value().data[0];
    r.total = r.kd;
    if (!std::isfinite(r.total))
        throw std::runtime_error(std::string(context) + ": loss diverged (non-finite)");
    g.backward(loss.id);
    apply_weight_grads(m, g, bm, opt, wcfg);
    return r;
}

}  // namespace

// ===== evaluation =====

int argmax_row(const float* row, int c) {
    int best = 0;
    for (int k = 1; k < c; ++k)
        if (row[k] > row[best]) best = k;
    return best;
}

namespace {

template <class ForwardFn>
double accuracy_over(const Dataset& ds, int batch, ForwardFn&& forward) {
    if (batch < 1) throw std::invalid_argument("evaluate: batch size must be >= 1");
    long long hits = 0;
    std::vector<int> idx;
    for (int start = 0; start < ds.count; start += batch) {
        idx.clear();
        for (int i = start; i < std::min(ds.count, start + batch); ++i) idx.push_back(i);
        Tensor x;
        std::vector<int> y;
        make_batch(ds, idx, x, y);
        const Tensor logits = forward(x);
        const int c = logits.shape[1];
        for (std::size_t bi = 0; bi < idx.size(); ++bi)
            if (argmax_row(&logits.data[bi * static_cast<std::size_t>(c)], c) == y[bi]) ++hits;
    }
    return static_cast<double>(hits) / ds.count;
}

Tensor dense_eval_logits(Model& m, const Tensor& x, GateMode mode) {
    Graph g;
    BoundModel<float> bm = bind_model(g, m, false, false);
    Var input = make_leaf(g, x, false);
    SoftForward<float> fwd = forward_soft(m, g, bm, input, mode, false);
    return fwd.logits.value();
}

}  // namespace

double evaluate_dense(Model& m, const Dataset& ds, int batch, GateMode mode) {
    if (mode == GateMode::stochastic)
        throw std::invalid_argument("evaluate_dense: evaluation must be deterministic");
    return accuracy_over(ds, batch, [&](const Tensor& x) { return dense_eval_logits(m, x, mode); });
}

double evaluate_pruned(const PrunedGraph& g, const Dataset& ds, int batch) {
    return accuracy_over(ds, batch, [&](const Tensor& x) { return forward_pruned(g, x); });
}

LogitsCache predict_whole_dataset(Model& m, const Dataset& ds, int batch) {
    if (batch < 1) throw std::invalid_argument("predict_whole_dataset: batch size must be >= 1");
    LogitsCache cache;
    cache.n = ds.count;
    cache.c = m.spec.num_classes;
    cache.logits.resize(static_cast<std::size_t>(cache.n) * cache.c);
    std::vector<int> idx;
    for (int start = 0; start < ds.count; start += batch) {
        idx.clear();
        for (int i = start; i < std::min(ds.count, start + batch); ++i) idx.push_back(i);
        Tensor x;
        std::vector<int> y;
        make_batch(ds, idx, x, y);
        const Tensor logits = dense_eval_logits(m, x, GateMode::bypass);
        std::copy(logits.data.begin(), logits.data.end(),
                  cache.logits.begin() + static_cast<std::size_t>(start) * cache.c);
    }
    return cache;
}

// ===== teacher =====

TeacherResult train_teacher(const NetworkSpec& spec, const Dataset& train, const Dataset& eval_set,
                            const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    check_dataset(spec, train, "training");
    check_dataset(spec, eval_set, "evaluation");
    Rng init_rng = rng.fork(1);
    Rng shuffle_rng = rng.fork(2);

    TeacherResult out;
    out.model = build_network<float>(spec, init_rng);
    Model& m = out.model;
    Optimizer opt(m);
    const auto costs = gate_costs(m);

    std::vector<int> order(static_cast<std::size_t>(train.count));
    std::iota(order.begin(), order.end(), 0);
    long long gstep = 0;
    AdamConfig wcfg;
    wcfg.weight_decay = cfg.weight_decay;

    const int segments[2] = {cfg.teacher_epochs_hi, cfg.teacher_epochs_lo};
    const double lrs[2] = {cfg.teacher_lr_hi, cfg.teacher_lr_lo};
    int epoch_counter = 0;
    for (int seg = 0; seg < 2; ++seg) {
        wcfg.lr = lrs[seg];
        for (int e = 0; e < segments[seg]; ++e, ++epoch_counter) {
            shuffle_indices(order, shuffle_rng);
            for (int start = 0; start < train.count; start += cfg.batch) {
                const std::vector<int> idx(order.begin() + start,
                                           order.begin() +
                                               std::min<std::size_t>(order.size(),
                                                                     static_cast<std::size_t>(start) +
                                                                         cfg.batch));
                Tensor x;
                std::vector<int> y;
                make_batch(train, idx, x, y);
                StepRecord r = weights_step(m, opt, x, y, nullptr, cfg, GateMode::bypass, wcfg,
                                            "train_teacher");
                r.step = gstep++;
                r.phase = 0;
                r.hard_volume = hard_volume(costs);
                r.hard_flops = hard_flops(costs);
                out.log.append(r);
            }
            if ((epoch_counter + 1) % cfg.eval_every == 0)
                out.log.steps.back().eval_acc =
                    evaluate_dense(m, eval_set, cfg.batch, GateMode::bypass);
        }
    }

    out.cache = predict_whole_dataset(m, train, cfg.batch);
    long long hits = 0;
    for (int i = 0; i < train.count; ++i)
        if (argmax_row(out.cache.row(i), out.cache.c) == train.labels[static_cast<std::size_t>(i)])
            ++hits;
    out.train_accuracy = static_cast<double>(hits) / train.count;
    out.eval_accuracy = evaluate_dense(m, eval_set, cfg.batch, GateMode::bypass);
    out.log.final_accuracy = out.eval_accuracy;
    return out;
}

// ===== budget-aware pruning =====

PruneResult bar_train(const NetworkSpec& spec, const Dataset& train, const Dataset& eval_set,
                      const LogitsCache& teacher, const TrainConfig& cfg, Rng& rng,
                      const Model* init_weights) {
    cfg.validate();
    check_dataset(spec, train, "training");
    check_dataset(spec, eval_set, "evaluation");
    if (teacher.n != train.count)
        throw ConfigError("teacher cache holds " + std::to_string(teacher.n) + " rows for " +
                          std::to_string(train.count) + " training samples");
    if (teacher.c != spec.num_classes)
        throw ConfigError("teacher cache has " + std::to_string(teacher.c) + " columns for " +
                          std::to_string(spec.num_classes) + " classes");

    Rng init_rng = rng.fork(1);
    Rng shuffle_rng = rng.fork(2);
    Rng noise_rng = rng.fork(3);

    PruneResult out;
    out.model = init_weights ? *init_weights : build_network<float>(spec, init_rng);
    Model& m = out.model;
    if (init_weights && (m.spec.in_channels != spec.in_channels || m.spec.in_h != spec.in_h ||
                         m.spec.in_w != spec.in_w || m.spec.num_classes != spec.num_classes ||
                         m.spec.stem_channels != spec.stem_channels ||
                         m.spec.kernel != spec.kernel || m.spec.stages.size() != spec.stages.size()))
        throw ConfigError("initial weights were built for a different network spec");

    const double v_full = cfg.metric == BudgetMetric::volume
                              ? static_cast<double>(full_volume(m))
                              : static_cast<double>(full_flops(m));
    out.budget = cfg.budget_fraction * v_full;
    const BudgetState base =
        make_budget_state(v_full, out.budget, cfg.metric, cfg.schedule, cfg.sigmoid_d);

    Optimizer opt(m);
    std::vector<int> order(static_cast<std::size_t>(train.count));
    std::iota(order.begin(), order.end(), 0);
    long long gstep = 0;

    // --- phase 1: weights + gates under the sliding barrier ---
    const long long steps_per_epoch = (train.count + cfg.batch - 1) / cfg.batch;
    const long long total1 = steps_per_epoch * cfg.epochs1;
    AdamConfig wcfg;
    wcfg.lr = cfg.lr1;
    wcfg.weight_decay = cfg.weight_decay;
    AdamConfig gcfg;
    gcfg.lr = cfg.lr1;

    for (int e = 0; e < cfg.epochs1; ++e) {
        shuffle_indices(order, shuffle_rng);
        for (int start = 0; start < train.count; start += cfg.batch) {
            const std::vector<int> idx(order.begin() + start,
                                       order.begin() +
                                           std::min<std::size_t>(order.size(),
                                                                 static_cast<std::size_t>(start) +
                                                                     cfg.batch));
            Tensor x;
            std::vector<int> y;
            make_batch(train, idx, x, y);
            const Tensor trows = teacher_rows_for(teacher, idx);

            const double progress =
                total1 > 1 ? static_cast<double>(gstep) / static_cast<double>(total1 - 1) : 1.0;
            const BudgetState st = update_budget(base, progress);
            enforce_budget(m, cfg.metric, st.upper_b);

            Graph g;
            BoundModel<float> bm = bind_model(g, m, true, true);
            Var input = make_leaf(g, x, false);
            SoftForward<float> fwd =
                forward_soft(m, g, bm, input, GateMode::stochastic, true, &noise_rng);
            KdPartsT<float> parts;
            Var kd = kd_loss(fwd.logits, y, trows, static_cast<float>(cfg.kd_alpha),
                             static_cast<float>(cfg.kd_temperature), &parts);

            const auto costs = gate_costs(m);
            std::vector<GateNodeT<float>> nodes;
            nodes.reserve(costs.size());
            for (std::size_t i = 0; i < costs.size(); ++i)
                nodes.push_back({bm.gate_log_alpha[i], m.convs[i].gate.hc, costs[i].cost,
                                 costs[i].in_sources});

            const BarLossT<float> bl = bar_loss(nodes, costs, st);
            Var total = add(kd, scale(bl.loss, static_cast<float>(cfg.lambda)));

            StepRecord r;
            r.step = gstep++;
            r.phase = 1;
            r.progress = progress;
            r.upper_b = st.upper_b;
            r.hard_volume = hard_volume(costs);
            r.hard_flops = hard_flops(costs);
            r.hard_ce = parts.hard.value().data[0];
            r.soft_ce = parts.soft.value().data[0];
            r.kd = kd.value().data[0];
            r.expected_cost = bl.expected_cost;
            r.factor = bl.factor;
            r.bar = bl.loss.value().data[0];
            r.total = total.value().data[0];
            r.violated = bl.violated;
            if (!std::isfinite(r.total))
                throw std::runtime_error("bar_train: loss diverged (non-finite)");

            g.backward(total.id);
            apply_weight_grads(m, g, bm, opt, wcfg);
            apply_gate_grads(m, g, bm, opt, gcfg);
            out.log.append(r);
        }
        if ((e + 1) % cfg.eval_every == 0)
            out.log.steps.back().eval_acc =
                evaluate_dense(m, eval_set, cfg.batch, GateMode::frozen_det);
    }

    // --- gate freeze: the final gate update could have revived a marginal
    // channel, so settle the budget once more, then propagate dead blocks ---
    enforce_budget(m, cfg.metric, out.budget);
    propagate_block_death(m);

    const int phase_epochs[2] = {cfg.epochs2, cfg.epochs3};
    const double phase_lrs[2] = {cfg.lr2, cfg.lr3};
    for (int seg = 0; seg < 2; ++seg) {
        wcfg.lr = phase_lrs[seg];
        for (int e = 0; e < phase_epochs[seg]; ++e) {
            shuffle_indices(order, shuffle_rng);
            for (int start = 0; start < train.count; start += cfg.batch) {
                const std::vector<int> idx(
                    order.begin() + start,
                    order.begin() + std::min<std::size_t>(order.size(),
                                                          static_cast<std::size_t>(start) +
                                                              cfg.batch));
                Tensor x;
                std::vector<int> y;
                make_batch(train, idx, x, y);
                const Tensor trows = teacher_rows_for(teacher, idx);
                StepRecord r = weights_step(m, opt, x, y, &trows, cfg, GateMode::frozen_det, wcfg,
                                            "bar_train fine-tune");
                const auto costs = gate_costs(m);
                r.step = gstep++;
                r.phase = 2 + seg;
                r.progress = 1.0;
                r.upper_b = out.budget;
                r.hard_volume = hard_volume(costs);
                r.hard_flops = hard_flops(costs);
                r.expected_cost = expected_cost_plain(costs, cfg.metric);
                const double hard_metric = cfg.metric == BudgetMetric::volume
                                               ? static_cast<double>(r.hard_volume)
                                               : static_cast<double>(r.hard_flops);
                r.violated = hard_metric >= out.budget;
                out.log.append(r);
            }
            if ((e + 1) % cfg.eval_every == 0)
                out.log.steps.back().eval_acc =
                    evaluate_dense(m, eval_set, cfg.batch, GateMode::frozen_det);
        }
    }

    // --- deploy graph and final accounting ---
    out.graph = hard_prune(m);
    out.report = cost_report(out.graph);
    out.final_hard = cfg.metric == BudgetMetric::volume ? static_cast<double>(out.report.volume)
                                                        : static_cast<double>(out.report.flops);
    out.budget_met = out.final_hard <= out.budget;
    out.final_accuracy = evaluate_pruned(out.graph, eval_set, cfg.batch);
    out.log.final_accuracy = out.final_accuracy;
    return out;
}

// ===== iterative baselines =====

namespace {

void halve_alive_channels(Model& m, BaselineKind kind, Rng& rng) {
    for (auto& u : m.convs) {
        const auto mask = alive_mask(u.gate);
        std::vector<int> alive;
        for (std::size_t c = 0; c < mask.size(); ++c)
            if (mask[c]) alive.push_back(static_cast<int>(c));
        const int target = std::max(1, static_cast<int>(alive.size()) / 2);
        if (target >= static_cast<int>(alive.size())) continue;
        std::vector<int> keep;
        if (kind == BaselineKind::weight_magnitude) {
            std::vector<std::pair<double, int>> ranked;  // (-|W|_1, channel)
            const int row = u.in_channels * u.kernel * u.kernel;
            for (int c : alive) {
                double mag = 0;
                const float* wrow = &u.w.data[static_cast<std::size_t>(c) * row];
                for (int t = 0; t < row; ++t) mag += std::abs(static_cast<double>(wrow[t]));
                ranked.emplace_back(-mag, c);
            }
            std::sort(ranked.begin(), ranked.end());
            for (int t = 0; t < target; ++t) keep.push_back(ranked[static_cast<std::size_t>(t)].second);
        } else {
            std::vector<int> pool = alive;
            for (int t = 0; t < target; ++t) {
                const std::size_t j =
                    static_cast<std::size_t>(t) +
                    rng.below(pool.size() - static_cast<std::size_t>(t));
                std::swap(pool[static_cast<std::size_t>(t)], pool[j]);
                keep.push_back(pool[static_cast<std::size_t>(t)]);
            }
        }
        std::vector<std::uint8_t> kept(mask.size(), 0);
        for (int c : keep) kept[static_cast<std::size_t>(c)] = 1;
        for (std::size_t c = 0; c < mask.size(); ++c)
            u.gate.log_alpha[c] = kept[c] ? 10.0f : -10.0f;
    }
}

}  // namespace

BaselineResult baseline_prune(BaselineKind kind, const Model& teacher, const Dataset& train,
                              const Dataset& eval_set, const TrainConfig& cfg, Rng& rng,
                              int rounds) {
    cfg.validate();
    if (rounds < 1) throw std::invalid_argument("baseline_prune: need at least one round");
    check_dataset(teacher.spec, train, "training");
    check_dataset(teacher.spec, eval_set, "evaluation");

    Rng choice_rng = rng.fork(4);
    Rng shuffle_rng = rng.fork(2);

    BaselineResult out;
    Model m = teacher;
    for (auto& u : m.convs)
        std::fill(u.gate.log_alpha.begin(), u.gate.log_alpha.end(), 10.0f);

    std::vector<int> order(static_cast<std::size_t>(train.count));
    std::iota(order.begin(), order.end(), 0);
    long long gstep = 0;
    const double v_full = static_cast<double>(full_volume(m));

    for (int round = 1; round <= rounds; ++round) {
        halve_alive_channels(m, kind, choice_rng);
        Optimizer opt(m);
        AdamConfig wcfg;
        wcfg.weight_decay = cfg.weight_decay;
        const int segments[2] = {cfg.baseline_epochs_hi, cfg.baseline_epochs_lo};
        const double lrs[2] = {cfg.lr2, cfg.lr3};
        int epoch_counter = 0;
        for (int seg = 0; seg < 2; ++seg) {
            wcfg.lr = lrs[seg];
            for (int e = 0; e < segments[seg]; ++e, ++epoch_counter) {
                shuffle_indices(order, shuffle_rng);
                for (int start = 0; start < train.count; start += cfg.batch) {
                    const std::vector<int> idx(
                        order.begin() + start,
                        order.begin() + std::min<std::size_t>(order.size(),
                                                              static_cast<std::size_t>(start) +
                                                                  cfg.batch));
                    Tensor x;
                    std::vector<int> y;
                    make_batch(train, idx, x, y);
                    StepRecord r = weights_step(m, opt, x, y, nullptr, cfg, GateMode::frozen_det,
                                                wcfg, "baseline_prune");
                    const auto costs = gate_costs(m);
                    r.step = gstep++;
                    r.phase = round;
                    r.upper_b = v_full / static_cast<double>(1 << round);
                    r.hard_volume = hard_volume(costs);
                    r.hard_flops = hard_flops(costs);
                    out.log.append(r);
                }
                if ((epoch_counter + 1) % cfg.eval_every == 0)
                    out.log.steps.back().eval_acc =
                        evaluate_dense(m, eval_set, cfg.batch, GateMode::frozen_det);
            }
        }
        BaselineRound br;
        br.factor = 1 << round;
        Model snapshot = m;
        br.graph = hard_prune(snapshot);
        br.report = cost_report(br.graph);
        br.accuracy = evaluate_pruned(br.graph, eval_set, cfg.batch);
        out.log.final_accuracy = br.accuracy;
        out.rounds.push_back(std::move(br));
    }
    return out;
}

}  // namespace bar
