#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bar/budget.hpp"
#include "bar/config.hpp"
#include "bar/dataset.hpp"
#include "bar/distill.hpp"
#include "bar/netgraph.hpp"
#include "bar/rng.hpp"

namespace bar {

/// Hyperparameters of the three-phase pruning procedure and its helpers.
/// Phase 1 trains weights and gates under the budget-aware loss; phases 2
/// and 3 fine-tune weights with the gates frozen, at lr2 and lr3.
struct TrainConfig {
    int batch = 64;
    int epochs1 = 20, epochs2 = 10, epochs3 = 5;
    double lr1 = 1e-3, lr2 = 1e-3, lr3 = 1e-4;
    double weight_decay = 5e-4;
    int eval_every = 1;  // epochs between held-out evaluations

    double kd_alpha = 0.9;
    double kd_temperature = 4.0;
    double lambda = 1e-5;

    double budget_fraction = 0.5;
    BudgetMetric metric = BudgetMetric::volume;
    ScheduleKind schedule = ScheduleKind::sigmoid;
    double sigmoid_d = 10.0;

    int teacher_epochs_hi = 16, teacher_epochs_lo = 2;
    double teacher_lr_hi = 1e-3, teacher_lr_lo = 1e-4;

    int baseline_epochs_hi = 10, baseline_epochs_lo = 5;

    void validate() const;
};

TrainConfig to_train_config(const Settings& s);

/// One optimization step as logged. `eval_acc` is -1 except on steps where
/// the held-out set was evaluated; `violated` marks steps whose hard cost
/// reached the sliding barrier edge.
struct StepRecord {
    long long step = 0;
    int phase = 0;  // 0 teacher/baseline-retrain context dependent, 1..3 pruning phases
    double progress = 0;
    double upper_b = 0;
    long long hard_volume = 0;
    long long hard_flops = 0;
    double hard_ce = 0, soft_ce = 0, kd = 0;
    double expected_cost = 0, factor = 0, bar = 0, total = 0;
    bool violated = false;
    double eval_acc = -1;
};

struct RunLog {
    std::vector<StepRecord> steps;
    double final_accuracy = -1;

    void append(StepRecord r);
    void write_csv(const std::string& path) const;
};

struct TeacherResult {
    Model model;
    LogitsCache cache;  // eval-mode logits over the full training set
    double train_accuracy = 0;
    double eval_accuracy = 0;
    RunLog log;
};

struct PruneResult {
    Model model;  // dense model after all phases (gates propagated/frozen)
    PrunedGraph graph;
    CostReport report;
    RunLog log;
    double budget = 0;      // B in the configured metric
    double final_hard = 0;  // final hard cost in the same metric
    double final_accuracy = 0;
    bool budget_met = false;
};

enum class BaselineKind { random, weight_magnitude };

struct BaselineRound {
    int factor = 0;  // 2^round
    PrunedGraph graph;
    CostReport report;
    double accuracy = 0;
};

struct BaselineResult {
    std::vector<BaselineRound> rounds;
    RunLog log;
};

/// Top-1 accuracy with the lowest-index argmax tie break.
int argmax_row(const float* row, int c);
double evaluate_dense(Model& m, const Dataset& ds, int batch, GateMode mode);
double evaluate_pruned(const PrunedGraph& g, const Dataset& ds, int batch);

/// Eval-mode (bypass-gate) logits for every sample, row-aligned with ds.
LogitsCache predict_whole_dataset(Model& m, const Dataset& ds, int batch);

/// Trains the ungated network: cross-entropy, Adam, teacher_epochs_hi at
/// teacher_lr_hi then teacher_epochs_lo at teacher_lr_lo.
TeacherResult train_teacher(const NetworkSpec& spec, const Dataset& train, const Dataset& eval_set,
                            const TrainConfig& cfg, Rng& rng);

/// The budget-aware pruning procedure. Phase 1 samples gates per minibatch
/// and optimizes distillation + lambda * barrier-scaled expected cost while
/// the barrier edge slides from the full cost to the budget; gates are then
/// frozen (dead blocks propagated) and phases 2/3 fine-tune the weights.
/// `init_weights`, when given, must match `spec` and seeds the student.
PruneResult bar_train(const NetworkSpec& spec, const Dataset& train, const Dataset& eval_set,
                      const LogitsCache& teacher, const TrainConfig& cfg, Rng& rng,
                      const Model* init_weights = nullptr);

/// Iterative magnitude/random pruning: each round halves every layer's alive
/// channel count (keeping at least one), then retrains with cross-entropy.
/// Round r reaches width factor 2^r; one entry per round is returned.
BaselineResult baseline_prune(BaselineKind kind, const Model& teacher, const Dataset& train,
                              const Dataset& eval_set, const TrainConfig& cfg, Rng& rng,
                              int rounds);

}  // namespace bar
