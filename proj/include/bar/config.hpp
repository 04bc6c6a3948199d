#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bar/budget.hpp"
#include "bar/dataset.hpp"
#include "bar/netgraph.hpp"

namespace bar {

/// Raw `key = value` file contents with source lines kept for error messages.
/// `#` starts a comment; blank lines are skipped; keys may not repeat.
struct RawConfig {
    struct Entry {
        std::string value;
        int line = 0;
    };
    std::string source;  // path or a synthetic name for in-memory text
    std::map<std::string, Entry> entries;
};

RawConfig parse_config_file(const std::string& path);
RawConfig parse_config_text(const std::string& text, const std::string& source);

/// Every tunable of the toolkit, typed and defaulted. Only keys listed in the
/// schema are accepted; anything else is a ConfigError naming the line.
struct Settings {
    std::uint64_t seed = 1;
    std::string out_dir;

    std::string train_images, train_labels, eval_images, eval_labels;

    GenSpec gen;             // gen.count applies to the training split
    int gen_eval_count = 500;

    NetworkSpec net = NetworkSpec::toy_default();

    int teacher_epochs_hi = 16;
    int teacher_epochs_lo = 2;
    double teacher_lr_hi = 1e-3;
    double teacher_lr_lo = 1e-4;

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

    std::string method = "bar";  // bar | random | wm
    int baseline_epochs_hi = 10;
    int baseline_epochs_lo = 5;

    std::vector<std::string> sweep_methods = {"bar"};
};

/// Applies defaults, types and validates every present key, and rejects
/// unknown keys with their line numbers.
Settings make_settings(const RawConfig& raw);

/// Per-subcommand required-key check (keys without usable defaults).
void require_keys(const RawConfig& raw, const std::vector<std::string>& keys);

/// Parses the stage grammar `WIDTHxBLOCKSsSTRIDE,...`, e.g. "16x2s2,32x2s2".
std::vector<StageSpec> parse_stages(const std::string& text);

}  // namespace bar
