#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bar/config.hpp"
#include "bar/errors.hpp"
#include "bar/serialize.hpp"
#include "bar/trainer.hpp"

namespace fs = std::filesystem;
using namespace bar;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out_dir;
    bool force = false;
};

Settings load_settings(const GlobalOpts& g, const std::vector<std::string>& required) {
    RawConfig raw =
        g.config_path.empty() ? RawConfig{"<command line>", {}} : parse_config_file(g.config_path);
    if (g.seed_given) raw.entries["seed"] = {std::to_string(g.seed), 0};
    if (!g.out_dir.empty()) raw.entries["out.dir"] = {g.out_dir, 0};
    require_keys(raw, required);
    return make_settings(raw);
}

void refuse_overwrite(const std::string& path, bool force) {
    if (!force && fs::exists(path))
        throw ConfigError(path + " already exists (pass --force to overwrite)");
}

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void write_report(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error(path + ": cannot open for writing");
    for (const auto& [k, v] : kv) os << k << ": " << v << '\n';
    if (!os) throw std::runtime_error(path + ": write failed");
}

// ----- gen-data -----

int cmd_gen_data(const GlobalOpts& g) {
    Settings s = load_settings(
        g, {"data.train_images", "data.train_labels", "data.eval_images", "data.eval_labels"});
    for (const auto& p : {s.train_images, s.train_labels, s.eval_images, s.eval_labels})
        refuse_overwrite(p, g.force);

    Rng root(s.seed);
    Rng train_rng = root.fork(0);
    Rng eval_rng = root.fork(1);

    GenSpec train_spec = s.gen;
    Dataset train = generate_dataset(train_spec, train_rng);
    GenSpec eval_spec = s.gen;
    eval_spec.count = s.gen_eval_count;
    Dataset eval_set = generate_dataset(eval_spec, eval_rng);

    for (const auto& p : {s.train_images, s.train_labels, s.eval_images, s.eval_labels})
        if (p.find('/') != std::string::npos) fs::create_directories(fs::path(p).parent_path());
    write_images_file(s.train_images, train);
    write_labels_file(s.train_labels, train);
    write_images_file(s.eval_images, eval_set);
    write_labels_file(s.eval_labels, eval_set);

    std::cout << "wrote " << train.count << " training and " << eval_set.count
              << " evaluation samples (" << train.h << "x" << train.w << "x" << train.c << ", "
              << train_spec.classes << " classes)\n";
    return 0;
}

// ----- train-teacher -----

int cmd_train_teacher(const GlobalOpts& g) {
    Settings s = load_settings(g, {"data.train_images", "data.train_labels", "data.eval_images",
                                   "data.eval_labels", "out.dir"});
    Dataset train = load_dataset(s.train_images, s.train_labels);
    Dataset eval_set = load_dataset(s.eval_images, s.eval_labels);
    fs::create_directories(s.out_dir);
    refuse_overwrite(join(s.out_dir, "teacher.ckpt"), g.force);

    TrainConfig cfg = to_train_config(s);
    Rng rng(s.seed);
    TeacherResult t = train_teacher(s.net, train, eval_set, cfg, rng);

    save_model(join(s.out_dir, "teacher.ckpt"), t.model);
    write_logits_cache(join(s.out_dir, "teacher_logits.bin"), t.cache);
    t.log.write_csv(join(s.out_dir, "teacher_log.csv"));
    std::cout << "teacher train accuracy: " << fmt(t.train_accuracy) << '\n'
              << "teacher eval accuracy:  " << fmt(t.eval_accuracy) << '\n'
              << "saved " << join(s.out_dir, "teacher.ckpt") << '\n';
    return 0;
}

// ----- prune -----

int rounds_for_fraction(double fraction) {
    const int r = static_cast<int>(std::ceil(std::log2(1.0 / fraction) - 1e-12));
    return std::max(1, r);
}

void print_and_write_report(const Settings& s, const PruneResult& res, const std::string& path) {
    const CostReport& r = res.report;
    std::vector<std::pair<std::string, std::string>> kv = {
        {"method", s.method},
        {"seed", std::to_string(s.seed)},
        {"metric", s.metric == BudgetMetric::volume ? "volume" : "flop"},
        {"budget_fraction", fmt(s.budget_fraction)},
        {"budget", fmt(res.budget)},
        {"final_hard", fmt(res.final_hard)},
        {"budget_met", res.budget_met ? "yes" : "no"},
        {"full_volume", std::to_string(r.full_volume)},
        {"pruned_volume", std::to_string(r.volume)},
        {"regular_volume", std::to_string(r.regular_volume)},
        {"full_flops", std::to_string(r.full_flops)},
        {"pruned_flops", std::to_string(r.flops)},
        {"regular_flops", std::to_string(r.regular_flops)},
        {"volume_factor", fmt(r.volume_factor)},
        {"flop_factor", fmt(r.flop_factor)},
        {"eval_accuracy", fmt(res.final_accuracy)},
    };
    write_report(path, kv);
    for (const auto& [k, v] : kv) std::cout << k << ": " << v << '\n';
}

int cmd_prune(const GlobalOpts& g, bool init_from_teacher) {
    Settings s = load_settings(g, {"data.train_images", "data.train_labels", "data.eval_images",
                                   "data.eval_labels", "out.dir"});
    Dataset train = load_dataset(s.train_images, s.train_labels);
    Dataset eval_set = load_dataset(s.eval_images, s.eval_labels);
    Model teacher = load_model(join(s.out_dir, "teacher.ckpt"));
    refuse_overwrite(join(s.out_dir, "pruned.ckpt"), g.force);

    TrainConfig cfg = to_train_config(s);
    Rng rng(s.seed);
    PruneResult res;
    if (s.method == "bar") {
        LogitsCache cache = read_logits_cache(join(s.out_dir, "teacher_logits.bin"));
        res = bar_train(teacher.spec, train, eval_set, cache, cfg, rng,
                        init_from_teacher ? &teacher : nullptr);
    } else {
        const BaselineKind kind =
            s.method == "wm" ? BaselineKind::weight_magnitude : BaselineKind::random;
        const int rounds = rounds_for_fraction(s.budget_fraction);
        BaselineResult bres = baseline_prune(kind, teacher, train, eval_set, cfg, rng, rounds);
        BaselineRound& last = bres.rounds.back();
        res.graph = std::move(last.graph);
        res.report = last.report;
        res.log = std::move(bres.log);
        const double v_full = s.metric == BudgetMetric::volume
                                  ? static_cast<double>(res.report.full_volume)
                                  : static_cast<double>(res.report.full_flops);
        res.budget = s.budget_fraction * v_full;
        res.final_hard = s.metric == BudgetMetric::volume
                             ? static_cast<double>(res.report.volume)
                             : static_cast<double>(res.report.flops);
        res.budget_met = res.final_hard <= res.budget;
        res.final_accuracy = last.accuracy;
    }

    save_pruned_graph(join(s.out_dir, "pruned.ckpt"), res.graph);
    res.log.write_csv(join(s.out_dir, "run_log.csv"));
    print_and_write_report(s, res, join(s.out_dir, "report.txt"));
    if (!res.budget_met)
        throw BudgetError("final " +
                          std::string(s.metric == BudgetMetric::volume ? "volume " : "flops ") +
                          fmt(res.final_hard) + " exceeds budget " + fmt(res.budget));
    return 0;
}

// ----- eval -----

int cmd_eval(const GlobalOpts& g, const std::string& ckpt) {
    Settings s = load_settings(g, {"data.eval_images", "data.eval_labels"});
    Dataset eval_set = load_dataset(s.eval_images, s.eval_labels);

    using clock = std::chrono::steady_clock;
    if (checkpoint_holds_pruned_graph(ckpt)) {
        PrunedGraph graph = load_pruned_graph(ckpt);
        const auto t0 = clock::now();
        const double acc = evaluate_pruned(graph, eval_set, s.batch);
        const auto t1 = clock::now();
        const CostReport r = cost_report(graph);
        const int batches = (eval_set.count + s.batch - 1) / s.batch;
        std::cout << "checkpoint: pruned graph\n"
                  << "eval accuracy: " << fmt(acc) << " over " << eval_set.count << " samples\n"
                  << "volume: " << r.volume << " (factor " << fmt(r.volume_factor) << ")\n"
                  << "flops: " << r.flops << " (factor " << fmt(r.flop_factor) << ")\n"
                  << "regular_volume: " << r.regular_volume
                  << " regular_flops: " << r.regular_flops << '\n'
                  << "ms/batch: "
                  << fmt(std::chrono::duration<double, std::milli>(t1 - t0).count() / batches)
                  << '\n';
    } else {
        Model m = load_model(ckpt);
        const auto t0 = clock::now();
        const double acc = evaluate_dense(m, eval_set, s.batch, GateMode::bypass);
        const auto t1 = clock::now();
        const int batches = (eval_set.count + s.batch - 1) / s.batch;
        std::cout << "checkpoint: dense model\n"
                  << "eval accuracy: " << fmt(acc) << " over " << eval_set.count << " samples\n"
                  << "volume: " << full_volume(m) << '\n'
                  << "flops: " << full_flops(m) << '\n'
                  << "ms/batch: "
                  << fmt(std::chrono::duration<double, std::milli>(t1 - t0).count() / batches)
                  << '\n';
    }
    return 0;
}

// ----- sweep -----

int cmd_sweep(const GlobalOpts& g) {
    Settings s = load_settings(g, {"data.train_images", "data.train_labels", "data.eval_images",
                                   "data.eval_labels", "out.dir"});
    Dataset train = load_dataset(s.train_images, s.train_labels);
    Dataset eval_set = load_dataset(s.eval_images, s.eval_labels);
    Model teacher = load_model(join(s.out_dir, "teacher.ckpt"));
    LogitsCache cache = read_logits_cache(join(s.out_dir, "teacher_logits.bin"));

    const std::vector<double> fractions = {0.5, 0.25, 0.125, 0.0625};
    const std::vector<int> denominators = {2, 4, 8, 16};

    std::ofstream csv(join(s.out_dir, "sweep.csv"), std::ios::binary);
    if (!csv) throw std::runtime_error(join(s.out_dir, "sweep.csv") + ": cannot open for writing");
    csv << "method,budget_fraction,seed,status,volume,flops,volume_factor,flop_factor,accuracy\n";

    for (const std::string& method : s.sweep_methods) {
        BaselineResult baseline;
        if (method != "bar") {
            const BaselineKind kind =
                method == "wm" ? BaselineKind::weight_magnitude : BaselineKind::random;
            TrainConfig cfg = to_train_config(s);
            Rng rng(s.seed);
            try {
                baseline = baseline_prune(kind, teacher, train, eval_set, cfg, rng, 4);
            } catch (const std::exception& e) {
                std::cout << method << ": failed (" << e.what() << ")\n";
                for (double f : fractions)
                    csv << method << ',' << fmt(f) << ',' << s.seed << ",failed,,,,,\n";
                continue;
            }
        }
        for (std::size_t i = 0; i < fractions.size(); ++i) {
            const std::string tag = method + "_" + std::to_string(denominators[i]);
            try {
                CostReport rep;
                double acc = 0;
                if (method == "bar") {
                    TrainConfig cfg = to_train_config(s);
                    cfg.budget_fraction = fractions[i];
                    Rng rng(s.seed);
                    PruneResult res = bar_train(teacher.spec, train, eval_set, cache, cfg, rng);
                    save_pruned_graph(join(s.out_dir, "pruned_" + tag + ".ckpt"), res.graph);
                    res.log.write_csv(join(s.out_dir, "run_log_" + tag + ".csv"));
                    if (!res.budget_met)
                        throw BudgetError("final " + fmt(res.final_hard) + " exceeds budget " +
                                          fmt(res.budget));
                    rep = res.report;
                    acc = res.final_accuracy;
                } else {
                    BaselineRound& round = baseline.rounds.at(i);
                    save_pruned_graph(join(s.out_dir, "pruned_" + tag + ".ckpt"), round.graph);
                    rep = round.report;
                    acc = round.accuracy;
                }
                csv << method << ',' << fmt(fractions[i]) << ',' << s.seed << ",ok," << rep.volume
                    << ',' << rep.flops << ',' << fmt(rep.volume_factor) << ','
                    << fmt(rep.flop_factor) << ',' << fmt(acc) << '\n';
                csv.flush();
                std::cout << method << " @ 1/" << denominators[i] << ": accuracy " << fmt(acc)
                          << ", volume factor " << fmt(rep.volume_factor) << '\n';
            } catch (const std::exception& e) {
                csv << method << ',' << fmt(fractions[i]) << ',' << s.seed << ",failed,,,,,\n";
                csv.flush();
                std::cout << method << " @ 1/" << denominators[i] << ": failed (" << e.what()
                          << ")\n";
            }
        }
    }
    if (!csv) throw std::runtime_error("sweep.csv: write failed");
    std::cout << "wrote " << join(s.out_dir, "sweep.csv") << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"budget-aware structured channel pruning toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // accept the global options after the subcommand name too

    GlobalOpts g;
    app.add_option("--config", g.config_path, "configuration file (key = value lines)");
    auto* seed_opt = app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--out", g.out_dir, "override the output directory");
    app.add_flag("--force", g.force, "overwrite existing outputs");

    app.add_subcommand("gen-data", "generate the synthetic dataset files");
    app.add_subcommand("train-teacher", "train the dense teacher and cache its logits");
    auto* prune_cmd = app.add_subcommand("prune", "prune the teacher down to the budget");
    bool init_from_teacher = false;
    prune_cmd->add_flag("--init-from-teacher", init_from_teacher,
                        "start the gated network from the teacher weights");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved checkpoint");
    std::string ckpt;
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();
    app.add_subcommand("sweep", "run every configured method over the budget grid");

    try {
        app.parse(argc, argv);
        g.seed_given = seed_opt->count() > 0;
        const std::string sub = app.get_subcommands().front()->get_name();
        if (sub == "gen-data") return cmd_gen_data(g);
        if (sub == "train-teacher") return cmd_train_teacher(g);
        if (sub == "prune") return cmd_prune(g, init_from_teacher);
        if (sub == "eval") return cmd_eval(g, ckpt);
        return cmd_sweep(g);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << '\n';
        return 2;
    } catch (const BudgetError& e) {
        std::cerr << "budget error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
