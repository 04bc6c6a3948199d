#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bar/config.hpp"
#include "bar/dataset.hpp"
#include "bar/errors.hpp"
#include "bar/netgraph.hpp"
#include "bar/serialize.hpp"
#include "bar/trainer.hpp"
#include "doctest.h"

using namespace bar;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("bar_test_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoints round-trip arrays and rewrite byte-identically") {
    NamedArray a = NamedArray::floats("weights", {2, 3}, {1.5f, -2.0f, 0.0f, 4.25f, 1e-7f, 9.0f});
    NamedArray b = NamedArray::words("indices", {4}, {0u, 7u, 42u, 0xffffffffu});
    const std::string p1 = tmp_path("ckpt_a.bin"), p2 = tmp_path("ckpt_b.bin");
    write_checkpoint(p1, {a, b});
    const auto back = read_checkpoint(p1);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "weights");
    CHECK(back[0].dims == std::vector<std::uint32_t>{2, 3});
    CHECK(back[0].f32 == a.f32);
    CHECK(back[1].name == "indices");
    CHECK(back[1].u32 == b.u32);
    write_checkpoint(p2, back);
    CHECK(slurp(p1) == slurp(p2));
    CHECK_THROWS_AS(write_checkpoint(p1, {a, a}), std::invalid_argument);  // duplicate names
}

TEST_CASE("any single corrupted bit in a checkpoint is detected") {
    NamedArray a = NamedArray::floats("w", {8}, std::vector<float>(8, 0.25f));
    const std::string p = tmp_path("ckpt_corrupt.bin");
    write_checkpoint(p, {a});
    const std::string good = slurp(p);
    for (std::size_t pos : {std::size_t{0}, good.size() / 3, good.size() / 2, good.size() - 1}) {
        std::string bad = good;
        bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
        spit(p, bad);
        CHECK_THROWS_AS(read_checkpoint(p), IntegrityError);
    }
    spit(p, good.substr(0, good.size() - 3));  // truncation
    CHECK_THROWS_AS(read_checkpoint(p), IntegrityError);
    spit(p, good + "x");  // trailing garbage breaks the checksum
    CHECK_THROWS_AS(read_checkpoint(p), IntegrityError);
    CHECK_THROWS_AS(read_checkpoint(tmp_path("missing_file.bin")), IntegrityError);
}

TEST_CASE("logits caches round-trip and reject corruption") {
    LogitsCache cache;
    cache.n = 3;
    cache.c = 4;
    for (int i = 0; i < 12; ++i) cache.logits.push_back(0.5f * static_cast<float>(i) - 2.0f);
    const std::string p = tmp_path("logits.bin");
    write_logits_cache(p, cache);
    const LogitsCache back = read_logits_cache(p);
    CHECK(back.n == 3);
    CHECK(back.c == 4);
    CHECK(back.logits == cache.logits);
    const std::string p2 = tmp_path("logits2.bin");
    write_logits_cache(p2, back);
    CHECK(slurp(p) == slurp(p2));

    std::string bad = slurp(p);
    bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x01);
    spit(p, bad);
    CHECK_THROWS_AS(read_logits_cache(p), IntegrityError);
}

TEST_CASE("dense models survive a save/load round trip bit-exactly") {
    Rng rng(41);
    Model m = build_network<float>(NetworkSpec::toy_default(), rng);
    for (auto& u : m.convs) {
        for (auto& v : u.bn_rmean) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (auto& v : u.bn_rvar) v = static_cast<float>(rng.uniform(0.5, 2.0));
        for (auto& v : u.gate.log_alpha) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    }
    const std::string p = tmp_path("model.ckpt");
    save_model(p, m);
    CHECK_FALSE(checkpoint_holds_pruned_graph(p));
    Model back = load_model(p);
    REQUIRE(back.convs.size() == m.convs.size());
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        CHECK(back.convs[i].w.data == m.convs[i].w.data);
        CHECK(back.convs[i].bn_gamma.data == m.convs[i].bn_gamma.data);
        CHECK(back.convs[i].bn_rmean == m.convs[i].bn_rmean);
        CHECK(back.convs[i].bn_rvar == m.convs[i].bn_rvar);
        CHECK(back.convs[i].gate.log_alpha == m.convs[i].gate.log_alpha);
        CHECK(back.convs[i].gate.clamp_protect == m.convs[i].gate.clamp_protect);
    }
    CHECK(back.fc_w.data == m.fc_w.data);
    CHECK(back.fc_b.data == m.fc_b.data);
    const std::string p2 = tmp_path("model2.ckpt");
    save_model(p2, back);
    CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("pruned graphs reload with identical behaviour and bytes") {
    Rng rng(42);
    Model m = build_network<float>(NetworkSpec::toy_default(), rng);
    for (auto& u : m.convs)
        for (auto& v : u.gate.log_alpha) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    PrunedGraph g = hard_prune(m);
    const std::string p = tmp_path("pruned.ckpt");
    save_pruned_graph(p, g);
    CHECK(checkpoint_holds_pruned_graph(p));
    PrunedGraph back = load_pruned_graph(p);
    CHECK(back.full_volume_ == g.full_volume_);
    CHECK(back.final_channels == g.final_channels);
    REQUIRE(back.blocks.size() == g.blocks.size());
    for (std::size_t i = 0; i < g.blocks.size(); ++i) {
        CHECK(back.blocks[i].out_set == g.blocks[i].out_set);
        CHECK(back.blocks[i].carry_pos == g.blocks[i].carry_pos);
        CHECK(back.blocks[i].res_pos == g.blocks[i].res_pos);
        CHECK(back.blocks[i].delta_pos == g.blocks[i].delta_pos);
    }
    Tensor x({2, 3, 16, 16});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    CHECK(forward_pruned(g, x).data == forward_pruned(back, x).data);
    const std::string p2 = tmp_path("pruned2.ckpt");
    save_pruned_graph(p2, back);
    CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("dataset files round-trip and malformed headers are rejected") {
    GenSpec spec;
    spec.count = 8;
    spec.height = 6;
    spec.width = 5;
    spec.channels = 2;
    spec.classes = 4;
    Rng rng(43);
    Dataset ds = generate_dataset(spec, rng);
    REQUIRE(ds.count == 8);
    for (int i = 0; i < 8; ++i) CHECK(ds.labels[static_cast<std::size_t>(i)] == i % 4);

    const std::string pi = tmp_path("imgs.idx"), pl = tmp_path("lbls.idx");
    write_images_file(pi, ds);
    write_labels_file(pl, ds);
    Dataset back = load_dataset(pi, pl);
    CHECK(back.images == ds.images);
    CHECK(back.labels == ds.labels);
    CHECK(back.h == 6);
    CHECK(back.w == 5);
    CHECK(back.c == 2);
    const std::string pi2 = tmp_path("imgs2.idx");
    write_images_file(pi2, back);
    CHECK(slurp(pi) == slurp(pi2));

    std::string bad = slurp(pi);
    bad[2] = static_cast<char>(bad[2] ^ 0x04);  // magic
    spit(pi2, bad);
    CHECK_THROWS_AS(load_dataset(pi2, pl), IntegrityError);
    spit(pi2, slurp(pi).substr(0, 30));  // truncated payload
    CHECK_THROWS_AS(load_dataset(pi2, pl), IntegrityError);
    spit(pi2, slurp(pi) + "z");  // trailing bytes
    CHECK_THROWS_AS(load_dataset(pi2, pl), IntegrityError);

    // label/image count mismatch across the pair
    GenSpec small = spec;
    small.count = 4;
    Rng rng2(44);
    Dataset tiny = generate_dataset(small, rng2);
    const std::string pl2 = tmp_path("lbls2.idx");
    write_labels_file(pl2, tiny);
    CHECK_THROWS_AS(load_dataset(pi, pl2), IntegrityError);
}

TEST_CASE("dataset generation validates its parameters") {
    Rng rng(45);
    GenSpec bad;
    bad.count = 10;  // not divisible by classes = 4
    CHECK_THROWS_AS(generate_dataset(bad, rng), std::invalid_argument);
    bad = GenSpec{};
    bad.classes = 1;
    CHECK_THROWS_AS(generate_dataset(bad, rng), std::invalid_argument);
    bad = GenSpec{};
    bad.amplitude = 0.0;
    CHECK_THROWS_AS(generate_dataset(bad, rng), std::invalid_argument);
}

TEST_CASE("config files parse, default, and reject unknown or duplicate keys") {
    const std::string text =
        "# toy run\n"
        "seed = 9\n"
        "out.dir = /tmp/run\n"
        "train.batch = 32\n"
        "loss.kd_alpha = 0.5\n"
        "budget.fraction = 0.25\n"
        "budget.schedule = linear\n"
        "net.stages = 8x1s2,16x2s1\n"
        "sweep.methods = bar, random\n";
    Settings s = make_settings(parse_config_text(text, "inline"));
    CHECK(s.seed == 9);
    CHECK(s.out_dir == "/tmp/run");
    CHECK(s.batch == 32);
    CHECK(s.kd_alpha == 0.5);
    CHECK(s.budget_fraction == 0.25);
    CHECK(s.schedule == ScheduleKind::linear);
    REQUIRE(s.net.stages.size() == 2);
    CHECK(s.net.stages[0].width == 8);
    CHECK(s.net.stages[0].num_blocks == 1);
    CHECK(s.net.stages[0].stride == 2);
    CHECK(s.net.stages[1].stride == 1);
    CHECK(s.sweep_methods == std::vector<std::string>{"bar", "random"});
    // untouched keys keep their defaults
    CHECK(s.epochs1 == 20);
    CHECK(s.lambda == 1e-5);
    CHECK(s.metric == BudgetMetric::volume);

    CHECK_THROWS_WITH_AS(make_settings(parse_config_text("no.such.key = 1\n", "inline")),
                         doctest::Contains("inline:1"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("seed = 1\nseed = 2\n", "inline"), ConfigError);
    CHECK_THROWS_AS(make_settings(parse_config_text("train.batch = zero\n", "inline")),
                    ConfigError);
    CHECK_THROWS_AS(make_settings(parse_config_text("budget.fraction = 1.5\n", "inline")),
                    ConfigError);
    CHECK_THROWS_AS(make_settings(parse_config_text("budget.metric = bytes\n", "inline")),
                    ConfigError);
    CHECK_THROWS_AS(make_settings(parse_config_text("net.stages = 8y1s2\n", "inline")),
                    ConfigError);

    RawConfig raw = parse_config_text("seed = 1\n", "inline");
    CHECK_THROWS_WITH_AS(require_keys(raw, {"out.dir", "data.train_images"}),
                         doctest::Contains("out.dir"), ConfigError);
}

TEST_CASE("run logs write stable csv bytes and enforce step order") {
    RunLog log;
    StepRecord r;
    r.step = 0;
    r.phase = 1;
    r.progress = 0.0;
    r.upper_b = 13056.0;
    r.hard_volume = 13056;
    r.hard_flops = 1765376;
    r.hard_ce = 1.25;
    r.soft_ce = 0.5;
    r.kd = 0.625;
    r.expected_cost = 12000.5;
    r.factor = 0.0;
    r.bar = 0.0;
    r.total = 0.625;
    r.violated = true;
    log.append(r);
    StepRecord r2 = r;
    r2.step = 1;
    r2.violated = false;
    r2.eval_acc = 0.75;
    log.append(r2);
    StepRecord stale = r;
    CHECK_THROWS_AS(log.append(stale), std::invalid_argument);

    const std::string p = tmp_path("log.csv");
    log.write_csv(p);
    const std::string want =
        "step,phase,progress,b,volume,flops,hard_ce,soft_ce,kd,expected_cost,factor,bar,total,"
        "violated,eval_acc\n"
        "0,1,0,13056,13056,1765376,1.25,0.5,0.625,12000.5,0,0,0.625,1,\n"
        "1,1,0,13056,13056,1765376,1.25,0.5,0.625,12000.5,0,0,0.625,0,0.75\n";
    CHECK(slurp(p) == want);
    const std::string p2 = tmp_path("log2.csv");
    log.write_csv(p2);
    CHECK(slurp(p) == slurp(p2));
}
