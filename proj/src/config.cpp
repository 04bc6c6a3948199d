#include "bar/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "bar/errors.hpp"

namespace bar {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void fail_at(const RawConfig& raw, int line, const std::string& msg) {
    throw ConfigError(raw.source + ":" + std::to_string(line) + ": " + msg);
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "seed",
        "out.dir",
        "data.train_images",
        "data.train_labels",
        "data.eval_images",
        "data.eval_labels",
        "gen.train_count",
        "gen.eval_count",
        "gen.height",
        "gen.width",
        "gen.channels",
        "gen.classes",
        "gen.amplitude",
        "gen.noise",
        "net.stages",
        "net.stem",
        "net.kernel",
        "net.classes",
        "net.in_h",
        "net.in_w",
        "net.in_channels",
        "teacher.epochs_hi",
        "teacher.epochs_lo",
        "teacher.lr_hi",
        "teacher.lr_lo",
        "train.batch",
        "train.epochs1",
        "train.epochs2",
        "train.epochs3",
        "train.lr1",
        "train.lr2",
        "train.lr3",
        "train.weight_decay",
        "train.eval_every",
        "loss.kd_alpha",
        "loss.kd_temperature",
        "loss.lambda",
        "budget.fraction",
        "budget.metric",
        "budget.schedule",
        "budget.sigmoid_d",
        "method",
        "baseline.epochs_hi",
        "baseline.epochs_lo",
        "sweep.methods",
    };
    return keys;
}

/// Typed reads over the raw map. Each getter fully consumes the value text
/// or fails with the key's line number.
struct Reader {
    const RawConfig& raw;

    [[nodiscard]] bool has(const std::string& key) const {
        return raw.entries.count(key) != 0;
    }

    std::string str(const std::string& key, const std::string& dflt) const {
        auto it = raw.entries.find(key);
        return it == raw.entries.end() ? dflt : it->second.value;
    }

    long long integer(const std::string& key, long long dflt) const {
        auto it = raw.entries.find(key);
        if (it == raw.entries.end()) return dflt;
        const std::string& v = it->second.value;
        long long out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size())
            fail_at(raw, it->second.line, "key '" + key + "' needs an integer, got '" + v + "'");
        return out;
    }

    double real(const std::string& key, double dflt) const {
        auto it = raw.entries.find(key);
        if (it == raw.entries.end()) return dflt;
        const std::string& v = it->second.value;
        try {
            std::size_t pos = 0;
            const double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            fail_at(raw, it->second.line, "key '" + key + "' needs a number, got '" + v + "'");
        }
    }

    [[noreturn]] void bad(const std::string& key, const std::string& msg) const {
        auto it = raw.entries.find(key);
        fail_at(raw, it == raw.entries.end() ? 0 : it->second.line, "key '" + key + "' " + msg);
    }
};

int positive_int(const Reader& r, const std::string& key, int dflt) {
    const long long v = r.integer(key, dflt);
    if (v < 1 || v > 1'000'000'000) r.bad(key, "must be a positive integer");
    return static_cast<int>(v);
}

}  // namespace

RawConfig parse_config_text(const std::string& text, const std::string& source) {
    RawConfig raw;
    raw.source = source;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            fail_at(raw, lineno, "expected 'key = value', got '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) fail_at(raw, lineno, "empty key");
        if (raw.entries.count(key))
            fail_at(raw, lineno, "duplicate key '" + key + "' (first set on line " +
                                     std::to_string(raw.entries[key].line) + ")");
        raw.entries[key] = {value, lineno};
    }
    return raw;
}

RawConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path + ": cannot open config file");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::vector<StageSpec> parse_stages(const std::string& text) {
    std::vector<StageSpec> stages;
    std::istringstream is(text);
    std::string part;
    while (std::getline(is, part, ',')) {
        part = trim(part);
        StageSpec st;
        char x = 0, s = 0;
        std::istringstream ps(part);
        if (!(ps >> st.width >> x >> st.num_blocks >> s >> st.stride) || x != 'x' || s != 's' ||
            ps.peek() != std::istringstream::traits_type::eof())
            throw std::invalid_argument("stage '" + part +
                                        "' does not match WIDTHxBLOCKSsSTRIDE (e.g. 16x2s2)");
        stages.push_back(st);
    }
    if (stages.empty()) throw std::invalid_argument("no stages given");
    return stages;
}

void require_keys(const RawConfig& raw, const std::vector<std::string>& keys) {
    std::string missing;
    for (const auto& k : keys)
        if (!raw.entries.count(k)) missing += missing.empty() ? k : ", " + k;
    if (!missing.empty())
        throw ConfigError(raw.source + ": missing required key(s): " + missing);
}

Settings make_settings(const RawConfig& raw) {
    for (const auto& [key, entry] : raw.entries)
        if (!known_keys().count(key))
            fail_at(raw, entry.line, "unknown key '" + key + "'");

    const Reader r{raw};
    Settings s;
    {
        const long long seed = r.integer("seed", 1);
        if (seed < 0) r.bad("seed", "must be non-negative");
        s.seed = static_cast<std::uint64_t>(seed);
    }
    s.out_dir = r.str("out.dir", "");
    s.train_images = r.str("data.train_images", "");
    s.train_labels = r.str("data.train_labels", "");
    s.eval_images = r.str("data.eval_images", "");
    s.eval_labels = r.str("data.eval_labels", "");

    s.gen.count = positive_int(r, "gen.train_count", s.gen.count);
    s.gen_eval_count = positive_int(r, "gen.eval_count", s.gen_eval_count);
    s.gen.height = positive_int(r, "gen.height", s.gen.height);
    s.gen.width = positive_int(r, "gen.width", s.gen.width);
    s.gen.channels = positive_int(r, "gen.channels", s.gen.channels);
    s.gen.classes = positive_int(r, "gen.classes", s.gen.classes);
    s.gen.amplitude = r.real("gen.amplitude", s.gen.amplitude);
    s.gen.noise = r.real("gen.noise", s.gen.noise);
    if (s.gen.amplitude <= 0 || s.gen.amplitude > 1) r.bad("gen.amplitude", "must lie in (0,1]");
    if (s.gen.noise < 0) r.bad("gen.noise", "must be non-negative");

    if (r.has("net.stages")) {
        try {
            s.net.stages = parse_stages(r.str("net.stages", ""));
        } catch (const std::invalid_argument& e) {
            r.bad("net.stages", e.what());
        }
    }
    s.net.stem_channels = positive_int(r, "net.stem", s.net.stem_channels);
    s.net.kernel = positive_int(r, "net.kernel", s.net.kernel);
    s.net.num_classes = positive_int(r, "net.classes", s.net.num_classes);
    s.net.in_h = positive_int(r, "net.in_h", s.net.in_h);
    s.net.in_w = positive_int(r, "net.in_w", s.net.in_w);
    s.net.in_channels = positive_int(r, "net.in_channels", s.net.in_channels);
    try {
        s.net.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(raw.source + ": " + e.what());
    }

    s.teacher_epochs_hi = positive_int(r, "teacher.epochs_hi", s.teacher_epochs_hi);
    s.teacher_epochs_lo = positive_int(r, "teacher.epochs_lo", s.teacher_epochs_lo);
    s.teacher_lr_hi = r.real("teacher.lr_hi", s.teacher_lr_hi);
    s.teacher_lr_lo = r.real("teacher.lr_lo", s.teacher_lr_lo);

    s.batch = positive_int(r, "train.batch", s.batch);
    s.epochs1 = positive_int(r, "train.epochs1", s.epochs1);
    s.epochs2 = positive_int(r, "train.epochs2", s.epochs2);
    s.epochs3 = positive_int(r, "train.epochs3", s.epochs3);
    s.lr1 = r.real("train.lr1", s.lr1);
    s.lr2 = r.real("train.lr2", s.lr2);
    s.lr3 = r.real("train.lr3", s.lr3);
    s.weight_decay = r.real("train.weight_decay", s.weight_decay);
    s.eval_every = positive_int(r, "train.eval_every", s.eval_every);
    for (const char* k : {"teacher.lr_hi", "teacher.lr_lo", "train.lr1", "train.lr2", "train.lr3"}) {
        const double v = r.real(k, 1e-3);
        if (!(v > 0)) r.bad(k, "must be positive");
    }
    if (s.weight_decay < 0) r.bad("train.weight_decay", "must be non-negative");

    s.kd_alpha = r.real("loss.kd_alpha", s.kd_alpha);
    s.kd_temperature = r.real("loss.kd_temperature", s.kd_temperature);
    s.lambda = r.real("loss.lambda", s.lambda);
    if (s.kd_alpha < 0 || s.kd_alpha > 1) r.bad("loss.kd_alpha", "must lie in [0,1]");
    if (!(s.kd_temperature > 0)) r.bad("loss.kd_temperature", "must be positive");
    if (s.lambda < 0) r.bad("loss.lambda", "must be non-negative");

    s.budget_fraction = r.real("budget.fraction", s.budget_fraction);
    if (!(s.budget_fraction > 0) || !(s.budget_fraction < 1))
        r.bad("budget.fraction", "must lie in (0,1)");
    {
        const std::string m = r.str("budget.metric", "volume");
        if (m == "volume") s.metric = BudgetMetric::volume;
        else if (m == "flop") s.metric = BudgetMetric::flop;
        else r.bad("budget.metric", "must be 'volume' or 'flop', got '" + m + "'");
        const std::string sch = r.str("budget.schedule", "sigmoid");
        if (sch == "linear") s.schedule = ScheduleKind::linear;
        else if (sch == "exp") s.schedule = ScheduleKind::exponential;
        else if (sch == "sigmoid") s.schedule = ScheduleKind::sigmoid;
        else r.bad("budget.schedule", "must be 'linear', 'exp' or 'sigmoid', got '" + sch + "'");
    }
    s.sigmoid_d = r.real("budget.sigmoid_d", s.sigmoid_d);
    if (!(s.sigmoid_d > 0)) r.bad("budget.sigmoid_d", "must be positive");

    s.method = r.str("method", s.method);
    if (s.method != "bar" && s.method != "random" && s.method != "wm")
        r.bad("method", "must be 'bar', 'random' or 'wm', got '" + s.method + "'");
    s.baseline_epochs_hi = positive_int(r, "baseline.epochs_hi", s.baseline_epochs_hi);
    s.baseline_epochs_lo = positive_int(r, "baseline.epochs_lo", s.baseline_epochs_lo);

    if (r.has("sweep.methods")) {
        s.sweep_methods.clear();
        std::istringstream is(r.str("sweep.methods", ""));
        std::string part;
        while (std::getline(is, part, ',')) {
            part = trim(part);
            if (part.empty()) continue;
            if (part != "bar" && part != "random" && part != "wm")
                r.bad("sweep.methods", "contains unknown method '" + part + "'");
            s.sweep_methods.push_back(part);
        }
        if (s.sweep_methods.empty()) r.bad("sweep.methods", "lists no methods");
    }
    return s;
}

}  // namespace bar
