#pragma once

// Run configuration documents (JSON). Parsing is strict: unknown keys, wrong
// types and bad enum values are rejected with the JSON path of the offender.
// Every omitted value takes the default training setup (Adam, lr 1e-2,
// batch 32, 50 epochs, weight decay 5e-4, Mixup alpha 0.2, RSC drop 1/3,
// remaining method weights 1).

#include "dgforge/harness.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace dgforge {

using json = nlohmann::json;

struct DataSource {
    std::optional<SynthConfig> synthetic;
    std::optional<std::filesystem::path> manifest;
    SampleShape input_shape = kSeedInputShape; // padding target for manifest data
};

struct RunConfig {
    DataSource data;
    ExperimentSpec experiment;
    std::vector<Method> methods;     // cells run by `benchmark`; defaults to the configured method
    std::vector<Baseline> baselines; // likewise for the baseline
    bool synthetic_seed_explicit = false;

    /// Applies a new master seed (also to the synthetic generator unless it
    /// pins its own).
    void set_seed(std::uint64_t seed) {
        experiment.seed = seed;
        if (data.synthetic && !synthetic_seed_explicit) {
            data.synthetic->seed = seed;
        }
    }
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(std::string path) : path_(std::move(path)) {}

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("config " + where() + ": " + msg); }

    std::string where() const { return path_.empty() ? "/" : path_; }

    ConfigReader child(const std::string& key) const { return ConfigReader(path_ + "/" + key); }

    void only_keys(const json& obj, std::initializer_list<const char*> allowed) const {
        if (!obj.is_object()) {
            fail("expected an object");
        }
        for (const auto& [key, _] : obj.items()) {
            bool ok = false;
            for (const char* a : allowed) {
                ok = ok || key == a;
            }
            if (!ok) {
                child(key).fail("unknown key '" + key + "'");
            }
        }
    }

    double number(const json& v) const {
        if (!v.is_number()) {
            fail("expected a number");
        }
        return v.get<double>();
    }

    std::size_t count(const json& v) const {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
            fail("expected a nonnegative integer");
        }
        return v.get<std::size_t>();
    }

    std::uint64_t u64(const json& v) const {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
            fail("expected a nonnegative integer");
        }
        return v.get<std::uint64_t>();
    }

    bool boolean(const json& v) const {
        if (!v.is_boolean()) {
            fail("expected true or false");
        }
        return v.get<bool>();
    }

    std::string string(const json& v) const {
        if (!v.is_string()) {
            fail("expected a string");
        }
        return v.get<std::string>();
    }

    std::vector<std::size_t> counts(const json& v) const {
        if (!v.is_array()) {
            fail("expected an array of integers");
        }
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            out.push_back(child(std::to_string(i)).count(v[i]));
        }
        return out;
    }

    SampleShape shape(const json& v) const {
        const auto dims = counts(v);
        if (dims.size() != 3 || dims[0] == 0 || dims[1] == 0 || dims[2] == 0) {
            fail("expected [channels, windows, bands] with positive entries");
        }
        return {dims[0], dims[1], dims[2]};
    }

    Method method(const json& v) const {
        const auto m = parse_method(string(v));
        if (!m) {
            fail("unknown method '" + v.get<std::string>() + "' (erm, mixup, group_dro, dann, ddc, coral, rsc)");
        }
        return *m;
    }

    Baseline baseline(const json& v) const {
        const auto b = parse_baseline(string(v));
        if (!b) {
            fail("unknown baseline '" + v.get<std::string>() + "' (mlp2, mlp3, mlp4, dbn)");
        }
        return *b;
    }

private:
    std::string path_;
};

template <class F>
void with_key(const json& obj, const ConfigReader& at, const char* key, F apply) {
    if (auto it = obj.find(key); it != obj.end()) {
        apply(at.child(key), *it);
    }
}

} // namespace detail

/// Builds a RunConfig from a parsed document. `base_dir` resolves relative
/// manifest paths; referenced files must exist.
inline RunConfig parse_config_json(const json& doc, const std::filesystem::path& base_dir = {}) {
    using detail::ConfigReader;
    using detail::with_key;
    const ConfigReader root("");
    root.only_keys(doc, {"seed", "data", "baseline", "method", "train", "benchmark"});
    RunConfig cfg;
    auto& ex = cfg.experiment;

    with_key(doc, root, "seed", [&](const ConfigReader& at, const json& v) { ex.seed = at.u64(v); });

    if (auto it = doc.find("data"); it != doc.end()) {
        const auto at = root.child("data");
        const json& d = *it;
        at.only_keys(d, {"synthetic", "manifest", "input_shape", "features"});
        if (d.contains("synthetic") && d.contains("manifest")) {
            at.fail("give exactly one of 'synthetic' or 'manifest'");
        }
        with_key(d, at, "synthetic", [&](const ConfigReader& sat, const json& s) {
            sat.only_keys(s, {"domains", "samples_per_class", "shape", "class_separation", "domain_shift", "mixing",
                              "noise", "seed"});
            SynthConfig sc;
            with_key(s, sat, "domains", [&](const ConfigReader& a, const json& v) { sc.domains = a.count(v); });
            with_key(s, sat, "samples_per_class",
                     [&](const ConfigReader& a, const json& v) { sc.samples_per_class = a.count(v); });
            with_key(s, sat, "shape", [&](const ConfigReader& a, const json& v) { sc.shape = a.shape(v); });
            with_key(s, sat, "class_separation",
                     [&](const ConfigReader& a, const json& v) { sc.class_separation = a.number(v); });
            with_key(s, sat, "domain_shift", [&](const ConfigReader& a, const json& v) { sc.domain_shift = a.number(v); });
            with_key(s, sat, "mixing", [&](const ConfigReader& a, const json& v) { sc.mixing = a.number(v); });
            with_key(s, sat, "noise", [&](const ConfigReader& a, const json& v) { sc.noise = a.number(v); });
            with_key(s, sat, "seed", [&](const ConfigReader& a, const json& v) {
                sc.seed = a.u64(v);
                cfg.synthetic_seed_explicit = true;
            });
            try {
                sc.validate();
            } catch (const ConfigError& e) {
                sat.fail(e.what());
            }
            cfg.data.synthetic = sc;
        });
        with_key(d, at, "manifest", [&](const ConfigReader& a, const json& v) {
            std::filesystem::path p(a.string(v));
            if (p.is_relative() && !base_dir.empty()) {
                p = base_dir / p;
            }
            if (!std::filesystem::exists(p)) {
                a.fail("manifest not found: " + p.string());
            }
            cfg.data.manifest = p;
        });
        with_key(d, at, "input_shape", [&](const ConfigReader& a, const json& v) { cfg.data.input_shape = a.shape(v); });
        with_key(d, at, "features", [&](const ConfigReader& a, const json& v) {
            const auto s = a.string(v);
            if (s == "pooled") {
                ex.features = FeatureMode::pooled;
            } else if (s == "full") {
                ex.features = FeatureMode::full;
            } else {
                a.fail("features must be 'pooled' or 'full'");
            }
        });
    }
    if (!cfg.data.synthetic && !cfg.data.manifest) {
        root.child("data").fail("a data source ('synthetic' or 'manifest') is required");
    }
    if (cfg.data.synthetic && !cfg.synthetic_seed_explicit) {
        cfg.data.synthetic->seed = ex.seed;
    }

    if (auto it = doc.find("baseline"); it != doc.end()) {
        const auto at = root.child("baseline");
        const json& b = *it;
        if (b.is_string()) {
            ex.baseline.kind = at.baseline(b);
        } else {
            at.only_keys(b, {"kind", "width", "hidden", "dbn_hidden", "pretrain_epochs", "pretrain_lr", "pretrain_batch"});
            auto& bs = ex.baseline;
            with_key(b, at, "kind", [&](const ConfigReader& a, const json& v) { bs.kind = a.baseline(v); });
            with_key(b, at, "width", [&](const ConfigReader& a, const json& v) { bs.width = a.count(v); });
            with_key(b, at, "hidden", [&](const ConfigReader& a, const json& v) { bs.hidden = a.counts(v); });
            with_key(b, at, "dbn_hidden", [&](const ConfigReader& a, const json& v) { bs.dbn_hidden = a.counts(v); });
            with_key(b, at, "pretrain_epochs",
                     [&](const ConfigReader& a, const json& v) { bs.pretrain_epochs = a.count(v); });
            with_key(b, at, "pretrain_lr", [&](const ConfigReader& a, const json& v) { bs.pretrain_lr = a.number(v); });
            with_key(b, at, "pretrain_batch",
                     [&](const ConfigReader& a, const json& v) { bs.pretrain_batch = a.count(v); });
        }
        try {
            ex.baseline.validate();
        } catch (const ConfigError& e) {
            at.fail(e.what());
        }
    }

    if (auto it = doc.find("method"); it != doc.end()) {
        const auto at = root.child("method");
        const json& m = *it;
        auto& mc = ex.method;
        if (m.is_string()) {
            mc.method = at.method(m);
        } else {
            at.only_keys(m, {"name", "mixup_alpha", "dro_eta", "dro_exact_max", "dann_lambda", "ddc_lambda",
                             "coral_weight", "rsc_drop_factor", "mmd_kernel", "rbf_bandwidth"});
            with_key(m, at, "name", [&](const ConfigReader& a, const json& v) { mc.method = a.method(v); });
            with_key(m, at, "mixup_alpha", [&](const ConfigReader& a, const json& v) { mc.mixup_alpha = a.number(v); });
            with_key(m, at, "dro_eta", [&](const ConfigReader& a, const json& v) { mc.dro_eta = a.number(v); });
            with_key(m, at, "dro_exact_max", [&](const ConfigReader& a, const json& v) { mc.dro_exact_max = a.boolean(v); });
            with_key(m, at, "dann_lambda", [&](const ConfigReader& a, const json& v) { mc.dann_lambda = a.number(v); });
            with_key(m, at, "ddc_lambda", [&](const ConfigReader& a, const json& v) { mc.ddc_lambda = a.number(v); });
            with_key(m, at, "coral_weight", [&](const ConfigReader& a, const json& v) { mc.coral_weight = a.number(v); });
            with_key(m, at, "rsc_drop_factor",
                     [&](const ConfigReader& a, const json& v) { mc.rsc_drop_factor = a.number(v); });
            with_key(m, at, "mmd_kernel", [&](const ConfigReader& a, const json& v) {
                const auto k = a.string(v);
                if (k == "linear") {
                    mc.kernel.kind = MmdKernel::Kind::linear;
                } else if (k == "rbf") {
                    mc.kernel.kind = MmdKernel::Kind::rbf;
                } else {
                    a.fail("mmd_kernel must be 'linear' or 'rbf'");
                }
            });
            with_key(m, at, "rbf_bandwidth", [&](const ConfigReader& a, const json& v) { mc.kernel.bandwidth = a.number(v); });
        }
        try {
            mc.validate();
        } catch (const ConfigError& e) {
            at.fail(e.what());
        }
    }

    if (auto it = doc.find("train"); it != doc.end()) {
        const auto at = root.child("train");
        const json& t = *it;
        at.only_keys(t, {"learning_rate", "batch_size", "epochs", "weight_decay", "beta1", "beta2", "epsilon"});
        auto& tc = ex.train;
        with_key(t, at, "learning_rate", [&](const ConfigReader& a, const json& v) { tc.learning_rate = a.number(v); });
        with_key(t, at, "batch_size", [&](const ConfigReader& a, const json& v) { tc.batch_size = a.count(v); });
        with_key(t, at, "epochs", [&](const ConfigReader& a, const json& v) { tc.epochs = a.count(v); });
        with_key(t, at, "weight_decay", [&](const ConfigReader& a, const json& v) { tc.weight_decay = a.number(v); });
        with_key(t, at, "beta1", [&](const ConfigReader& a, const json& v) { tc.beta1 = a.number(v); });
        with_key(t, at, "beta2", [&](const ConfigReader& a, const json& v) { tc.beta2 = a.number(v); });
        with_key(t, at, "epsilon", [&](const ConfigReader& a, const json& v) { tc.epsilon = a.number(v); });
        try {
            tc.validate();
        } catch (const ConfigError& e) {
            at.fail(e.what());
        }
    }

    if (auto it = doc.find("benchmark"); it != doc.end()) {
        const auto at = root.child("benchmark");
        at.only_keys(*it, {"methods", "baselines"});
        with_key(*it, at, "methods", [&](const ConfigReader& a, const json& v) {
            if (!v.is_array() || v.empty()) {
                a.fail("expected a non-empty array of method names");
            }
            for (std::size_t i = 0; i < v.size(); ++i) {
                cfg.methods.push_back(a.child(std::to_string(i)).method(v[i]));
            }
        });
        with_key(*it, at, "baselines", [&](const ConfigReader& a, const json& v) {
            if (!v.is_array() || v.empty()) {
                a.fail("expected a non-empty array of baseline names");
            }
            for (std::size_t i = 0; i < v.size(); ++i) {
                cfg.baselines.push_back(a.child(std::to_string(i)).baseline(v[i]));
            }
        });
    }
    if (cfg.methods.empty()) {
        cfg.methods.push_back(ex.method.method);
    }
    if (cfg.baselines.empty()) {
        cfg.baselines.push_back(ex.baseline.kind);
    }
    return cfg;
}

/// Reads and validates a config file; relative paths resolve against its directory.
inline RunConfig parse_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("config file not found: " + path.string());
    }
    json doc;
    try {
        doc = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": invalid JSON: " + e.what());
    }
    return parse_config_json(doc, path.parent_path());
}

/// Fully resolved configuration, defaults included.
inline json config_to_json(const RunConfig& cfg) {
    const auto& ex = cfg.experiment;
    json data;
    if (cfg.data.synthetic) {
        const auto& s = *cfg.data.synthetic;
        data["synthetic"] = {{"domains", s.domains},
                             {"samples_per_class", s.samples_per_class},
                             {"shape", {s.shape.channels, s.shape.windows, s.shape.bands}},
                             {"class_separation", s.class_separation},
                             {"domain_shift", s.domain_shift},
                             {"mixing", s.mixing},
                             {"noise", s.noise},
                             {"seed", s.seed}};
    }
    if (cfg.data.manifest) {
        data["manifest"] = cfg.data.manifest->generic_string();
        data["input_shape"] = {cfg.data.input_shape.channels, cfg.data.input_shape.windows, cfg.data.input_shape.bands};
    }
    data["features"] = ex.features == FeatureMode::pooled ? "pooled" : "full";
    json methods = json::array();
    for (auto m : cfg.methods) {
        methods.push_back(std::string(method_id(m)));
    }
    json baselines = json::array();
    for (auto b : cfg.baselines) {
        baselines.push_back(std::string(baseline_id(b)));
    }
    const auto& b = ex.baseline;
    const auto& m = ex.method;
    const auto& t = ex.train;
    return {{"seed", ex.seed},
            {"data", data},
            {"baseline",
             {{"kind", std::string(baseline_id(b.kind))},
              {"width", b.width},
              {"hidden", b.hidden},
              {"dbn_hidden", b.dbn_hidden},
              {"pretrain_epochs", b.pretrain_epochs},
              {"pretrain_lr", b.pretrain_lr},
              {"pretrain_batch", b.pretrain_batch}}},
            {"method",
             {{"name", std::string(method_id(m.method))},
              {"mixup_alpha", m.mixup_alpha},
              {"dro_eta", m.dro_eta},
              {"dro_exact_max", m.dro_exact_max},
              {"dann_lambda", m.dann_lambda},
              {"ddc_lambda", m.ddc_lambda},
              {"coral_weight", m.coral_weight},
              {"rsc_drop_factor", m.rsc_drop_factor},
              {"mmd_kernel", m.kernel.kind == MmdKernel::Kind::linear ? "linear" : "rbf"},
              {"rbf_bandwidth", m.kernel.bandwidth}}},
            {"train",
             {{"learning_rate", t.learning_rate},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"weight_decay", t.weight_decay},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"epsilon", t.epsilon}}},
            {"benchmark", {{"methods", methods}, {"baselines", baselines}}}};
}

/// Loads or generates the configured domains.
inline std::vector<Domain> load_data(const RunConfig& cfg) {
    if (cfg.data.synthetic) {
        return synth_generate(*cfg.data.synthetic);
    }
    return load_domains(*cfg.data.manifest, cfg.data.input_shape);
}

/// Sweep grid document: {"epochs": [...], "batch_sizes": [...], "methods": [...], "baselines": [...]}.
/// Omitted axes keep SweepGrid's defaults.
inline SweepGrid parse_grid_json(const json& doc) {
    using detail::ConfigReader;
    using detail::with_key;
    const ConfigReader root("");
    root.only_keys(doc, {"epochs", "batch_sizes", "methods", "baselines"});
    SweepGrid g;
    with_key(doc, root, "epochs", [&](const ConfigReader& a, const json& v) { g.epochs = a.counts(v); });
    with_key(doc, root, "batch_sizes", [&](const ConfigReader& a, const json& v) { g.batch_sizes = a.counts(v); });
    with_key(doc, root, "methods", [&](const ConfigReader& a, const json& v) {
        if (!v.is_array()) {
            a.fail("expected an array of method names");
        }
        g.methods.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            g.methods.push_back(a.child(std::to_string(i)).method(v[i]));
        }
    });
    with_key(doc, root, "baselines", [&](const ConfigReader& a, const json& v) {
        if (!v.is_array()) {
            a.fail("expected an array of baseline names");
        }
        g.baselines.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            g.baselines.push_back(a.child(std::to_string(i)).baseline(v[i]));
        }
    });
    if (g.epochs.empty() || g.batch_sizes.empty() || g.methods.empty() || g.baselines.empty()) {
        throw ConfigError("grid: every axis must be non-empty");
    }
    for (auto e : g.epochs) {
        if (e == 0) {
            throw ConfigError("grid /epochs: entries must be >= 1");
        }
    }
    for (auto b : g.batch_sizes) {
        if (b == 0) {
            throw ConfigError("grid /batch_sizes: entries must be >= 1");
        }
    }
    return g;
}

inline SweepGrid parse_grid(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("grid file not found: " + path.string());
    }
    try {
        return parse_grid_json(json::parse(io::read_file(path)));
    } catch (const json::parse_error& e) {
        throw ConfigError("grid " + path.string() + ": invalid JSON: " + e.what());
    }
}

} // namespace dgforge
