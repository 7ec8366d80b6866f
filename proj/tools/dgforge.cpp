// dgforge command-line front end.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

#include "dgforge/checkpoint.hpp"
#include "dgforge/config.hpp"
#include "dgforge/report.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace dgforge;

namespace {

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("dgforge");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S] [%l] %v");
    std::string level = "info";
    if (const char* env = std::getenv("DG_FORGE_LOG")) {
        level = env;
    }
    if (level == "error") {
        spdlog::set_level(spdlog::level::err);
    } else if (level == "warn") {
        spdlog::set_level(spdlog::level::warn);
    } else if (level == "debug") {
        spdlog::set_level(spdlog::level::debug);
    } else {
        if (level != "info") {
            spdlog::warn("DG_FORGE_LOG='{}' not recognized, using info", level);
        }
        spdlog::set_level(spdlog::level::info);
    }
}

LogFn debug_log() {
    return [](const std::string& msg) { spdlog::debug("{}", msg); };
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

json read_json(const fs::path& path) {
    try {
        return json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw LoadError(path.string() + ": invalid JSON: " + e.what());
    }
}

struct Globals {
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

RunConfig load_config(const fs::path& path, const Globals& g) {
    RunConfig cfg = parse_config(path);
    if (g.seed) {
        cfg.set_seed(*g.seed);
    }
    return cfg;
}

json run_metadata(const Globals& g) { return {{"created_at", utc_timestamp()}, {"jobs", g.jobs}}; }

int cmd_gen_synthetic(const fs::path& config, const fs::path& out, const Globals& g) {
    const RunConfig cfg = load_config(config, g);
    if (!cfg.data.synthetic) {
        throw ConfigError("gen-synthetic: config " + config.string() + " has no data/synthetic section");
    }
    const auto domains = synth_generate(*cfg.data.synthetic);
    const auto manifest = write_dataset(domains, out);

    // A ready-to-run config over the written dataset.
    json derived = config_to_json(cfg);
    const auto shape = cfg.data.synthetic->shape;
    derived["data"] = {{"manifest", "manifest.csv"},
                       {"input_shape", {shape.channels, shape.windows, shape.bands}},
                       {"features", derived["data"]["features"]}};
    io::atomic_write(out / "config.json", pretty(derived));
    spdlog::info("wrote {} subjects to {}", domains.size(), manifest.string());
    return 0;
}

int cmd_train(const fs::path& config, const fs::path& out, int target_subject, const Globals& g) {
    const RunConfig cfg = load_config(config, g);
    const auto domains = load_data(cfg);
    std::optional<std::size_t> index;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        if (domains[i].subject == target_subject) {
            index = i;
        }
    }
    if (!index) {
        throw ConfigError("train: no subject " + std::to_string(target_subject) + " in the dataset");
    }
    const auto folds = loso_folds(domains.size());
    spdlog::info("training {} / {} with subject {} held out", baseline_id(cfg.experiment.baseline.kind),
                 method_id(cfg.experiment.method.method), target_subject);
    const auto outcome = train_fold(domains, folds[*index], *index, cfg.experiment, debug_log());
    const json conf = config_to_json(cfg);
    const json doc{{"format", kFoldFormat},
                   {"config_fingerprint", fingerprint(conf)},
                   {"config", conf},
                   {"fold", fold_to_json(outcome.result)},
                   {"metadata", run_metadata(g)}};
    io::atomic_write(out / "fold.json", pretty(doc));
    save_checkpoint(out / "model.dgfm", outcome.selected);
    spdlog::info("subject {}: target accuracy {:.4f} (best epoch {})", target_subject, outcome.result.target_accuracy,
                 outcome.result.best_epoch);
    return 0;
}

int cmd_benchmark(const fs::path& config, const fs::path& out, const Globals& g) {
    const RunConfig cfg = load_config(config, g);
    const auto domains = load_data(cfg);
    std::vector<FoldResult> all;
    for (Baseline b : cfg.baselines) {
        for (Method m : cfg.methods) {
            ExperimentSpec spec = cfg.experiment;
            if (spec.baseline.kind != b) {
                spec.baseline.hidden.clear();
            }
            spec.baseline.kind = b;
            spec.method.method = m;
            spdlog::info("benchmark {} / {} over {} folds", baseline_id(b), method_id(m), domains.size());
            auto results = run_loso(domains, spec, g.jobs, debug_log());
            all.insert(all.end(), results.begin(), results.end());
        }
    }
    const auto report = aggregate(all);
    io::atomic_write(out / "report.json", pretty(report_to_json(report, config_to_json(cfg), run_metadata(g))));
    std::cout << render_markdown(report);
    return 0;
}

int cmd_sweep(const fs::path& config, const fs::path& grid_path, const fs::path& out, const Globals& g) {
    const RunConfig cfg = load_config(config, g);
    const SweepGrid grid = parse_grid(grid_path);
    const auto domains = load_data(cfg);
    const auto records = sweep(domains, cfg.experiment, grid, g.jobs, debug_log());
    for (const auto& r : records) {
        if (!r.ok) {
            spdlog::warn("sweep cell {} / {} / {} epochs / batch {} failed: {}", r.method, r.baseline, r.epochs,
                         r.batch_size, r.error);
        }
    }
    io::atomic_write(out / "sweep.json", pretty(sweep_to_json(records, config_to_json(cfg), grid, run_metadata(g))));
    io::atomic_write(out / "sweep.csv", render_csv(records));
    std::cout << render_sweep_markdown(records);
    return 0;
}

int cmd_report(const fs::path& in, const std::string& format) {
    const fs::path report_path = in / "report.json";
    const fs::path sweep_path = in / "sweep.json";
    const fs::path fold_path = in / "fold.json";
    bool any = false;
    if (fs::exists(report_path)) {
        any = true;
        const json doc = read_json(report_path);
        const auto report = report_from_json(doc);
        if (format == "md") {
            std::cout << render_markdown(report);
        } else if (format == "csv") {
            const auto& train = doc.at("config").at("train");
            std::cout << render_csv(report, train.at("epochs").get<std::size_t>(),
                                    train.at("batch_size").get<std::size_t>());
        } else {
            std::cout << pretty(report_to_json(report, doc.at("config"), doc.value("metadata", json::object())));
        }
    }
    if (fs::exists(sweep_path)) {
        const json doc = read_json(sweep_path);
        const auto records = sweep_from_json(doc);
        if (format == "md") {
            std::cout << (any ? "\n" : "") << render_sweep_markdown(records);
        } else if (format == "csv") {
            std::cout << render_csv(records, !any);
        } else {
            std::cout << pretty(doc);
        }
        any = true;
    }
    if (!any && fs::exists(fold_path)) {
        const json doc = read_json(fold_path);
        if (doc.value("format", "") != kFoldFormat) {
            throw LoadError(fold_path.string() + ": not a fold record");
        }
        const FoldResult r = fold_from_json(doc.at("fold"));
        if (fs::exists(in / "model.dgfm")) {
            const Mlp model = load_checkpoint(in / "model.dgfm");
            spdlog::info("checkpoint: {} layers, {} parameters", model.layer_count(), model.parameter_count());
        }
        const auto report = aggregate({r});
        if (format == "md") {
            std::cout << render_markdown(report);
        } else if (format == "csv") {
            const auto& train = doc.at("config").at("train");
            std::cout << render_csv(report, train.at("epochs").get<std::size_t>(),
                                    train.at("batch_size").get<std::size_t>());
        } else {
            std::cout << pretty(doc);
        }
        any = true;
    }
    if (!any) {
        throw LoadError("no report.json, sweep.json or fold.json in " + in.string());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"dgforge: domain generalization benchmark for cross-subject EEG emotion recognition"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Override the master seed");
    app.add_option("--jobs", g.jobs, "Folds trained concurrently")->check(CLI::PositiveNumber);

    fs::path config;
    fs::path out;
    fs::path grid;
    fs::path in;
    int target_subject = 0;
    std::string format = "md";

    auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset (manifest + feature files)");
    gen->add_option("--config", config, "Config file")->required();
    gen->add_option("--out", out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train and evaluate a single LOSO fold");
    train->add_option("--config", config, "Config file")->required();
    train->add_option("--out", out, "Output directory")->required();
    train->add_option("--target-subject", target_subject, "Held-out subject id")->required();

    auto* bench = app.add_subcommand("benchmark", "Full leave-one-subject-out benchmark");
    bench->add_option("--config", config, "Config file")->required();
    bench->add_option("--out", out, "Output directory")->required();

    auto* sw = app.add_subcommand("sweep", "Epoch / batch-size sweep");
    sw->add_option("--config", config, "Config file")->required();
    sw->add_option("--grid", grid, "Grid file")->required();
    sw->add_option("--out", out, "Output directory")->required();

    auto* rep = app.add_subcommand("report", "Render stored results");
    rep->add_option("--in", in, "Results directory")->required();
    rep->add_option("--format", format, "md, csv or json")->check(CLI::IsMember({"md", "csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (seed_opt->count() > 0) {
        g.seed = seed;
    }

    try {
        if (*gen) {
            return cmd_gen_synthetic(config, out, g);
        }
        if (*train) {
            return cmd_train(config, out, target_subject, g);
        }
        if (*bench) {
            return cmd_benchmark(config, out, g);
        }
        if (*sw) {
            return cmd_sweep(config, grid, out, g);
        }
        return cmd_report(in, format);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return 1;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
}
