#pragma once

// Serialization of fold results, benchmark reports and sweeps (JSON), plus
// markdown and long-format CSV renderings. The JSON schema is described in
// README.md.

#include "dgforge/config.hpp"
#include "dgforge/harness.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dgforge {

inline constexpr const char* kReportFormat = "dgforge-benchmark/1";
inline constexpr const char* kSweepFormat = "dgforge-sweep/1";
inline constexpr const char* kFoldFormat = "dgforge-fold/1";

inline json fold_to_json(const FoldResult& r) {
    return {{"target_subject", r.target_subject},
            {"train_subjects", r.train_subjects},
            {"val_subjects", r.val_subjects},
            {"baseline", r.baseline},
            {"method", r.method},
            {"seed", r.seed},
            {"best_epoch", r.best_epoch},
            {"best_val_accuracy", r.best_val_accuracy},
            {"final_val_accuracy", r.final_val_accuracy},
            {"target_accuracy", r.target_accuracy},
            {"train_loss", r.train_loss},
            {"val_accuracy", r.val_accuracy},
            {"pretrain_error", r.pretrain_error},
            {"final_source_coral", r.final_source_coral},
            {"final_source_mmd2", r.final_source_mmd2}};
}

inline FoldResult fold_from_json(const json& j) {
    try {
        FoldResult r;
        r.target_subject = j.at("target_subject").get<int>();
        r.train_subjects = j.at("train_subjects").get<std::vector<int>>();
        r.val_subjects = j.at("val_subjects").get<std::vector<int>>();
        r.baseline = j.at("baseline").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.best_epoch = j.at("best_epoch").get<std::size_t>();
        r.best_val_accuracy = j.at("best_val_accuracy").get<double>();
        r.final_val_accuracy = j.at("final_val_accuracy").get<double>();
        r.target_accuracy = j.at("target_accuracy").get<double>();
        r.train_loss = j.at("train_loss").get<std::vector<double>>();
        r.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
        r.pretrain_error = j.at("pretrain_error").get<std::vector<double>>();
        r.final_source_coral = j.at("final_source_coral").get<double>();
        r.final_source_mmd2 = j.at("final_source_mmd2").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed fold record: ") + e.what());
    }
}

/// 64-bit FNV-1a of the compact JSON text, as 16 hex digits.
inline std::string fingerprint(const json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Everything except "metadata" is a pure function of (config, seed).
inline json report_to_json(const BenchmarkReport& report, const json& config, const json& metadata = json::object()) {
    json cells = json::array();
    for (const auto& c : report.cells) {
        json folds = json::array();
        for (const auto& f : c.folds) {
            folds.push_back(fold_to_json(f));
        }
        cells.push_back({{"baseline", c.baseline},
                         {"method", c.method},
                         {"mean", c.mean},
                         {"std", c.std},
                         {"variance", c.variance},
                         {"folds", folds}});
    }
    return {{"format", kReportFormat},
            {"config_fingerprint", fingerprint(config)},
            {"config", config},
            {"cells", cells},
            {"metadata", metadata}};
}

inline BenchmarkReport report_from_json(const json& j) {
    if (j.value("format", "") != kReportFormat) {
        throw LoadError("not a benchmark report (format '" + j.value("format", "") + "')");
    }
    BenchmarkReport report;
    try {
        for (const auto& c : j.at("cells")) {
            CellSummary cell;
            cell.baseline = c.at("baseline").get<std::string>();
            cell.method = c.at("method").get<std::string>();
            cell.mean = c.at("mean").get<double>();
            cell.std = c.at("std").get<double>();
            cell.variance = c.at("variance").get<double>();
            for (const auto& f : c.at("folds")) {
                cell.folds.push_back(fold_from_json(f));
            }
            report.cells.push_back(std::move(cell));
        }
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed benchmark report: ") + e.what());
    }
    return report;
}

/// Document with the metadata field removed; the determinism comparison key.
inline std::string deterministic_dump(json doc) {
    doc.erase("metadata");
    return doc.dump();
}

inline json sweep_to_json(const std::vector<SweepRecord>& records, const json& config, const SweepGrid& grid,
                          const json& metadata = json::object()) {
    json g;
    g["epochs"] = grid.epochs;
    g["batch_sizes"] = grid.batch_sizes;
    g["methods"] = json::array();
    for (auto m : grid.methods) {
        g["methods"].push_back(std::string(method_id(m)));
    }
    g["baselines"] = json::array();
    for (auto b : grid.baselines) {
        g["baselines"].push_back(std::string(baseline_id(b)));
    }
    json recs = json::array();
    for (const auto& r : records) {
        json rec{{"method", r.method},         {"baseline", r.baseline}, {"epochs", r.epochs},
                 {"batch_size", r.batch_size}, {"ok", r.ok}};
        if (r.ok) {
            rec["mean"] = r.mean;
            rec["std"] = r.std;
        } else {
            rec["error"] = r.error;
        }
        recs.push_back(std::move(rec));
    }
    return {{"format", kSweepFormat},
            {"config_fingerprint", fingerprint(config)},
            {"config", config},
            {"grid", g},
            {"records", recs},
            {"metadata", metadata}};
}

inline std::vector<SweepRecord> sweep_from_json(const json& j) {
    if (j.value("format", "") != kSweepFormat) {
        throw LoadError("not a sweep report (format '" + j.value("format", "") + "')");
    }
    std::vector<SweepRecord> out;
    try {
        for (const auto& r : j.at("records")) {
            SweepRecord rec;
            rec.method = r.at("method").get<std::string>();
            rec.baseline = r.at("baseline").get<std::string>();
            rec.epochs = r.at("epochs").get<std::size_t>();
            rec.batch_size = r.at("batch_size").get<std::size_t>();
            rec.ok = r.at("ok").get<bool>();
            if (rec.ok) {
                rec.mean = r.at("mean").get<double>();
                rec.std = r.at("std").get<double>();
            } else {
                rec.error = r.at("error").get<std::string>();
            }
            out.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed sweep report: ") + e.what());
    }
    return out;
}

namespace detail {

inline std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string fixed_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string label_of_method(const std::string& id) {
    const auto m = parse_method(id);
    return m ? std::string(method_label(*m)) : id;
}

inline std::string label_of_baseline(const std::string& id) {
    const auto b = parse_baseline(id);
    return b ? std::string(baseline_label(*b)) : id;
}

} // namespace detail

/// Accuracy table: one mean row and one std row per baseline, one column per
/// method plus a per-baseline average, and per-method averages at the bottom.
inline std::string render_markdown(const BenchmarkReport& report) {
    std::vector<std::string> baselines;
    std::vector<std::string> methods;
    std::map<std::pair<std::string, std::string>, const CellSummary*> cell;
    for (const auto& c : report.cells) {
        if (std::find(baselines.begin(), baselines.end(), c.baseline) == baselines.end()) {
            baselines.push_back(c.baseline);
        }
        if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) {
            methods.push_back(c.method);
        }
        cell[{c.baseline, c.method}] = &c;
    }
    std::stable_sort(baselines.begin(), baselines.end(),
                     [](const auto& a, const auto& b) { return baseline_rank(a) < baseline_rank(b); });
    std::stable_sort(methods.begin(), methods.end(),
                     [](const auto& a, const auto& b) { return method_rank(a) < method_rank(b); });

    std::ostringstream out;
    out << "| baseline | | ";
    for (const auto& m : methods) {
        out << detail::label_of_method(m) << " | ";
    }
    out << "average |\n|---|---|";
    for (std::size_t i = 0; i <= methods.size(); ++i) {
        out << "---|";
    }
    out << '\n';

    std::map<std::string, std::pair<double, double>> col_sum; // method -> (sum mean, sum std)
    std::map<std::string, std::size_t> col_n;
    for (const auto& b : baselines) {
        std::string mean_row = "| " + detail::label_of_baseline(b) + " | mean | ";
        std::string std_row = "| | std | ";
        double sm = 0.0;
        double ss = 0.0;
        std::size_t n = 0;
        for (const auto& m : methods) {
            const auto it = cell.find({b, m});
            if (it == cell.end()) {
                mean_row += "- | ";
                std_row += "- | ";
                continue;
            }
            mean_row += detail::fixed4(it->second->mean) + " | ";
            std_row += detail::fixed4(it->second->std) + " | ";
            sm += it->second->mean;
            ss += it->second->std;
            ++n;
            col_sum[m].first += it->second->mean;
            col_sum[m].second += it->second->std;
            ++col_n[m];
        }
        mean_row += detail::fixed4(sm / static_cast<double>(n)) + " |";
        std_row += detail::fixed4(ss / static_cast<double>(n)) + " |";
        out << mean_row << '\n' << std_row << '\n';
    }
    std::string avg_mean = "| average | mean | ";
    std::string avg_std = "| | std | ";
    double grand_mean = 0.0;
    double grand_std = 0.0;
    for (const auto& m : methods) {
        const double n = static_cast<double>(col_n[m]);
        avg_mean += detail::fixed4(col_sum[m].first / n) + " | ";
        avg_std += detail::fixed4(col_sum[m].second / n) + " | ";
    }
    for (const auto& c : report.cells) {
        grand_mean += c.mean / static_cast<double>(report.cells.size());
        grand_std += c.std / static_cast<double>(report.cells.size());
    }
    out << avg_mean << detail::fixed4(grand_mean) << " |\n" << avg_std << detail::fixed4(grand_std) << " |\n";
    return out.str();
}

inline std::string render_sweep_markdown(const std::vector<SweepRecord>& records) {
    std::ostringstream out;
    out << "| method | baseline | epochs | batch size | mean | std |\n|---|---|---|---|---|---|\n";
    for (const auto& r : records) {
        out << "| " << detail::label_of_method(r.method) << " | " << detail::label_of_baseline(r.baseline) << " | "
            << r.epochs << " | " << r.batch_size << " | ";
        if (r.ok) {
            out << detail::fixed4(r.mean) << " | " << detail::fixed4(r.std) << " |\n";
        } else {
            out << "failed | failed |\n";
        }
    }
    return out.str();
}

inline constexpr const char* kCsvHeader = "method,baseline,epochs,batch_size,mean,std\n";

/// Long format, one row per cell. Failed sweep cells are left out.
inline std::string render_csv(const std::vector<SweepRecord>& records, bool header = true) {
    std::string out = header ? kCsvHeader : "";
    for (const auto& r : records) {
        if (!r.ok) {
            continue;
        }
        out += r.method + "," + r.baseline + "," + std::to_string(r.epochs) + "," + std::to_string(r.batch_size) + "," +
               detail::fixed_g(r.mean) + "," + detail::fixed_g(r.std) + "\n";
    }
    return out;
}

inline std::string render_csv(const BenchmarkReport& report, std::size_t epochs, std::size_t batch_size,
                              bool header = true) {
    std::vector<SweepRecord> rows;
    for (const auto& c : report.cells) {
        SweepRecord r;
        r.method = c.method;
        r.baseline = c.baseline;
        r.epochs = epochs;
        r.batch_size = batch_size;
        r.mean = c.mean;
        r.std = c.std;
        rows.push_back(std::move(r));
    }
    return render_csv(rows, header);
}

} // namespace dgforge
