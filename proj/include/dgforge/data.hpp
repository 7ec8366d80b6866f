#pragma once

// EEG feature data: samples shaped (channels, windows, bands), one Domain per
// subject, the DGF1 feature file and CSV manifest formats, and a synthetic
// multi-subject generator.

#include "dgforge/io.hpp"
#include "dgforge/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dgforge {

enum class Emotion : int { negative = 0, neutral = 1, positive = 2 };

struct SampleShape {
    std::size_t channels = 0;
    std::size_t windows = 0;
    std::size_t bands = 0;

    std::size_t size() const { return channels * windows * bands; }
    auto operator<=>(const SampleShape&) const = default;

    std::string str() const {
        return "(" + std::to_string(channels) + "," + std::to_string(windows) + "," + std::to_string(bands) + ")";
    }
};

/// 62 electrodes, up to 250 one-second windows, 5 frequency bands.
inline constexpr SampleShape kSeedInputShape{62, 250, 5};

struct SampleId {
    int subject = 0;
    int session = 0;
    int trial = 0;

    auto operator<=>(const SampleId&) const = default;

    std::string str() const {
        return "subject " + std::to_string(subject) + " session " + std::to_string(session) + " trial " +
               std::to_string(trial);
    }
};

/// One trial. Values are row-major over (channel, window, band). Windows at
/// index >= valid_windows are zero padding.
struct EEGSample {
    SampleShape shape;
    std::vector<double> values;
    std::size_t valid_windows = 0;
    int label = 0;
    SampleId id;

    double at(std::size_t c, std::size_t w, std::size_t b) const {
        return values[(c * shape.windows + w) * shape.bands + b];
    }
};

struct Domain {
    int subject = 0;
    std::vector<EEGSample> samples;
};

// ---------------------------------------------------------------------------
// Shape handling and features

/// Zero-pads every axis at its high end up to `target`.
inline EEGSample pad_to_shape(const EEGSample& sample, SampleShape target = kSeedInputShape) {
    const auto& s = sample.shape;
    const char* axis = s.channels > target.channels ? "channels"
                       : s.windows > target.windows ? "windows"
                       : s.bands > target.bands     ? "bands"
                                                    : nullptr;
    if (axis) {
        throw InputError(sample.id.str() + ": " + axis + " axis of " + s.str() + " exceeds target " + target.str());
    }
    EEGSample out = sample;
    out.shape = target;
    out.values.assign(target.size(), 0.0);
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t w = 0; w < s.windows; ++w) {
            for (std::size_t b = 0; b < s.bands; ++b) {
                out.values[(c * target.windows + w) * target.bands + b] = sample.at(c, w, b);
            }
        }
    }
    return out;
}

/// Drops the padded windows again (used when serializing).
inline EEGSample strip_padding(const EEGSample& sample) {
    if (sample.valid_windows == sample.shape.windows) {
        return sample;
    }
    EEGSample out = sample;
    out.shape.windows = sample.valid_windows;
    out.values.assign(out.shape.size(), 0.0);
    for (std::size_t c = 0; c < out.shape.channels; ++c) {
        for (std::size_t w = 0; w < out.shape.windows; ++w) {
            for (std::size_t b = 0; b < out.shape.bands; ++b) {
                out.values[(c * out.shape.windows + w) * out.shape.bands + b] = sample.at(c, w, b);
            }
        }
    }
    return out;
}

/// Mean over the valid windows for every (channel, band), channel-major.
inline std::vector<double> pool_features(const EEGSample& sample) {
    if (sample.valid_windows == 0 || sample.valid_windows > sample.shape.windows) {
        throw InputError(sample.id.str() + ": no valid windows to pool");
    }
    const auto& s = sample.shape;
    std::vector<double> out(s.channels * s.bands, 0.0);
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t w = 0; w < sample.valid_windows; ++w) {
            for (std::size_t b = 0; b < s.bands; ++b) {
                out[c * s.bands + b] += sample.at(c, w, b);
            }
        }
    }
    for (auto& v : out) {
        v /= static_cast<double>(sample.valid_windows);
    }
    return out;
}

/// Differential entropy of a Gaussian with variance sigma2: 0.5 ln(2 pi e sigma2).
inline double de_from_variance(double sigma2) {
    if (!(sigma2 > 0.0)) {
        throw InputError("de_from_variance: variance must be positive");
    }
    return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * sigma2);
}

// ---------------------------------------------------------------------------
// DGF1 feature files: "DGF1" | u32 channels | u32 windows | u32 bands | f64...

inline std::string encode_features(const EEGSample& sample) {
    io::Writer w;
    w.bytes("DGF1");
    w.u32(static_cast<std::uint32_t>(sample.shape.channels));
    w.u32(static_cast<std::uint32_t>(sample.shape.windows));
    w.u32(static_cast<std::uint32_t>(sample.shape.bands));
    for (double v : sample.values) {
        w.f64(v);
    }
    return w.data();
}

/// Parses a feature payload; labels and ids are left for the caller.
inline EEGSample decode_features(std::string bytes, const std::string& origin) {
    io::Reader r(std::move(bytes), origin);
    if (r.bytes(4) != "DGF1") {
        throw LoadError(origin + ": bad magic, expected DGF1");
    }
    EEGSample s;
    s.shape.channels = r.u32();
    s.shape.windows = r.u32();
    s.shape.bands = r.u32();
    if (s.shape.size() == 0) {
        throw LoadError(origin + ": zero-sized feature shape " + s.shape.str());
    }
    if (r.remaining() != s.shape.size() * 8) {
        throw LoadError(origin + ": payload holds " + std::to_string(r.remaining() / 8) + " values, shape " +
                        s.shape.str() + " needs " + std::to_string(s.shape.size()));
    }
    s.values.resize(s.shape.size());
    for (auto& v : s.values) {
        v = r.f64();
        if (!std::isfinite(v)) {
            throw LoadError(origin + ": non-finite feature value");
        }
    }
    s.valid_windows = s.shape.windows;
    return s;
}

inline void write_feature_file(const std::filesystem::path& path, const EEGSample& sample) {
    io::atomic_write(path, encode_features(strip_padding(sample)));
}

inline EEGSample read_feature_file(const std::filesystem::path& path) {
    return decode_features(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Manifest CSV: subject,session,trial,label,path

struct ManifestRow {
    SampleId id;
    int label = 0;
    std::filesystem::path path; // resolved against the manifest directory
    std::size_t line = 0;
};

namespace detail {

inline std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline std::optional<int> parse_int(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    std::size_t used = 0;
    try {
        const int v = std::stoi(s, &used);
        if (used != s.size()) {
            return std::nullopt;
        }
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

} // namespace detail

/// Accepts negative/neutral/positive (any case) or 0/1/2.
inline std::optional<int> parse_emotion_label(const std::string& raw) {
    const std::string s = detail::lower(detail::trim(raw));
    if (s == "negative" || s == "0") {
        return 0;
    }
    if (s == "neutral" || s == "1") {
        return 1;
    }
    if (s == "positive" || s == "2") {
        return 2;
    }
    return std::nullopt;
}

inline std::string emotion_name(int label) {
    switch (label) {
    case 0: return "negative";
    case 1: return "neutral";
    case 2: return "positive";
    default: return std::to_string(label);
    }
}

inline std::vector<ManifestRow> parse_manifest(const std::filesystem::path& path) {
    std::istringstream in(io::read_file(path));
    const auto base = path.parent_path();
    const std::string where = path.string();
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    std::vector<ManifestRow> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) {
            line.erase(0, 3);
        }
        if (detail::trim(line).empty()) {
            continue;
        }
        const auto fields = detail::split_csv_line(line);
        if (!header_seen) {
            std::vector<std::string> lowered;
            for (const auto& f : fields) {
                lowered.push_back(detail::lower(f));
            }
            if (lowered != std::vector<std::string>{"subject", "session", "trial", "label", "path"}) {
                throw LoadError(where + ":" + std::to_string(lineno) +
                                ": header must be subject,session,trial,label,path");
            }
            header_seen = true;
            continue;
        }
        const std::string record = where + ":" + std::to_string(lineno) + " [" + line + "]";
        if (fields.size() != 5) {
            throw LoadError(record + ": expected 5 fields, got " + std::to_string(fields.size()));
        }
        ManifestRow row;
        const auto subject = detail::parse_int(fields[0]);
        const auto session = detail::parse_int(fields[1]);
        const auto trial = detail::parse_int(fields[2]);
        if (!subject || !session || !trial || *subject < 1 || *session < 1 || *trial < 1) {
            throw LoadError(record + ": subject, session and trial must be positive integers");
        }
        const auto label = parse_emotion_label(fields[3]);
        if (!label) {
            throw LoadError(record + ": label '" + fields[3] + "' is not one of negative/neutral/positive or 0/1/2");
        }
        if (fields[4].empty()) {
            throw LoadError(record + ": empty path");
        }
        row.id = {*subject, *session, *trial};
        row.label = *label;
        const std::filesystem::path p(fields[4]);
        row.path = p.is_absolute() ? p : base / p;
        row.line = lineno;
        rows.push_back(std::move(row));
    }
    if (!header_seen) {
        throw LoadError(where + ": empty manifest");
    }
    if (rows.empty()) {
        throw LoadError(where + ": manifest lists no samples");
    }
    return rows;
}

/// Reads every sample a manifest lists, pads it to `target`, and groups the
/// samples into one Domain per subject (ascending subject id).
inline std::vector<Domain> load_domains(const std::filesystem::path& manifest, SampleShape target = kSeedInputShape) {
    const auto rows = parse_manifest(manifest);
    std::set<SampleId> seen;
    std::map<int, Domain> by_subject;
    std::map<int, std::size_t> expected;
    for (const auto& row : rows) {
        const std::string record = manifest.string() + ":" + std::to_string(row.line) + " (" + row.id.str() + ")";
        if (!seen.insert(row.id).second) {
            throw LoadError(record + ": duplicate subject/session/trial");
        }
        if (!std::filesystem::exists(row.path)) {
            throw LoadError(record + ": missing feature file " + row.path.string());
        }
        EEGSample s = read_feature_file(row.path);
        s.label = row.label;
        s.id = row.id;
        try {
            s = pad_to_shape(s, target);
        } catch (const InputError& e) {
            throw LoadError(record + " " + row.path.string() + ": " + e.what());
        }
        auto& d = by_subject[row.id.subject];
        d.subject = row.id.subject;
        d.samples.push_back(std::move(s));
        ++expected[row.id.subject];
    }
    std::vector<Domain> out;
    for (auto& [subject, d] : by_subject) {
        if (d.samples.size() != expected[subject]) {
            throw LoadError(manifest.string() + ": subject " + std::to_string(subject) + " sample count mismatch");
        }
        out.push_back(std::move(d));
    }
    return out;
}

/// Writes one DGF1 file per sample under dir/features and dir/manifest.csv.
/// Returns the manifest path.
inline std::filesystem::path write_dataset(const std::vector<Domain>& domains, const std::filesystem::path& dir) {
    std::ostringstream manifest;
    manifest << "subject,session,trial,label,path\n";
    for (const auto& d : domains) {
        for (const auto& s : d.samples) {
            const std::string rel = "features/s" + std::to_string(s.id.subject) + "_" + std::to_string(s.id.session) +
                                    "_" + std::to_string(s.id.trial) + ".dgf";
            write_feature_file(dir / rel, s);
            manifest << s.id.subject << ',' << s.id.session << ',' << s.id.trial << ',' << emotion_name(s.label)
                     << ',' << rel << '\n';
        }
    }
    const auto path = dir / "manifest.csv";
    io::atomic_write(path, manifest.str());
    return path;
}

// ---------------------------------------------------------------------------
// Synthetic subjects

struct SynthConfig {
    std::size_t domains = 15;
    std::size_t samples_per_class = 15;
    SampleShape shape{62, 2, 5};
    double class_separation = 0.25; // prototype scale
    double domain_shift = 0.0;      // per-domain offset scale (sigma_dom)
    double mixing = 0.0;            // per-domain mixing perturbation (epsilon)
    double noise = 1.0;             // per-sample noise scale
    std::uint64_t seed = 1;

    void validate() const {
        if (domains < 1 || samples_per_class < 1 || shape.size() == 0) {
            throw ConfigError("synthetic: domains, samples_per_class and shape must be >= 1");
        }
        if (!(class_separation >= 0.0) || !(domain_shift >= 0.0) || !(mixing >= 0.0) || !(noise >= 0.0)) {
            throw ConfigError("synthetic: scales must be >= 0");
        }
    }
};

/// Class prototypes mu_c ~ N(0, sep^2 I) are shared by all subjects. Subject d
/// draws an offset delta_d ~ N(0, sigma_dom^2 I) and a mixing matrix
/// A_d = I + eps R_d with R_d ~ N(0,1); each sample is
/// A_d (mu_c + noise) + delta_d. Classes are balanced and interleaved.
inline std::vector<Domain> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t dim = cfg.shape.size();
    std::normal_distribution<double> normal(0.0, 1.0);

    auto proto_rng = seeded_rng(cfg.seed, 0);
    std::vector<std::vector<double>> prototypes(kEmotionClasses, std::vector<double>(dim));
    for (auto& p : prototypes) {
        for (auto& v : p) {
            v = cfg.class_separation * normal(proto_rng);
        }
    }

    std::vector<Domain> out;
    std::vector<double> clean(dim);
    for (std::size_t d = 0; d < cfg.domains; ++d) {
        auto rng = seeded_rng(cfg.seed, 1 + d);
        std::vector<double> offset(dim);
        for (auto& v : offset) {
            v = cfg.domain_shift * normal(rng);
        }
        std::vector<double> mix;
        if (cfg.mixing > 0.0) {
            mix.resize(dim * dim);
            for (auto& v : mix) {
                v = cfg.mixing * normal(rng);
            }
        }
        Domain domain;
        domain.subject = static_cast<int>(d + 1);
        const std::size_t count = cfg.samples_per_class * kEmotionClasses;
        for (std::size_t k = 0; k < count; ++k) {
            EEGSample s;
            s.shape = cfg.shape;
            s.valid_windows = cfg.shape.windows;
            s.label = static_cast<int>(k % kEmotionClasses);
            s.id = {domain.subject, static_cast<int>(1 + k / 15), static_cast<int>(1 + k % 15)};
            const auto& mu = prototypes[static_cast<std::size_t>(s.label)];
            for (std::size_t i = 0; i < dim; ++i) {
                clean[i] = mu[i] + cfg.noise * normal(rng);
            }
            s.values = clean;
            if (!mix.empty()) {
                for (std::size_t i = 0; i < dim; ++i) {
                    double acc = 0.0;
                    const double* row = mix.data() + i * dim;
                    for (std::size_t j = 0; j < dim; ++j) {
                        acc += row[j] * clean[j];
                    }
                    s.values[i] += acc;
                }
            }
            for (std::size_t i = 0; i < dim; ++i) {
                s.values[i] += offset[i];
            }
            domain.samples.push_back(std::move(s));
        }
        out.push_back(std::move(domain));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Source split

struct SourceSplit {
    std::vector<std::size_t> train; // indices into the source list, ascending
    std::vector<std::size_t> val;
};

/// Whole-domain 4:1 split: round(M/5) (at least one) validation domains,
/// chosen by a seeded shuffle.
inline SourceSplit split_source_domains(std::size_t source_count, std::uint64_t seed) {
    if (source_count < 2) {
        throw ContractError("split_source_domains: need at least 2 source domains, got " +
                            std::to_string(source_count));
    }
    const std::size_t val_count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(source_count) / 5.0)));
    std::vector<std::size_t> order(source_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = seeded_rng(seed, 0x5B17);
    std::shuffle(order.begin(), order.end(), rng);
    SourceSplit split;
    split.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_count));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

} // namespace dgforge
