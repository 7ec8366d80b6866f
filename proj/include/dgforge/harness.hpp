#pragma once

// Leave-one-subject-out benchmark protocol: fold construction, stratified
// multi-domain batching, Adam with decoupled weight decay, validation-based
// snapshot selection, and mean/std aggregation.

#include "dgforge/data.hpp"
#include "dgforge/dg_methods.hpp"
#include "dgforge/models.hpp"
#include "dgforge/rbm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace dgforge {

// ---------------------------------------------------------------------------
// Configuration

enum class Baseline { mlp2, mlp3, mlp4, dbn };

inline std::string_view baseline_id(Baseline b) {
    switch (b) {
    case Baseline::mlp2: return "mlp2";
    case Baseline::mlp3: return "mlp3";
    case Baseline::mlp4: return "mlp4";
    case Baseline::dbn: return "dbn";
    }
    return "?";
}

inline std::string_view baseline_label(Baseline b) {
    switch (b) {
    case Baseline::mlp2: return "MLP-2";
    case Baseline::mlp3: return "MLP-3";
    case Baseline::mlp4: return "MLP-4";
    case Baseline::dbn: return "DBN";
    }
    return "?";
}

inline std::optional<Baseline> parse_baseline(std::string_view s) {
    for (Baseline b : {Baseline::mlp2, Baseline::mlp3, Baseline::mlp4, Baseline::dbn}) {
        if (s == baseline_id(b)) {
            return b;
        }
    }
    return std::nullopt;
}

struct BaselineSpec {
    Baseline kind = Baseline::mlp2;
    std::size_t width = 256;                      // MLP hidden width
    std::vector<std::size_t> hidden;              // explicit MLP widths, overrides `width`
    std::vector<std::size_t> dbn_hidden{64, 32};  // RBM hidden sizes
    std::size_t pretrain_epochs = 10;
    double pretrain_lr = 0.01;
    std::size_t pretrain_batch = 32;

    /// Hidden widths of the network: k-1 layers for MLP-k, the RBM sizes for DBN.
    std::vector<std::size_t> hidden_widths() const {
        if (kind == Baseline::dbn) {
            return dbn_hidden;
        }
        if (!hidden.empty()) {
            return hidden;
        }
        const std::size_t layers = kind == Baseline::mlp2 ? 2 : kind == Baseline::mlp3 ? 3 : 4;
        return std::vector<std::size_t>(layers - 1, width);
    }

    void validate() const {
        const auto h = hidden_widths();
        if (kind != Baseline::dbn) {
            const std::size_t layers = kind == Baseline::mlp2 ? 2 : kind == Baseline::mlp3 ? 3 : 4;
            if (h.size() != layers - 1) {
                throw ConfigError(std::string(baseline_id(kind)) + " needs " + std::to_string(layers - 1) +
                                  " hidden widths, got " + std::to_string(h.size()));
            }
        } else if (h.size() != 2) {
            throw ConfigError("dbn needs exactly 2 RBM hidden sizes");
        }
        for (auto w : h) {
            if (w == 0) {
                throw ConfigError("hidden widths must be positive");
            }
        }
        if (kind == Baseline::dbn && (!(pretrain_lr >= 0.0) || pretrain_batch == 0)) {
            throw ConfigError("dbn pretraining needs lr >= 0 and a positive batch size");
        }
    }
};

enum class FeatureMode { pooled, full };

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) {
            throw ConfigError("learning_rate must be > 0");
        }
        if (epochs < 1) {
            throw ConfigError("epochs must be >= 1");
        }
        if (batch_size < 1) {
            throw ConfigError("batch_size must be >= 1");
        }
        if (!(weight_decay >= 0.0)) {
            throw ConfigError("weight_decay must be >= 0");
        }
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
            throw ConfigError("adam betas must lie in [0,1) and epsilon must be > 0");
        }
    }
};

/// Everything needed to train one (baseline, method) cell.
struct ExperimentSpec {
    BaselineSpec baseline;
    DGConfig method;
    TrainConfig train;
    FeatureMode features = FeatureMode::pooled;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

/// One Adam step with bias correction. Weight decay is decoupled and applies
/// to non-bias tensors only: w <- w - lr (m^ / (sqrt(v^) + eps) + wd w).
/// Clears the gradients it consumed.
inline void adam_step(std::vector<NamedParam>& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.size(), 0.0);
            state.v.emplace_back(p.tensor.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("adam: optimizer state tracks " + std::to_string(state.m.size()) +
                             " tensors but " + std::to_string(params.size()) + " were given");
    }
    const std::size_t t = state.step + 1;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto g = params[k].tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw TrainingError("non-finite gradient in " + params[k].name + " at step " + std::to_string(t));
            }
        }
        if (state.m[k].size() != g.size()) {
            throw DimensionError("adam: state for " + params[k].name + " has the wrong size");
        }
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        const auto g = p.tensor.grad();
        auto w = p.tensor.mutable_values();
        auto& m = state.m[k];
        auto& v = state.v[k];
        const double decay = p.is_bias ? 0.0 : cfg.weight_decay;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + decay * w[i]);
        }
        p.tensor.zero_grad();
    }
    state.step = t;
}

// ---------------------------------------------------------------------------
// Prepared data

/// A domain as model-ready matrices.
struct DomainData {
    int subject = 0;
    Tensor features; // n x d
    Tensor labels;   // n x 3 one-hot
    std::vector<int> classes;
    std::vector<SampleId> ids;

    std::size_t size() const { return classes.size(); }
};

inline DomainData prepare_domain(const Domain& domain, FeatureMode mode) {
    if (domain.samples.empty()) {
        throw ContractError("subject " + std::to_string(domain.subject) + " has no samples");
    }
    DomainData out;
    out.subject = domain.subject;
    std::vector<double> values;
    std::size_t width = 0;
    for (const auto& s : domain.samples) {
        std::vector<double> row = mode == FeatureMode::pooled ? pool_features(s) : s.values;
        if (width == 0) {
            width = row.size();
        } else if (row.size() != width) {
            throw DimensionError("subject " + std::to_string(domain.subject) + ": samples have differing shapes");
        }
        values.insert(values.end(), row.begin(), row.end());
        out.classes.push_back(s.label);
        out.ids.push_back(s.id);
    }
    out.features = Tensor({out.classes.size(), width}, std::move(values));
    out.labels = one_hot(out.classes, kEmotionClasses);
    return out;
}

/// Per-feature min-max scaling to [0,1], fit on training domains only.
struct MinMaxScaler {
    std::vector<double> lo;
    std::vector<double> hi;

    static MinMaxScaler fit(const std::vector<DomainData>& domains) {
        MinMaxScaler s;
        const std::size_t d = domains.front().features.cols();
        s.lo.assign(d, std::numeric_limits<double>::infinity());
        s.hi.assign(d, -std::numeric_limits<double>::infinity());
        for (const auto& dom : domains) {
            for (std::size_t i = 0; i < dom.size(); ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    const double v = dom.features.at(i, j);
                    s.lo[j] = std::min(s.lo[j], v);
                    s.hi[j] = std::max(s.hi[j], v);
                }
            }
        }
        return s;
    }

    /// Values outside the fitted range are clamped.
    void apply(DomainData& dom) const {
        const std::size_t d = lo.size();
        std::vector<double> v(dom.features.values().begin(), dom.features.values().end());
        for (std::size_t i = 0; i < dom.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double span = hi[j] - lo[j];
                double x = span > 0.0 ? (v[i * d + j] - lo[j]) / span : 0.0;
                v[i * d + j] = std::clamp(x, 0.0, 1.0);
            }
        }
        dom.features = Tensor(dom.features.shape(), std::move(v));
    }
};

// ---------------------------------------------------------------------------
// Folds and batches

struct Fold {
    std::size_t target = 0;           // index into the domain list
    std::vector<std::size_t> sources; // every other index, ascending
};

/// Fold i holds domain i out as the unseen target.
inline std::vector<Fold> loso_folds(std::size_t domain_count) {
    if (domain_count < 3) {
        throw ContractError("leave-one-subject-out needs at least 3 domains, got " + std::to_string(domain_count));
    }
    std::vector<Fold> folds;
    for (std::size_t t = 0; t < domain_count; ++t) {
        Fold f;
        f.target = t;
        for (std::size_t s = 0; s < domain_count; ++s) {
            if (s != t) {
                f.sources.push_back(s);
            }
        }
        folds.push_back(std::move(f));
    }
    return folds;
}

/// One epoch of stratified batches. Domains are shuffled independently; each
/// batch asks floor(B/k) or ceil(B/k) samples of each of the k domains that
/// still have samples left, the extra samples going to a rotating subset.
/// Every sample appears exactly once per epoch.
inline std::vector<MultiDomainBatch> make_batches(const std::vector<DomainData>& train, std::size_t batch_size,
                                                  std::mt19937_64& rng) {
    const std::size_t m = train.size();
    if (m == 0) {
        throw ContractError("make_batches: no training domains");
    }
    if (batch_size < m) {
        throw ConfigError("batch size " + std::to_string(batch_size) + " is smaller than the " + std::to_string(m) +
                          " training domains; every batch must contain each domain");
    }
    std::vector<std::vector<std::size_t>> order(m);
    std::vector<std::size_t> cursor(m, 0);
    for (std::size_t d = 0; d < m; ++d) {
        order[d].resize(train[d].size());
        std::iota(order[d].begin(), order[d].end(), std::size_t{0});
        std::shuffle(order[d].begin(), order[d].end(), rng);
    }
    std::vector<MultiDomainBatch> batches;
    std::size_t rotation = 0;
    for (;;) {
        std::vector<std::size_t> active;
        for (std::size_t d = 0; d < m; ++d) {
            if (cursor[d] < order[d].size()) {
                active.push_back(d);
            }
        }
        if (active.empty()) {
            break;
        }
        const std::size_t k = active.size();
        const std::size_t base = batch_size / k;
        const std::size_t extra = batch_size % k;
        std::vector<DomainSlice> slices;
        for (std::size_t a = 0; a < k; ++a) {
            const std::size_t d = active[a];
            const bool bonus = (a + k - rotation % k) % k < extra;
            const std::size_t want = base + (bonus ? 1 : 0);
            const std::size_t take = std::min(want, order[d].size() - cursor[d]);
            const std::size_t width = train[d].features.cols();
            std::vector<double> x;
            std::vector<double> y;
            x.reserve(take * width);
            for (std::size_t t = 0; t < take; ++t) {
                const std::size_t row = order[d][cursor[d] + t];
                const auto fv = train[d].features.values().subspan(row * width, width);
                x.insert(x.end(), fv.begin(), fv.end());
                const auto lv = train[d].labels.values().subspan(row * kEmotionClasses, kEmotionClasses);
                y.insert(y.end(), lv.begin(), lv.end());
            }
            cursor[d] += take;
            slices.push_back({d, Tensor({take, width}, std::move(x)), Tensor({take, kEmotionClasses}, std::move(y))});
        }
        rotation = (rotation + extra) % k;
        batches.push_back(MultiDomainBatch::assemble(std::move(slices), m));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Rows whose argmax logit (ties to the lowest class) matches the label.
inline std::size_t count_correct(const Mlp& model, const DomainData& domain) {
    const auto predicted = argmax_rows(model.forward(domain.features.detach()).logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        correct += predicted[i] == domain.classes[i] ? 1 : 0;
    }
    return correct;
}

inline double evaluate(const Mlp& model, const DomainData& domain) {
    if (domain.size() == 0) {
        throw ContractError("evaluate: empty domain");
    }
    return static_cast<double>(count_correct(model, domain)) / static_cast<double>(domain.size());
}

/// Pooled accuracy over several domains (every sample weighs the same).
inline double evaluate(const Mlp& model, const std::vector<DomainData>& domains) {
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto& d : domains) {
        correct += count_correct(model, d);
        total += d.size();
    }
    if (total == 0) {
        throw ContractError("evaluate: no samples");
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Training one fold

struct FoldResult {
    int target_subject = 0;
    std::vector<int> train_subjects;
    std::vector<int> val_subjects;
    std::string baseline;
    std::string method;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0; // 1-based
    double best_val_accuracy = 0.0;
    double final_val_accuracy = 0.0;
    double target_accuracy = 0.0;
    std::vector<double> train_loss;   // mean loss per epoch
    std::vector<double> val_accuracy; // per epoch
    std::vector<double> pretrain_error; // DBN: per-epoch CD-1 error, RBM 1 then RBM 2
    double final_source_coral = 0.0;   // mean pairwise CORAL of training-domain representations
    double final_source_mmd2 = 0.0;    // mean pairwise linear MMD^2 of the same
};

struct FoldOutcome {
    FoldResult result;
    Mlp selected; // snapshot with the best validation accuracy
    Mlp final;    // parameters after the last epoch
};

/// Index of the highest value, earliest on ties.
inline std::size_t select_best_epoch(const std::vector<double>& val_accuracy) {
    if (val_accuracy.empty()) {
        throw ContractError("select_best_epoch: no epochs");
    }
    std::size_t best = 0;
    for (std::size_t e = 1; e < val_accuracy.size(); ++e) {
        if (val_accuracy[e] > val_accuracy[best]) {
            best = e;
        }
    }
    return best;
}

/// Alignment statistics of a model's representation across domains.
struct AlignmentStats {
    double coral = 0.0;
    double mmd2 = 0.0;
};

inline AlignmentStats source_alignment(const Mlp& model, const std::vector<DomainData>& domains) {
    std::vector<Tensor> blocks;
    for (const auto& d : domains) {
        if (d.size() >= 2) {
            blocks.push_back(model.represent(d.features.detach()).detach());
        }
    }
    if (blocks.size() < 2) {
        return {};
    }
    return {mean_pairwise_coral(blocks).item(), mean_pairwise_mmd2(blocks).item()};
}

using LogFn = std::function<void(const std::string&)>;

/// Per-fold seed: the master seed XOR the fold index.
inline std::uint64_t fold_seed(std::uint64_t master, std::size_t fold_index) {
    return master ^ static_cast<std::uint64_t>(fold_index);
}

/// Trains on the fold's sources (split 4:1 into train/validation subjects),
/// keeps the snapshot with the best validation accuracy and scores it on the
/// held-out target subject. The target domain is not touched until the end.
inline FoldOutcome train_fold(const std::vector<Domain>& domains, const Fold& fold, std::size_t fold_index,
                              const ExperimentSpec& spec, const LogFn& log = {}) {
    spec.train.validate();
    spec.method.validate();
    spec.baseline.validate();
    const std::uint64_t seed = fold_seed(spec.seed, fold_index);
    const SourceSplit split = split_source_domains(fold.sources.size(), seed);

    std::vector<DomainData> train;
    std::vector<DomainData> val;
    for (auto i : split.train) {
        train.push_back(prepare_domain(domains[fold.sources[i]], spec.features));
    }
    for (auto i : split.val) {
        val.push_back(prepare_domain(domains[fold.sources[i]], spec.features));
    }

    FoldResult r;
    r.target_subject = domains[fold.target].subject;
    r.baseline = std::string(baseline_id(spec.baseline.kind));
    r.method = std::string(method_id(spec.method.method));
    r.seed = seed;
    std::set<SampleId> train_ids;
    std::set<SampleId> val_ids;
    for (const auto& d : train) {
        r.train_subjects.push_back(d.subject);
        train_ids.insert(d.ids.begin(), d.ids.end());
    }
    for (const auto& d : val) {
        r.val_subjects.push_back(d.subject);
        for (const auto& id : d.ids) {
            if (train_ids.count(id)) {
                throw TrainingError("sample " + id.str() + " is in both training and validation sets");
            }
            val_ids.insert(id);
        }
    }
    for (int s : r.train_subjects) {
        if (s == r.target_subject) {
            throw TrainingError("target subject " + std::to_string(s) + " leaked into training");
        }
    }
    for (int s : r.val_subjects) {
        if (s == r.target_subject) {
            throw TrainingError("target subject " + std::to_string(s) + " leaked into validation");
        }
    }

    std::optional<MinMaxScaler> scaler;
    const std::size_t input_dim = train.front().features.cols();
    const auto hidden = spec.baseline.hidden_widths();
    Mlp model;
    if (spec.baseline.kind == Baseline::dbn) {
        scaler = MinMaxScaler::fit(train);
        for (auto& d : train) {
            scaler->apply(d);
        }
        for (auto& d : val) {
            scaler->apply(d);
        }
        Rbm first = rbm_init(input_dim, hidden[0], seed, 0);
        Rbm second = rbm_init(hidden[0], hidden[1], seed, 1);
        const bool pretrain = spec.baseline.pretrain_epochs > 0;
        if (pretrain) {
            auto rng = seeded_rng(seed, 200);
            std::vector<double> data;
            for (const auto& d : train) {
                data.insert(data.end(), d.features.values().begin(), d.features.values().end());
            }
            auto e1 = rbm_train(first, data, spec.baseline.pretrain_epochs, spec.baseline.pretrain_lr,
                                spec.baseline.pretrain_batch, rng);
            const auto hid = rbm_hidden_probs(first, data);
            auto e2 = rbm_train(second, hid, spec.baseline.pretrain_epochs, spec.baseline.pretrain_lr,
                                spec.baseline.pretrain_batch, rng);
            r.pretrain_error = e1;
            r.pretrain_error.insert(r.pretrain_error.end(), e2.begin(), e2.end());
        }
        model = dbn_build(std::move(first), std::move(second), kEmotionClasses, seed, pretrain).network;
    } else {
        model = mlp_init(input_dim, hidden, kEmotionClasses, seed, Activation::relu);
    }

    if (spec.train.batch_size < train.size()) {
        throw ConfigError("batch size " + std::to_string(spec.train.batch_size) + " is smaller than the " +
                          std::to_string(train.size()) + " training domains");
    }
    MethodState state = method_state_init(spec.method, train.size(), model.representation_dim(), seed);
    std::vector<NamedParam> params = model.parameters();
    for (auto& p : state.parameters()) {
        params.push_back(p);
    }
    AdamState adam;
    auto batch_rng = seeded_rng(seed, 100);
    auto method_rng = seeded_rng(seed, 101);

    Mlp best = model.clone();
    double best_val = -1.0;
    for (std::size_t epoch = 1; epoch <= spec.train.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (const auto& batch : make_batches(train, spec.train.batch_size, batch_rng)) {
            Tensor loss = method_loss(spec.method, batch, model, state, method_rng);
            if (!std::isfinite(loss.item())) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
            }
            backward(loss);
            adam_step(params, adam, spec.train);
            loss_sum += loss.item() * static_cast<double>(batch.size());
            seen += batch.size();
        }
        const double acc = evaluate(model, val);
        r.train_loss.push_back(loss_sum / static_cast<double>(seen));
        r.val_accuracy.push_back(acc);
        if (acc > best_val) {
            best_val = acc;
            best = model.clone();
        }
        if (log) {
            log("subject " + std::to_string(r.target_subject) + " epoch " + std::to_string(epoch) +
                " loss " + std::to_string(r.train_loss.back()) + " val " + std::to_string(acc));
        }
    }
    r.best_epoch = select_best_epoch(r.val_accuracy) + 1;
    r.best_val_accuracy = r.val_accuracy[r.best_epoch - 1];
    r.final_val_accuracy = r.val_accuracy.back();
    const auto align = source_alignment(model, train);
    r.final_source_coral = align.coral;
    r.final_source_mmd2 = align.mmd2;

    DomainData target = prepare_domain(domains[fold.target], spec.features);
    for (const auto& id : target.ids) {
        if (train_ids.count(id) || val_ids.count(id)) {
            throw TrainingError("target sample " + id.str() + " also appears in the source sets");
        }
    }
    if (scaler) {
        scaler->apply(target);
    }
    r.target_accuracy = evaluate(best, target);
    return {std::move(r), std::move(best), std::move(model)};
}

// ---------------------------------------------------------------------------
// Benchmark and aggregation

/// Runs every LOSO fold, up to `jobs` at a time. Results are ordered by fold
/// index whatever the scheduling. Throws TrainingError naming each failed fold.
inline std::vector<FoldResult> run_loso(const std::vector<Domain>& domains, const ExperimentSpec& spec,
                                        std::size_t jobs = 1, const LogFn& log = {}) {
    const auto folds = loso_folds(domains.size());
    std::vector<std::optional<FoldResult>> results(folds.size());
    std::vector<std::string> errors(folds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < folds.size(); i = next++) {
            try {
                results[i] = train_fold(domains, folds[i], i, spec, log).result;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, folds.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) {
            pool.emplace_back(worker);
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    std::string failures;
    for (std::size_t i = 0; i < folds.size(); ++i) {
        if (!errors[i].empty()) {
            failures += "\n  fold " + std::to_string(i) + " (subject " + std::to_string(domains[folds[i].target].subject) +
                        "): " + errors[i];
        }
    }
    if (!failures.empty()) {
        throw TrainingError("benchmark folds failed:" + failures);
    }
    std::vector<FoldResult> out;
    for (auto& r : results) {
        out.push_back(std::move(*r));
    }
    return out;
}

struct CellSummary {
    std::string baseline;
    std::string method;
    double mean = 0.0;
    double std = 0.0;      // population standard deviation
    double variance = 0.0; // population variance
    std::vector<FoldResult> folds;
};

struct BenchmarkReport {
    std::vector<CellSummary> cells; // ordered by (baseline, method) canonical order
};

/// Mean and population standard deviation (divide by N).
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) {
        throw ContractError("mean_std: no values");
    }
    if (std::adjacent_find(xs.begin(), xs.end(), std::not_equal_to<>()) == xs.end()) {
        return {xs.front(), 0.0};
    }
    double mean = 0.0;
    for (double x : xs) {
        mean += x;
    }
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) {
        var += (x - mean) * (x - mean);
    }
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

inline int baseline_rank(const std::string& id) {
    const auto b = parse_baseline(id);
    return b ? static_cast<int>(*b) : 100;
}

/// Table column order: ERM, DANN, RSC, Mixup, MMD, CORAL, then GroupDRO.
inline int method_rank(const std::string& id) {
    static const std::vector<Method> order{Method::erm, Method::dann,  Method::rsc,      Method::mixup,
                                           Method::ddc, Method::coral, Method::group_dro};
    const auto m = parse_method(id);
    if (!m) {
        return 100;
    }
    return static_cast<int>(std::find(order.begin(), order.end(), *m) - order.begin());
}

/// Groups fold results by (baseline, method) and summarizes each cell.
inline BenchmarkReport aggregate(const std::vector<FoldResult>& results) {
    std::map<std::tuple<int, int, std::string, std::string>, std::vector<FoldResult>> cells;
    for (const auto& r : results) {
        cells[{baseline_rank(r.baseline), method_rank(r.method), r.baseline, r.method}].push_back(r);
    }
    BenchmarkReport report;
    std::optional<std::size_t> fold_count;
    for (auto& [key, folds] : cells) {
        if (fold_count && *fold_count != folds.size()) {
            throw ContractError("aggregate: cells hold different fold counts (" + std::to_string(*fold_count) +
                                " vs " + std::to_string(folds.size()) + ")");
        }
        fold_count = folds.size();
        std::vector<double> acc;
        for (const auto& f : folds) {
            acc.push_back(f.target_accuracy);
        }
        const auto [m, s] = mean_std(acc);
        report.cells.push_back({std::get<2>(key), std::get<3>(key), m, s, s * s, std::move(folds)});
    }
    return report;
}

// ---------------------------------------------------------------------------
// Epoch / batch-size sweep

struct SweepGrid {
    std::vector<std::size_t> epochs{50};
    std::vector<std::size_t> batch_sizes{8, 16, 32};
    std::vector<Method> methods{Method::mixup, Method::ddc, Method::coral};
    std::vector<Baseline> baselines{Baseline::mlp2, Baseline::mlp3, Baseline::mlp4, Baseline::dbn};
};

struct SweepRecord {
    std::string method;
    std::string baseline;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double mean = 0.0;
    double std = 0.0;
    bool ok = true;
    std::string error;
};

/// Runs a full LOSO benchmark per grid cell. A failing cell is recorded and
/// the sweep moves on. Records are sorted by (method, baseline, epochs, batch)
/// with identifiers compared as strings.
inline std::vector<SweepRecord> sweep(const std::vector<Domain>& domains, const ExperimentSpec& base,
                                      const SweepGrid& grid, std::size_t jobs = 1, const LogFn& log = {}) {
    if (grid.epochs.empty() || grid.batch_sizes.empty() || grid.methods.empty() || grid.baselines.empty()) {
        throw ConfigError("sweep grid must be non-empty on every axis");
    }
    std::vector<SweepRecord> records;
    for (Method m : grid.methods) {
        for (Baseline b : grid.baselines) {
            for (std::size_t e : grid.epochs) {
                for (std::size_t bs : grid.batch_sizes) {
                    ExperimentSpec spec = base;
                    spec.method.method = m;
                    if (spec.baseline.kind != b) {
                        spec.baseline.hidden.clear();
                    }
                    spec.baseline.kind = b;
                    spec.train.epochs = e;
                    spec.train.batch_size = bs;
                    SweepRecord rec;
                    rec.method = std::string(method_id(m));
                    rec.baseline = std::string(baseline_id(b));
                    rec.epochs = e;
                    rec.batch_size = bs;
                    try {
                        const auto report = aggregate(run_loso(domains, spec, jobs, log));
                        rec.mean = report.cells.front().mean;
                        rec.std = report.cells.front().std;
                    } catch (const std::exception& ex) {
                        rec.ok = false;
                        rec.error = ex.what();
                    }
                    records.push_back(std::move(rec));
                }
            }
        }
    }
    std::stable_sort(records.begin(), records.end(), [](const SweepRecord& a, const SweepRecord& b) {
        return std::tie(a.method, a.baseline, a.epochs, a.batch_size) <
               std::tie(b.method, b.baseline, b.epochs, b.batch_size);
    });
    return records;
}

} // namespace dgforge
