#pragma once

// Domain-generalization training objectives. Each turns a multi-domain
// minibatch into a scalar loss ready for backward().

#include "dgforge/models.hpp"
#include "dgforge/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dgforge {

enum class Method { erm, mixup, group_dro, dann, ddc, coral, rsc };

inline constexpr std::array<Method, 7> kAllMethods{Method::erm,  Method::mixup, Method::group_dro, Method::dann,
                                                   Method::ddc,  Method::coral, Method::rsc};

/// Canonical identifier used in configs and reports.
inline std::string_view method_id(Method m) {
    switch (m) {
    case Method::erm: return "erm";
    case Method::mixup: return "mixup";
    case Method::group_dro: return "group_dro";
    case Method::dann: return "dann";
    case Method::ddc: return "ddc";
    case Method::coral: return "coral";
    case Method::rsc: return "rsc";
    }
    return "?";
}

/// Column label used in rendered tables.
inline std::string_view method_label(Method m) {
    switch (m) {
    case Method::erm: return "ERM";
    case Method::mixup: return "Mixup";
    case Method::group_dro: return "GroupDRO";
    case Method::dann: return "DANN";
    case Method::ddc: return "MMD";
    case Method::coral: return "CORAL";
    case Method::rsc: return "RSC";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
    for (Method m : kAllMethods) {
        if (s == method_id(m)) {
            return m;
        }
    }
    if (s == "mmd") {
        return Method::ddc;
    }
    if (s == "groupdro") {
        return Method::group_dro;
    }
    return std::nullopt;
}

struct MmdKernel {
    enum class Kind { linear, rbf };
    Kind kind = Kind::linear;
    double bandwidth = 0.0; // rbf only; <= 0 selects the median pairwise distance
};

struct DGConfig {
    Method method = Method::erm;
    double mixup_alpha = 0.2;
    double dro_eta = 0.01;
    bool dro_exact_max = false;
    double dann_lambda = 1.0;
    double ddc_lambda = 1.0;
    double coral_weight = 1.0;
    double rsc_drop_factor = 1.0 / 3.0;
    MmdKernel kernel;

    void validate() const {
        if (!(mixup_alpha > 0.0)) {
            throw ConfigError("mixup_alpha must be > 0");
        }
        if (!(dro_eta >= 0.0)) {
            throw ConfigError("dro_eta must be >= 0");
        }
        if (!(dann_lambda >= 0.0) || !(ddc_lambda >= 0.0) || !(coral_weight >= 0.0)) {
            throw ConfigError("method weights must be >= 0");
        }
        if (!(rsc_drop_factor >= 0.0 && rsc_drop_factor < 1.0)) {
            throw ConfigError("rsc_drop_factor must lie in [0,1)");
        }
    }
};

// ---------------------------------------------------------------------------
// Batches

struct DomainSlice {
    std::size_t domain = 0;
    Tensor features; // n x d
    Tensor labels;   // n x classes, one-hot
};

struct DomainRange {
    std::size_t domain = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

/// Samples of several training domains stacked in ascending domain order.
struct MultiDomainBatch {
    Tensor features;
    Tensor labels;
    std::vector<DomainRange> ranges;
    std::size_t domain_count = 0; // M, the number of training domains in the fold

    std::size_t size() const { return ranges.empty() ? 0 : ranges.back().end; }
    bool empty() const { return size() == 0; }

    std::vector<std::size_t> sample_domains() const {
        std::vector<std::size_t> out(size());
        for (const auto& r : ranges) {
            std::fill(out.begin() + static_cast<std::ptrdiff_t>(r.begin),
                      out.begin() + static_cast<std::ptrdiff_t>(r.end), r.domain);
        }
        return out;
    }

    static MultiDomainBatch assemble(std::vector<DomainSlice> slices, std::size_t domain_count) {
        std::stable_sort(slices.begin(), slices.end(),
                         [](const DomainSlice& a, const DomainSlice& b) { return a.domain < b.domain; });
        MultiDomainBatch batch;
        batch.domain_count = domain_count;
        std::vector<Tensor> feats;
        std::vector<Tensor> labs;
        std::size_t offset = 0;
        for (std::size_t i = 0; i < slices.size(); ++i) {
            const auto& s = slices[i];
            if (s.domain >= domain_count) {
                throw ContractError("batch: domain index " + std::to_string(s.domain) + " outside [0," +
                                    std::to_string(domain_count) + ")");
            }
            if (i > 0 && slices[i - 1].domain == s.domain) {
                throw ContractError("batch: domain " + std::to_string(s.domain) + " appears twice");
            }
            if (s.features.rows() != s.labels.rows()) {
                throw DimensionError("batch: domain " + std::to_string(s.domain) + " has " +
                                     std::to_string(s.features.rows()) + " feature rows but " +
                                     std::to_string(s.labels.rows()) + " label rows");
            }
            batch.ranges.push_back({s.domain, offset, offset + s.features.rows()});
            offset += s.features.rows();
            feats.push_back(s.features);
            labs.push_back(s.labels);
        }
        if (!feats.empty()) {
            batch.features = concat_rows(feats);
            batch.labels = concat_rows(labs);
        }
        return batch;
    }
};

namespace detail {

inline void require_nonempty(const MultiDomainBatch& b, const char* op) {
    if (b.empty()) {
        throw ContractError(std::string(op) + ": empty batch");
    }
}

inline std::vector<Tensor> domain_blocks(const Tensor& z, const MultiDomainBatch& b) {
    std::vector<Tensor> out;
    out.reserve(b.ranges.size());
    for (const auto& r : b.ranges) {
        out.push_back(rows(z, r.begin, r.end));
    }
    return out;
}

/// Mean of pair_term(blocks[i], blocks[j]) over all i < j.
template <class PairTerm>
Tensor mean_over_pairs(const std::vector<Tensor>& blocks, PairTerm pair_term) {
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        for (std::size_t j = i + 1; j < blocks.size(); ++j) {
            terms.push_back(pair_term(blocks[i], blocks[j]));
        }
    }
    if (terms.empty()) {
        throw ContractError("pairwise penalty needs at least 2 domains");
    }
    return scale(add_all(terms), 1.0 / static_cast<double>(terms.size()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// ERM

/// Mean cross-entropy over every sample; domain identity is ignored.
inline Tensor erm_loss(const MultiDomainBatch& batch, const Mlp& model) {
    detail::require_nonempty(batch, "erm_loss");
    return softmax_cross_entropy(model.forward(batch.features).logits, batch.labels);
}

// ---------------------------------------------------------------------------
// Mixup

struct VirtualBatch {
    Tensor features;
    Tensor targets; // soft labels, rows sum to 1
};

/// Beta(a, b) via the ratio of two Gamma draws.
inline double sample_beta(double a, double b, std::mt19937_64& rng) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    if (x + y == 0.0) {
        // Both draws underflowed; for tiny concentrations either endpoint is
        // equally likely.
        return std::uniform_int_distribution<int>(0, 1)(rng);
    }
    return x / (x + y);
}

/// x~_i = l_i x_i + (1 - l_i) x_{p(i)}, and likewise for the labels.
inline VirtualBatch mixup_interpolate(const MultiDomainBatch& batch, std::span<const std::size_t> partners,
                                      std::span<const double> lambdas) {
    const std::size_t n = batch.size();
    if (n < 2) {
        throw ContractError("mixup needs at least 2 samples, got " + std::to_string(n));
    }
    if (partners.size() != n || lambdas.size() != n) {
        throw DimensionError("mixup: need one partner and one lambda per sample");
    }
    const std::size_t d = batch.features.cols();
    const std::size_t c = batch.labels.cols();
    std::vector<double> x(n * d);
    std::vector<double> y(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        const double l = lambdas[i];
        if (!(l >= 0.0 && l <= 1.0)) {
            throw InputError("mixup: lambda " + std::to_string(l) + " outside [0,1]");
        }
        const std::size_t j = partners[i];
        if (j >= n) {
            throw ContractError("mixup: partner index out of range");
        }
        for (std::size_t k = 0; k < d; ++k) {
            x[i * d + k] = l * batch.features[i * d + k] + (1.0 - l) * batch.features[j * d + k];
        }
        for (std::size_t k = 0; k < c; ++k) {
            y[i * c + k] = l * batch.labels[i * c + k] + (1.0 - l) * batch.labels[j * c + k];
        }
    }
    return {Tensor({n, d}, std::move(x)), Tensor({n, c}, std::move(y))};
}

/// Pairs every sample with a partner from a uniform random permutation of the
/// whole batch (crossing domains) and draws one lambda ~ Beta(alpha, alpha)
/// per pair.
inline VirtualBatch mixup_batch(const MultiDomainBatch& batch, double alpha, std::mt19937_64& rng) {
    if (!(alpha > 0.0)) {
        throw ConfigError("mixup alpha must be > 0");
    }
    const std::size_t n = batch.size();
    if (n < 2) {
        throw ContractError("mixup needs at least 2 samples, got " + std::to_string(n));
    }
    std::vector<std::size_t> partners(n);
    std::iota(partners.begin(), partners.end(), std::size_t{0});
    std::shuffle(partners.begin(), partners.end(), rng);
    std::vector<double> lambdas(n);
    for (auto& l : lambdas) {
        l = sample_beta(alpha, alpha, rng);
    }
    return mixup_interpolate(batch, partners, lambdas);
}

/// Cross-entropy against the soft targets of a virtual batch.
inline Tensor mixup_loss(const VirtualBatch& vb, const Mlp& model) {
    return soft_cross_entropy(model.forward(vb.features).logits, vb.targets);
}

// ---------------------------------------------------------------------------
// Group DRO

/// Mixture weights over groups; always a point of the probability simplex.
class GroupWeights {
public:
    GroupWeights() = default;
    explicit GroupWeights(std::vector<double> q) : q_(std::move(q)) {
        if (q_.empty()) {
            throw ConfigError("group weights need at least one group");
        }
        double s = 0.0;
        for (double v : q_) {
            if (!(v >= 0.0)) {
                throw ConfigError("group weights must be nonnegative");
            }
            s += v;
        }
        if (!(s > 0.0)) {
            throw ConfigError("group weights must not all be zero");
        }
        for (auto& v : q_) {
            v /= s;
        }
    }

    static GroupWeights uniform(std::size_t groups) { return GroupWeights(std::vector<double>(groups, 1.0)); }

    std::size_t size() const { return q_.size(); }
    double operator[](std::size_t g) const { return q_[g]; }
    std::span<const double> values() const { return q_; }

private:
    std::vector<double> q_;
};

/// Exponentiated-gradient step q_g <- q_g exp(eta L_g), renormalized.
/// A NaN loss marks a group absent from the batch; it keeps its weight
/// before renormalization. With
/// `exact_max` the weights jump to the worst present group (lowest index on
/// ties), the eta -> infinity limit.
inline GroupWeights update_group_weights(const GroupWeights& q, std::span<const double> losses, double eta,
                                         bool exact_max = false) {
    if (eta < 0.0) {
        throw ConfigError("group DRO step size must be >= 0, got " + std::to_string(eta));
    }
    const std::size_t m = q.size();
    if (losses.size() != m) {
        throw DimensionError("group DRO: expected " + std::to_string(m) + " group losses");
    }
    double worst = -std::numeric_limits<double>::infinity();
    std::size_t worst_g = m;
    for (std::size_t g = 0; g < m; ++g) {
        if (!std::isnan(losses[g]) && losses[g] > worst) {
            worst = losses[g];
            worst_g = g;
        }
    }
    if (worst_g == m) {
        return q;
    }
    std::vector<double> next(m, 0.0);
    if (exact_max) {
        next[worst_g] = 1.0;
        return GroupWeights(std::move(next));
    }
    // Shift by the worst loss so the exponent never overflows.
    const double absent_scale = std::exp(-eta * worst);
    for (std::size_t g = 0; g < m; ++g) {
        next[g] = std::isnan(losses[g]) ? q[g] * absent_scale : q[g] * std::exp(eta * (losses[g] - worst));
    }
    return GroupWeights(std::move(next));
}

struct GroupDroResult {
    Tensor loss;
    GroupWeights weights;
    std::vector<double> group_losses; // NaN for groups absent from the batch
};

/// Per-group mean cross-entropy, one scalar tensor per range of the batch.
inline std::vector<Tensor> group_losses(const MultiDomainBatch& batch, const Mlp& model) {
    detail::require_nonempty(batch, "group_losses");
    const Tensor logits = model.forward(batch.features).logits;
    std::vector<Tensor> out;
    for (const auto& r : batch.ranges) {
        out.push_back(softmax_cross_entropy(rows(logits, r.begin, r.end), rows(batch.labels, r.begin, r.end)));
    }
    return out;
}

/// Sum over present groups of q_g L_g / sum of present q_g; q is constant.
inline Tensor group_weighted_loss(const MultiDomainBatch& batch, const std::vector<Tensor>& losses,
                                  const GroupWeights& q) {
    double mass = 0.0;
    for (const auto& r : batch.ranges) {
        mass += q[r.domain];
    }
    std::vector<Tensor> terms;
    for (std::size_t k = 0; k < batch.ranges.size(); ++k) {
        const double w = mass > 0.0 ? q[batch.ranges[k].domain] / mass : 0.0;
        terms.push_back(scale(losses[k], w));
    }
    return add_all(terms);
}

/// Updates q from this batch's group losses, then returns the q-weighted loss
/// under the updated weights. Gradients flow only through the group losses.
inline GroupDroResult group_dro_step(const MultiDomainBatch& batch, const Mlp& model, const GroupWeights& q,
                                     double eta, bool exact_max = false) {
    if (eta < 0.0) {
        throw ConfigError("group DRO step size must be >= 0, got " + std::to_string(eta));
    }
    if (batch.domain_count != q.size()) {
        throw DimensionError("group DRO: batch has " + std::to_string(batch.domain_count) +
                             " domains but q has " + std::to_string(q.size()) + " groups");
    }
    const auto losses = group_losses(batch, model);
    std::vector<double> values(q.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < batch.ranges.size(); ++k) {
        values[batch.ranges[k].domain] = losses[k].item();
    }
    GroupWeights next = update_group_weights(q, values, eta, exact_max);
    Tensor loss = group_weighted_loss(batch, losses, next);
    return {std::move(loss), std::move(next), std::move(values)};
}

// ---------------------------------------------------------------------------
// DANN

/// Label loss plus domain loss, the domain classifier seeing the
/// representation through a gradient reversal of strength lambda.
inline Tensor dann_loss(const MultiDomainBatch& batch, const Mlp& model, const DomainHead& head, double lambda) {
    detail::require_nonempty(batch, "dann_loss");
    if (batch.ranges.size() < 2) {
        throw ContractError("dann_loss: domain classification needs at least 2 domains in the batch");
    }
    if (batch.domain_count > head.domain_count()) {
        throw DimensionError("dann_loss: batch has " + std::to_string(batch.domain_count) +
                             " domains but the head predicts " + std::to_string(head.domain_count()));
    }
    const auto out = model.forward(batch.features);
    const Tensor label_loss = softmax_cross_entropy(out.logits, batch.labels);
    std::vector<int> domains;
    for (auto d : batch.sample_domains()) {
        domains.push_back(static_cast<int>(d));
    }
    const Tensor domain_logits = domain_head_forward(head, grad_reverse(out.z, lambda));
    const Tensor domain_loss = softmax_cross_entropy(domain_logits, one_hot(domains, head.domain_count()));
    return add(label_loss, domain_loss);
}

// ---------------------------------------------------------------------------
// MMD / DDC

inline double median_pairwise_distance(const Tensor& xs, const Tensor& xt) {
    const Tensor pooled = concat_rows({xs.detach(), xt.detach()});
    const Tensor d2 = pairwise_sq_dist(pooled, pooled);
    const std::size_t n = pooled.rows();
    std::vector<double> dist;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            dist.push_back(std::sqrt(d2.at(i, j)));
        }
    }
    if (dist.empty()) {
        return 1.0;
    }
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    double med = *mid;
    if (dist.size() % 2 == 0) {
        med = 0.5 * (med + *std::max_element(dist.begin(), mid));
    }
    return med > 0.0 ? med : 1.0;
}

/// Squared MMD. Linear kernel: |mean(X_S) - mean(X_T)|^2. RBF kernel: the
/// biased estimator mean K_SS + mean K_TT - 2 mean K_ST.
inline Tensor mmd_squared(const Tensor& xs, const Tensor& xt, const MmdKernel& kernel = {}) {
    detail::require_matrix(xs, "mmd", "X_S");
    detail::require_matrix(xt, "mmd", "X_T");
    if (xs.cols() != xt.cols()) {
        throw DimensionError("mmd: X_S has width " + std::to_string(xs.cols()) + " (axis 1) but X_T has width " +
                             std::to_string(xt.cols()));
    }
    if (kernel.kind == MmdKernel::Kind::linear) {
        return sum(square(sub(col_mean(xs), col_mean(xt))));
    }
    const double h = kernel.bandwidth > 0.0 ? kernel.bandwidth : median_pairwise_distance(xs, xt);
    const double gamma = -1.0 / (2.0 * h * h);
    auto k = [gamma](const Tensor& a, const Tensor& b) { return mean(exp(scale(pairwise_sq_dist(a, b), gamma))); };
    return sub(add(k(xs, xs), k(xt, xt)), scale(k(xs, xt), 2.0));
}

/// MMD distance (the root of mmd_squared, clamped at 0 first).
inline Tensor mmd(const Tensor& xs, const Tensor& xt, const MmdKernel& kernel = {}) {
    return sqrt(clamp_min(mmd_squared(xs, xt, kernel), 0.0));
}

/// Mean squared MMD over all unordered pairs of blocks.
inline Tensor mean_pairwise_mmd2(const std::vector<Tensor>& blocks, const MmdKernel& kernel = {}) {
    return detail::mean_over_pairs(blocks, [&](const Tensor& a, const Tensor& b) { return mmd_squared(a, b, kernel); });
}

/// Classification loss plus lambda times the mean pairwise squared MMD
/// between the representations of the source domains in the batch.
inline Tensor ddc_loss(const MultiDomainBatch& batch, const Mlp& model, double lambda, const MmdKernel& kernel = {}) {
    detail::require_nonempty(batch, "ddc_loss");
    if (batch.ranges.size() < 2) {
        throw ContractError("ddc_loss: needs at least 2 domains in the batch");
    }
    const auto out = model.forward(batch.features);
    Tensor loss = softmax_cross_entropy(out.logits, batch.labels);
    if (lambda > 0.0) {
        loss = add(loss, scale(mean_pairwise_mmd2(detail::domain_blocks(out.z, batch), kernel), lambda));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// CORAL

/// Sample covariance (D^T D - (1^T D)^T (1^T D) / n) / (n - 1), computed on
/// column-centered data.
inline Tensor coral_cov(const Tensor& d) {
    detail::require_matrix(d, "coral_cov", "D");
    const std::size_t n = d.rows();
    if (n < 2) {
        throw ContractError("coral_cov: covariance needs at least 2 rows, got " + std::to_string(n));
    }
    const Tensor centered = sub_row(d, col_mean(d));
    return scale(matmul(transpose(centered), centered), 1.0 / static_cast<double>(n - 1));
}

/// |C_S - C_T|_F^2 / (4 d^2).
inline Tensor coral_loss(const Tensor& cs, const Tensor& ct) {
    detail::require_matrix(cs, "coral_loss", "C_S");
    detail::require_matrix(ct, "coral_loss", "C_T");
    if (cs.rows() != cs.cols() || ct.rows() != ct.cols()) {
        throw DimensionError("coral_loss: covariances must be square, got " + shape_string(cs.shape()) + " and " +
                             shape_string(ct.shape()));
    }
    if (cs.shape() != ct.shape()) {
        throw DimensionError("coral_loss: C_S is " + shape_string(cs.shape()) + " but C_T is " +
                             shape_string(ct.shape()));
    }
    const double dim = static_cast<double>(cs.rows());
    return scale(sum(square(sub(cs, ct))), 1.0 / (4.0 * dim * dim));
}

/// Mean CORAL loss over all unordered pairs of blocks. Uses
/// sum_{i<j} |C_i - C_j|^2 = M sum_i |C_i - C_mean|^2, which needs M matrix
/// differences instead of M(M-1)/2. Fused into one node: with
/// L = k sum_i |C_i - C_mean|^2 the block gradient is
/// 4k/(n_i-1) * X_i,centered * (C_i - C_mean).
inline Tensor mean_pairwise_coral(const std::vector<Tensor>& blocks) {
    if (blocks.size() < 2) {
        throw ContractError("mean_pairwise_coral: needs at least 2 blocks, got " + std::to_string(blocks.size()));
    }
    const std::size_t d = blocks.front().cols();
    for (const auto& b : blocks) {
        detail::require_matrix(b, "mean_pairwise_coral", "block");
        if (b.cols() != d) {
            throw DimensionError("mean_pairwise_coral: blocks have differing widths");
        }
        if (b.rows() < 2) {
            throw ContractError("coral_cov: covariance needs at least 2 rows, got " + std::to_string(b.rows()));
        }
    }
    const std::size_t m = blocks.size();
    struct Saved {
        std::vector<std::vector<double>> centered;
        std::vector<std::vector<double>> spread;  // C_i - C_mean
    };
    auto saved = std::make_shared<Saved>();
    saved->centered.resize(m);
    saved->spread.resize(m);
    std::vector<double> centre(d * d, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t n = blocks[i].rows();
        const auto& v = blocks[i].values();
        std::vector<double> mean(d, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                mean[c] += v[r * d + c];
            }
        }
        for (auto& x : mean) {
            x /= static_cast<double>(n);
        }
        auto& xc = saved->centered[i];
        xc.resize(n * d);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                xc[r * d + c] = v[r * d + c] - mean[c];
            }
        }
        auto& cov = saved->spread[i];
        cov.assign(d * d, 0.0);
        detail::gemm_tn(n, d, d, xc.data(), xc.data(), cov.data());
        const double inv = 1.0 / static_cast<double>(n - 1);
        for (std::size_t k = 0; k < d * d; ++k) {
            cov[k] *= inv;
            centre[k] += cov[k];
        }
    }
    for (auto& x : centre) {
        x /= static_cast<double>(m);
    }
    double total = 0.0;
    for (auto& s : saved->spread) {
        for (std::size_t k = 0; k < d * d; ++k) {
            s[k] -= centre[k];
            total += s[k] * s[k];
        }
    }
    // M * sum / (pairs * 4 d^2) with pairs = M(M-1)/2.
    const double dim = static_cast<double>(d);
    const double coef = 2.0 / ((static_cast<double>(m) - 1.0) * 4.0 * dim * dim);
    return detail::make_result({1}, {coef * total}, blocks, [saved, coef, d, m](detail::Node& self) {
        const double g = self.grad[0];
        for (std::size_t i = 0; i < m; ++i) {
            auto& in = *self.inputs[i];
            if (!in.requires_grad) {
                continue;
            }
            const std::size_t n = saved->centered[i].size() / d;
            std::vector<double> delta(n * d, 0.0);
            detail::gemm_nn(n, d, d, saved->centered[i].data(), saved->spread[i].data(), delta.data());
            const double f = g * 4.0 * coef / static_cast<double>(n - 1);
            for (auto& x : delta) {
                x *= f;
            }
            detail::accumulate(in, delta);
        }
    });
}

/// Classification loss plus weight times the mean pairwise CORAL loss between
/// source-domain representations.
inline Tensor coral_total(const MultiDomainBatch& batch, const Mlp& model, double weight) {
    detail::require_nonempty(batch, "coral_total");
    if (batch.ranges.size() < 2) {
        throw ContractError("coral_total: needs at least 2 domains in the batch");
    }
    for (const auto& r : batch.ranges) {
        if (r.size() < 2) {
            throw ContractError("coral_total: domain " + std::to_string(r.domain) +
                                " has a single sample; covariance needs 2");
        }
    }
    const auto out = model.forward(batch.features);
    Tensor loss = softmax_cross_entropy(out.logits, batch.labels);
    if (weight > 0.0) {
        loss = add(loss, scale(mean_pairwise_coral(detail::domain_blocks(out.z, batch)), weight));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// RSC

/// Number of representation elements dropped per sample: ceil(drop * d).
/// A 1e-9 slack absorbs the rounding in products like (1/3) * 6.
inline std::size_t rsc_drop_count(std::size_t dim, double drop_factor) {
    if (!(drop_factor >= 0.0 && drop_factor < 1.0)) {
        throw ConfigError("rsc drop factor must lie in [0,1), got " + std::to_string(drop_factor));
    }
    const double raw = drop_factor * static_cast<double>(dim);
    return std::min(dim, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
}

/// d(sum_c logits_c * y_c)/dz per sample: gradient of the true-class logit of
/// the task head with respect to the representation. Parameters are treated
/// as constants.
inline Tensor rsc_representation_gradient(const Tensor& z, const Tensor& labels, const Linear& head) {
    Tensor leaf = z.clone(true);
    const Tensor logits = affine(leaf, head.weight.detach(), head.bias.detach());
    backward(sum(mul(logits, labels.detach())));
    return Tensor(z.shape(), leaf.grad());
}

/// Mask that zeroes, per row, the ceil(drop * d) largest gradient entries
/// (ties to the lowest index).
inline Tensor rsc_mask(const Tensor& gradient, double drop_factor) {
    detail::require_matrix(gradient, "rsc_mask", "gradient");
    const std::size_t n = gradient.rows();
    const std::size_t d = gradient.cols();
    const std::size_t k = rsc_drop_count(d, drop_factor);
    std::vector<double> mask(n * d, 1.0);
    std::vector<std::size_t> idx(d);
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return gradient.at(i, a) > gradient.at(i, b); });
        for (std::size_t t = 0; t < k; ++t) {
            mask[i * d + idx[t]] = 0.0;
        }
    }
    return Tensor({n, d}, std::move(mask));
}

/// Representation self-challenging: drop the most label-predictive
/// representation elements and train on what remains.
inline Tensor rsc_step(const MultiDomainBatch& batch, const Mlp& model, double drop_factor) {
    detail::require_nonempty(batch, "rsc_step");
    rsc_drop_count(1, drop_factor);
    const Tensor z = model.represent(batch.features);
    const Tensor g = rsc_representation_gradient(z, batch.labels, model.head());
    const Tensor masked = mask_elements(z, rsc_mask(g, drop_factor));
    return softmax_cross_entropy(model.head()(masked), batch.labels);
}

// ---------------------------------------------------------------------------
// Dispatch

/// Per-fold mutable state a method carries across steps.
struct MethodState {
    GroupWeights group_weights;
    std::optional<DomainHead> domain_head;

    std::vector<NamedParam> parameters() const {
        return domain_head ? domain_head->parameters() : std::vector<NamedParam>{};
    }
};

inline MethodState method_state_init(const DGConfig& cfg, std::size_t domain_count, std::size_t representation_dim,
                                     std::uint64_t seed) {
    MethodState s;
    s.group_weights = GroupWeights::uniform(domain_count);
    if (cfg.method == Method::dann) {
        s.domain_head = domain_head_init(representation_dim, domain_count, seed);
    }
    return s;
}

/// Training loss for one step of the configured method.
///
/// Alignment penalties use only the domains a batch can support: CORAL skips
/// domains with a single sample, and any pairwise or adversarial term is
/// dropped (leaving the classification loss) when fewer than two domains
/// qualify. This only happens on the tail batches of an epoch.
inline Tensor method_loss(const DGConfig& cfg, const MultiDomainBatch& batch, const Mlp& model, MethodState& state,
                          std::mt19937_64& rng) {
    detail::require_nonempty(batch, "method_loss");
    switch (cfg.method) {
    case Method::erm:
        return erm_loss(batch, model);
    case Method::mixup:
        if (batch.size() < 2) {
            return erm_loss(batch, model);
        }
        return mixup_loss(mixup_batch(batch, cfg.mixup_alpha, rng), model);
    case Method::group_dro: {
        auto r = group_dro_step(batch, model, state.group_weights, cfg.dro_eta, cfg.dro_exact_max);
        state.group_weights = std::move(r.weights);
        return r.loss;
    }
    case Method::dann:
        if (batch.ranges.size() < 2) {
            return erm_loss(batch, model);
        }
        return dann_loss(batch, model, *state.domain_head, cfg.dann_lambda);
    case Method::ddc:
        if (batch.ranges.size() < 2) {
            return erm_loss(batch, model);
        }
        return ddc_loss(batch, model, cfg.ddc_lambda, cfg.kernel);
    case Method::coral: {
        const auto out = model.forward(batch.features);
        Tensor loss = softmax_cross_entropy(out.logits, batch.labels);
        std::vector<Tensor> blocks;
        for (const auto& r : batch.ranges) {
            if (r.size() >= 2) {
                blocks.push_back(rows(out.z, r.begin, r.end));
            }
        }
        if (blocks.size() >= 2 && cfg.coral_weight > 0.0) {
            loss = add(loss, scale(mean_pairwise_coral(blocks), cfg.coral_weight));
        }
        return loss;
    }
    case Method::rsc:
        return rsc_step(batch, model, cfg.rsc_drop_factor);
    }
    throw ConfigError("unknown method");
}

} // namespace dgforge
