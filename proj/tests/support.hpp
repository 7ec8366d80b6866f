#pragma once

#include "dgforge/dg_methods.hpp"
#include "dgforge/gradcheck.hpp"
#include "dgforge/models.hpp"
#include "dgforge/tensor.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace dgtest {

using namespace dgforge;

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, bool requires_grad = false,
                            double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(r * c);
    for (auto& x : v) {
        x = n(rng);
    }
    return Tensor({r, c}, std::move(v), requires_grad);
}

/// M domains of `per_domain` samples each, `features` wide, random labels.
inline MultiDomainBatch random_batch(std::size_t domains, std::size_t per_domain, std::size_t features,
                                     std::mt19937_64& rng) {
    std::uniform_int_distribution<int> label(0, static_cast<int>(kEmotionClasses) - 1);
    std::vector<DomainSlice> slices;
    for (std::size_t d = 0; d < domains; ++d) {
        std::vector<int> y(per_domain);
        for (auto& v : y) {
            v = label(rng);
        }
        slices.push_back({d, random_matrix(per_domain, features, rng), one_hot(y, kEmotionClasses)});
    }
    return MultiDomainBatch::assemble(std::move(slices), domains);
}

/// Naive triple-loop product, independent of the library kernels.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                s += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = s;
        }
    }
    return out;
}

inline std::vector<Tensor> tensors_of(const std::vector<NamedParam>& params) {
    std::vector<Tensor> out;
    for (const auto& p : params) {
        out.push_back(p.tensor);
    }
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("dgforge_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    static int& counter() {
        static int n = 0;
        return n;
    }
    std::filesystem::path path_;
};

inline std::vector<double> to_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

/// Max relative error between backward() and central differences for one
/// method's training loss on a random 2-domain, 8-sample, 10-feature MLP-2
/// instance. Stochastic pieces are frozen so the loss is a fixed function of
/// the parameters: the Mixup pairing/lambdas are drawn once and GroupDRO's
/// weights are those after the step (they are constants in its gradient).
/// DANN's feature layers descend L_y - lambda L_d (the reversal), so its
/// difference quotient is taken on that objective.
inline double method_gradient_error(Method method, std::uint64_t seed = 2024) {
    std::mt19937_64 rng(seed);
    const MultiDomainBatch batch = random_batch(2, 4, 10, rng);
    const Mlp model = mlp_init(10, {6}, kEmotionClasses, seed);
    std::vector<Tensor> params = tensors_of(model.parameters());
    switch (method) {
    case Method::erm:
        return finite_diff_check([&] { return erm_loss(batch, model); }, params);
    case Method::mixup: {
        const VirtualBatch vb = mixup_batch(batch, 0.2, rng);
        return finite_diff_check([&] { return mixup_loss(vb, model); }, params);
    }
    case Method::group_dro: {
        const GroupWeights q = group_dro_step(batch, model, GroupWeights::uniform(2), 0.5).weights;
        return finite_diff_check([&] { return group_weighted_loss(batch, group_losses(batch, model), q); }, params);
    }
    case Method::dann: {
        const DomainHead head = domain_head_init(model.representation_dim(), 2, seed);
        const double lambda = 0.7;
        for (const auto& p : head.parameters()) {
            params.push_back(p.tensor);
        }
        // L_y + w L_d without any reversal.
        const auto objective = [&](double w) {
            const auto out = model.forward(batch.features);
            const Tensor ly = softmax_cross_entropy(out.logits, batch.labels);
            std::vector<int> dom;
            for (auto d : batch.sample_domains()) {
                dom.push_back(static_cast<int>(d));
            }
            const Tensor ld = softmax_cross_entropy(domain_head_forward(head, out.z), one_hot(dom, 2));
            return Tensor::scalar(ly.item() + w * ld.item());
        };
        // Classifier and domain-head parameters see L_y + L_d; the feature
        // layer sees L_y - lambda L_d.
        const auto dann = [&] { return dann_loss(batch, model, head, lambda); };
        std::vector<Tensor> features(params.begin(), params.begin() + 2);
        std::vector<Tensor> rest(params.begin() + 2, params.end());
        const double a = finite_diff_check(dann, [&] { return objective(1.0); }, rest);
        const double b = finite_diff_check(dann, [&] { return objective(-lambda); }, features);
        return std::max(a, b);
    }
    case Method::ddc:
        return finite_diff_check([&] { return ddc_loss(batch, model, 1.0); }, params);
    case Method::coral:
        return finite_diff_check([&] { return coral_total(batch, model, 1.0); }, params);
    case Method::rsc:
        return finite_diff_check([&] { return rsc_step(batch, model, 1.0 / 3.0); }, params);
    }
    return 1.0;
}

} // namespace dgtest
