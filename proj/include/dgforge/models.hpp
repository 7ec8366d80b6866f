#pragma once

// Baseline networks: MLP-k classifiers, the domain classifier head used by
// adversarial training, and the parameter bookkeeping the optimizer needs.

#include "dgforge/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dgforge {

inline constexpr std::size_t kEmotionClasses = 3;

enum class Activation { relu, sigmoid };

inline const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "sigmoid"; }

/// Deterministic generator for stream `stream` of a seed.
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

/// Fully connected layer: out = x W + b, W is (in x out), b is (1 x out).
struct Linear {
    Tensor weight;
    Tensor bias;

    std::size_t in_dim() const { return weight.rows(); }
    std::size_t out_dim() const { return weight.cols(); }
    Tensor operator()(const Tensor& x) const { return affine(x, weight, bias); }
};

/// Weights and biases ~ U(-1/sqrt(in), 1/sqrt(in)), drawn weight-first.
inline Linear linear_init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    if (in == 0 || out == 0) {
        throw ConfigError("layer dimensions must be positive");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out);
    for (auto& v : w) {
        v = dist(rng);
    }
    std::vector<double> b(out);
    for (auto& v : b) {
        v = dist(rng);
    }
    return {Tensor({in, out}, std::move(w), true), Tensor({1, out}, std::move(b), true)};
}

inline Linear linear_zero(std::size_t in, std::size_t out) {
    return {Tensor::zeros({in, out}, true), Tensor::zeros({1, out}, true)};
}

/// A parameter tensor plus what the optimizer needs to know about it.
struct NamedParam {
    std::string name;
    Tensor tensor;
    bool is_bias = false;
};

struct ForwardOutput {
    Tensor z;      // penultimate activations (the representation)
    Tensor logits; // final affine output
};

/// Stack of fully connected layers with a shared hidden activation. The last
/// layer is the task head; everything before it produces the representation.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<Linear> layers, Activation activation) : layers_(std::move(layers)), activation_(activation) {
        if (layers_.size() < 2) {
            throw ConfigError("an MLP needs at least 2 layers, got " + std::to_string(layers_.size()));
        }
        for (std::size_t i = 1; i < layers_.size(); ++i) {
            if (layers_[i].in_dim() != layers_[i - 1].out_dim()) {
                throw ConfigError("layer " + std::to_string(i) + " expects " +
                                  std::to_string(layers_[i].in_dim()) + " inputs but layer " +
                                  std::to_string(i - 1) + " produces " +
                                  std::to_string(layers_[i - 1].out_dim()));
            }
        }
    }

    std::size_t layer_count() const { return layers_.size(); }
    std::size_t input_dim() const { return layers_.front().in_dim(); }
    std::size_t representation_dim() const { return layers_.back().in_dim(); }
    std::size_t class_count() const { return layers_.back().out_dim(); }
    Activation activation() const { return activation_; }
    const std::vector<Linear>& layers() const { return layers_; }
    std::vector<Linear>& layers() { return layers_; }
    const Linear& head() const { return layers_.back(); }

    /// Hidden layers only; returns the representation z.
    Tensor represent(const Tensor& x) const {
        if (x.rank() != 2 || x.cols() != input_dim()) {
            throw DimensionError("model expects " + std::to_string(input_dim()) +
                                 " input features (axis 1), got shape " + shape_string(x.shape()));
        }
        Tensor h = x;
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
            h = activate(layers_[i](h));
        }
        return h;
    }

    ForwardOutput forward(const Tensor& x) const {
        Tensor z = represent(x);
        Tensor logits = head()(z);
        return {std::move(z), std::move(logits)};
    }

    std::vector<NamedParam> parameters() const {
        std::vector<NamedParam> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            out.push_back({"layer" + std::to_string(i) + ".weight", layers_[i].weight, false});
            out.push_back({"layer" + std::to_string(i) + ".bias", layers_[i].bias, true});
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) {
            n += l.weight.size() + l.bias.size();
        }
        return n;
    }

    /// Deep copy of the parameter values (for snapshots).
    Mlp clone() const {
        std::vector<Linear> copy;
        for (const auto& l : layers_) {
            copy.push_back({l.weight.clone(true), l.bias.clone(true)});
        }
        return Mlp(std::move(copy), activation_);
    }

private:
    Tensor activate(const Tensor& t) const { return activation_ == Activation::relu ? relu(t) : sigmoid(t); }

    std::vector<Linear> layers_;
    Activation activation_ = Activation::relu;
};

/// Layer i draws from stream i of `seed`, so a layer's initial values do not
/// depend on how many layers precede it.
inline Mlp mlp_init(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                    std::size_t class_count, std::uint64_t seed, Activation activation = Activation::relu) {
    if (hidden_dims.empty()) {
        throw ConfigError("an MLP needs at least one hidden layer");
    }
    if (input_dim == 0 || class_count == 0) {
        throw ConfigError("input and class dimensions must be positive");
    }
    std::vector<Linear> layers;
    std::size_t prev = input_dim;
    std::size_t index = 0;
    for (const std::size_t h : hidden_dims) {
        if (h == 0) {
            throw ConfigError("hidden layer " + std::to_string(index) + " has width 0");
        }
        auto rng = seeded_rng(seed, index++);
        layers.push_back(linear_init(prev, h, rng));
        prev = h;
    }
    auto rng = seeded_rng(seed, index);
    layers.push_back(linear_init(prev, class_count, rng));
    return Mlp(std::move(layers), activation);
}

/// Linear domain classifier on the representation: one logit per source domain.
struct DomainHead {
    Linear layer;

    std::size_t domain_count() const { return layer.out_dim(); }

    std::vector<NamedParam> parameters() const {
        return {{"domain_head.weight", layer.weight, false}, {"domain_head.bias", layer.bias, true}};
    }
};

inline DomainHead domain_head_init(std::size_t representation_dim, std::size_t domains, std::uint64_t seed) {
    if (domains < 2) {
        throw ConfigError("a domain head needs at least 2 domains, got " + std::to_string(domains));
    }
    auto rng = seeded_rng(seed, 0xD0A1);
    return {linear_init(representation_dim, domains, rng)};
}

inline Tensor domain_head_forward(const DomainHead& head, const Tensor& z) {
    if (head.domain_count() < 2) {
        throw ContractError("domain head has fewer than 2 outputs");
    }
    if (z.rank() != 2 || z.cols() != head.layer.in_dim()) {
        throw DimensionError("domain head expects " + std::to_string(head.layer.in_dim()) +
                             " representation features (axis 1), got shape " + shape_string(z.shape()));
    }
    return head.layer(z);
}

/// Index of the largest entry per row, ties to the lowest index.
inline std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    const std::size_t c = logits.cols();
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (logits.at(i, j) > logits.at(i, best)) {
                best = j;
            }
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

} // namespace dgforge
