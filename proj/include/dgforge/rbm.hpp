#pragma once

// Bernoulli restricted Boltzmann machines trained by one-step contrastive
// divergence, and the two-RBM deep belief network built on top of them.

#include "dgforge/models.hpp"

#include <random>
#include <span>
#include <vector>

namespace dgforge {

/// Hidden widths of the two stacked RBMs at full scale.
inline constexpr std::size_t kFullScaleDbnHidden1 = 23 * 23 * 5;
inline constexpr std::size_t kFullScaleDbnHidden2 = 18 * 18 * 2;

struct Rbm {
    std::size_t visible = 0;
    std::size_t hidden = 0;
    std::vector<double> weight;        // visible x hidden, row-major
    std::vector<double> visible_bias;  // b
    std::vector<double> hidden_bias;   // c
};

/// Draws W and the hidden bias exactly as linear_init would for stream
/// `stream` of `seed`; the visible bias starts at zero.
inline Rbm rbm_init(std::size_t visible, std::size_t hidden, std::uint64_t seed, std::uint64_t stream) {
    auto rng = seeded_rng(seed, stream);
    Linear l = linear_init(visible, hidden, rng);
    Rbm r;
    r.visible = visible;
    r.hidden = hidden;
    r.weight.assign(l.weight.values().begin(), l.weight.values().end());
    r.hidden_bias.assign(l.bias.values().begin(), l.bias.values().end());
    r.visible_bias.assign(visible, 0.0);
    return r;
}

namespace detail {

// sigmoid(x W + bias) for x (n x rows(W)).
inline std::vector<double> rbm_up(const Rbm& r, std::span<const double> v, std::size_t n) {
    std::vector<double> h(n * r.hidden);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(r.hidden_bias.begin(), r.hidden_bias.end(), h.begin() + static_cast<std::ptrdiff_t>(i * r.hidden));
    }
    gemm_nn(n, r.visible, r.hidden, v.data(), r.weight.data(), h.data());
    for (auto& x : h) {
        x = sigmoid_value(x);
    }
    return h;
}

// sigmoid(h W^T + visible_bias).
inline std::vector<double> rbm_down(const Rbm& r, std::span<const double> h, std::size_t n) {
    std::vector<double> v(n * r.visible);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(r.visible_bias.begin(), r.visible_bias.end(),
                  v.begin() + static_cast<std::ptrdiff_t>(i * r.visible));
    }
    gemm_nt(n, r.hidden, r.visible, h.data(), r.weight.data(), v.data());
    for (auto& x : v) {
        x = sigmoid_value(x);
    }
    return v;
}

} // namespace detail

/// Hidden-unit activation probabilities for each row of `data` (n x visible).
inline std::vector<double> rbm_hidden_probs(const Rbm& r, std::span<const double> data) {
    if (data.size() % r.visible != 0) {
        throw DimensionError("rbm: data size is not a multiple of the visible width");
    }
    return detail::rbm_up(r, data, data.size() / r.visible);
}

/// One CD-1 update on a batch (n x visible, entries in [0,1]).
///
/// The hidden state used for reconstruction is sampled; the positive and
/// negative statistics use activation probabilities. Returns the mean
/// squared reconstruction error of the batch before the update.
inline double rbm_cd1_step(Rbm& r, std::span<const double> batch, double lr, std::mt19937_64& rng) {
    if (batch.empty() || batch.size() % r.visible != 0) {
        throw DimensionError("rbm_cd1_step: batch size " + std::to_string(batch.size()) +
                             " is not a positive multiple of the visible width " + std::to_string(r.visible));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!(batch[i] >= 0.0 && batch[i] <= 1.0)) {
            throw InputError("rbm_cd1_step: value at " + std::to_string(i) + " is outside [0,1]");
        }
    }
    const std::size_t n = batch.size() / r.visible;
    const std::vector<double> ph0 = detail::rbm_up(r, batch, n);
    std::vector<double> h0(ph0.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < h0.size(); ++i) {
        h0[i] = u(rng) < ph0[i] ? 1.0 : 0.0;
    }
    const std::vector<double> v1 = detail::rbm_down(r, h0, n);
    const std::vector<double> ph1 = detail::rbm_up(r, v1, n);

    double err = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double d = batch[i] - v1[i];
        err += d * d;
    }
    err /= static_cast<double>(batch.size());

    if (lr != 0.0) {
        const double s = lr / static_cast<double>(n);
        std::vector<double> pos(r.visible * r.hidden, 0.0);
        std::vector<double> neg(r.visible * r.hidden, 0.0);
        detail::gemm_tn(n, r.visible, r.hidden, batch.data(), ph0.data(), pos.data());
        detail::gemm_tn(n, r.visible, r.hidden, v1.data(), ph1.data(), neg.data());
        for (std::size_t i = 0; i < r.weight.size(); ++i) {
            r.weight[i] += s * (pos[i] - neg[i]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < r.visible; ++j) {
                r.visible_bias[j] += s * (batch[i * r.visible + j] - v1[i * r.visible + j]);
            }
            for (std::size_t j = 0; j < r.hidden; ++j) {
                r.hidden_bias[j] += s * (ph0[i * r.hidden + j] - ph1[i * r.hidden + j]);
            }
        }
    }
    return err;
}

/// Runs `epochs` passes of shuffled CD-1 minibatches; returns the mean
/// reconstruction error of each epoch.
inline std::vector<double> rbm_train(Rbm& r, std::span<const double> data, std::size_t epochs, double lr,
                                     std::size_t batch_size, std::mt19937_64& rng) {
    if (data.empty() || data.size() % r.visible != 0) {
        throw DimensionError("rbm_train: data is not a positive multiple of the visible width");
    }
    if (batch_size == 0) {
        throw ConfigError("rbm_train: batch size must be positive");
    }
    const std::size_t n = data.size() / r.visible;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> history;
    std::vector<double> batch;
    for (std::size_t e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t end = std::min(n, start + batch_size);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) {
                const auto row = data.subspan(order[k] * r.visible, r.visible);
                batch.insert(batch.end(), row.begin(), row.end());
            }
            total += rbm_cd1_step(r, batch, lr, rng) * static_cast<double>(end - start);
        }
        history.push_back(total / static_cast<double>(n));
    }
    return history;
}

/// Layer widths input -> h1 -> h2 -> classes of a DBN stacked from RBMs of
/// the given shapes. Throws if the hidden layer of the first RBM does not
/// feed the visible layer of the second.
inline std::vector<std::size_t> dbn_layer_widths(std::size_t visible1, std::size_t hidden1, std::size_t visible2,
                                                 std::size_t hidden2, std::size_t class_count) {
    if (hidden1 != visible2) {
        throw ConfigError("dbn: first RBM has " + std::to_string(hidden1) + " hidden units but second RBM has " +
                          std::to_string(visible2) + " visible units");
    }
    if (visible1 == 0 || hidden1 == 0 || hidden2 == 0 || class_count == 0) {
        throw ConfigError("dbn: layer widths must be positive");
    }
    return {visible1, hidden1, hidden2, class_count};
}

struct DbnModel {
    Rbm first;
    Rbm second;
    Mlp network; // sigmoid MLP initialized from the RBM stack
    bool pretrained = false;
};

/// Turns the RBM stack into a sigmoid classifier. The classification layer
/// draws from stream 2 of `seed`, matching mlp_init's third layer.
inline DbnModel dbn_build(Rbm first, Rbm second, std::size_t class_count, std::uint64_t seed, bool pretrained) {
    const auto widths = dbn_layer_widths(first.visible, first.hidden, second.visible, second.hidden, class_count);
    auto as_linear = [](const Rbm& r) {
        return Linear{Tensor({r.visible, r.hidden}, r.weight, true), Tensor({1, r.hidden}, r.hidden_bias, true)};
    };
    std::vector<Linear> layers{as_linear(first), as_linear(second)};
    auto rng = seeded_rng(seed, 2);
    layers.push_back(linear_init(widths[2], widths[3], rng));
    DbnModel m{std::move(first), std::move(second), Mlp(std::move(layers), Activation::sigmoid), pretrained};
    return m;
}

} // namespace dgforge
