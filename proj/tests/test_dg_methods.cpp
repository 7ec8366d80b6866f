#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace dgforge;
using dgtest::random_batch;
using dgtest::random_matrix;

namespace {

MultiDomainBatch batch_of(std::vector<std::vector<std::vector<double>>> per_domain_x,
                          std::vector<std::vector<int>> per_domain_y) {
    std::vector<DomainSlice> slices;
    for (std::size_t d = 0; d < per_domain_x.size(); ++d) {
        slices.push_back({d, Tensor::matrix(per_domain_x[d]), one_hot(per_domain_y[d], kEmotionClasses)});
    }
    return MultiDomainBatch::assemble(std::move(slices), per_domain_x.size());
}

std::vector<std::vector<double>> grads_after(const std::function<Tensor()>& f, const std::vector<NamedParam>& params) {
    for (auto p : params) {
        p.tensor.zero_grad();
    }
    backward(f());
    std::vector<std::vector<double>> out;
    for (auto p : params) {
        out.push_back(p.tensor.grad());
        p.tensor.zero_grad();
    }
    return out;
}

void expect_close(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b, double tol) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_EQ(a[i].size(), b[i].size());
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            EXPECT_NEAR(a[i][j], b[i][j], tol) << "param " << i << " entry " << j;
        }
    }
}

Mlp small_model(std::uint64_t seed = 5) { return mlp_init(10, {6}, kEmotionClasses, seed); }

} // namespace

// --- batches ---------------------------------------------------------------

TEST(Batch, AssembleOrdersByDomain) {
    std::vector<DomainSlice> slices;
    for (std::size_t d : {2u, 0u, 1u}) {
        const int y[] = {0, 1};
        slices.push_back({d, Tensor::full({2, 3}, static_cast<double>(d)), one_hot(y, 3)});
    }
    const auto b = MultiDomainBatch::assemble(slices, 3);
    EXPECT_EQ(b.sample_domains(), (std::vector<std::size_t>{0, 0, 1, 1, 2, 2}));
    EXPECT_EQ(b.features.at(0, 0), 0.0);
    EXPECT_EQ(b.features.at(4, 0), 2.0);
    slices.push_back(slices.front());
    EXPECT_THROW(MultiDomainBatch::assemble(slices, 3), ContractError);
    EXPECT_THROW(MultiDomainBatch::assemble({slices.front()}, 2), ContractError);
}

// --- ERM -------------------------------------------------------------------

TEST(Erm, SaturatedAndUniform) {
    Mlp m = small_model();
    m.layers().back() = linear_zero(6, 3);
    auto rng = std::mt19937_64(2);
    const auto batch = random_batch(2, 3, 10, rng);
    EXPECT_NEAR(erm_loss(batch, m).item(), std::log(3.0), 1e-12);

    m.layers().back().bias.mutable_values()[1] = 100.0;
    const auto one = batch_of({{{0, 0, 0, 0, 0, 0, 0, 0, 0, 0}}}, {{1}});
    EXPECT_LT(erm_loss(one, m).item(), 1e-10);
}

TEST(Erm, EqualsCrossEntropyOnConcatenation) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(3);
    const auto batch = random_batch(3, 4, 10, rng);
    EXPECT_EQ(erm_loss(batch, m).item(), softmax_cross_entropy(m.forward(batch.features).logits, batch.labels).item());
}

TEST(Erm, EmptyBatchIsContractError) {
    EXPECT_THROW(erm_loss(MultiDomainBatch{}, small_model()), ContractError);
}

// --- Mixup -----------------------------------------------------------------

TEST(Mixup, LambdaOneIsIdentity) {
    auto rng = std::mt19937_64(4);
    const auto batch = random_batch(2, 3, 10, rng);
    std::vector<std::size_t> partners{5, 4, 3, 2, 1, 0};
    std::vector<double> lambdas(6, 1.0);
    const auto vb = mixup_interpolate(batch, partners, lambdas);
    EXPECT_EQ(dgtest::to_vector(vb.features), dgtest::to_vector(batch.features));
    EXPECT_EQ(dgtest::to_vector(vb.targets), dgtest::to_vector(batch.labels));
    const Mlp m = small_model();
    EXPECT_EQ(mixup_loss(vb, m).item(), erm_loss(batch, m).item());
}

TEST(Mixup, QuarterInterpolation) {
    const auto batch = batch_of({{{1, 0}}, {{0, 1}}}, {{0}, {1}});
    std::vector<std::size_t> partners{1, 0};
    std::vector<double> lambdas{0.25, 0.25};
    const auto vb = mixup_interpolate(batch, partners, lambdas);
    EXPECT_EQ(vb.features.at(0, 0), 0.25);
    EXPECT_EQ(vb.features.at(0, 1), 0.75);
    EXPECT_EQ(vb.targets.at(0, 0), 0.25);
    EXPECT_EQ(vb.targets.at(0, 1), 0.75);
    EXPECT_EQ(vb.targets.at(0, 2), 0.0);
}

TEST(Mixup, BetaMeanIsOneHalf) {
    auto rng = std::mt19937_64(5);
    double s = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double l = sample_beta(0.2, 0.2, rng);
        ASSERT_GE(l, 0.0);
        ASSERT_LE(l, 1.0);
        s += l;
    }
    EXPECT_NEAR(s / 10000.0, 0.5, 0.02);
}

TEST(Mixup, BatchShapesAndSoftLabels) {
    auto rng = std::mt19937_64(6);
    const auto batch = random_batch(2, 4, 10, rng);
    const auto vb = mixup_batch(batch, 0.2, rng);
    EXPECT_EQ(vb.features.shape(), batch.features.shape());
    for (std::size_t i = 0; i < vb.targets.rows(); ++i) {
        EXPECT_NEAR(vb.targets.at(i, 0) + vb.targets.at(i, 1) + vb.targets.at(i, 2), 1.0, 1e-12);
    }
}

TEST(Mixup, NeedsTwoSamples) {
    const auto one = batch_of({{{1, 0}}}, {{0}});
    auto rng = std::mt19937_64(1);
    EXPECT_THROW(mixup_batch(one, 0.2, rng), ContractError);
}

TEST(Mixup, UniformTargetsGiveLn3AtZeroLogits) {
    Mlp m = small_model();
    m.layers().back() = linear_zero(6, 3);
    auto rng = std::mt19937_64(7);
    const VirtualBatch vb{random_matrix(4, 10, rng), Tensor::full({4, 3}, 1.0 / 3.0)};
    EXPECT_NEAR(mixup_loss(vb, m).item(), std::log(3.0), 1e-12);
}

TEST(Mixup, HalfLambdaIsAverageOfEndpointLosses) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(8);
    const Tensor x = random_matrix(1, 10, rng);
    const int yi[] = {0};
    const int yj[] = {2};
    const VirtualBatch vb{x, Tensor::matrix({{0.5, 0, 0.5}})};
    const Tensor logits = m.forward(x).logits;
    const double expected = 0.5 * softmax_cross_entropy(logits, one_hot(yi, 3)).item() +
                            0.5 * softmax_cross_entropy(logits, one_hot(yj, 3)).item();
    EXPECT_NEAR(mixup_loss(vb, m).item(), expected, 1e-12);
}

TEST(Mixup, RejectsTargetsNotSummingToOne) {
    const Mlp m = small_model();
    const VirtualBatch vb{Tensor::zeros({1, 10}), Tensor::matrix({{0.5, 0.2, 0.2}})};
    EXPECT_THROW(mixup_loss(vb, m), InputError);
}

// --- GroupDRO --------------------------------------------------------------

TEST(GroupDro, EqualLossesKeepUniformWeights) {
    const auto q = update_group_weights(GroupWeights::uniform(3), std::vector<double>{0.7, 0.7, 0.7}, 0.5);
    for (std::size_t g = 0; g < 3; ++g) {
        EXPECT_NEAR(q[g], 1.0 / 3.0, 1e-15);
    }
}

TEST(GroupDro, HandCase) {
    const auto q = update_group_weights(GroupWeights::uniform(2), std::vector<double>{2.0, 0.0}, std::log(2.0));
    EXPECT_EQ(q[0], 0.8);
    EXPECT_EQ(q[1], 0.2);
}

TEST(GroupDro, StepWithEqualGroupLossesReturnsThatLoss) {
    Mlp m = small_model();
    m.layers().back() = linear_zero(6, 3);
    auto rng = std::mt19937_64(9);
    const auto batch = random_batch(3, 2, 10, rng);
    const auto r = group_dro_step(batch, m, GroupWeights::uniform(3), 0.01);
    EXPECT_NEAR(r.loss.item(), std::log(3.0), 1e-12);
    for (std::size_t g = 0; g < 3; ++g) {
        EXPECT_NEAR(r.weights[g], 1.0 / 3.0, 1e-15);
    }
}

TEST(GroupDro, EtaZeroIsMeanOfGroupMeans) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(10);
    const auto batch = random_batch(3, 4, 10, rng);
    const auto r = group_dro_step(batch, m, GroupWeights::uniform(3), 0.0);
    const auto losses = group_losses(batch, m);
    double mean = 0.0;
    for (const auto& l : losses) {
        mean += l.item() / 3.0;
    }
    EXPECT_NEAR(r.loss.item(), mean, 1e-12);
    // Equal group sizes: the same as plain ERM.
    EXPECT_NEAR(r.loss.item(), erm_loss(batch, m).item(), 1e-12);
}

TEST(GroupDro, NegativeEtaIsConfigError) {
    EXPECT_THROW(update_group_weights(GroupWeights::uniform(2), std::vector<double>{1, 2}, -0.1), ConfigError);
}

TEST(GroupDro, StaysOnSimplex) {
    auto rng = std::mt19937_64(11);
    std::uniform_real_distribution<double> loss(0.0, 5.0);
    std::uniform_real_distribution<double> eta(0.0, 2.0);
    GroupWeights q = GroupWeights::uniform(5);
    for (int step = 0; step < 1000; ++step) {
        std::vector<double> l(5);
        for (auto& v : l) {
            v = loss(rng);
        }
        if (step % 7 == 0) {
            l[step % 5] = std::nan("");
        }
        q = update_group_weights(q, l, eta(rng));
        double s = 0.0;
        for (double v : q.values()) {
            ASSERT_GE(v, 0.0);
            s += v;
        }
        ASSERT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(GroupDro, AbsentGroupKeepsWeightBeforeRenormalization) {
    const GroupWeights q(std::vector<double>{0.5, 0.3, 0.2});
    const double eta = 0.4;
    const auto next = update_group_weights(q, std::vector<double>{1.0, std::nan(""), 2.0}, eta);
    const double a = 0.5 * std::exp(eta * 1.0);
    const double b = 0.3;
    const double c = 0.2 * std::exp(eta * 2.0);
    const double z = a + b + c;
    EXPECT_NEAR(next[0], a / z, 1e-15);
    EXPECT_NEAR(next[1], b / z, 1e-15);
    EXPECT_NEAR(next[2], c / z, 1e-15);
}

TEST(GroupDro, ExactMaxPicksWorstGroup) {
    const auto q = update_group_weights(GroupWeights::uniform(3), std::vector<double>{0.5, 2.0, 2.0}, 0.01, true);
    EXPECT_EQ(q[0], 0.0);
    EXPECT_EQ(q[1], 1.0);
    EXPECT_EQ(q[2], 0.0);
}

TEST(GroupDro, MissingDomainInBatchUsesPresentGroups) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(12);
    auto full = random_batch(3, 2, 10, rng);
    // Keep domains 0 and 2 only.
    std::vector<DomainSlice> slices{{0, rows(full.features, 0, 2), rows(full.labels, 0, 2)},
                                    {2, rows(full.features, 4, 6), rows(full.labels, 4, 6)}};
    const auto partial = MultiDomainBatch::assemble(slices, 3);
    const GroupWeights q(std::vector<double>{0.2, 0.5, 0.3});
    const auto r = group_dro_step(partial, m, q, 0.1);
    EXPECT_TRUE(std::isnan(r.group_losses[1]));
    double s = 0.0;
    for (double v : r.weights.values()) {
        s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const double w0 = r.weights[0] / (r.weights[0] + r.weights[2]);
    EXPECT_NEAR(r.loss.item(), w0 * r.group_losses[0] + (1 - w0) * r.group_losses[2], 1e-12);
}

// The derivative of the returned loss in L_g is q'_g (1 + eta (L_g - mean)),
// nonnegative whenever eta times the loss spread stays below 1. That covers
// the training regime (eta = 0.01, cross-entropy losses of a few nats).
TEST(GroupDro, LossMonotoneInEachGroupLoss) {
    auto rng = std::mt19937_64(13);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    std::uniform_real_distribution<double> small_eta(0.0, 0.15);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> l{u(rng), u(rng), u(rng)};
        const GroupWeights q(std::vector<double>{u(rng) + 0.1, u(rng) + 0.1, u(rng) + 0.1});
        const double eta = small_eta(rng);
        auto weighted = [&](const std::vector<double>& losses) {
            const auto next = update_group_weights(q, losses, eta);
            double s = 0.0;
            for (std::size_t g = 0; g < 3; ++g) {
                s += next[g] * losses[g];
            }
            return s;
        };
        const double base = weighted(l);
        const std::size_t g = static_cast<std::size_t>(trial % 3);
        l[g] += u(rng);
        EXPECT_GE(weighted(l), base - 1e-12);
    }
}

// --- DANN ------------------------------------------------------------------

TEST(Dann, LambdaZeroMatchesErmGradients) {
    const Mlp m = small_model();
    const DomainHead head = domain_head_init(6, 2, 3);
    auto rng = std::mt19937_64(14);
    const auto batch = random_batch(2, 4, 10, rng);
    const auto dann = grads_after([&] { return dann_loss(batch, m, head, 0.0); }, m.parameters());
    const auto erm = grads_after([&] { return erm_loss(batch, m); }, m.parameters());
    expect_close(dann, erm, 1e-12);
    // The head still receives gradient.
    const auto hg = grads_after([&] { return dann_loss(batch, m, head, 0.0); }, head.parameters());
    double norm = 0.0;
    for (const auto& g : hg) {
        for (double v : g) {
            norm += v * v;
        }
    }
    EXPECT_GT(norm, 0.0);
}

TEST(Dann, ZeroHeadWithFourDomainsGivesLn4DomainLoss) {
    const Mlp m = small_model();
    const DomainHead head{linear_zero(6, 4)};
    auto rng = std::mt19937_64(15);
    const auto batch = random_batch(4, 2, 10, rng);
    EXPECT_NEAR(dann_loss(batch, m, head, 1.0).item() - erm_loss(batch, m).item(), std::log(4.0), 1e-12);
}

TEST(Dann, DomainGradientOnFeatureLayerIsNegated) {
    const Mlp m = small_model();
    const DomainHead head = domain_head_init(6, 2, 4);
    auto rng = std::mt19937_64(16);
    const auto batch = random_batch(2, 4, 10, rng);
    std::vector<int> dom;
    for (auto d : batch.sample_domains()) {
        dom.push_back(static_cast<int>(d));
    }
    const Tensor dy = one_hot(dom, 2);
    const std::vector<NamedParam> feature{m.parameters()[0], m.parameters()[1]};
    const auto reversed = grads_after(
        [&] { return softmax_cross_entropy(domain_head_forward(head, grad_reverse(m.represent(batch.features), 1.0)), dy); },
        feature);
    const auto plain =
        grads_after([&] { return softmax_cross_entropy(domain_head_forward(head, m.represent(batch.features)), dy); },
                    feature);
    for (std::size_t i = 0; i < plain.size(); ++i) {
        for (std::size_t j = 0; j < plain[i].size(); ++j) {
            EXPECT_EQ(reversed[i][j], -plain[i][j]);
        }
    }
}

TEST(Dann, SingleDomainIsContractError) {
    auto rng = std::mt19937_64(17);
    const auto batch = random_batch(1, 4, 10, rng);
    EXPECT_THROW(dann_loss(batch, small_model(), domain_head_init(6, 2, 1), 1.0), ContractError);
}

// --- MMD / DDC -------------------------------------------------------------

TEST(Mmd, IdenticalInputsGiveZero) {
    auto rng = std::mt19937_64(18);
    const Tensor x = random_matrix(6, 4, rng);
    EXPECT_NEAR(mmd(x, x).item(), 0.0, 1e-9);
    EXPECT_NEAR(mmd(x, x, {MmdKernel::Kind::rbf, 0.0}).item(), 0.0, 1e-9);
    EXPECT_NEAR(mmd(x, x, {MmdKernel::Kind::rbf, 1.5}).item(), 0.0, 1e-9);
}

TEST(Mmd, LinearHandCase) {
    EXPECT_NEAR(mmd(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}})).item(), std::sqrt(2.0), 1e-9);
}

TEST(Mmd, LinearIsMeanDifferenceNorm) {
    auto rng = std::mt19937_64(19);
    const Tensor xs = random_matrix(5, 3, rng);
    const Tensor xt = random_matrix(7, 3, rng);
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        double ms = 0.0;
        double mt = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            ms += xs.at(i, j) / 5.0;
        }
        for (std::size_t i = 0; i < 7; ++i) {
            mt += xt.at(i, j) / 7.0;
        }
        s += (ms - mt) * (ms - mt);
    }
    EXPECT_NEAR(mmd(xs, xt).item(), std::sqrt(s), 1e-12);
}

TEST(Mmd, RbfMatchesDirectKernelSums) {
    auto rng = std::mt19937_64(20);
    const Tensor xs = random_matrix(4, 3, rng);
    const Tensor xt = random_matrix(5, 3, rng);
    const double h = 1.3;
    auto k = [&](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            d2 += (a.at(i, c) - b.at(j, c)) * (a.at(i, c) - b.at(j, c));
        }
        return std::exp(-d2 / (2 * h * h));
    };
    auto mk = [&](const Tensor& a, const Tensor& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < b.rows(); ++j) {
                s += k(a, i, b, j);
            }
        }
        return s / static_cast<double>(a.rows() * b.rows());
    };
    const double expected = std::sqrt(std::max(0.0, mk(xs, xs) + mk(xt, xt) - 2 * mk(xs, xt)));
    EXPECT_NEAR(mmd(xs, xt, {MmdKernel::Kind::rbf, h}).item(), expected, 1e-12);
}

TEST(Mmd, Symmetric) {
    auto rng = std::mt19937_64(21);
    for (int t = 0; t < 10; ++t) {
        const Tensor a = random_matrix(4, 3, rng);
        const Tensor b = random_matrix(6, 3, rng, false, 2.0);
        EXPECT_NEAR(mmd(a, b).item(), mmd(b, a).item(), 1e-12);
        EXPECT_NEAR(mmd(a, b, {MmdKernel::Kind::rbf, 0.0}).item(), mmd(b, a, {MmdKernel::Kind::rbf, 0.0}).item(), 1e-12);
        EXPECT_GE(mmd_squared(a, b, {MmdKernel::Kind::rbf, 0.0}).item(), -1e-12);
    }
}

TEST(Mmd, WidthMismatch) {
    EXPECT_THROW(mmd(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), DimensionError);
}

TEST(Ddc, LambdaZeroEqualsErm) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(22);
    const auto batch = random_batch(3, 3, 10, rng);
    EXPECT_EQ(ddc_loss(batch, m, 0.0).item(), erm_loss(batch, m).item());
}

TEST(Ddc, IdenticalDomainsHaveNoPenalty) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(23);
    const Tensor x = random_matrix(3, 10, rng);
    const int y[] = {0, 1, 2};
    const auto batch = MultiDomainBatch::assemble({{0, x, one_hot(y, 3)}, {1, x, one_hot(y, 3)}}, 2);
    EXPECT_NEAR(ddc_loss(batch, m, 1.0).item(), erm_loss(batch, m).item(), 1e-12);
}

TEST(Ddc, ThreeDomainsAverageThreePairs) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(24);
    const auto batch = random_batch(3, 4, 10, rng);
    const Tensor z = m.represent(batch.features);
    const Tensor z0 = rows(z, 0, 4);
    const Tensor z1 = rows(z, 4, 8);
    const Tensor z2 = rows(z, 8, 12);
    const double pairs = (mmd_squared(z0, z1).item() + mmd_squared(z0, z2).item() + mmd_squared(z1, z2).item()) / 3.0;
    EXPECT_NEAR(ddc_loss(batch, m, 2.0).item(), erm_loss(batch, m).item() + 2.0 * pairs, 1e-12);
}

TEST(Ddc, SingleDomainIsContractError) {
    auto rng = std::mt19937_64(25);
    EXPECT_THROW(ddc_loss(random_batch(1, 4, 10, rng), small_model(), 1.0), ContractError);
}

// --- CORAL -----------------------------------------------------------------

TEST(Coral, IdenticalRowsGiveZeroCovariance) {
    const Tensor c = coral_cov(Tensor::matrix({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}));
    for (double v : c.values()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Coral, HandCovariance) {
    EXPECT_EQ(dgtest::to_vector(coral_cov(Tensor::matrix({{1, 0}, {-1, 0}}))), (std::vector<double>{2, 0, 0, 0}));
}

TEST(Coral, CovarianceSymmetricPsd) {
    auto rng = std::mt19937_64(26);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 10; ++t) {
        const Tensor c = coral_cov(random_matrix(5, 4, rng));
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                EXPECT_NEAR(c.at(i, j), c.at(j, i), 1e-14);
            }
        }
        for (int k = 0; k < 50; ++k) {
            std::vector<double> v(4);
            for (auto& x : v) {
                x = n(rng);
            }
            double q = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 4; ++j) {
                    q += v[i] * c.at(i, j) * v[j];
                }
            }
            EXPECT_GE(q, -1e-9);
        }
    }
}

TEST(Coral, CovarianceMatchesTextbookFormula) {
    auto rng = std::mt19937_64(27);
    const Tensor d = random_matrix(6, 3, rng);
    const Tensor c = coral_cov(d);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            double sab = 0.0;
            double sa = 0.0;
            double sb = 0.0;
            for (std::size_t i = 0; i < 6; ++i) {
                sab += d.at(i, a) * d.at(i, b);
                sa += d.at(i, a);
                sb += d.at(i, b);
            }
            EXPECT_NEAR(c.at(a, b), (sab - sa * sb / 6.0) / 5.0, 1e-12);
        }
    }
}

TEST(Coral, CovarianceNeedsTwoRows) {
    EXPECT_THROW(coral_cov(Tensor::matrix({{1, 2}})), ContractError);
}

TEST(Coral, LossCases) {
    const Tensor a = Tensor::matrix({{2, 1}, {1, 3}});
    EXPECT_EQ(coral_loss(a, a).item(), 0.0);
    EXPECT_EQ(coral_loss(Tensor::matrix({{2}}), Tensor::matrix({{0}})).item(), 1.0);
    const Tensor b = Tensor::matrix({{0.5, -1}, {-1, 4}});
    EXPECT_EQ(coral_loss(a, b).item(), coral_loss(b, a).item());
    EXPECT_THROW(coral_loss(a, Tensor::matrix({{1}})), DimensionError);
}

TEST(Coral, WeightZeroEqualsErm) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(28);
    const auto batch = random_batch(2, 4, 10, rng);
    EXPECT_EQ(coral_total(batch, m, 0.0).item(), erm_loss(batch, m).item());
}

TEST(Coral, PointMassDomainsHaveNoPenalty) {
    const Mlp m = small_model();
    const std::vector<double> point{0.3, -1, 2, 0, 0.5, 1, -2, 0.1, 0.7, 1.1};
    const auto batch = batch_of({{point, point, point}, {point, point}}, {{0, 1, 2}, {1, 1}});
    EXPECT_NEAR(coral_total(batch, m, 1.0).item(), erm_loss(batch, m).item(), 1e-15);
}

TEST(Coral, SingletonDomainNamedInError) {
    auto rng = std::mt19937_64(29);
    std::vector<DomainSlice> slices{{0, random_matrix(3, 10, rng), one_hot(std::vector<int>{0, 1, 2}, 3)},
                                    {1, random_matrix(1, 10, rng), one_hot(std::vector<int>{1}, 3)}};
    const auto batch = MultiDomainBatch::assemble(slices, 2);
    try {
        coral_total(batch, small_model(), 1.0);
        FAIL() << "expected ContractError";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("domain 1"), std::string::npos) << e.what();
    }
}

TEST(Coral, MeanPairwiseMatchesPairEnumeration) {
    auto rng = std::mt19937_64(40);
    for (std::size_t m : {2u, 3u, 5u}) {
        std::vector<Tensor> blocks;
        for (std::size_t i = 0; i < m; ++i) {
            blocks.push_back(random_matrix(3 + i, 4, rng, false, 1.0 + static_cast<double>(i)));
        }
        double total = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = i + 1; j < m; ++j) {
                total += coral_loss(coral_cov(blocks[i]), coral_cov(blocks[j])).item();
                ++pairs;
            }
        }
        const double expected = total / static_cast<double>(pairs);
        EXPECT_NEAR(mean_pairwise_coral(blocks).item(), expected, 1e-12 * expected) << m;
    }
    EXPECT_THROW(mean_pairwise_coral({random_matrix(3, 4, rng)}), ContractError);
}

TEST(Coral, PenaltyGradientMatchesFiniteDifferences) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(30);
    const auto batch = random_batch(3, 4, 10, rng);
    EXPECT_LT(finite_diff_check([&] { return mean_pairwise_coral(detail::domain_blocks(m.represent(batch.features), batch)); },
                                dgtest::tensors_of(m.parameters())),
              1e-6);
}

// --- RSC -------------------------------------------------------------------

TEST(Rsc, DropZeroEqualsErm) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(31);
    const auto batch = random_batch(2, 4, 10, rng);
    EXPECT_EQ(rsc_step(batch, m, 0.0).item(), erm_loss(batch, m).item());
}

TEST(Rsc, DropCount) {
    EXPECT_EQ(rsc_drop_count(6, 1.0 / 3.0), 2u);
    EXPECT_EQ(rsc_drop_count(256, 1.0 / 3.0), 86u);
    EXPECT_EQ(rsc_drop_count(7, 1.0 / 3.0), 3u);
    EXPECT_EQ(rsc_drop_count(6, 0.0), 0u);
    EXPECT_THROW(rsc_drop_count(6, 1.0), ConfigError);
    EXPECT_THROW(rsc_drop_count(6, -0.1), ConfigError);
}

TEST(Rsc, HandLinearHead) {
    // True class 1 column of the head is (3,1,2,0,5,4).
    Linear head{Tensor::matrix({{0, 3, 0}, {0, 1, 0}, {0, 2, 0}, {0, 0, 0}, {0, 5, 0}, {0, 4, 0}}, true),
                Tensor::zeros({1, 3}, true)};
    const Tensor z = Tensor::matrix({{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}});
    const int y[] = {1};
    const Tensor g = rsc_representation_gradient(z, one_hot(y, 3), head);
    EXPECT_EQ(dgtest::to_vector(g), (std::vector<double>{3, 1, 2, 0, 5, 4}));
    const Tensor mask = rsc_mask(g, 1.0 / 3.0);
    EXPECT_EQ(dgtest::to_vector(mask), (std::vector<double>{1, 1, 1, 1, 0, 0}));
}

TEST(Rsc, TiesBreakToLowestIndex) {
    const Tensor mask = rsc_mask(Tensor::matrix({{1, 2, 2, 2, 0, 1}}), 1.0 / 3.0);
    EXPECT_EQ(dgtest::to_vector(mask), (std::vector<double>{1, 0, 0, 1, 1, 1}));
}

TEST(Rsc, MasksTopEntriesPerRow) {
    auto rng = std::mt19937_64(32);
    const Tensor g = random_matrix(10, 9, rng);
    const Tensor mask = rsc_mask(g, 1.0 / 3.0);
    for (std::size_t i = 0; i < 10; ++i) {
        std::vector<double> row(9);
        for (std::size_t j = 0; j < 9; ++j) {
            row[j] = g.at(i, j);
        }
        std::vector<double> sorted = row;
        std::sort(sorted.rbegin(), sorted.rend());
        std::size_t dropped = 0;
        for (std::size_t j = 0; j < 9; ++j) {
            if (mask.at(i, j) == 0.0) {
                ++dropped;
                EXPECT_GE(row[j], sorted[2]);
            } else {
                EXPECT_LE(row[j], sorted[2]);
            }
        }
        EXPECT_EQ(dropped, 3u);
    }
}

TEST(Rsc, StepMasksTwoOfSix) {
    const Mlp m = mlp_init(10, {6}, 3, 33);
    auto rng = std::mt19937_64(33);
    const auto batch = random_batch(2, 4, 10, rng);
    const Tensor z = m.represent(batch.features);
    const Tensor mask = rsc_mask(rsc_representation_gradient(z, batch.labels, m.head()), 1.0 / 3.0);
    for (std::size_t i = 0; i < mask.rows(); ++i) {
        double kept = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            kept += mask.at(i, j);
        }
        EXPECT_EQ(kept, 4.0);
    }
    // The step's loss is cross-entropy on the masked representation.
    const Tensor expected = softmax_cross_entropy(m.head()(mask_elements(z, mask)), batch.labels);
    EXPECT_EQ(rsc_step(batch, m, 1.0 / 3.0).item(), expected.item());
}

TEST(Rsc, GradientFlowsOnlyThroughUnmaskedUnits) {
    const Mlp m = mlp_init(10, {6}, 3, 34);
    auto rng = std::mt19937_64(34);
    const auto batch = random_batch(1, 1, 10, rng);
    const Tensor z = m.represent(batch.features);
    const Tensor mask = rsc_mask(rsc_representation_gradient(z, batch.labels, m.head()), 1.0 / 3.0);
    auto params = m.parameters();
    backward(rsc_step(batch, m, 1.0 / 3.0));
    const auto head_grad = params[2].tensor.grad(); // 6 x 3
    for (std::size_t j = 0; j < 6; ++j) {
        if (mask.at(0, j) == 0.0) {
            for (std::size_t c = 0; c < 3; ++c) {
                EXPECT_EQ(head_grad[j * 3 + c], 0.0);
            }
        }
    }
}

// --- All methods -----------------------------------------------------------

class MethodGradient : public ::testing::TestWithParam<Method> {};

TEST_P(MethodGradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        EXPECT_LT(dgtest::method_gradient_error(GetParam(), seed), 1e-6) << method_id(GetParam()) << " seed " << seed;
    }
}

INSTANTIATE_TEST_SUITE_P(AllMethods, MethodGradient, ::testing::ValuesIn(kAllMethods),
                         [](const auto& info) { return std::string(method_id(info.param)); });

TEST(Reductions, EveryMethodReducesToErm) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(35);
    const auto batch = random_batch(2, 4, 10, rng);
    const double erm = erm_loss(batch, m).item();
    std::vector<std::size_t> partners(batch.size());
    std::iota(partners.begin(), partners.end(), std::size_t{0});
    std::reverse(partners.begin(), partners.end());
    std::vector<double> ones(batch.size(), 1.0);
    EXPECT_NEAR(mixup_loss(mixup_interpolate(batch, partners, ones), m).item(), erm, 1e-12);
    EXPECT_NEAR(ddc_loss(batch, m, 0.0).item(), erm, 1e-12);
    EXPECT_NEAR(coral_total(batch, m, 0.0).item(), erm, 1e-12);
    EXPECT_NEAR(rsc_step(batch, m, 0.0).item(), erm, 1e-12);
    const auto e = grads_after([&] { return erm_loss(batch, m); }, m.parameters());
    const auto d = grads_after([&] { return dann_loss(batch, m, domain_head_init(6, 2, 1), 0.0); }, m.parameters());
    expect_close(d, e, 1e-12);
}

TEST(MethodLoss, TailBatchesFallBack) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(36);
    const int y[] = {2};
    const auto single = MultiDomainBatch::assemble({{1, random_matrix(1, 10, rng), one_hot(y, 3)}}, 3);
    for (Method method : kAllMethods) {
        DGConfig cfg;
        cfg.method = method;
        MethodState state = method_state_init(cfg, 3, 6, 1);
        const Tensor loss = method_loss(cfg, single, m, state, rng);
        EXPECT_TRUE(std::isfinite(loss.item())) << method_id(method);
    }
}

TEST(MethodLoss, CoralSkipsSingletonDomains) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(37);
    std::vector<DomainSlice> slices{{0, random_matrix(3, 10, rng), one_hot(std::vector<int>{0, 1, 2}, 3)},
                                    {1, random_matrix(1, 10, rng), one_hot(std::vector<int>{1}, 3)},
                                    {2, random_matrix(2, 10, rng), one_hot(std::vector<int>{2, 0}, 3)}};
    const auto batch = MultiDomainBatch::assemble(slices, 3);
    DGConfig cfg;
    cfg.method = Method::coral;
    MethodState state = method_state_init(cfg, 3, 6, 1);
    const Tensor z = m.represent(batch.features);
    const double expected =
        erm_loss(batch, m).item() + coral_loss(coral_cov(rows(z, 0, 3)), coral_cov(rows(z, 4, 6))).item();
    EXPECT_NEAR(method_loss(cfg, batch, m, state, rng).item(), expected, 1e-12);
}

TEST(MethodLoss, GroupDroStatePersists) {
    const Mlp m = small_model();
    auto rng = std::mt19937_64(38);
    DGConfig cfg;
    cfg.method = Method::group_dro;
    cfg.dro_eta = 0.5;
    MethodState state = method_state_init(cfg, 2, 6, 1);
    for (int i = 0; i < 3; ++i) {
        method_loss(cfg, random_batch(2, 3, 10, rng), m, state, rng);
    }
    EXPECT_NE(state.group_weights[0], 0.5);
}

TEST(DGConfig, Validation) {
    DGConfig c;
    EXPECT_NO_THROW(c.validate());
    c.mixup_alpha = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.rsc_drop_factor = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.coral_weight = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(DGConfig{}.rsc_drop_factor, 1.0 / 3.0);
    EXPECT_EQ(DGConfig{}.mixup_alpha, 0.2);
    EXPECT_EQ(DGConfig{}.dann_lambda, 1.0);
    EXPECT_EQ(DGConfig{}.ddc_lambda, 1.0);
}

TEST(MethodIds, RoundTrip) {
    for (Method m : kAllMethods) {
        EXPECT_EQ(parse_method(method_id(m)), m);
    }
    EXPECT_EQ(parse_method("mmd"), Method::ddc);
    EXPECT_FALSE(parse_method("nope").has_value());
}
