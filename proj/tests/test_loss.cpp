// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cgdrcn/gradcheck.hpp"
#include "cgdrcn/loss.hpp"
#include "cgdrcn/rng.hpp"

using namespace cgdrcn;

namespace {

using G = Graph<double>;
using TD = Tensor<double>;

TD random_map(std::size_t n, std::uint64_t seed, double lo, double hi) {
    TD t({1, n, n});
    Rng rng(seed);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

struct Instance {
    std::vector<TD> pred, target, cm; // levels 3, 4, 5, 6; cm[3] is the constant map
};

Instance random_instance(std::uint64_t seed) {
    Instance in;
    const std::size_t sizes[4] = {8, 4, 2, 1};
    for (std::size_t i = 0; i < 4; ++i) {
        in.pred.push_back(random_map(sizes[i], seed * 10 + i, -1, 1));
        in.target.push_back(random_map(sizes[i], seed * 10 + i + 4, 0, 1));
        in.cm.push_back(i == 3 ? TD({1, 1, 1}, 1.0) : random_map(sizes[i], seed * 10 + i + 8, 0.05, 1));
    }
    return in;
}

double flat_loss_d(const Instance& in, bool squared) {
    double total = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < in.pred[i].size(); ++k) {
            const double d = in.cm[i][k] * in.target[i][k] - in.cm[i][k] * in.pred[i][k];
            s += d * d;
        }
        total += squared ? s : std::sqrt(s);
    }
    return total;
}

double flat_loss_c(const Instance& in) {
    double total = 0;
    for (std::size_t i = 0; i < 3; ++i)
        for (double v : in.cm[i].values()) total += std::log(v);
    return total;
}

struct Vars {
    std::vector<Var> pred, target, cm;
};

Vars load(G& g, const Instance& in, bool grads = false) {
    Vars v;
    for (std::size_t i = 0; i < 4; ++i) {
        v.pred.push_back(g.input(in.pred[i], grads));
        v.target.push_back(g.input(in.target[i]));
        v.cm.push_back(i == 3 ? Var{} : g.input(in.cm[i], grads));
    }
    return v;
}

double scalar(G& g, Var v) { return g.value(v)[0]; }

double relative_error_oracle(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-12); }

} // namespace

TEST(LossD, PerfectPredictionIsZero) {
    auto in = random_instance(1);
    in.pred = in.target;
    G g;
    const auto v = load(g, in);
    EXPECT_EQ(scalar(g, loss_d<double>(g, v.pred, v.target, v.cm, false)), 0.0);
}

TEST(LossD, HandArithmetic) {
    G g;
    std::vector<Var> p{g.input(TD({1, 1, 1}))}, t{g.input(TD({1, 1, 1}, 2.0))}, c{g.input(TD({1, 1, 1}, 0.5))};
    EXPECT_EQ(scalar(g, loss_d<double>(g, p, t, c, false)), 1.0);
}

TEST(LossD, MatchesFlatLoopOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto in = random_instance(seed);
        for (bool squared : {false, true}) {
            G g;
            const auto v = load(g, in);
            const double got = scalar(g, loss_d<double>(g, v.pred, v.target, v.cm, squared));
            EXPECT_LT(relative_error_oracle(got, flat_loss_d(in, squared)), 1e-6);
        }
    }
}

TEST(LossD, ScalePermutationInvariance) {
    const auto in = random_instance(3);
    G g;
    auto v = load(g, in);
    const double a = scalar(g, loss_d<double>(g, v.pred, v.target, v.cm, false));
    std::vector<std::size_t> perm{2, 0, 3, 1};
    Vars w;
    for (auto i : perm) {
        w.pred.push_back(v.pred[i]);
        w.target.push_back(v.target[i]);
        w.cm.push_back(v.cm[i]);
    }
    EXPECT_NEAR(scalar(g, loss_d<double>(g, w.pred, w.target, w.cm, false)), a, 1e-12 * a);
}

TEST(LossD, ShapeMismatchRejected) {
    G g;
    std::vector<Var> p{g.input(TD({1, 2, 2}))}, t{g.input(TD({1, 2, 3}))}, c{Var{}};
    EXPECT_THROW(loss_d<double>(g, p, t, c, false), ShapeError);
    std::vector<Var> t2{g.input(TD({1, 2, 2}))}, c2{g.input(TD({1, 3, 3}, 1.0))};
    EXPECT_THROW(loss_d<double>(g, p, t2, c2, false), ShapeError);
}

TEST(LossC, Examples) {
    G g;
    std::vector<Var> ones{g.input(TD({1, 4, 4}, 1.0)), g.input(TD({1, 2, 2}, 1.0)), Var{}};
    EXPECT_EQ(scalar(g, loss_c<double>(g, ones)), 0.0);
    const double inv_e = std::exp(-1.0);
    std::vector<Var> cms{g.input(TD({1, 1, 1}, inv_e)), g.input(TD({1, 1, 1}, inv_e)), g.input(TD({1, 1, 1}, inv_e)),
                         Var{}};
    EXPECT_NEAR(scalar(g, loss_c<double>(g, cms)), -3.0, 1e-15);
    std::vector<Var> bad{g.input(TD({1, 1, 1}))};
    EXPECT_THROW(loss_c<double>(g, bad), DomainError);
}

TEST(LossC, MatchesOracleAndIsNonPositive) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto in = random_instance(seed);
        G g;
        const auto v = load(g, in);
        const double got = scalar(g, loss_c<double>(g, v.cm));
        EXPECT_LE(got, 0.0);
        EXPECT_LT(relative_error_oracle(got, flat_loss_c(in)), 1e-6);
    }
}

TEST(LossC, StrictlyMonotoneInEachValue) {
    auto in = random_instance(4);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto level = static_cast<std::size_t>(rng.integer(0, 2));
        const auto k = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(in.cm[level].size()) - 1));
        G g1;
        const double before = scalar(g1, loss_c<double>(g1, load(g1, in).cm));
        auto bumped = in;
        bumped.cm[level][k] = std::min(1.0, bumped.cm[level][k] + 0.01);
        G g2;
        EXPECT_GT(scalar(g2, loss_c<double>(g2, load(g2, bumped).cm)), before);
    }
}

TEST(LossF, Compositions) {
    G g;
    std::vector<Var> p{g.input(TD({1, 1, 1}))}, t{g.input(TD({1, 1, 1}, 2.0))}, c{g.input(TD({1, 1, 1}, 0.5))};
    const Var ld = loss_d<double>(g, p, t, c, false);
    const double inv_e = std::exp(-1.0);
    std::vector<Var> cms{g.input(TD({1, 1, 1}, inv_e)), g.input(TD({1, 1, 1}, inv_e)), g.input(TD({1, 1, 1}, inv_e)),
                         Var{}};
    const Var lc = loss_c<double>(g, cms);
    EXPECT_NEAR(scalar(g, loss_f<double>(g, ld, lc, 1.0)), 4.0, 1e-15);
    EXPECT_EQ(scalar(g, loss_f<double>(g, ld, lc, 0.0)), scalar(g, ld));

    auto in = random_instance(6);
    in.pred = in.target;
    for (std::size_t i = 0; i < 3; ++i) in.cm[i] = TD(in.cm[i].shape(), 1.0);
    G g2;
    const auto v = load(g2, in);
    const Var lf = loss_f<double>(g2, loss_d<double>(g2, v.pred, v.target, v.cm, false), loss_c<double>(g2, v.cm), 1.0);
    EXPECT_EQ(scalar(g2, lf), 0.0);
}

TEST(LossF, GradientsMatchFiniteDifferences) {
    for (bool squared : {false, true}) {
        const auto in = random_instance(7);
        auto value = [&](const Instance& x) {
            G g;
            const auto v = load(g, x);
            return scalar(g, loss_f<double>(g, loss_d<double>(g, v.pred, v.target, v.cm, squared),
                                            loss_c<double>(g, v.cm), 1.0));
        };
        G g;
        const auto v = load(g, in, true);
        g.backward(loss_f<double>(g, loss_d<double>(g, v.pred, v.target, v.cm, squared), loss_c<double>(g, v.cm), 1.0));
        const double h = 1e-4;
        double worst = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t k = 0; k < in.pred[i].size(); ++k) {
                auto plus = in, minus = in;
                plus.pred[i][k] += h;
                minus.pred[i][k] -= h;
                worst = std::max(worst, relative_error(g.grad(v.pred[i])[k], (value(plus) - value(minus)) / (2 * h)));
            }
            if (i == 3) continue;
            for (std::size_t k = 0; k < in.cm[i].size(); ++k) {
                auto plus = in, minus = in;
                plus.cm[i][k] += h;
                minus.cm[i][k] -= h;
                worst = std::max(worst, relative_error(g.grad(v.cm[i])[k], (value(plus) - value(minus)) / (2 * h)));
            }
        }
        EXPECT_LT(worst, 1e-5);
    }
}

TEST(ModelLoss, LevelsAndBaseMode) {
    auto cfg = ModelConfig::tiny();
    cfg.stage_channels = {2, 2, 2, 2, 2};
    cfg.stage_convs = {1, 1, 1, 1, 1};
    const auto m = init_model<double>(cfg, 1);
    DensityMap target(64, 64);
    target.at(10, 20) = 1.0;
    const auto pyr = target_pyramid(target);
    Tensor<double> img({3, 64, 64}, 0.5);

    G g;
    const auto out = forward(g, m, g.input(img));
    const auto terms = model_loss(g, out, pyr, LossConfig{});
    // independent recomputation of the four-scale sum with CM_6 = 1
    double expect_d = 0, expect_c = 0;
    for (int level : {3, 4, 5, 6}) {
        const auto& y = g.value(out.prediction(level));
        const auto& t = pyr.at_divisor(1u << (level - 1));
        double s = 0;
        for (std::size_t k = 0; k < y.size(); ++k) {
            const double c = level == 6 ? 1.0 : g.value(out.confidence[level_slot(level)])[k];
            s += std::pow(c * t.values[k] - c * y[k], 2);
            if (level != 6) expect_c += std::log(c);
        }
        expect_d += std::sqrt(s);
    }
    EXPECT_NEAR(scalar(g, terms.l_d), expect_d, 1e-12 * expect_d);
    EXPECT_NEAR(scalar(g, terms.l_c), expect_c, 1e-12 * std::abs(expect_c));

    auto base_cfg = cfg;
    base_cfg.enable_residual = base_cfg.enable_uceb = false;
    const auto base = init_model<double>(base_cfg, 1);
    G g2;
    const auto bout = forward(g2, base, g2.input(img));
    const auto bterms = model_loss(g2, bout, pyr, LossConfig{});
    const auto& y6 = g2.value(bout.y6);
    double s = 0;
    for (std::size_t k = 0; k < y6.size(); ++k) s += std::pow(pyr.at_divisor(32).values[k] - y6[k], 2);
    EXPECT_NEAR(scalar(g2, bterms.l_d), std::sqrt(s), 1e-12);
    EXPECT_EQ(scalar(g2, bterms.l_c), 0.0);
}

TEST(BatchWeight, MeanAndSum) {
    EXPECT_EQ(batch_weight(LossConfig{}, 4), 0.25);
    LossConfig sum;
    sum.batch_reduction = BatchReduction::Sum;
    EXPECT_EQ(batch_weight(sum, 4), 1.0);
}
