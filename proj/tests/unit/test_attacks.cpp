#include <gtest/gtest.h>

#include <sstream>

#include "canadv/attacks.hpp"
#include "canadv/error.hpp"
#include "test_support.hpp"

using namespace canadv;

namespace {

DetectorModel toy_model(std::uint64_t seed, int d = 3, int h = 6) {
    ModelConfig cfg;
    cfg.input_dim = d;
    cfg.hidden_dim = h;
    cfg.seq_len = 10;
    cfg.init_seed = seed;
    auto m = init_model(cfg);
    m.params.flat() *= 3.0;  // sharper decision surface than the default init
    return m;
}

AttackConfig bim_config(double eps, double alpha, int iterations) {
    AttackConfig c;
    c.kind = AttackKind::bim;
    c.epsilon = eps;
    c.alpha = alpha;
    c.iterations = iterations;
    return c;
}

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

TEST(Fgsm, FollowsTheSignOfTheInputGradient) {
    const auto model = toy_model(1);
    Rng rng(1);
    AttackConfig cfg;
    cfg.epsilon = 0.07;
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = test::random_matrix(rng, 10, 3);
        const Label y = trial % 2 ? Label::Attack : Label::Normal;
        const auto grad = backward(model, forward(model, x).cache, x, y).input_grad;
        Eigen::MatrixXd expected = x + cfg.epsilon * grad.unaryExpr(&sign);
        expected = expected.cwiseMax(0.0).cwiseMin(1.0);
        const auto out = fgsm(model, x, y, cfg);
        EXPECT_TRUE(out.adversarial.isApprox(expected, 1e-15));
        EXPECT_LE(out.l_inf_distance, cfg.epsilon + 1e-12);
    }
}

TEST(Fgsm, ZeroGradientIsAFixedPoint) {
    auto model = toy_model(2);
    model.params.w_out().setZero();  // output ignores the input entirely
    Rng rng(2);
    const auto x = test::random_matrix(rng, 10, 3);
    AttackConfig f;
    f.epsilon = 0.2;
    EXPECT_EQ(fgsm(model, x, Label::Attack, f).adversarial, x);
    EXPECT_EQ(bim(model, x, Label::Attack, bim_config(0.2, 0.05, 4)).adversarial, x);
}

TEST(Bim, OneFullStepIsBitIdenticalToFgsm) {
    const auto model = toy_model(3);
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const double eps = rng.uniform(0.001, 0.3);
        const auto x = test::random_matrix(rng, 10, 3);
        AttackConfig f;
        f.epsilon = eps;
        const auto a = fgsm(model, x, Label::Normal, f).adversarial;
        const auto b = bim(model, x, Label::Normal, bim_config(eps, eps, 1)).adversarial;
        ASSERT_TRUE((a.array() == b.array()).all()) << trial;
    }
}

TEST(Bim, EveryPrefixStaysInTheBall) {
    const auto model = toy_model(4);
    Rng rng(4);
    const auto x = test::random_matrix(rng, 10, 3);
    const double eps = 0.05;
    for (int k = 1; k <= 12; ++k) {
        auto cfg = bim_config(eps, 0.02, k);
        cfg.clamp_to_domain = false;
        const auto out = bim(model, x, Label::Attack, cfg);
        EXPECT_LE((out.adversarial - x).cwiseAbs().maxCoeff(), eps + 1e-12) << k;
    }
}

TEST(Bim, FrozenGradientWalksStraight) {
    const auto model = toy_model(5);
    Rng rng(5);
    const auto x = test::random_matrix(rng, 10, 3, 0.3, 0.7);
    auto cfg = bim_config(0.1, 0.03, 5);
    cfg.frozen_gradient = true;
    const auto grad = backward(model, forward(model, x).cache, x, Label::Normal).input_grad;
    const Eigen::MatrixXd expected = x + 0.1 * grad.unaryExpr(&sign);
    EXPECT_TRUE(bim(model, x, Label::Normal, cfg).adversarial.isApprox(expected, 1e-14));
}

TEST(Attack, DomainClampHolds) {
    const auto model = toy_model(6);
    Rng rng(6);
    for (auto kind : {AttackKind::fgsm, AttackKind::bim}) {
        auto cfg = bim_config(0.3, 0.1, 3);
        cfg.kind = kind;
        const auto x = test::random_matrix(rng, 10, 3);
        const auto out = run_attack(model, x, Label::Attack, cfg).adversarial;
        EXPECT_GE(out.minCoeff(), 0.0);
        EXPECT_LE(out.maxCoeff(), 1.0);
        EXPECT_LE((out - x).cwiseAbs().maxCoeff(), 0.3 + 1e-12);
    }
}

TEST(Attack, SpanMaskLeavesTheRestAlone) {
    const auto model = toy_model(7);
    Rng rng(7);
    auto windows = test::random_windows(rng, 8, 10, 3);
    auto cfg = bim_config(0.1, 0.05, 3);
    cfg.span_mask = true;
    const auto adv = perturb_windows(model, windows, cfg);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& w = windows[i];
        for (Eigen::Index t = 0; t < 10; ++t) {
            const bool inside = t >= w.attack_begin && t < w.attack_begin + w.attack_length;
            if (!inside) ASSERT_EQ(adv[i].x.row(t), w.x.row(t)) << i << ' ' << t;
        }
        EXPECT_EQ(adv[i].label, w.label);
    }
}

TEST(Attack, BatchedPathMatchesSingleWindowPath) {
    const auto model = toy_model(8);
    Rng rng(8);
    const auto windows = test::random_windows(rng, 70, 10, 3);  // crosses the internal batch size
    const auto cfg = bim_config(0.08, 0.02, 4);
    const auto adv = perturb_windows(model, windows, cfg);
    for (std::size_t i : {std::size_t{0}, std::size_t{63}, std::size_t{64}, std::size_t{69}}) {
        EXPECT_TRUE(adv[i].x.isApprox(bim(model, windows[i].x, windows[i].label, cfg).adversarial, 1e-14)) << i;
    }
}

TEST(SuccessRate, IsTheExactComplementOfAccuracy) {
    const auto model = toy_model(9);
    Rng rng(9);
    const auto windows = test::random_windows(rng, 37, 10, 3);
    AttackConfig cfg;
    cfg.epsilon = 0.05;
    const auto ev = attack_success_rate(model, windows, cfg);
    EXPECT_EQ(ev.success_rate + ev.post_attack_accuracy, 1.0);
    EXPECT_EQ(ev.samples, 37u);
    EXPECT_LE(ev.max_l_inf, 0.05 + 1e-12);

    // The identity holds for every count ratio the evaluation can produce.
    for (std::size_t n = 1; n <= 400; ++n) {
        for (std::size_t c = 0; c <= n; ++c) {
            const double acc = static_cast<double>(c) / static_cast<double>(n);
            ASSERT_EQ((1.0 - acc) + acc, 1.0) << c << '/' << n;
        }
    }
}

TEST(SuccessRate, ZeroBudgetChangesNothing) {
    const auto model = toy_model(10);
    Rng rng(10);
    const auto windows = test::random_windows(rng, 20, 10, 3);
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    const auto ev = attack_success_rate(model, windows, cfg);
    EXPECT_EQ(ev.post_attack_accuracy, ev.clean_accuracy);
    EXPECT_EQ(ev.max_l_inf, 0.0);
}

TEST(Sweep, OperatingPointIsTheSmallestEpsilonReachingTheTarget) {
    std::vector<SweepRow> rows{{AttackKind::fgsm, 0.01, 0, 1, 0.4, 0.6},
                               {AttackKind::fgsm, 0.02, 0, 1, 0.93, 0.07},
                               {AttackKind::fgsm, 0.05, 0, 1, 0.99, 0.01}};
    EXPECT_EQ(operating_point(rows, 0.9).epsilon, 0.02);
    EXPECT_EQ(operating_point(rows, 0.995).epsilon, 0.05);
    EXPECT_THROW(operating_point({}, 0.9), ContractError);
}

TEST(Sweep, RowsFollowTheGridAndAlphaFraction) {
    const auto model = toy_model(11);
    Rng rng(11);
    const auto windows = test::random_windows(rng, 10, 10, 3);
    const auto rows = epsilon_sweep(model, windows, bim_config(0.1, 0.02, 3), {0.01, 0.05}, 0.25);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_DOUBLE_EQ(rows[1].alpha, 0.0125);
    EXPECT_EQ(rows[1].iterations, 3);
    EXPECT_THROW(epsilon_sweep(model, windows, AttackConfig{}, {0.05, 0.01}), ConfigError);
    std::stringstream csv;
    write_sweep_csv(csv, rows);
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "kind,epsilon,alpha,iterations,success_rate,post_attack_accuracy");
}

TEST(Config, ValidationCollectsProblems) {
    auto cfg = bim_config(-1.0, 0.5, 0);
    try {
        cfg.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_GE(e.problems().size(), 2u);
    }
    EXPECT_THROW(bim_config(0.1, 0.2, 3).validate(), ConfigError);
    EXPECT_NO_THROW(bim_config(0.0, 0.0, 3).validate());
    EXPECT_EQ(attack_from_string("BIM"), AttackKind::bim);
    EXPECT_THROW(attack_from_string("pgd"), ConfigError);
    AttackConfig f;
    EXPECT_THROW(bim(toy_model(1), Eigen::MatrixXd::Zero(10, 3), Label::Normal, f), ContractError);
}
