#include <gtest/gtest.h>

#include <cmath>

#include "sotlab/bounds.hpp"

using namespace sotlab;

namespace {

AnyMeasure normal(double m, double s) { return GaussianSpec::normal1d(m, s); }

AnyMeasure atoms(std::vector<double> xs, std::vector<double> w) {
    std::vector<Point> pts;
    for (double x : xs) pts.push_back({x, 0.0});
    return DiscreteMeasure(1, pts, w);
}

}  // namespace

TEST(Formulas, UpperRhs) {
    EXPECT_NEAR(bounds::upper_rhs(0.25, 1.0, 1.0, 1.0), 2.0, 1e-14);
    EXPECT_NEAR(bounds::upper_rhs(1.0, 1.5, 1.0, 0.0), 4.0, 1e-14);
    EXPECT_THROW(bounds::upper_rhs(1.0, 2.0, 1.0, 1.0), InvalidArgument);
    EXPECT_THROW(bounds::upper_rhs(0.0, 1.0, 1.0, 1.0), InvalidArgument);
}

TEST(Formulas, LowerEps) {
    EXPECT_NEAR(bounds::lower_rhs_eps(0.25, 1.0, 1.0, 1.0, 0.3), 0.5, 1e-14);
    EXPECT_NEAR(bounds::lower_rhs_eps(1.0, 2.0, 1.0, 1.0, 0.5), 0.5 * 1.0 - 2.0 * 0.5 * 1.0, 1e-14);
    EXPECT_NEAR(bounds::lower_rhs_eps(1.0, 1.5, 1.0, 1.0, 1.0 - 1e-12), 0.0, 1e-5);
    EXPECT_THROW(bounds::lower_rhs_eps(1.0, 1.0, 1.0, 1.0, 1.0), InvalidArgument);
    auto [best, arg] = bounds::best_lower_rhs_eps(0.01, 2.0, 1.0, 1.0);
    // r = 2: (1-e) - (1-e) t / e maximized at e = sqrt t.
    EXPECT_NEAR(arg, 0.1, 1e-3);
    EXPECT_NEAR(best, 100.0 * 0.9 * 0.9, 1e-6);
}

TEST(Formulas, LowerRoot) {
    EXPECT_NEAR(bounds::lower_rhs_root(1.0, 2.0, 0.2, 1.0), 0.64, 1e-14);
    EXPECT_EQ(bounds::lower_rhs_root(4.0, 1.0, 1.0, 1.0), 0.0);
    for (double t : {0.01, 0.1, 0.5})
        for (double r : {1.0, 1.5, 2.0})
            EXPECT_GE(bounds::lower_rhs_root(t, r, 1.0, 1.0) + 1e-12, bounds::best_lower_rhs_eps(t, r, 1.0, 1.0).first - 1e-3)
                << t << " " << r;
}

TEST(Formulas, GaussianShiftMoment) {
    EXPECT_NEAR(bounds::gaussian_shift_moment(0.0, 1.0, 1.0), std::sqrt(2.0 / kPi), 1e-7);
    EXPECT_NEAR(bounds::gaussian_shift_moment(1.0, 2.0, 2.0), 5.0, 1e-9);
    EXPECT_DOUBLE_EQ(bounds::gaussian_shift_moment(-2.0, 0.0, 1.5), std::pow(2.0, 1.5));
}

TEST(Formulas, LowerZeroControl) {
    auto heat = TransitionKernel::heat(1, 1.0);
    double v = bounds::lower_zero_control(0.01, 1.0, atoms({0.0}, {1.0}), atoms({1.0}, {1.0}), heat);
    EXPECT_NEAR(v, 1.0, 1e-3);
    double g = bounds::lower_zero_control(0.5, 2.0, normal(0.0, 1.0), normal(0.0, 1.0), heat);
    double s = std::sqrt(1.5);
    EXPECT_NEAR(g, std::pow(0.5, -1.0) * (s - 1.0) * (s - 1.0), 1e-6);
    EXPECT_THROW(bounds::lower_zero_control(0.5, 1.0, normal(0.0, 1.0), normal(0.0, 1.0), TransitionKernel::ornstein_uhlenbeck(1, 1.0, 1.0)),
                 InvalidArgument);
}

TEST(FitPower, RecoversExponentAndGuards) {
    std::vector<double> x{1, 2, 4, 8, 16}, y;
    for (double v : x) y.push_back(3.0 * std::pow(v, 0.75));
    auto f = bounds::fit_power(x, y);
    EXPECT_NEAR(f.exponent, 0.75, 1e-12);
    EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-12);
    EXPECT_EQ(f.points, 5u);
    EXPECT_THROW(bounds::fit_power(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 4}), FitUnstable);
    EXPECT_THROW(bounds::fit_power(x, std::vector<double>{1, 2, 3, 4}), ShapeMismatch);
    EXPECT_THROW(bounds::fit_power(x, std::vector<double>{1, 2, 0, 4, 5}), FitUnstable);
    EXPECT_THROW(bounds::fit_power(x, std::vector<double>{1, 9, 1, 9, 1}), FitUnstable);
}

TEST(Transport, CostsAndSamplers) {
    EXPECT_NEAR(bounds::transport_cost(normal(0.0, 1.0), normal(1.0, 1.0), 1.5), 1.0, 1e-10);
    EXPECT_NEAR(bounds::transport_cost(atoms({0.0, 1.0}, {0.5, 0.5}), atoms({0.0, 2.0}, {0.5, 0.5}), 1.0), 0.5, 1e-12);
    EXPECT_THROW(bounds::transport_cost(normal(0.0, 1.0), normal(0.0, 1.0), 0.5), InvalidArgument);
}

TEST(Envelope, IdentityScalingOrdering) {
    bounds::SandwichSpec s{normal(0.0, 1.0), normal(1.0, 1.0), 1.0, {1.0, 1.5}, {0.1, 1.0}, 2000, 3, true};
    auto cells = bounds::sandwich(s);
    auto same = bounds::general_cost_envelope(cells, 1.0, 1.0, 0.0, 0.0);
    auto doubled = bounds::general_cost_envelope(cells, 2.0, 0.5, 0.1, 0.1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        EXPECT_EQ(same[i].upper, cells[i].upper);
        EXPECT_EQ(same[i].lower_eps, cells[i].lower_eps);
        EXPECT_NEAR(doubled[i].upper, 2.0 * cells[i].upper + 0.1 * cells[i].t, 1e-12);
        EXPECT_NEAR(doubled[i].lower_root, 0.5 * cells[i].lower_root - 0.1 * cells[i].t, 1e-12);
        EXPECT_LE(doubled[i].lower_root, doubled[i].upper);
        EXPECT_LE(doubled[i].lower_eps, doubled[i].upper);
    }
    EXPECT_THROW(bounds::general_cost_envelope(cells, 0.0, 1.0, 0.0, 0.0), InvalidArgument);
}

TEST(Sandwich, HoldsOnSmallGrid) {
    for (const auto& [P, Q] : {std::pair{normal(0.0, 1.0), normal(1.0, 2.0)},
                               std::pair{atoms({0.0, 2.0}, {0.5, 0.5}), atoms({1.0, 3.0}, {0.5, 0.5})}}) {
        bounds::SandwichSpec s{P, Q, 1.0, {1.0, 1.5}, {0.1, 0.5, 1.0}, 5000, 21, true};
        for (const auto& c : bounds::sandwich(s)) {
            for (const auto& b : c.reports()) EXPECT_TRUE(b.satisfied) << b.name << " t=" << b.t << " r=" << b.r;
            EXPECT_GE(c.upper, c.lower_root);
        }
    }
}

TEST(Sandwich, TwoDimensionalAtoms) {
    DiscreteMeasure P(2, {{0.0, 0.0}, {1.0, 1.0}}, {0.5, 0.5});
    DiscreteMeasure Q(2, {{1.0, 0.0}, {0.0, 1.0}}, {0.5, 0.5});
    for (double sigma : {0.5, 1.0}) {
        bounds::SandwichSpec s{P, Q, sigma, {1.0, 1.5}, {0.2, 1.0}, 4000, 5, true};
        for (const auto& c : bounds::sandwich(s)) {
            EXPECT_TRUE(c.holds()) << sigma << " " << c.t << " " << c.r;
            EXPECT_NEAR(c.upper, bounds::upper_rhs(c.t, c.r, sigma * std::sqrt(2.0), c.Tr), 1e-12);
        }
    }
}

TEST(ShortTime, CoefficientsBelowBounds) {
    std::vector<double> ts{0.01, 0.02, 0.05, 0.1, 0.2};
    auto rep = bounds::shorttime_report(normal(0.0, 1.0), normal(1.0, 1.0), 1.0, 1.0, ts, 10000, 8);
    EXPECT_LE(rep.coefficient, 1.1 * rep.coefficient_bound);
    EXPECT_LE(rep.root_coefficient, 1.1 * rep.root_bound);
    auto diag = bounds::shorttime_report(normal(0.0, 1.0), normal(0.0, 1.0), 1.5, 1.0, ts, 10000, 8);
    EXPECT_LE(diag.diagonal, 1.1 * diag.diagonal_bound);
    EXPECT_THROW(bounds::shorttime_report(normal(0.0, 1.0), normal(0.0, 1.0), 1.0, 1.0, {0.6}, 10, 1), InvalidArgument);
}

TEST(ZeroNoise, UnitEpsMatchesSandwichAtHorizon) {
    auto P = normal(0.0, 1.0), Q = normal(1.0, 1.0);
    auto rep = bounds::zero_noise_report(P, Q, 1.5, 1.0, 1.0, {1.0, 0.5, 0.25, 0.1, 0.05}, 4000, 17, false);
    bounds::SandwichSpec s{P, Q, 1.0, {1.5}, {1.0}, 4000, 17, false};
    EXPECT_DOUBLE_EQ(rep.points.front().estimate, bounds::sandwich(s).front().estimate);
    for (std::size_t i = 1; i < rep.points.size(); ++i) EXPECT_LT(std::fabs(rep.points[i].gap), std::fabs(rep.points[i - 1].gap));
    EXPECT_THROW(bounds::zero_noise_report(P, Q, 1.0, 1.0, 1.0, {0.5, 1.0}, 10, 1, false), InvalidArgument);
}

TEST(ZeroNoise, DiagonalExponent) {
    auto P = normal(0.0, 1.0);
    auto rep = bounds::zero_noise_report(P, P, 1.0, 1.0, 1.0, {1.0, 0.5, 0.2, 0.1, 0.05, 0.02}, 4000, 2, true);
    ASSERT_TRUE(rep.fit) << rep.fit_error;
    EXPECT_NEAR(rep.fit->exponent, 0.5, 0.1);
    EXPECT_LE(rep.coefficient, 1.1 * rep.coefficient_bound);
}

TEST(ZeroNoise, ExtrapolationRecoversInterceptExactly) {
    std::vector<bounds::ZeroNoisePoint> pts;
    for (double e : {1.0, 0.5, 0.2, 0.1, 0.05}) pts.push_back({e, 2.0 + 0.7 * e - 0.3 * e * std::log(e), 0.01, 0.0});
    auto ex = bounds::extrapolate_to_zero_noise(pts);
    EXPECT_NEAR(ex.intercept, 2.0, 1e-10);
    EXPECT_GT(ex.stderr_bound, 0.01);
    pts.resize(3);
    EXPECT_THROW(bounds::extrapolate_to_zero_noise(pts), FitUnstable);
}

TEST(Explosion, SlopesNearOneMinusHalfR) {
    std::vector<double> ts;
    for (int i = 0; i <= 5; ++i) ts.push_back(10.0 * std::pow(10.0, i / 5.0));
    auto rep = bounds::explosion_report(atoms({0.0}, {1.0}), atoms({1.0}, {1.0}), 1.0, 1.0, ts, 5000, 3);
    ASSERT_TRUE(rep.upper_fit && rep.lower_fit) << rep.fit_error;
    EXPECT_TRUE(rep.increasing);
    EXPECT_NEAR(rep.upper_fit->exponent, 0.5, 0.1);
    EXPECT_NEAR(rep.lower_fit->exponent, 0.5, 0.1);
    for (const auto& p : rep.points) EXPECT_GE(p.upper + 3.0 * p.stderr_, p.lower);
}

TEST(HeavyTail, UpperEstimateStaysBoundedAsCutoffGrows) {
    // Discrete Pareto tail k^{-3.5}, shifted by one: T_r <= 1 for every cutoff.
    double worst = 0.0;
    for (int K : {10, 100, 1000}) {
        std::vector<double> xs, ys, w;
        for (int k = 1; k <= K; ++k) {
            xs.push_back(k);
            ys.push_back(k + 1.0);
            w.push_back(std::pow(k, -3.5));
        }
        bounds::SandwichSpec s{atoms(xs, w), atoms(ys, w), 1.0, {1.5}, {1.0}, 4000, 6, false};
        auto c = bounds::sandwich(s).front();
        EXPECT_NEAR(c.Tr, 1.0, 1e-9);
        EXPECT_LE(c.estimate, c.upper + 3.0 * c.stderr_);
        worst = std::max(worst, c.estimate);
    }
    EXPECT_LE(worst, bounds::upper_rhs(1.0, 1.5, 1.0, 1.0));
}
