#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sotlab/sde.hpp"
#include "sotlab/stats.hpp"

using namespace sotlab;

namespace {

std::vector<double> coord(const std::vector<Point>& pts) {
    std::vector<double> out;
    for (const auto& p : pts) out.push_back(p[0]);
    return out;
}

}  // namespace

TEST(TimeGridTest, GeometricTailShape) {
    auto g = TimeGrid::geometric_tail(1.0);
    EXPECT_EQ(g.knots.front(), 0.0);
    EXPECT_EQ(g.knots.back(), 1.0);
    EXPECT_NEAR(g.dt(g.steps() - 1), 1e-6, 1e-15);
    for (std::size_t k = 128; k + 3 < g.steps(); ++k) EXPECT_NEAR(g.dt(k + 1) / g.dt(k), 0.5, 1e-6);
    EXPECT_NO_THROW(g.validate());
}

TEST(Uncontrolled, BrownianVariance) {
    auto e = sde::simulate_uncontrolled(1.0, Sampler(DiscreteMeasure::dirac({0.0, 0.0})), TimeGrid::uniform(1.0, 16), 100000, 5);
    auto v = stats::variance_about(coord(e.marginal(e.N())), 0.0);
    EXPECT_NEAR(v.mean, 1.0, 3.0 * v.se);
}

TEST(Uncontrolled, ZeroNoiseIsConstant) {
    auto e = sde::simulate_uncontrolled(0.0, Sampler(GaussianSpec::normal1d(0.0, 1.0)), TimeGrid::uniform(1.0, 8), 100, 5);
    for (std::size_t p = 0; p < e.n_paths; ++p)
        for (std::size_t k = 1; k <= e.N(); ++k) EXPECT_EQ(e.state(p, k)[0], e.state(p, 0)[0]);
}

TEST(Uncontrolled, DeterministicAcrossSeedsAndThreads) {
    auto k = TransitionKernel::ornstein_uhlenbeck(1, 1.0, 1.0);
    Sampler s(GaussianSpec::normal1d(0.0, 1.0));
    set_threads(1);
    auto a = sde::simulate_uncontrolled(k, s, TimeGrid::uniform(1.0, 10), 500, 9);
    set_threads(4);
    auto b = sde::simulate_uncontrolled(k, s, TimeGrid::uniform(1.0, 10), 500, 9);
    set_threads(0);
    EXPECT_EQ(a.states, b.states);
    auto c = sde::simulate_uncontrolled(k, s, TimeGrid::uniform(1.0, 10), 500, 10);
    EXPECT_NE(a.states, c.states);
}

TEST(Uncontrolled, OuStationaryVariance) {
    auto k = TransitionKernel::ornstein_uhlenbeck(1, 1.0, std::sqrt(2.0));
    auto e = sde::simulate_uncontrolled(k, Sampler(DiscreteMeasure::dirac({3.0, 0.0})), TimeGrid::uniform(10.0, 20), 50000, 2);
    auto v = stats::variance_about(coord(e.marginal(e.N())), 0.0);
    EXPECT_NEAR(v.mean, 1.0, 3.0 * v.se + 1e-8);
}

TEST(Bridge, PinnedAndGaussianAtMidpoint) {
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}), 1.0, TimeGrid::geometric_tail(1.0), 20000, 1);
    for (std::size_t p = 0; p < e.n_paths; ++p) ASSERT_EQ(e.state(p, e.N())[0], 0.0);
    std::size_t k = e.knot_index(0.5);
    ASSERT_EQ(e.grid.knots[k], 0.5);
    auto ks = stats::ks_test(coord(e.marginal(k)), [](double x) { return stats::normal_cdf(x / 0.5); });
    EXPECT_GE(ks.p_value, 0.01);
}

TEST(Bridge, MarginalLawForDeterministicEndpoints) {
    const double Y = 0.3, Z = -1.0, s = 0.8, T = 2.0;
    auto e = sde::simulate_bridge(PairSampler::fixed({Y, 0.0}, {Z, 0.0}), s, TimeGrid::geometric_tail(T), 40000, 4);
    for (double frac : {0.25, 0.5, 0.75}) {
        std::size_t k = e.knot_index(frac * T);
        double t = e.grid.knots[k];
        double mean = Y + (Z - Y) * t / T, var = s * s * t * (T - t) / T;
        auto xs = coord(e.marginal(k));
        auto ks = stats::ks_test(xs, [&](double x) { return stats::normal_cdf((x - mean) / std::sqrt(var)); });
        EXPECT_GE(ks.p_value, 0.01) << t;
        auto v = stats::variance_about(xs, mean);
        EXPECT_NEAR(v.mean, var, 3.0 * v.se) << t;
    }
    for (std::size_t p = 0; p < e.n_paths; ++p) ASSERT_EQ(e.state(p, e.N())[0], Z);
}

TEST(Bridge, ZeroNoiseIsStraightLine) {
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {1.0, 0.0}), 0.0, TimeGrid::geometric_tail(1.0), 3, 1);
    for (std::size_t k = 0; k <= e.N(); ++k) EXPECT_NEAR(e.state(0, k)[0], e.grid.knots[k], 1e-14);
}

TEST(Bridge, NeedsRefinedGrid) {
    auto yz = PairSampler::fixed({0.0, 0.0}, {0.0, 0.0});
    EXPECT_THROW(sde::simulate_bridge(yz, 1.0, TimeGrid::uniform(1.0, 100), 10, 1), GridNotRefined);
    EXPECT_THROW(sde::simulate_bridge(yz, 1.0, TimeGrid::geometric_tail(0.0, 1.0, 128, 0.5, 1e-4), 10, 1), GridNotRefined);
}

TEST(Bridge, CouplingFidelityChiSquare) {
    Coupling c(1, {{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}}, {{-1.0, 0.0}, {0.5, 0.0}, {3.0, 0.0}});
    const double m[9] = {0.2, 0.05, 0.05, 0.0, 0.3, 0.1, 0.1, 0.0, 0.2};
    for (int i = 0; i < 9; ++i) c.mass()[i] = m[i];
    const std::size_t n = 100000;
    auto e = sde::simulate_bridge(PairSampler::from_coupling(c), 1.0, TimeGrid::geometric_tail(1.0), n, 6);
    std::vector<double> counts(9, 0.0);
    auto index = [](const std::vector<Point>& sup, double x) {
        for (std::size_t i = 0; i < sup.size(); ++i)
            if (sup[i][0] == x) return i;
        return sup.size();
    };
    for (std::size_t p = 0; p < n; ++p) {
        std::size_t i = index(c.row_support(), e.state(p, 0)[0]);
        std::size_t j = index(c.col_support(), e.state(p, e.N())[0]);
        ASSERT_LT(i, 3u);
        ASSERT_LT(j, 3u);
        counts[i * 3 + j] += 1.0;
    }
    double chi2 = 0.0;
    int cells = 0;
    for (int k = 0; k < 9; ++k) {
        if (m[k] == 0.0) {
            EXPECT_EQ(counts[k], 0.0);
            continue;
        }
        double expect = m[k] * n;
        chi2 += (counts[k] - expect) * (counts[k] - expect) / expect;
        ++cells;
    }
    boost::math::chi_squared dist(cells - 1);
    EXPECT_GE(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01);
}

TEST(Cost, ZeroControlIsZero) {
    auto e = sde::simulate_uncontrolled(1.0, Sampler(DiscreteMeasure::dirac({0.0, 0.0})), TimeGrid::uniform(1.0, 8), 100, 1);
    auto c = sde::cost_r(e, 1.0);
    EXPECT_EQ(c.mean, 0.0);
    EXPECT_EQ(c.stderr_, 0.0);
}

TEST(Cost, BridgeClosedForm) {
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}), 1.0, TimeGrid::geometric_tail(1.0), 100000, 2024);
    auto c = sde::cost_r(e, 1.0);
    EXPECT_NEAR(c.mean + c.truncation_bias, std::sqrt(kPi / 2.0), 3.0 * c.stderr_);
    EXPECT_NEAR(c.truncation_bias, std::sqrt(2.0 / kPi) * 2.0 * std::sqrt(1e-6), 1e-12);
}

TEST(Cost, PlanarBridgeClosedForm) {
    // E|u(s)|^r = E|G_2|^r (s / (T - s))^{r/2} with T = 1, integrated to a beta function.
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}, 2), 1.0, TimeGrid::geometric_tail(1.0), 40000, 31);
    ASSERT_EQ(e.dim, 2);
    for (double r : {1.0, 1.5}) {
        auto c = sde::cost_r(e, r);
        double beta = std::tgamma(1.0 + 0.5 * r) * std::tgamma(1.0 - 0.5 * r) / std::tgamma(2.0);
        double exact = gaussian_norm_moment(r, 2) * beta;
        EXPECT_NEAR(c.mean + c.truncation_bias, exact, 3.0 * c.stderr_) << r;
    }
    EXPECT_NEAR(gaussian_norm_moment(1.0, 2), std::sqrt(kPi / 2.0), 1e-14);
    EXPECT_NEAR(gaussian_norm_moment(2.0, 2), 2.0, 1e-14);
    EXPECT_NEAR(gaussian_norm_moment(1.5, 1), gaussian_abs_moment(1.5), 1e-14);
}

TEST(Cost, SquareCostDivergesAsTruncationShrinks) {
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}), 1.0, TimeGrid::geometric_tail(1.0), 4000, 3);
    double prev = 0.0;
    for (double tau : {1e-2, 1e-3, 1e-4, 1e-5}) {
        auto c = sde::cost_r(e, 2.0, 1.0 - tau);
        EXPECT_GT(c.mean, prev + 1.0);
        prev = c.mean;
    }
}

TEST(Cost, TruncationStable) {
    auto yz = PairSampler::fixed({0.0, 0.0}, {0.5, 0.0});
    for (double r : {1.0, 1.25, 1.5}) {
        auto a = sde::cost_r(sde::simulate_bridge(yz, 1.0, TimeGrid::geometric_tail(0.0, 1.0, 128, 0.5, 1e-6), 20000, 8), r);
        auto b = sde::cost_r(sde::simulate_bridge(yz, 1.0, TimeGrid::geometric_tail(0.0, 1.0, 128, 0.5, 2.5e-7), 20000, 8), r);
        double se = std::hypot(a.stderr_, b.stderr_);
        EXPECT_NEAR(a.mean + a.truncation_bias, b.mean + b.truncation_bias, 3.0 * se) << r;
    }
}

TEST(Cost, JensenLowerMechanism) {
    const double T = 0.5;
    auto yz = PairSampler::comonotone(GaussianSpec::normal1d(0.0, 1.0), GaussianSpec::normal1d(1.0, 2.0));
    auto e = sde::simulate_bridge(yz, 1.0, TimeGrid::geometric_tail(T), 20000, 12);
    double mean_disp = 0.0;
    for (std::size_t p = 0; p < e.n_paths; ++p) mean_disp += e.state(p, e.N())[0] - e.state(p, 0)[0];
    mean_disp /= e.n_paths;
    for (double r : {1.0, 1.5}) {
        auto c = sde::cost_r(e, r);
        EXPECT_GE(std::pow(T, r - 1.0) * (c.mean + c.truncation_bias) + 3.0 * c.stderr_, pow_abs(mean_disp, r));
    }
}

TEST(UpperEstimate, DiagonalDiracs) {
    auto res = mk::solve_exact(DiscreteMeasure::dirac({0.0, 0.0}), DiscreteMeasure::dirac({0.0, 0.0}), 1.0);
    auto c = sde::value_upper_estimate(res, 1.0, 1.0, 1.0, 20000, 4);
    EXPECT_NEAR(c.mean + c.truncation_bias, 1.2533, 3.0 * c.stderr_ + 1e-4);
    EXPECT_LE(c.mean + c.truncation_bias, 2.0);
    EXPECT_THROW(sde::value_upper_estimate(res, 1.0, 1.0, 2.0, 10, 4), InvalidArgument);
}

TEST(UpperEstimate, VanishingNoiseGivesTransportCost) {
    auto res = mk::solve_exact(DiscreteMeasure::dirac({0.0, 0.0}), DiscreteMeasure::dirac({1.0, 0.0}), 1.0);
    auto c = sde::value_upper_estimate(res, 1e-4, 1.0, 1.0, 2000, 4);
    EXPECT_NEAR(c.mean + c.truncation_bias, 1.0, 1e-3);
}

TEST(UpperEstimate, GaussianPairBelowUpperBound) {
    auto P = GaussianSpec::normal1d(0.0, 1.0), Q = GaussianSpec::normal1d(1.0, 1.0);
    for (double r : {1.0, 1.5}) {
        for (double T : {0.2, 1.0}) {
            auto c = sde::value_upper_estimate(PairSampler::comonotone(P, Q), 1.0, T, r, 20000, 7);
            double Tr = 1.0;
            EXPECT_LE(std::pow(T, r - 1.0) * (c.mean + c.truncation_bias),
                      Tr + 2.0 * std::pow(T, 0.5 * r) / (2.0 - r) + 3.0 * c.stderr_ * std::pow(T, r - 1.0));
        }
    }
}

TEST(Delayed, NoNoiseNoDisplacementCostsNothing) {
    auto c = sde::delayed_bridge_cost(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}), 0.0, 1.0, 0.1, 0.5, 100, 1);
    EXPECT_EQ(c.mean, 0.0);
}

TEST(Delayed, CostFallsWithDelay) {
    auto yz = PairSampler::fixed({0.0, 0.0}, {1.0, 0.0});
    std::vector<double> ds{0.4, 0.2, 0.1, 0.05, 0.025}, cs;
    for (double d : ds) cs.push_back(sde::delayed_bridge_cost(yz, 1.0, 1.0, d, 0.5, 20000, 9).mean);
    for (std::size_t i = 1; i < cs.size(); ++i) EXPECT_LT(cs[i], cs[i - 1]);
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        lx.push_back(std::log(ds[i]));
        ly.push_back(std::log(cs[i]));
    }
    EXPECT_GT(stats::linear_fit(lx, ly).slope, 0.0);
    EXPECT_THROW(sde::delayed_bridge_cost(yz, 1.0, 1.0, 0.1, 1.0, 10, 1), InvalidArgument);
}

TEST(Compressed, EnvelopeScalingAndDominance) {
    auto base = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}), 1.0, TimeGrid::geometric_tail(1.0), 20000, 10);
    const double r = 0.5;
    double prev = 0.0;
    for (double n : {2.0, 4.0, 8.0, 16.0}) {
        auto cc = sde::compressed_control_cost(base, n, r, 1.0, 0.0);
        if (prev > 0.0) {
            EXPECT_NEAR(cc.envelope / prev, std::pow(2.0, r - 1.0), 1e-12);
        }
        prev = cc.envelope;
        EXPECT_LE(cc.simulated.mean, cc.envelope + 3.0 * cc.simulated.stderr_);
    }
    EXPECT_LT(sde::compressed_control_cost(base, 1e6, r, 1.0, 0.0).envelope, 1e-2);
    auto with_offset = sde::compressed_control_cost(base, 4.0, r, 1.0, 0.3);
    EXPECT_NEAR(with_offset.envelope - sde::compressed_control_cost(base, 4.0, r, 1.0, 0.0).envelope, 0.3 / 4.0, 1e-14);
}

TEST(Dump, FlatBinaryLayout) {
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {1.0, 0.0}), 1.0, TimeGrid::geometric_tail(1.0), 7, 99);
    const std::string path = ::testing::TempDir() + "paths.bin";
    sde::dump_paths(e, path);
    std::ifstream in(path, std::ios::binary);
    std::uint64_t header[4];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    EXPECT_EQ(header[0], 7u);
    EXPECT_EQ(header[1], e.N());
    EXPECT_EQ(header[2], 1u);
    EXPECT_EQ(header[3], 99u);
    std::vector<double> knots(e.N() + 1), states(e.states.size());
    in.read(reinterpret_cast<char*>(knots.data()), static_cast<std::streamsize>(knots.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(states.data()), static_cast<std::streamsize>(states.size() * sizeof(double)));
    EXPECT_EQ(knots, e.grid.knots);
    EXPECT_EQ(states, e.states);
    std::remove(path.c_str());
}
