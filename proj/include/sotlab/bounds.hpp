#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sotlab/core.hpp"
#include "sotlab/kernels.hpp"
#include "sotlab/measures.hpp"
#include "sotlab/sde.hpp"
#include "sotlab/stats.hpp"
#include "sotlab/transport.hpp"

namespace sotlab {

struct BoundReport {
    enum class Side { Upper, Lower };

    std::string name;
    Side side = Side::Upper;
    double t = 0.0;
    double r = 1.0;
    double lhs = 0.0;
    double stderr_ = 0.0;
    double rhs = 0.0;
    bool satisfied = false;
    std::map<std::string, double> params;

    static BoundReport make(std::string name, Side side, double t, double r, double lhs, double se, double rhs) {
        BoundReport b;
        b.name = std::move(name);
        b.side = side;
        b.t = t;
        b.r = r;
        b.lhs = lhs;
        b.stderr_ = se;
        b.rhs = rhs;
        b.satisfied = side == Side::Upper ? lhs <= rhs + 3.0 * se : lhs >= rhs - 3.0 * se;
        return b;
    }
};

struct SlopeFit {
    double exponent = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double window_lo = 0.0;
    double window_hi = 0.0;
    std::size_t points = 0;
};

namespace bounds {

/// Power-law fit y = e^intercept x^exponent in log-log coordinates. Needs at
/// least five positive points and r2 >= 0.95.
inline SlopeFit fit_power(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeMismatch("fit abscissae and ordinates differ in length");
    if (x.size() < 5) throw FitUnstable("a slope fit needs at least five points");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw FitUnstable("log-log fit needs positive values");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    auto f = stats::linear_fit(lx, ly);
    SlopeFit s{f.slope, f.intercept, f.r2, *std::min_element(x.begin(), x.end()), *std::max_element(x.begin(), x.end()),
               x.size()};
    if (f.r2 < 0.95) throw FitUnstable("slope fit r2 " + std::to_string(f.r2) + " < 0.95");
    return s;
}

/// Frobenius norm of sigma I_d.
inline double frobenius_sigma(double sigma, int d) { return std::fabs(sigma) * std::sqrt(static_cast<double>(d)); }

/// t^{1-r} {T_r + 2 sigma^r t^{r/2} / (2 - r)}
inline double upper_rhs(double t, double r, double sigma_sup, double Tr) {
    require(r > 0.0 && r < 2.0, "upper_rhs needs r in (0, 2)");
    require(t > 0.0, "upper_rhs needs t > 0");
    return std::pow(t, 1.0 - r) * (Tr + 2.0 * pow_abs(sigma_sup, r) * std::pow(t, 0.5 * r) / (2.0 - r));
}

/// t^{1-r} {(1-e)^{r-1} T_r - e^{1-r} (1-e)^{r-1} sigma^r t^{r/2}}, with C_r = 1.
inline double lower_rhs_eps(double t, double r, double sigma_sup, double Tr, double eps) {
    require(r >= 1.0 && r <= 2.0, "lower_rhs_eps needs r in [1, 2]");
    require(eps > 0.0 && eps < 1.0, "lower_rhs_eps needs eps in (0, 1)");
    require(t > 0.0, "lower_rhs_eps needs t > 0");
    double a = std::pow(1.0 - eps, r - 1.0);
    return std::pow(t, 1.0 - r) * (a * Tr - std::pow(eps, 1.0 - r) * a * pow_abs(sigma_sup, r) * std::pow(t, 0.5 * r));
}

/// lower_rhs_eps maximized over eps on a grid of 999 interior points.
inline std::pair<double, double> best_lower_rhs_eps(double t, double r, double sigma_sup, double Tr) {
    double best = -kInf, arg = 0.5;
    for (int i = 1; i < 1000; ++i) {
        double e = i / 1000.0;
        double v = lower_rhs_eps(t, r, sigma_sup, Tr, e);
        if (v > best) {
            best = v;
            arg = e;
        }
    }
    return {best, arg};
}

/// max(0, T_r^{1/r} - sigma sqrt t)^r t^{1-r}
inline double lower_rhs_root(double t, double r, double sigma_sup, double Tr) {
    require(r >= 1.0 && r <= 2.0, "lower_rhs_root needs r in [1, 2]");
    require(t > 0.0, "lower_rhs_root needs t > 0");
    double root = std::max(0.0, std::pow(Tr, 1.0 / r) - sigma_sup * std::sqrt(t));
    return std::pow(root, r) * std::pow(t, 1.0 - r);
}

/// E|a + b G|^r for G ~ N(0,1), by the trapezoid rule on [-12, 12].
inline double gaussian_shift_moment(double a, double b, double r) {
    if (b == 0.0) return pow_abs(a, r);
    constexpr int n = 24000;
    const double h = 24.0 / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
        double g = -12.0 + i * h;
        double w = (i == 0 || i == n) ? 0.5 : 1.0;
        s += w * pow_abs(a + b * g, r) * std::exp(-0.5 * g * g);
    }
    return s * h / std::sqrt(2.0 * kPi);
}

/// Fine grid stand-in for a 1-D law in quantile computations.
inline mk::Measure1d as_measure1d(const AnyMeasure& m) {
    if (dim_of(m) != 1) throw DimensionError("expected a one-dimensional law");
    if (const auto* g = std::get_if<GaussianSpec>(&m))
        return measures::discretize_gaussian(*g, measures::default_grid(*g, 4001, 8.0));
    if (const auto* d = std::get_if<DiscreteMeasure>(&m)) return *d;
    return std::get<GridMeasure>(m);
}

/// T_r(P, Q): closed-form comonotone integral for two 1-D Gaussians, quantile
/// coupling otherwise in 1-D, exact LP for discrete 2-D laws.
inline double transport_cost(const AnyMeasure& P, const AnyMeasure& Q, double r) {
    require(r >= 1.0, "transport_cost needs r >= 1");
    if (dim_of(P) != dim_of(Q)) throw DimensionError("P and Q have different dimensions");
    if (dim_of(P) == 1) {
        const auto* gp = std::get_if<GaussianSpec>(&P);
        const auto* gq = std::get_if<GaussianSpec>(&Q);
        if (gp && gq) return gaussian_shift_moment(gq->mean[0] - gp->mean[0], gq->sd(0) - gp->sd(0), r);
        return mk::solve_quantile_1d(as_measure1d(P), as_measure1d(Q), r).value;
    }
    const auto* dp = std::get_if<DiscreteMeasure>(&P);
    const auto* dq = std::get_if<DiscreteMeasure>(&Q);
    if (!dp || !dq) throw DimensionError("2-D transport costs need discrete laws");
    return mk::solve_exact(*dp, *dq, r).value;
}

/// A T_r-optimal (Y, Z) sampler: comonotone in 1-D, exact LP coupling in 2-D.
inline PairSampler optimal_pair_sampler(const AnyMeasure& P, const AnyMeasure& Q, double r) {
    if (dim_of(P) != dim_of(Q)) throw DimensionError("P and Q have different dimensions");
    if (dim_of(P) == 1) {
        const auto* gp = std::get_if<GaussianSpec>(&P);
        const auto* gq = std::get_if<GaussianSpec>(&Q);
        if (gp && gq) return PairSampler::comonotone(*gp, *gq);
        auto quantile_law = [](const AnyMeasure& m) -> mk::Measure1d {
            if (const auto* d = std::get_if<DiscreteMeasure>(&m)) return *d;
            return as_measure1d(m);
        };
        return PairSampler::comonotone(quantile_law(P), quantile_law(Q));
    }
    const auto* dp = std::get_if<DiscreteMeasure>(&P);
    const auto* dq = std::get_if<DiscreteMeasure>(&Q);
    if (!dp || !dq) throw DimensionError("2-D couplings need discrete laws");
    return PairSampler::from_coupling(mk::solve_exact(*dp, *dq, std::max(r, 1.0)).coupling);
}

/// t^{1-r} T_r(P^{X^0(t)}, Q) for zero-control heat smoothing.
inline double lower_zero_control(double t, double r, const AnyMeasure& P, const AnyMeasure& Q,
                                 const TransitionKernel& k) {
    require(t > 0.0, "lower_zero_control needs t > 0");
    if (k.kind() != TransitionKernel::Kind::Heat) throw InvalidArgument("zero-control bound needs a heat kernel");
    const double scale = std::pow(t, 1.0 - r);
    if (dim_of(P) == 1) {
        if (const auto* g = std::get_if<GaussianSpec>(&P)) return scale * transport_cost(mk::smoothed_gaussian(*g, k, t), Q, r);
        GridMeasure smoothed = std::holds_alternative<DiscreteMeasure>(P)
                                   ? mk::heat_smoothed_marginal(std::get<DiscreteMeasure>(P), k, t)
                                   : mk::heat_smoothed_marginal(std::get<GridMeasure>(P).as_discrete(), k, t);
        return scale * transport_cost(smoothed, Q, r);
    }
    const auto* dp = std::get_if<DiscreteMeasure>(&P);
    const auto* dq = std::get_if<DiscreteMeasure>(&Q);
    if (!dp || !dq) throw DimensionError("2-D zero-control bound needs discrete laws");
    mk::SmoothingGrid coarse;
    coarse.max_cells_2d = 61;
    coarse.min_cells = 61;
    auto smoothed = mk::heat_smoothed_marginal(*dp, k, t, coarse).as_discrete();
    return scale * mk::solve_exact(smoothed, *dq, r).value;
}

/// One (t, r) cell of the V_r sandwich. `estimate` is the bridge cost plus its
/// analytic truncation tail.
struct SandwichCell {
    double t = 0.0;
    double r = 1.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    double Tr = 0.0;
    double upper = 0.0;
    double lower_root = 0.0;
    double lower_eps = 0.0;
    double best_eps = 0.5;
    std::optional<double> lower_zero;
    /// T_r <= t^{r-1} V + sigma^r t^{r/2} seen on the estimate (open conjecture, logged only).
    bool reverse_gap_observed = false;

    std::vector<BoundReport> reports() const {
        using S = BoundReport::Side;
        std::vector<BoundReport> out{
            BoundReport::make("upper", S::Upper, t, r, estimate, stderr_, upper),
            BoundReport::make("lower_root", S::Lower, t, r, estimate, stderr_, lower_root),
            BoundReport::make("lower_eps", S::Lower, t, r, estimate, stderr_, lower_eps),
        };
        out[2].params["eps"] = best_eps;
        if (lower_zero) out.push_back(BoundReport::make("lower_zero_control", S::Lower, t, r, estimate, stderr_, *lower_zero));
        for (auto& b : out) b.params["Tr"] = Tr;
        return out;
    }

    bool holds() const {
        for (const auto& b : reports())
            if (!b.satisfied) return false;
        return true;
    }
};

struct SandwichSpec {
    AnyMeasure P, Q;
    double sigma = 1.0;
    std::vector<double> rs{1.0};
    std::vector<double> ts{1.0};
    std::size_t n_paths = 20000;
    std::uint64_t seed = 1;
    bool zero_control = true;
};

/// All (t, r) cells; one bridge ensemble per t is shared by every r (the
/// 1-D comonotone coupling is optimal for all r >= 1).
inline std::vector<SandwichCell> sandwich(const SandwichSpec& s) {
    for (double r : s.rs) require(r >= 1.0 && r < 2.0, "sandwich needs r in [1, 2)");
    std::map<double, double> Tr;
    for (double r : s.rs) Tr[r] = transport_cost(s.P, s.Q, r);
    const bool shared = dim_of(s.P) == 1;
    const double sigma_sup = frobenius_sigma(s.sigma, dim_of(s.P));
    auto heat = TransitionKernel::heat(dim_of(s.P), s.sigma > 0.0 ? s.sigma : 1.0);
    std::vector<SandwichCell> out;
    for (double t : s.ts) {
        std::optional<PathEnsemble> e;
        if (shared) e = sde::simulate_bridge(optimal_pair_sampler(s.P, s.Q, 1.0), s.sigma, TimeGrid::geometric_tail(t), s.n_paths, s.seed);
        for (double r : s.rs) {
            if (!shared) e = sde::simulate_bridge(optimal_pair_sampler(s.P, s.Q, r), s.sigma, TimeGrid::geometric_tail(t), s.n_paths, s.seed);
            auto c = sde::cost_r(*e, r);
            SandwichCell cell;
            cell.t = t;
            cell.r = r;
            cell.estimate = c.mean + c.truncation_bias;
            cell.stderr_ = c.stderr_;
            cell.Tr = Tr[r];
            cell.upper = upper_rhs(t, r, sigma_sup, cell.Tr);
            cell.lower_root = lower_rhs_root(t, r, sigma_sup, cell.Tr);
            std::tie(cell.lower_eps, cell.best_eps) = best_lower_rhs_eps(t, r, sigma_sup, cell.Tr);
            if (s.zero_control && s.sigma > 0.0) cell.lower_zero = lower_zero_control(t, r, s.P, s.Q, heat);
            cell.reverse_gap_observed =
                cell.Tr <= std::pow(t, r - 1.0) * (cell.estimate + 3.0 * cell.stderr_) + pow_abs(sigma_sup, r) * std::pow(t, 0.5 * r);
            out.push_back(cell);
        }
    }
    return out;
}

struct ShortTimeReport {
    double r = 1.0;
    std::vector<SandwichCell> cells;
    /// |t^{r-1} V - T_r| against t; absent when the gaps are not all positive or the fit is unstable.
    std::optional<SlopeFit> fit;
    std::string fit_error;
    double coefficient = 0.0;
    double coefficient_bound = 0.0;
    double root_coefficient = 0.0;
    double root_bound = 0.0;
    double diagonal = 0.0;
    double diagonal_bound = 0.0;
    std::size_t reverse_gap_observed = 0;
};

inline ShortTimeReport shorttime_report(const AnyMeasure& P, const AnyMeasure& Q, double r, double sigma,
                                        const std::vector<double>& ts, std::size_t n_paths, std::uint64_t seed) {
    for (double t : ts) require(t > 0.0 && t <= 0.5, "short-time window must lie in (0, 0.5]");
    SandwichSpec spec{P, Q, sigma, {r}, ts, n_paths, seed, false};
    ShortTimeReport rep;
    rep.r = r;
    rep.cells = sandwich(spec);
    const double Tr = rep.cells.front().Tr;
    sigma = frobenius_sigma(sigma, dim_of(P));
    rep.coefficient_bound = 2.0 * r * sigma * (Tr == 0.0 ? (r == 1.0 ? 1.0 : 0.0) : std::pow(Tr, 1.0 - 1.0 / r));
    rep.root_bound = std::pow(2.0 / (2.0 - r), 1.0 / r) * sigma;
    rep.diagonal_bound = 2.0 * pow_abs(sigma, r) / (2.0 - r);
    // The limsup coefficients are read off the three smallest times.
    std::vector<double> xs, gaps;
    std::vector<double> order(ts);
    std::sort(order.begin(), order.end());
    const double t_cut = order[std::min<std::size_t>(2, order.size() - 1)];
    for (const auto& c : rep.cells) {
        double scaled = std::pow(c.t, r - 1.0) * c.estimate;
        double gap = std::fabs(scaled - Tr);
        xs.push_back(c.t);
        gaps.push_back(gap);
        if (c.t <= t_cut) {
            rep.coefficient = std::max(rep.coefficient, gap / std::sqrt(c.t));
            rep.root_coefficient =
                std::max(rep.root_coefficient, std::fabs(std::pow(scaled, 1.0 / r) - std::pow(Tr, 1.0 / r)) / std::sqrt(c.t));
            rep.diagonal = std::max(rep.diagonal, std::pow(c.t, 0.5 * r - 1.0) * c.estimate);
        }
        if (c.reverse_gap_observed) ++rep.reverse_gap_observed;
    }
    try {
        rep.fit = fit_power(xs, gaps);
    } catch (const FitUnstable& e) {
        rep.fit_error = e.what();
    }
    return rep;
}

struct ZeroNoisePoint {
    double eps = 1.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    double gap = 0.0;
};

struct ZeroNoiseReport {
    double r = 1.0;
    double T = 1.0;
    bool diagonal = false;
    double target = 0.0;
    std::vector<ZeroNoisePoint> points;
    std::optional<SlopeFit> fit;
    std::string fit_error;
    double coefficient = 0.0;
    double coefficient_bound = 0.0;
};

/// Bridge estimates with sigma replaced by sqrt(eps) sigma under common random
/// numbers. P = Q fits V against eps; otherwise the gap V - T^{1-r} T_r.
inline ZeroNoiseReport zero_noise_report(const AnyMeasure& P, const AnyMeasure& Q, double r, double sigma, double T,
                                         const std::vector<double>& eps_list, std::size_t n_paths, std::uint64_t seed,
                                         bool diagonal) {
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        require(eps_list[i] > 0.0 && eps_list[i] <= 1.0, "eps must lie in (0, 1]");
        if (i > 0) require(eps_list[i] < eps_list[i - 1], "eps list must be decreasing");
    }
    ZeroNoiseReport rep;
    rep.r = r;
    rep.T = T;
    rep.diagonal = diagonal;
    const double Tr = transport_cost(P, Q, r);
    rep.target = std::pow(T, 1.0 - r) * Tr;
    const double sigma_sup = frobenius_sigma(sigma, dim_of(P));
    rep.coefficient_bound = diagonal ? 2.0 * pow_abs(sigma_sup, r) * std::pow(T, 1.0 - 0.5 * r) / (2.0 - r)
                                     : 2.0 * r * sigma_sup * std::pow(T, 1.5 - r) * std::pow(Tr, 1.0 - 1.0 / r);
    const auto sampler = optimal_pair_sampler(P, Q, r);
    std::vector<double> xs, ys;
    for (double eps : eps_list) {
        auto e = sde::simulate_bridge(sampler, std::sqrt(eps) * sigma, TimeGrid::geometric_tail(T), n_paths, seed);
        auto c = sde::cost_r(e, r);
        ZeroNoisePoint p{eps, c.mean + c.truncation_bias, c.stderr_, c.mean + c.truncation_bias - rep.target};
        rep.points.push_back(p);
        xs.push_back(eps);
        ys.push_back(diagonal ? p.estimate : std::fabs(p.gap));
        rep.coefficient = std::max(rep.coefficient, diagonal ? p.estimate / std::pow(eps, 0.5 * r) : std::fabs(p.gap) / std::sqrt(eps));
    }
    try {
        rep.fit = fit_power(xs, ys);
    } catch (const FitUnstable& e) {
        rep.fit_error = e.what();
    }
    return rep;
}

struct Extrapolation {
    double intercept = 0.0;
    /// sum |c_i| se_i: bounds the stderr of the intercept under any correlation between points.
    double stderr_bound = 0.0;
};

/// Least-squares intercept of the estimates on {1, eps, eps log eps}.
inline Extrapolation extrapolate_to_zero_noise(const std::vector<ZeroNoisePoint>& pts) {
    if (pts.size() < 4) throw FitUnstable("extrapolation needs at least four points");
    double A[3][3] = {};
    std::vector<std::array<double, 3>> X;
    for (const auto& p : pts) {
        require(p.eps > 0.0, "eps must be positive");
        X.push_back({1.0, p.eps, p.eps * std::log(p.eps)});
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) A[a][b] += X.back()[a] * X.back()[b];
    }
    // First row of A^{-1} by cofactors.
    const double c00 = A[1][1] * A[2][2] - A[1][2] * A[2][1];
    const double c01 = A[0][2] * A[2][1] - A[0][1] * A[2][2];
    const double c02 = A[0][1] * A[1][2] - A[0][2] * A[1][1];
    const double det = A[0][0] * c00 + A[1][0] * c01 + A[2][0] * c02;
    if (!(std::fabs(det) > 1e-300)) throw FitUnstable("extrapolation design is singular");
    Extrapolation e;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double ci = (c00 * X[i][0] + c01 * X[i][1] + c02 * X[i][2]) / det;
        e.intercept += ci * pts[i].estimate;
        e.stderr_bound += std::fabs(ci) * pts[i].stderr_;
    }
    return e;
}

struct ExplosionPoint {
    double t = 0.0;
    double upper = 0.0;
    double stderr_ = 0.0;
    double lower = 0.0;
};

struct ExplosionReport {
    double r = 1.0;
    std::vector<ExplosionPoint> points;
    std::optional<SlopeFit> upper_fit, lower_fit;
    std::string fit_error;
    bool increasing = false;
};

/// Large-t bracket: bridge upper estimates and the zero-control lower bound, log-log fitted.
inline ExplosionReport explosion_report(const AnyMeasure& P, const AnyMeasure& Q, double r, double sigma,
                                        const std::vector<double>& ts, std::size_t n_paths, std::uint64_t seed) {
    require(r >= 1.0 && r < 2.0, "explosion report needs r in [1, 2)");
    for (double t : ts) require(t >= 1.0 && t <= 100.0, "explosion window must lie in [1, 100]");
    ExplosionReport rep;
    rep.r = r;
    auto heat = TransitionKernel::heat(dim_of(P), sigma);
    const auto sampler = optimal_pair_sampler(P, Q, r);
    std::vector<double> up, lo;
    for (double t : ts) {
        auto e = sde::simulate_bridge(sampler, sigma, TimeGrid::geometric_tail(t), n_paths, seed);
        auto c = sde::cost_r(e, r);
        ExplosionPoint p{t, c.mean + c.truncation_bias, c.stderr_, lower_zero_control(t, r, P, Q, heat)};
        rep.points.push_back(p);
        up.push_back(p.upper);
        lo.push_back(p.lower);
    }
    rep.increasing = true;
    for (std::size_t i = 1; i < up.size(); ++i)
        if (!(up[i] > up[i - 1])) rep.increasing = false;
    try {
        rep.upper_fit = fit_power(ts, up);
        rep.lower_fit = fit_power(ts, lo);
    } catch (const FitUnstable& e) {
        rep.fit_error = e.what();
    }
    return rep;
}

/// Bounds for a general cost L under (A2): upper <- C upper + C' t, lower <- c lower - c' t.
inline std::vector<SandwichCell> general_cost_envelope(std::vector<SandwichCell> cells, double C, double c,
                                                       double C_prime, double c_prime) {
    require(C > 0.0 && c > 0.0 && C_prime >= 0.0 && c_prime >= 0.0, "envelope constants must be nonnegative, C and c positive");
    for (auto& cell : cells) {
        cell.upper = C * cell.upper + C_prime * cell.t;
        cell.lower_root = c * cell.lower_root - c_prime * cell.t;
        cell.lower_eps = c * cell.lower_eps - c_prime * cell.t;
        if (cell.lower_zero) cell.lower_zero = c * *cell.lower_zero - c_prime * cell.t;
    }
    return cells;
}

}  // namespace bounds
}  // namespace sotlab
