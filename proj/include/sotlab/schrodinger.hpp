#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "sotlab/core.hpp"
#include "sotlab/kernels.hpp"
#include "sotlab/measures.hpp"
#include "sotlab/parallel.hpp"
#include "sotlab/transport.hpp"

namespace sotlab {

struct EntropyValue {
    double value = 0.0;
    bool finite = true;
};

struct SchrodingerSolution {
    Coupling coupling;
    double T = 0.0;
    /// H(coupling | reference) in nats.
    double value = 0.0;
    /// Potentials on the Q grid (phi1) and P grid (phi2), gauge sum_i P_i phi2_i = 0.
    /// Cells with zero mass carry NaN.
    std::vector<double> phi1, phi2;
    std::size_t iterations = 0;
    double marginal_residual = 0.0;
    bool converged = false;
    /// (iteration, residual) every 10 iterations.
    std::vector<std::pair<std::size_t, double>> residual_trace;
};

struct SinkhornOptions {
    double tol = 1e-9;
    std::size_t max_iter = 50000;
    /// Optional starting phi1 over the Q grid.
    std::optional<std::vector<double>> initial_phi1;
};

namespace schrodinger {

inline EntropyValue relative_entropy(std::span<const double> mu, std::span<const double> nu) {
    if (mu.size() != nu.size()) throw ShapeMismatch("relative entropy needs a shared support");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (mu[i] <= 0.0) continue;
        if (nu[i] <= 0.0) return {kInf, false};
        s += mu[i] * std::log(mu[i] / nu[i]);
    }
    return {s, true};
}

inline EntropyValue relative_entropy(const Coupling& mu, const Coupling& nu) {
    if (mu.n_rows() != nu.n_rows() || mu.n_cols() != nu.n_cols()) throw ShapeMismatch("couplings differ in shape");
    return relative_entropy(mu.mass(), nu.mass());
}

inline EntropyValue relative_entropy(const GridMeasure& mu, const GridMeasure& nu) {
    if (!mu.grid().same_layout(nu.grid())) throw ShapeMismatch("grid measures differ in layout");
    return relative_entropy(mu.masses(), nu.masses());
}

/// Differential entropy int q log q of the piecewise-constant density.
inline EntropyValue entropy_S(const GridMeasure& q) {
    double s = 0.0;
    for (double v : q.density())
        if (v > 0.0) s += v * std::log(v);
    return {s * q.grid().cell_volume(), true};
}

/// Reference coupling R_ij = P_i p(0,x_i;T,y_j) |cell of y_j|.
inline Coupling reference(const GridMeasure& P, const GridMeasure& Q, const TransitionKernel& k, double T) {
    Coupling R(P.dim(), P.grid().centers(), Q.grid().centers());
    const double hy = Q.grid().cell_volume();
    for (std::size_t i = 0; i < R.n_rows(); ++i) {
        double pi = P.mass(i);
        if (pi == 0.0) continue;
        for (std::size_t j = 0; j < R.n_cols(); ++j) R(i, j) = pi * std::exp(k.log_eval(0.0, R.row_support()[i], T, R.col_support()[j])) * hy;
    }
    return R;
}

/// Log-domain Sinkhorn for min H(mu | R) over Pi(P, Q).
inline SchrodingerSolution sinkhorn_solve(const GridMeasure& P, const GridMeasure& Q, const TransitionKernel& k, double T,
                                          const SinkhornOptions& opt = {}) {
    require(T > 0.0, "sinkhorn_solve needs T > 0");
    require(opt.tol > 0.0, "sinkhorn tolerance must be positive");
    if (P.dim() != k.dim() || Q.dim() != k.dim()) throw DimensionError("measure and kernel dimensions differ");
    const auto pm = P.masses();
    const auto qm = Q.masses();
    std::vector<std::size_t> rows, cols;
    for (std::size_t i = 0; i < pm.size(); ++i)
        if (pm[i] > 0.0) rows.push_back(i);
    for (std::size_t j = 0; j < qm.size(); ++j)
        if (qm[j] > 0.0) cols.push_back(j);
    const std::size_t m = rows.size(), n = cols.size();
    const auto xs = P.grid().centers();
    const auto ys = Q.grid().centers();

    std::vector<double> logK(m * n);
    parallel_for(m, [&](std::size_t a) {
        for (std::size_t b = 0; b < n; ++b) logK[a * n + b] = k.log_eval(0.0, xs[rows[a]], T, ys[cols[b]]);
    });
    std::vector<double> logP(m), logQ(n);
    for (std::size_t a = 0; a < m; ++a) logP[a] = std::log(pm[rows[a]]);
    for (std::size_t b = 0; b < n; ++b) logQ[b] = std::log(qm[cols[b]]);

    std::vector<double> f(m, 0.0), g(n);
    for (std::size_t b = 0; b < n; ++b) g[b] = opt.initial_phi1 ? logQ[b] - (*opt.initial_phi1)[cols[b]] : logQ[b];

    SchrodingerSolution sol;
    sol.T = T;
    std::vector<double> buf(std::max(m, n));
    std::vector<double> col_lse(n);
    double residual = kInf;
    std::size_t it = 0;
    while (it < opt.max_iter) {
        ++it;
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < n; ++b) buf[b] = logK[a * n + b] + g[b];
            f[a] = logP[a] - log_sum_exp(std::span<const double>(buf.data(), n));
        }
        // Column sums of the current iterate give the residual for free.
        residual = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t a = 0; a < m; ++a) buf[a] = logK[a * n + b] + f[a];
            col_lse[b] = log_sum_exp(std::span<const double>(buf.data(), m));
            residual += std::fabs(std::exp(col_lse[b] + g[b]) - qm[cols[b]]);
        }
        if (it % 10 == 0) sol.residual_trace.emplace_back(it, residual);
        if (residual <= opt.tol) break;
        for (std::size_t b = 0; b < n; ++b) g[b] = logQ[b] - col_lse[b];
    }
    sol.iterations = it;
    sol.converged = residual <= opt.tol;

    Coupling mu(P.dim(), xs, ys);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < n; ++b) mu(rows[a], cols[b]) = std::exp(f[a] + logK[a * n + b] + g[b]);
    sol.marginal_residual = mu.marginal_residual(pm, qm);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    sol.phi2.assign(pm.size(), nan);
    sol.phi1.assign(qm.size(), nan);
    double gauge = 0.0;
    for (std::size_t a = 0; a < m; ++a) gauge += pm[rows[a]] * (logP[a] - f[a]);
    for (std::size_t a = 0; a < m; ++a) sol.phi2[rows[a]] = logP[a] - f[a] - gauge;
    for (std::size_t b = 0; b < n; ++b) sol.phi1[cols[b]] = logQ[b] - g[b] + gauge;

    const double log_hy = std::log(Q.grid().cell_volume());
    double value = 0.0;
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            double w = mu(rows[a], cols[b]);
            if (w > 0.0) value += w * (std::log(w) - logP[a] - logK[a * n + b] - log_hy);
        }
    sol.value = value;
    sol.coupling = std::move(mu);
    return sol;
}

/// S_h(Q) - Q.phi1 - P.phi2: the value read off the potentials.
inline double dual_value(const SchrodingerSolution& s, const GridMeasure& P, const GridMeasure& Q) {
    double v = entropy_S(Q).value;
    for (std::size_t j = 0; j < Q.size(); ++j)
        if (Q.mass(j) > 0.0) v -= Q.mass(j) * s.phi1[j];
    for (std::size_t i = 0; i < P.size(); ++i)
        if (P.mass(i) > 0.0) v -= P.mass(i) * s.phi2[i];
    return v;
}

struct SweepEntry {
    double t = 0.0;
    double value = 0.0;
    double t_value = 0.0;
    std::size_t iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

inline std::vector<SweepEntry> value_sweep(const GridMeasure& P, const GridMeasure& Q, const TransitionKernel& k,
                                           const std::vector<double>& ts, const SinkhornOptions& opt = {}) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
        require(ts[i] > 0.0, "sweep times must be positive");
        if (i > 0 && !(ts[i] > ts[i - 1])) throw InvalidArgument("sweep times must be increasing");
    }
    std::vector<SweepEntry> out(ts.size());
    parallel_for(ts.size(), [&](std::size_t i) {
        auto s = sinkhorn_solve(P, Q, k, ts[i], opt);
        out[i] = {ts[i], s.value, ts[i] * s.value, s.iterations, s.marginal_residual, s.converged};
    });
    return out;
}

/// int |x - y|^2 P(dx) Q(dy) for independent P and Q.
inline double product_second_moment(const GridMeasure& P, const GridMeasure& Q) {
    Point mp{}, mq{};
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        Point x = P.grid().center(i);
        mp = mp + P.mass(i) * x;
        sp += P.mass(i) * norm2(x);
    }
    for (std::size_t j = 0; j < Q.size(); ++j) {
        Point y = Q.grid().center(j);
        mq = mq + Q.mass(j) * y;
        sq += Q.mass(j) * norm2(y);
    }
    return sp + sq - 2.0 * (mp[0] * mq[0] + mp[1] * mq[1]);
}

/// Upper bound for v^S(t): {C m2 + t S(Q) + t log(C t^{d/2})} / t.
inline double upper_rhs(double t, double product_moment, const EntropyValue& S_Q, double C_tilde, int d) {
    require(t > 0.0, "upper_rhs needs t > 0");
    if (!S_Q.finite) throw EntropyInfinite("S(Q) is not finite");
    return (C_tilde * product_moment + t * S_Q.value + t * std::log(C_tilde * std::pow(t, 0.5 * d))) / t;
}

inline double upper_rhs(double t, const GridMeasure& P, const GridMeasure& Q, double C_tilde, int d) {
    return upper_rhs(t, product_second_moment(P, Q), entropy_S(Q), C_tilde, d);
}

/// Lower bound for v^S(t):
/// {(1-e)^2 T2 - e^{-1}(1-e)^2 sigma^2 t - e^{-1}(1-e) xi^2 t^2} / (2 lambda t).
inline double lower_rhs(double t, double T2, double lambda_sup, double sigma_sup, double xi_sup, double eps) {
    require(t > 0.0, "lower_rhs needs t > 0");
    require(eps > 0.0 && eps < 1.0, "lower_rhs needs eps in (0, 1)");
    require(lambda_sup > 0.0, "lower_rhs needs lambda > 0");
    double a = 1.0 - eps;
    double inner = a * a * T2 - a * a * sigma_sup * sigma_sup * t / eps - a * xi_sup * xi_sup * t * t / eps;
    return inner / (2.0 * lambda_sup * t);
}

/// lower_rhs maximized over eps on a fine grid in (0, 1).
inline double best_lower_rhs(double t, double T2, double lambda_sup, double sigma_sup, double xi_sup) {
    double best = -kInf;
    for (int i = 1; i < 2000; ++i) best = std::max(best, lower_rhs(t, T2, lambda_sup, sigma_sup, xi_sup, i / 2000.0));
    return best;
}

struct LongtimeEntry {
    double t = 0.0;
    double H_product = 0.0;
    double tv = 0.0;
    double value = 0.0;
    double H_Q_m = 0.0;
    bool ckp_holds = false;
    std::size_t iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

/// H(Q | m) with m the invariant law discretized on Q's grid.
inline double entropy_against_invariant(const GridMeasure& Q, const TransitionKernel& k) {
    auto m = measures::discretize_gaussian(k.invariant_law(), Q.grid());
    return relative_entropy(Q, m).value;
}

inline std::vector<LongtimeEntry> longtime_limits(const GridMeasure& P, const GridMeasure& Q, const TransitionKernel& k,
                                                  const std::vector<double>& ts, const SinkhornOptions& opt = {}) {
    if (!k.has_invariant()) throw NoInvariant("long-time limits need an ergodic (OU) kernel");
    const double hqm = entropy_against_invariant(Q, k);
    const auto pm = P.masses();
    const auto qm = Q.masses();
    std::vector<LongtimeEntry> out(ts.size());
    parallel_for(ts.size(), [&](std::size_t i) {
        auto s = sinkhorn_solve(P, Q, k, ts[i], opt);
        Coupling prod(P.dim(), P.grid().centers(), Q.grid().centers());
        for (std::size_t a = 0; a < pm.size(); ++a)
            for (std::size_t b = 0; b < qm.size(); ++b) prod(a, b) = pm[a] * qm[b];
        LongtimeEntry e;
        e.t = ts[i];
        auto H = relative_entropy(prod, s.coupling);
        e.H_product = H.value;
        double l1 = 0.0;
        for (std::size_t c = 0; c < prod.mass().size(); ++c) l1 += std::fabs(prod.mass()[c] - s.coupling.mass()[c]);
        e.tv = 0.5 * l1;
        e.ckp_holds = H.finite && e.tv <= std::sqrt(2.0 * H.value) + 1e-9;
        e.value = s.value;
        e.H_Q_m = hqm;
        e.iterations = s.iterations;
        e.residual = s.marginal_residual;
        e.converged = s.converged;
        out[i] = e;
    });
    return out;
}

struct LongtimeUpperFit {
    double C_bar = 1.0;
    double rhs = 0.0;
    double sup_value = 0.0;
};

/// Smallest C on {1, 2, 4, ...} with S(Q) + C (1 + int |x|^2 (P + Q)) >= every value in the sweep.
inline LongtimeUpperFit upper_bound_longtime_rhs(const GridMeasure& Q, const GridMeasure& P,
                                                 std::span<const double> sweep_values) {
    const double S = entropy_S(Q).value;
    const double moments = 1.0 + measures::moment_r(P, 2.0) + measures::moment_r(Q, 2.0);
    LongtimeUpperFit fit;
    fit.sup_value = sweep_values.empty() ? -kInf : *std::max_element(sweep_values.begin(), sweep_values.end());
    for (int k = 0; k < 64; ++k) {
        fit.C_bar = std::ldexp(1.0, k);
        fit.rhs = S + fit.C_bar * moments;
        if (fit.rhs >= fit.sup_value) return fit;
    }
    throw FitFailed("no ladder constant bounds the sweep");
}

}  // namespace schrodinger
}  // namespace sotlab
