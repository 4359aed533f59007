#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sotlab/core.hpp"
#include "sotlab/kernels.hpp"
#include "sotlab/measures.hpp"
#include "sotlab/parallel.hpp"
#include "sotlab/random.hpp"
#include "sotlab/transport.hpp"

namespace sotlab {

/// Increasing knots 0 = t_0 < ... < t_N = T.
struct TimeGrid {
    enum class Refinement { Uniform, GeometricTail };

    std::vector<double> knots;
    Refinement refinement = Refinement::Uniform;
    double ratio = 1.0;
    double dt_min = 0.0;

    double T() const { return knots.back(); }
    std::size_t steps() const { return knots.size() - 1; }
    double dt(std::size_t k) const { return knots[k + 1] - knots[k]; }

    static TimeGrid uniform(double T, std::size_t n) {
        require(T > 0.0 && n >= 1, "uniform grid needs T > 0 and n >= 1");
        TimeGrid g;
        g.knots.resize(n + 1);
        for (std::size_t k = 0; k <= n; ++k) g.knots[k] = T * static_cast<double>(k) / static_cast<double>(n);
        g.knots.back() = T;
        g.dt_min = T / static_cast<double>(n);
        return g;
    }

    /// n_uniform equal steps on [t0, T], with the last one replaced by a
    /// geometric sequence of gaps to T (each `ratio` times the previous) down
    /// to dt_min; the final gap is exactly dt_min.
    static TimeGrid geometric_tail(double t0, double T, std::size_t n_uniform = 128, double ratio = 0.5,
                                   std::optional<double> dt_min = std::nullopt) {
        require(T > t0 && n_uniform >= 1, "geometric tail needs T > t0 and n_uniform >= 1");
        require(ratio > 0.0 && ratio < 1.0, "geometric tail ratio must be in (0, 1)");
        const double dmin = dt_min.value_or(1e-6 * T);
        const double h = (T - t0) / static_cast<double>(n_uniform);
        require(dmin > 0.0 && dmin < h, "dt_min must be positive and below the uniform step");
        TimeGrid g;
        g.refinement = Refinement::GeometricTail;
        g.ratio = ratio;
        g.dt_min = dmin;
        for (std::size_t k = 0; k < n_uniform; ++k) g.knots.push_back(t0 + h * static_cast<double>(k));
        for (double gap = h * ratio; gap > dmin; gap *= ratio) g.knots.push_back(T - gap);
        g.knots.push_back(T - dmin);
        g.knots.push_back(T);
        return g;
    }

    static TimeGrid geometric_tail(double T) { return geometric_tail(0.0, T); }

    /// `pre_steps` uniform steps on [0, T - delta], then a geometric tail on [T - delta, T].
    static TimeGrid delayed(double T, double delta, std::size_t pre_steps = 32, std::size_t n_uniform = 128,
                            double ratio = 0.5) {
        require(delta > 0.0 && delta < T, "delay must lie in (0, T)");
        TimeGrid tail = geometric_tail(T - delta, T, n_uniform, ratio, 1e-6 * T);
        TimeGrid g;
        g.refinement = Refinement::GeometricTail;
        g.ratio = ratio;
        g.dt_min = tail.dt_min;
        const double t_switch = T - delta;
        for (std::size_t k = 0; k < pre_steps; ++k) g.knots.push_back(t_switch * static_cast<double>(k) / pre_steps);
        g.knots.insert(g.knots.end(), tail.knots.begin(), tail.knots.end());
        return g;
    }

    void validate() const {
        if (knots.size() < 2 || knots.front() != 0.0) throw InvalidArgument("time grid must start at 0 with >= 1 step");
        for (std::size_t k = 1; k < knots.size(); ++k)
            if (!(knots[k] > knots[k - 1])) throw InvalidArgument("time grid must be strictly increasing");
    }
};

/// Simulated paths: states n_paths x (N+1) x d, controls n_paths x N x d (left knots).
struct PathEnsemble {
    TimeGrid grid;
    std::size_t n_paths = 0;
    int dim = 1;
    std::uint64_t seed = 0;
    std::vector<double> states;
    std::vector<double> controls;
    /// breaks[k] = 1 when the control jumps at knot k+1, so interval k uses its left value only.
    std::vector<char> breaks;
    /// Constant noise level of a pinned bridge segment (for the truncation tail); 0 otherwise.
    double bridge_sigma = 0.0;
    bool pinned = false;

    std::size_t N() const { return grid.steps(); }

    Point state(std::size_t p, std::size_t k) const {
        const double* s = &states[(p * (N() + 1) + k) * dim];
        return {s[0], dim == 2 ? s[1] : 0.0};
    }

    Point control(std::size_t p, std::size_t k) const {
        const double* s = &controls[(p * N() + k) * dim];
        return {s[0], dim == 2 ? s[1] : 0.0};
    }

    /// All paths at knot k.
    std::vector<Point> marginal(std::size_t k) const {
        std::vector<Point> out(n_paths);
        for (std::size_t p = 0; p < n_paths; ++p) out[p] = state(p, k);
        return out;
    }

    /// Index of the knot closest to t.
    std::size_t knot_index(double t) const {
        auto it = std::lower_bound(grid.knots.begin(), grid.knots.end(), t);
        if (it == grid.knots.end()) return N();
        std::size_t k = static_cast<std::size_t>(it - grid.knots.begin());
        if (k > 0 && std::fabs(grid.knots[k - 1] - t) < std::fabs(grid.knots[k] - t)) --k;
        return k;
    }
};

struct CostEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n_paths = 0;
    double r = 1.0;
    std::optional<double> truncation_time;
    double truncation_bias = 0.0;
    std::vector<double> per_path;
};

/// Draws a coupled pair (Y, Z).
class PairSampler {
public:
    using Fn = std::function<std::pair<Point, Point>(Rng&)>;

    PairSampler(int dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

    int dim() const { return dim_; }
    std::pair<Point, Point> operator()(Rng& rng) const { return fn_(rng); }

    static PairSampler fixed(const Point& y, const Point& z, int dim = 1) {
        return PairSampler(dim, [y, z](Rng&) { return std::make_pair(y, z); });
    }

    /// Row from the first marginal, then column from that row's conditional law (alias tables).
    static PairSampler from_coupling(const Coupling& c) {
        struct State {
            std::vector<Point> rows, cols;
            AliasTable row_table;
            std::vector<AliasTable> col_tables;
        };
        auto st = std::make_shared<State>();
        st->rows = c.row_support();
        st->cols = c.col_support();
        st->row_table = AliasTable(c.row_sums());
        st->col_tables.resize(c.n_rows());
        for (std::size_t i = 0; i < c.n_rows(); ++i) {
            std::vector<double> w(c.mass().begin() + static_cast<std::ptrdiff_t>(i * c.n_cols()),
                                  c.mass().begin() + static_cast<std::ptrdiff_t>((i + 1) * c.n_cols()));
            double total = 0.0;
            for (double v : w) total += v;
            if (total > 0.0) st->col_tables[i] = AliasTable(w);
        }
        return PairSampler(c.dim(), [st](Rng& rng) {
            std::size_t i = st->row_table(rng);
            std::size_t j = st->col_tables[i](rng);
            return std::make_pair(st->rows[i], st->cols[j]);
        });
    }

    /// Monotone coupling of two 1-D Gaussians: Y = m_P + s_P G, Z = m_Q + s_Q G.
    static PairSampler comonotone(const GaussianSpec& P, const GaussianSpec& Q) {
        if (P.dim != 1 || Q.dim != 1) throw DimensionError("comonotone Gaussian pair is one-dimensional");
        double mp = P.mean[0], sp = P.sd(0), mq = Q.mean[0], sq = Q.sd(0);
        return PairSampler(1, [=](Rng& rng) {
            double g = std::normal_distribution<double>()(rng);
            return std::make_pair(Point{mp + sp * g, 0.0}, Point{mq + sq * g, 0.0});
        });
    }

    /// Monotone coupling through a common uniform and the two quantile functions.
    static PairSampler comonotone(const mk::Measure1d& P, const mk::Measure1d& Q) {
        auto qp = std::make_shared<mk::Quantile1d>(std::visit([](const auto& x) { return mk::Quantile1d(x); }, P));
        auto qq = std::make_shared<mk::Quantile1d>(std::visit([](const auto& x) { return mk::Quantile1d(x); }, Q));
        return PairSampler(1, [qp, qq](Rng& rng) {
            double u = uniform01(rng);
            return std::make_pair(Point{(*qp)(u), 0.0}, Point{(*qq)(u), 0.0});
        });
    }

    /// Independent draws from the two marginals.
    static PairSampler independent(const AnyMeasure& P, const AnyMeasure& Q) {
        auto sp = std::make_shared<Sampler>(P);
        auto sq = std::make_shared<Sampler>(Q);
        return PairSampler(sp->dim(), [sp, sq](Rng& rng) {
            Point y = (*sp)(rng);
            return std::make_pair(y, (*sq)(rng));
        });
    }

private:
    int dim_;
    Fn fn_;
};

namespace sde {

namespace detail {

inline PathEnsemble allocate(const TimeGrid& grid, std::size_t n_paths, int dim, std::uint64_t seed) {
    grid.validate();
    check_dim(dim);
    require(n_paths >= 1, "ensemble needs at least one path");
    PathEnsemble e;
    e.grid = grid;
    e.n_paths = n_paths;
    e.dim = dim;
    e.seed = seed;
    e.states.assign(n_paths * (grid.steps() + 1) * dim, 0.0);
    e.controls.assign(n_paths * grid.steps() * dim, 0.0);
    e.breaks.assign(grid.steps(), 0);
    return e;
}

inline void put(double* dst, const Point& x, int d) {
    dst[0] = x[0];
    if (d == 2) dst[1] = x[1];
}

inline Point gaussian(Rng& rng, int d) {
    std::normal_distribution<double> n01;
    Point z{n01(rng), 0.0};
    if (d == 2) z[1] = n01(rng);
    return z;
}

/// Pinned bridge from x at knots[k0] to z at T, exact in law at the knots.
inline void bridge_segment(const TimeGrid& g, std::size_t k0, Point x, const Point& z, double sigma, int d, Rng& rng,
                           double* states, double* controls) {
    const double T = g.T();
    const std::size_t N = g.steps();
    put(states + k0 * d, x, d);
    for (std::size_t k = k0; k < N; ++k) {
        const double t0 = g.knots[k], t1 = g.knots[k + 1];
        put(controls + k * d, (1.0 / (T - t0)) * (z - x), d);
        Point xi = gaussian(rng, d);
        if (k + 1 == N) {
            x = z;
        } else {
            const double a = (T - t1) / (T - t0);
            x = z + a * (x - z) + std::sqrt(sigma * sigma * (t1 - t0) * a) * xi;
        }
        put(states + (k + 1) * d, x, d);
    }
}

}  // namespace detail

/// Zero-control paths X^0 with exact kernel transitions between knots.
inline PathEnsemble simulate_uncontrolled(const TransitionKernel& k, const Sampler& x0, const TimeGrid& grid,
                                          std::size_t n_paths, std::uint64_t seed) {
    if (k.dim() != x0.dim()) throw DimensionError("kernel and initial law dimensions differ");
    PathEnsemble e = detail::allocate(grid, n_paths, k.dim(), seed);
    const std::size_t N = grid.steps();
    const int d = e.dim;
    parallel_for(n_paths, [&](std::size_t p) {
        Rng rng = substream(seed, p);
        Point x = x0(rng);
        double* s = &e.states[p * (N + 1) * d];
        detail::put(s, x, d);
        for (std::size_t j = 0; j < N; ++j) {
            x = k.sample_transition(grid.knots[j], x, grid.knots[j + 1], rng);
            detail::put(s + (j + 1) * d, x, d);
        }
    });
    return e;
}

/// Drift-free constant noise sigma >= 0 (sigma = 0 gives constant paths).
inline PathEnsemble simulate_uncontrolled(double sigma, const Sampler& x0, const TimeGrid& grid, std::size_t n_paths,
                                          std::uint64_t seed) {
    require(sigma >= 0.0, "sigma must be nonnegative");
    PathEnsemble e = detail::allocate(grid, n_paths, x0.dim(), seed);
    const std::size_t N = grid.steps();
    const int d = e.dim;
    parallel_for(n_paths, [&](std::size_t p) {
        Rng rng = substream(seed, p);
        Point x = x0(rng);
        double* s = &e.states[p * (N + 1) * d];
        detail::put(s, x, d);
        for (std::size_t j = 0; j < N; ++j) {
            x = x + sigma * std::sqrt(grid.dt(j)) * detail::gaussian(rng, d);
            detail::put(s + (j + 1) * d, x, d);
        }
    });
    return e;
}

/// dX = (Z - X)/(T - t) dt + sigma dB from X(0) = Y, with X(T) := Z.
inline PathEnsemble simulate_bridge(const PairSampler& yz, double sigma, const TimeGrid& grid, std::size_t n_paths,
                                    std::uint64_t seed) {
    require(sigma >= 0.0, "sigma must be nonnegative");
    if (grid.refinement != TimeGrid::Refinement::GeometricTail)
        throw GridNotRefined("the bridge drift is singular at T; use a geometric-tail grid");
    if (grid.dt_min > 1e-6 * grid.T() * (1.0 + 1e-12))
        throw GridNotRefined("geometric tail must reach dt_min <= 1e-6 T");
    PathEnsemble e = detail::allocate(grid, n_paths, yz.dim(), seed);
    e.bridge_sigma = sigma;
    e.pinned = true;
    const std::size_t N = grid.steps();
    const int d = e.dim;
    parallel_for(n_paths, [&](std::size_t p) {
        Rng rng = substream(seed, p);
        auto [y, z] = yz(rng);
        detail::bridge_segment(grid, 0, y, z, sigma, d, rng, &e.states[p * (N + 1) * d], &e.controls[p * N * d]);
    });
    return e;
}

/// sigma^r E|G|^r tau^{1-r/2} / (1 - r/2): the bridge cost over the last tau before T, G ~ N(0, I_d).
inline double bridge_tail_cost(double sigma, double r, double tau, int d = 1) {
    if (r >= 2.0) return kInf;
    return pow_abs(sigma, r) * gaussian_norm_moment(r, d) * std::pow(tau, 1.0 - 0.5 * r) / (1.0 - 0.5 * r);
}

inline CostEstimate summarize(std::vector<double> per_path, double r) {
    CostEstimate c;
    c.r = r;
    c.n_paths = per_path.size();
    double mean = 0.0;
    for (double v : per_path) mean += v;
    mean /= static_cast<double>(per_path.size());
    double ss = 0.0;
    for (double v : per_path) ss += (v - mean) * (v - mean);
    c.mean = mean;
    c.stderr_ = per_path.size() > 1 ? std::sqrt(ss / static_cast<double>(per_path.size() - 1) / per_path.size()) : 0.0;
    c.per_path = std::move(per_path);
    return c;
}

/// Weights (w_a, w_b) of the product trapezoid rule on [a, b]:
/// int_a^b (T-t)^{-r/2} g(t) dt with g linear between g(a) and g(b).
inline std::pair<double, double> singular_weights(double a, double b, double T, double r) {
    const double p = 1.0 - 0.5 * r;
    const double sa = T - a, sb = T - b, D = sa - sb;
    const double I0 = (std::pow(sa, p) - std::pow(sb, p)) / p;
    const double I1 = (std::pow(sa, p + 1.0) - std::pow(sb, p + 1.0)) / (p + 1.0);
    return {(I1 - sb * I0) / D, (sa * I0 - I1) / D};
}

/// E int_0^{t*} |u|^r dt over whole intervals ending at or before t* (default:
/// the last knot before T). Pinned ensembles integrate g = |u|^r (T-t)^{r/2}
/// against the exact weight (T-t)^{-r/2} (r < 2); otherwise plain trapezoid.
/// Intervals flagged in `breaks` use the left value only.
inline CostEstimate cost_r(const PathEnsemble& e, double r, std::optional<double> truncation_time = std::nullopt) {
    require(r > 0.0, "cost exponent must be positive");
    const auto& kn = e.grid.knots;
    const std::size_t N = e.N();
    const double T = e.grid.T();
    const double t_star = truncation_time.value_or(kn[N - 1]);
    std::size_t last = 0;
    while (last < N && kn[last + 1] <= t_star * (1.0 + 1e-14)) ++last;
    const bool singular = e.pinned && r < 2.0;
    std::vector<std::pair<double, double>> w(last);
    for (std::size_t k = 0; k < last; ++k) {
        if (singular) {
            auto [wa, wb] = singular_weights(kn[k], kn[k + 1], T, r);
            double fa = std::pow(T - kn[k], 0.5 * r);
            double fb = std::pow(T - kn[k + 1], 0.5 * r);
            w[k] = e.breaks[k] ? std::make_pair((wa + wb) * fa, 0.0) : std::make_pair(wa * fa, wb * fb);
        } else {
            double h = e.grid.dt(k);
            w[k] = e.breaks[k] ? std::make_pair(h, 0.0) : std::make_pair(0.5 * h, 0.5 * h);
        }
        if (k + 1 >= N) w[k] = {w[k].first + w[k].second, 0.0};
    }
    std::vector<double> per_path(e.n_paths);
    parallel_for(e.n_paths, [&](std::size_t p) {
        double s = 0.0;
        for (std::size_t k = 0; k < last; ++k) {
            s += w[k].first * pow_abs(norm(e.control(p, k)), r);
            if (w[k].second != 0.0) s += w[k].second * pow_abs(norm(e.control(p, k + 1)), r);
        }
        per_path[p] = s;
    });
    CostEstimate c = summarize(std::move(per_path), r);
    c.truncation_time = kn[last];
    if (e.pinned) c.truncation_bias = bridge_tail_cost(e.bridge_sigma, r, T - kn[last], e.dim);
    return c;
}

/// Bridge cost with (Y, Z) drawn from a coupling: an upper estimate of V_r(T, P, Q).
inline CostEstimate value_upper_estimate(const PairSampler& yz, double sigma, double T, double r, std::size_t n_paths,
                                         std::uint64_t seed) {
    auto e = simulate_bridge(yz, sigma, TimeGrid::geometric_tail(T), n_paths, seed);
    return cost_r(e, r);
}

inline CostEstimate value_upper_estimate(const TransportResult& coupling, double sigma, double T, double r,
                                         std::size_t n_paths, std::uint64_t seed) {
    require(r >= 1.0 && r < 2.0, "the bridge upper estimate needs r in [1, 2)");
    return value_upper_estimate(PairSampler::from_coupling(coupling.coupling), sigma, T, r, n_paths, seed);
}

/// X^0 on [0, T - delta], then a pinned bridge to Z over [T - delta, T].
inline PathEnsemble simulate_delayed_bridge(const PairSampler& yz, double sigma, double T, double delta,
                                            std::size_t n_paths, std::uint64_t seed) {
    require(sigma >= 0.0, "sigma must be nonnegative");
    TimeGrid grid = TimeGrid::delayed(T, delta);
    PathEnsemble e = detail::allocate(grid, n_paths, yz.dim(), seed);
    e.bridge_sigma = sigma;
    e.pinned = true;
    const std::size_t N = grid.steps();
    const int d = e.dim;
    std::size_t k_switch = 0;
    while (grid.knots[k_switch] < T - delta) ++k_switch;
    if (k_switch > 0) e.breaks[k_switch - 1] = 1;
    parallel_for(n_paths, [&](std::size_t p) {
        Rng rng = substream(seed, p);
        auto [y, z] = yz(rng);
        double* s = &e.states[p * (N + 1) * d];
        Point x = y;
        detail::put(s, x, d);
        for (std::size_t j = 0; j < k_switch; ++j) {
            x = x + sigma * std::sqrt(grid.dt(j)) * detail::gaussian(rng, d);
            detail::put(s + (j + 1) * d, x, d);
        }
        detail::bridge_segment(grid, k_switch, x, z, sigma, d, rng, s, &e.controls[p * N * d]);
    });
    return e;
}

inline CostEstimate delayed_bridge_cost(const PairSampler& yz, double sigma, double T, double delta, double r,
                                        std::size_t n_paths, std::uint64_t seed) {
    require(r > 0.0 && r < 1.0, "the delayed bridge construction is for r in (0, 1)");
    return cost_r(simulate_delayed_bridge(yz, sigma, T, delta, n_paths, seed), r);
}

struct CompressedCost {
    double n = 1.0;
    double envelope = 0.0;
    CostEstimate simulated;
};

/// Control u_n(t) = nT u(nT(t - T + 1/n)) on (T - 1/n, T], zero before. The
/// simulated cost integrates |u_n|^r on the image of the base knots; the envelope
/// is C (nT)^{r-1} E int |u|^r + C' / n.
inline CompressedCost compressed_control_cost(const PathEnsemble& base, double n, double r, double C, double C_prime) {
    const double T = base.grid.T();
    require(n * T >= 1.0, "compression needs n >= 1/T");
    require(r > 0.0 && r < 1.0, "compression collapse is for r in (0, 1)");
    require(C > 0.0 && C_prime >= 0.0, "envelope constants must be positive");
    CostEstimate base_cost = cost_r(base, r);
    PathEnsemble squeezed = base;
    squeezed.pinned = false;
    const double start = T - 1.0 / n;
    for (double& t : squeezed.grid.knots) t = start + t / (n * T);
    for (double& u : squeezed.controls) u *= n * T;
    // Same knots as the base estimate, mapped through the compression.
    CostEstimate sim = cost_r(squeezed, r, start + *base_cost.truncation_time / (n * T));
    sim.truncation_bias = base_cost.truncation_bias * std::pow(n * T, r - 1.0);
    CompressedCost out;
    out.n = n;
    out.envelope = C * std::pow(n * T, r - 1.0) * base_cost.mean + C_prime / n;
    out.simulated = std::move(sim);
    return out;
}

/// Flat binary dump: u64 header {n_paths, N, d, seed}, N+1 knots, then states row-major.
inline void dump_paths(const PathEnsemble& e, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path);
    std::uint64_t header[4] = {e.n_paths, e.N(), static_cast<std::uint64_t>(e.dim), e.seed};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(e.grid.knots.data()),
              static_cast<std::streamsize>(e.grid.knots.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(e.states.data()),
              static_cast<std::streamsize>(e.states.size() * sizeof(double)));
}

}  // namespace sde
}  // namespace sotlab
