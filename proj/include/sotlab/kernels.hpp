#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sotlab/core.hpp"
#include "sotlab/measures.hpp"
#include "sotlab/parallel.hpp"
#include "sotlab/random.hpp"

namespace sotlab {

using SigmaFn = std::function<Mat2(double)>;

/// Closed-form Gaussian transition density p(s,x;t,y).
///
/// Heat: dX = sigma(t) dB with sigma constant in space; the law of X(t) given
/// X(s) = x is N(x, int_s^t a(u) du) with a = sigma sigma^T.
///
/// Ornstein-Uhlenbeck: dX = -theta X dt + sigma dB (isotropic); the law is
/// N(e^{-theta(t-s)} x, sigma^2 (1 - e^{-2 theta (t-s)}) / (2 theta) I).
class TransitionKernel {
public:
    enum class Kind { Heat, OrnsteinUhlenbeck };

    static TransitionKernel heat(int d, double sigma) {
        require(sigma > 0.0, "heat kernel needs sigma > 0");
        TransitionKernel k(Kind::Heat, d);
        k.sigma_const_ = Mat2::identity(d, sigma);
        k.constant_ = true;
        return k;
    }

    /// Time-dependent diffusion matrix sigma(t); must stay nonsingular.
    static TransitionKernel heat(int d, SigmaFn sigma_of_t) {
        TransitionKernel k(Kind::Heat, d);
        k.sigma_fn_ = std::move(sigma_of_t);
        k.constant_ = false;
        return k;
    }

    static TransitionKernel ornstein_uhlenbeck(int d, double theta, double sigma) {
        require(theta > 0.0, "OU kernel needs theta > 0");
        require(sigma > 0.0, "OU kernel needs sigma > 0");
        TransitionKernel k(Kind::OrnsteinUhlenbeck, d);
        k.theta_ = theta;
        k.sigma_const_ = Mat2::identity(d, sigma);
        k.constant_ = true;
        return k;
    }

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    double theta() const { return theta_; }
    bool constant_sigma() const { return constant_; }

    Mat2 sigma(double t) const { return constant_ ? sigma_const_ : sigma_fn_(t); }

    /// Drift xi(x); zero for the heat kernel.
    Point drift(const Point& x) const { return kind_ == Kind::Heat ? Point{0.0, 0.0} : (-theta_) * x; }

    /// Covariance of X(t) given X(s).
    Mat2 covariance(double s, double t) const {
        if (kind_ == Kind::OrnsteinUhlenbeck) {
            double s2 = sigma_const_.m[0][0] * sigma_const_.m[0][0];
            return Mat2::identity(dim_, s2 * (-std::expm1(-2.0 * theta_ * (t - s))) / (2.0 * theta_));
        }
        if (constant_) return (t - s) * outer_square(sigma_const_);
        return integrate_a(s, t);
    }

    Point mean(double s, const Point& x, double t) const {
        return kind_ == Kind::Heat ? x : std::exp(-theta_ * (t - s)) * x;
    }

    double log_eval(double s, const Point& x, double t, const Point& y) const {
        if (!(t > s)) throw TimeOrder("transition density needs s < t");
        return gaussian_log_density(y, mean(s, x, t), covariance(s, t), dim_);
    }

    double eval(double s, const Point& x, double t, const Point& y) const { return std::exp(log_eval(s, x, t, y)); }

    Point sample_transition(double s, const Point& x, double t, Rng& rng) const {
        std::normal_distribution<double> n01;
        Point z{n01(rng), 0.0};
        if (dim_ == 2) z[1] = n01(rng);
        return mean(s, x, t) + matvec(cholesky(covariance(s, t), dim_), z);
    }

    /// sup over [0, t] of the Frobenius norm of sigma.
    double sigma_sup(double t) const {
        if (constant_) return frobenius(sigma_const_);
        double best = 0.0;
        for (int i = 0; i <= 256; ++i) best = std::max(best, frobenius(sigma_fn_(t * i / 256.0)));
        return best;
    }

    /// sup over [0, t] of the largest eigenvalue of a = sigma sigma^T.
    double lambda_sup(double t) const {
        if (constant_) return max_eigenvalue(outer_square(sigma_const_), dim_);
        double best = 0.0;
        for (int i = 0; i <= 256; ++i) best = std::max(best, max_eigenvalue(outer_square(sigma_fn_(t * i / 256.0)), dim_));
        return best;
    }

    /// Standard deviation of the transition law at horizon T (largest axis).
    double scale(double T) const { return std::sqrt(max_eigenvalue(covariance(0.0, T), dim_)); }

    bool has_invariant() const { return kind_ == Kind::OrnsteinUhlenbeck; }

    GaussianSpec invariant_law() const {
        if (!has_invariant()) throw NoInvariant("Brownian motion has no invariant probability density");
        double s2 = sigma_const_.m[0][0] * sigma_const_.m[0][0];
        return GaussianSpec(dim_, {0.0, 0.0}, Mat2::identity(dim_, s2 / (2.0 * theta_)));
    }

private:
    TransitionKernel(Kind kind, int d) : kind_(kind), dim_(d) { check_dim(d); }

    Mat2 integrate_a(double s, double t) const {
        // 8-point Gauss-Legendre on panels of length <= 0.05.
        static constexpr std::array<double, 8> nodes{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                                     -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                                     0.7966664774136267,  0.9602898564975363};
        static constexpr std::array<double, 8> wts{0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                                   0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                                   0.2223810344533745, 0.1012285362903763};
        int panels = std::max(1, static_cast<int>(std::ceil((t - s) / 0.05)));
        double h = (t - s) / panels;
        Mat2 acc;
        for (int p = 0; p < panels; ++p) {
            double mid = s + (p + 0.5) * h;
            for (std::size_t q = 0; q < nodes.size(); ++q)
                acc = acc + (0.5 * h * wts[q]) * outer_square(sigma_fn_(mid + 0.5 * h * nodes[q]));
        }
        return acc;
    }

    Kind kind_;
    int dim_;
    double theta_ = 0.0;
    bool constant_ = true;
    Mat2 sigma_const_{};
    SigmaFn sigma_fn_;
};

/// Two-sided Gaussian certificate for a kernel on a probe set.
struct AronsonFit {
    double C_tilde = 1.0;
    double horizon = 1.0;
    /// Worst log-space violation at C_tilde; <= 0 means every probe holds.
    double residual = 0.0;
    /// Random probes plus the deterministic lattice.
    std::size_t probes = 0;
    double box_half_width = 0.0;
};

namespace kernels {

inline double eval(const TransitionKernel& k, double s, const Point& x, double t, const Point& y) {
    return k.eval(s, x, t, y);
}

/// The invariant density discretized on `grid` (default: +-8 sd, 401 cells).
inline GridMeasure invariant_density(const TransitionKernel& k, const GridSpec& grid) {
    return measures::discretize_gaussian(k.invariant_law(), grid);
}

inline GridMeasure invariant_density(const TransitionKernel& k) {
    return invariant_density(k, measures::default_grid(k.invariant_law()));
}

inline constexpr double kAronsonLadder = 1.05;
inline constexpr double kAronsonMax = 1e6;

struct AronsonProbe {
    double s, t;
    Point x, y;
};

/// Probe tuples with 0 <= s < t <= T and x, y uniform on [-L, L]^d.
inline std::vector<AronsonProbe> aronson_probes(const TransitionKernel& k, double T, std::size_t n, std::uint64_t seed,
                                                double L) {
    std::vector<AronsonProbe> out(n);
    Rng rng = substream(seed, 0x41524f4eULL);
    std::uniform_real_distribution<double> box(-L, L), time(0.0, T);
    for (auto& p : out) {
        double a = time(rng), b = time(rng);
        while (a == b) b = time(rng);
        p.s = std::min(a, b);
        p.t = std::max(a, b);
        p.x = {box(rng), k.dim() == 2 ? box(rng) : 0.0};
        p.y = {box(rng), k.dim() == 2 ? box(rng) : 0.0};
    }
    return out;
}

/// Deterministic lattice over the box edges and the diagonal with tau on a log
/// scale down to 1e-4 T; random probes rarely land where the drift bites hardest.
inline std::vector<AronsonProbe> aronson_lattice(const TransitionKernel& k, double T, double L) {
    std::vector<AronsonProbe> out;
    const int nx = 21, nt = 17;
    for (int a = 0; a < nt; ++a) {
        double tau = T * std::pow(10.0, -4.0 + 4.0 * a / (nt - 1));
        for (double s : {0.0, T - tau}) {
            if (s < 0.0) continue;
            for (int i = 0; i < nx; ++i) {
                double x = -L + 2.0 * L * i / (nx - 1);
                for (int j = 0; j < nx; ++j) {
                    double y = -L + 2.0 * L * j / (nx - 1);
                    if (k.dim() == 1) out.push_back({s, s + tau, {x, 0.0}, {y, 0.0}});
                    else out.push_back({s, s + tau, {x, x}, {y, y}});
                }
                // Same point plus the drift shift, where the lower bound is tightest.
                Point xp = k.dim() == 1 ? Point{x, 0.0} : Point{x, x};
                out.push_back({s, s + tau, xp, xp});
                out.push_back({s, s + tau, xp, k.mean(s, xp, s + tau)});
            }
        }
    }
    return out;
}

/// log-space slack of the two Gaussian inequalities at constant C; both must be <= 0.
inline std::pair<double, double> aronson_violation(const TransitionKernel& k, const AronsonProbe& p, double C) {
    double tau = p.t - p.s;
    double z = norm2(p.x - p.y);
    double lp = k.log_eval(p.s, p.x, p.t, p.y);
    double half_d = 0.5 * k.dim();
    double upper = std::log(C) - half_d * std::log(tau) - z / (C * tau);
    double lower = -std::log(C) - half_d * std::log(tau) - C * z / tau;
    return {lp - upper, lower - lp};
}

/// Smallest C on {1, 1.05, 1.05^2, ...} for which both Gaussian bounds hold at
/// every random probe and every lattice point; the box half-width is 5 kernel
/// scales at the horizon.
inline AronsonFit aronson_fit(const TransitionKernel& k, double T, std::size_t probes, std::uint64_t seed) {
    require(probes >= 1000, "aronson_fit needs at least 1000 probes");
    require(T > 0.0, "aronson_fit needs a positive horizon");
    const double L = 5.0 * k.scale(T);
    auto set = aronson_probes(k, T, probes, seed, L);
    auto lattice = aronson_lattice(k, T, L);
    set.insert(set.end(), lattice.begin(), lattice.end());
    const int max_index = static_cast<int>(std::ceil(std::log(kAronsonMax) / std::log(kAronsonLadder)));
    std::vector<int> need(set.size(), 0);
    parallel_for(set.size(), [&](std::size_t i) {
        int idx = 0;
        while (idx <= max_index) {
            auto [up, lo] = aronson_violation(k, set[i], std::pow(kAronsonLadder, idx));
            if (up <= 0.0 && lo <= 0.0) break;
            ++idx;
        }
        need[i] = idx;
    });
    int idx = *std::max_element(need.begin(), need.end());
    if (idx > max_index) throw FitFailed("no constant up to 1e6 bounds the kernel on the probe set");
    AronsonFit fit;
    fit.C_tilde = std::pow(kAronsonLadder, idx);
    fit.horizon = T;
    fit.probes = set.size();
    fit.box_half_width = L;
    fit.residual = -kInf;
    for (const auto& p : set) {
        auto [up, lo] = aronson_violation(k, p, fit.C_tilde);
        fit.residual = std::max({fit.residual, up, lo});
    }
    return fit;
}

/// Number of probes (fresh seed) at which either Gaussian bound fails for C.
inline std::size_t aronson_violations(const TransitionKernel& k, double C, double T, std::size_t probes,
                                      std::uint64_t seed, double L) {
    std::size_t bad = 0;
    for (const auto& p : aronson_probes(k, T, probes, seed, L)) {
        auto [up, lo] = aronson_violation(k, p, C);
        if (up > 0.0 || lo > 0.0) ++bad;
    }
    return bad;
}

/// Violations of C T^{-d/2} >= m(y) >= 2^{-d} C^{-2(d+2)} exp(-2C|y|^2/T) m(0) over `ys`.
inline std::size_t invariant_sandwich_violations(const TransitionKernel& k, double C, double T,
                                                 std::span<const Point> ys) {
    GaussianSpec m = k.invariant_law();
    const int d = k.dim();
    const double log_m0 = m.log_density({0.0, 0.0});
    const double log_upper = std::log(C) - 0.5 * d * std::log(T);
    std::size_t bad = 0;
    for (const auto& y : ys) {
        double lm = m.log_density(y);
        double log_lower = -d * std::log(2.0) - 2.0 * (d + 2) * std::log(C) - 2.0 * C * norm2(y) / T + log_m0;
        if (lm > log_upper || lm < log_lower) ++bad;
    }
    return bad;
}

}  // namespace kernels
}  // namespace sotlab
