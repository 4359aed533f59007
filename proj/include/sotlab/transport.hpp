#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "sotlab/core.hpp"
#include "sotlab/kernels.hpp"
#include "sotlab/measures.hpp"

namespace sotlab {

/// Joint measure on support(P) x support(Q), stored dense and row-major.
class Coupling {
public:
    Coupling() = default;
    Coupling(int dim, std::vector<Point> rows, std::vector<Point> cols)
        : dim_(dim), rows_(std::move(rows)), cols_(std::move(cols)), mass_(rows_.size() * cols_.size(), 0.0) {}
    Coupling(int dim, std::vector<Point> rows, std::vector<Point> cols, std::vector<double> mass)
        : dim_(dim), rows_(std::move(rows)), cols_(std::move(cols)), mass_(std::move(mass)) {
        if (mass_.size() != rows_.size() * cols_.size()) throw ShapeMismatch("coupling mass has wrong size");
    }

    int dim() const { return dim_; }
    std::size_t n_rows() const { return rows_.size(); }
    std::size_t n_cols() const { return cols_.size(); }
    const std::vector<Point>& row_support() const { return rows_; }
    const std::vector<Point>& col_support() const { return cols_; }
    const std::vector<double>& mass() const { return mass_; }
    std::vector<double>& mass() { return mass_; }
    double operator()(std::size_t i, std::size_t j) const { return mass_[i * cols_.size() + j]; }
    double& operator()(std::size_t i, std::size_t j) { return mass_[i * cols_.size() + j]; }

    std::vector<double> row_sums() const {
        std::vector<double> s(n_rows(), 0.0);
        for (std::size_t i = 0; i < n_rows(); ++i)
            for (std::size_t j = 0; j < n_cols(); ++j) s[i] += (*this)(i, j);
        return s;
    }

    std::vector<double> col_sums() const {
        std::vector<double> s(n_cols(), 0.0);
        for (std::size_t i = 0; i < n_rows(); ++i)
            for (std::size_t j = 0; j < n_cols(); ++j) s[j] += (*this)(i, j);
        return s;
    }

    double total() const { return std::accumulate(mass_.begin(), mass_.end(), 0.0); }

    /// max of the L1 errors of the two marginals against row/column targets.
    double marginal_residual(std::span<const double> row_target, std::span<const double> col_target) const {
        if (row_target.size() != n_rows() || col_target.size() != n_cols()) throw ShapeMismatch("marginal size");
        auto rs = row_sums();
        auto cs = col_sums();
        double er = 0.0, ec = 0.0;
        for (std::size_t i = 0; i < rs.size(); ++i) er += std::fabs(rs[i] - row_target[i]);
        for (std::size_t j = 0; j < cs.size(); ++j) ec += std::fabs(cs[j] - col_target[j]);
        return std::max(er, ec);
    }

    /// sum_ij mass_ij |x_i - y_j|^r
    double cost(double r) const {
        double s = 0.0;
        for (std::size_t i = 0; i < n_rows(); ++i)
            for (std::size_t j = 0; j < n_cols(); ++j) {
                double m = (*this)(i, j);
                if (m != 0.0) s += m * pow_abs(distance(rows_[i], cols_[j]), r);
            }
        return s;
    }

private:
    int dim_ = 1;
    std::vector<Point> rows_, cols_;
    std::vector<double> mass_;
};

enum class TransportMethod { ExactLp, Quantile1d, SinkhornAnneal };

inline std::string to_string(TransportMethod m) {
    switch (m) {
        case TransportMethod::ExactLp: return "exact_lp";
        case TransportMethod::Quantile1d: return "quantile_1d";
        case TransportMethod::SinkhornAnneal: return "sinkhorn_anneal";
    }
    return "unknown";
}

struct TransportResult {
    double value = 0.0;
    double r = 1.0;
    Coupling coupling;
    TransportMethod method = TransportMethod::ExactLp;
};

namespace mk {

inline constexpr std::size_t kMaxExactCells = 1'000'000;

namespace detail {

/// Transportation simplex on the bipartite polytope, started from the
/// northwest-corner basis. Pricing is Dantzig (most negative reduced cost,
/// lowest (i,j) on ties); after a run of degenerate pivots it falls back to
/// Bland's first-improving rule until the objective moves again.
class TransportSimplex {
public:
    TransportSimplex(std::span<const double> supply, std::span<const double> demand, std::vector<double> cost)
        : m_(supply.size()), n_(demand.size()), cost_(std::move(cost)), flow_(m_ * n_, 0.0), basic_(m_ * n_, 0) {
        northwest_corner(supply, demand);
    }

    void solve() {
        double scale = 0.0;
        for (double c : cost_) scale = std::max(scale, std::fabs(c));
        const double eps = 1e-12 * std::max(scale, 1.0);
        const std::size_t max_iter = 1000 + 20 * m_ * n_;
        std::size_t degenerate_run = 0;
        std::vector<double> u(m_), v(n_);
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            build_tree();
            potentials(u, v);
            const bool bland = degenerate_run > 50;
            std::size_t enter = npos;
            double best = -eps;
            for (std::size_t i = 0; i < m_ && !(bland && enter != npos); ++i)
                for (std::size_t j = 0; j < n_; ++j) {
                    std::size_t c = i * n_ + j;
                    if (basic_[c]) continue;
                    double d = cost_[c] - u[i] - v[j];
                    if (d < best) {
                        best = bland ? -eps : d;
                        enter = c;
                        if (bland) break;
                    }
                }
            if (enter == npos) return;
            double theta = pivot(enter);
            degenerate_run = theta == 0.0 ? degenerate_run + 1 : 0;
        }
        throw NumericalFailure("transportation simplex hit its iteration cap");
    }

    const std::vector<double>& flow() const { return flow_; }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    void northwest_corner(std::span<const double> supply, std::span<const double> demand) {
        std::vector<double> a(supply.begin(), supply.end()), b(demand.begin(), demand.end());
        std::size_t i = 0, j = 0;
        while (true) {
            double x = std::min(a[i], b[j]);
            std::size_t c = i * n_ + j;
            flow_[c] = x;
            basic_[c] = 1;
            cells_.push_back(c);
            a[i] -= x;
            b[j] -= x;
            if (i == m_ - 1 && j == n_ - 1) break;
            if (i == m_ - 1) ++j;
            else if (j == n_ - 1) ++i;
            else if (a[i] < b[j]) ++i;
            else if (b[j] < a[i]) ++j;
            else ++i;
        }
    }

    // Tree nodes: rows 0..m-1, columns m..m+n-1; edges are basic cells.
    void build_tree() {
        adj_.assign(m_ + n_, {});
        for (std::size_t c : cells_) {
            std::size_t i = c / n_, j = c % n_;
            adj_[i].push_back(c);
            adj_[m_ + j].push_back(c);
        }
    }

    std::size_t other_end(std::size_t node, std::size_t c) const {
        return node < m_ ? m_ + c % n_ : c / n_;
    }

    void potentials(std::vector<double>& u, std::vector<double>& v) const {
        std::vector<char> seen(m_ + n_, 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        u[0] = 0.0;
        while (!stack.empty()) {
            std::size_t node = stack.back();
            stack.pop_back();
            for (std::size_t c : adj_[node]) {
                std::size_t nb = other_end(node, c);
                if (seen[nb]) continue;
                seen[nb] = 1;
                if (nb >= m_) v[nb - m_] = cost_[c] - u[node];
                else u[nb] = cost_[c] - v[node - m_];
                stack.push_back(nb);
            }
        }
    }

    double pivot(std::size_t enter) {
        const std::size_t p = enter / n_, q = enter % n_;
        // Tree path from column q back to row p.
        std::vector<std::size_t> parent_edge(m_ + n_, npos);
        std::vector<char> seen(m_ + n_, 0);
        std::vector<std::size_t> stack{p};
        seen[p] = 1;
        while (!stack.empty()) {
            std::size_t node = stack.back();
            stack.pop_back();
            for (std::size_t c : adj_[node]) {
                std::size_t nb = other_end(node, c);
                if (seen[nb]) continue;
                seen[nb] = 1;
                parent_edge[nb] = c;
                stack.push_back(nb);
            }
        }
        std::vector<std::size_t> minus, plus;
        std::size_t node = m_ + q;
        bool sign_minus = true;
        while (node != p) {
            std::size_t c = parent_edge[node];
            (sign_minus ? minus : plus).push_back(c);
            sign_minus = !sign_minus;
            node = other_end(node, c);
        }
        std::size_t leave = npos;
        double theta = kInf;
        for (std::size_t c : minus) {
            if (flow_[c] < theta || (flow_[c] == theta && c < leave)) {
                theta = flow_[c];
                leave = c;
            }
        }
        for (std::size_t c : minus) flow_[c] = c == leave ? 0.0 : flow_[c] - theta;
        for (std::size_t c : plus) flow_[c] += theta;
        flow_[enter] = theta;
        basic_[leave] = 0;
        basic_[enter] = 1;
        std::replace(cells_.begin(), cells_.end(), leave, enter);
        return theta;
    }

    std::size_t m_, n_;
    std::vector<double> cost_;
    std::vector<double> flow_;
    std::vector<char> basic_;
    std::vector<std::size_t> cells_;
    std::vector<std::vector<std::size_t>> adj_;
};

}  // namespace detail

/// Exact T_r between finite supports by the transportation simplex.
inline TransportResult solve_exact(const DiscreteMeasure& P, const DiscreteMeasure& Q, double r) {
    require(r >= 1.0, "solve_exact needs r >= 1 (the cost is concave below 1)");
    if (P.dim() != Q.dim()) throw DimensionError("P and Q have different dimensions");
    if (P.size() * Q.size() > kMaxExactCells) throw SizeExceeded("support product exceeds 1e6 cells");
    const std::size_t m = P.size(), n = Q.size();
    Coupling coupling(P.dim(), P.points(), Q.points());
    if (m == 1 || n == 1) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) coupling(i, j) = P.weights()[i] * Q.weights()[j];
    } else {
        std::vector<double> cost(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = pow_abs(distance(P.points()[i], Q.points()[j]), r);
        detail::TransportSimplex lp(P.weights(), Q.weights(), std::move(cost));
        lp.solve();
        coupling.mass() = lp.flow();
    }
    TransportResult res;
    res.r = r;
    res.value = coupling.cost(r);
    res.coupling = std::move(coupling);
    res.method = TransportMethod::ExactLp;
    return res;
}

/// 1-D law with a quantile function: step CDF for atoms, piecewise-linear CDF
/// (uniform within cells) for grids.
class Quantile1d {
public:
    explicit Quantile1d(const DiscreteMeasure& m) : grid_(false) {
        if (m.dim() != 1) throw DimensionError("quantile coupling is one-dimensional");
        build(m.points(), m.weights());
    }

    explicit Quantile1d(const GridMeasure& m) : grid_(true), h_(m.grid().spacing) {
        if (m.dim() != 1) throw DimensionError("quantile coupling is one-dimensional");
        build(m.grid().centers(), m.masses());
    }

    bool is_grid() const { return grid_; }

    double operator()(double u) const {
        auto it = std::lower_bound(cum_.begin() + 1, cum_.end(), u);
        std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - cum_.begin()) - 1, x_.size() - 1);
        if (!grid_) return x_[k];
        double frac = (u - cum_[k]) / w_[k];
        return x_[k] - 0.5 * h_ + h_ * std::clamp(frac, 0.0, 1.0);
    }

    /// Sorted atoms (cell centers for grids), their masses and original indices.
    const std::vector<double>& atoms() const { return x_; }
    const std::vector<double>& weights() const { return w_; }
    const std::vector<std::size_t>& order() const { return idx_; }

private:
    void build(const std::vector<Point>& pts, const std::vector<double>& w) {
        std::vector<std::size_t> id(pts.size());
        std::iota(id.begin(), id.end(), 0);
        std::stable_sort(id.begin(), id.end(), [&](std::size_t a, std::size_t b) { return pts[a][0] < pts[b][0]; });
        cum_.push_back(0.0);
        for (std::size_t k : id) {
            if (w[k] <= 0.0) continue;
            x_.push_back(pts[k][0]);
            w_.push_back(w[k]);
            idx_.push_back(k);
            cum_.push_back(cum_.back() + w[k]);
        }
        // Guard the top of the CDF against rounding.
        cum_.back() = std::max(cum_.back(), 1.0);
    }

    bool grid_;
    double h_ = 0.0;
    std::vector<double> x_, w_, cum_;
    std::vector<std::size_t> idx_;
};

using Measure1d = std::variant<DiscreteMeasure, GridMeasure>;

/// Monotone (quantile) coupling and the value int_0^1 |F_P^{-1} - F_Q^{-1}|^r du.
/// Atoms on both sides: exact merge of the step CDFs. A grid on either side:
/// 10^4-point midpoint rule in u over the piecewise-linear quantiles, with the
/// coupling reported on cell centers.
inline TransportResult solve_quantile_1d(const Measure1d& P, const Measure1d& Q, double r) {
    require(r >= 1.0, "quantile coupling is optimal only for r >= 1");
    auto support = [](const Measure1d& m) {
        return std::visit([](const auto& x) {
            if constexpr (std::is_same_v<std::decay_t<decltype(x)>, GridMeasure>) return x.grid().centers();
            else return x.points();
        }, m);
    };
    auto dim = [](const Measure1d& m) { return std::visit([](const auto& x) { return x.dim(); }, m); };
    if (dim(P) != 1 || dim(Q) != 1) throw DimensionError("solve_quantile_1d needs d = 1");
    Quantile1d qp = std::visit([](const auto& x) { return Quantile1d(x); }, P);
    Quantile1d qq = std::visit([](const auto& x) { return Quantile1d(x); }, Q);

    Coupling coupling(1, support(P), support(Q));
    double exact_value = 0.0;
    {
        std::size_t a = 0, b = 0;
        double ra = qp.weights()[0], rb = qq.weights()[0];
        while (a < qp.atoms().size() && b < qq.atoms().size()) {
            double m = std::min(ra, rb);
            coupling(qp.order()[a], qq.order()[b]) += m;
            exact_value += m * pow_abs(qp.atoms()[a] - qq.atoms()[b], r);
            ra -= m;
            rb -= m;
            if (ra <= 1e-15 * rb || ra <= 0.0) {
                if (++a < qp.atoms().size()) ra = qp.weights()[a];
            }
            if (rb <= 0.0 || (a < qp.atoms().size() && rb <= 1e-15 * ra)) {
                if (++b < qq.atoms().size()) rb = qq.weights()[b];
            }
        }
    }
    TransportResult res;
    res.r = r;
    res.method = TransportMethod::Quantile1d;
    if (!qp.is_grid() && !qq.is_grid()) {
        res.value = exact_value;
    } else {
        constexpr int kNodes = 10000;
        double s = 0.0;
        for (int k = 0; k < kNodes; ++k) {
            double u = (k + 0.5) / kNodes;
            s += pow_abs(qp(u) - qq(u), r);
        }
        res.value = s / kNodes;
    }
    res.coupling = std::move(coupling);
    return res;
}

/// Grid resolution for smoothed marginals.
struct SmoothingGrid {
    double half_width_sd = 8.0;
    double cells_per_sd = 20.0;
    std::size_t min_cells = 201;
    std::size_t max_cells_1d = 20001;
    std::size_t max_cells_2d = 301;
};

/// Law of X^0(t) = X(t) with zero control, started from P: the density
/// y -> int p(0,x;t,y) P(dx) tabulated on a grid covering the support +- 8 sd.
inline GridMeasure heat_smoothed_marginal(const DiscreteMeasure& P, const TransitionKernel& k, double t,
                                          const SmoothingGrid& opt = {}) {
    require(t > 0.0, "smoothing time must be positive");
    if (P.dim() != k.dim()) throw DimensionError("measure and kernel dimensions differ");
    const int d = k.dim();
    Mat2 cov = k.covariance(0.0, t);
    double sd_min = std::sqrt(min_eigenvalue(cov, d));
    double sd_max = std::sqrt(max_eigenvalue(cov, d));
    Point lo{kInf, kInf}, hi{-kInf, -kInf};
    for (const auto& x : P.points()) {
        Point m = k.mean(0.0, x, t);
        for (int a = 0; a < d; ++a) {
            lo[a] = std::min(lo[a], m[a] - opt.half_width_sd * sd_max);
            hi[a] = std::max(hi[a], m[a] + opt.half_width_sd * sd_max);
        }
    }
    double h = sd_min / opt.cells_per_sd;
    GridSpec grid;
    if (d == 1) {
        auto cells = static_cast<std::size_t>(std::ceil((hi[0] - lo[0]) / h));
        cells = std::clamp(cells, opt.min_cells, opt.max_cells_1d);
        grid = GridSpec::line(lo[0], hi[0], cells);
    } else {
        double span = std::max(hi[0] - lo[0], hi[1] - lo[1]);
        auto cells = static_cast<std::size_t>(std::ceil(span / h));
        cells = std::clamp<std::size_t>(cells, std::min<std::size_t>(opt.min_cells, opt.max_cells_2d), opt.max_cells_2d);
        grid = GridSpec::square(lo, span / static_cast<double>(cells), {cells, cells});
    }
    std::vector<double> dens(grid.size(), 0.0);
    for (std::size_t c = 0; c < dens.size(); ++c) {
        Point y = grid.center(c);
        double s = 0.0;
        for (std::size_t i = 0; i < P.size(); ++i) s += P.weights()[i] * k.eval(0.0, P.points()[i], t, y);
        dens[c] = s;
    }
    return GridMeasure(grid, std::move(dens));
}

inline GridMeasure heat_smoothed_marginal(const GridMeasure& P, const TransitionKernel& k, double t,
                                          const GridSpec& target) {
    require(t > 0.0, "smoothing time must be positive");
    if (P.dim() != k.dim() || target.dim != k.dim()) throw DimensionError("measure and kernel dimensions differ");
    std::vector<double> dens(target.size(), 0.0);
    auto masses = P.masses();
    for (std::size_t c = 0; c < dens.size(); ++c) {
        Point y = target.center(c);
        double s = 0.0;
        for (std::size_t i = 0; i < P.size(); ++i)
            if (masses[i] > 0.0) s += masses[i] * k.eval(0.0, P.grid().center(i), t, y);
        dens[c] = s;
    }
    return GridMeasure(target, std::move(dens));
}

/// Gaussian start: the smoothed law is Gaussian in closed form.
inline GaussianSpec smoothed_gaussian(const GaussianSpec& P, const TransitionKernel& k, double t) {
    double contraction = k.kind() == TransitionKernel::Kind::Heat ? 1.0 : std::exp(-k.theta() * t);
    Mat2 cov = (contraction * contraction) * P.cov + k.covariance(0.0, t);
    return GaussianSpec(P.dim, contraction * P.mean, cov);
}

inline GridMeasure heat_smoothed_marginal(const GaussianSpec& P, const TransitionKernel& k, double t,
                                          const SmoothingGrid& opt = {}) {
    require(t > 0.0, "smoothing time must be positive");
    GaussianSpec g = smoothed_gaussian(P, k, t);
    double sd = std::sqrt(min_eigenvalue(g.cov, g.dim));
    double width = 2.0 * opt.half_width_sd * std::sqrt(max_eigenvalue(g.cov, g.dim));
    auto cells = static_cast<std::size_t>(std::ceil(width / (sd / opt.cells_per_sd)));
    cells = std::clamp(cells, opt.min_cells, g.dim == 1 ? opt.max_cells_1d : opt.max_cells_2d);
    return measures::discretize_gaussian(g, measures::default_grid(g, cells, opt.half_width_sd));
}

}  // namespace mk
}  // namespace sotlab
