#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "sotlab/core.hpp"
#include "sotlab/random.hpp"

namespace sotlab {

inline void check_dim(int d) {
    if (d != 1 && d != 2) throw DimensionError("dimension must be 1 or 2, got " + std::to_string(d));
}

/// Weighted point cloud. Weights sum to one, are strictly positive, and points
/// are pairwise distinct (exact bit equality).
class DiscreteMeasure {
public:
    DiscreteMeasure() = default;

    /// Normalizes weights, drops zero-weight atoms and merges duplicates.
    DiscreteMeasure(int dim, std::vector<Point> points, std::vector<double> weights) : dim_(dim) {
        check_dim(dim);
        if (points.empty()) throw EmptyInput("discrete measure needs at least one atom");
        if (points.size() != weights.size()) throw ShapeMismatch("points and weights differ in length");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("weights must be finite and nonnegative");
            total += w;
        }
        if (!(total > 0.0)) throw InvalidArgument("weights sum to zero");
        std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> index;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (weights[i] == 0.0) continue;
            Point p = points[i];
            if (dim == 1) p[1] = 0.0;
            auto key = std::make_pair(std::bit_cast<std::uint64_t>(p[0]), std::bit_cast<std::uint64_t>(p[1]));
            auto [it, fresh] = index.try_emplace(key, points_.size());
            if (fresh) {
                points_.push_back(p);
                weights_.push_back(weights[i] / total);
            } else {
                weights_[it->second] += weights[i] / total;
            }
        }
    }

    static DiscreteMeasure dirac(const Point& x, int dim = 1) { return DiscreteMeasure(dim, {x}, {1.0}); }

    int dim() const { return dim_; }
    std::size_t size() const { return points_.size(); }
    const std::vector<Point>& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    int dim_ = 1;
    std::vector<Point> points_;
    std::vector<double> weights_;
};

/// Axis-aligned regular grid with common spacing. Cell (i, j) has center
/// origin + (i + 1/2, j + 1/2) h; storage is row-major with x fastest.
struct GridSpec {
    int dim = 1;
    Point origin{0.0, 0.0};
    double spacing = 1.0;
    std::array<std::size_t, 2> counts{1, 1};

    static GridSpec line(double lo, double hi, std::size_t cells) {
        if (!(hi > lo) || cells == 0) throw InvalidArgument("grid needs hi > lo and at least one cell");
        return GridSpec{1, {lo, 0.0}, (hi - lo) / static_cast<double>(cells), {cells, 1}};
    }

    /// Square-cell 2-D grid starting at `lo` with `cells` cells per axis.
    static GridSpec square(const Point& lo, double spacing, std::array<std::size_t, 2> cells) {
        if (!(spacing > 0.0) || cells[0] == 0 || cells[1] == 0) throw InvalidArgument("bad 2-D grid");
        return GridSpec{2, lo, spacing, cells};
    }

    std::size_t size() const { return dim == 1 ? counts[0] : counts[0] * counts[1]; }
    double cell_volume() const { return dim == 1 ? spacing : spacing * spacing; }
    double lower(int axis) const { return origin[axis]; }
    double upper(int axis) const { return origin[axis] + spacing * static_cast<double>(counts[axis]); }

    Point center(std::size_t k) const {
        std::size_t i = dim == 1 ? k : k % counts[0];
        std::size_t j = dim == 1 ? 0 : k / counts[0];
        Point c{origin[0] + (static_cast<double>(i) + 0.5) * spacing, 0.0};
        if (dim == 2) c[1] = origin[1] + (static_cast<double>(j) + 0.5) * spacing;
        return c;
    }

    std::vector<Point> centers() const {
        std::vector<Point> out(size());
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = center(k);
        return out;
    }

    bool same_layout(const GridSpec& o) const {
        return dim == o.dim && origin == o.origin && spacing == o.spacing && counts == o.counts;
    }
};

/// Piecewise-constant density on a GridSpec; sum(density) h^d = 1.
class GridMeasure {
public:
    GridMeasure() = default;

    GridMeasure(GridSpec grid, std::vector<double> density, bool normalize = true)
        : grid_(grid), density_(std::move(density)) {
        check_dim(grid_.dim);
        if (density_.size() != grid_.size()) throw ShapeMismatch("density length does not match grid");
        double mass = 0.0;
        for (double v : density_) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("density must be finite and nonnegative");
            mass += v;
        }
        mass *= grid_.cell_volume();
        if (!(mass > 0.0)) throw InvalidArgument("grid measure has zero mass");
        if (normalize) {
            for (double& v : density_) v /= mass;
        } else if (std::fabs(mass - 1.0) > 1e-10) {
            throw InvalidArgument("grid density does not integrate to one");
        }
    }

    int dim() const { return grid_.dim; }
    std::size_t size() const { return density_.size(); }
    const GridSpec& grid() const { return grid_; }
    const std::vector<double>& density() const { return density_; }
    double mass(std::size_t k) const { return density_[k] * grid_.cell_volume(); }

    std::vector<double> masses() const {
        std::vector<double> m(density_.size());
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = mass(k);
        return m;
    }

    /// The cell masses as atoms at cell centers.
    DiscreteMeasure as_discrete() const { return DiscreteMeasure(dim(), grid_.centers(), masses()); }

private:
    GridSpec grid_;
    std::vector<double> density_;
};

struct GaussianSpec {
    int dim = 1;
    Point mean{0.0, 0.0};
    Mat2 cov = Mat2::identity(1);

    GaussianSpec() = default;
    GaussianSpec(int d, Point m, Mat2 c) : dim(d), mean(m), cov(c) {
        check_dim(d);
        if (d == 1) {
            mean[1] = 0.0;
            cov.m[0][1] = cov.m[1][0] = cov.m[1][1] = 0.0;
        }
        if (d == 2 && std::fabs(cov.m[0][1] - cov.m[1][0]) > 1e-12)
            throw InvalidArgument("covariance must be symmetric");
        if (!(min_eigenvalue(cov, d) > 0.0)) throw InvalidArgument("covariance must be positive definite");
    }

    static GaussianSpec normal1d(double mean, double variance) {
        Mat2 c;
        c.m[0][0] = variance;
        return GaussianSpec(1, {mean, 0.0}, c);
    }

    double sd(int axis) const { return std::sqrt(cov.m[axis][axis]); }
    double log_density(const Point& x) const { return gaussian_log_density(x, mean, cov, dim); }
};

using AnyMeasure = std::variant<DiscreteMeasure, GridMeasure, GaussianSpec>;

inline int dim_of(const AnyMeasure& m) {
    return std::visit([](const auto& x) -> int {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, GaussianSpec>) return x.dim;
        else return x.dim();
    }, m);
}

namespace measures {

/// Integral of |x|^r: exact weighted sum for atoms, midpoint rule on grids.
inline double moment_r(const DiscreteMeasure& m, double r) {
    require(r >= 0.0, "moment order must be nonnegative");
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m.weights()[i] * pow_abs(norm(m.points()[i]), r);
    return s;
}

inline double moment_r(const GridMeasure& m, double r) {
    require(r >= 0.0, "moment order must be nonnegative");
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) s += m.mass(k) * pow_abs(norm(m.grid().center(k)), r);
    return s;
}

/// Grid density proportional to the Gaussian density at cell centers.
/// Throws GridTooNarrow unless mean +- 6 sd lies inside the grid on every axis.
inline GridMeasure discretize_gaussian(const GaussianSpec& g, const GridSpec& grid) {
    if (g.dim != grid.dim) throw DimensionError("gaussian and grid dimensions differ");
    for (int a = 0; a < g.dim; ++a) {
        double lo = g.mean[a] - 6.0 * g.sd(a);
        double hi = g.mean[a] + 6.0 * g.sd(a);
        if (grid.lower(a) > lo || grid.upper(a) < hi)
            throw GridTooNarrow("grid must cover mean +- 6 sd on axis " + std::to_string(a));
    }
    std::vector<double> dens(grid.size());
    for (std::size_t k = 0; k < dens.size(); ++k) dens[k] = std::exp(g.log_density(grid.center(k)));
    return GridMeasure(grid, std::move(dens));
}

/// Default grid for a Gaussian: mean +- `half_width` sd, `cells` per axis.
inline GridSpec default_grid(const GaussianSpec& g, std::size_t cells = 401, double half_width = 8.0) {
    if (g.dim == 1) return GridSpec::line(g.mean[0] - half_width * g.sd(0), g.mean[0] + half_width * g.sd(0), cells);
    double s = std::max(g.sd(0), g.sd(1));
    double h = 2.0 * half_width * s / static_cast<double>(cells);
    return GridSpec::square({g.mean[0] - half_width * s, g.mean[1] - half_width * s}, h, {cells, cells});
}

/// Uniform weights over the points with exact duplicates merged.
inline DiscreteMeasure empirical(std::span<const Point> points, int dim = 1) {
    if (points.empty()) throw EmptyInput("empirical measure of no points");
    std::vector<double> w(points.size(), 1.0 / static_cast<double>(points.size()));
    return DiscreteMeasure(dim, std::vector<Point>(points.begin(), points.end()), std::move(w));
}

}  // namespace measures

/// Draws i.i.d. points from any measure using a caller-owned stream.
class Sampler {
public:
    explicit Sampler(const DiscreteMeasure& m) : dim_(m.dim()), kind_(Kind::Atoms), atoms_(m.points()), table_(m.weights()) {}

    explicit Sampler(const GridMeasure& m)
        : dim_(m.dim()), kind_(Kind::Cells), grid_(m.grid()), table_(m.density()) {}

    explicit Sampler(const GaussianSpec& g)
        : dim_(g.dim), kind_(Kind::Gaussian), mean_(g.mean), chol_(cholesky(g.cov, g.dim)) {}

    explicit Sampler(const AnyMeasure& m)
        : Sampler(std::visit([](const auto& x) { return Sampler(x); }, m)) {}

    int dim() const { return dim_; }

    Point operator()(Rng& rng) const {
        switch (kind_) {
            case Kind::Atoms:
                return atoms_[table_(rng)];
            case Kind::Cells: {
                Point c = grid_.center(table_(rng));
                for (int a = 0; a < dim_; ++a) c[a] += (uniform01(rng) - 0.5) * grid_.spacing;
                return c;
            }
            case Kind::Gaussian: {
                std::normal_distribution<double> n01;
                Point z{n01(rng), 0.0};
                if (dim_ == 2) z[1] = n01(rng);
                return mean_ + matvec(chol_, z);
            }
        }
        return {};
    }

private:
    enum class Kind { Atoms, Cells, Gaussian };
    int dim_;
    Kind kind_;
    std::vector<Point> atoms_;
    GridSpec grid_;
    AliasTable table_;
    Point mean_{};
    Mat2 chol_{};
};

namespace measures {

/// n i.i.d. draws, deterministic in `seed`.
template <class M>
std::vector<Point> sample(const M& m, std::size_t n, std::uint64_t seed) {
    require(n >= 1, "sample size must be positive");
    Sampler s(m);
    Rng rng = substream(seed, 0);
    std::vector<Point> out(n);
    for (auto& p : out) p = s(rng);
    return out;
}

}  // namespace measures
}  // namespace sotlab
