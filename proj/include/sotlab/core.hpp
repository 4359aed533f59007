#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sotlab {

// Points live in R^d with d in {1, 2}. Unused trailing coordinates stay zero,
// so Euclidean norms are correct without knowing d.
using Point = std::array<double, 2>;

inline constexpr int kMaxDim = 2;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// 2x2 matrix, row-major. A 1-D quantity uses only m[0][0].
struct Mat2 {
    std::array<std::array<double, 2>, 2> m{{{0.0, 0.0}, {0.0, 0.0}}};

    static Mat2 identity(int d, double scale = 1.0) {
        Mat2 a;
        a.m[0][0] = scale;
        if (d == 2) a.m[1][1] = scale;
        return a;
    }
    double operator()(int i, int j) const { return m[i][j]; }
    double& operator()(int i, int j) { return m[i][j]; }
};

inline Mat2 operator+(const Mat2& a, const Mat2& b) {
    Mat2 c;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) c.m[i][j] = a.m[i][j] + b.m[i][j];
    return c;
}

inline Mat2 operator*(double s, const Mat2& a) {
    Mat2 c;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) c.m[i][j] = s * a.m[i][j];
    return c;
}

inline Mat2 multiply(const Mat2& a, const Mat2& b) {
    Mat2 c;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) c.m[i][j] = a.m[i][0] * b.m[0][j] + a.m[i][1] * b.m[1][j];
    return c;
}

inline Mat2 transpose(const Mat2& a) {
    Mat2 c;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) c.m[i][j] = a.m[j][i];
    return c;
}

/// a = sigma sigma^T
inline Mat2 outer_square(const Mat2& sigma) { return multiply(sigma, transpose(sigma)); }

/// Frobenius norm, the matrix norm used for ||sigma||.
inline double frobenius(const Mat2& a) {
    double s = 0.0;
    for (const auto& row : a.m)
        for (double v : row) s += v * v;
    return std::sqrt(s);
}

inline double trace(const Mat2& a, int d) { return d == 1 ? a.m[0][0] : a.m[0][0] + a.m[1][1]; }

inline double determinant(const Mat2& a, int d) {
    return d == 1 ? a.m[0][0] : a.m[0][0] * a.m[1][1] - a.m[0][1] * a.m[1][0];
}

inline Mat2 inverse(const Mat2& a, int d) {
    Mat2 c;
    double det = determinant(a, d);
    if (d == 1) {
        c.m[0][0] = 1.0 / a.m[0][0];
        return c;
    }
    c.m[0][0] = a.m[1][1] / det;
    c.m[1][1] = a.m[0][0] / det;
    c.m[0][1] = -a.m[0][1] / det;
    c.m[1][0] = -a.m[1][0] / det;
    return c;
}

/// Lower-triangular L with L L^T = a. Requires a symmetric positive semidefinite.
inline Mat2 cholesky(const Mat2& a, int d) {
    Mat2 l;
    l.m[0][0] = std::sqrt(std::max(a.m[0][0], 0.0));
    if (d == 2) {
        l.m[1][0] = l.m[0][0] > 0.0 ? a.m[1][0] / l.m[0][0] : 0.0;
        l.m[1][1] = std::sqrt(std::max(a.m[1][1] - l.m[1][0] * l.m[1][0], 0.0));
    }
    return l;
}

/// Largest eigenvalue of a symmetric matrix.
inline double max_eigenvalue(const Mat2& a, int d) {
    if (d == 1) return a.m[0][0];
    double tr = a.m[0][0] + a.m[1][1];
    double det = determinant(a, 2);
    return 0.5 * tr + std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
}

inline double min_eigenvalue(const Mat2& a, int d) {
    if (d == 1) return a.m[0][0];
    double tr = a.m[0][0] + a.m[1][1];
    double det = determinant(a, 2);
    return 0.5 * tr - std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
}

inline Point matvec(const Mat2& a, const Point& x) {
    return {a.m[0][0] * x[0] + a.m[0][1] * x[1], a.m[1][0] * x[0] + a.m[1][1] * x[1]};
}

inline Point operator+(const Point& a, const Point& b) { return {a[0] + b[0], a[1] + b[1]}; }
inline Point operator-(const Point& a, const Point& b) { return {a[0] - b[0], a[1] - b[1]}; }
inline Point operator*(double s, const Point& a) { return {s * a[0], s * a[1]}; }

inline double norm2(const Point& x) { return x[0] * x[0] + x[1] * x[1]; }
inline double norm(const Point& x) { return std::sqrt(norm2(x)); }
inline double distance(const Point& a, const Point& b) { return norm(a - b); }

/// |z|^r through exp(r log|z|), with an exact zero at z = 0.
inline double pow_abs(double z, double r) {
    z = std::fabs(z);
    if (z == 0.0) return r == 0.0 ? 1.0 : 0.0;
    return std::exp(r * std::log(z));
}

/// Quadratic form x^T a^{-1} x for a symmetric positive-definite a.
inline double inverse_quadratic_form(const Mat2& a, const Point& x, int d) {
    if (d == 1) return x[0] * x[0] / a.m[0][0];
    Mat2 inv = inverse(a, 2);
    return x[0] * (inv.m[0][0] * x[0] + inv.m[0][1] * x[1]) + x[1] * (inv.m[1][0] * x[0] + inv.m[1][1] * x[1]);
}

/// log of the N(mean, cov) density at x.
inline double gaussian_log_density(const Point& x, const Point& mean, const Mat2& cov, int d) {
    double q = inverse_quadratic_form(cov, x - mean, d);
    return -0.5 * q - 0.5 * d * std::log(2.0 * kPi) - 0.5 * std::log(determinant(cov, d));
}

inline double log_sum_exp(std::span<const double> v) {
    double mx = -kInf;
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// E|G|^r for G ~ N(0,1).
inline double gaussian_abs_moment(double r) {
    return std::pow(2.0, 0.5 * r) * std::tgamma(0.5 * (r + 1.0)) / std::sqrt(kPi);
}

/// E|G|^r for G ~ N(0, I_d).
inline double gaussian_norm_moment(double r, int d) {
    return std::exp(0.5 * r * std::log(2.0) + std::lgamma(0.5 * (d + r)) - std::lgamma(0.5 * d));
}

// ---------------------------------------------------------------------------
// Errors. Every failure mode named by a module contract is its own type so
// callers can branch on it; all derive from sotlab::Error.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define SOTLAB_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                     \
    public:                                                         \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

SOTLAB_DEFINE_ERROR(InvalidArgument);
SOTLAB_DEFINE_ERROR(GridTooNarrow);
SOTLAB_DEFINE_ERROR(EmptyInput);
SOTLAB_DEFINE_ERROR(SizeExceeded);
SOTLAB_DEFINE_ERROR(DimensionError);
SOTLAB_DEFINE_ERROR(TimeOrder);
SOTLAB_DEFINE_ERROR(NoInvariant);
SOTLAB_DEFINE_ERROR(FitFailed);
SOTLAB_DEFINE_ERROR(ShapeMismatch);
SOTLAB_DEFINE_ERROR(EntropyInfinite);
SOTLAB_DEFINE_ERROR(GridNotRefined);
SOTLAB_DEFINE_ERROR(FitUnstable);
SOTLAB_DEFINE_ERROR(NotConverged);
SOTLAB_DEFINE_ERROR(ConfigInvalid);
SOTLAB_DEFINE_ERROR(NumericalFailure);

#undef SOTLAB_DEFINE_ERROR

inline void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument(what);
}

}  // namespace sotlab
