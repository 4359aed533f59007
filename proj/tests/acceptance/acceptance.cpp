#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <sys/wait.h>

#include "../common/entropic_oracle.hpp"
#include "CLI11.hpp"
#include "sotlab/cli.hpp"
#include "sotlab/sotlab.hpp"

using namespace sotlab;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kSe = 3.0;
constexpr double kKsAlpha = 0.01;
constexpr double kSlopeTol = 0.1;
constexpr double kCoefSlack = 1.1;
constexpr double kSinkhornOracleTol = 1e-5;
constexpr double kResidualTol = 1e-9;
constexpr double kReferenceZeroTol = 1e-6;
constexpr double kLongtimeGap = 0.05;
constexpr double kTvRatio = 10.0;
constexpr double kEnvelopeRatio = 0.1;
constexpr double kDelaySe = 2.0;

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        detail << (ok ? "" : "!") << what << "; ";
    }
};

std::string f(double v, int prec = 4) {
    std::ostringstream o;
    o << std::setprecision(prec) << v;
    return o.str();
}

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

AnyMeasure normal(double m, double v) { return GaussianSpec::normal1d(m, v); }

AnyMeasure atoms(std::vector<double> xs) {
    std::vector<Point> pts;
    for (double x : xs) pts.push_back({x, 0.0});
    return DiscreteMeasure(1, pts, std::vector<double>(xs.size(), 1.0 / xs.size()));
}

std::vector<double> coord(const std::vector<Point>& pts) {
    std::vector<double> out;
    for (const auto& p : pts) out.push_back(p[0]);
    return out;
}

const std::vector<double> kSuiteR{1.0, 1.25, 1.5, 1.75};
const std::vector<double> kSuiteT{0.05, 0.1, 0.2, 0.5, 1.0};

std::vector<std::pair<std::string, std::pair<AnyMeasure, AnyMeasure>>> suite_pairs() {
    return {{"gauss", {normal(0.0, 1.0), normal(1.0, 1.0)}}, {"atoms", {atoms({0.0, 2.0}), atoms({1.0, 3.0})}}};
}

Verdict c1() {
    Verdict v;
    auto t0 = std::chrono::steady_clock::now();
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}), 1.0, TimeGrid::geometric_tail(1.0), 100000, 101);
    bool pinned = true;
    for (std::size_t p = 0; p < e.n_paths; ++p) pinned = pinned && e.state(p, e.N())[0] == 0.0;
    v.require(pinned, "X(1) = Z on every path");
    auto half = coord(e.marginal(e.knot_index(0.5)));
    auto var = stats::variance_about(half, 0.0);
    v.require(std::fabs(var.mean - 0.25) <= kSe * var.se, "Var X(1/2) = " + f(var.mean, 5) + " +- " + f(var.se, 2));
    for (double t : {0.25, 0.5, 0.75}) {
        std::size_t k = e.knot_index(t);
        double sd = std::sqrt(e.grid.knots[k] * (1.0 - e.grid.knots[k]));
        auto ks = stats::ks_test(coord(e.marginal(k)), [sd](double x) { return stats::normal_cdf(x / sd); });
        v.require(ks.p_value >= kKsAlpha, "KS p(" + f(t) + ") = " + f(ks.p_value, 3));
    }
    double s = since(t0);
    v.require(s <= 30.0, f(s, 3) + " s <= 30 s");
    return v;
}

Verdict c2() {
    Verdict v;
    auto t0 = std::chrono::steady_clock::now();
    auto e = sde::simulate_bridge(PairSampler::fixed({0.0, 0.0}, {0.0, 0.0}), 1.0, TimeGrid::geometric_tail(1.0), 100000, 202);
    auto c = sde::cost_r(e, 1.0);
    double est = c.mean + c.truncation_bias, exact = std::sqrt(kPi / 2.0);
    v.require(std::fabs(est - exact) <= kSe * c.stderr_,
              "cost " + f(est, 6) + " vs " + f(exact, 6) + " (se " + f(c.stderr_, 2) + ", dt_min " + f(e.grid.dt_min, 2) + ")");
    double s = since(t0);
    v.require(s <= 60.0, f(s, 3) + " s <= 60 s");
    return v;
}

Verdict c3() {
    Verdict v;
    auto t0 = std::chrono::steady_clock::now();
    for (const auto& [name, pq] : suite_pairs()) {
        bounds::SandwichSpec spec{pq.first, pq.second, 1.0, kSuiteR, kSuiteT, 20000, 303, true};
        std::size_t cells = 0, held = 0;
        for (const auto& c : bounds::sandwich(spec)) {
            ++cells;
            if (c.holds()) ++held;
        }
        v.require(held == cells, name + " " + std::to_string(held) + "/" + std::to_string(cells) + " cells");
    }
    double s = since(t0);
    v.require(s <= 300.0, f(s, 3) + " s <= 300 s");
    return v;
}

Verdict c4() {
    Verdict v;
    const std::vector<double> ts{0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
    for (const auto& [name, pq] : suite_pairs()) {
        for (double r : kSuiteR) {
            auto rep = bounds::shorttime_report(pq.first, pq.second, r, 1.0, ts, 20000, 404);
            bool slope = rep.fit && std::fabs(rep.fit->exponent - 0.5) <= kSlopeTol && rep.fit->r2 >= 0.95;
            v.require(slope, name + " r=" + f(r) + " exponent " + (rep.fit ? f(rep.fit->exponent, 3) : rep.fit_error));
            v.require(rep.coefficient <= kCoefSlack * rep.coefficient_bound,
                      name + " r=" + f(r) + " coefficient " + f(rep.coefficient, 3) + " <= 1.1*" + f(rep.coefficient_bound, 3));
        }
    }
    for (double r : kSuiteR) {
        auto rep = bounds::shorttime_report(normal(0.0, 1.0), normal(0.0, 1.0), r, 1.0, ts, 20000, 405);
        v.require(rep.diagonal <= kCoefSlack * rep.diagonal_bound,
                  "diagonal r=" + f(r) + " " + f(rep.diagonal, 3) + " <= 1.1*" + f(rep.diagonal_bound, 3));
    }
    // Informational: part of the mass stays put, where the sqrt(t) rate is attained.
    auto stay = bounds::shorttime_report(atoms({0.0, 1.0}), atoms({0.0, 2.0}), 1.0, 1.0, ts, 20000, 406);
    v.detail << "(partial-stay pair r=1 exponent " << (stay.fit ? f(stay.fit->exponent, 3) : stay.fit_error) << ")";
    return v;
}

Verdict c5() {
    Verdict v;
    const std::vector<double> eps{1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01};
    for (double r : {1.0, 1.5}) {
        auto diag = bounds::zero_noise_report(normal(0.0, 1.0), normal(0.0, 1.0), r, 1.0, 1.0, eps, 20000, 505, true);
        bool ok = diag.fit && std::fabs(diag.fit->exponent - 0.5 * r) <= kSlopeTol;
        v.require(ok, "P=Q r=" + f(r) + " exponent " + (diag.fit ? f(diag.fit->exponent, 3) : diag.fit_error));
        auto off = bounds::zero_noise_report(normal(0.0, 1.0), normal(1.0, 1.0), r, 1.0, 1.0, eps, 20000, 506, false);
        auto [a, se] = bounds::extrapolate_to_zero_noise(off.points);
        v.require(std::fabs(a - off.target) <= kSe * se,
                  "P!=Q r=" + f(r) + " extrapolated " + f(a, 5) + " vs " + f(off.target, 5) + " (se " + f(se, 2) + ")");
    }
    return v;
}

Verdict c6() {
    Verdict v;
    std::vector<double> ts;
    for (int i = 0; i <= 5; ++i) ts.push_back(10.0 * std::pow(10.0, i / 5.0));
    for (double r : {1.0, 1.5}) {
        auto rep = bounds::explosion_report(atoms({0.0}), atoms({1.0}), r, 1.0, ts, 50000, 606);
        double target = 1.0 - 0.5 * r;
        v.require(rep.upper_fit && std::fabs(rep.upper_fit->exponent - target) <= kSlopeTol,
                  "r=" + f(r) + " upper slope " + (rep.upper_fit ? f(rep.upper_fit->exponent, 3) : rep.fit_error));
        v.require(rep.lower_fit && std::fabs(rep.lower_fit->exponent - target) <= kSlopeTol,
                  "lower slope " + (rep.lower_fit ? f(rep.lower_fit->exponent, 3) : rep.fit_error));
    }
    return v;
}

Verdict c7() {
    Verdict v;
    const double r = 0.5;
    auto yz = PairSampler::fixed({0.0, 0.0}, {1.0, 0.0});
    std::vector<CostEstimate> costs;
    for (double d : {0.4, 0.2, 0.1, 0.05}) costs.push_back(sde::delayed_bridge_cost(yz, 1.0, 1.0, d, r, 20000, 707));
    bool decreasing = true;
    std::string trail;
    for (std::size_t i = 0; i < costs.size(); ++i) {
        trail += f(costs[i].mean, 4) + (i + 1 < costs.size() ? " > " : "");
        if (i == 0) continue;
        double se = std::hypot(costs[i].stderr_, costs[i - 1].stderr_);
        decreasing = decreasing && costs[i - 1].mean - costs[i].mean > kDelaySe * se;
    }
    v.require(decreasing, "delayed " + trail);
    auto base = sde::simulate_bridge(yz, 1.0, TimeGrid::geometric_tail(1.0), 20000, 708);
    double e2 = sde::compressed_control_cost(base, 2.0, r, 1.0, 0.0).envelope;
    double e64 = sde::compressed_control_cost(base, 64.0, r, 1.0, 0.0).envelope;
    v.require(e64 / e2 < kEnvelopeRatio, "envelope(64)/envelope(2) = " + f(e64 / e2, 4) + " < 0.1");
    return v;
}

Verdict c8() {
    Verdict v;
    auto k = TransitionKernel::heat(1, 1.0);
    GridSpec grid = GridSpec::line(-2.5, 2.5, 5);
    GridMeasure P(grid, {0.1, 0.3, 0.3, 0.2, 0.1});
    GridMeasure Q(grid, {0.05, 0.1, 0.2, 0.3, 0.35});
    const double T = 0.7;
    std::vector<double> R(25);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double d = grid.center(i)[0] - grid.center(j)[0];
            R[i * 5 + j] = P.mass(i) * std::exp(-d * d / (2.0 * T)) / std::sqrt(2.0 * kPi * T) * grid.spacing;
        }
    auto ora = oracle::newton_oracle(R, P.masses(), Q.masses());
    SinkhornOptions opt;
    opt.tol = 1e-12;
    auto sol = schrodinger::sinkhorn_solve(P, Q, k, T, opt);
    v.require(std::fabs(sol.value - ora.value) <= kSinkhornOracleTol, "5x5 |value - oracle| = " + f(std::fabs(sol.value - ora.value), 2));
    v.require(sol.marginal_residual <= kResidualTol, "residual " + f(sol.marginal_residual, 2));
    auto G = measures::discretize_gaussian(GaussianSpec::normal1d(0.0, 1.0), GridSpec::line(-10.0, 10.0, 161));
    auto evolved = mk::heat_smoothed_marginal(G, k, 0.5, G.grid());
    auto ref = schrodinger::sinkhorn_solve(G, evolved, k, 0.5);
    v.require(std::fabs(ref.value) <= kReferenceZeroTol, "heat-evolved Q value " + f(ref.value, 2));
    return v;
}

Verdict c9() {
    Verdict v;
    auto Pm = normal(0.0, 1.0), Qm = normal(1.0, 1.0);
    auto P = cli::detail::to_grid(Pm, 161), Q = cli::detail::to_grid(Qm, 161);
    auto k = TransitionKernel::heat(1, 1.0);
    std::vector<double> ts;
    for (int i = 1; i <= 10; ++i) ts.push_back(0.1 * i);
    auto fit = kernels::aronson_fit(k, 1.0, 10000, 909);
    const double T2 = bounds::transport_cost(Pm, Qm, 2.0);
    std::size_t held = 0;
    double lo_tv = kInf, hi_tv = 0.0;
    auto sweep = schrodinger::value_sweep(P, Q, k, ts);
    for (const auto& e : sweep) {
        double up = schrodinger::upper_rhs(e.t, P, Q, fit.C_tilde, 1);
        double lo = schrodinger::best_lower_rhs(e.t, T2, k.lambda_sup(e.t), k.sigma_sup(e.t), 0.0);
        if (e.converged && lo <= e.value && e.value <= up) ++held;
        lo_tv = std::min(lo_tv, e.t_value);
        hi_tv = std::max(hi_tv, e.t_value);
    }
    v.require(held == sweep.size(), std::to_string(held) + "/" + std::to_string(sweep.size()) + " cells, C~ " + f(fit.C_tilde, 5));
    v.require(hi_tv / lo_tv <= kTvRatio, "max/min t v^S = " + f(hi_tv / lo_tv, 3));
    return v;
}

Verdict c10() {
    Verdict v;
    auto t0 = std::chrono::steady_clock::now();
    auto k = TransitionKernel::ornstein_uhlenbeck(1, 1.0, std::sqrt(2.0));
    auto P = cli::detail::to_grid(normal(1.0, 1.0), 200), Q = cli::detail::to_grid(normal(-1.0, 1.0), 200);
    auto rows = schrodinger::longtime_limits(P, Q, k, {1.0, 2.0, 5.0, 10.0});
    bool dec = true, ckp = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ckp = ckp && rows[i].ckp_holds;
        if (i > 0) dec = dec && rows[i].H_product < rows[i - 1].H_product;
    }
    const double H = 0.5;
    double gap = std::fabs(rows.back().value - H);
    v.require(gap <= kLongtimeGap, "|v^S(10) - 0.5| = " + f(gap, 3));
    v.require(dec, "H(PxQ|mu_t) decreasing");
    v.require(ckp, "TV <= sqrt(2H)");
    double s = since(t0);
    v.require(s <= 180.0, f(s, 3) + " s <= 180 s");
    return v;
}

Verdict c11() {
    Verdict v;
    auto heat = TransitionKernel::heat(1, 1.0);
    auto ou = TransitionKernel::ornstein_uhlenbeck(1, 1.0, std::sqrt(2.0));
    for (const auto& [name, k] : {std::pair<std::string, TransitionKernel>{"heat", heat}, {"ou", ou}}) {
        auto fit = kernels::aronson_fit(k, 1.0, 10000, 1111);
        auto bad = kernels::aronson_violations(k, fit.C_tilde, 1.0, 10000, 2222, fit.box_half_width);
        v.require(fit.residual <= 0.0 && bad == 0,
                  name + " C~ " + f(fit.C_tilde, 5) + ", " + std::to_string(bad) + " fresh violations");
        if (k.has_invariant()) {
            std::vector<Point> ys;
            for (int i = 0; i < 10000; ++i) ys.push_back({-fit.box_half_width + 2.0 * fit.box_half_width * i / 9999.0, 0.0});
            auto sb = kernels::invariant_sandwich_violations(k, fit.C_tilde, 1.0, ys);
            v.require(sb == 0, name + " invariant sandwich " + std::to_string(sb) + " violations");
        }
    }
    return v;
}

Verdict c12() {
    Verdict v;
    auto out = fs::temp_directory_path() / "sotlab_acceptance_suite";
    fs::remove_all(out);
    std::string cmd = std::string("\"") + SOTLAB_CLI + "\" verify-all --suite \"" + SOTLAB_CONFIG_DIR + "\" --out \"" + out.string() + "\"";
    auto t0 = std::chrono::steady_clock::now();
    int status = std::system(cmd.c_str());
    double s = since(t0);
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    v.require(code == 0, "exit code " + std::to_string(code));
    v.require(s <= 900.0, f(s, 4) + " s <= 900 s");
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    int only = 0;
    app.add_option("--only", only, "run a single criterion (1-12)")->check(CLI::Range(0, 12));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"bridge law", c1},          {"closed-form bridge cost", c2}, {"sandwich suite", c3},
        {"short-time limit", c4},    {"zero-noise limit", c5},        {"large-t explosion", c6},
        {"sublinear collapse", c7},  {"Sinkhorn correctness", c8},    {"Schrodinger bounds", c9},
        {"long-time limit", c10},    {"Aronson certificate", c11},    {"verify-all", c12},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && static_cast<int>(i + 1) != only) continue;
        auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail << "error: " << e.what();
        }
        all = all && v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " ["
                  << v.detail.str() << "] (" << f(since(t0), 3) << " s)" << std::endl;
    }
    return all ? 0 : 1;
}
