#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sotlab/bounds.hpp"
#include "sotlab/io.hpp"
#include "sotlab/schrodinger.hpp"
#include "sotlab/sde.hpp"
#include "sotlab/stats.hpp"
#include "sotlab/transport.hpp"

namespace sotlab::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.3.0";

enum ExitCode { kOk = 0, kSuiteIncomplete = 1, kConfigError = 2, kNumericalFailure = 3 };

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigInvalid("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Tolerances {
    double sinkhorn = 1e-9;
    std::size_t max_iter = 50000;
    double slope = 0.1;
    double coefficient = 0.1;
    double ks_alpha = 0.01;
};

struct ExperimentConfig {
    std::string experiment;
    std::string name;
    std::optional<AnyMeasure> P, Q;
    std::optional<TransitionKernel> kernel;
    std::vector<double> rs{1.0};
    std::vector<double> times;
    double T = 1.0;
    double sigma = 1.0;
    std::size_t n_paths = 20000;
    std::uint64_t seed = 1;
    std::vector<double> eps, deltas, compression;
    double C = 1.0, C_prime = 0.0;
    std::size_t grid_cells = 121;
    std::size_t probes = 2000;
    Tolerances tol;
    json expect = json::object();
    json raw;
    std::string hash;
};

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"transport", "schrodinger", "bridge", "bounds-sweep",
                                                "longtime",  "zero-noise",  "explosion", "collapse-r-lt-1"};
    return names;
}

namespace detail {

inline std::vector<double> number_list(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array() || v.empty()) throw ConfigInvalid(std::string(key) + " must be a number or a non-empty list");
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) throw ConfigInvalid(std::string(key) + " must contain numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

inline void need(const json& j, std::initializer_list<const char*> keys, const std::string& experiment) {
    for (const char* k : keys)
        if (!j.contains(k)) throw ConfigInvalid("experiment '" + experiment + "' needs key '" + k + "'");
}

}  // namespace detail

/// Parses and validates a config; throws ConfigInvalid on any schema problem.
inline ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("malformed JSON: ") + e.what());
    }
    io::check_keys(j, {"experiment", "name", "description", "P", "Q", "kernel", "r", "times", "T", "sigma", "n_paths",
                       "seed", "eps", "deltas", "compression", "envelope", "grid_cells", "probes", "tolerances", "expect"},
                   "config");
    ExperimentConfig c;
    c.raw = j;
    c.hash = hex64(fnv1a64(j.dump()));
    c.experiment = io::get<std::string>(j, "experiment", "config");
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), c.experiment) == names.end())
        throw ConfigInvalid("unknown experiment '" + c.experiment + "'");
    c.name = j.contains("name") ? io::get<std::string>(j, "name", "config") : c.experiment;
    for (char ch : c.name)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-'))
            throw ConfigInvalid("name may contain only letters, digits, '_' and '-'");
    try {
        if (j.contains("P")) c.P = io::measure_from_json(j.at("P"), "P");
        if (j.contains("Q")) c.Q = io::measure_from_json(j.at("Q"), "Q");
        if (j.contains("kernel")) c.kernel = io::kernel_from_json(j.at("kernel"));
        if (j.contains("r")) c.rs = detail::number_list(j, "r");
        if (j.contains("times")) c.times = detail::number_list(j, "times");
        if (j.contains("eps")) c.eps = detail::number_list(j, "eps");
        if (j.contains("deltas")) c.deltas = detail::number_list(j, "deltas");
        if (j.contains("compression")) c.compression = detail::number_list(j, "compression");
        if (j.contains("T")) c.T = io::get<double>(j, "T", "config");
        if (j.contains("sigma")) c.sigma = io::get<double>(j, "sigma", "config");
        if (j.contains("n_paths")) c.n_paths = io::get<std::size_t>(j, "n_paths", "config");
        if (j.contains("seed")) c.seed = io::get<std::uint64_t>(j, "seed", "config");
        if (j.contains("grid_cells")) c.grid_cells = io::get<std::size_t>(j, "grid_cells", "config");
        if (j.contains("probes")) c.probes = io::get<std::size_t>(j, "probes", "config");
        if (j.contains("envelope")) {
            const auto& e = j.at("envelope");
            io::check_keys(e, {"C", "C_prime"}, "envelope");
            if (e.contains("C")) c.C = io::get<double>(e, "C", "envelope");
            if (e.contains("C_prime")) c.C_prime = io::get<double>(e, "C_prime", "envelope");
        }
        if (j.contains("tolerances")) {
            const auto& t = j.at("tolerances");
            io::check_keys(t, {"sinkhorn", "max_iter", "slope", "coefficient", "ks_alpha"}, "tolerances");
            if (t.contains("sinkhorn")) c.tol.sinkhorn = io::get<double>(t, "sinkhorn", "tolerances");
            if (t.contains("max_iter")) c.tol.max_iter = io::get<std::size_t>(t, "max_iter", "tolerances");
            if (t.contains("slope")) c.tol.slope = io::get<double>(t, "slope", "tolerances");
            if (t.contains("coefficient")) c.tol.coefficient = io::get<double>(t, "coefficient", "tolerances");
            if (t.contains("ks_alpha")) c.tol.ks_alpha = io::get<double>(t, "ks_alpha", "tolerances");
        }
        if (j.contains("expect")) {
            c.expect = j.at("expect");
            io::check_keys(c.expect, {"value", "cost", "value_tol", "longtime_gap"}, "expect");
        }
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("bad config value: ") + e.what());
    }

    const auto& x = c.experiment;
    if (x == "transport") detail::need(j, {"P", "Q", "r"}, x);
    if (x == "schrodinger" || x == "longtime") detail::need(j, {"P", "Q", "kernel", "times"}, x);
    if (x == "bridge") detail::need(j, {"P", "Q", "sigma", "T", "n_paths"}, x);
    if (x == "bounds-sweep") detail::need(j, {"P", "Q", "sigma", "r", "times", "n_paths"}, x);
    if (x == "zero-noise") detail::need(j, {"P", "Q", "r", "sigma", "T", "eps", "n_paths"}, x);
    if (x == "explosion") detail::need(j, {"P", "Q", "r", "sigma", "times", "n_paths"}, x);
    if (x == "collapse-r-lt-1") detail::need(j, {"P", "Q", "r", "sigma", "T", "deltas", "compression", "n_paths"}, x);

    if (dim_of(*c.P) != dim_of(*c.Q)) throw ConfigInvalid("P and Q have different dimensions");
    if (c.kernel && c.kernel->dim() != dim_of(*c.P)) throw ConfigInvalid("kernel dimension differs from P");
    if (x == "longtime" && !c.kernel->has_invariant()) throw ConfigInvalid("longtime needs an OU kernel");
    if (!(c.T > 0.0)) throw ConfigInvalid("T must be positive");
    if (!(c.sigma >= 0.0)) throw ConfigInvalid("sigma must be nonnegative");
    if (c.n_paths == 0) throw ConfigInvalid("n_paths must be positive");
    for (double t : c.times)
        if (!(t > 0.0)) throw ConfigInvalid("times must be positive");
    for (std::size_t i = 1; i < c.times.size(); ++i)
        if (!(c.times[i] > c.times[i - 1])) throw ConfigInvalid("times must be increasing");
    for (double r : c.rs) {
        if (x == "collapse-r-lt-1" ? !(r > 0.0 && r < 1.0) : !(r >= 1.0 && r < 2.0 + (x == "transport" ? kInf : 0.0)))
            throw ConfigInvalid("r out of range for experiment '" + x + "'");
    }
    for (double d : c.deltas)
        if (!(d > 0.0 && d < c.T)) throw ConfigInvalid("deltas must lie in (0, T)");
    for (double n : c.compression)
        if (!(n * c.T >= 1.0)) throw ConfigInvalid("compression factors need n T >= 1");
    return c;
}

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct RunOptions {
    fs::path out_dir = "out";
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool dump_paths = false;
};

struct RunManifest {
    std::string experiment;
    std::string name;
    std::string config_hash;
    std::string version = kVersion;
    double wall_time = 0.0;
    std::string status = "ok";
    std::string error;
    std::vector<Check> checks;
    std::vector<std::pair<std::string, std::string>> outputs;
    json summary = json::object();
    int exit_code = kOk;

    bool passed() const { return exit_code == kOk; }

    json to_json() const {
        json checks_j = json::array();
        for (const auto& c : checks) checks_j.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
        json out_j = json::array();
        for (const auto& [path, sum] : outputs) out_j.push_back({{"path", path}, {"fnv1a64", sum}});
        return {{"experiment", experiment}, {"name", name},       {"config_hash", config_hash}, {"version", version},
                {"wall_time_s", wall_time}, {"status", status},   {"error", error},             {"checks", checks_j},
                {"outputs", out_j},         {"summary", summary}, {"exit_code", exit_code}};
    }
};

namespace detail {

class Outputs {
public:
    Outputs(fs::path dir, std::string prefix) : dir_(std::move(dir)), prefix_(std::move(prefix)) {}

    void write(const std::string& suffix, const std::string& bytes, RunManifest& m) {
        fs::path p = dir_ / (prefix_ + suffix);
        std::ofstream f(p, std::ios::binary);
        if (!f) throw Error("cannot write " + p.string());
        f << bytes;
        m.outputs.emplace_back(p.filename().string(), hex64(fnv1a64(bytes)));
    }

    void write_file_entry(const fs::path& p, RunManifest& m) {
        m.outputs.emplace_back(p.filename().string(), hex64(fnv1a64(read_file(p))));
    }

    fs::path path(const std::string& suffix) const { return dir_ / (prefix_ + suffix); }

private:
    fs::path dir_;
    std::string prefix_;
};

inline void check(RunManifest& m, std::string name, bool ok, std::string detail = {}) {
    m.checks.push_back({std::move(name), ok, std::move(detail)});
}

inline std::string num(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

/// Gaussian laws become grid laws for the Sinkhorn solver.
inline GridMeasure to_grid(const AnyMeasure& m, std::size_t cells) {
    if (const auto* g = std::get_if<GaussianSpec>(&m)) return measures::discretize_gaussian(*g, measures::default_grid(*g, cells));
    if (const auto* g = std::get_if<GridMeasure>(&m)) return *g;
    throw ConfigInvalid("Schrodinger experiments need gaussian or grid measures");
}

inline std::optional<Point> dirac_point(const AnyMeasure& m) {
    if (const auto* d = std::get_if<DiscreteMeasure>(&m))
        if (d->size() == 1) return d->points()[0];
    return std::nullopt;
}

inline void run_transport(const ExperimentConfig& c, Outputs& out, RunManifest& m) {
    json results = json::array();
    for (double r : c.rs) {
        TransportResult res;
        const auto* dp = std::get_if<DiscreteMeasure>(&*c.P);
        const auto* dq = std::get_if<DiscreteMeasure>(&*c.Q);
        if (dp && dq && dp->size() * dq->size() <= 40000 && r >= 1.0) {
            res = mk::solve_exact(*dp, *dq, r);
        } else {
            res = mk::solve_quantile_1d(bounds::as_measure1d(*c.P), bounds::as_measure1d(*c.Q), r);
        }
        std::vector<double> pw, qw;
        if (dp && dq && res.method == TransportMethod::ExactLp) {
            pw = dp->weights();
            qw = dq->weights();
        } else {
            pw = res.coupling.row_sums();
            qw = res.coupling.col_sums();
        }
        double resid = res.coupling.marginal_residual(pw, qw);
        check(m, "feasibility r=" + num(r), resid <= 1e-9 && std::fabs(res.coupling.total() - 1.0) <= 1e-9, num(resid));
        bool exact = res.method == TransportMethod::ExactLp || (dp && dq);
        if (exact) {
            double diff = std::fabs(res.coupling.cost(r) - res.value);
            check(m, "value recomputation r=" + num(r), diff <= 1e-9, num(diff));
        }
        if (c.expect.contains("value")) {
            double want = c.expect.at("value").get<double>();
            double tol = c.expect.value("value_tol", 1e-6);
            check(m, "expected value r=" + num(r), std::fabs(res.value - want) <= tol,
                  num(res.value) + " vs " + num(want));
        }
        results.push_back(io::to_json(res));
    }
    out.write("_transport.json", results.dump(2) + "\n", m);
    m.summary["values"] = json::array();
    for (const auto& r : results) m.summary["values"].push_back(r.at("value"));
}

inline void run_schrodinger(const ExperimentConfig& c, Outputs& out, RunManifest& m) {
    auto P = to_grid(*c.P, c.grid_cells);
    auto Q = to_grid(*c.Q, c.grid_cells);
    const auto& k = *c.kernel;
    SinkhornOptions opt;
    opt.tol = c.tol.sinkhorn;
    opt.max_iter = c.tol.max_iter;
    auto sweep = schrodinger::value_sweep(P, Q, k, c.times, opt);
    const bool heat = k.kind() == TransitionKernel::Kind::Heat;
    std::optional<AronsonFit> fit;
    double T2 = 0.0;
    if (heat) {
        fit = kernels::aronson_fit(k, c.times.back(), std::max<std::size_t>(c.probes, 1000), c.seed);
        T2 = bounds::transport_cost(*c.P, *c.Q, 2.0);
        m.summary["C_tilde"] = fit->C_tilde;
        m.summary["T2"] = T2;
    }
    io::CsvWriter csv({"t", "vS", "t_vS", "iterations", "residual", "upper_rhs", "lower_rhs", "satisfied"});
    bool all_ok = true, conv = true, nonneg = true;
    double tv_min = kInf, tv_max = 0.0;
    for (const auto& e : sweep) {
        double up = kInf, lo = -kInf;
        if (heat) {
            up = schrodinger::upper_rhs(e.t, P, Q, fit->C_tilde, k.dim());
            lo = schrodinger::best_lower_rhs(e.t, T2, k.lambda_sup(e.t), k.sigma_sup(e.t), 0.0);
        }
        bool ok = e.value <= up && e.value >= lo;
        all_ok = all_ok && ok;
        conv = conv && e.converged;
        nonneg = nonneg && e.value >= -1e-12;
        tv_min = std::min(tv_min, e.t_value);
        tv_max = std::max(tv_max, e.t_value);
        csv.row({io::fmt(e.t), io::fmt(e.value), io::fmt(e.t_value), std::to_string(e.iterations), io::fmt(e.residual),
                 io::fmt(up), io::fmt(lo), ok ? "1" : "0"});
    }
    out.write("_schrodinger.csv", csv.str(), m);
    check(m, "sinkhorn converged", conv);
    check(m, "v^S >= 0", nonneg);
    if (heat) {
        check(m, "lower <= v^S <= upper", all_ok);
        if (tv_min > 0.0) check(m, "t v^S bounded (max/min <= 10)", tv_max / tv_min <= 10.0, num(tv_max / tv_min));
    }
}

inline void run_longtime(const ExperimentConfig& c, Outputs& out, RunManifest& m) {
    auto P = to_grid(*c.P, c.grid_cells);
    auto Q = to_grid(*c.Q, c.grid_cells);
    SinkhornOptions opt;
    opt.tol = c.tol.sinkhorn;
    opt.max_iter = c.tol.max_iter;
    auto rows = schrodinger::longtime_limits(P, Q, *c.kernel, c.times, opt);
    io::CsvWriter csv({"t", "vS", "t_vS", "H_PxQ_mu", "TV", "HQ_m", "iterations", "residual"});
    bool decreasing = true, ckp = true, conv = true;
    std::vector<double> values;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& e = rows[i];
        if (i > 0 && !(e.H_product < rows[i - 1].H_product)) decreasing = false;
        ckp = ckp && e.ckp_holds;
        conv = conv && e.converged;
        values.push_back(e.value);
        csv.row({io::fmt(e.t), io::fmt(e.value), io::fmt(e.t * e.value), io::fmt(e.H_product), io::fmt(e.tv),
                 io::fmt(e.H_Q_m), std::to_string(e.iterations), io::fmt(e.residual)});
    }
    out.write("_longtime.csv", csv.str(), m);
    auto fit = schrodinger::upper_bound_longtime_rhs(Q, P, values);
    m.summary["C_bar_proxy"] = fit.C_bar;
    m.summary["longtime_rhs"] = fit.rhs;
    m.summary["H_Q_m"] = rows.back().H_Q_m;
    m.summary["vS_last"] = rows.back().value;
    check(m, "sinkhorn converged", conv);
    check(m, "H(PxQ|mu_t) decreasing", decreasing);
    check(m, "TV <= sqrt(2H)", ckp);
    if (c.expect.contains("longtime_gap")) {
        double gap = std::fabs(rows.back().value - rows.back().H_Q_m);
        check(m, "|v^S(t_max) - H(Q|m)|", gap <= c.expect.at("longtime_gap").get<double>(), num(gap));
    }
}

inline void run_bridge(const ExperimentConfig& c, const RunOptions& opt, Outputs& out, RunManifest& m) {
    const double T = c.T;
    auto sampler = bounds::optimal_pair_sampler(*c.P, *c.Q, std::max(1.0, c.rs.front()));
    auto e = sde::simulate_bridge(sampler, c.sigma, TimeGrid::geometric_tail(T), c.n_paths, c.seed);
    double pin = 0.0;
    for (std::size_t p = 0; p < e.n_paths; ++p) {
        // The stored terminal state is Z itself; compare with the drawn pair.
        Rng rng = substream(c.seed, p);
        auto [y, z] = sampler(rng);
        pin = std::max(pin, distance(e.state(p, e.N()), z));
    }
    check(m, "X(T) = Z on every path", pin == 0.0, num(pin));
    json costs = json::array();
    for (double r : c.rs) {
        auto cost = sde::cost_r(e, r);
        double est = cost.mean + cost.truncation_bias;
        costs.push_back({{"r", r}, {"mean", cost.mean}, {"stderr", cost.stderr_}, {"truncation_time", *cost.truncation_time},
                         {"truncation_bias", cost.truncation_bias}, {"estimate", est}});
        if (c.expect.contains("cost") && r == c.rs.front()) {
            double want = c.expect.at("cost").get<double>();
            check(m, "cost r=" + num(r) + " within 3 stderr", std::fabs(est - want) <= 3.0 * cost.stderr_,
                  num(est) + " vs " + num(want) + " (se " + num(cost.stderr_) + ")");
        }
    }
    m.summary["costs"] = costs;
    auto y0 = dirac_point(*c.P);
    auto z0 = dirac_point(*c.Q);
    if (y0 && z0 && e.dim == 1 && c.sigma > 0.0) {
        json ks = json::array();
        for (double frac : {0.25, 0.5, 0.75}) {
            double t = frac * T;
            std::size_t k = e.knot_index(t);
            t = e.grid.knots[k];
            double mean = (*y0)[0] + ((*z0)[0] - (*y0)[0]) * t / T;
            double sd = c.sigma * std::sqrt(t * (T - t) / T);
            std::vector<double> xs;
            for (const auto& p : e.marginal(k)) xs.push_back(p[0]);
            auto res = stats::ks_test(xs, [&](double x) { return stats::normal_cdf((x - mean) / sd); });
            ks.push_back({{"t", t}, {"D", res.statistic}, {"p", res.p_value}});
            check(m, "KS at t=" + num(t), res.p_value >= c.tol.ks_alpha, "p=" + num(res.p_value));
            if (frac == 0.5) {
                auto v = stats::variance_about(xs, mean);
                check(m, "Var X(T/2) within 3 stderr", std::fabs(v.mean - sd * sd) <= 3.0 * v.se,
                      num(v.mean) + " vs " + num(sd * sd));
            }
        }
        m.summary["ks"] = ks;
    }
    out.write("_bridge.json", json({{"costs", costs}, {"n_paths", c.n_paths}, {"knots", e.grid.knots.size()}}).dump(2) + "\n", m);
    if (opt.dump_paths) {
        auto p = out.path("_paths.bin");
        sde::dump_paths(e, p.string());
        out.write_file_entry(p, m);
    }
}

inline void run_bounds_sweep(const ExperimentConfig& c, Outputs& out, RunManifest& m) {
    bounds::SandwichSpec spec{*c.P, *c.Q, c.sigma, c.rs, c.times, c.n_paths, c.seed, true};
    auto cells = bounds::sandwich(spec);
    io::CsvWriter csv({"name", "t", "r", "lhs", "stderr", "rhs", "satisfied"});
    std::size_t bad = 0, total = 0, reverse = 0;
    for (const auto& cell : cells) {
        for (const auto& b : cell.reports()) {
            ++total;
            if (!b.satisfied) ++bad;
            csv.row({b.name, io::fmt(b.t), io::fmt(b.r), io::fmt(b.lhs), io::fmt(b.stderr_), io::fmt(b.rhs),
                     b.satisfied ? "1" : "0"});
        }
        if (cell.reverse_gap_observed) ++reverse;
    }
    out.write("_bounds.csv", csv.str(), m);
    m.summary["reverse_gap_observed"] = reverse;
    m.summary["cells"] = cells.size();
    check(m, "all bound reports satisfied", bad == 0, std::to_string(total - bad) + "/" + std::to_string(total));
}

inline json fit_json(const std::optional<SlopeFit>& f) {
    if (!f) return nullptr;
    return {{"exponent", f->exponent}, {"intercept", f->intercept}, {"r2", f->r2}, {"window", {f->window_lo, f->window_hi}}};
}

inline void run_zero_noise(const ExperimentConfig& c, Outputs& out, RunManifest& m) {
    io::CsvWriter csv({"r", "eps", "estimate", "stderr", "target", "gap"});
    json fits = json::array();
    const bool diagonal = io::to_json(*c.P) == io::to_json(*c.Q);
    for (double r : c.rs) {
        auto rep = bounds::zero_noise_report(*c.P, *c.Q, r, c.sigma, c.T, c.eps, c.n_paths, c.seed, diagonal);
        for (const auto& p : rep.points)
            csv.row({io::fmt(r), io::fmt(p.eps), io::fmt(p.estimate), io::fmt(p.stderr_), io::fmt(rep.target), io::fmt(p.gap)});
        fits.push_back({{"r", r}, {"fit", fit_json(rep.fit)}, {"coefficient", rep.coefficient},
                        {"coefficient_bound", rep.coefficient_bound}, {"fit_error", rep.fit_error}});
        check(m, "fit r=" + num(r), rep.fit.has_value(), rep.fit_error);
        if (!rep.fit) continue;
        if (diagonal) {
            check(m, "eps exponent r/2 r=" + num(r), std::fabs(rep.fit->exponent - 0.5 * r) <= c.tol.slope,
                  num(rep.fit->exponent));
        } else {
            check(m, "gap vanishes r=" + num(r), rep.fit->exponent > 0.0, num(rep.fit->exponent));
            auto ex = bounds::extrapolate_to_zero_noise(rep.points);
            fits.back()["extrapolated"] = ex.intercept;
            fits.back()["extrapolated_stderr_bound"] = ex.stderr_bound;
            check(m, "extrapolated limit r=" + num(r), std::fabs(ex.intercept - rep.target) <= 3.0 * ex.stderr_bound,
                  num(ex.intercept) + " vs " + num(rep.target));
        }
        check(m, "coefficient r=" + num(r), rep.coefficient <= (1.0 + c.tol.coefficient) * rep.coefficient_bound,
              num(rep.coefficient) + " vs " + num(rep.coefficient_bound));
    }
    out.write("_zero_noise.csv", csv.str(), m);
    m.summary["fits"] = fits;
}

inline void run_explosion(const ExperimentConfig& c, Outputs& out, RunManifest& m) {
    io::CsvWriter csv({"r", "t", "upper", "stderr", "lower"});
    json fits = json::array();
    for (double r : c.rs) {
        auto rep = bounds::explosion_report(*c.P, *c.Q, r, c.sigma, c.times, c.n_paths, c.seed);
        for (const auto& p : rep.points)
            csv.row({io::fmt(r), io::fmt(p.t), io::fmt(p.upper), io::fmt(p.stderr_), io::fmt(p.lower)});
        fits.push_back({{"r", r}, {"upper", fit_json(rep.upper_fit)}, {"lower", fit_json(rep.lower_fit)}});
        check(m, "fits r=" + num(r), rep.upper_fit && rep.lower_fit, rep.fit_error);
        if (!rep.upper_fit || !rep.lower_fit) continue;
        double want = 1.0 - 0.5 * r;
        check(m, "upper slope r=" + num(r), std::fabs(rep.upper_fit->exponent - want) <= c.tol.slope, num(rep.upper_fit->exponent));
        check(m, "lower slope r=" + num(r), std::fabs(rep.lower_fit->exponent - want) <= c.tol.slope, num(rep.lower_fit->exponent));
        check(m, "upper estimate increasing r=" + num(r), rep.increasing);
    }
    out.write("_explosion.csv", csv.str(), m);
    m.summary["fits"] = fits;
}

inline void run_collapse(const ExperimentConfig& c, Outputs& out, RunManifest& m) {
    const double r = c.rs.front();
    const auto sampler = bounds::optimal_pair_sampler(*c.P, *c.Q, 1.0);
    io::CsvWriter delayed({"delta", "cost", "stderr"});
    std::vector<CostEstimate> costs;
    for (double d : c.deltas) {
        costs.push_back(sde::delayed_bridge_cost(sampler, c.sigma, c.T, d, r, c.n_paths, c.seed));
        delayed.row({io::fmt(d), io::fmt(costs.back().mean), io::fmt(costs.back().stderr_)});
    }
    out.write("_delayed.csv", delayed.str(), m);
    bool decreasing = true;
    for (std::size_t i = 1; i < costs.size(); ++i) {
        double se = std::hypot(costs[i].stderr_, costs[i - 1].stderr_);
        if (!(costs[i].mean < costs[i - 1].mean) || costs[i].mean > costs[i - 1].mean + 2.0 * se) decreasing = false;
    }
    check(m, "delayed bridge cost decreases as delta shrinks", decreasing);

    auto base = sde::simulate_bridge(sampler, c.sigma, TimeGrid::geometric_tail(c.T), c.n_paths, c.seed);
    io::CsvWriter comp({"n", "envelope", "simulated", "stderr"});
    bool under = true;
    double first = 0.0, last = 0.0;
    for (double n : c.compression) {
        auto cc = sde::compressed_control_cost(base, n, r, c.C, c.C_prime);
        under = under && cc.simulated.mean <= cc.envelope + 3.0 * cc.simulated.stderr_;
        if (n == c.compression.front()) first = cc.envelope;
        last = cc.envelope;
        comp.row({io::fmt(n), io::fmt(cc.envelope), io::fmt(cc.simulated.mean), io::fmt(cc.simulated.stderr_)});
    }
    out.write("_compressed.csv", comp.str(), m);
    check(m, "compressed cost <= envelope + 3 stderr", under);
    m.summary["envelope_ratio_last_first"] = first > 0.0 ? last / first : 0.0;
}

}  // namespace detail

/// Runs a parsed config; solver failures become exit code 3 with the manifest still written.
inline RunManifest run(const ExperimentConfig& cfg_in, const RunOptions& opt) {
    ExperimentConfig c = cfg_in;
    if (opt.seed) c.seed = *opt.seed;
    if (opt.threads > 0) set_threads(opt.threads);
    RunManifest m;
    m.experiment = c.experiment;
    m.name = c.name;
    m.config_hash = c.hash;
    fs::create_directories(opt.out_dir);
    detail::Outputs out(opt.out_dir, c.name);
    auto start = std::chrono::steady_clock::now();
    try {
        const auto& x = c.experiment;
        if (x == "transport") detail::run_transport(c, out, m);
        else if (x == "schrodinger") detail::run_schrodinger(c, out, m);
        else if (x == "longtime") detail::run_longtime(c, out, m);
        else if (x == "bridge") detail::run_bridge(c, opt, out, m);
        else if (x == "bounds-sweep") detail::run_bounds_sweep(c, out, m);
        else if (x == "zero-noise") detail::run_zero_noise(c, out, m);
        else if (x == "explosion") detail::run_explosion(c, out, m);
        else if (x == "collapse-r-lt-1") detail::run_collapse(c, out, m);
        bool ok = true;
        for (const auto& ch : m.checks) ok = ok && ch.passed;
        m.status = ok ? "ok" : "unsatisfied";
        m.exit_code = ok ? kOk : kNumericalFailure;
    } catch (const ConfigInvalid&) {
        throw;
    } catch (const std::exception& e) {
        m.status = "numerical_failure";
        m.error = e.what();
        m.exit_code = kNumericalFailure;
    }
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream mf(opt.out_dir / (c.name + "_manifest.json"), std::ios::binary);
    mf << m.to_json().dump(2) << "\n";
    return m;
}

inline RunManifest run_file(const fs::path& config, const RunOptions& opt) {
    return run(parse_config(read_file(config)), opt);
}

struct SuiteEntry {
    std::string config;
    std::string status;
    int exit_code = kOk;
    double seconds = 0.0;
    std::string detail;
};

struct SuiteSummary {
    std::vector<SuiteEntry> entries;
    int exit_code = kOk;
    double seconds = 0.0;
};

/// Runs every config listed in suite_dir/suite.json and prints a pass/fail table.
inline SuiteSummary verify_all(const fs::path& suite_dir, const RunOptions& opt, std::ostream& log = std::cout) {
    SuiteSummary s;
    auto start = std::chrono::steady_clock::now();
    json suite;
    try {
        suite = json::parse(read_file(suite_dir / "suite.json"));
    } catch (const std::exception& e) {
        throw ConfigInvalid(std::string("cannot load suite.json: ") + e.what());
    }
    io::check_keys(suite, {"configs", "description"}, "suite.json");
    bool missing = false, failed = false, config_error = false;
    for (const auto& name_j : suite.at("configs")) {
        SuiteEntry e;
        e.config = name_j.get<std::string>();
        fs::path p = suite_dir / e.config;
        auto t0 = std::chrono::steady_clock::now();
        if (!fs::exists(p)) {
            e.status = "missing";
            e.exit_code = kSuiteIncomplete;
            missing = true;
        } else {
            try {
                auto m = run_file(p, opt);
                e.status = m.passed() ? "pass" : "fail";
                e.exit_code = m.exit_code;
                if (!m.passed()) {
                    failed = true;
                    for (const auto& ch : m.checks)
                        if (!ch.passed) e.detail += ch.name + " (" + ch.detail + "); ";
                    if (!m.error.empty()) e.detail += m.error;
                }
            } catch (const ConfigInvalid& err) {
                e.status = "config-error";
                e.exit_code = kConfigError;
                e.detail = err.what();
                config_error = true;
            }
        }
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << std::left << std::setw(28) << e.config << std::setw(14) << e.status << std::fixed << std::setprecision(1)
            << e.seconds << " s" << (e.detail.empty() ? "" : "  " + e.detail) << std::endl;
        s.entries.push_back(e);
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    s.exit_code = missing ? kSuiteIncomplete : config_error ? kConfigError : failed ? kNumericalFailure : kOk;
    log << "suite: " << s.entries.size() << " configs, " << (s.exit_code == kOk ? "all pass" : "FAILED") << ", "
        << std::fixed << std::setprecision(1) << s.seconds << " s" << std::endl;
    return s;
}

}  // namespace sotlab::cli
