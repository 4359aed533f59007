#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sotlab/kernels.hpp"
#include "sotlab/measures.hpp"
#include "sotlab/transport.hpp"

namespace sotlab::io {

using json = nlohmann::json;

/// Throws ConfigInvalid when `j` has a key outside `allowed`.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigInvalid(where + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items())
        if (!ok.count(key)) throw ConfigInvalid("unknown key '" + key + "' in " + where);
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigInvalid("missing key '" + std::string(key) + "' in " + where);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigInvalid("bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
    }
}

inline json point_json(const Point& p, int d) { return d == 1 ? json(p[0]) : json::array({p[0], p[1]}); }

inline Point point_from(const json& j, int d, const std::string& where) {
    if (j.is_number()) {
        if (d != 1) throw ConfigInvalid(where + ": scalar point in 2-D");
        return {j.get<double>(), 0.0};
    }
    if (!j.is_array() || j.size() != static_cast<std::size_t>(d) || !j[0].is_number())
        throw ConfigInvalid(where + ": point must have " + std::to_string(d) + " coordinates");
    return {j[0].get<double>(), d == 2 ? j[1].get<double>() : 0.0};
}

inline json to_json(const DiscreteMeasure& m) {
    json pts = json::array();
    for (const auto& p : m.points()) pts.push_back(point_json(p, m.dim()));
    return {{"type", "discrete"}, {"dim", m.dim()}, {"points", pts}, {"weights", m.weights()}};
}

inline json to_json(const GridMeasure& m) {
    const auto& g = m.grid();
    return {{"type", "grid"},
            {"dim", g.dim},
            {"origin", point_json(g.origin, g.dim)},
            {"spacing", g.spacing},
            {"counts", g.dim == 1 ? json(g.counts[0]) : json::array({g.counts[0], g.counts[1]})},
            {"density", m.density()}};
}

inline json to_json(const GaussianSpec& g) {
    json cov = g.dim == 1 ? json(g.cov.m[0][0])
                          : json::array({json::array({g.cov.m[0][0], g.cov.m[0][1]}), json::array({g.cov.m[1][0], g.cov.m[1][1]})});
    return {{"type", "gaussian"}, {"dim", g.dim}, {"mean", point_json(g.mean, g.dim)}, {"cov", cov}};
}

inline json to_json(const AnyMeasure& m) {
    return std::visit([](const auto& x) { return to_json(x); }, m);
}

/// {"type": "gaussian"|"discrete"|"grid", ...}; "dim" defaults to 1.
inline AnyMeasure measure_from_json(const json& j, const std::string& where = "measure") {
    if (!j.is_object()) throw ConfigInvalid(where + " must be an object");
    const auto type = get<std::string>(j, "type", where);
    const int d = j.contains("dim") ? get<int>(j, "dim", where) : 1;
    if (d != 1 && d != 2) throw ConfigInvalid(where + ": dim must be 1 or 2");
    try {
        if (type == "gaussian") {
            check_keys(j, {"type", "dim", "mean", "cov"}, where);
            Point mean = point_from(j.at("mean"), d, where + ".mean");
            Mat2 cov;
            const auto& c = j.at("cov");
            if (d == 1) {
                cov.m[0][0] = c.get<double>();
            } else {
                if (!c.is_array() || c.size() != 2) throw ConfigInvalid(where + ".cov must be 2x2");
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) cov.m[a][b] = c.at(a).at(b).get<double>();
            }
            return GaussianSpec(d, mean, cov);
        }
        if (type == "discrete") {
            check_keys(j, {"type", "dim", "points", "weights"}, where);
            std::vector<Point> pts;
            for (const auto& p : j.at("points")) pts.push_back(point_from(p, d, where + ".points"));
            std::vector<double> w = j.contains("weights") ? j.at("weights").get<std::vector<double>>()
                                                          : std::vector<double>(pts.size(), 1.0);
            return DiscreteMeasure(d, pts, w);
        }
        if (type == "grid") {
            check_keys(j, {"type", "dim", "origin", "spacing", "counts", "density"}, where);
            GridSpec g;
            g.dim = d;
            g.origin = point_from(j.at("origin"), d, where + ".origin");
            g.spacing = get<double>(j, "spacing", where);
            if (d == 1) g.counts = {get<std::size_t>(j, "counts", where), 1};
            else g.counts = {j.at("counts").at(0).get<std::size_t>(), j.at("counts").at(1).get<std::size_t>()};
            return GridMeasure(g, get<std::vector<double>>(j, "density", where));
        }
    } catch (const ConfigInvalid&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigInvalid(where + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigInvalid(where + ": " + e.what());
    }
    throw ConfigInvalid(where + ": unknown measure type '" + type + "'");
}

inline json to_json(const TransitionKernel& k) {
    if (k.kind() == TransitionKernel::Kind::OrnsteinUhlenbeck)
        return {{"type", "ou"}, {"dim", k.dim()}, {"theta", k.theta()}, {"sigma", k.sigma(0.0).m[0][0]}};
    if (!k.constant_sigma()) return {{"type", "heat"}, {"dim", k.dim()}, {"sigma", "time-dependent"}};
    return {{"type", "heat"}, {"dim", k.dim()}, {"sigma", k.sigma(0.0).m[0][0]}};
}

/// {"type": "heat", "sigma": s} or {"type": "ou", "theta": a, "sigma": s}; "dim" defaults to 1.
inline TransitionKernel kernel_from_json(const json& j, const std::string& where = "kernel") {
    const auto type = get<std::string>(j, "type", where);
    const int d = j.contains("dim") ? get<int>(j, "dim", where) : 1;
    try {
        if (type == "heat") {
            check_keys(j, {"type", "dim", "sigma"}, where);
            return TransitionKernel::heat(d, get<double>(j, "sigma", where));
        }
        if (type == "ou") {
            check_keys(j, {"type", "dim", "theta", "sigma"}, where);
            return TransitionKernel::ornstein_uhlenbeck(d, get<double>(j, "theta", where), get<double>(j, "sigma", where));
        }
    } catch (const ConfigInvalid&) {
        throw;
    } catch (const Error& e) {
        throw ConfigInvalid(where + ": " + e.what());
    }
    throw ConfigInvalid(where + ": unknown kernel type '" + type + "'");
}

inline json to_json(const TransportResult& r) {
    const auto& c = r.coupling;
    json rows = json::array(), cols = json::array(), mass = json::array();
    for (const auto& p : c.row_support()) rows.push_back(point_json(p, c.dim()));
    for (const auto& p : c.col_support()) cols.push_back(point_json(p, c.dim()));
    for (std::size_t i = 0; i < c.n_rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < c.n_cols(); ++j) row.push_back(c(i, j));
        mass.push_back(row);
    }
    return {{"value", r.value}, {"method", to_string(r.method)}, {"r", r.r}, {"rows", rows}, {"cols", cols}, {"mass", mass}};
}

/// Round-trip formatting for reals; NaN and infinities are written as text.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    CsvWriter& row(const std::vector<std::string>& cells) {
        if (cells.size() != header_.size()) throw ShapeMismatch("CSV row width differs from header");
        rows_.push_back(cells);
        return *this;
    }

    std::string str() const {
        std::ostringstream out;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
            out << '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out.str();
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw Error("cannot write " + path);
        f << str();
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

}  // namespace sotlab::io
