#pragma once

// Scenario configuration, check execution and run reports.
//
// A scenario file fixes the grid, the perturbations and the numerical
// cutoffs; checks read everything else from defaulted sub-tables. Every
// check is a pure function of the config (and seed), so running them on
// any number of worker threads gives identical reports.

#include "kgconn/connection.hpp"
#include "kgconn/toml.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <thread>

namespace kgconn {

using json = nlohmann::ordered_json;

inline constexpr const char* tool_version = "0.1.0";

inline const std::vector<std::string>& all_checks() {
    static const std::vector<std::string> names{"validate",    "evolve",    "bogoliubov", "shale",
                                                "implementer", "causality", "covariance", "locality",
                                                "holonomy",    "stress",    "sweep"};
    return names;
}

/// Pinned tolerances; scenario files may override individual entries.
inline const std::map<std::string, double>& default_tolerances() {
    static const std::map<std::string, double> t{
        {"validate_margin", 0.1},      {"symplectic", 1e-7},        {"flat_rotation", 1e-8},
        {"group", 1e-8},               {"k_symmetry", 1e-10},       {"min_singular", 1e-10},
        {"dual_inverse", 1e-10},       {"shale_slope", 4.0},        {"shale_tail", 0.01},
        {"intertwining", 1e-6},        {"vacuum_overlap", 1e-10},   {"cocycle", 1e-6},
        {"cocycle_modulus", 1e-8},     {"causality_map", 1e-6},     {"causality_fock", 1e-5},
        {"covariance_map", 1e-6},      {"covariance_ratio", 4.0},   {"locality_map", 1e-6},
        {"locality_commutator", 1e-6}, {"holonomy", 1e-6},          {"holonomy_modulus", 1e-8},
        {"endpoint", 1e-6},            {"linearity", 1e-6},         {"lie_derivative", 1e-5},
        {"sector_leakage", 1e-4},      {"fd_order", 1.9},           {"vacuum_chain", 1e-8}};
    return t;
}

struct ScenarioConfig {
    std::string id = "scenario";
    std::uint64_t seed = 0;
    std::vector<std::string> checks;  // empty: all
    GridSpec grid;
    EvolutionConfig evolution;
    double t_minus = std::numeric_limits<double>::quiet_NaN(), t_plus = std::numeric_limits<double>::quiet_NaN();
    int k_max = 3, n_max = 8, shale_k_max = 15;
    std::vector<PerturbationSpec> perturbations;
    std::map<std::string, double> tolerances = default_tolerances();

    struct Causality {
        bool present = false;
        std::vector<PerturbationSpec> h1, h2, h3;
        bool grid_maps = false;
    } causality;
    struct Covariance {
        BumpShape shape{0.0, 0.0, 1.5, 4.0, Profile::smooth, 8.0};
        double s = 0.2;
        bool refine = false;
    } covariance;
    struct Locality {
        double t_minus = std::numeric_limits<double>::quiet_NaN(), t_plus = std::numeric_limits<double>::quiet_NaN();
        int n_max = 3;
    } locality;
    struct Stress {
        int mode = 0;
        std::vector<double> eps{1e-2, 5e-3, 2.5e-3};
    } stress;
    struct Sweep {
        int n_s = 5;
        double delta = 0.04;
    } sweep;

    double slice_minus() const { return std::isnan(t_minus) ? grid.t_min : t_minus; }
    double slice_plus() const { return std::isnan(t_plus) ? grid.t_max : t_plus; }
    double tol(const std::string& k) const { return tolerances.at(k); }
};

namespace cfg_detail {

using Doc = toml::Document;

inline std::string ptr(const json::json_pointer& p) { return p.to_string(); }

[[noreturn]] inline void fail(const Doc& d, const json::json_pointer& p, const std::string& code, const std::string& what) {
    throw ConfigError(code, toml::at_line(d.line_of(ptr(p)), what));
}

inline void allow_keys(const Doc& d, const json::json_pointer& p, const std::set<std::string>& allowed) {
    const json& t = d.root.at(p);
    if (!t.is_object()) fail(d, p, "CFG_TYPE", "'" + ptr(p) + "' must be a table");
    for (auto it = t.begin(); it != t.end(); ++it)
        if (!allowed.count(it.key())) fail(d, p / it.key(), "CFG_UNKNOWN_KEY", "unknown key '" + ptr(p / it.key()) + "'");
}

inline void get(const Doc& d, const json::json_pointer& p, double& out) {
    if (!d.root.contains(p)) return;
    const json& v = d.root.at(p);
    if (!v.is_number()) fail(d, p, "CFG_TYPE", "'" + ptr(p) + "' must be a number");
    out = v.get<double>();
}
inline void get(const Doc& d, const json::json_pointer& p, int& out) {
    if (!d.root.contains(p)) return;
    const json& v = d.root.at(p);
    if (!v.is_number_integer()) fail(d, p, "CFG_TYPE", "'" + ptr(p) + "' must be an integer");
    long long x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        fail(d, p, "CFG_TYPE", "'" + ptr(p) + "' is out of range");
    out = static_cast<int>(x);
}
inline void get(const Doc& d, const json::json_pointer& p, bool& out) {
    if (!d.root.contains(p)) return;
    const json& v = d.root.at(p);
    if (!v.is_boolean()) fail(d, p, "CFG_TYPE", "'" + ptr(p) + "' must be a boolean");
    out = v.get<bool>();
}
inline void get(const Doc& d, const json::json_pointer& p, std::string& out) {
    if (!d.root.contains(p)) return;
    const json& v = d.root.at(p);
    if (!v.is_string()) fail(d, p, "CFG_TYPE", "'" + ptr(p) + "' must be a string");
    out = v.get<std::string>();
}

inline std::vector<PerturbationSpec> perturbations(const Doc& d, const json::json_pointer& p) {
    std::vector<PerturbationSpec> out;
    if (!d.root.contains(p)) return out;
    if (!d.root.at(p).is_array()) fail(d, p, "CFG_TYPE", "'" + ptr(p) + "' must be an array of tables");
    for (std::size_t i = 0; i < d.root.at(p).size(); ++i) {
        auto q = p / i;
        allow_keys(d, q, {"kind", "t0", "x0", "r_t", "r_x", "amplitude", "sharpness", "profile"});
        PerturbationSpec s;
        std::string kind = "conformal_bump", profile = "smooth";
        get(d, q / "kind", kind);
        try {
            s.kind = parse_kind(kind);
        } catch (const ConfigError&) {
            fail(d, q / "kind", "CFG_KIND", "unknown perturbation kind '" + kind + "'");
        }
        get(d, q / "t0", s.shape.t0);
        get(d, q / "x0", s.shape.x0);
        get(d, q / "r_t", s.shape.r_t);
        get(d, q / "r_x", s.shape.r_x);
        get(d, q / "amplitude", s.amplitude);
        get(d, q / "sharpness", s.shape.sharpness);
        get(d, q / "profile", profile);
        if (profile == "smooth") s.shape.profile = Profile::smooth;
        else if (profile == "box") s.shape.profile = Profile::box;
        else fail(d, q / "profile", "CFG_PROFILE", "profile must be 'smooth' or 'box'");
        if (!(s.shape.r_t > 0) || !(s.shape.r_x > 0)) fail(d, q, "CFG_RADIUS", "bump radii must be positive");
        if (!(s.shape.sharpness > 0)) fail(d, q / "sharpness", "CFG_RADIUS", "sharpness must be positive");
        out.push_back(s);
    }
    return out;
}

}  // namespace cfg_detail

/// Parses and validates a scenario; every error carries a CFG_* code and,
/// where it applies, the source line.
inline ScenarioConfig parse_config(const std::string& text) {
    using namespace cfg_detail;
    Doc d = toml::parse(text);
    using P = json::json_pointer;
    const P root("");
    allow_keys(d, root, {"id", "seed", "checks", "grid", "evolution", "slices", "fock", "perturbation", "tolerances",
                         "causality", "covariance", "locality", "stress", "sweep"});
    ScenarioConfig c;
    get(d, P("/id"), c.id);
    if (d.root.contains("seed")) {
        const json& s = d.root["seed"];
        if (!s.is_number_integer() || s.get<long long>() < 0) fail(d, P("/seed"), "CFG_SEED", "seed must be a non-negative integer");
        c.seed = s.get<std::uint64_t>();
    }
    if (d.root.contains("checks")) {
        const json& a = d.root["checks"];
        if (!a.is_array()) fail(d, P("/checks"), "CFG_TYPE", "checks must be an array of strings");
        for (const auto& v : a) {
            if (!v.is_string()) fail(d, P("/checks"), "CFG_TYPE", "checks must be an array of strings");
            std::string n = v.get<std::string>();
            if (std::find(all_checks().begin(), all_checks().end(), n) == all_checks().end())
                fail(d, P("/checks"), "CFG_CHECK", "unknown check '" + n + "'");
            c.checks.push_back(n);
        }
    }
    if (d.root.contains("grid")) {
        allow_keys(d, P("/grid"), {"n_x", "circumference", "t_min", "t_max", "dt", "mass"});
        get(d, P("/grid/n_x"), c.grid.n_x);
        get(d, P("/grid/circumference"), c.grid.circumference);
        get(d, P("/grid/t_min"), c.grid.t_min);
        get(d, P("/grid/t_max"), c.grid.t_max);
        get(d, P("/grid/dt"), c.grid.dt);
        get(d, P("/grid/mass"), c.grid.mass);
    }
    try {
        c.grid.check();
    } catch (const ConfigError& e) {
        static const std::map<std::string, std::string> key{{"CFG_NX", "n_x"},   {"CFG_CIRCUMFERENCE", "circumference"},
                                                            {"CFG_DT", "dt"},    {"CFG_TRANGE", "t_max"},
                                                            {"CFG_MASS", "mass"}};
        auto it = key.find(e.code());
        P p = it == key.end() ? P("/grid") : P("/grid") / it->second;
        if (!d.root.contains(p)) p = P("/grid");
        fail(d, p, e.code(), std::string(e.what()).substr(e.code().size() + 2));
    }
    if (d.root.contains("evolution")) {
        allow_keys(d, P("/evolution"), {"substeps", "interp_order", "dealias", "filter_cutoff", "filter_order"});
        get(d, P("/evolution/substeps"), c.evolution.substeps_per_dt);
        get(d, P("/evolution/interp_order"), c.evolution.interp_order);
        get(d, P("/evolution/dealias"), c.evolution.dealias);
        get(d, P("/evolution/filter_cutoff"), c.evolution.filter_cutoff);
        get(d, P("/evolution/filter_order"), c.evolution.filter_order);
        if (c.evolution.substeps_per_dt < 1) fail(d, P("/evolution/substeps"), "CFG_SUBSTEPS", "substeps must be >= 1");
        if (c.evolution.interp_order < 2) fail(d, P("/evolution/interp_order"), "CFG_SUBSTEPS", "interp_order must be >= 2");
        if (!(c.evolution.filter_cutoff > 0)) fail(d, P("/evolution/filter_cutoff"), "CFG_FILTER", "filter_cutoff must be positive");
    }
    if (d.root.contains("slices")) {
        allow_keys(d, P("/slices"), {"t_minus", "t_plus"});
        get(d, P("/slices/t_minus"), c.t_minus);
        get(d, P("/slices/t_plus"), c.t_plus);
    }
    if (!(c.slice_minus() >= c.grid.t_min && c.slice_plus() <= c.grid.t_max && c.slice_minus() < c.slice_plus()))
        fail(d, P("/slices"), "CFG_TIME", "slices must satisfy t_min <= t_minus < t_plus <= t_max");
    if (d.root.contains("fock")) {
        allow_keys(d, P("/fock"), {"k_max", "n_max", "shale_k_max"});
        get(d, P("/fock/k_max"), c.k_max);
        get(d, P("/fock/n_max"), c.n_max);
        get(d, P("/fock/shale_k_max"), c.shale_k_max);
    }
    for (auto [name, v] : {std::pair{"k_max", c.k_max}, std::pair{"shale_k_max", c.shale_k_max}})
        if (v < 0 || v > c.grid.n_x / 2 - 1)
            fail(d, P("/fock") / name, "CFG_KMAX", std::string(name) + " must lie in [0, n_x/2 - 1]");
    if (c.n_max < 0 || c.n_max > 16) fail(d, P("/fock/n_max"), "CFG_FOCK", "n_max must lie in [0, 16]");
    c.perturbations = perturbations(d, P("/perturbation"));
    if (d.root.contains("tolerances")) {
        std::set<std::string> names;
        for (const auto& [k, v] : default_tolerances()) names.insert(k);
        allow_keys(d, P("/tolerances"), names);
        for (auto& [k, v] : c.tolerances) {
            get(d, P("/tolerances") / k, v);
            if (!(v > 0)) fail(d, P("/tolerances") / k, "CFG_TOLERANCE", "tolerance '" + k + "' must be positive");
        }
    }
    if (d.root.contains("causality")) {
        allow_keys(d, P("/causality"), {"h1", "h2", "h3", "grid_maps"});
        c.causality.present = true;
        c.causality.h1 = perturbations(d, P("/causality/h1"));
        c.causality.h2 = perturbations(d, P("/causality/h2"));
        c.causality.h3 = perturbations(d, P("/causality/h3"));
        get(d, P("/causality/grid_maps"), c.causality.grid_maps);
    }
    if (d.root.contains("covariance")) {
        allow_keys(d, P("/covariance"), {"t0", "x0", "r_t", "r_x", "sharpness", "s", "refine"});
        auto& v = c.covariance;
        get(d, P("/covariance/t0"), v.shape.t0);
        get(d, P("/covariance/x0"), v.shape.x0);
        get(d, P("/covariance/r_t"), v.shape.r_t);
        get(d, P("/covariance/r_x"), v.shape.r_x);
        get(d, P("/covariance/sharpness"), v.shape.sharpness);
        get(d, P("/covariance/s"), v.s);
        get(d, P("/covariance/refine"), v.refine);
        if (!(v.shape.r_t > 0) || !(v.shape.r_x > 0) || !(v.shape.sharpness > 0))
            fail(d, P("/covariance"), "CFG_RADIUS", "diffeomorphism radii and sharpness must be positive");
        if (!TimeBumpDiffeo{v.shape, v.s}.admissible())
            fail(d, P("/covariance/s"), "CFG_DIFFEO", "time-bump flow parameter is not invertible");
    }
    if (d.root.contains("locality")) {
        allow_keys(d, P("/locality"), {"t_minus", "t_plus", "n_max"});
        get(d, P("/locality/t_minus"), c.locality.t_minus);
        get(d, P("/locality/t_plus"), c.locality.t_plus);
        get(d, P("/locality/n_max"), c.locality.n_max);
        if (c.locality.n_max < 1 || c.locality.n_max > 4)
            fail(d, P("/locality/n_max"), "CFG_FOCK", "locality n_max must lie in [1, 4]");
    }
    if (d.root.contains("stress")) {
        allow_keys(d, P("/stress"), {"mode", "eps"});
        get(d, P("/stress/mode"), c.stress.mode);
        if (d.root.contains(P("/stress/eps"))) {
            const json& a = d.root.at(P("/stress/eps"));
            if (!a.is_array() || a.size() < 2) fail(d, P("/stress/eps"), "CFG_EPS", "eps must be an array of >= 2 numbers");
            c.stress.eps.clear();
            for (const auto& v : a) {
                if (!v.is_number() || !(v.get<double>() > 0)) fail(d, P("/stress/eps"), "CFG_EPS", "eps entries must be positive numbers");
                c.stress.eps.push_back(v.get<double>());
            }
        }
        if (std::abs(c.stress.mode) > c.k_max) fail(d, P("/stress/mode"), "CFG_KMAX", "stress mode outside |k| <= k_max");
    }
    if (d.root.contains("sweep")) {
        allow_keys(d, P("/sweep"), {"n_s", "delta"});
        get(d, P("/sweep/n_s"), c.sweep.n_s);
        get(d, P("/sweep/delta"), c.sweep.delta);
        if (c.sweep.n_s < 1) fail(d, P("/sweep/n_s"), "CFG_SWEEP", "n_s must be >= 1");
        if (!(c.sweep.delta > 0)) fail(d, P("/sweep/delta"), "CFG_SWEEP", "delta must be positive");
    }
    return c;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

/// Canonical text: every field explicit, fixed order, 17 significant digits.
inline std::string canonicalize(const ScenarioConfig& c) {
    std::string o;
    auto line = [&](const std::string& k, const std::string& v) { o += k + " = " + v + "\n"; };
    auto num = [&](const std::string& k, double v) { line(k, format_double(v)); };
    auto integer = [&](const std::string& k, long long v) { line(k, std::to_string(v)); };
    auto str = [&](const std::string& k, const std::string& v) { line(k, json(v).dump()); };
    auto boolean = [&](const std::string& k, bool v) { line(k, v ? "true" : "false"); };
    auto specs = [&](const std::string& table, const std::vector<PerturbationSpec>& v) {
        for (const auto& s : v) {
            o += "\n[[" + table + "]]\n";
            str("kind", to_string(s.kind));
            num("t0", s.shape.t0);
            num("x0", s.shape.x0);
            num("r_t", s.shape.r_t);
            num("r_x", s.shape.r_x);
            num("amplitude", s.amplitude);
            num("sharpness", s.shape.sharpness);
            str("profile", s.shape.profile == Profile::box ? "box" : "smooth");
        }
    };
    str("id", c.id);
    integer("seed", static_cast<long long>(c.seed));
    std::string checks = "[";
    for (std::size_t i = 0; i < c.checks.size(); ++i) checks += (i ? ", " : "") + json(c.checks[i]).dump();
    line("checks", checks + "]");
    o += "\n[grid]\n";
    integer("n_x", c.grid.n_x);
    num("circumference", c.grid.circumference);
    num("t_min", c.grid.t_min);
    num("t_max", c.grid.t_max);
    num("dt", c.grid.dt);
    num("mass", c.grid.mass);
    o += "\n[evolution]\n";
    integer("substeps", c.evolution.substeps_per_dt);
    integer("interp_order", c.evolution.interp_order);
    boolean("dealias", c.evolution.dealias);
    num("filter_cutoff", c.evolution.filter_cutoff);
    num("filter_order", c.evolution.filter_order);
    o += "\n[slices]\n";
    num("t_minus", c.slice_minus());
    num("t_plus", c.slice_plus());
    o += "\n[fock]\n";
    integer("k_max", c.k_max);
    integer("n_max", c.n_max);
    integer("shale_k_max", c.shale_k_max);
    o += "\n[tolerances]\n";
    for (const auto& [k, v] : c.tolerances) num(k, v);
    o += "\n[covariance]\n";
    num("t0", c.covariance.shape.t0);
    num("x0", c.covariance.shape.x0);
    num("r_t", c.covariance.shape.r_t);
    num("r_x", c.covariance.shape.r_x);
    num("sharpness", c.covariance.shape.sharpness);
    num("s", c.covariance.s);
    boolean("refine", c.covariance.refine);
    o += "\n[locality]\n";
    num("t_minus", std::isnan(c.locality.t_minus) ? c.slice_minus() : c.locality.t_minus);
    num("t_plus", std::isnan(c.locality.t_plus) ? c.slice_plus() : c.locality.t_plus);
    integer("n_max", c.locality.n_max);
    o += "\n[stress]\n";
    integer("mode", c.stress.mode);
    std::string eps = "[";
    for (std::size_t i = 0; i < c.stress.eps.size(); ++i) eps += (i ? ", " : "") + format_double(c.stress.eps[i]);
    line("eps", eps + "]");
    o += "\n[sweep]\n";
    integer("n_s", c.sweep.n_s);
    num("delta", c.sweep.delta);
    if (c.causality.present) {
        o += "\n[causality]\n";
        boolean("grid_maps", c.causality.grid_maps);
        specs("causality.h1", c.causality.h1);
        specs("causality.h2", c.causality.h2);
        specs("causality.h3", c.causality.h3);
    }
    specs("perturbation", c.perturbations);
    return o;
}

/// FNV-1a over the canonical text, as 16 hex digits.
inline std::string config_hash(const ScenarioConfig& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canonicalize(c)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct CheckResult {
    std::string name;
    std::string status = "pass";  // pass, fail, skip, rejected, error
    double measured = 0.0, tolerance = 0.0;
    double runtime_s = 0.0;
    json details = json::object();
    std::map<std::string, std::string> artifacts;  // file name -> contents
};

namespace checks {

inline FockSetting setting(const ScenarioConfig& c) {
    return FockSetting::make(c.grid, c.evolution, c.k_max, c.n_max, c.slice_minus(), c.slice_plus());
}

inline double num(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

inline void verdict(CheckResult& r, bool ok) { r.status = ok ? "pass" : "fail"; }

inline CheckResult validate_check(const ScenarioConfig& c) {
    CheckResult r;
    MetricField g = build_metric(c.grid, c.perturbations);
    ValidityReport v = validate(g);
    // Blend with the flat metric through a smooth weight, which must stay admissible.
    Mat chi(c.grid.n_t(), c.grid.n_x);
    for (int i = 0; i < chi.rows(); ++i)
        for (int j = 0; j < chi.cols(); ++j)
            chi(i, j) = 0.5 * (1.0 + std::cos(2.0 * pi * c.grid.x(j) / c.grid.circumference)) *
                        bump(c.grid.t(i) / (0.5 * (c.grid.t_max - c.grid.t_min) + 1e-12));
    ValidityReport vb = validate(blend(g, flat_metric(c.grid), chi));
    r.measured = std::min(v.worst_margin, vb.worst_margin);
    r.tolerance = c.tol("validate_margin");
    r.details = {{"lorentzian", v.lorentzian},
                 {"dt_temporal", v.dt_temporal},
                 {"dt_timelike_vectorfield", v.dt_timelike_vectorfield},
                 {"worst_margin", v.worst_margin},
                 {"failing_points", v.failing_points.size()},
                 {"blend_ok", vb.ok()},
                 {"blend_worst_margin", vb.worst_margin}};
    verdict(r, v.ok() && vb.ok() && r.measured >= r.tolerance);
    return r;
}

inline CheckResult evolve_check(const ScenarioConfig& c) {
    CheckResult r;
    MetricField g = build_metric(c.grid, c.perturbations), g0 = flat_metric(c.grid);
    SymplecticMap W = scattering_map(g, g0, c.slice_minus(), c.slice_plus(), c.evolution);
    SymplecticMap V = evolution_map(g, c.slice_minus(), c.slice_plus(), c.evolution);
    double sw = symplectic_defect(W), sv = symplectic_defect(V);
    // Flat band evolution against the exact per-mode rotation blocks.
    OneParticleStructure ops = build_one_particle(c.grid.mass, c.grid, c.k_max);
    SymplecticMap F = evolution_map(g0, c.slice_minus(), c.slice_plus(), c.evolution, ops.modes);
    const int M = ops.size();
    const double T = c.slice_plus() - c.slice_minus();
    Mat R = Mat::Zero(2 * M, 2 * M);
    for (int i = 0; i < M; ++i) {
        double w = ops.omega()(i);
        R(i, i) = R(M + i, M + i) = std::cos(w * T);
        R(i, M + i) = std::sin(w * T) / w;
        R(M + i, i) = -w * std::sin(w * T);
    }
    double rot = max_abs(Mat(F.matrix - R));
    Mat E = W.matrix - Mat::Identity(W.matrix.rows(), W.matrix.cols());
    r.measured = std::max(sw, sv);
    r.tolerance = c.tol("symplectic");
    r.details = {{"scattering_symplectic_defect", sw},
                 {"evolution_symplectic_defect", sv},
                 {"flat_rotation_error", rot},
                 {"scattering_max_entry", max_abs(E)}};
    verdict(r, r.measured <= r.tolerance && rot <= c.tol("flat_rotation"));
    return r;
}

inline CheckResult bogoliubov_check(const ScenarioConfig& c) {
    CheckResult r;
    FockSetting s = setting(c);
    ScatteringCache cache(s);
    BogoliubovData b = cache.blocks(build_metric(c.grid, c.perturbations), flat_metric(c.grid));
    r.measured = b.group_defect;
    r.tolerance = c.tol("group");
    r.details = {{"group_defect", b.group_defect},         {"K_symmetry_defect", b.K_symmetry_defect},
                 {"L_symmetry_defect", b.L_symmetry_defect}, {"qtr_symmetry_defect", b.qtr_symmetry_defect},
                 {"qrh_symmetry_defect", b.qrh_symmetry_defect}, {"dual_inverse_defect", b.dual_inverse_defect},
                 {"min_singular_q", b.min_singular_q},     {"op_norm_K", b.op_norm_K},
                 {"op_norm_L", b.op_norm_L},               {"hs_norm_r", b.hs_norm_r}};
    verdict(r, b.group_defect <= c.tol("group") && b.K_symmetry_defect <= c.tol("k_symmetry") &&
                   b.min_singular_q >= 1.0 - c.tol("min_singular") && b.op_norm_K < 1.0 &&
                   b.dual_inverse_defect <= c.tol("dual_inverse"));
    return r;
}

inline CheckResult shale_check(const ScenarioConfig& c) {
    CheckResult r;
    OneParticleStructure ops = build_one_particle(c.grid.mass, c.grid, c.shale_k_max);
    SymplecticMap W = scattering_map(build_metric(c.grid, c.perturbations), flat_metric(c.grid), c.slice_minus(),
                                     c.slice_plus(), c.evolution, ops.modes);
    ShaleReport s = shale_sweep(blocks(W, ops));
    r.measured = s.tail_fraction;
    r.tolerance = c.tol("shale_tail");
    r.details = {{"tail_fraction", s.tail_fraction},
                 {"tail_decay_exponent", s.tail_decay_exponent},
                 {"monotone", s.monotone},
                 {"hs_norm_r", s.hs_norm_r.back()}};
    std::string csv = "k,omega,row_norm,hs_norm_cutoff\n";
    for (std::size_t k = 0; k < s.row_k.size(); ++k)
        csv += std::to_string(s.row_k[k]) + "," + format_double(s.row_omega[k]) + "," + format_double(s.row_norm[k]) +
               "," + format_double(s.hs_norm_r[k]) + "\n";
    r.artifacts["shale.csv"] = csv;
    verdict(r, s.monotone && s.tail_fraction < c.tol("shale_tail") && s.tail_decay_exponent <= -c.tol("shale_slope"));
    return r;
}

inline CheckResult implementer_check(const ScenarioConfig& c) {
    CheckResult r;
    FockSetting s = setting(c);
    ScatteringCache cache(s);
    MetricField g = build_metric(c.grid, c.perturbations), g0 = flat_metric(c.grid);
    Mat W = cache.modal_map(g, g0);
    BogoliubovData b = blocks_of_modal(W, s.ops, true);
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> n01;
    Vec v(2 * s.ops.size());
    for (int i = 0; i < v.size(); ++i) v(i) = n01(rng);
    v /= v.norm();
    json ladder = json::array();
    bool decreasing = true;
    double prev = std::numeric_limits<double>::infinity(), defect = 0.0;
    for (int n = std::min(4, c.n_max); n <= c.n_max; n += 2) {
        auto basis = std::make_shared<FockBasis>(s.ops.size(), n);
        Implementer U(b, basis);
        defect = intertwining_defect(U, W, v, s.ops, FockVector::vacuum(basis));
        ladder.push_back({{"n_max", n}, {"defect", defect}});
        if (defect > prev && prev > 1e-15) decreasing = false;
        prev = defect;
    }
    Implementer U(b, s.basis);
    FockVector vac = FockVector::vacuum(s.basis);
    Complex overlap = vac.dot(U.apply(vac));
    double det_quarter = vacuum_factor(b.K);
    double overlap_err = std::abs(overlap - det_quarter);
    // Cocycle of W with itself against the Fock-level phase.
    BogoliubovData bb = compose_blocks(b, b);
    Complex sigma = cocycle(b, b);
    Complex phase = fock_phase(Implementer(bb, s.basis), U, U);
    r.measured = defect;
    r.tolerance = c.tol("intertwining");
    r.details = {{"intertwining_ladder", ladder},
                 {"monotone", decreasing},
                 {"vacuum_overlap_re", overlap.real()},
                 {"vacuum_overlap_im", overlap.imag()},
                 {"det_quarter", det_quarter},
                 {"vacuum_overlap_error", overlap_err},
                 {"cocycle_re", sigma.real()},
                 {"cocycle_im", sigma.imag()},
                 {"cocycle_error", std::abs(sigma - phase)},
                 {"cocycle_modulus_error", std::abs(std::abs(sigma) - 1.0)},
                 {"expected_pairs", expected_pairs(U)}};
    verdict(r, defect <= r.tolerance && decreasing && overlap_err <= c.tol("vacuum_overlap") && overlap.real() > 0 &&
                   std::abs(sigma - phase) <= c.tol("cocycle") && std::abs(std::abs(sigma) - 1.0) <= c.tol("cocycle_modulus"));
    return r;
}

inline CheckResult causality_check_run(const ScenarioConfig& c) {
    CheckResult r;
    r.tolerance = c.tol("causality_fock");
    if (!c.causality.present) {
        r.status = "skip";
        r.details = {{"reason", "no [causality] table"}};
        return r;
    }
    FockSetting s = setting(c);
    ScatteringCache cache(s);
    try {
        CausalityReport k = causality_check(c.perturbations, c.causality.h1, c.causality.h2, c.causality.h3, cache,
                                            c.causality.grid_maps);
        // Band-projected maps only factorize approximately for spacelike
        // supports, so the grid maps decide the map level when present.
        double map = c.causality.grid_maps ? k.grid_map_defect : k.map_defect;
        r.measured = k.fock_distance;
        r.details = {{"map_level_defect", map},
                     {"band_map_defect", k.map_defect},
                     {"grid_map_defect", num(k.grid_map_defect)},
                     {"fock_distance", k.fock_distance},
                     {"fock_phase_re", k.fock_phase.real()},
                     {"fock_phase_im", k.fock_phase.imag()},
                     {"light_speed", k.light_speed}};
        verdict(r, map <= c.tol("causality_map") && k.fock_distance <= r.tolerance);
    } catch (const ConfigError& e) {
        if (e.code() != "CAUSALITY_PRECONDITION") throw;
        r.status = "rejected";
        r.details = {{"reason", e.what()}};
    }
    return r;
}

inline CheckResult covariance_check_run(const ScenarioConfig& c) {
    CheckResult r;
    FockSetting s = setting(c);
    CovarianceReport k = covariance_check({}, TimeBumpDiffeo{c.covariance.shape, c.covariance.s}, s, c.covariance.refine);
    r.measured = k.map_defect;
    r.tolerance = c.tol("covariance_map");
    r.details = {{"map_defect", k.map_defect},
                 {"grid_defect", k.grid_defect},
                 {"fock_distance", k.fock_distance},
                 {"refined_map_defect", num(k.refined_map_defect)},
                 {"refinement_ratio", num(k.refinement_ratio)}};
    bool ratio_ok = !c.covariance.refine || k.refinement_ratio >= c.tol("covariance_ratio");
    verdict(r, k.map_defect <= r.tolerance && k.fock_distance <= r.tolerance && ratio_ok);
    return r;
}

inline CheckResult locality_check_run(const ScenarioConfig& c) {
    CheckResult r;
    r.tolerance = c.tol("locality_map");
    if (c.perturbations.empty()) {
        r.status = "skip";
        r.details = {{"reason", "no perturbation"}};
        return r;
    }
    double tm = std::isnan(c.locality.t_minus) ? c.slice_minus() : c.locality.t_minus;
    double tp = std::isnan(c.locality.t_plus) ? c.slice_plus() : c.locality.t_plus;
    LocalityReport k = locality_check(c.perturbations, c.grid, c.evolution, tm, tp, c.locality.n_max);
    r.measured = k.map.max_entry_outside_shadow;
    r.details = {{"max_entry_outside_shadow", k.map.max_entry_outside_shadow},
                 {"max_entry_inside_shadow", k.map.max_entry_inside_shadow},
                 {"shadow_half_width", k.map.shadow_half_width},
                 {"vacuous", k.map.vacuous},
                 {"commutator", k.commutator},
                 {"field_norm", k.field_norm},
                 {"fock_modes", k.fock_modes},
                 {"fock_n_max", k.fock_n_max}};
    if (k.map.vacuous) {
        r.status = "skip";
        r.details["reason"] = "causal shadow covers the whole circle";
        return r;
    }
    verdict(r, k.map.max_entry_outside_shadow <= r.tolerance && k.commutator <= c.tol("locality_commutator"));
    return r;
}

inline CheckResult holonomy_check(const ScenarioConfig& c) {
    CheckResult r;
    r.tolerance = c.tol("holonomy");
    if (c.perturbations.empty()) {
        r.status = "skip";
        r.details = {{"reason", "no perturbation"}};
        return r;
    }
    FockSetting s = setting(c);
    ScatteringCache cache(s);
    MetricField g0 = flat_metric(c.grid);
    std::vector<PerturbationSpec> ha{c.perturbations.front()};
    std::vector<PerturbationSpec> hb(c.perturbations.begin() + 1, c.perturbations.end());
    MetricField a = build_metric(c.grid, ha), ab = build_metric(c.grid, c.perturbations);
    MetricPath loop{g0, {g0, a, ab, g0}, 3};
    double endpoint = 0.0;
    if (!hb.empty()) {
        MetricField b = build_metric(c.grid, hb);
        loop = MetricPath{g0, {g0, a, ab, b, g0}, 3};
        TransportResult p1 = transport(MetricPath{g0, {g0, a, ab}, 3}, cache, false);
        TransportResult p2 = transport(MetricPath{g0, {g0, b, ab}, 3}, cache, false);
        endpoint = operator_distance(as_map(p1.S), as_map(p2.S), s).value;
    }
    HolonomyReport h = holonomy_centrality(loop, cache);
    HolonomyReport rev = holonomy_centrality(loop.reversed(), cache);
    double modulus = std::abs(std::abs(h.scalar) - 1.0);
    r.measured = h.off_scalar_defect;
    r.details = {{"scalar_re", h.scalar.real()},
                 {"scalar_im", h.scalar.imag()},
                 {"modulus_error", modulus},
                 {"predicted_scalar_re", h.predicted_scalar.real()},
                 {"predicted_scalar_im", h.predicted_scalar.imag()},
                 {"reversed_conjugate_error", std::abs(rev.scalar - std::conj(h.scalar))},
                 {"endpoint_distance", endpoint}};
    verdict(r, h.off_scalar_defect <= r.tolerance && modulus <= c.tol("holonomy_modulus") &&
                   endpoint <= c.tol("endpoint"));
    return r;
}

inline CheckResult stress_check(const ScenarioConfig& c) {
    CheckResult r;
    r.tolerance = c.tol("sector_leakage");
    FockSetting s = setting(c);
    ScatteringCache cache(s);
    std::vector<int> occ(s.ops.size(), 0);
    occ[s.ops.modes->index_of(c.stress.mode)] = 1;
    FockVector v = FockVector::basis_state(s.basis, occ);
    StressEnergyReport k = stress_energy_action({}, c.perturbations, v, cache, c.stress.eps);
    std::vector<PerturbationSpec> h1{c.perturbations.empty() ? PerturbationSpec{} : c.perturbations.front()};
    std::vector<PerturbationSpec> h2 = c.perturbations.size() > 1
                                           ? std::vector<PerturbationSpec>(c.perturbations.begin() + 1, c.perturbations.end())
                                           : h1;
    double lin = linearity_defect({}, h1, h2, v, cache, c.stress.eps);
    PerturbationSpec lz;
    lz.kind = PerturbationKind::lie_derivative;
    lz.amplitude = 1.0;
    lz.shape = c.covariance.shape;
    double lie = stress_energy_action({}, {lz}, v, cache, c.stress.eps).derivative_norm;
    r.measured = k.sector_leakage;
    json norms = k.estimate_norms;
    r.details = {{"derivative_norm", k.derivative_norm},
                 {"convergence_order", num(k.convergence_order)},
                 {"converged", k.converged},
                 {"estimate_norms", norms},
                 {"sector_leakage", k.sector_leakage},
                 {"linearity_defect", lin},
                 {"lie_derivative_norm", lie}};
    bool order_ok = k.converged && (std::isnan(k.convergence_order) || k.convergence_order >= c.tol("fd_order"));
    verdict(r, order_ok && k.sector_leakage <= r.tolerance && lin <= c.tol("linearity") && lie <= c.tol("lie_derivative"));
    return r;
}

inline CheckResult sweep_check(const ScenarioConfig& c) {
    CheckResult r;
    r.tolerance = c.tol("fd_order");
    FockSetting s = setting(c);
    ScatteringCache cache(s);
    SmoothnessReport k =
        smoothness_sweep({}, c.perturbations, FockVector::vacuum(s.basis), cache, c.sweep.n_s, c.sweep.delta);
    r.measured = num(k.min_order);
    r.details = {{"min_order", num(k.min_order)}, {"vacuum_chain_defect", k.vacuum_chain_defect}};
    r.artifacts["sweep.csv"] = k.csv();
    bool flat = std::isinf(k.min_order);  // every difference at roundoff
    verdict(r, (flat || k.min_order >= r.tolerance) && k.vacuum_chain_defect <= c.tol("vacuum_chain"));
    return r;
}

inline CheckResult run_one(const ScenarioConfig& c, const std::string& name) {
    using Fn = CheckResult (*)(const ScenarioConfig&);
    static const std::map<std::string, Fn> table{
        {"validate", validate_check},   {"evolve", evolve_check},          {"bogoliubov", bogoliubov_check},
        {"shale", shale_check},         {"implementer", implementer_check}, {"causality", causality_check_run},
        {"covariance", covariance_check_run}, {"locality", locality_check_run}, {"holonomy", holonomy_check},
        {"stress", stress_check},       {"sweep", sweep_check}};
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("CFG_CHECK", "unknown check '" + name + "'");
    auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
        // Only `validate` looks at an inadmissible metric; every other check
        // would compute maps for a field equation that is not hyperbolic.
        ValidityReport v = name == "validate" ? ValidityReport{} : validate(build_metric(c.grid, c.perturbations));
        if (!v.ok()) {
            r.status = "rejected";
            r.details = {{"reason", "scenario metric is not admissible"},
                         {"failing_points", v.failing_points.size()},
                         {"worst_margin", v.worst_margin}};
        } else {
            r = it->second(c);
        }
    } catch (const std::exception& e) {
        r = CheckResult{};
        r.status = "error";
        r.details = {{"error", e.what()}};
    }
    r.name = name;
    r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace checks

struct RunReport {
    std::string scenario, config_hash;
    std::uint64_t seed = 0;
    std::vector<CheckResult> checks;
    std::vector<std::string> artifacts;

    bool all_pass() const {
        for (const auto& c : checks)
            if (c.status != "pass" && c.status != "skip") return false;
        return true;
    }
    bool any(const std::string& status) const {
        for (const auto& c : checks)
            if (c.status == status) return true;
        return false;
    }

    json to_json() const {
        json j;
        j["scenario"] = scenario;
        j["tool_version"] = tool_version;
        j["config_hash"] = config_hash;
        j["seed"] = seed;
        json arr = json::array();
        for (const auto& c : checks)
            arr.push_back({{"name", c.name},
                           {"status", c.status},
                           {"measured", c.measured},
                           {"tolerance", c.tolerance},
                           {"runtime_s", c.runtime_s},
                           {"details", c.details}});
        j["checks"] = arr;
        j["artifacts"] = artifacts;
        return j;
    }
};

/// Checks to run: the explicit selection, else the config's list, else all.
inline std::vector<std::string> resolve_checks(const ScenarioConfig& c, const std::vector<std::string>& selection) {
    const std::vector<std::string>& src = !selection.empty() ? selection : (!c.checks.empty() ? c.checks : all_checks());
    for (const auto& n : src)
        if (std::find(all_checks().begin(), all_checks().end(), n) == all_checks().end())
            throw ConfigError("CFG_CHECK", "unknown check '" + n + "'");
    return src;
}

/// Runs every (scenario, check) pair on `workers` threads. Results land in
/// fixed slots, so the reports do not depend on the worker count.
inline std::vector<RunReport> run_scenarios(const std::vector<ScenarioConfig>& configs,
                                            const std::vector<std::vector<std::string>>& selections, int workers) {
    std::vector<RunReport> reports(configs.size());
    std::vector<std::pair<std::size_t, std::size_t>> tasks;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        reports[i].scenario = configs[i].id;
        reports[i].config_hash = config_hash(configs[i]);
        reports[i].seed = configs[i].seed;
        reports[i].checks.resize(selections[i].size());
        for (std::size_t k = 0; k < selections[i].size(); ++k) tasks.emplace_back(i, k);
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t; (t = next.fetch_add(1)) < tasks.size();) {
            auto [i, k] = tasks[t];
            reports[i].checks[k] = checks::run_one(configs[i], selections[i][k]);
        }
    };
    workers = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& r : reports)
        for (const auto& c : r.checks)
            for (const auto& [name, text] : c.artifacts) r.artifacts.push_back(name);
    return reports;
}

inline RunReport run(const ScenarioConfig& c, const std::vector<std::string>& selection = {}, int workers = 1) {
    return run_scenarios({c}, {resolve_checks(c, selection)}, workers).front();
}

/// Writes report.json and the per-check CSVs into dir.
inline void write_report(const RunReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.json") << r.to_json().dump(2) << "\n";
    for (const auto& c : r.checks)
        for (const auto& [name, text] : c.artifacts) std::ofstream(dir / name) << text;
}

/// Report with run-dependent fields removed.
inline json comparable(json j) {
    j = json::parse(j.dump());  // non-finite numbers become null, as in a written report
    if (j.contains("checks"))
        for (auto& c : j["checks"]) c.erase("runtime_s");
    return j;
}

/// JSON pointers at which two reports differ, ignoring runtimes.
inline std::vector<std::string> golden_diff(const json& report, const json& golden) {
    std::vector<std::string> out;
    json patch = json::diff(comparable(golden), comparable(report));
    for (const auto& op : patch) out.push_back(op["op"].get<std::string>() + " " + op["path"].get<std::string>());
    return out;
}

}  // namespace kgconn
