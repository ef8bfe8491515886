#pragma once

// Sampled Lorentzian metrics on the cylinder R_t x S^1, their compactly
// supported perturbations, time-bump diffeomorphism pullbacks and the
// pointwise admissibility check (Lorentzian, dt temporal, d_t timelike).

#include "kgconn/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace kgconn {

struct GridSpec {
    int n_x = 64;
    double circumference = 8.0 * pi;
    double t_min = -4.0;
    double t_max = 4.0;
    double dt = 1.0 / 32.0;
    double mass = 1.0;

    int n_t() const { return static_cast<int>(std::lround((t_max - t_min) / dt)) + 1; }
    double dx() const { return circumference / n_x; }
    double x(int j) const { return j * dx(); }
    double t(int i) const { return t_min + i * dt; }

    void check() const {
        if (n_x < 8 || n_x % 2 != 0) throw ConfigError("CFG_NX", "n_x must be even and >= 8");
        if (!(circumference > 0)) throw ConfigError("CFG_CIRCUMFERENCE", "circumference must be positive");
        if (!(dt > 0)) throw ConfigError("CFG_DT", "dt must be positive");
        if (!(t_min < t_max)) throw ConfigError("CFG_TRANGE", "t_min must be below t_max");
        double steps = (t_max - t_min) / dt;
        if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
            throw ConfigError("CFG_DT", "t_max - t_min must be an integer multiple of dt");
        if (!(mass > 0)) throw ConfigError("CFG_MASS", "mass must be positive");
    }

    bool operator==(const GridSpec&) const = default;
};

/// Signed minimal-image displacement x - x0 on a circle of circumference c.
inline double circle_delta(double x, double x0, double c) {
    double d = std::fmod(x - x0, c);
    if (d > 0.5 * c) d -= c;
    if (d < -0.5 * c) d += c;
    return d;
}

enum class Profile { smooth, box };

// Peak-normalized bump exp(-a rho^2 / (1 - rho^2)) on |rho| < 1. With a = 1
// this is the textbook exp(1 - 1/(1 - rho^2)); larger a concentrates the bump
// and makes its spectrum decay much faster on a coarse grid.
inline double bump(double rho, Profile p = Profile::smooth, double a = 1.0) {
    if (std::abs(rho) >= 1.0) return 0.0;
    if (p == Profile::box) return 1.0;
    double r2 = rho * rho;
    return std::exp(-a * r2 / (1.0 - r2));
}

inline double bump_derivative(double rho, Profile p = Profile::smooth, double a = 1.0) {
    if (p == Profile::box || std::abs(rho) >= 1.0) return 0.0;
    double w = 1.0 - rho * rho;
    return bump(rho, p, a) * (-2.0 * a * rho / (w * w));
}

// max |B'| for the smooth bump, used for the diffeomorphism admissibility bound.
inline double bump_derivative_bound(double a = 1.0) {
    double best = 0;
    for (int i = 1; i < 20000; ++i) best = std::max(best, std::abs(bump_derivative(i / 20000.0, Profile::smooth, a)));
    return best;
}

/// Spacetime rectangle [t_lo, t_hi] x (x_center +- x_half) on the circle.
struct SupportBox {
    double t_lo = 0, t_hi = 0;
    double x_center = 0, x_half = 0;
};

enum class PerturbationKind { conformal_bump, lapse_bump, shift_bump, lie_derivative };

inline std::string to_string(PerturbationKind k) {
    switch (k) {
        case PerturbationKind::conformal_bump: return "conformal_bump";
        case PerturbationKind::lapse_bump: return "lapse_bump";
        case PerturbationKind::shift_bump: return "shift_bump";
        case PerturbationKind::lie_derivative: return "lie_derivative";
    }
    return "?";
}

inline PerturbationKind parse_kind(const std::string& s) {
    if (s == "conformal_bump") return PerturbationKind::conformal_bump;
    if (s == "lapse_bump") return PerturbationKind::lapse_bump;
    if (s == "shift_bump") return PerturbationKind::shift_bump;
    if (s == "lie_derivative") return PerturbationKind::lie_derivative;
    throw ConfigError("CFG_KIND", "unknown perturbation kind '" + s + "'");
}

/// Separable bump b(t) c(x) centred at (t0, x0) with radii (r_t, r_x).
struct BumpShape {
    double t0 = 0, x0 = 0, r_t = 1, r_x = 1;
    Profile profile = Profile::smooth;
    double sharpness = 1.0;

    double b(double t) const { return bump((t - t0) / r_t, profile, sharpness); }
    double db(double t) const { return bump_derivative((t - t0) / r_t, profile, sharpness) / r_t; }
    double c(double x, double circ) const { return bump(circle_delta(x, x0, circ) / r_x, profile, sharpness); }
    double dc(double x, double circ) const {
        return bump_derivative(circle_delta(x, x0, circ) / r_x, profile, sharpness) / r_x;
    }
    SupportBox box() const { return {t0 - r_t, t0 + r_t, x0, r_x}; }
};

/// For lie_derivative the amplitude is the flow parameter s and the tensor is
/// s * L_Z eta with Z = b(t) c(x) d_t, computed in closed form on the flat metric.
struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::conformal_bump;
    BumpShape shape;
    double amplitude = 0.0;
};

struct MetricField {
    GridSpec grid;
    Mat g_tt, g_tx, g_xx;  // (n_t, n_x)
    std::vector<SupportBox> supports;
    std::string id = "flat";

    double det(int i, int j) const { return g_tt(i, j) * g_xx(i, j) - g_tx(i, j) * g_tx(i, j); }

    bool row_is_flat(int i) const {
        for (int j = 0; j < grid.n_x; ++j)
            if (g_tt(i, j) != 1.0 || g_tx(i, j) != 0.0 || g_xx(i, j) != -1.0) return false;
        return true;
    }

    /// Inclusive range of time rows that differ from flat; nullopt when flat.
    std::optional<std::pair<int, int>> nonflat_rows() const {
        int lo = -1, hi = -1;
        for (int i = 0; i < grid.n_t(); ++i)
            if (!row_is_flat(i)) {
                if (lo < 0) lo = i;
                hi = i;
            }
        if (lo < 0) return std::nullopt;
        return std::make_pair(lo, hi);
    }
};

inline MetricField flat_metric(const GridSpec& grid) {
    grid.check();
    MetricField m;
    m.grid = grid;
    m.g_tt = Mat::Ones(grid.n_t(), grid.n_x);
    m.g_tx = Mat::Zero(grid.n_t(), grid.n_x);
    m.g_xx = -Mat::Ones(grid.n_t(), grid.n_x);
    return m;
}

/// Closed-form perturbation tensor of one spec at (t, x) on a flat background.
inline void perturbation_tensor(const PerturbationSpec& s, double t, double x, double circ,
                                double& h_tt, double& h_tx, double& h_xx) {
    const BumpShape& b = s.shape;
    double phi = b.b(t) * b.c(x, circ);
    h_tt = h_tx = h_xx = 0.0;
    switch (s.kind) {
        case PerturbationKind::conformal_bump:
            h_tt = s.amplitude * phi;
            h_xx = -s.amplitude * phi;
            break;
        case PerturbationKind::lapse_bump: h_tt = s.amplitude * phi; break;
        case PerturbationKind::shift_bump: h_tx = s.amplitude * phi; break;
        case PerturbationKind::lie_derivative:
            // L_Z eta for Z = b c d_t: h_tt = 2 b' c, h_tx = b c', h_xx = 0.
            h_tt = s.amplitude * 2.0 * b.db(t) * b.c(x, circ);
            h_tx = s.amplitude * b.b(t) * b.dc(x, circ);
            break;
    }
}

inline std::string spec_id(const PerturbationSpec& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s(%.6g,%.6g;%.6g,%.6g;%.6g;a=%.6g%s)", to_string(s.kind).c_str(),
                  s.shape.t0, s.shape.x0, s.shape.r_t, s.shape.r_x, s.amplitude, s.shape.sharpness,
                  s.shape.profile == Profile::box ? ";box" : "");
    return buf;
}

inline MetricField build_metric(const GridSpec& grid, const std::vector<PerturbationSpec>& specs) {
    MetricField m = flat_metric(grid);
    std::string id;
    for (const auto& s : specs) {
        const BumpShape& b = s.shape;
        if (!(b.r_t > 0) || !(b.r_x > 0)) throw ConfigError("CFG_RADIUS", "bump radii must be positive");
        if (!(b.t0 - b.r_t > grid.t_min) || !(b.t0 + b.r_t < grid.t_max))
            throw ConfigError("CFG_SUPPORT", "perturbation support exceeds the temporal extent");
        if (2.0 * b.r_x > grid.circumference)
            throw ConfigError("CFG_SUPPORT", "spatial radius exceeds half the circumference");
        if (s.amplitude == 0.0) continue;
        for (int i = 0; i < grid.n_t(); ++i) {
            double t = grid.t(i);
            if (b.b(t) == 0.0 && (s.kind != PerturbationKind::lie_derivative || b.db(t) == 0.0)) continue;
            for (int j = 0; j < grid.n_x; ++j) {
                double htt, htx, hxx;
                perturbation_tensor(s, t, grid.x(j), grid.circumference, htt, htx, hxx);
                m.g_tt(i, j) += htt;
                m.g_tx(i, j) += htx;
                m.g_xx(i, j) += hxx;
            }
        }
        m.supports.push_back(b.box());
        id += (id.empty() ? "" : "+") + spec_id(s);
    }
    m.id = id.empty() ? "flat" : id;
    return m;
}

struct FailingPoint {
    int i, j;
    std::string condition;
};

struct ValidityReport {
    bool lorentzian = true;
    bool dt_temporal = true;
    bool dt_timelike_vectorfield = true;
    double worst_margin = 0;
    std::vector<FailingPoint> failing_points;  // capped
    bool ok() const { return lorentzian && dt_temporal && dt_timelike_vectorfield; }
};

inline ValidityReport validate(const MetricField& m, std::size_t max_failures = 64) {
    ValidityReport r;
    r.worst_margin = std::numeric_limits<double>::infinity();
    auto fail = [&](int i, int j, const char* what) {
        if (r.failing_points.size() < max_failures) r.failing_points.push_back({i, j, what});
    };
    for (int i = 0; i < m.g_tt.rows(); ++i)
        for (int j = 0; j < m.g_tt.cols(); ++j) {
            double det = m.det(i, j);
            double gtt_inv = det != 0.0 ? m.g_xx(i, j) / det : -std::numeric_limits<double>::infinity();
            double gtt = m.g_tt(i, j);
            if (!(det < 0)) {
                r.lorentzian = false;
                fail(i, j, "lorentzian");
            }
            if (!(gtt_inv > 0)) {
                r.dt_temporal = false;
                fail(i, j, "dt_temporal");
            }
            if (!(gtt > 0)) {
                r.dt_timelike_vectorfield = false;
                fail(i, j, "dt_timelike");
            }
            r.worst_margin = std::min({r.worst_margin, -det, gtt_inv, gtt});
        }
    return r;
}

inline MetricField blend(const MetricField& g1, const MetricField& g2, const Mat& chi) {
    if (g1.g_tt.rows() != g2.g_tt.rows() || g1.g_tt.cols() != g2.g_tt.cols() ||
        chi.rows() != g1.g_tt.rows() || chi.cols() != g1.g_tt.cols() || !(g1.grid == g2.grid))
        throw ConfigError("SHAPE", "blend inputs have mismatched shapes");
    if (chi.size() && (chi.minCoeff() < 0.0 || chi.maxCoeff() > 1.0))
        throw ConfigError("SHAPE", "blend weight must lie in [0, 1]");
    MetricField out = g1;
    Mat one = Mat::Ones(chi.rows(), chi.cols());
    out.g_tt = chi.cwiseProduct(g1.g_tt) + (one - chi).cwiseProduct(g2.g_tt);
    out.g_tx = chi.cwiseProduct(g1.g_tx) + (one - chi).cwiseProduct(g2.g_tx);
    out.g_xx = chi.cwiseProduct(g1.g_xx) + (one - chi).cwiseProduct(g2.g_xx);
    out.supports = g1.supports;
    out.supports.insert(out.supports.end(), g2.supports.begin(), g2.supports.end());
    out.id = "blend(" + g1.id + "," + g2.id + ")";
    return out;
}

/// Metric components at an arbitrary time, Lagrange-interpolated across
/// `order` neighbouring samples (exact sample reuse on grid times).
struct MetricSlice {
    Vec g_tt, g_tx, g_xx;
    bool flat = true;
};

inline int lagrange_weights(const GridSpec& g, double t, int order, std::vector<double>& w) {
    double pos = (t - g.t_min) / g.dt;
    int nt = g.n_t();
    double rp = std::round(pos);
    w.clear();
    if (std::abs(pos - rp) < 1e-10) {
        w.push_back(1.0);
        return std::clamp(static_cast<int>(rp), 0, nt - 1);
    }
    int start = static_cast<int>(std::floor(pos)) - order / 2 + 1;
    start = std::clamp(start, 0, nt - order);
    for (int a = 0; a < order; ++a) {
        double l = 1.0;
        for (int b = 0; b < order; ++b)
            if (b != a) l *= (pos - (start + b)) / double(a - b);
        w.push_back(l);
    }
    return start;
}

inline MetricSlice metric_slice(const MetricField& m, double t, int order = 8) {
    std::vector<double> w;
    int start = lagrange_weights(m.grid, t, order, w);
    MetricSlice s;
    int n = m.grid.n_x;
    s.g_tt = Vec::Zero(n);
    s.g_tx = Vec::Zero(n);
    s.g_xx = Vec::Zero(n);
    for (std::size_t a = 0; a < w.size(); ++a) {
        int i = start + static_cast<int>(a);
        s.g_tt += w[a] * m.g_tt.row(i).transpose();
        s.g_tx += w[a] * m.g_tx.row(i).transpose();
        s.g_xx += w[a] * m.g_xx.row(i).transpose();
        if (!m.row_is_flat(i)) s.flat = false;
    }
    if (s.flat) {  // remove interpolation roundoff on flat stencils
        s.g_tt.setOnes();
        s.g_tx.setZero();
        s.g_xx.setConstant(-1.0);
    }
    return s;
}

/// Time-bump flow phi_s(t, x) = (t + s b(t) c(x), x), or its exact inverse.
struct TimeBumpDiffeo {
    BumpShape shape;
    double s = 0.0;
    bool inverse = false;

    TimeBumpDiffeo inverted() const { return {shape, s, !inverse}; }

    /// Sufficient condition for phi_s to be a diffeomorphism: |s b' c| < 1.
    bool admissible() const {
        if (shape.profile != Profile::smooth) return false;
        return std::abs(s) * bump_derivative_bound(shape.sharpness) / shape.r_t < 1.0;
    }

    /// Image time T(t, x) and Jacobian entries dT/dt, dT/dx.
    void map(double t, double x, double circ, double& T, double& T_t, double& T_x) const {
        double c = shape.c(x, circ), dc = shape.dc(x, circ);
        if (!inverse) {
            T = t + s * shape.b(t) * c;
            T_t = 1.0 + s * shape.db(t) * c;
            T_x = s * shape.b(t) * dc;
            return;
        }
        // Solve tau + s b(tau) c = t for tau by Newton iteration.
        double tau = t;
        for (int it = 0; it < 100; ++it) {
            double f = tau + s * shape.b(tau) * c - t;
            double fp = 1.0 + s * shape.db(tau) * c;
            double step = f / fp;
            tau -= step;
            if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(tau))) break;
        }
        double jac = 1.0 + s * shape.db(tau) * c;
        T = tau;
        T_t = 1.0 / jac;
        T_x = -s * shape.b(tau) * dc / jac;
    }
};

/// Interpolate one component column at time T (polynomial in t).
inline double sample_at(const MetricField& m, const Mat& comp, double T, int j, int order = 8) {
    std::vector<double> w;
    int start = lagrange_weights(m.grid, T, order, w);
    double v = 0.0;
    for (std::size_t a = 0; a < w.size(); ++a) v += w[a] * comp(start + static_cast<int>(a), j);
    return v;
}

inline MetricField pullback(const MetricField& m, const TimeBumpDiffeo& phi, int order = 8) {
    if (!phi.admissible()) throw ConfigError("CFG_DIFFEO", "time-bump flow parameter is not invertible");
    const GridSpec& g = m.grid;
    if (!(phi.shape.t0 - phi.shape.r_t > g.t_min && phi.shape.t0 + phi.shape.r_t < g.t_max))
        throw ConfigError("CFG_SUPPORT", "diffeomorphism support exceeds the temporal extent");
    MetricField out = m;
    if (phi.s == 0.0) return out;
    for (int i = 0; i < g.n_t(); ++i)
        for (int j = 0; j < g.n_x; ++j) {
            double T, Tt, Tx;
            phi.map(g.t(i), g.x(j), g.circumference, T, Tt, Tx);
            if (T == g.t(i) && Tt == 1.0 && Tx == 0.0) continue;
            if (T < g.t_min || T > g.t_max) throw NumericalError("pullback leaves the time grid");
            double a = sample_at(m, m.g_tt, T, j, order);
            double b = sample_at(m, m.g_tx, T, j, order);
            double c = sample_at(m, m.g_xx, T, j, order);
            out.g_tt(i, j) = Tt * Tt * a;
            out.g_tx(i, j) = Tt * (Tx * a + b);
            out.g_xx(i, j) = Tx * Tx * a + 2.0 * Tx * b + c;
        }
    out.supports.push_back(phi.shape.box());
    char buf[128];
    std::snprintf(buf, sizeof buf, "pullback%s[s=%.6g](", phi.inverse ? "^-1" : "", phi.s);
    out.id = buf + m.id + ")";
    return out;
}

struct SymmetricTensorField {
    Mat h_tt, h_tx, h_xx;
};

/// d/ds at s = 0 of the pullback along the flow of Z = b c d_t, by central
/// differences with one Richardson step.
inline SymmetricTensorField lie_derivative_tensor(const MetricField& m, const BumpShape& z,
                                                  double step = 1e-4) {
    auto diff = [&](double e) {
        MetricField p = pullback(m, {z, e}), q = pullback(m, {z, -e});
        return SymmetricTensorField{(p.g_tt - q.g_tt) / (2 * e), (p.g_tx - q.g_tx) / (2 * e),
                                    (p.g_xx - q.g_xx) / (2 * e)};
    };
    SymmetricTensorField a = diff(step), b = diff(step / 2);
    return {(4 * b.h_tt - a.h_tt) / 3, (4 * b.h_tx - a.h_tx) / 3, (4 * b.h_xx - a.h_xx) / 3};
}

/// Analytic Lie derivative of the flat metric along b c d_t.
inline SymmetricTensorField flat_lie_derivative(const GridSpec& g, const BumpShape& z) {
    SymmetricTensorField h{Mat::Zero(g.n_t(), g.n_x), Mat::Zero(g.n_t(), g.n_x), Mat::Zero(g.n_t(), g.n_x)};
    for (int i = 0; i < g.n_t(); ++i)
        for (int j = 0; j < g.n_x; ++j) {
            h.h_tt(i, j) = 2.0 * z.db(g.t(i)) * z.c(g.x(j), g.circumference);
            h.h_tx(i, j) = z.b(g.t(i)) * z.dc(g.x(j), g.circumference);
        }
    return h;
}

/// Linear path point (1 - s) a + s b, used for intermediate validity samples.
inline MetricField interpolate(const MetricField& a, const MetricField& b, double s) {
    MetricField out = a;
    out.g_tt = (1 - s) * a.g_tt + s * b.g_tt;
    out.g_tx = (1 - s) * a.g_tx + s * b.g_tx;
    out.g_xx = (1 - s) * a.g_xx + s * b.g_xx;
    out.supports.insert(out.supports.end(), b.supports.begin(), b.supports.end());
    if (s == 1.0) return b;
    out.id = a.id + "->" + b.id;
    return out;
}

/// Piecewise-linear path through waypoint metrics. The transport only depends
/// on waypoints; the intermediate samples exist for validity checking.
struct MetricPath {
    MetricField base;
    std::vector<MetricField> waypoints;
    int samples_per_segment = 5;

    const MetricField& start() const { return waypoints.front(); }
    const MetricField& end() const { return waypoints.back(); }

    MetricPath reversed() const {
        MetricPath p = *this;
        std::reverse(p.waypoints.begin(), p.waypoints.end());
        return p;
    }

    /// Concatenation; the first waypoint of `next` must equal the last of this.
    MetricPath then(const MetricPath& next) const {
        if (next.waypoints.front().g_tt != end().g_tt || next.waypoints.front().g_tx != end().g_tx ||
            next.waypoints.front().g_xx != end().g_xx)
            throw ConfigError("CFG_PATH", "path endpoints do not match under concatenation");
        MetricPath p = *this;
        p.waypoints.insert(p.waypoints.end(), next.waypoints.begin() + 1, next.waypoints.end());
        return p;
    }

    /// Validate every sampled point along every segment.
    ValidityReport validate_samples() const {
        ValidityReport worst;
        worst.worst_margin = std::numeric_limits<double>::infinity();
        auto absorb = [&](const ValidityReport& r) {
            worst.lorentzian &= r.lorentzian;
            worst.dt_temporal &= r.dt_temporal;
            worst.dt_timelike_vectorfield &= r.dt_timelike_vectorfield;
            worst.worst_margin = std::min(worst.worst_margin, r.worst_margin);
            for (auto& f : r.failing_points)
                if (worst.failing_points.size() < 64) worst.failing_points.push_back(f);
        };
        absorb(validate(waypoints.front()));
        for (std::size_t k = 0; k + 1 < waypoints.size(); ++k)
            for (int a = 1; a <= samples_per_segment; ++a)
                absorb(validate(interpolate(waypoints[k], waypoints[k + 1], double(a) / samples_per_segment)));
        return worst;
    }
};

}  // namespace kgconn
