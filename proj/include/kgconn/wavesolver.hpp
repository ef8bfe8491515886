#pragma once

// Klein-Gordon Cauchy evolution on sampled metrics.
//
// The solver integrates the canonical first-order system in (u, pi) with
// pi = sqrt|g| (g^tt u_t + g^tx u_x) = sqrt(gamma) d_n u:
//
//   u_t  = (pi / sqrt|g| - g^tx u_x) / g^tt
//   pi_t = -D( sqrt|g| (g^xt u_t + g^xx u_x) ) - sqrt|g| m^2 u
//
// with D the antisymmetric spectral derivative, so the semi-discrete system is
// exactly Hamiltonian. Time stepping is classical RK4 on a global step grid
// anchored at t_min. Runs of steps whose stage slices are all flat are applied
// as powers of the constant flat RK4 step matrix, which is algebraically the
// same integration but costs O(log N) products.
//
// Two representations are supported: the full grid, and a Galerkin projection
// onto a ModeSet. The Galerkin system is the restriction of the same
// Hamiltonian to the span of the kept modes, hence exactly symplectic and
// closed under composition in that subspace.

#include "kgconn/geometry.hpp"
#include "kgconn/spectral.hpp"

#include <map>
#include <memory>
#include <optional>

namespace kgconn {

struct EvolutionConfig {
    enum class Scheme { rk4 };
    enum class SpatialDerivative { spectral };
    Scheme scheme = Scheme::rk4;
    SpatialDerivative spatial_derivative = SpatialDerivative::spectral;
    int substeps_per_dt = 32;
    int interp_order = 8;
    double cfl_bound = 2.0;  // on h * (max speed * k_nyquist + m)
    // Smooth exponential filter exp(-36 (|k|/K)^order), K = cutoff * n_x/2,
    // applied to the metric-perturbation part of the Hamiltonian on the grid.
    bool dealias = true;
    double filter_cutoff = 1.0;
    double filter_order = 12.0;

    void check() const {
        if (substeps_per_dt < 1) throw ConfigError("CFG_SUBSTEPS", "substeps_per_dt must be >= 1");
        if (interp_order < 2) throw ConfigError("CFG_SUBSTEPS", "interpolation order must be >= 2");
    }
};

struct CauchyData {
    Vec u, nu;
    double slice_time = 0.0;
};

/// Linear map on Cauchy data. For grid maps the coordinates are (u, d_n u)
/// samples; for modal maps they are real-basis coefficients of (u, d_n u) on
/// flat slices. Densities are sqrt(gamma) per coordinate at each end.
struct SymplecticMap {
    Mat matrix;
    double source_time = 0.0, target_time = 0.0;
    std::string metric_id;
    Vec source_density, target_density;
    std::shared_ptr<const ModeSet> modes;  // null for grid maps

    int half() const { return static_cast<int>(matrix.rows() / 2); }
};

/// Block form of sigma in (u, d_n u) coordinates, unit cell weight.
inline Mat omega_form(const Vec& density) {
    const int n = static_cast<int>(density.size());
    Mat O = Mat::Zero(2 * n, 2 * n);
    O.block(0, n, n, n) = -density.asDiagonal().toDenseMatrix();
    O.block(n, 0, n, n) = density.asDiagonal().toDenseMatrix();
    return O;
}

/// max |M^T Omega_target M - Omega_source|.
inline double symplectic_defect(const SymplecticMap& m) {
    Mat lhs = m.matrix.transpose() * omega_form(m.target_density) * m.matrix;
    return max_abs(lhs - omega_form(m.source_density));
}

inline Vec slice_density(const MetricSlice& s) { return (-s.g_xx.array()).sqrt().matrix(); }

/// sigma(v, w) = sum (w_u v_n - v_u w_n) sqrt(-g_xx) dx over the slice.
inline double symplectic_form(const CauchyData& v, const CauchyData& w, const MetricField& g) {
    const int n = g.grid.n_x;
    if (v.u.size() != n || v.nu.size() != n || w.u.size() != n || w.nu.size() != n)
        throw ConfigError("SHAPE", "Cauchy data length does not match the grid");
    if (v.slice_time != w.slice_time) throw ConfigError("SHAPE", "Cauchy data live on different slices");
    Vec dens = slice_density(metric_slice(g, v.slice_time));
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += (w.u(j) * v.nu(j) - v.u(j) * w.nu(j)) * dens(j);
    return s * g.grid.dx();
}

class Propagator {
public:
    Propagator(const MetricField& g, const EvolutionConfig& cfg, std::shared_ptr<const ModeSet> galerkin = nullptr)
        : g_(g), cfg_(cfg), modes_(std::move(galerkin)) {
        cfg_.check();
        const GridSpec& gs = g_.grid;
        gs.check();
        D_ = spectral_derivative(gs);
        h_ = gs.dt / cfg_.substeps_per_dt;
        dim_ = modes_ ? modes_->size() : gs.n_x;
        if (modes_) {
            if (!(modes_->grid == gs)) throw ConfigError("SHAPE", "mode set grid differs from metric grid");
            proj_ = gs.dx() * modes_->basis.transpose();
        } else if (cfg_.dealias) {
            ModeSet full = ModeSet::full(gs);
            Vec sym(gs.n_x);
            double K = cfg_.filter_cutoff * gs.n_x / 2;
            for (int c = 0; c < gs.n_x; ++c) {
                double r = std::abs(full.ks[c]) / K;
                sym(c) = r >= 1.0 ? 0.0 : (cfg_.filter_order <= 0 ? 1.0 : std::exp(-36.0 * std::pow(r, cfg_.filter_order)));
            }
            F_ = gs.dx() * full.basis * sym.asDiagonal() * full.basis.transpose();
            F_ = 0.5 * (F_ + F_.transpose());
            DF_ = D_ * F_;
            FD_ = F_ * D_;
            Mat I = Mat::Identity(gs.n_x, gs.n_x);
            IF2_ = I - F_ * F_;
            G_ = (D_ * D_ - gs.mass * gs.mass * I) * IF2_;
        }
        row_flat_.resize(gs.n_t());
        for (int i = 0; i < gs.n_t(); ++i) row_flat_[i] = g_.row_is_flat(i);
        check_cfl();
        // Flat generator in the working representation.
        A0_ = Mat::Zero(2 * dim_, 2 * dim_);
        A0_.block(0, dim_, dim_, dim_) = Mat::Identity(dim_, dim_);
        const double m2 = gs.mass * gs.mass;
        if (modes_) {
            Vec w2 = modes_->omega.array().square();
            A0_.block(dim_, 0, dim_, dim_) = (-w2).asDiagonal();
        } else {
            A0_.block(dim_, 0, dim_, dim_) = D_ * D_ - m2 * Mat::Identity(dim_, dim_);
        }
    }

    double step() const { return h_; }
    int dim() const { return dim_; }
    const MetricField& metric() const { return g_; }

    /// Index of t on the global step grid; throws when off-grid.
    long step_index(double t) const {
        double pos = (t - g_.grid.t_min) / h_;
        double r = std::round(pos);
        if (std::abs(pos - r) > 1e-7) throw ConfigError("CFG_TIME", "time is not on the evolution step grid");
        if (t < g_.grid.t_min - 1e-12 || t > g_.grid.t_max + 1e-12)
            throw ConfigError("CFG_TIME", "time outside the metric grid");
        return static_cast<long>(r);
    }

    /// Evolve canonical (u, pi) coordinates stacked as a (2 dim, c) block.
    Mat evolve(Mat Y, double t0, double t1) const {
        long a = step_index(t0), b = step_index(t1);
        if (a == b) return Y;
        const int dir = b > a ? 1 : -1;
        long i = a;
        while (i != b) {
            // Gather a maximal flat run.
            long j = i;
            while (j != b && step_is_flat(j, dir)) j += dir;
            if (j != i) {
                Y = flat_power(std::labs(j - i), dir) * Y;
                i = j;
                continue;
            }
            Y = rk4_step(Y, i, dir);
            i += dir;
        }
        return Y;
    }

    /// Canonical-coordinate evolution matrix between two step-grid times.
    Mat canonical_matrix(double t0, double t1) const {
        return evolve(Mat::Identity(2 * dim_, 2 * dim_), t0, t1);
    }

    MetricSlice slice(double t) const { return metric_slice(g_, t, cfg_.interp_order); }

private:
    struct Coeffs {
        Vec c1, c2, c3, c4, c5;
        bool flat = true;
    };

    void check_cfl() const {
        const GridSpec& gs = g_.grid;
        double vmax = 0.0;
        for (int i = 0; i < gs.n_t(); ++i) {
            if (row_flat_[i]) {
                vmax = std::max(vmax, 1.0);
                continue;
            }
            for (int j = 0; j < gs.n_x; ++j) {
                double a = g_.g_tt(i, j), b = g_.g_tx(i, j), c = g_.g_xx(i, j);
                double disc = b * b - a * c;
                if (!(disc > 0) || c == 0.0) throw NumericalError("metric is not Lorentzian with spacelike slices");
                double s = std::sqrt(disc);
                vmax = std::max({vmax, std::abs((-b + s) / c), std::abs((-b - s) / c)});
            }
        }
        double knyq = pi / gs.dx();
        double rate = h_ * (vmax * knyq + gs.mass);
        if (rate > cfg_.cfl_bound)
            throw NumericalError("CFL violation: h*(c*k_nyq + m) = " + std::to_string(rate) +
                                 "; increase substeps_per_dt");
    }

    // A step is flat when every interpolation stencil it touches is flat.
    bool step_is_flat(long i, int dir) const {
        double t0 = g_.grid.t_min + i * h_;
        for (double frac : {0.0, 0.5, 1.0}) {
            double t = t0 + dir * frac * h_;
            std::vector<double> w;
            int start = lagrange_weights(g_.grid, t, cfg_.interp_order, w);
            for (std::size_t k = 0; k < w.size(); ++k)
                if (!row_flat_[start + k]) return false;
        }
        return true;
    }

    Coeffs coeffs_at(double t) const {
        MetricSlice s = slice(t);
        Coeffs c;
        c.flat = s.flat;
        const double m2 = g_.grid.mass * g_.grid.mass;
        Vec det = s.g_tt.cwiseProduct(s.g_xx) - s.g_tx.cwiseProduct(s.g_tx);
        Vec sg = (-det.array()).sqrt().matrix();
        Vec att = s.g_xx.cwiseQuotient(det);
        Vec atx = (-s.g_tx).cwiseQuotient(det);
        Vec axx = s.g_tt.cwiseQuotient(det);
        c.c1 = (sg.cwiseProduct(att)).cwiseInverse();
        c.c2 = atx.cwiseQuotient(att);
        c.c3 = sg.cwiseProduct(atx);
        c.c4 = sg.cwiseProduct(axx);
        c.c5 = m2 * sg;
        return c;
    }

    Mat rhs(const Mat& Y, const Coeffs& c) const {
        const int d = dim_;
        if (!modes_ && cfg_.dealias) {
            // A0 Y + F dRHS(F Y), written so that flat coefficients give A0 Y.
            auto Yu = Y.topRows(d);
            auto Yp = Y.bottomRows(d);
            Mat Zu = F_ * Yu;
            Mat Ux = DF_ * Yu;
            Mat Ut = c.c1.asDiagonal() * (F_ * Yp) - c.c2.asDiagonal() * Ux;
            Mat Fl = c.c3.asDiagonal() * Ut + c.c4.asDiagonal() * Ux;
            Mat out(Y.rows(), Y.cols());
            out.topRows(d) = F_ * Ut + IF2_ * Yp;
            out.bottomRows(d) = -(FD_ * Fl) - F_ * (c.c5.asDiagonal() * Zu) + G_ * Yu;
            return out;
        }
        Mat U, P;
        if (modes_) {
            U = modes_->basis * Y.topRows(d);
            P = modes_->basis * Y.bottomRows(d);
        } else {
            U = Y.topRows(d);
            P = Y.bottomRows(d);
        }
        Mat Ux = D_ * U;
        Mat Ut = c.c1.asDiagonal() * P - c.c2.asDiagonal() * Ux;
        Mat F = c.c3.asDiagonal() * Ut + c.c4.asDiagonal() * Ux;
        Mat Pt = -(D_ * F) - c.c5.asDiagonal() * U;
        Mat out(Y.rows(), Y.cols());
        if (modes_) {
            out.topRows(d) = proj_ * Ut;
            out.bottomRows(d) = proj_ * Pt;
        } else {
            out.topRows(d) = Ut;
            out.bottomRows(d) = Pt;
        }
        return out;
    }

    Mat rk4_step(const Mat& Y, long i, int dir) const {
        const double h = dir * h_;
        const double t = g_.grid.t_min + i * h_;
        Coeffs c0 = coeffs_at(t), ch = coeffs_at(t + 0.5 * h), c1 = coeffs_at(t + h);
        Mat k1 = rhs(Y, c0);
        Mat k2 = rhs(Y + 0.5 * h * k1, ch);
        Mat k3 = rhs(Y + 0.5 * h * k2, ch);
        Mat k4 = rhs(Y + h * k3, c1);
        return Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    const Mat& flat_step(int dir) const {
        Mat& R = dir > 0 ? R_fwd_ : R_bwd_;
        if (R.size() == 0) {
            Mat hA = (dir * h_) * A0_;
            Mat I = Mat::Identity(A0_.rows(), A0_.cols());
            Mat hA2 = hA * hA;
            R = I + hA + hA2 / 2.0 + hA2 * hA / 6.0 + hA2 * hA2 / 24.0;
        }
        return R;
    }

    Mat flat_power(long n, int dir) const {
        auto key = std::make_pair(n, dir);
        auto it = power_cache_.find(key);
        if (it != power_cache_.end()) return it->second;
        Mat base = flat_step(dir);
        Mat result = Mat::Identity(base.rows(), base.cols());
        long e = n;
        while (e > 0) {
            if (e & 1) result = result * base;
            e >>= 1;
            if (e) base = base * base;
        }
        power_cache_.emplace(key, result);
        return result;
    }

    MetricField g_;
    EvolutionConfig cfg_;
    std::shared_ptr<const ModeSet> modes_;
    Mat D_, proj_, A0_;
    Mat F_, DF_, FD_, IF2_, G_;
    double h_ = 0;
    int dim_ = 0;
    std::vector<bool> row_flat_;
    mutable Mat R_fwd_, R_bwd_;
    mutable std::map<std::pair<long, int>, Mat> power_cache_;
};

/// Evolve one set of Cauchy data from t0 to t1 on the grid.
inline CauchyData step_cauchy(const MetricField& g, const CauchyData& data, double t0, double t1,
                              const EvolutionConfig& cfg) {
    Propagator prop(g, cfg);
    const int n = g.grid.n_x;
    if (data.u.size() != n || data.nu.size() != n) throw ConfigError("SHAPE", "Cauchy data length mismatch");
    Vec d0 = slice_density(prop.slice(t0)), d1 = slice_density(prop.slice(t1));
    Mat Y(2 * n, 1);
    Y.col(0) << data.u, data.nu.cwiseProduct(d0);
    Y = prop.evolve(Y, t0, t1);
    CauchyData out;
    out.u = Y.col(0).head(n);
    out.nu = Y.col(0).tail(n).cwiseQuotient(d1);
    out.slice_time = t1;
    return out;
}

namespace detail {
inline SymplecticMap to_data_coords(const Mat& can, const Vec& d0, const Vec& d1, double t0, double t1,
                                    std::string id, std::shared_ptr<const ModeSet> modes) {
    const int n = static_cast<int>(d0.size());
    SymplecticMap m;
    Vec in(2 * n), out(2 * n);
    in << Vec::Ones(n), d0;
    out << Vec::Ones(n), d1.cwiseInverse();
    m.matrix = out.asDiagonal() * can * in.asDiagonal();
    m.source_time = t0;
    m.target_time = t1;
    m.metric_id = std::move(id);
    m.source_density = d0;
    m.target_density = d1;
    m.modes = std::move(modes);
    return m;
}
}  // namespace detail

/// Evolution map between two slices. With a ModeSet the Galerkin-projected
/// map is returned in real mode coordinates and both slices must be flat.
inline SymplecticMap evolution_map(const MetricField& g, double t_minus, double t_plus, const EvolutionConfig& cfg,
                                   std::shared_ptr<const ModeSet> modes = nullptr) {
    Propagator prop(g, cfg, modes);
    Mat can = prop.canonical_matrix(t_minus, t_plus);
    MetricSlice s0 = prop.slice(t_minus), s1 = prop.slice(t_plus);
    if (modes) {
        if (!s0.flat || !s1.flat) throw ConfigError("CFG_TIME", "modal evolution requires flat end slices");
        Vec ones = Vec::Ones(modes->size());
        return detail::to_data_coords(can, ones, ones, t_minus, t_plus, g.id, modes);
    }
    return detail::to_data_coords(can, slice_density(s0), slice_density(s1), t_minus, t_plus, g.id, nullptr);
}

/// W = V(g_pert)^{-1} V(g_ref), source and target at t_minus.
inline SymplecticMap scattering_map(const MetricField& g_pert, const MetricField& g_ref, double t_minus,
                                    double t_plus, const EvolutionConfig& cfg,
                                    std::shared_ptr<const ModeSet> modes = nullptr) {
    if (!(g_pert.grid == g_ref.grid)) throw ConfigError("SHAPE", "metrics live on different grids");
    Propagator pp(g_pert, cfg, modes), pr(g_ref, cfg, modes);
    const bool same = g_pert.g_tt == g_ref.g_tt && g_pert.g_tx == g_ref.g_tx && g_pert.g_xx == g_ref.g_xx;
    for (double t : {t_minus, t_plus})
        if (!pp.slice(t).flat || !pr.slice(t).flat)
            throw ConfigError("CFG_TIME", "scattering slices must lie in the flat exterior");
    int d = pp.dim();
    Vec ones = Vec::Ones(d);
    if (same) return detail::to_data_coords(Mat::Identity(2 * d, 2 * d), ones, ones, t_minus, t_minus,
                                            g_pert.id + "|" + g_ref.id, modes);
    Mat Vp = pp.canonical_matrix(t_minus, t_plus);
    Mat Vr = pr.canonical_matrix(t_minus, t_plus);
    Eigen::PartialPivLU<Mat> lu(Vp);
    Mat W = lu.solve(Vr);
    if (!W.allFinite()) throw NumericalError("singular evolution matrix in scattering solve");
    SymplecticMap m = detail::to_data_coords(W, ones, ones, t_minus, t_minus, g_pert.id + "|" + g_ref.id, modes);
    return m;
}

inline SymplecticMap identity_map(const SymplecticMap& like) {
    SymplecticMap m = like;
    m.matrix = Mat::Identity(like.matrix.rows(), like.matrix.cols());
    m.metric_id = "identity";
    return m;
}

inline SymplecticMap compose(const SymplecticMap& a, const SymplecticMap& b) {
    SymplecticMap m = b;
    m.matrix = a.matrix * b.matrix;
    m.target_time = a.target_time;
    m.target_density = a.target_density;
    m.metric_id = a.metric_id + "*" + b.metric_id;
    return m;
}

inline SymplecticMap inverse(const SymplecticMap& a) {
    SymplecticMap m = a;
    m.matrix = a.matrix.partialPivLu().solve(Mat::Identity(a.matrix.rows(), a.matrix.cols()));
    std::swap(m.source_time, m.target_time);
    std::swap(m.source_density, m.target_density);
    m.metric_id = "inv(" + a.metric_id + ")";
    return m;
}

/// Spatial interval (centre, half-width) on the slice t_minus that can be
/// causally connected to the box under the flat exterior, plus 2 cells.
struct SupportReport {
    double max_entry_outside_shadow = 0.0;
    double max_entry_inside_shadow = 0.0;
    double shadow_center = 0.0, shadow_half_width = 0.0;
    bool vacuous = false;
};

inline double shadow_half_width(const SupportBox& box, double t_minus, double dx) {
    return box.x_half + std::max(0.0, box.t_hi - t_minus) + 2.0 * dx;
}

inline SupportReport support_profile(const SymplecticMap& W, const SupportBox& box, const GridSpec& g) {
    if (W.modes) throw ConfigError("SHAPE", "support profile needs a grid map");
    SupportReport r;
    const int n = g.n_x;
    r.shadow_center = box.x_center;
    r.shadow_half_width = shadow_half_width(box, W.source_time, g.dx());
    r.vacuous = 2.0 * r.shadow_half_width >= g.circumference;
    std::vector<bool> inside(n);
    for (int j = 0; j < n; ++j)
        inside[j] = r.vacuous || std::abs(circle_delta(g.x(j), box.x_center, g.circumference)) <= r.shadow_half_width;
    Mat E = W.matrix - Mat::Identity(2 * n, 2 * n);
    for (int a = 0; a < 2 * n; ++a)
        for (int b = 0; b < 2 * n; ++b) {
            double v = std::abs(E(a, b));
            if (inside[a % n] && inside[b % n]) r.max_entry_inside_shadow = std::max(r.max_entry_inside_shadow, v);
            else r.max_entry_outside_shadow = std::max(r.max_entry_outside_shadow, v);
        }
    return r;
}

}  // namespace kgconn
