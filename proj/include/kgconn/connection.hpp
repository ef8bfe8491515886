#pragma once

// Parallel transport over metric space and the stress-energy axioms as
// measurable properties.
//
// Fock-level objects live on a Galerkin mode band |k| <= k_max, where the
// scattering maps are exactly symplectic. Operators are never materialised;
// a Transport is a product of natural implementers applied to vectors, and
// operator comparisons run over the images of interior test vectors (low
// particle sectors), read off on sectors far enough below n_max that the
// truncation of the Fock space does not reach them.

#include "kgconn/bogoliubov.hpp"
#include "kgconn/fock.hpp"
#include "kgconn/geometry.hpp"
#include "kgconn/wavesolver.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kgconn {

/// Shared numerical setting for Fock-level checks.
struct FockSetting {
    GridSpec grid;
    EvolutionConfig cfg;
    OneParticleStructure ops;
    BasisPtr basis;
    double t_minus = 0, t_plus = 0;
    int test_sector = 2;     // test vectors live in sectors <= this
    int compare_sector = 4;  // images are compared on sectors <= this

    static FockSetting make(const GridSpec& g, const EvolutionConfig& cfg, int k_max, int n_max,
                            std::optional<double> t_minus = std::nullopt, std::optional<double> t_plus = std::nullopt) {
        FockSetting s;
        s.grid = g;
        s.cfg = cfg;
        s.ops = build_one_particle(g.mass, g, k_max);
        s.basis = std::make_shared<FockBasis>(s.ops.size(), n_max);
        s.t_minus = t_minus.value_or(g.t_min);
        s.t_plus = t_plus.value_or(g.t_max);
        s.test_sector = n_max / 4;
        s.compare_sector = n_max / 2;
        return s;
    }
};

/// Galerkin evolution matrices keyed by the metric, so a reference metric is
/// propagated once per check rather than once per scattering map.
class ScatteringCache {
public:
    explicit ScatteringCache(const FockSetting& s) : s_(s) {}

    /// W(g_to, g_from) = V(g_to)^{-1} V(g_from) on the mode band.
    Mat modal_map(const MetricField& g_to, const MetricField& g_from) {
        if (same(g_to, g_from)) return Mat::Identity(2 * s_.ops.size(), 2 * s_.ops.size());
        const Mat& Vt = evolution(g_to);
        const Mat& Vf = evolution(g_from);
        Mat W = Vt.partialPivLu().solve(Vf);
        if (!W.allFinite()) throw NumericalError("singular evolution matrix in scattering solve");
        return W;
    }

    BogoliubovData blocks(const MetricField& g_to, const MetricField& g_from) {
        return blocks_of_modal(modal_map(g_to, g_from), s_.ops, true);
    }

    const FockSetting& setting() const { return s_; }

private:
    static bool same(const MetricField& a, const MetricField& b) {
        return a.g_tt == b.g_tt && a.g_tx == b.g_tx && a.g_xx == b.g_xx;
    }

    const Mat& evolution(const MetricField& g) {
        for (auto& e : cache_)
            if (same(e.first, g)) return e.second;
        Propagator p(g, s_.cfg, s_.ops.modes);
        for (double t : {s_.t_minus, s_.t_plus})
            if (!p.slice(t).flat) throw ConfigError("CFG_TIME", "scattering slices must lie in the flat exterior");
        cache_.emplace_back(g, p.canonical_matrix(s_.t_minus, s_.t_plus));
        return cache_.back().second;
    }

    FockSetting s_;
    std::vector<std::pair<MetricField, Mat>> cache_;
};

using ImplementerPtr = std::shared_ptr<const Implementer>;

/// Ordered product of implementers and their adjoints; factor 0 acts first.
struct Transport {
    struct Factor {
        ImplementerPtr U;
        bool adjoint = false;
    };
    std::vector<Factor> factors;
    BasisPtr basis;

    static Transport identity(BasisPtr b) { return {{}, std::move(b)}; }
    static Transport of(ImplementerPtr U) {
        BasisPtr b = U->basis();
        return {{{std::move(U), false}}, b};
    }

    FockVector apply(const FockVector& v) const {
        FockVector x = v;
        for (const auto& f : factors) x = f.adjoint ? f.U->apply_adjoint(x) : f.U->apply(x);
        return x;
    }
    Transport adjoint() const {
        Transport t{{}, basis};
        for (auto it = factors.rbegin(); it != factors.rend(); ++it) t.factors.push_back({it->U, !it->adjoint});
        return t;
    }
    /// later * this.
    Transport then(const Transport& later) const {
        Transport t = *this;
        t.factors.insert(t.factors.end(), later.factors.begin(), later.factors.end());
        return t;
    }
};

inline std::vector<FockVector> interior_test_vectors(BasisPtr b, int max_sector) {
    std::vector<FockVector> out;
    max_sector = std::min(max_sector, b->n_max());
    for (int i = 0; i < b->sector_end(max_sector); ++i) {
        FockVector v = FockVector::zero(b);
        v.coeffs(i) = 1.0;
        out.push_back(std::move(v));
    }
    return out;
}

inline CVec interior_part(const FockVector& v, int max_sector) {
    return v.coeffs.head(v.basis->sector_end(std::min(max_sector, v.basis->n_max())));
}

struct PhaseAlignedDistance {
    double value = 0.0;
    Complex optimal_phase = 1.0;
};

/// min over theta of ||A - e^{i theta} B||_F / max(||A||_F, ||B||_F) for
/// column lists A, B; theta is the phase of tr(B* A).
inline PhaseAlignedDistance phase_aligned_distance(const std::vector<CVec>& A, const std::vector<CVec>& B) {
    if (A.size() != B.size()) throw ConfigError("SHAPE", "operator images differ in count");
    Complex tr = 0.0;
    double na = 0, nb = 0;
    for (std::size_t j = 0; j < A.size(); ++j) {
        tr += B[j].dot(A[j]);
        na += A[j].squaredNorm();
        nb += B[j].squaredNorm();
    }
    PhaseAlignedDistance d;
    d.optimal_phase = std::abs(tr) > 0 ? tr / std::abs(tr) : Complex(1.0);
    double diff = 0;
    for (std::size_t j = 0; j < A.size(); ++j) diff += (A[j] - d.optimal_phase * B[j]).squaredNorm();
    double scale = std::sqrt(std::max(na, nb));
    d.value = scale > 0 ? std::sqrt(diff) / scale : 0.0;
    return d;
}

using VectorMap = std::function<FockVector(const FockVector&)>;

/// Phase-aligned distance between two operators over the interior tests.
inline PhaseAlignedDistance operator_distance(const VectorMap& a, const VectorMap& b, const FockSetting& s) {
    std::vector<CVec> A, B;
    for (const auto& v : interior_test_vectors(s.basis, s.test_sector)) {
        A.push_back(interior_part(a(v), s.compare_sector));
        B.push_back(interior_part(b(v), s.compare_sector));
    }
    return phase_aligned_distance(A, B);
}

inline VectorMap as_map(const Transport& t) {
    return [t](const FockVector& v) { return t.apply(v); };
}
inline VectorMap identity_map_fock() {
    return [](const FockVector& v) { return v; };
}

struct TransportResult {
    Transport S;
    std::string start_id, end_id;
    std::vector<BogoliubovData> segments;
    // Cocycle phases: U(W_k W_{<k}) = phase_log[k] U(W_k) U(W_{<k}), so
    // S = conj(prod phase_log) U(W_total).
    std::vector<Complex> phase_log;
    Complex predicted_phase = 1.0;
    // Phase-aligned distance to U(W(end, g0)) U(W(start, g0))*.
    double endpoint_distance = 0.0;
};

/// S(gamma) as the product of the natural implementers of consecutive
/// waypoint scattering maps.
inline TransportResult transport(const MetricPath& path, ScatteringCache& cache, bool endpoint_check = true) {
    const FockSetting& s = cache.setting();
    ValidityReport v = path.validate_samples();
    if (!v.ok()) throw AdmissibilityError("inadmissible metric on path");
    TransportResult r;
    r.S = Transport::identity(s.basis);
    r.start_id = path.start().id;
    r.end_id = path.end().id;
    std::optional<BogoliubovData> acc;
    for (std::size_t k = 0; k + 1 < path.waypoints.size(); ++k) {
        BogoliubovData b = cache.blocks(path.waypoints[k + 1], path.waypoints[k]);
        r.S = r.S.then(Transport::of(std::make_shared<Implementer>(b, s.basis)));
        if (acc) {
            Complex c = cocycle(b, *acc);
            r.phase_log.push_back(c);
            r.predicted_phase *= std::conj(c);
            acc = compose_blocks(b, *acc);
        } else {
            r.phase_log.push_back(1.0);
            acc = b;
        }
        r.segments.push_back(std::move(b));
    }
    if (endpoint_check) {
        auto Ue = std::make_shared<Implementer>(cache.blocks(path.end(), path.base), s.basis);
        auto Us = std::make_shared<Implementer>(cache.blocks(path.start(), path.base), s.basis);
        Transport ref = Transport::of(Us).adjoint().then(Transport::of(Ue));
        r.endpoint_distance = operator_distance(as_map(r.S), as_map(ref), s).value;
    }
    return r;
}

struct HolonomyReport {
    Complex scalar = 1.0;
    double off_scalar_defect = 0.0;  // max over tests of ||(S - c) psi|| on interior sectors
    Complex predicted_scalar = 1.0;  // from the cocycle bookkeeping
};

inline HolonomyReport holonomy_centrality(const Transport& S, const FockSetting& s) {
    HolonomyReport h;
    auto tests = interior_test_vectors(s.basis, s.test_sector);
    std::vector<CVec> images;
    Complex tr = 0.0;
    for (const auto& v : tests) {
        images.push_back(interior_part(S.apply(v), s.compare_sector));
        tr += interior_part(v, s.compare_sector).dot(images.back());
    }
    h.scalar = tr / static_cast<double>(tests.size());
    for (std::size_t j = 0; j < tests.size(); ++j)
        h.off_scalar_defect =
            std::max(h.off_scalar_defect, (images[j] - h.scalar * interior_part(tests[j], s.compare_sector)).norm());
    return h;
}

inline HolonomyReport holonomy_centrality(const MetricPath& loop, ScatteringCache& cache) {
    const MetricField &a = loop.start(), &b = loop.end();
    if (a.g_tt != b.g_tt || a.g_tx != b.g_tx || a.g_xx != b.g_xx)
        throw ConfigError("CFG_PATH", "holonomy needs a closed loop");
    TransportResult t = transport(loop, cache, false);
    HolonomyReport h = holonomy_centrality(t.S, cache.setting());
    h.predicted_scalar = t.predicted_phase;
    return h;
}

/// Largest coordinate light speed |dx/dt| over the grid.
inline double max_light_speed(const MetricField& g) {
    double v = 0.0;
    for (int i = 0; i < g.g_tt.rows(); ++i)
        for (int j = 0; j < g.g_tt.cols(); ++j) {
            double a = g.g_xx(i, j), b = g.g_tx(i, j), c = g.g_tt(i, j);
            double disc = std::sqrt(std::max(0.0, b * b - a * c));
            v = std::max({v, std::abs((-b + disc) / a), std::abs((-b - disc) / a)});
        }
    return v;
}

/// True when no point of `late` lies in the causal past of `early`, using
/// light cones of slope vmax around the boxes.
inline bool causally_separated(const SupportBox& early, const SupportBox& late, double vmax, double circ) {
    if (late.t_lo > early.t_hi) return true;
    double gap = std::abs(circle_delta(late.x_center, early.x_center, circ)) - early.x_half - late.x_half;
    return gap > vmax * (early.t_hi - late.t_lo);
}

inline std::vector<SupportBox> boxes_of(const std::vector<PerturbationSpec>& h) {
    std::vector<SupportBox> out;
    for (const auto& p : h)
        if (p.amplitude != 0.0) out.push_back(p.shape.box());
    return out;
}

inline std::vector<PerturbationSpec> concat(std::vector<PerturbationSpec> a, const std::vector<PerturbationSpec>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

inline std::vector<PerturbationSpec> scaled(std::vector<PerturbationSpec> h, double s) {
    for (auto& p : h) p.amplitude *= s;
    return h;
}

struct CausalityReport {
    bool separated = true;
    double light_speed = 1.0;
    double map_defect = 0.0;  // on the mode band, where the Fock check runs
    double grid_map_defect = std::numeric_limits<double>::quiet_NaN();  // full grid maps, when requested
    double fock_distance = 0.0;
    Complex fock_phase = 1.0;
};

/// h1 is the earlier perturbation: J^-(supp h1) must miss supp h3. Compares
///   W(h123)  with  W(h12) W(h2)^{-1} W(h23)
/// and the corresponding implementer products modulo U(1). The band-limited
/// Galerkin dynamics is not local in x, so for spacelike (rather than
/// time-ordered) separation the grid-level map defect is the meaningful one.
inline CausalityReport causality_check(const std::vector<PerturbationSpec>& base, const std::vector<PerturbationSpec>& h1,
                                       const std::vector<PerturbationSpec>& h2, const std::vector<PerturbationSpec>& h3,
                                       ScatteringCache& cache, bool grid_maps = false) {
    const FockSetting& s = cache.setting();
    CausalityReport r;
    MetricField g = build_metric(s.grid, base);
    MetricField g123 = build_metric(s.grid, concat(concat(concat(base, h1), h2), h3));
    r.light_speed = std::max(max_light_speed(g123), 1.0);
    for (const auto& e : boxes_of(h1))
        for (const auto& l : boxes_of(h3))
            if (!causally_separated(e, l, r.light_speed, s.grid.circumference)) r.separated = false;
    if (!r.separated)
        throw ConfigError("CAUSALITY_PRECONDITION", "supp h3 meets the causal past of supp h1");
    for (const auto& m : {g, g123})
        if (!validate(m).ok()) throw AdmissibilityError("inadmissible metric in causality scenario");
    MetricField g12 = build_metric(s.grid, concat(concat(base, h1), h2));
    MetricField g23 = build_metric(s.grid, concat(concat(base, h2), h3));
    MetricField g2 = build_metric(s.grid, concat(base, h2));
    Mat W123 = cache.modal_map(g123, g), W12 = cache.modal_map(g12, g), W23 = cache.modal_map(g23, g),
        W2 = cache.modal_map(g2, g);
    Mat rhs = W12 * W2.partialPivLu().solve(W23);
    r.map_defect = max_abs(Mat(W123 - rhs));
    if (grid_maps) {
        auto Wg = [&](const MetricField& m) { return scattering_map(m, g, s.t_minus, s.t_plus, s.cfg).matrix; };
        Mat G123 = Wg(g123), G12 = Wg(g12), G23 = Wg(g23), G2 = Wg(g2);
        r.grid_map_defect = max_abs(Mat(G123 - G12 * G2.partialPivLu().solve(G23)));
    }
    auto U = [&](const Mat& W) {
        return std::make_shared<Implementer>(blocks_of_modal(W, s.ops, true), s.basis);
    };
    Transport lhs = Transport::of(U(W123));
    Transport prod = Transport::of(U(W23)).then(Transport::of(U(W2)).adjoint()).then(Transport::of(U(W12)));
    PhaseAlignedDistance d = operator_distance(as_map(lhs), as_map(prod), s);
    r.fock_distance = d.value;
    r.fock_phase = d.optimal_phase;
    return r;
}

/// P (W - I) E on the band |k| <= k_max, for a grid map on flat slices.
inline Mat low_band_defect(const SymplecticMap& W, const GridSpec& g, int k_max) {
    ModeSet m = ModeSet::truncated(g, k_max);
    const int n = g.n_x, M = m.size();
    Mat P = Mat::Zero(2 * M, 2 * n), E = Mat::Zero(2 * n, 2 * M);
    P.topLeftCorner(M, n) = g.dx() * m.basis.transpose();
    P.bottomRightCorner(M, n) = g.dx() * m.basis.transpose();
    E.topLeftCorner(n, M) = m.basis;
    E.bottomRightCorner(n, M) = m.basis;
    return P * (W.matrix - Mat::Identity(2 * n, 2 * n)) * E;
}

struct CovarianceReport {
    double map_defect = 0.0;       // max |entry| of the band-limited W - I
    double grid_defect = 0.0;      // max |entry| of the full grid W - I (diagnostic)
    double fock_distance = 0.0;    // phase-aligned distance of U to I
    double refined_map_defect = std::numeric_limits<double>::quiet_NaN();
    double refinement_ratio = std::numeric_limits<double>::quiet_NaN();
};

/// Scattering of the pullback phi_s^* g against g. The map is computed on the
/// grid and read on the resolved band.
inline CovarianceReport covariance_check(const std::vector<PerturbationSpec>& base, const TimeBumpDiffeo& phi,
                                         const FockSetting& s, bool refine) {
    CovarianceReport r;
    auto defect = [&](const GridSpec& g, const EvolutionConfig& cfg, Mat* band) {
        MetricField m = build_metric(g, base);
        MetricField p = pullback(m, phi, cfg.interp_order);
        if (!validate(p).ok()) throw AdmissibilityError("pullback metric is not admissible");
        SymplecticMap W = scattering_map(p, m, s.t_minus, s.t_plus, cfg);
        if (band) *band = W.matrix;
        Mat E = low_band_defect(W, g, s.ops.k_max);
        return std::make_pair(max_abs(E), max_abs(Mat(W.matrix - Mat::Identity(W.matrix.rows(), W.matrix.cols()))));
    };
    Mat Wgrid;
    auto [band, grid] = defect(s.grid, s.cfg, &Wgrid);
    r.map_defect = band;
    r.grid_defect = grid;
    SymplecticMap W;
    W.matrix = Wgrid;
    W.source_density = W.target_density = Vec::Ones(s.grid.n_x);
    BogoliubovData b = blocks(W, s.ops);
    Implementer U(b, s.basis);
    r.fock_distance = operator_distance([&](const FockVector& v) { return U.apply(v); }, identity_map_fock(), s).value;
    if (refine) {
        GridSpec g2 = s.grid;
        g2.n_x *= 2;
        EvolutionConfig c2 = s.cfg;
        c2.substeps_per_dt *= 2;
        r.refined_map_defect = defect(g2, c2, nullptr).first;
        r.refinement_ratio = r.map_defect / r.refined_map_defect;
    }
    return r;
}

struct LocalityReport {
    SupportReport map;
    double commutator = 0.0;  // max over psi of ||[S, phi(v)] psi|| on interior sectors
    double field_norm = 0.0;  // ||phi(v) Omega||, the scale of the commutator
    int fock_modes = 0, fock_n_max = 0;
};

/// Map-level support of W - I and the Fock commutator [U(W), phi(v)] with v
/// supported outside the causal shadow. The Fock part runs on every grid mode
/// so that localized data are representable; n_max is kept small.
inline LocalityReport locality_check(const std::vector<PerturbationSpec>& pert, const GridSpec& grid,
                                     const EvolutionConfig& cfg, double t_minus, double t_plus, int n_max,
                                     int max_psi_modes = 7) {
    LocalityReport r;
    MetricField g = build_metric(grid, pert), g0 = flat_metric(grid);
    if (!validate(g).ok()) throw AdmissibilityError("perturbed metric is not admissible");
    SymplecticMap W = scattering_map(g, g0, t_minus, t_plus, cfg);
    if (pert.empty()) throw ConfigError("CFG_LOCALITY", "locality needs a perturbation");
    SupportBox box = pert.front().shape.box();
    for (const auto& p : pert) {
        SupportBox b = p.shape.box();
        if (b.x_center != box.x_center) throw ConfigError("CFG_LOCALITY", "perturbations must share a centre");
        box.t_lo = std::min(box.t_lo, b.t_lo);
        box.t_hi = std::max(box.t_hi, b.t_hi);
        box.x_half = std::max(box.x_half, b.x_half);
    }
    r.map = support_profile(W, box, grid);
    if (r.map.vacuous) return r;

    // Test data: smooth bump centred opposite the perturbation, inside the
    // complement of the shadow.
    double free_half = 0.5 * grid.circumference - r.map.shadow_half_width;
    double centre = box.x_center + 0.5 * grid.circumference;
    Vec u = Vec::Zero(grid.n_x);
    for (int j = 0; j < grid.n_x; ++j) u(j) = bump(circle_delta(grid.x(j), centre, grid.circumference) / free_half);
    if (u.isZero()) throw ConfigError("CFG_LOCALITY", "no grid point outside the causal shadow");

    OneParticleStructure ops = build_full_one_particle(grid);
    const ModeSet& m = *ops.modes;
    auto basis = std::make_shared<FockBasis>(ops.size(), n_max);
    r.fock_modes = ops.size();
    r.fock_n_max = n_max;
    BogoliubovData b = blocks(W, ops);
    Implementer U(b, basis);
    Vec y(2 * ops.size());
    y.head(ops.size()) = m.coefficients(u);
    y.tail(ops.size()) = m.coefficients(u);
    y /= std::sqrt(2.0) * y.head(ops.size()).norm();
    FockOperator phi = field_op_coeffs(y, ops, basis);

    std::vector<FockVector> psis{FockVector::vacuum(basis)};
    for (int k = 0; k < ops.size() && static_cast<int>(psis.size()) <= max_psi_modes; ++k)
        if (std::abs(m.ks[k]) <= max_psi_modes / 2) psis.push_back(FockVector::basis_state(basis, [&] {
            std::vector<int> n(ops.size(), 0);
            n[k] = 1;
            return n;
        }()));
    const int cmp = n_max - 1;
    r.field_norm = phi.apply(psis.front()).norm();
    for (const auto& psi : psis) {
        FockVector a = U.apply(phi.apply(psi));
        FockVector c = phi.apply(U.apply(psi));
        r.commutator = std::max(r.commutator, (interior_part(a, cmp) - interior_part(c, cmp)).norm());
    }
    return r;
}

struct StressEnergyReport {
    FockVector derivative;  // i dS/ds v, Richardson-extrapolated
    std::vector<double> eps;
    std::vector<double> estimate_norms;  // ||D(eps)|| per ladder step
    double convergence_order = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    double derivative_norm = 0.0;
    double sector_leakage = 0.0;  // norm of components outside N + {-2, 0, 2}, relative to ||derivative||
};

/// Central difference of U(W(g + eps h, g)) v over the ladder, Richardson
/// extrapolated. v must lie in a single particle sector.
inline StressEnergyReport stress_energy_action(const std::vector<PerturbationSpec>& base,
                                               const std::vector<PerturbationSpec>& h, const FockVector& v,
                                               ScatteringCache& cache,
                                               std::vector<double> eps = {1e-2, 5e-3, 2.5e-3}) {
    const FockSetting& s = cache.setting();
    if (eps.size() < 2) throw ConfigError("CFG_EPS", "need at least two finite-difference steps");
    MetricField g = build_metric(s.grid, base);
    auto apply_at = [&](double e) {
        MetricField ge = build_metric(s.grid, concat(base, scaled(h, e)));
        if (!validate(ge).ok()) throw AdmissibilityError("perturbed metric leaves the admissible set");
        return Implementer(cache.blocks(ge, g), s.basis).apply(v);
    };
    StressEnergyReport r;
    r.eps = eps;
    std::vector<CVec> D;
    for (double e : eps) {
        D.push_back((apply_at(e).coeffs - apply_at(-e).coeffs) / (2 * e));
        r.estimate_norms.push_back(D.back().norm());
    }
    // Richardson tableau for a second-order error expansion in eps.
    std::vector<CVec> R = D;
    for (std::size_t level = 1; level < R.size(); ++level)
        for (std::size_t i = R.size() - 1; i >= level; --i) {
            double ratio = eps[i - level] / eps[i];
            double f = std::pow(ratio, 2.0 * level);
            R[i] = (f * R[i] - R[i - 1]) / (f - 1);
        }
    r.derivative = {Complex(0, 1) * R.back(), s.basis};
    r.derivative_norm = r.derivative.norm();
    if (D.size() >= 3) {
        double d1 = (D[0] - D[1]).norm(), d2 = (D[1] - D[2]).norm();
        double floor = 1e-11 * std::max(1.0, D[0].norm());
        if (d1 <= floor && d2 <= floor) {
            r.converged = true;  // differences already at roundoff
        } else if (d2 > 0) {
            r.convergence_order = std::log(d1 / d2) / std::log(eps[0] / eps[1]);
            r.converged = r.convergence_order >= 1.8;
        }
    }
    int N = -1;
    auto sv = v.sector_norms();
    for (int k = 0; k < static_cast<int>(sv.size()); ++k)
        if (sv[k] != 0.0) {
            if (N >= 0) throw ConfigError("CFG_VECTOR", "stress-energy test vector must lie in one sector");
            N = k;
        }
    auto sd = r.derivative.sector_norms();
    double leak = 0.0;
    for (int k = 0; k < static_cast<int>(sd.size()); ++k)
        if (k != N && k != N - 2 && k != N + 2) leak += sd[k] * sd[k];
    r.sector_leakage = r.derivative_norm > 0 ? std::sqrt(leak) / r.derivative_norm : 0.0;
    return r;
}

/// ||T(h1 + h2) v - T(h1) v - T(h2) v||.
inline double linearity_defect(const std::vector<PerturbationSpec>& base, const std::vector<PerturbationSpec>& h1,
                               const std::vector<PerturbationSpec>& h2, const FockVector& v, ScatteringCache& cache,
                               std::vector<double> eps = {1e-2, 5e-3, 2.5e-3}) {
    auto a = stress_energy_action(base, h1, v, cache, eps).derivative;
    auto b = stress_energy_action(base, h2, v, cache, eps).derivative;
    auto c = stress_energy_action(base, concat(h1, h2), v, cache, eps).derivative;
    return (c - a - b).norm();
}

struct SmoothnessRow {
    double s = 0, norm = 0, diff1 = 0, diff2 = 0, richardson_order = 0;
};

struct SmoothnessReport {
    std::vector<SmoothnessRow> rows;
    double min_order = std::numeric_limits<double>::infinity();
    // |d/ds <Omega, U_s Omega>| against d/ds det(1 - K_s* K_s)^{1/4} at s = 0.5.
    double vacuum_chain_defect = 0.0;

    std::string csv() const {
        std::string out = "s,norm,diff1,diff2,richardson_order\n";
        char buf[256];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.s, r.norm, r.diff1, r.diff2,
                          r.richardson_order);
            out += buf;
        }
        return out;
    }
};

/// Samples U_s v along g_s = g + s h on a uniform grid in [0, 1]. At each s
/// the first difference is taken at delta, delta/2, delta/4 and the order is
/// read off the successive changes; orders are NaN when the family is flat
/// to roundoff.
inline SmoothnessReport smoothness_sweep(const std::vector<PerturbationSpec>& base,
                                         const std::vector<PerturbationSpec>& h, const FockVector& v,
                                         ScatteringCache& cache, int n_s = 5, double delta = 0.04) {
    const FockSetting& s = cache.setting();
    MetricField g = build_metric(s.grid, base);
    auto U_at = [&](double t) {
        MetricField gt = build_metric(s.grid, concat(base, scaled(h, t)));
        if (!validate(gt).ok()) throw AdmissibilityError("family leaves the admissible set");
        return Implementer(cache.blocks(gt, g), s.basis);
    };
    auto apply_at = [&](double t) { return U_at(t).apply(v).coeffs; };
    SmoothnessReport rep;
    for (int i = 0; i < n_s; ++i) {
        double t = n_s > 1 ? double(i) / (n_s - 1) : 0.0;
        SmoothnessRow row;
        row.s = t;
        CVec c = apply_at(t);
        row.norm = c.norm();
        CVec D[3];
        double d = delta;
        CVec p, m;
        for (int l = 0; l < 3; ++l, d /= 2) {
            p = apply_at(t + d);
            m = apply_at(t - d);
            D[l] = (p - m) / (2 * d);
            if (l == 0) row.diff2 = ((p - 2.0 * c + m) / (d * d)).norm();
        }
        row.diff1 = D[2].norm();
        double e1 = (D[0] - D[1]).norm(), e2 = (D[1] - D[2]).norm();
        row.richardson_order = (e2 > 1e-13 * std::max(1.0, row.diff1)) ? std::log2(e1 / e2)
                                                                       : std::numeric_limits<double>::quiet_NaN();
        if (!std::isnan(row.richardson_order)) rep.min_order = std::min(rep.min_order, row.richardson_order);
        rep.rows.push_back(row);
    }
    const double t = 0.5, d = 1e-3;
    FockVector vac = FockVector::vacuum(s.basis);
    auto overlap = [&](double x) { return std::abs(vac.dot(U_at(x).apply(vac))); };
    auto factor = [&](double x) {
        MetricField gx = build_metric(s.grid, concat(base, scaled(h, x)));
        return vacuum_factor(cache.blocks(gx, g).K);
    };
    double lhs = (overlap(t + d) - overlap(t - d)) / (2 * d);
    double rhs = (factor(t + d) - factor(t - d)) / (2 * d);
    rep.vacuum_chain_defect = std::abs(lhs - rhs);
    return rep;
}

}  // namespace kgconn
