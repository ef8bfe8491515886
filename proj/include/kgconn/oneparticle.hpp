#pragma once

// Ultrastatic ground-state one-particle structure on a flat slice.
//
// Per Fourier mode k acting on (u_k, pi_k):
//   J_k = [[0, -1/w], [w, 0]],  A_k = diag(w, 1/w),  p_k = 1/2 [[1, i/w], [-i w, 1]]
// and annihilation coordinates a_k = (w^{1/2} u_k + i w^{-1/2} pi_k) / sqrt 2,
// normalised so that [a, a*] = 1. With these conventions
// sigma(f, g) = -<J f, g>_A and the field phi(v) = a(a(v)) + a*(a(v)) obeys
// [phi(v), phi(w)] = -i sigma(v, w).

#include "kgconn/spectral.hpp"
#include "kgconn/wavesolver.hpp"

#include <array>
#include <memory>

namespace kgconn {

using Block2 = Eigen::Matrix2cd;

struct OneParticleStructure {
    double mass = 1.0;
    int k_max = 3;
    std::shared_ptr<const ModeSet> modes;

    const Vec& omega() const { return modes->omega; }
    int size() const { return modes->size(); }

    Block2 J(int i) const {
        double w = omega()(i);
        Block2 b;
        b << 0, -1.0 / w, w, 0;
        return b;
    }
    Block2 A(int i) const {
        double w = omega()(i);
        Block2 b;
        b << w, 0, 0, 1.0 / w;
        return b;
    }
    Block2 p(int i) const {
        double w = omega()(i);
        const Complex I(0, 1);
        Block2 b;
        b << 0.5, 0.5 * I / w, -0.5 * I * w, 0.5;
        return b;
    }

    /// Complex coordinate map: annihilation amplitudes from real-basis
    /// coefficients (u, pi) stacked as a 2M vector.
    CMat annihilation_map() const {
        const int M = size();
        CMat C(M, 2 * M);
        Vec sw = omega().array().sqrt();
        const double r2 = 1.0 / std::sqrt(2.0);
        C.leftCols(M) = r2 * sw.asDiagonal() * modes->to_complex;
        Vec isw = sw.cwiseInverse();
        C.rightCols(M) = Complex(0, r2) * (isw.asDiagonal() * modes->to_complex);
        return C;
    }

    /// [a; conj(a)] = T * (u, pi) coefficients; T is invertible.
    CMat doubled_map() const {
        CMat C = annihilation_map();
        CMat T(2 * size(), 2 * size());
        T.topRows(size()) = C;
        T.bottomRows(size()) = C.conjugate();
        return T;
    }
};

inline OneParticleStructure build_one_particle(double m, const GridSpec& grid, int k_max) {
    if (!(m > 0)) throw ConfigError("CFG_MASS", "mass must be positive (zero mode is singular)");
    GridSpec g = grid;
    g.mass = m;
    OneParticleStructure ops;
    ops.mass = m;
    ops.k_max = k_max;
    ops.modes = std::make_shared<ModeSet>(ModeSet::truncated(g, k_max));
    return ops;
}

/// One-particle structure on every grid mode, Nyquist included.
inline OneParticleStructure build_full_one_particle(const GridSpec& grid) {
    OneParticleStructure ops;
    ops.mass = grid.mass;
    ops.k_max = grid.n_x / 2;
    ops.modes = std::make_shared<ModeSet>(ModeSet::full(grid));
    return ops;
}

/// Annihilation amplitudes ordered like ops.modes->ks.
struct ModeAmplitudes {
    CVec a;
};

/// Real-basis coefficients (u, pi) of flat-slice Cauchy data.
inline Vec real_coefficients(const CauchyData& d, const ModeSet& m) {
    Vec y(2 * m.size());
    y.head(m.size()) = m.coefficients(d.u);
    y.tail(m.size()) = m.coefficients(d.nu);
    return y;
}

inline CauchyData from_real_coefficients(const Vec& y, const ModeSet& m, double t = 0.0) {
    CauchyData d;
    d.u = m.samples(y.head(m.size()));
    d.nu = m.samples(y.tail(m.size()));
    d.slice_time = t;
    return d;
}

inline ModeAmplitudes to_modes(const CauchyData& d, const OneParticleStructure& ops) {
    return {ops.annihilation_map() * real_coefficients(d, *ops.modes).cast<Complex>()};
}

inline CauchyData from_modes(const ModeAmplitudes& a, const OneParticleStructure& ops, double t = 0.0) {
    const int M = ops.size();
    CVec doubled(2 * M);
    doubled << a.a, a.a.conjugate();
    CVec y = ops.doubled_map().partialPivLu().solve(doubled);
    return from_real_coefficients(y.real(), *ops.modes, t);
}

enum class SobolevSymbol { mass, standard };

/// ||u||^2_{H^{s+1/2}} + ||pi||^2_{H^{s-1/2}} over the kept modes. The mass
/// symbol weights by (k^2 + m^2); the standard symbol by (1 + k^2).
inline double sobolev_norm(const CauchyData& d, const OneParticleStructure& ops, double s,
                           SobolevSymbol symbol = SobolevSymbol::mass) {
    const ModeSet& m = *ops.modes;
    CVec u = m.to_complex * m.coefficients(d.u).cast<Complex>();
    CVec p = m.to_complex * m.coefficients(d.nu).cast<Complex>();
    double total = 0.0;
    for (int i = 0; i < m.size(); ++i) {
        double w2 = symbol == SobolevSymbol::mass ? m.omega(i) * m.omega(i) : 1.0 + m.k_eff(i) * m.k_eff(i);
        total += std::pow(w2, s + 0.5) * std::norm(u(i)) + std::pow(w2, s - 0.5) * std::norm(p(i));
    }
    return total;
}

/// Real A-inner product <f, g>_A of Cauchy data on the kept modes.
inline double a_inner(const CauchyData& f, const CauchyData& g, const OneParticleStructure& ops) {
    const ModeSet& m = *ops.modes;
    CVec fu = m.to_complex * m.coefficients(f.u).cast<Complex>();
    CVec fp = m.to_complex * m.coefficients(f.nu).cast<Complex>();
    CVec gu = m.to_complex * m.coefficients(g.u).cast<Complex>();
    CVec gp = m.to_complex * m.coefficients(g.nu).cast<Complex>();
    Complex s = 0;
    for (int i = 0; i < m.size(); ++i) {
        double w = m.omega(i);
        s += w * std::conj(fu(i)) * gu(i) + std::conj(fp(i)) * gp(i) / w;
    }
    return s.real();
}

/// J applied to real Cauchy data on the kept modes.
inline CauchyData apply_J(const CauchyData& f, const OneParticleStructure& ops) {
    const ModeSet& m = *ops.modes;
    Vec cu = m.coefficients(f.u), cp = m.coefficients(f.nu);
    // The real cos/sin basis shares omega within each +-k pair, so J acts diagonally.
    Vec ju = -cp.cwiseQuotient(m.omega), jp = cu.cwiseProduct(m.omega);
    CauchyData out;
    out.u = m.samples(ju);
    out.nu = m.samples(jp);
    out.slice_time = f.slice_time;
    return out;
}

}  // namespace kgconn
