#pragma once

// Bogoliubov blocks of a symplectic map in annihilation coordinates:
//   a(Wv) = q a(v) + conj(r) conj(a(v)),
// so the complexified map is [[q, conj r], [r, conj q]]. Derived operators
// K = conj(r q^{-1}) and L = -q^{-1} conj(r) are symmetric with norm < 1.

#include "kgconn/oneparticle.hpp"
#include "kgconn/wavesolver.hpp"

#include <Eigen/SVD>
#include <vector>

namespace kgconn {

struct BogoliubovData {
    CMat q, r;
    CMat q_inv;  // LU inverse
    CMat K, L;
    double hs_norm_r = 0.0;
    double op_norm_K = 0.0, op_norm_L = 0.0;
    double min_singular_q = 1.0;
    // Diagnostics.
    double structure_defect = 0.0;   // conjugate-block structure
    double group_defect = 0.0;       // |q*q - r*r - 1|
    double qtr_symmetry_defect = 0.0;  // q^T r symmetric, equivalent to K = K^T
    double qrh_symmetry_defect = 0.0;  // q r* symmetric, equivalent to L = L^T
    double K_symmetry_defect = 0.0, L_symmetry_defect = 0.0;
    double dual_inverse_defect = 0.0;  // |q^{-1} - (1 + r*r)^{-1} q*|
    bool closed = true;  // false when W was restricted to a mode subset
    std::shared_ptr<const ModeSet> modes;

    int size() const { return static_cast<int>(q.rows()); }
};

inline CMat transpose_defect_matrix(const CMat& A) { return A - A.transpose(); }

inline double operator_norm(const CMat& A) {
    if (A.size() == 0) return 0.0;
    Eigen::JacobiSVD<CMat> svd(A);
    return svd.singularValues()(0);
}

/// Fills q^{-1}, K, L and the diagnostics from (q, r).
inline void kl_operators(BogoliubovData& b) {
    const int M = b.size();
    CMat I = CMat::Identity(M, M);
    Eigen::PartialPivLU<CMat> lu(b.q);
    b.q_inv = lu.solve(I);
    CMat dual = (I + b.r.adjoint() * b.r).partialPivLu().solve(b.q.adjoint());
    b.dual_inverse_defect = max_abs(b.q_inv - dual);
    if (!b.q_inv.allFinite()) throw NumericalError("q is singular");
    b.K = (b.r * b.q_inv).conjugate();
    b.L = -b.q_inv * b.r.conjugate();
    b.K_symmetry_defect = max_abs(transpose_defect_matrix(b.K));
    b.L_symmetry_defect = max_abs(transpose_defect_matrix(b.L));
    b.op_norm_K = operator_norm(b.K);
    b.op_norm_L = operator_norm(b.L);
    b.hs_norm_r = b.r.norm();
    b.group_defect = max_abs(b.q.adjoint() * b.q - b.r.adjoint() * b.r - I);
    b.qtr_symmetry_defect = max_abs(transpose_defect_matrix(b.q.transpose() * b.r));
    b.qrh_symmetry_defect = max_abs(transpose_defect_matrix(b.q * b.r.adjoint()));
    Eigen::JacobiSVD<CMat> svd(b.q);
    b.min_singular_q = M ? svd.singularValues()(M - 1) : 1.0;
}

inline BogoliubovData from_qr(const CMat& q, const CMat& r, std::shared_ptr<const ModeSet> modes = nullptr) {
    BogoliubovData b;
    b.q = q;
    b.r = r;
    b.modes = std::move(modes);
    kl_operators(b);
    return b;
}

/// Real (u, pi) coefficient matrix of W on the structure's modes.
inline Mat modal_matrix(const SymplecticMap& W, const OneParticleStructure& ops, bool& closed) {
    const ModeSet& m = *ops.modes;
    const int M = m.size();
    if (W.modes) {
        if (W.modes->ks != m.ks || !(W.modes->grid == m.grid))
            throw ConfigError("SHAPE", "map and one-particle structure use different mode sets");
        closed = true;
        return W.matrix;
    }
    const int n = m.grid.n_x;
    if (W.matrix.rows() != 2 * n) throw ConfigError("SHAPE", "grid map size does not match the grid");
    if (!W.source_density.isOnes(1e-14) || !W.target_density.isOnes(1e-14))
        throw ConfigError("SHAPE", "Bogoliubov blocks need flat source and target slices");
    Mat P = Mat::Zero(2 * M, 2 * n), E = Mat::Zero(2 * n, 2 * M);
    P.topLeftCorner(M, n) = m.grid.dx() * m.basis.transpose();
    P.bottomRightCorner(M, n) = m.grid.dx() * m.basis.transpose();
    E.topLeftCorner(n, M) = m.basis;
    E.bottomRightCorner(n, M) = m.basis;
    closed = M == n;
    return P * W.matrix * E;
}

inline BogoliubovData blocks_of_modal(const Mat& Wm, const OneParticleStructure& ops, bool closed,
                                      double structure_tol = 1e-10) {
    const int M = ops.size();
    CMat T = ops.doubled_map();
    CMat C = T * Wm.cast<Complex>() * T.partialPivLu().solve(CMat::Identity(2 * M, 2 * M));
    BogoliubovData b;
    b.modes = ops.modes;
    b.closed = closed;
    b.q = C.topLeftCorner(M, M);
    b.r = C.bottomLeftCorner(M, M);
    double scale = std::max(1.0, max_abs(C));
    b.structure_defect = std::max(max_abs(C.topRightCorner(M, M) - b.r.conjugate()),
                                  max_abs(C.bottomRightCorner(M, M) - b.q.conjugate())) / scale;
    if (b.structure_defect > structure_tol)
        throw NumericalError("complexified map lacks the conjugate block structure (defect " +
                             std::to_string(b.structure_defect) + ")");
    kl_operators(b);
    return b;
}

/// Blocks of W on the modes of ops. Grid maps are restricted to those modes;
/// the result is exact (closed) only for a full mode set or a modal map.
inline BogoliubovData blocks(const SymplecticMap& W, const OneParticleStructure& ops) {
    bool closed = true;
    Mat Wm = modal_matrix(W, ops, closed);
    return blocks_of_modal(Wm, ops, closed);
}

/// Blocks of the product W1 W2.
inline BogoliubovData compose_blocks(const BogoliubovData& b1, const BogoliubovData& b2) {
    CMat q = b1.q * b2.q + b1.r.conjugate() * b2.r;
    CMat r = b1.r * b2.q + b1.q.conjugate() * b2.r;
    BogoliubovData b = from_qr(q, r, b1.modes);
    b.closed = b1.closed && b2.closed;
    return b;
}

/// Blocks of W^{-1}: q' = q*, r' = -r^T.
inline BogoliubovData inverse_blocks(const BogoliubovData& b) {
    BogoliubovData out = from_qr(b.q.adjoint(), -b.r.transpose(), b.modes);
    out.closed = b.closed;
    return out;
}

/// Single-mode (or +-k pair) squeeze u -> lambda u, pi -> pi / lambda on |k|.
inline Mat squeeze_modal(const ModeSet& m, int k, double lambda) {
    const int M = m.size();
    Mat W = Mat::Identity(2 * M, 2 * M);
    for (int c = 0; c < M; ++c)
        if (std::abs(m.ks[c]) == std::abs(k)) {
            W(c, c) = lambda;
            W(M + c, M + c) = 1.0 / lambda;
        }
    return W;
}

struct ShaleReport {
    std::vector<int> cutoffs;
    std::vector<double> hs_norm_r;  // per cutoff
    std::vector<int> row_k;         // |k| = 0..k_max
    std::vector<double> row_norm, row_omega;
    double tail_decay_exponent = 0.0;  // fitted slope of log row norm vs log omega
    double tail_fraction = 0.0;        // top-quartile share of ||r||_HS^2
    bool monotone = true;
    bool passes = false;
};

/// Cutoff sweep on the blocks of one map computed at the largest cutoff.
/// Each cutoff K restricts r to modes |k| <= K. The slope fit runs over
/// |k| in [fit_from, k_max].
inline ShaleReport shale_sweep(const BogoliubovData& b, int fit_from = 2) {
    ShaleReport rep;
    const ModeSet& m = *b.modes;
    int kmax = 0;
    for (int k : m.ks) kmax = std::max(kmax, std::abs(k));
    std::vector<double> row2(kmax + 1, 0.0), om(kmax + 1, 0.0);
    for (int i = 0; i < m.size(); ++i) {
        int ak = std::abs(m.ks[i]);
        row2[ak] += b.r.row(i).squaredNorm();
        om[ak] = m.omega(i);
    }
    for (int K = 0; K <= kmax; ++K) {
        std::vector<int> idx;
        for (int i = 0; i < m.size(); ++i)
            if (std::abs(m.ks[i]) <= K) idx.push_back(i);
        double s = 0.0;
        for (int a : idx)
            for (int c : idx) s += std::norm(b.r(a, c));
        rep.cutoffs.push_back(K);
        rep.hs_norm_r.push_back(std::sqrt(s));
        if (rep.hs_norm_r.size() > 1 && rep.hs_norm_r.back() < rep.hs_norm_r[rep.hs_norm_r.size() - 2])
            rep.monotone = false;
    }
    double total = 0.0, tail = 0.0;
    int quart = kmax - kmax / 4;  // top quartile of |k| values
    for (int k = 0; k <= kmax; ++k) {
        rep.row_k.push_back(k);
        rep.row_norm.push_back(std::sqrt(row2[k]));
        rep.row_omega.push_back(om[k]);
        total += row2[k];
        if (k > quart) tail += row2[k];
    }
    // Below the roundoff floor there is nothing to apportion.
    rep.tail_fraction = total > 1e-24 ? tail / total : 0.0;
    // Least-squares slope of log(row norm) against log(omega).
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int cnt = 0;
    for (int k = fit_from; k <= kmax; ++k) {
        if (row2[k] <= 1e-30) continue;
        double x = std::log(om[k]), y = 0.5 * std::log(row2[k]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++cnt;
    }
    rep.tail_decay_exponent = cnt >= 2 ? (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx) : 0.0;
    rep.passes = rep.tail_fraction < 0.01;
    return rep;
}

}  // namespace kgconn
