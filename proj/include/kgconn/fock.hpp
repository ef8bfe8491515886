#pragma once

// Truncated bosonic Fock space with total occupation sum(n_i) <= n_max.
// States are ordered by total particle number, then lexicographically
// descending in (n_1, ..., n_M). Operators are sparse; anything that would
// leave the truncated space is dropped, and each operator records the
// particle-number changes it can produce.

#include "kgconn/bogoliubov.hpp"
#include "kgconn/oneparticle.hpp"

#include <Eigen/Sparse>
#include <unsupported/Eigen/MatrixFunctions>

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace kgconn {

using SpMat = Eigen::SparseMatrix<Complex>;

class FockBasis {
public:
    FockBasis(int modes, int n_max) : M_(modes), n_max_(n_max) {
        if (modes < 1) throw ConfigError("CFG_FOCK", "need at least one mode");
        if (n_max < 0 || n_max > 255) throw ConfigError("CFG_FOCK", "n_max must lie in [0, 255]");
        sector_begin_.push_back(0);
        std::string occ(M_, '\0');
        for (int N = 0; N <= n_max_; ++N) {
            fill(occ, 0, N);
            sector_begin_.push_back(static_cast<int>(states_.size()));
        }
        index_.reserve(states_.size() * 2);
        for (int i = 0; i < dim(); ++i) index_.emplace(states_[i], i);
    }

    int modes() const { return M_; }
    int n_max() const { return n_max_; }
    int dim() const { return static_cast<int>(states_.size()); }
    int sector_begin(int N) const { return sector_begin_[N]; }
    int sector_end(int N) const { return sector_begin_[N + 1]; }
    int occupation(int i, int mode) const { return static_cast<unsigned char>(states_[i][mode]); }
    int total(int i) const { return total_[i]; }
    const std::string& key(int i) const { return states_[i]; }

    std::vector<int> state(int i) const {
        std::vector<int> n(M_);
        for (int j = 0; j < M_; ++j) n[j] = occupation(i, j);
        return n;
    }

    /// -1 when the tuple is not in the truncated basis.
    int index(const std::vector<int>& n) const {
        if (static_cast<int>(n.size()) != M_) return -1;
        std::string k(M_, '\0');
        int tot = 0;
        for (int j = 0; j < M_; ++j) {
            if (n[j] < 0) return -1;
            tot += n[j];
            if (tot > n_max_) return -1;
            k[j] = static_cast<char>(n[j]);
        }
        return index_of_key(k);
    }
    int index_of_key(const std::string& k) const {
        auto it = index_.find(k);
        return it == index_.end() ? -1 : it->second;
    }

    /// Number of weak compositions of 0..n_max into M parts: C(M + n_max, n_max).
    static long long expected_dimension(int M, int n_max) {
        long double c = 1;
        for (int i = 1; i <= n_max; ++i) c = c * (M + i) / i;
        return static_cast<long long>(c + 0.5L);
    }

private:
    void fill(std::string& occ, int j, int remaining) {
        if (j == M_ - 1) {
            occ[j] = static_cast<char>(remaining);
            states_.push_back(occ);
            int tot = 0;
            for (char c : occ) tot += static_cast<unsigned char>(c);
            total_.push_back(tot);
            return;
        }
        for (int n = remaining; n >= 0; --n) {
            occ[j] = static_cast<char>(n);
            fill(occ, j + 1, remaining - n);
        }
        occ[j] = 0;
    }

    int M_, n_max_;
    std::vector<std::string> states_;
    std::vector<int> total_;
    std::vector<int> sector_begin_;
    std::unordered_map<std::string, int> index_;
};

using BasisPtr = std::shared_ptr<const FockBasis>;

struct FockVector {
    CVec coeffs;
    BasisPtr basis;

    static FockVector zero(BasisPtr b) { return {CVec::Zero(b->dim()), b}; }
    static FockVector vacuum(BasisPtr b) {
        FockVector v = zero(b);
        v.coeffs(0) = 1.0;
        return v;
    }
    static FockVector basis_state(BasisPtr b, const std::vector<int>& n) {
        int i = b->index(n);
        if (i < 0) throw ConfigError("CFG_FOCK", "occupation tuple outside the truncated basis");
        FockVector v = zero(b);
        v.coeffs(i) = 1.0;
        return v;
    }

    double norm() const { return coeffs.norm(); }
    Complex dot(const FockVector& o) const { return coeffs.dot(o.coeffs); }  // conjugate-linear in this

    /// Norm of the component in each particle-number sector.
    std::vector<double> sector_norms() const {
        std::vector<double> out(basis->n_max() + 1, 0.0);
        for (int N = 0; N <= basis->n_max(); ++N)
            out[N] = coeffs.segment(basis->sector_begin(N), basis->sector_end(N) - basis->sector_begin(N)).norm();
        return out;
    }
    /// Highest sector carrying a nonzero coefficient, -1 for the zero vector.
    int max_sector() const {
        for (int N = basis->n_max(); N >= 0; --N)
            for (int i = basis->sector_begin(N); i < basis->sector_end(N); ++i)
                if (coeffs(i) != Complex(0)) return N;
        return -1;
    }

    FockVector operator+(const FockVector& o) const { return {coeffs + o.coeffs, basis}; }
    FockVector operator-(const FockVector& o) const { return {coeffs - o.coeffs, basis}; }
    FockVector operator*(Complex c) const { return {c * coeffs, basis}; }
};

struct FockOperator {
    SpMat mat;
    bool number_conserving = false;
    std::set<int> raises_by;
    BasisPtr basis;

    FockVector apply(const FockVector& v) const { return {mat * v.coeffs, basis}; }
    FockOperator adjoint() const {
        std::set<int> r;
        for (int d : raises_by) r.insert(-d);
        return {SpMat(mat.adjoint()), number_conserving, r, basis};
    }

    /// Every stored entry changes the particle number by an allowed amount.
    bool sparsity_consistent() const {
        for (int c = 0; c < mat.outerSize(); ++c)
            for (SpMat::InnerIterator it(mat, c); it; ++it) {
                if (it.value() == Complex(0)) continue;
                int d = basis->total(static_cast<int>(it.row())) - basis->total(static_cast<int>(it.col()));
                if (!raises_by.count(d)) return false;
            }
        return true;
    }

    FockOperator operator*(const FockOperator& o) const {
        std::set<int> r;
        for (int a : raises_by)
            for (int b : o.raises_by) r.insert(a + b);
        return {SpMat(mat * o.mat), number_conserving && o.number_conserving, r, basis};
    }
    FockOperator operator+(const FockOperator& o) const {
        std::set<int> r = raises_by;
        r.insert(o.raises_by.begin(), o.raises_by.end());
        return {SpMat(mat + o.mat), number_conserving && o.number_conserving, r, basis};
    }
    FockOperator operator-(const FockOperator& o) const {
        FockOperator n = o;
        n.mat = -n.mat;
        return *this + n;
    }
    FockOperator operator*(Complex c) const { return {SpMat(c * mat), number_conserving, raises_by, basis}; }
};

inline FockOperator identity_op(BasisPtr b) {
    SpMat I(b->dim(), b->dim());
    I.setIdentity();
    return {I, true, {0}, b};
}

inline void check_mode_vector(const CVec& v, const FockBasis& b) {
    if (v.size() != b.modes()) throw ConfigError("SHAPE", "mode vector length differs from the basis mode count");
}

/// a*(v) = sum_i v_i a*_i.
inline FockOperator create(const CVec& v, BasisPtr b) {
    check_mode_vector(v, *b);
    std::vector<Eigen::Triplet<Complex>> trip;
    std::string k;
    for (int s = 0; s < b->sector_begin(b->n_max()); ++s) {
        k = b->key(s);
        for (int i = 0; i < b->modes(); ++i) {
            if (v(i) == Complex(0)) continue;
            int n = static_cast<unsigned char>(k[i]);
            k[i] = static_cast<char>(n + 1);
            trip.emplace_back(b->index_of_key(k), s, v(i) * std::sqrt(n + 1.0));
            k[i] = static_cast<char>(n);
        }
    }
    SpMat m(b->dim(), b->dim());
    m.setFromTriplets(trip.begin(), trip.end());
    return {m, false, {1}, b};
}

/// a(v) = sum_i conj(v_i) a_i, the adjoint of a*(v).
inline FockOperator annihilate(const CVec& v, BasisPtr b) { return create(v, b).adjoint(); }

inline CVec unit_vector(int M, int i) {
    CVec e = CVec::Zero(M);
    e(i) = 1.0;
    return e;
}

inline double symmetry_defect(const CMat& K) { return max_abs(CMat(K - K.transpose())); }

/// a*(K) = sum_ij K_ij a*_i a*_j for symmetric K.
inline FockOperator pair_create(const CMat& K, BasisPtr b, double tol = 1e-12) {
    const int M = b->modes();
    if (K.rows() != M || K.cols() != M) throw ConfigError("SHAPE", "pair matrix size differs from the mode count");
    if (symmetry_defect(K) > tol * std::max(1.0, max_abs(K)))
        throw ConfigError("FOCK_SYMMETRY", "pair operator needs a symmetric matrix");
    std::vector<Eigen::Triplet<Complex>> trip;
    std::string k;
    int top = b->n_max() >= 2 ? b->sector_begin(b->n_max() - 1) : 0;
    for (int s = 0; s < top; ++s) {
        k = b->key(s);
        for (int i = 0; i < M; ++i) {
            int ni = static_cast<unsigned char>(k[i]);
            for (int j = i; j < M; ++j) {
                Complex c = K(i, j);
                if (c == Complex(0)) continue;
                if (i == j) {
                    k[i] = static_cast<char>(ni + 2);
                    trip.emplace_back(b->index_of_key(k), s, c * std::sqrt((ni + 1.0) * (ni + 2.0)));
                } else {
                    int nj = static_cast<unsigned char>(k[j]);
                    k[i] = static_cast<char>(ni + 1);
                    k[j] = static_cast<char>(nj + 1);
                    trip.emplace_back(b->index_of_key(k), s, 2.0 * c * std::sqrt((ni + 1.0) * (nj + 1.0)));
                    k[j] = static_cast<char>(nj);
                }
                k[i] = static_cast<char>(ni);
            }
        }
    }
    SpMat m(b->dim(), b->dim());
    m.setFromTriplets(trip.begin(), trip.end());
    return {m, false, {2}, b};
}

/// a(K) = sum_ij conj(K_ij) a_i a_j, the adjoint of a*(K).
inline FockOperator pair_annihilate(const CMat& K, BasisPtr b) { return pair_create(K, b).adjoint(); }

inline FockOperator number_op(BasisPtr b) {
    std::vector<Eigen::Triplet<Complex>> trip;
    for (int s = 0; s < b->dim(); ++s)
        if (b->total(s)) trip.emplace_back(s, s, static_cast<double>(b->total(s)));
    SpMat m(b->dim(), b->dim());
    m.setFromTriplets(trip.begin(), trip.end());
    return {m, true, {0}, b};
}

/// dGamma(X) = sum_ij X_ij a*_i a_j on sectors N <= max_sector.
inline FockOperator dgamma(const CMat& X, BasisPtr b, int max_sector = -1) {
    const int M = b->modes();
    if (X.rows() != M || X.cols() != M) throw ConfigError("SHAPE", "dGamma matrix size differs from the mode count");
    if (max_sector < 0 || max_sector > b->n_max()) max_sector = b->n_max();
    std::vector<Eigen::Triplet<Complex>> trip;
    std::string k;
    for (int s = 0; s < b->sector_end(max_sector); ++s) {
        k = b->key(s);
        for (int j = 0; j < M; ++j) {
            int nj = static_cast<unsigned char>(k[j]);
            if (!nj) continue;
            if (X(j, j) != Complex(0)) trip.emplace_back(s, s, X(j, j) * static_cast<double>(nj));
            k[j] = static_cast<char>(nj - 1);
            for (int i = 0; i < M; ++i) {
                if (i == j || X(i, j) == Complex(0)) continue;
                int ni = static_cast<unsigned char>(k[i]);
                k[i] = static_cast<char>(ni + 1);
                trip.emplace_back(b->index_of_key(k), s, X(i, j) * std::sqrt(nj * (ni + 1.0)));
                k[i] = static_cast<char>(ni);
            }
            k[j] = static_cast<char>(nj);
        }
    }
    SpMat m(b->dim(), b->dim());
    m.setFromTriplets(trip.begin(), trip.end());
    return {m, true, {0}, b};
}

/// Gamma(Q) materialised column by column through
///   Gamma(Q)|n> = n_j^{-1/2} a*(Q e_j) Gamma(Q)|n - e_j>,
/// j the first occupied mode. Memory grows with the square of the largest
/// sector, so keep the basis small.
inline FockOperator gamma(const CMat& Q, BasisPtr b) {
    const int M = b->modes();
    if (Q.rows() != M || Q.cols() != M) throw ConfigError("SHAPE", "Gamma matrix size differs from the mode count");
    std::vector<FockOperator> cr;
    for (int j = 0; j < M; ++j) cr.push_back(create(Q.col(j), b));
    // Columns are kept as sector-length vectors; Gamma(Q) preserves sectors.
    std::vector<CVec> cols(b->dim());
    cols[0] = CVec::Ones(1);
    std::vector<Eigen::Triplet<Complex>> trip;
    trip.emplace_back(0, 0, Complex(1.0));
    std::string k;
    for (int N = 1; N <= b->n_max(); ++N) {
        const int lo = b->sector_begin(N), hi = b->sector_end(N);
        const int plo = b->sector_begin(N - 1), phi = b->sector_end(N - 1);
        std::vector<SpMat> blk;
        for (int j = 0; j < M; ++j) blk.emplace_back(cr[j].mat.block(lo, plo, hi - lo, phi - plo));
        for (int s = lo; s < hi; ++s) {
            k = b->key(s);
            int j = 0;
            while (!k[j]) ++j;
            int nj = static_cast<unsigned char>(k[j]);
            k[j] = static_cast<char>(nj - 1);
            cols[s] = (blk[j] * cols[b->index_of_key(k)]) / std::sqrt(static_cast<double>(nj));
            for (int i = 0; i < hi - lo; ++i)
                if (cols[s](i) != Complex(0)) trip.emplace_back(lo + i, s, cols[s](i));
        }
        for (int s = plo; s < phi; ++s) cols[s] = CVec();
    }
    SpMat m(b->dim(), b->dim());
    m.setFromTriplets(trip.begin(), trip.end());
    return {m, true, {0}, b};
}

/// exp(A) v for a number-conserving sparse A whose norm on the sectors of v
/// is at most bound; Taylor series with scaling and squaring on the vector.
inline CVec expm_apply(const SpMat& A, const CVec& v, double bound) {
    int steps = std::max(1, static_cast<int>(std::ceil(bound / 0.5)));
    CVec x = v;
    const double scale = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        CVec term = x, sum = x;
        for (int n = 1; n < 60; ++n) {
            term = (A * term) * (scale / n);
            sum += term;
            if (term.norm() <= 1e-18 * std::max(1.0, sum.norm())) break;
        }
        x = sum;
    }
    return x;
}

/// Gamma(exp X) v = exp(dGamma(X)) v, exact on each sector.
inline FockVector gamma_exp_apply(const CMat& X, const FockVector& v) {
    int top = v.max_sector();
    if (top <= 0) return v;
    FockOperator dg = dgamma(X, v.basis, top);
    Eigen::JacobiSVD<CMat> svd(X);
    double bound = top * svd.singularValues()(0);
    return {expm_apply(dg.mat, v.coeffs, bound), v.basis};
}

/// exp(c A) v for a particle-number-raising or lowering A; the series is
/// finite on the truncated space.
inline CVec nilpotent_exp_apply(const SpMat& A, Complex c, const CVec& v) {
    CVec term = v, sum = v;
    for (int n = 1; n < 1000; ++n) {
        term = (A * term) * (c / static_cast<double>(n));
        if (term.squaredNorm() == 0.0) break;
        sum += term;
    }
    return sum;
}

/// det(1 - K*K)^{1/4} from the singular values of K.
inline double vacuum_factor(const CMat& K) {
    if (K.size() == 0) return 1.0;
    Eigen::JacobiSVD<CMat> svd(K);
    double d = 1.0;
    for (int i = 0; i < svd.singularValues().size(); ++i) {
        double s = svd.singularValues()(i);
        if (s >= 1.0) throw AdmissibilityError("||K|| >= 1");
        d *= std::pow(1.0 - s * s, 0.25);
    }
    return d;
}

/// U = det(1 - K*K)^{1/4} exp(-a*(K)/2) Gamma((q^{-1})*) exp(-a(L)/2),
/// applied in factored form. Gamma is applied as exp(dGamma(log Q)).
class Implementer {
public:
    Implementer(const BogoliubovData& b, BasisPtr basis) : basis_(std::move(basis)), data_(b) {
        const int M = basis_->modes();
        if (b.size() != M) throw ConfigError("SHAPE", "Bogoliubov data and Fock basis differ in mode count");
        if (!(b.op_norm_K < 1.0) || !(b.op_norm_L < 1.0))
            throw AdmissibilityError("implementer needs ||K|| < 1 and ||L|| < 1");
        d_ = vacuum_factor(b.K);
        CMat Ks = 0.5 * (b.K + b.K.transpose()), Ls = 0.5 * (b.L + b.L.transpose());
        if (max_abs(CMat(b.K - Ks)) > 1e-8 || max_abs(CMat(b.L - Ls)) > 1e-8)
            throw AdmissibilityError("K or L is not symmetric");
        aK_star_ = pair_create(Ks, basis_).mat;
        aL_star_ = pair_create(Ls, basis_).mat;
        aK_ = SpMat(aK_star_.adjoint());
        aL_ = SpMat(aL_star_.adjoint());
        CMat Q = b.q_inv.adjoint();
        log_Q_ = Q.log();
        if (!log_Q_.allFinite()) throw NumericalError("matrix logarithm of (q^{-1})* failed");
        dg_ = dgamma(log_Q_, basis_).mat;
        dg_adj_ = SpMat(dg_.adjoint());
        Eigen::JacobiSVD<CMat> svd(log_Q_);
        log_Q_norm_ = M ? svd.singularValues()(0) : 0.0;
    }

    double vacuum_overlap() const { return d_; }
    const BogoliubovData& data() const { return data_; }
    BasisPtr basis() const { return basis_; }

    FockVector apply(const FockVector& v) const {
        CVec x = nilpotent_exp_apply(aL_, -0.5, v.coeffs);
        CVec y = gamma_apply(dg_, x);
        return {d_ * nilpotent_exp_apply(aK_star_, -0.5, y), basis_};
    }

    /// U* = det(1 - K*K)^{1/4} exp(-a*(L)/2) Gamma(q^{-1}) exp(-a(K)/2).
    FockVector apply_adjoint(const FockVector& v) const {
        CVec x = nilpotent_exp_apply(aK_, -0.5, v.coeffs);
        CVec y = gamma_apply(dg_adj_, x);
        return {d_ * nilpotent_exp_apply(aL_star_, -0.5, y), basis_};
    }

    /// Dense materialisation; only for small bases.
    FockOperator to_operator() const {
        const int n = basis_->dim();
        std::vector<Eigen::Triplet<Complex>> trip;
        for (int c = 0; c < n; ++c) {
            FockVector e = FockVector::zero(basis_);
            e.coeffs(c) = 1.0;
            CVec col = apply(e).coeffs;
            for (int r = 0; r < n; ++r)
                if (col(r) != Complex(0)) trip.emplace_back(r, c, col(r));
        }
        SpMat m(n, n);
        m.setFromTriplets(trip.begin(), trip.end());
        std::set<int> raises;
        for (int d = -basis_->n_max(); d <= basis_->n_max(); d += 1)
            if (d % 2 == 0) raises.insert(d);
        return {m, false, raises, basis_};
    }

private:
    CVec gamma_apply(const SpMat& dg, const CVec& x) const {
        FockVector v{x, basis_};
        int top = v.max_sector();
        if (top <= 0) return x;
        return expm_apply(dg, x, top * log_Q_norm_);
    }

    BasisPtr basis_;
    BogoliubovData data_;
    double d_ = 1.0;
    SpMat aK_star_, aL_star_, aK_, aL_;
    CMat log_Q_;
    SpMat dg_, dg_adj_;  // dGamma(log Q) and its adjoint on the whole basis
    double log_Q_norm_ = 0.0;
};

inline Implementer natural_implementer(const BogoliubovData& b, BasisPtr basis) { return Implementer(b, basis); }

/// phi(v) = a(alpha) + a*(alpha) with alpha the annihilation amplitudes of v.
inline FockOperator field_op(const CauchyData& data, const OneParticleStructure& ops, BasisPtr b) {
    if (ops.size() != b->modes()) throw ConfigError("SHAPE", "one-particle modes differ from the Fock basis");
    CVec alpha = to_modes(data, ops).a;
    return annihilate(alpha, b) + create(alpha, b);
}

/// Field operator from real (u, pi) basis coefficients.
inline FockOperator field_op_coeffs(const Vec& y, const OneParticleStructure& ops, BasisPtr b) {
    CVec alpha = ops.annihilation_map() * y.cast<Complex>();
    return annihilate(alpha, b) + create(alpha, b);
}

/// ||(U phi(v) U* - phi(W v)) psi|| / ||psi|| with W the real modal matrix
/// and v given as (u, pi) basis coefficients.
inline double intertwining_defect(const Implementer& U, const Mat& W, const Vec& v, const OneParticleStructure& ops,
                                  const FockVector& psi) {
    BasisPtr b = U.basis();
    FockOperator phi = field_op_coeffs(v, ops, b);
    FockOperator phiW = field_op_coeffs(W * v, ops, b);
    FockVector lhs = U.apply(phi.apply(U.apply_adjoint(psi)));
    FockVector rhs = phiW.apply(psi);
    return (lhs - rhs).norm() / psi.norm();
}

/// sigma(W1, W2) with U(W1 W2) = sigma U(W1) U(W2):
///   sigma = det(1 - K2 L1*)^{1/2} d / (d1 d2),  d = det(1 - K*K)^{1/4}.
/// The square root is the product of principal roots of the eigenvalues,
/// which all have positive real part since ||K2||, ||L1|| < 1.
inline Complex cocycle(const BogoliubovData& b1, const BogoliubovData& b2) {
    BogoliubovData b12 = compose_blocks(b1, b2);
    const int M = b1.size();
    CMat A = CMat::Identity(M, M) - b2.K * b1.L.adjoint();
    Eigen::ComplexEigenSolver<CMat> es(A);
    Complex root = 1.0;
    for (int i = 0; i < M; ++i) root *= std::sqrt(es.eigenvalues()(i));
    return root * vacuum_factor(b12.K) / (vacuum_factor(b1.K) * vacuum_factor(b2.K));
}

/// Fock-level phase: <Omega, U12 Omega> / <Omega, U1 U2 Omega>.
inline Complex fock_phase(const Implementer& U12, const Implementer& U1, const Implementer& U2) {
    FockVector vac = FockVector::vacuum(U12.basis());
    Complex a = vac.dot(U12.apply(vac));
    Complex b = vac.dot(U1.apply(U2.apply(vac)));
    return a / b;
}

inline double expected_pairs(const Implementer& U) {
    FockVector psi = U.apply(FockVector::vacuum(U.basis()));
    return psi.dot(number_op(U.basis()).apply(psi)).real();
}

}  // namespace kgconn
