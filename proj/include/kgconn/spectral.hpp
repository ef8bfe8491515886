#pragma once

// Fourier machinery on the periodic grid. Everything is dense: n_x is small
// and dense matrices keep the evolution bit-reproducible.

#include "kgconn/geometry.hpp"

#include <cmath>
#include <vector>

namespace kgconn {

/// A set of Fourier modes together with a real orthonormal basis for them.
///
/// Real basis column for k > 0 is sqrt(2/L) cos(k_eff x), for k < 0 it is
/// sqrt(2/L) sin(|k|_eff x); k = 0 and the Nyquist mode are 1/sqrt(L) and
/// (-1)^j/sqrt(L). Orthonormality is with respect to dx-weighted sums.
struct ModeSet {
    GridSpec grid;
    std::vector<int> ks;
    Vec k_eff;   // derivative symbol, zero on the Nyquist mode
    Vec omega;   // sqrt(k_eff^2 + m^2)
    Mat basis;   // (n_x, M)
    CMat to_complex;  // hat(u)_k = to_complex * real coefficients

    int size() const { return static_cast<int>(ks.size()); }
    bool is_full() const { return size() == grid.n_x; }

    int index_of(int k) const {
        for (int i = 0; i < size(); ++i)
            if (ks[i] == k) return i;
        return -1;
    }

    /// Real basis coefficients of grid samples (orthogonal projection).
    Mat coefficients(const Mat& samples) const { return grid.dx() * basis.transpose() * samples; }
    Mat samples(const Mat& coefficients) const { return basis * coefficients; }

    static ModeSet make(const GridSpec& g, std::vector<int> ks) {
        g.check();
        ModeSet s;
        s.grid = g;
        s.ks = std::move(ks);
        const int n = g.n_x, M = s.size();
        const double L = g.circumference;
        s.k_eff = Vec::Zero(M);
        s.omega = Vec::Zero(M);
        s.basis = Mat::Zero(n, M);
        s.to_complex = CMat::Zero(M, M);
        for (int c = 0; c < M; ++c) {
            int k = s.ks[c];
            int ak = std::abs(k);
            if (ak > n / 2) throw ConfigError("CFG_KMAX", "mode beyond the grid Nyquist number");
            bool nyquist = ak == n / 2;
            double ke = 2.0 * pi * ak / L;
            s.k_eff(c) = nyquist ? 0.0 : ke;
            s.omega(c) = std::sqrt(s.k_eff(c) * s.k_eff(c) + g.mass * g.mass);
            for (int j = 0; j < n; ++j) {
                double x = g.x(j);
                if (k == 0) s.basis(j, c) = 1.0 / std::sqrt(L);
                else if (nyquist) s.basis(j, c) = (j % 2 ? -1.0 : 1.0) / std::sqrt(L);
                else if (k > 0) s.basis(j, c) = std::sqrt(2.0 / L) * std::cos(ke * x);
                else s.basis(j, c) = std::sqrt(2.0 / L) * std::sin(ke * x);
            }
        }
        const double r2 = 1.0 / std::sqrt(2.0);
        const Complex I(0, 1);
        for (int c = 0; c < M; ++c) {
            int k = s.ks[c];
            if (k == 0 || std::abs(k) == n / 2) {
                s.to_complex(c, c) = 1.0;
                continue;
            }
            int plus = s.index_of(std::abs(k)), minus = s.index_of(-std::abs(k));
            if (plus < 0 || minus < 0) throw ConfigError("CFG_KMAX", "mode set must be closed under k -> -k");
            if (k > 0) {  // cosine column
                s.to_complex(plus, c) = r2;
                s.to_complex(minus, c) = r2;
            } else {  // sine column
                s.to_complex(plus, c) = -I * r2;
                s.to_complex(minus, c) = I * r2;
            }
        }
        return s;
    }

    /// Modes |k| <= k_max.
    static ModeSet truncated(const GridSpec& g, int k_max) {
        if (k_max < 0 || k_max > g.n_x / 2 - 1)
            throw ConfigError("CFG_KMAX", "k_max must lie in [0, n_x/2 - 1]");
        std::vector<int> ks;
        for (int k = -k_max; k <= k_max; ++k) ks.push_back(k);
        return make(g, ks);
    }

    /// All n_x grid modes, Nyquist included.
    static ModeSet full(const GridSpec& g) {
        std::vector<int> ks;
        for (int k = -g.n_x / 2 + 1; k <= g.n_x / 2; ++k) ks.push_back(k);
        return make(g, ks);
    }
};

/// Real antisymmetric spectral derivative on the grid (Nyquist mode removed).
inline Mat spectral_derivative(const GridSpec& g) {
    ModeSet full = ModeSet::full(g);
    const int n = g.n_x;
    Mat Dm = Mat::Zero(n, n);
    for (int c = 0; c < n; ++c) {
        int k = full.ks[c];
        if (k <= 0 || k == n / 2) continue;
        int s = full.index_of(-k);
        double ke = full.k_eff(c);
        Dm(s, c) = -ke;  // d/dx cos = -k sin
        Dm(c, s) = ke;   // d/dx sin = k cos
    }
    Mat D = g.dx() * full.basis * Dm * full.basis.transpose();
    return 0.5 * (D - D.transpose());
}

}  // namespace kgconn
