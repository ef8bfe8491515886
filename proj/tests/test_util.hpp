#pragma once

#include "kgconn/bogoliubov.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <random>

namespace kgtest {

using namespace kgconn;

inline GridSpec small_grid() {
    GridSpec g;
    g.t_min = -2.0;
    g.t_max = 2.0;
    return g;
}

/// exp(eps * Omega^{-1} S) with S symmetric Gaussian: a random symplectic
/// matrix on (u, pi) coefficients, Omega = [[0, -1], [1, 0]].
inline Mat random_symplectic(int M, double eps, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Mat S(2 * M, 2 * M);
    for (int i = 0; i < 2 * M; ++i)
        for (int j = 0; j <= i; ++j) S(i, j) = S(j, i) = n01(rng);
    Mat Oinv = Mat::Zero(2 * M, 2 * M);
    Oinv.block(0, M, M, M) = Mat::Identity(M, M);
    Oinv.block(M, 0, M, M) = -Mat::Identity(M, M);
    Mat X = eps * Oinv * S;
    return X.exp();
}

inline Vec random_vec(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = n01(rng);
    return v;
}

inline SymplecticMap modal_map(const Mat& W, const OneParticleStructure& ops) {
    SymplecticMap m;
    m.matrix = W;
    m.source_density = m.target_density = Vec::Ones(ops.size());
    m.modes = ops.modes;
    return m;
}

}  // namespace kgtest
