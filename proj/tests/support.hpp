#pragma once

// Random fixtures and dense oracles shared by the unit tests.

#include <cmath>
#include <random>

#include "ebfc/energy_system.hpp"
#include "ebfc/linalg.hpp"

namespace ebfc::test {

using Rng = std::mt19937_64;

inline Mat rand_mat(Rng& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
}

inline Vec rand_vec(Rng& rng, Index n, double lo = -1.0, double hi = 1.0) { return rand_mat(rng, n, 1, lo, hi); }

inline Index rand_int(Rng& rng, Index lo, Index hi) {
    return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

/// Gram matrix of a random rank-limited factor, so the result is PSD and
/// usually singular.
inline Mat rand_psd(Rng& rng, Index n, Index rank) {
    const Mat g = rand_mat(rng, rank, n);
    Mat a = g.transpose() * g;
    return 0.5 * (a + a.transpose());
}

inline Mat rand_spd(Rng& rng, Index n) { return rand_psd(rng, n, n) + 0.5 * Mat::Identity(n, n); }

inline Mat rand_skew(Rng& rng, Index n) {
    const Mat k = rand_mat(rng, n, n);
    return k - k.transpose();
}

/// Random valid quadratic system: J = K - K^T, R = G^T G (rank deficient),
/// M1 SPD, M2 PSD, S invertible and E = S^{-T} M2 so that E^T S = M2.
inline EnergySystem random_system(Rng& rng, const Partition& p) {
    EnergySystem s;
    s.partition = p;
    const Index n = p.n();
    s.J = to_sparse(rand_skew(rng, n));
    s.R = to_sparse(rand_psd(rng, n, std::max<Index>(1, n / 2)));
    s.B = to_sparse(rand_mat(rng, n, p.m));
    s.M1 = to_sparse(rand_spd(rng, p.n1));
    const Mat M2 = p.n2 > 0 ? Mat(rand_psd(rng, p.n2, std::max<Index>(1, p.n2 - 1)) + 0.1 * Mat::Identity(p.n2, p.n2))
                            : Mat(0, 0);
    const Mat S = Mat::Identity(p.n2, p.n2) + 0.3 * rand_mat(rng, p.n2, p.n2);
    const Mat E = p.n2 > 0 ? Mat(S.transpose().partialPivLu().solve(M2)) : Mat(0, 0);
    s.M2 = to_sparse(M2);
    s.S = to_sparse(S);
    s.E = to_sparse(E);
    return s;
}

inline Partition random_partition(Rng& rng, Index max_block = 3, Index max_m = 3) {
    Partition p;
    do {
        p.n1 = rand_int(rng, 0, max_block);
        p.n2 = rand_int(rng, 0, max_block);
        p.n3 = rand_int(rng, 0, max_block);
    } while (p.n() == 0);
    p.m = rand_int(rng, 1, max_m);
    return p;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

inline double max_abs(const Mat& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

inline double min_eig(const Mat& a) {
    if (a.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
    return es.eigenvalues().minCoeff();
}

}  // namespace ebfc::test
