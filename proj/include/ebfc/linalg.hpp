#pragma once

// Thin helpers over Eigen shared by every module: block extraction and
// assembly for sparse matrices, support detection, spectral checks.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ebfc/errors.hpp"

namespace ebfc {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

inline SpMat zeros(Index rows, Index cols) { return SpMat(rows, cols); }

inline SpMat identity(Index n) {
    SpMat I(n, n);
    I.setIdentity();
    return I;
}

inline SpMat to_sparse(const Mat& m, double drop = 0.0) {
    std::vector<Triplet> t;
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i)
            if (std::abs(m(i, j)) > drop) t.emplace_back(i, j, m(i, j));
    SpMat s(m.rows(), m.cols());
    s.setFromTriplets(t.begin(), t.end());
    return s;
}

inline Mat to_dense(const SpMat& s) { return Mat(s); }

/// Copy of the block [r0, r0+nr) x [c0, c0+nc).
inline SpMat sub_block(const SpMat& a, Index r0, Index nr, Index c0, Index nc) {
    std::vector<Triplet> t;
    for (Index j = c0; j < c0 + nc; ++j)
        for (SpMat::InnerIterator it(a, j); it; ++it)
            if (it.row() >= r0 && it.row() < r0 + nr)
                t.emplace_back(it.row() - r0, j - c0, it.value());
    SpMat out(nr, nc);
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

/// Block matrix assembly. Empty cells are zero blocks.
class BlockBuilder {
public:
    BlockBuilder(std::vector<Index> row_sizes, std::vector<Index> col_sizes)
        : rows_(std::move(row_sizes)), cols_(std::move(col_sizes)) {}

    BlockBuilder& set(std::size_t bi, std::size_t bj, const SpMat& block, double scale = 1.0) {
        if (block.rows() != rows_.at(bi) || block.cols() != cols_.at(bj))
            throw StructureError("block (" + std::to_string(bi) + "," + std::to_string(bj) +
                                 ") has shape " + std::to_string(block.rows()) + "x" +
                                 std::to_string(block.cols()) + ", expected " +
                                 std::to_string(rows_.at(bi)) + "x" + std::to_string(cols_.at(bj)));
        const Index r0 = offset(rows_, bi);
        const Index c0 = offset(cols_, bj);
        for (Index j = 0; j < block.cols(); ++j)
            for (SpMat::InnerIterator it(block, j); it; ++it)
                triplets_.emplace_back(r0 + it.row(), c0 + j, scale * it.value());
        return *this;
    }

    SpMat build() const {
        SpMat out(total(rows_), total(cols_));
        out.setFromTriplets(triplets_.begin(), triplets_.end());
        return out;
    }

private:
    static Index offset(const std::vector<Index>& sizes, std::size_t k) {
        Index o = 0;
        for (std::size_t i = 0; i < k; ++i) o += sizes[i];
        return o;
    }
    static Index total(const std::vector<Index>& sizes) { return offset(sizes, sizes.size()); }

    std::vector<Index> rows_, cols_;
    std::vector<Triplet> triplets_;
};

inline SpMat block_diag(const std::vector<SpMat>& blocks) {
    std::vector<Index> r, c;
    for (const auto& b : blocks) {
        r.push_back(b.rows());
        c.push_back(b.cols());
    }
    BlockBuilder bb(r, c);
    for (std::size_t k = 0; k < blocks.size(); ++k) bb.set(k, k, blocks[k]);
    return bb.build();
}

inline double max_abs(const SpMat& a) {
    double m = 0.0;
    for (Index j = 0; j < a.outerSize(); ++j)
        for (SpMat::InnerIterator it(a, j); it; ++it) m = std::max(m, std::abs(it.value()));
    return m;
}

inline double frobenius(const SpMat& a) { return a.rows() == 0 || a.cols() == 0 ? 0.0 : a.norm(); }

/// Indices of rows (equivalently columns, for symmetric input) that carry
/// at least one nonzero.
inline std::vector<Index> support(const SpMat& a) {
    std::vector<char> used(static_cast<std::size_t>(std::max(a.rows(), a.cols())), 0);
    for (Index j = 0; j < a.outerSize(); ++j)
        for (SpMat::InnerIterator it(a, j); it; ++it)
            if (it.value() != 0.0) {
                used[static_cast<std::size_t>(it.row())] = 1;
                used[static_cast<std::size_t>(j)] = 1;
            }
    std::vector<Index> idx;
    for (std::size_t i = 0; i < used.size(); ++i)
        if (used[i]) idx.push_back(static_cast<Index>(i));
    return idx;
}

/// Principal submatrix on the given index set.
inline SpMat principal(const SpMat& a, const std::vector<Index>& idx) {
    std::vector<Index> pos(static_cast<std::size_t>(a.rows()), -1);
    for (std::size_t k = 0; k < idx.size(); ++k) pos[static_cast<std::size_t>(idx[k])] = static_cast<Index>(k);
    std::vector<Triplet> t;
    for (Index j = 0; j < a.outerSize(); ++j) {
        const Index pj = pos[static_cast<std::size_t>(j)];
        if (pj < 0) continue;
        for (SpMat::InnerIterator it(a, j); it; ++it) {
            const Index pi = pos[static_cast<std::size_t>(it.row())];
            if (pi >= 0) t.emplace_back(pi, pj, it.value());
        }
    }
    const auto n = static_cast<Index>(idx.size());
    SpMat out(n, n);
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

/// Symmetric permutation: out(p[i], p[j]) = a(i, j) where p maps old to new positions.
inline SpMat permute_symmetric(const SpMat& a, const std::vector<Index>& old_to_new) {
    std::vector<Triplet> t;
    for (Index j = 0; j < a.outerSize(); ++j)
        for (SpMat::InnerIterator it(a, j); it; ++it)
            t.emplace_back(old_to_new[static_cast<std::size_t>(it.row())],
                           old_to_new[static_cast<std::size_t>(j)], it.value());
    SpMat out(a.rows(), a.cols());
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

inline SpMat permute_rows(const SpMat& a, const std::vector<Index>& old_to_new) {
    std::vector<Triplet> t;
    for (Index j = 0; j < a.outerSize(); ++j)
        for (SpMat::InnerIterator it(a, j); it; ++it)
            t.emplace_back(old_to_new[static_cast<std::size_t>(it.row())], j, it.value());
    SpMat out(a.rows(), a.cols());
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

/// How the smallest eigenvalue of a symmetric matrix was obtained.
enum class SpectrumMethod { dense_eigen, shifted_ldlt };

struct SpectrumCheck {
    double min_eigenvalue = 0.0;  ///< exact for dense_eigen, an estimate otherwise
    SpectrumMethod method = SpectrumMethod::dense_eigen;
    bool psd = true;
};

/// Semi-definiteness test on the symmetric part of `a`, restricted to its
/// support. Up to `dense_limit` supported rows the spectrum is computed
/// exactly; beyond that a shifted LDL^T factorization decides.
inline SpectrumCheck check_psd(const SpMat& a, double tol, Index dense_limit = 2000) {
    SpectrumCheck out;
    const SpMat sym = 0.5 * (a + SpMat(a.transpose()));
    const double scale = frobenius(sym);
    const auto idx = support(sym);
    if (idx.empty()) return out;
    const SpMat p = principal(sym, idx);
    if (static_cast<Index>(idx.size()) <= dense_limit) {
        Eigen::SelfAdjointEigenSolver<Mat> es(to_dense(p), Eigen::EigenvaluesOnly);
        out.min_eigenvalue = es.eigenvalues().minCoeff();
        out.method = SpectrumMethod::dense_eigen;
        out.psd = out.min_eigenvalue >= -tol * scale;
        return out;
    }
    out.method = SpectrumMethod::shifted_ldlt;
    const double shift = tol * scale;
    SpMat shifted = p + shift * identity(p.rows());
    Eigen::SimplicialLDLT<SpMat> ldlt(shifted);
    if (ldlt.info() != Eigen::Success) {
        out.psd = false;
        out.min_eigenvalue = -shift;
        return out;
    }
    const double dmin = ldlt.vectorD().minCoeff();
    out.psd = dmin > 0.0;
    out.min_eigenvalue = std::min(0.0, dmin) - shift;
    return out;
}

inline Vec concat(std::initializer_list<Vec> parts) {
    Index n = 0;
    for (const auto& p : parts) n += p.size();
    Vec out(n);
    Index o = 0;
    for (const auto& p : parts) {
        out.segment(o, p.size()) = p;
        o += p.size();
    }
    return out;
}

}  // namespace ebfc
