#pragma once

// Compressed-row sparse matrix with just the operations the solvers need:
// assembly from triplets, mat-vec, transpose, sparse product, row scaling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "meshdiff/core.hpp"

namespace meshdiff {

struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
};

class SparseMatrix {
public:
    SparseMatrix() = default;

    /// Assemble from coordinate triplets. Duplicate (row, col) entries are
    /// summed; column indices within a row come out sorted, so the result does
    /// not depend on triplet order (up to the summation order of duplicates,
    /// which follows a stable sort of the input).
    static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
        for (const auto& t : triplets) {
            if (t.row >= rows || t.col >= cols)
                throw ValidationError("SparseMatrix: triplet (" + std::to_string(t.row) + ", " +
                                      std::to_string(t.col) + ") out of range");
        }
        std::stable_sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        SparseMatrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.row_ptr_.assign(rows + 1, 0);
        for (std::size_t k = 0; k < triplets.size();) {
            const std::size_t r = triplets[k].row, c = triplets[k].col;
            double v = 0.0;
            while (k < triplets.size() && triplets[k].row == r && triplets[k].col == c) v += triplets[k++].value;
            m.col_.push_back(c);
            m.val_.push_back(v);
            ++m.row_ptr_[r + 1];
        }
        for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
        return m;
    }

    static SparseMatrix identity(std::size_t n) {
        std::vector<Triplet> t;
        t.reserve(n);
        for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
        return from_triplets(n, n, std::move(t));
    }

    static SparseMatrix diagonal(std::span<const double> d) {
        std::vector<Triplet> t;
        t.reserve(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) t.push_back({i, i, d[i]});
        return from_triplets(d.size(), d.size(), std::move(t));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t nnz() const { return val_.size(); }

    std::span<const std::size_t> row_ptr() const { return row_ptr_; }
    std::span<const std::size_t> col_index() const { return col_; }
    std::span<const double> values() const { return val_; }

    /// Entry (i, j); zero when not stored.
    double coeff(std::size_t i, std::size_t j) const {
        const auto first = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
        const auto last = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
        const auto it = std::lower_bound(first, last, j);
        if (it == last || *it != j) return 0.0;
        return val_[static_cast<std::size_t>(it - col_.begin())];
    }

    template <class Fn>
    void for_each_in_row(std::size_t i, Fn&& fn) const {
        for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) fn(col_[k], val_[k]);
    }

    std::vector<double> multiply(std::span<const double> x) const {
        if (x.size() != cols_) throw ValidationError("SparseMatrix::multiply: dimension mismatch");
        std::vector<double> y(rows_, 0.0);
        for (std::size_t i = 0; i < rows_; ++i) {
            double s = 0.0;
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) s += val_[k] * x[col_[k]];
            y[i] = s;
        }
        return y;
    }

    /// y = A^T x without materializing the transpose.
    std::vector<double> multiply_transpose(std::span<const double> x) const {
        if (x.size() != rows_) throw ValidationError("SparseMatrix::multiply_transpose: dimension mismatch");
        std::vector<double> y(cols_, 0.0);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) y[col_[k]] += val_[k] * x[i];
        return y;
    }

    SparseMatrix transpose() const {
        std::vector<Triplet> t;
        t.reserve(nnz());
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) t.push_back({col_[k], i, val_[k]});
        return from_triplets(cols_, rows_, std::move(t));
    }

    SparseMatrix operator*(const SparseMatrix& rhs) const {
        if (cols_ != rhs.rows_) throw ValidationError("SparseMatrix product: dimension mismatch");
        std::vector<Triplet> t;
        std::vector<double> acc(rhs.cols_, 0.0);
        std::vector<char> used(rhs.cols_, 0);
        std::vector<std::size_t> pattern;
        for (std::size_t i = 0; i < rows_; ++i) {
            pattern.clear();
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
                const std::size_t mid = col_[k];
                for (std::size_t q = rhs.row_ptr_[mid]; q < rhs.row_ptr_[mid + 1]; ++q) {
                    const std::size_t j = rhs.col_[q];
                    if (!used[j]) {
                        used[j] = 1;
                        pattern.push_back(j);
                    }
                    acc[j] += val_[k] * rhs.val_[q];
                }
            }
            for (std::size_t j : pattern) {
                t.push_back({i, j, acc[j]});
                acc[j] = 0.0;
                used[j] = 0;
            }
        }
        return from_triplets(rows_, rhs.cols_, std::move(t));
    }

    /// diag(s) * A
    SparseMatrix scale_rows(std::span<const double> s) const {
        if (s.size() != rows_) throw ValidationError("SparseMatrix::scale_rows: dimension mismatch");
        SparseMatrix m = *this;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) m.val_[k] *= s[i];
        return m;
    }

    std::vector<double> row_sums() const {
        std::vector<double> s(rows_, 0.0);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) s[i] += val_[k];
        return s;
    }

    std::vector<double> diagonal_values() const {
        std::vector<double> d(std::min(rows_, cols_), 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = coeff(i, i);
        return d;
    }

    std::vector<std::vector<double>> to_dense() const {
        std::vector<std::vector<double>> d(rows_, std::vector<double>(cols_, 0.0));
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) d[i][col_[k]] += val_[k];
        return d;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::size_t> col_;
    std::vector<double> val_;
};

/// max |A_ij - B_ij| over the union of both patterns.
inline double max_abs_difference(const SparseMatrix& a, const SparseMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("max_abs_difference: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        a.for_each_in_row(i, [&](std::size_t j, double v) { m = std::max(m, std::abs(v - b.coeff(i, j))); });
        b.for_each_in_row(i, [&](std::size_t j, double v) { m = std::max(m, std::abs(v - a.coeff(i, j))); });
    }
    return m;
}

inline double symmetry_defect(const SparseMatrix& a) { return max_abs_difference(a, a.transpose()); }

}  // namespace meshdiff
