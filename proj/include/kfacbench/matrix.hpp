#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "kfacbench/common.hpp"

namespace kfacbench {

// ----------------------------------------------------------------------------
// Matrix: dense real matrix, row-major, double precision. The universal
// numeric carrier of the library. Constructors that accept user data validate
// finiteness; internal arithmetic writes through data() and is unchecked, so
// diverging training runs can be detected gracefully via all_finite().
// ----------------------------------------------------------------------------

class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
        : rows_(rows), cols_(cols), data_(std::move(entries)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("Matrix: entries.size() != rows*cols");
        }
        validate_finite();
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows_list) {
        rows_ = rows_list.size();
        cols_ = rows_ == 0 ? 0 : rows_list.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& row : rows_list) {
            if (row.size() != cols_) {
                throw DimensionError("Matrix: ragged initializer list");
            }
            data_.insert(data_.end(), row.begin(), row.end());
        }
        validate_finite();
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    static Matrix diag(const std::vector<double>& d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            m(i, i) = d[i];
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }
    const std::vector<double>& entries() const { return data_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    void validate_finite() const {
        if (!all_finite()) {
            throw NumericalError("Matrix: non-finite entry on construction");
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ----------------------------------------------------------------------------
// Elementwise and BLAS-like operations
// ----------------------------------------------------------------------------

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("operator+: shape mismatch");
    }
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        c.data()[i] = a.data()[i] + b.data()[i];
    }
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("operator-: shape mismatch");
    }
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        c.data()[i] = a.data()[i] - b.data()[i];
    }
    return c;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        c.data()[i] = s * a.data()[i];
    }
    return c;
}

// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ");
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double aip = ai[p];
            if (aip == 0.0) {
                continue;
            }
            const double* bp = b.row(p);
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += aip * bp[j];
            }
        }
    }
    return c;
}

// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: row counts differ");
    }
    Matrix c(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* ar = a.row(r);
        const double* br = b.row(r);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ari = ar[i];
            if (ari == 0.0) {
                continue;
            }
            double* ci = c.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += ari * br[j];
            }
        }
    }
    return c;
}

// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: column counts differ");
    }
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = b.row(j);
            double dot = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) {
                dot += ai[p] * bj[p];
            }
            ci[j] = dot;
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

// s * A^T A, filled exactly symmetric (upper triangle computed, mirrored).
inline Matrix crossprod_scaled(const Matrix& a, double s) {
    Matrix c(a.cols(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* ar = a.row(r);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ari = ar[i];
            if (ari == 0.0) {
                continue;
            }
            double* ci = c.row(i);
            for (std::size_t j = i; j < a.cols(); ++j) {
                ci[j] += ari * ar[j];
            }
        }
    }
    for (std::size_t i = 0; i < a.cols(); ++i) {
        for (std::size_t j = i; j < a.cols(); ++j) {
            const double v = s * c(i, j);
            c(i, j) = v;
            c(j, i) = v;
        }
    }
    return c;
}

inline double frobenius_norm(const Matrix& a) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += a.data()[i] * a.data()[i];
    }
    return std::sqrt(sum);
}

inline double frobenius_inner(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("frobenius_inner: shape mismatch");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += a.data()[i] * b.data()[i];
    }
    return sum;
}

// ----------------------------------------------------------------------------
// Kronecker product: result[(i*b.rows+k), (j*b.cols+l)] = a(i,j) * b(k,l)
// ----------------------------------------------------------------------------

inline Matrix kron(const Matrix& a, const Matrix& b) {
    if (a.empty() || b.empty()) {
        throw ParameterError("kron: operands must be non-empty");
    }
    Matrix c(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double aij = a(i, j);
            for (std::size_t k = 0; k < b.rows(); ++k) {
                double* dst = c.row(i * b.rows() + k) + j * b.cols();
                const double* src = b.row(k);
                for (std::size_t l = 0; l < b.cols(); ++l) {
                    dst[l] = aij * src[l];
                }
            }
        }
    }
    return c;
}

// ----------------------------------------------------------------------------
// Symmetric eigendecomposition via cyclic Jacobi rotations.
//
// Converged when the off-diagonal Frobenius norm drops below 1e-12 times the
// matrix Frobenius norm; hard cap of 100 sweeps. Eigenvalues returned in
// descending order, eigenvectors as the columns of q.
// ----------------------------------------------------------------------------

struct SymEig {
    Matrix q;              // orthogonal; columns are eigenvectors
    std::vector<double> d; // eigenvalues, descending
};

inline SymEig sym_eig(const Matrix& s) {
    if (s.rows() != s.cols()) {
        throw DimensionError("sym_eig: matrix must be square");
    }
    const std::size_t n = s.rows();
    // Symmetrize: inputs are symmetric up to accumulation error.
    std::vector<double> a(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            a[i * n + j] = 0.5 * (s(i, j) + s(j, i));
        }
    }
    Matrix v = Matrix::identity(n);
    double* vd = v.data();

    double norm = 0.0;
    for (double x : a) {
        norm += x * x;
    }
    norm = std::sqrt(norm);

    const double tol = 1e-12 * norm;
    bool converged = (norm == 0.0) || (n == 1);
    for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if (std::sqrt(off) <= tol) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) <= 1e-300) {
                    continue;
                }
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0)
                                     ? 1.0 / (theta + std::sqrt(theta * theta + 1.0))
                                     : 1.0 / (theta - std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                const double tau = sn / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) {
                        continue;
                    }
                    const double arp = a[r * n + p];
                    const double arq = a[r * n + q];
                    const double nrp = arp - sn * (arq + tau * arp);
                    const double nrq = arq + sn * (arp - tau * arq);
                    a[r * n + p] = nrp;
                    a[p * n + r] = nrp;
                    a[r * n + q] = nrq;
                    a[q * n + r] = nrq;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vrp = vd[r * n + p];
                    const double vrq = vd[r * n + q];
                    vd[r * n + p] = vrp - sn * (vrq + tau * vrp);
                    vd[r * n + q] = vrq + sn * (vrp - tau * vrq);
                }
            }
        }
    }
    if (!converged) {
        // Final check: the sweep loop may have converged on its last pass.
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if (std::sqrt(off) > tol) {
            throw NumericalError("sym_eig: Jacobi iteration did not converge in 100 sweeps");
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return a[x * n + x] > a[y * n + y];
    });

    SymEig out;
    out.d.resize(n);
    out.q = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.d[j] = a[order[j] * n + order[j]];
        for (std::size_t i = 0; i < n; ++i) {
            out.q(i, j) = vd[i * n + order[j]];
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// Dense inversion by Gauss-Jordan with partial pivoting. The pivot magnitude
// ratio serves as the condition estimate; ratios above 1e12 are rejected.
// Doubles as the brute-force oracle for the Kronecker-factored inverse.
// ----------------------------------------------------------------------------

inline Matrix dense_inverse(const Matrix& s) {
    if (s.rows() != s.cols()) {
        throw DimensionError("dense_inverse: matrix must be square");
    }
    const std::size_t n = s.rows();
    std::vector<double> a(s.data(), s.data() + n * n);
    Matrix inv = Matrix::identity(n);
    double* b = inv.data();

    double pivot_max = 0.0;
    double pivot_min = 0.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t best = col;
        double best_abs = std::abs(a[col * n + col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double v = std::abs(a[r * n + col]);
            if (v > best_abs) {
                best_abs = v;
                best = r;
            }
        }
        if (best_abs == 0.0) {
            throw NumericalError("dense_inverse: singular matrix");
        }
        if (best != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a[best * n + j], a[col * n + j]);
                std::swap(b[best * n + j], b[col * n + j]);
            }
        }
        pivot_max = (col == 0) ? best_abs : std::max(pivot_max, best_abs);
        pivot_min = (col == 0) ? best_abs : std::min(pivot_min, best_abs);

        const double inv_pivot = 1.0 / a[col * n + col];
        for (std::size_t j = 0; j < n; ++j) {
            a[col * n + j] *= inv_pivot;
            b[col * n + j] *= inv_pivot;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) {
                continue;
            }
            const double f = a[r * n + col];
            if (f == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                a[r * n + j] -= f * a[col * n + j];
                b[r * n + j] -= f * b[col * n + j];
            }
        }
    }
    if (pivot_min <= 0.0 || pivot_max / pivot_min > 1e12) {
        throw NumericalError("dense_inverse: matrix is ill-conditioned (pivot ratio above 1e12)");
    }
    return inv;
}

} // namespace kfacbench
