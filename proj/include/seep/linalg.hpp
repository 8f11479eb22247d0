#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "seep/common.hpp"

namespace seep {

/// Column-major-free minimal dense matrix: row-major n x m doubles.
struct DenseMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

struct SymmetricEigen {
    std::vector<double> values;  // unordered on return from jacobi_eigen
    DenseMatrix vectors;         // column k is the eigenvector of values[k]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic
/// sweep order; fine for the <= 51x51 covariance factors this toolkit needs.
inline SymmetricEigen jacobi_eigen(const DenseMatrix& m, int max_sweeps = 100, double tol = 1e-14) {
    require(m.rows == m.cols, "jacobi_eigen: matrix must be square");
    const std::size_t n = m.rows;
    DenseMatrix a = m;
    DenseMatrix v(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    auto offdiag = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return s;
    };

    double norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) norm2 += a(i, j) * a(i, j);
    const double stop = tol * tol * norm2;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (offdiag() <= stop) {
            SymmetricEigen out;
            out.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
            out.vectors = std::move(v);
            return out;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) == 0.0) continue;
                const double app = a(p, p), aqq = a(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    throw SolverError("jacobi_eigen: no convergence in " + std::to_string(max_sweeps) + " sweeps");
}

/// In-place Cholesky factorization A = L L^T (lower stored); throws if the
/// matrix is not positive definite.
inline DenseMatrix cholesky(const DenseMatrix& m) {
    require(m.rows == m.cols, "cholesky: matrix must be square");
    const std::size_t n = m.rows;
    DenseMatrix l(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0) throw SolverError("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

/// Solves A x = b given the Cholesky factor L of A.
inline std::vector<double> cholesky_solve(const DenseMatrix& l, const std::vector<double>& b) {
    const std::size_t n = l.rows;
    require(b.size() == n, "cholesky_solve: size mismatch");
    std::vector<double> y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

} // namespace seep
