#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seep/common.hpp"
#include "seep/grid.hpp"

namespace seep {

// ============================================================================
// Implicit (backward-Euler) five-point finite-difference solver for
//   ss * dh/dt = div(K grad h)
// on the cell-centered grid of a CaseSpec. Face conductivities are harmonic
// means, top/bottom no-flow faces carry zero transmissibility, and the
// Dirichlet columns are kept in the unknown vector as pinned identity rows
// (their couplings are folded into the right-hand side so the matrix stays
// symmetric positive definite for CG).
// ============================================================================

inline double harmonic_mean(double k1, double k2) {
    if (!(k1 > 0.0) || !(k2 > 0.0))
        throw std::domain_error("harmonic_mean: conductivities must be > 0");
    return 2.0 * k1 * k2 / (k1 + k2);
}

/// One backward-Euler step as a pentadiagonal SPD system. Off-diagonal
/// arrays hold the coefficient applied to the named neighbor; entries are 0
/// where no coupling exists (domain edge, no-flow face, pinned neighbor).
struct LinearSystem {
    int ny = 0, nx = 0;
    std::vector<double> diag, east, west, north, south;
    std::vector<double> rhs;
    std::vector<std::uint8_t> pinned; // identity rows (Dirichlet columns)

    int n() const { return ny * nx; }

    void apply(const std::vector<double>& x, std::vector<double>& y) const {
        for (int i = 0; i < ny; ++i) {
            const int row = i * nx;
            for (int j = 0; j < nx; ++j) {
                const int idx = row + j;
                double s = diag[idx] * x[idx];
                if (j + 1 < nx) s += east[idx] * x[idx + 1];
                if (j > 0) s += west[idx] * x[idx - 1];
                if (i > 0) s += north[idx] * x[idx - nx];
                if (i + 1 < ny) s += south[idx] * x[idx + nx];
                y[idx] = s;
            }
        }
    }
};

inline void require_positive_conductivity(const ScalarField2D& k) {
    for (double x : k.v)
        if (!(x > 0.0)) throw std::domain_error("conductivity field must be strictly positive");
}

inline LinearSystem assemble_step(const CaseSpec& spec, const ScalarField2D& k,
                                  const ScalarField2D& h_prev) {
    spec.validate();
    require_shape(k, spec, "assemble_step: K");
    require_shape(h_prev, spec, "assemble_step: h_prev");
    require_positive_conductivity(k);

    const int nx = spec.nx, ny = spec.ny;
    const double inv_dx2 = 1.0 / (spec.dx * spec.dx);
    const double inv_dy2 = 1.0 / (spec.dy * spec.dy);
    const double time_coeff = spec.ss / spec.dt;

    LinearSystem sys;
    sys.ny = ny;
    sys.nx = nx;
    sys.diag.assign(sys.n(), 0.0);
    sys.east.assign(sys.n(), 0.0);
    sys.west.assign(sys.n(), 0.0);
    sys.north.assign(sys.n(), 0.0);
    sys.south.assign(sys.n(), 0.0);
    sys.rhs.assign(sys.n(), 0.0);
    sys.pinned.assign(sys.n(), 0);

    for (int i = 0; i < ny; ++i) {
        for (int j = 0; j < nx; ++j) {
            const int idx = i * nx + j;
            if (j == 0 || j == nx - 1) {
                sys.diag[idx] = 1.0;
                sys.rhs[idx] = (j == 0) ? spec.h_left : spec.h_right;
                sys.pinned[idx] = 1;
                continue;
            }
            double diag = time_coeff;
            double rhs = time_coeff * h_prev.at(i, j);

            const double te = harmonic_mean(k.at(i, j), k.at(i, j + 1)) * inv_dx2;
            diag += te;
            if (j + 1 == nx - 1) rhs += te * spec.h_right;
            else sys.east[idx] = -te;

            const double tw = harmonic_mean(k.at(i, j), k.at(i, j - 1)) * inv_dx2;
            diag += tw;
            if (j - 1 == 0) rhs += tw * spec.h_left;
            else sys.west[idx] = -tw;

            if (i > 0) {
                const double tn = harmonic_mean(k.at(i, j), k.at(i - 1, j)) * inv_dy2;
                diag += tn;
                sys.north[idx] = -tn;
            }
            if (i + 1 < ny) {
                const double ts = harmonic_mean(k.at(i, j), k.at(i + 1, j)) * inv_dy2;
                diag += ts;
                sys.south[idx] = -ts;
            }
            sys.diag[idx] = diag;
            sys.rhs[idx] = rhs;
        }
    }
    return sys;
}

/// Jacobi-preconditioned conjugate gradients, relative residual 1e-12,
/// iteration cap 10*n. When `warm_start` is given it must carry the exact
/// pinned values; search directions then stay zero on pinned rows, so
/// Dirichlet cells keep their prescribed heads bitwise.
inline ScalarField2D solve_step(const LinearSystem& sys,
                                const ScalarField2D* warm_start = nullptr,
                                double tol = 1e-12) {
    const int n = sys.n();
    std::vector<double> x(n, 0.0);
    if (warm_start) {
        require(static_cast<int>(warm_start->size()) == n, "solve_step: warm start size mismatch");
        x = warm_start->v;
    } else {
        for (int i = 0; i < n; ++i)
            if (sys.pinned[i]) x[i] = sys.rhs[i];
    }

    std::vector<double> r(n), z(n), p(n), ap(n);
    sys.apply(x, r);
    double bnorm2 = 0.0;
    for (int i = 0; i < n; ++i) {
        r[i] = sys.rhs[i] - r[i];
        bnorm2 += sys.rhs[i] * sys.rhs[i];
    }
    const double stop2 = tol * tol * (bnorm2 > 0.0 ? bnorm2 : 1.0);

    auto rnorm2 = [&]() {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += r[i] * r[i];
        return s;
    };

    double rz = 0.0;
    for (int i = 0; i < n; ++i) {
        z[i] = r[i] / sys.diag[i];
        rz += r[i] * z[i];
    }
    p = z;

    const int max_iter = 10 * n;
    double res2 = rnorm2();
    int iter = 0;
    while (res2 > stop2 && iter < max_iter) {
        sys.apply(p, ap);
        double pap = 0.0;
        for (int i = 0; i < n; ++i) pap += p[i] * ap[i];
        if (!(pap > 0.0))
            throw SolverError("solve_step: system not positive definite (p'Ap = " +
                              std::to_string(pap) + ")");
        const double alpha = rz / pap;
        for (int i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        double rz_next = 0.0;
        for (int i = 0; i < n; ++i) {
            z[i] = r[i] / sys.diag[i];
            rz_next += r[i] * z[i];
        }
        const double beta = rz_next / rz;
        rz = rz_next;
        for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        res2 = rnorm2();
        ++iter;
    }
    if (res2 > stop2)
        throw SolverError("solve_step: CG stalled after " + std::to_string(iter) +
                          " iterations, |r|/|b| = " + std::to_string(std::sqrt(res2 / bnorm2)));

    ScalarField2D out(sys.ny, sys.nx);
    out.v = std::move(x);
    return out;
}

/// Full transient run: snapshots[0] is the initial condition, snapshot n the
/// backward-Euler solution after n steps. Pure; parallel calls over
/// different realizations are safe.
inline HeadSeries simulate(const CaseSpec& spec, const ScalarField2D& k) {
    spec.validate();
    require_shape(k, spec, "simulate: K");
    HeadSeries series;
    series.snapshots.reserve(spec.nt + 1);
    series.snapshots.push_back(initial_head(spec));
    for (int n = 1; n <= spec.nt; ++n) {
        const LinearSystem sys = assemble_step(spec, k, series.snapshots.back());
        ScalarField2D h = solve_step(sys, &series.snapshots.back());
        for (double x : h.v)
            if (!std::isfinite(x))
                throw NumericError("simulate: non-finite head at step " + std::to_string(n));
        series.snapshots.push_back(std::move(h));
    }
    return series;
}

} // namespace seep
