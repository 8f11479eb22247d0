#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <vector>

#include "seep/common.hpp"
#include "seep/grid.hpp"
#include "seep/linalg.hpp"
#include "seep/rng.hpp"

namespace seep {

// ============================================================================
// Karhunen-Loeve machinery for the exponential covariance
//   C(x1, x2) = sigma2 * exp(-|x1-x2|/eta_x - |y1-y2|/eta_y)
// evaluated at cell centers. The kernel is separable, so the 2-D eigenpairs
// are products of the eigenpairs of one nx x nx and one ny x ny factor
// matrix; those small symmetric problems go through cyclic Jacobi.
// ============================================================================

/// Truncated discrete KL basis of the log-conductivity field.
struct KLEBasis {
    std::vector<double> eigenvalues;       // descending, strictly positive
    std::vector<ScalarField2D> eigenfields; // unit Euclidean norm over cells
    ScalarField2D mean_field;
    double sigma2 = 1.0;
    double eta_x = 0.0;
    double eta_y = 0.0;
    double energy_fraction = 0.0; // requested target
    double total_energy = 0.0;    // sum of all nx*ny eigenvalues

    int terms() const { return static_cast<int>(eigenvalues.size()); }

    double retained_energy() const {
        return std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
    }
};

namespace detail {

inline SymmetricEigen sorted_exponential_factor(int n, double cell, double eta) {
    DenseMatrix c(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) c(a, b) = std::exp(-std::abs(a - b) * cell / eta);
    SymmetricEigen e = jacobi_eigen(c);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return e.values[l] > e.values[r]; });
    SymmetricEigen out;
    out.values.resize(n);
    out.vectors = DenseMatrix(n, n);
    for (int k = 0; k < n; ++k) {
        out.values[k] = e.values[order[k]];
        // Fix the sign so the decomposition is deterministic: first entry of
        // largest magnitude made positive.
        int pivot = 0;
        for (int i = 1; i < n; ++i)
            if (std::abs(e.vectors(i, order[k])) > std::abs(e.vectors(pivot, order[k]))) pivot = i;
        const double flip = e.vectors(pivot, order[k]) < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < n; ++i) out.vectors(i, k) = flip * e.vectors(i, order[k]);
    }
    return out;
}

} // namespace detail

inline KLEBasis build_kle(const CaseSpec& spec, double sigma2, double eta_x, double eta_y,
                          double energy_fraction) {
    spec.validate();
    require(sigma2 > 0.0, "build_kle: sigma2 must be > 0");
    require(eta_x > 0.0 && eta_y > 0.0, "build_kle: correlation lengths must be > 0");
    require(energy_fraction > 0.0 && energy_fraction <= 1.0,
            "build_kle: energy_fraction must lie in (0, 1]");

    const SymmetricEigen ex = detail::sorted_exponential_factor(spec.nx, spec.dx, eta_x);
    const SymmetricEigen ey = detail::sorted_exponential_factor(spec.ny, spec.dy, eta_y);

    struct Pair {
        double lambda;
        int a, b;
    };
    std::vector<Pair> pairs;
    pairs.reserve(static_cast<std::size_t>(spec.nx) * spec.ny);
    for (int a = 0; a < spec.nx; ++a)
        for (int b = 0; b < spec.ny; ++b)
            pairs.push_back({sigma2 * ex.values[a] * ey.values[b], a, b});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& l, const Pair& r) {
        if (l.lambda != r.lambda) return l.lambda > r.lambda;
        if (l.a != r.a) return l.a < r.a;
        return l.b < r.b;
    });

    double total = 0.0;
    for (const Pair& p : pairs) total += p.lambda;

    KLEBasis basis;
    basis.sigma2 = sigma2;
    basis.eta_x = eta_x;
    basis.eta_y = eta_y;
    basis.energy_fraction = energy_fraction;
    basis.total_energy = total;
    basis.mean_field = ScalarField2D(spec.ny, spec.nx, 0.0);

    const double target = energy_fraction * total;
    double cum = 0.0;
    for (const Pair& p : pairs) {
        if (!(p.lambda > 0.0))
            throw SolverError("build_kle: non-positive eigenvalue from Jacobi solve");
        cum += p.lambda;
        basis.eigenvalues.push_back(p.lambda);
        ScalarField2D f(spec.ny, spec.nx);
        for (int i = 0; i < spec.ny; ++i)
            for (int j = 0; j < spec.nx; ++j) f.at(i, j) = ey.vectors(i, p.b) * ex.vectors(j, p.a);
        basis.eigenfields.push_back(std::move(f));
        if (cum >= target) break;
    }
    return basis;
}

/// gamma = mean + sum_i sqrt(lambda_i) f_i xi_i.
inline ScalarField2D sample_gaussian(const KLEBasis& basis, const std::vector<double>& xi) {
    if (static_cast<int>(xi.size()) != basis.terms())
        throw ShapeError("sample_gaussian: coefficient vector has " + std::to_string(xi.size()) +
                         " entries, basis retains " + std::to_string(basis.terms()));
    ScalarField2D out = basis.mean_field;
    for (int k = 0; k < basis.terms(); ++k) {
        const double w = std::sqrt(basis.eigenvalues[k]) * xi[k];
        const ScalarField2D& f = basis.eigenfields[k];
        for (std::size_t c = 0; c < out.size(); ++c) out.v[c] += w * f.v[c];
    }
    return out;
}

inline std::vector<double> draw_xi(const KLEBasis& basis, Rng& rng) {
    std::vector<double> xi(basis.terms());
    for (double& x : xi) x = rng.normal();
    return xi;
}

/// Hermite-style polynomial map turning a Gaussian field into a non-Gaussian
/// log-conductivity: u0 + u1*g + u2*(g^2-1) + u3*(g^3-3g).
struct PolyTransform {
    double u0 = 0.0, u1 = 1.0, u2 = 0.0, u3 = 0.0;

    void validate() const {
        require(u1 != 0.0 || u2 != 0.0 || u3 != 0.0,
                "PolyTransform: at least one of u1..u3 must be nonzero");
    }

    double operator()(double g) const {
        return u0 + u1 * g + u2 * (g * g - 1.0) + u3 * (g * g * g - 3.0 * g);
    }
};

inline ScalarField2D transform_non_gaussian(const ScalarField2D& gamma, const PolyTransform& pt) {
    pt.validate();
    ScalarField2D out = gamma;
    for (double& x : out.v) x = pt(x);
    return out;
}

/// Pointwise exp, inputs clamped to [-20, 20] (with a stderr note) so the
/// conductivity stays in a sane positive range.
inline ScalarField2D to_conductivity(const ScalarField2D& lnk) {
    ScalarField2D out = lnk;
    std::size_t clamped = 0;
    for (double& x : out.v) {
        if (x > 20.0) { x = 20.0; ++clamped; }
        else if (x < -20.0) { x = -20.0; ++clamped; }
        x = std::exp(x);
    }
    if (clamped > 0)
        std::fprintf(stderr, "to_conductivity: clamped %zu ln-K value(s) to [-20, 20]\n", clamped);
    return out;
}

/// xi -> ln K, applying the optional polynomial transform.
inline ScalarField2D realization_lnk(const KLEBasis& basis, const std::vector<double>& xi,
                                     const std::optional<PolyTransform>& pt = std::nullopt) {
    ScalarField2D g = sample_gaussian(basis, xi);
    if (pt) return transform_non_gaussian(g, *pt);
    return g;
}

} // namespace seep
