#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "seep/common.hpp"

namespace seep {

/// Discretized case definition shared by the simulator, the physics losses
/// and the surrogate: uniform ny x nx cell-centered grid, fixed time step,
/// Dirichlet heads pinned on the leftmost/rightmost cell columns, no-flow
/// top/bottom rows. Convention used everywhere: index (row i, column j),
/// row-major storage, x grows with j and y with i.
struct CaseSpec {
    int nx = 51;
    int ny = 51;
    double dx = 20.0;
    double dy = 20.0;
    double dt = 0.2;
    int nt = 50;
    double ss = 1e-4;      // specific storage [1/L]
    double h_left = 202.0; // Dirichlet head, column 0 [L]
    double h_right = 200.0;
    double h_init = 200.0; // initial head outside the left column [L]

    void validate() const {
        require(nx >= 3, "CaseSpec: nx must be >= 3");
        require(ny >= 3, "CaseSpec: ny must be >= 3");
        require(nt >= 1, "CaseSpec: nt must be >= 1");
        require(dx > 0 && dy > 0, "CaseSpec: dx, dy must be > 0");
        require(dt > 0, "CaseSpec: dt must be > 0");
        require(ss > 0, "CaseSpec: ss must be > 0");
    }

    int cells() const { return nx * ny; }
    double t_end() const { return nt * dt; }

    bool operator==(const CaseSpec&) const = default;
};

/// One ny x nx real-valued field (ln-conductivity, conductivity, head,
/// residual...). Plain value type, row-major.
struct ScalarField2D {
    int ny = 0;
    int nx = 0;
    std::vector<double> v;

    ScalarField2D() = default;
    ScalarField2D(int ny_, int nx_, double fill = 0.0) : ny(ny_), nx(nx_), v(static_cast<size_t>(ny_) * nx_, fill) {}

    double& at(int i, int j) { return v[static_cast<size_t>(i) * nx + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * nx + j]; }
    size_t size() const { return v.size(); }

    bool same_shape(const ScalarField2D& o) const { return ny == o.ny && nx == o.nx; }
    bool operator==(const ScalarField2D&) const = default;
};

inline void require_shape(const ScalarField2D& f, const CaseSpec& spec, const std::string& what) {
    if (f.ny != spec.ny || f.nx != spec.nx)
        throw ShapeError(what + ": field is " + std::to_string(f.ny) + "x" + std::to_string(f.nx) +
                         ", case is " + std::to_string(spec.ny) + "x" + std::to_string(spec.nx));
}

/// nt+1 head snapshots; index 0 is the initial condition.
struct HeadSeries {
    std::vector<ScalarField2D> snapshots;

    int steps() const { return static_cast<int>(snapshots.size()) - 1; }
};

/// Constant field carrying normalized time step_index*dt/(nt*dt) in [0, 1];
/// the second input channel of the surrogate.
inline ScalarField2D time_channel(const CaseSpec& spec, int step_index) {
    spec.validate();
    if (step_index < 0 || step_index > spec.nt)
        throw std::out_of_range("time_channel: step_index " + std::to_string(step_index) +
                                " outside [0, " + std::to_string(spec.nt) + "]");
    const double t = static_cast<double>(step_index) / static_cast<double>(spec.nt);
    return ScalarField2D(spec.ny, spec.nx, t);
}

/// h_init everywhere, h_left on column 0.
inline ScalarField2D initial_head(const CaseSpec& spec) {
    spec.validate();
    ScalarField2D f(spec.ny, spec.nx, spec.h_init);
    for (int i = 0; i < spec.ny; ++i) f.at(i, 0) = spec.h_left;
    return f;
}

} // namespace seep
