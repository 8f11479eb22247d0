#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "seep/common.hpp"
#include "seep/fd_solver.hpp"
#include "seep/grid.hpp"
#include "seep/kle.hpp"
#include "seep/linalg.hpp"
#include "seep/parallel.hpp"
#include "seep/rng.hpp"

namespace seep {

// ============================================================================
// Levenberg-Marquardt iterative ensemble smoother in KLE coefficient space.
// The prior over the coefficients is N(0, I), so the prior covariance term
// is the identity and no field-space covariance ever needs factorizing; the
// ln K field is reconstructed from each member only for forward evaluation.
// ============================================================================

/// Where and when heads are observed; data vectors are ordered step-major
/// (all points of the first step, then the next step, ...).
struct ObsSchedule {
    std::vector<std::pair<int, int>> points; // (row, col) cell indices
    std::vector<int> step_indices;           // within 1..nt
    double noise_std = 0.01;                 // observation noise sigma [L]

    int n_obs() const { return static_cast<int>(points.size() * step_indices.size()); }

    void validate(const CaseSpec& spec) const {
        require(!points.empty() && !step_indices.empty(), "ObsSchedule: empty schedule");
        require(noise_std > 0.0, "ObsSchedule: noise_std must be > 0");
        for (const auto& [r, c] : points)
            require(r >= 0 && r < spec.ny && c >= 0 && c < spec.nx,
                    "ObsSchedule: point outside the grid");
        for (int s : step_indices)
            require(s >= 1 && s <= spec.nt, "ObsSchedule: step outside 1..nt");
    }
};

/// 4x4 interior lattice at fractions {0.2, 0.4, 0.6, 0.8} of each axis and
/// 10 uniformly spaced observation times.
inline ObsSchedule default_obs_schedule(const CaseSpec& spec) {
    ObsSchedule s;
    for (double fy : {0.2, 0.4, 0.6, 0.8})
        for (double fx : {0.2, 0.4, 0.6, 0.8})
            s.points.emplace_back(static_cast<int>(std::llround(fy * (spec.ny - 1))),
                                  static_cast<int>(std::llround(fx * (spec.nx - 1))));
    for (int k = 1; k <= 10; ++k) {
        const int step = std::max(1, static_cast<int>(std::llround(k * spec.nt / 10.0)));
        if (s.step_indices.empty() || s.step_indices.back() != step) s.step_indices.push_back(step);
    }
    s.noise_std = 0.01;
    return s;
}

inline std::vector<double> observe_series(const HeadSeries& series, const ObsSchedule& schedule) {
    std::vector<double> d;
    d.reserve(schedule.n_obs());
    for (int s : schedule.step_indices)
        for (const auto& [r, c] : schedule.points) d.push_back(series.snapshots.at(s).at(r, c));
    return d;
}

struct Observations {
    std::vector<double> clean;
    std::vector<double> noisy;
};

/// Simulates the reference field and samples noisy heads per d = g(m) + eps.
inline Observations generate_observations(const CaseSpec& spec, const ScalarField2D& ref_lnk,
                                          const ObsSchedule& schedule, std::uint64_t seed) {
    schedule.validate(spec);
    const HeadSeries series = simulate(spec, to_conductivity(ref_lnk));
    Observations obs;
    obs.clean = observe_series(series, schedule);
    obs.noisy = obs.clean;
    Rng rng(seed, Stream::ObsNoise);
    for (double& x : obs.noisy) x += schedule.noise_std * rng.normal();
    return obs;
}

/// Maps a coefficient vector to the predicted data vector.
using IesForward = std::function<std::vector<double>(const std::vector<double>&)>;

struct EnsembleState {
    std::vector<std::vector<double>> members;   // current xi per member
    std::vector<std::vector<double>> prior;     // m^pr (fixed)
    std::vector<std::vector<double>> obs;       // perturbed observations per member
    std::vector<std::vector<double>> responses; // g(m_j) for current members
    int iteration = 0;
    double lambda = 1.0;
};

/// Mean squared mismatch between predictions and each member's observations.
inline double ensemble_mismatch(const std::vector<std::vector<double>>& responses,
                                const std::vector<std::vector<double>>& obs) {
    require(responses.size() == obs.size() && !obs.empty(), "ensemble_mismatch: size mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < obs.size(); ++j)
        for (std::size_t i = 0; i < obs[j].size(); ++i) {
            const double d = responses[j][i] - obs[j][i];
            s += d * d;
        }
    return s / (static_cast<double>(obs.size()) * static_cast<double>(obs.front().size()));
}

/// One damped ensemble update: covariances are estimated from the current
/// members/responses and every member moves by
///   m - (1/(1+lambda)) [C_M - C_MD S^-1 C_DM] (m - m_pr) - C_MD S^-1 (g(m) - d_obs)
/// with S = (1+lambda) C_D + C_DD and identity prior covariance.
inline std::vector<std::vector<double>> ies_step(const EnsembleState& state,
                                                 const std::vector<double>& c_d_diag) {
    const std::size_t ne = state.members.size();
    require(ne >= 2, "ies_step: need at least two members");
    const std::size_t np = state.members.front().size();
    const std::size_t nd = c_d_diag.size();
    require(state.responses.size() == ne, "ies_step: responses missing");
    require(state.responses.front().size() == nd, "ies_step: response size mismatch");

    std::vector<double> m_mean(np, 0.0), d_mean(nd, 0.0);
    for (std::size_t j = 0; j < ne; ++j) {
        for (std::size_t i = 0; i < np; ++i) m_mean[i] += state.members[j][i];
        for (std::size_t i = 0; i < nd; ++i) d_mean[i] += state.responses[j][i];
    }
    for (double& x : m_mean) x /= static_cast<double>(ne);
    for (double& x : d_mean) x /= static_cast<double>(ne);

    const double inv_ne1 = 1.0 / static_cast<double>(ne - 1);
    DenseMatrix c_md(np, nd, 0.0), c_dd(nd, nd, 0.0), c_mm(np, np, 0.0);
    std::vector<double> am(np), ad(nd);
    for (std::size_t j = 0; j < ne; ++j) {
        for (std::size_t i = 0; i < np; ++i) am[i] = state.members[j][i] - m_mean[i];
        for (std::size_t i = 0; i < nd; ++i) ad[i] = state.responses[j][i] - d_mean[i];
        for (std::size_t a = 0; a < np; ++a)
            for (std::size_t b = 0; b < nd; ++b) c_md(a, b) += am[a] * ad[b];
        for (std::size_t a = 0; a < nd; ++a)
            for (std::size_t b = a; b < nd; ++b) c_dd(a, b) += ad[a] * ad[b];
        for (std::size_t a = 0; a < np; ++a)
            for (std::size_t b = a; b < np; ++b) c_mm(a, b) += am[a] * am[b];
    }
    for (auto& x : c_md.a) x *= inv_ne1;
    for (std::size_t a = 0; a < nd; ++a)
        for (std::size_t b = a; b < nd; ++b) {
            c_dd(a, b) *= inv_ne1;
            c_dd(b, a) = c_dd(a, b);
        }
    for (std::size_t a = 0; a < np; ++a)
        for (std::size_t b = a; b < np; ++b) {
            c_mm(a, b) *= inv_ne1;
            c_mm(b, a) = c_mm(a, b);
        }

    DenseMatrix s(nd, nd, 0.0);
    for (std::size_t a = 0; a < nd; ++a) {
        require(c_d_diag[a] > 0.0, "ies_step: observation covariance must be positive");
        for (std::size_t b = 0; b < nd; ++b) s(a, b) = c_dd(a, b);
        s(a, a) += (1.0 + state.lambda) * c_d_diag[a];
    }
    DenseMatrix chol;
    try {
        chol = cholesky(s);
    } catch (const SolverError& e) {
        throw SolverError(std::string("ies_step: (1+lambda) C_D + C_DD not factorizable: ") +
                          e.what());
    }

    const double damp = 1.0 / (1.0 + state.lambda);
    std::vector<std::vector<double>> updated(ne);
    std::vector<double> u(np), v(nd), w(nd), resid(nd);
    for (std::size_t j = 0; j < ne; ++j) {
        for (std::size_t i = 0; i < np; ++i) u[i] = state.members[j][i] - state.prior[j][i];

        // v = C_DM u ; w = S^-1 v
        for (std::size_t b = 0; b < nd; ++b) {
            double acc = 0.0;
            for (std::size_t a = 0; a < np; ++a) acc += c_md(a, b) * u[a];
            v[b] = acc;
        }
        w = cholesky_solve(chol, v);

        for (std::size_t i = 0; i < nd; ++i) resid[i] = state.responses[j][i] - state.obs[j][i];
        const std::vector<double> t2 = cholesky_solve(chol, resid);

        std::vector<double> next(np);
        for (std::size_t a = 0; a < np; ++a) {
            double cmu = 0.0;
            for (std::size_t i = 0; i < np; ++i) cmu += c_mm(a, i) * u[i];
            double cmd_w = 0.0, cmd_t2 = 0.0;
            for (std::size_t b = 0; b < nd; ++b) {
                cmd_w += c_md(a, b) * w[b];
                cmd_t2 += c_md(a, b) * t2[b];
            }
            next[a] = state.members[j][a] - damp * (cmu - cmd_w) - cmd_t2;
        }
        updated[j] = std::move(next);
    }
    return updated;
}

struct IesConfig {
    int ensemble_size = 100;
    double eps1 = 0.01;   // max member change
    double eps2 = 1e-4;   // relative mismatch change
    int i_max = 10;       // accepted-iteration cap
    double lambda_cap = 1e8;
    std::uint64_t seed = 0;
};

struct IesHistoryRow {
    int attempt = 0; // 0 = initial state
    double lambda = 0.0;
    double mis = 0.0;
    bool accepted = false;
};

struct IesResult {
    EnsembleState state;
    std::vector<IesHistoryRow> history;
    std::vector<std::vector<double>> prior_members;
    std::string terminated_by; // "member_change" | "mis_change" | "max_iterations" | "stagnation"
    bool stagnated = false;

    double initial_mis() const { return history.front().mis; }
    double final_mis() const {
        for (auto it = history.rbegin(); it != history.rend(); ++it)
            if (it->accepted) return it->mis;
        return history.front().mis;
    }
};

inline std::vector<std::vector<double>> evaluate_members(
    const IesForward& forward, const std::vector<std::vector<double>>& members) {
    std::vector<std::vector<double>> responses(members.size());
    parallel_for(members.size(), [&](std::size_t j) { responses[j] = forward(members[j]); });
    return responses;
}

/// Full LM-ES loop: accepted steps must decrease the mismatch, rejected
/// steps roll back and quadruple lambda (halved on acceptance). Stops on
/// (1) max member change < eps1, (2) relative MIS change < eps2,
/// (3) i_max accepted iterations, or a stagnation report at the lambda cap.
inline IesResult run_ies(const IesConfig& cfg, int n_params, const std::vector<double>& d_obs,
                         double noise_std, const IesForward& forward) {
    require(cfg.ensemble_size >= 2, "run_ies: ensemble_size must be >= 2");
    require(n_params >= 1, "run_ies: n_params must be >= 1");
    require(noise_std > 0.0, "run_ies: noise_std must be > 0");

    IesResult out;
    EnsembleState& st = out.state;
    st.members.resize(cfg.ensemble_size);
    st.obs.resize(cfg.ensemble_size);
    for (int j = 0; j < cfg.ensemble_size; ++j) {
        Rng prior_rng(cfg.seed, Stream::IesPrior, static_cast<std::uint64_t>(j));
        st.members[j].resize(n_params);
        for (double& x : st.members[j]) x = prior_rng.normal();
        Rng obs_rng(cfg.seed, Stream::IesObsPerturb, static_cast<std::uint64_t>(j));
        st.obs[j] = d_obs;
        for (double& x : st.obs[j]) x += noise_std * obs_rng.normal();
    }
    st.prior = st.members;
    out.prior_members = st.members;

    const std::vector<double> c_d(d_obs.size(), noise_std * noise_std);
    st.responses = evaluate_members(forward, st.members);
    double mis = ensemble_mismatch(st.responses, st.obs);
    st.lambda = std::pow(10.0, std::floor(std::log10(mis)));
    out.history.push_back({0, st.lambda, mis, true});

    int accepted = 0;
    int attempt = 0;
    while (accepted < cfg.i_max) {
        ++attempt;
        std::vector<std::vector<double>> proposal = ies_step(st, c_d);

        double max_change = 0.0;
        for (std::size_t j = 0; j < proposal.size(); ++j)
            for (std::size_t i = 0; i < proposal[j].size(); ++i)
                max_change = std::max(max_change, std::abs(proposal[j][i] - st.members[j][i]));

        std::vector<std::vector<double>> responses = evaluate_members(forward, proposal);
        const double mis_new = ensemble_mismatch(responses, st.obs);

        if (max_change < cfg.eps1) {
            // Converged in parameter space; adopt the (negligible) update.
            st.members = std::move(proposal);
            st.responses = std::move(responses);
            st.iteration = ++accepted;
            out.history.push_back({attempt, st.lambda, mis_new, true});
            out.terminated_by = "member_change";
            return out;
        }

        if (mis_new < mis) {
            st.members = std::move(proposal);
            st.responses = std::move(responses);
            st.iteration = ++accepted;
            out.history.push_back({attempt, st.lambda, mis_new, true});
            const double rel = std::abs(mis_new - mis) / std::max(1.0, std::abs(mis));
            mis = mis_new;
            st.lambda = std::max(st.lambda * 0.5, 1e-12);
            if (rel < cfg.eps2) {
                out.terminated_by = "mis_change";
                return out;
            }
        } else {
            out.history.push_back({attempt, st.lambda, mis_new, false});
            st.lambda *= 4.0;
            if (st.lambda > cfg.lambda_cap) {
                out.terminated_by = "stagnation";
                out.stagnated = true;
                return out;
            }
        }
    }
    out.terminated_by = "max_iterations";
    return out;
}

/// Maps every member through the KLE (and optional transform) and returns
/// the per-cell mean and sample standard deviation of ln K.
inline std::pair<ScalarField2D, ScalarField2D> ensemble_stats(
    const std::vector<std::vector<double>>& members, const KLEBasis& basis,
    const std::optional<PolyTransform>& pt = std::nullopt) {
    require(members.size() >= 2, "ensemble_stats: need at least two members");
    const int ny = basis.mean_field.ny, nx = basis.mean_field.nx;
    ScalarField2D mean(ny, nx, 0.0), m2(ny, nx, 0.0);
    long n = 0;
    for (const auto& xi : members) {
        const ScalarField2D lnk = realization_lnk(basis, xi, pt);
        ++n;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t c = 0; c < mean.size(); ++c) {
            const double delta = lnk.v[c] - mean.v[c];
            mean.v[c] += delta * inv_n;
            m2.v[c] += delta * (lnk.v[c] - mean.v[c]);
        }
    }
    ScalarField2D stddev(ny, nx, 0.0);
    for (std::size_t c = 0; c < m2.size(); ++c)
        stddev.v[c] = std::sqrt(m2.v[c] / static_cast<double>(n - 1));
    return {std::move(mean), std::move(stddev)};
}

} // namespace seep
