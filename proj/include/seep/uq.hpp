#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "seep/common.hpp"
#include "seep/fd_solver.hpp"
#include "seep/grid.hpp"
#include "seep/kle.hpp"
#include "seep/model.hpp"
#include "seep/parallel.hpp"
#include "seep/training.hpp"

namespace seep {

// ============================================================================
// Monte-Carlo propagation of the stochastic conductivity through a forward
// model (simulator or surrogate): per-cell head moments at selected steps,
// head PDFs at probe points, and the variance/correlation-length
// extrapolation sweep.
// ============================================================================

using ForwardModel = std::function<HeadSeries(const Realization&)>;

inline ForwardModel simulator_forward(const CaseSpec& spec) {
    return [spec](const Realization& r) { return simulate(spec, r.k); };
}

inline ForwardModel surrogate_forward(const Model& model) {
    return [&model](const Realization& r) { return rollout(model, r.lnk); };
}

struct MomentFields {
    std::vector<int> steps;
    std::vector<ScalarField2D> mean;     // one per requested step
    std::vector<ScalarField2D> variance; // unbiased sample variance
    long n_samples = 0;
    long n_failed = 0;
};

/// Streaming per-cell mean/variance (Welford, fixed realization order).
/// Forward failures are skipped and counted; more than 1% failures aborts.
inline MomentFields mc_moments(const ForwardModel& forward, const std::vector<Realization>& fields,
                               const CaseSpec& spec, const std::vector<int>& steps) {
    require(fields.size() >= 2, "mc_moments: need at least two realizations");
    for (int s : steps)
        require(s >= 0 && s <= spec.nt, "mc_moments: step index outside [0, nt]");

    MomentFields out;
    out.steps = steps;
    out.mean.assign(steps.size(), ScalarField2D(spec.ny, spec.nx, 0.0));
    std::vector<ScalarField2D> m2(steps.size(), ScalarField2D(spec.ny, spec.nx, 0.0));

    const std::size_t chunk = std::max<std::size_t>(1, std::min<std::size_t>(32, fields.size()));
    std::vector<std::vector<ScalarField2D>> slot(chunk);
    std::vector<std::string> failure(chunk);

    for (std::size_t lo = 0; lo < fields.size(); lo += chunk) {
        const std::size_t hi = std::min(fields.size(), lo + chunk);
        parallel_for(hi - lo, [&](std::size_t q) {
            failure[q].clear();
            slot[q].clear();
            try {
                const HeadSeries series = forward(fields[lo + q]);
                for (int s : steps) slot[q].push_back(series.snapshots.at(s));
            } catch (const std::exception& e) {
                failure[q] = e.what();
            }
        });
        for (std::size_t q = 0; q < hi - lo; ++q) {
            if (!failure[q].empty()) {
                ++out.n_failed;
                std::fprintf(stderr, "mc_moments: realization %zu failed: %s\n", lo + q,
                             failure[q].c_str());
                continue;
            }
            ++out.n_samples;
            const double inv_n = 1.0 / static_cast<double>(out.n_samples);
            for (std::size_t s = 0; s < steps.size(); ++s) {
                ScalarField2D& mean = out.mean[s];
                ScalarField2D& acc = m2[s];
                const ScalarField2D& x = slot[q][s];
                for (std::size_t c = 0; c < mean.size(); ++c) {
                    const double delta = x.v[c] - mean.v[c];
                    mean.v[c] += delta * inv_n;
                    acc.v[c] += delta * (x.v[c] - mean.v[c]);
                }
            }
        }
    }
    if (out.n_failed * 100 > static_cast<long>(fields.size()))
        throw SolverError("mc_moments: " + std::to_string(out.n_failed) + " of " +
                          std::to_string(fields.size()) + " forward runs failed (> 1%)");
    if (out.n_samples < 2) throw SolverError("mc_moments: fewer than two successful runs");

    out.variance.assign(steps.size(), ScalarField2D(spec.ny, spec.nx, 0.0));
    const double inv = 1.0 / static_cast<double>(out.n_samples - 1);
    for (std::size_t s = 0; s < steps.size(); ++s)
        for (std::size_t c = 0; c < m2[s].size(); ++c) out.variance[s].v[c] = m2[s].v[c] * inv;
    return out;
}

/// Moment-output steps used by the UQ workflows (early / mid / final time).
inline std::vector<int> default_moment_steps(const CaseSpec& spec) {
    if (spec.nt >= 50) return {13, 25, 50};
    return {std::max(1, spec.nt / 4), std::max(1, spec.nt / 2), spec.nt};
}

// ---------------------------------------------------------------------------
// PDFs at probe points
// ---------------------------------------------------------------------------

struct ProbePdf {
    ProbePoint probe;
    std::vector<double> edges;     // bins+1
    std::vector<double> density;   // bins, integrates to 1
};

inline std::vector<ProbePoint> default_pdf_probes() {
    return {{140.0, 780.0, 5.2}, {780.0, 780.0, 9.2}, {520.0, 520.0, 9.2}};
}

inline std::vector<ProbePdf> pdf_at_points(const ForwardModel& forward,
                                           const std::vector<Realization>& fields,
                                           const CaseSpec& spec,
                                           const std::vector<ProbePoint>& probes, int bins = 50) {
    require(!probes.empty(), "pdf_at_points: no probes");
    require(bins >= 1, "pdf_at_points: bins must be >= 1");
    std::vector<std::array<int, 3>> loc; // (row, col, step), validated up front
    for (const ProbePoint& p : probes) loc.push_back({p.row(spec), p.col(spec), p.step(spec)});

    std::vector<std::vector<double>> samples(probes.size(),
                                             std::vector<double>(fields.size(), 0.0));
    parallel_for(fields.size(), [&](std::size_t i) {
        const HeadSeries series = forward(fields[i]);
        for (std::size_t p = 0; p < probes.size(); ++p)
            samples[p][i] = series.snapshots[loc[p][2]].at(loc[p][0], loc[p][1]);
    });

    std::vector<ProbePdf> out;
    for (std::size_t p = 0; p < probes.size(); ++p) {
        ProbePdf pdf;
        pdf.probe = probes[p];
        auto [mn_it, mx_it] = std::minmax_element(samples[p].begin(), samples[p].end());
        double lo = *mn_it, hi = *mx_it;
        if (lo == hi) hi = lo + 1e-12; // constant forward model: single occupied bin
        pdf.edges.resize(bins + 1);
        for (int b = 0; b <= bins; ++b) pdf.edges[b] = lo + (hi - lo) * b / bins;
        std::vector<long> counts(bins, 0);
        for (double x : samples[p]) {
            int b = static_cast<int>((x - lo) / (hi - lo) * bins);
            if (b >= bins) b = bins - 1;
            if (b < 0) b = 0;
            ++counts[b];
        }
        const double width = (hi - lo) / bins;
        pdf.density.resize(bins);
        for (int b = 0; b < bins; ++b)
            pdf.density[b] = static_cast<double>(counts[b]) /
                             (static_cast<double>(samples[p].size()) * width);
        out.push_back(std::move(pdf));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extrapolation sweep (variance / correlation-length generalization)
// ---------------------------------------------------------------------------

struct SweepRow {
    std::string label;
    double sigma2 = 0.0;
    double eta = 0.0;
    double mean_rel_l2 = 0.0;
    double mean_r2 = 0.0;
    double var_rel_l2 = 0.0;
    double var_r2 = 0.0;
};

struct SweepCase {
    std::string label;
    double sigma2;
    double eta;
};

/// Runs surrogate-MC against simulator-MC on identical realization sets for
/// each (sigma2, eta) case and reports moment-field metrics concatenated
/// over the default moment steps.
inline std::vector<SweepRow> extrapolation_sweep(const Model& model,
                                                 const std::vector<SweepCase>& cases,
                                                 int n_realizations, double energy_fraction,
                                                 std::uint64_t seed) {
    require(n_realizations >= 2, "extrapolation_sweep: need at least two realizations");
    const CaseSpec& spec = model.spec();
    const std::vector<int> steps = default_moment_steps(spec);

    std::vector<SweepRow> rows;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const SweepCase& sc = cases[ci];
        const KLEBasis basis = build_kle(spec, sc.sigma2, sc.eta, sc.eta, energy_fraction);
        std::vector<Realization> fields(n_realizations);
        parallel_for(static_cast<std::size_t>(n_realizations), [&](std::size_t i) {
            Rng rng(seed, Stream::SweepFields, (static_cast<std::uint64_t>(ci) << 32) + i);
            fields[i] = make_realization(basis, draw_xi(basis, rng), std::nullopt);
        });

        const MomentFields ref = mc_moments(simulator_forward(spec), fields, spec, steps);
        const MomentFields sur = mc_moments(surrogate_forward(model), fields, spec, steps);

        std::vector<double> mean_ref, mean_sur, var_ref, var_sur;
        for (std::size_t s = 0; s < steps.size(); ++s) {
            mean_ref.insert(mean_ref.end(), ref.mean[s].v.begin(), ref.mean[s].v.end());
            mean_sur.insert(mean_sur.end(), sur.mean[s].v.begin(), sur.mean[s].v.end());
            var_ref.insert(var_ref.end(), ref.variance[s].v.begin(), ref.variance[s].v.end());
            var_sur.insert(var_sur.end(), sur.variance[s].v.begin(), sur.variance[s].v.end());
        }
        SweepRow row;
        row.label = sc.label;
        row.sigma2 = sc.sigma2;
        row.eta = sc.eta;
        row.mean_rel_l2 = relative_l2(mean_sur, mean_ref);
        row.mean_r2 = r2_score(mean_sur, mean_ref);
        row.var_rel_l2 = relative_l2(var_sur, var_ref);
        row.var_r2 = r2_score(var_sur, var_ref);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace seep
