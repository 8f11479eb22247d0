#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seep/common.hpp"
#include "seep/fd_solver.hpp"
#include "seep/field_io.hpp"
#include "seep/grid.hpp"
#include "seep/kle.hpp"
#include "seep/losses.hpp"
#include "seep/model.hpp"
#include "seep/parallel.hpp"
#include "seep/rng.hpp"

namespace seep {

// ============================================================================
// Dataset assembly, the training loop, and the evaluation metrics.
// ============================================================================

struct TrainConfig {
    int n_labeled = 30;
    int n_virtual = 150;
    int n_test = 200;
    int epochs = 300;
    int batch_labeled = 64;
    int batch_virtual = 16;
    double learning_rate = 1e-3;
    std::uint64_t seed = 20;
    LossWeights weights;

    double sigma2 = 1.0;
    double eta_x = 408.0;
    double eta_y = 408.0;
    double energy_fraction = 0.8;
    std::optional<PolyTransform> transform;

    ModelConfig model; // empty stages -> ModelConfig::default_for(spec)

    void validate() const {
        require(n_labeled >= 0 && n_virtual >= 0 && n_test >= 0, "TrainConfig: negative counts");
        require(n_labeled + n_virtual >= 1, "TrainConfig: need at least one realization");
        require(epochs >= 1, "TrainConfig: epochs must be >= 1");
        require(batch_labeled >= 1 && batch_virtual >= 1, "TrainConfig: batch sizes must be >= 1");
        require(learning_rate > 0, "TrainConfig: learning rate must be > 0");
    }
};

struct Realization {
    std::vector<double> xi;
    ScalarField2D lnk;
    ScalarField2D k;
};

struct LabeledRealization {
    Realization fields;
    HeadSeries series;
};

struct Dataset {
    KLEBasis basis;
    std::vector<LabeledRealization> labeled;
    std::vector<Realization> virtuals; // never solved by the simulator
    std::vector<Realization> test;     // references simulated during evaluation
};

inline Realization make_realization(const KLEBasis& basis, std::vector<double> xi,
                                    const std::optional<PolyTransform>& pt) {
    Realization r;
    r.lnk = realization_lnk(basis, xi, pt);
    r.k = to_conductivity(r.lnk);
    r.xi = std::move(xi);
    return r;
}

/// Draws the labeled/virtual/test realizations from disjoint RNG substreams
/// and solves the labeled and test-capable ones lazily (labeled here, test
/// in evaluate). Simulation failures carry the realization index.
inline Dataset build_dataset(const TrainConfig& cfg, const CaseSpec& spec) {
    cfg.validate();
    spec.validate();
    Dataset ds;
    ds.basis = build_kle(spec, cfg.sigma2, cfg.eta_x, cfg.eta_y, cfg.energy_fraction);

    ds.labeled.resize(cfg.n_labeled);
    parallel_for(static_cast<std::size_t>(cfg.n_labeled), [&](std::size_t i) {
        Rng rng(cfg.seed, Stream::LabeledFields, i);
        LabeledRealization lr;
        lr.fields = make_realization(ds.basis, draw_xi(ds.basis, rng), cfg.transform);
        try {
            lr.series = simulate(spec, lr.fields.k);
        } catch (const std::exception& e) {
            throw SolverError("labeled realization " + std::to_string(i) + ": " + e.what());
        }
        ds.labeled[i] = std::move(lr);
    });

    ds.virtuals.resize(cfg.n_virtual);
    parallel_for(static_cast<std::size_t>(cfg.n_virtual), [&](std::size_t i) {
        Rng rng(cfg.seed, Stream::VirtualFields, i);
        ds.virtuals[i] = make_realization(ds.basis, draw_xi(ds.basis, rng), cfg.transform);
    });

    ds.test.resize(cfg.n_test);
    parallel_for(static_cast<std::size_t>(cfg.n_test), [&](std::size_t i) {
        Rng rng(cfg.seed, Stream::TestFields, i);
        ds.test[i] = make_realization(ds.basis, draw_xi(ds.basis, rng), cfg.transform);
    });
    return ds;
}

struct TrainResult {
    Model model;
    std::vector<LossBreakdown> log; // one entry per epoch (step-averaged)
};

/// Adam on the composite loss. One epoch walks every labeled
/// (realization, step 0..nt) pair once in shuffled mini-batches and draws a
/// fresh virtual mini-batch per optimizer step. Single-threaded over steps;
/// identical config + seed reproduces the final weights bitwise.
inline TrainResult train(const TrainConfig& cfg, const CaseSpec& spec, const Dataset& data,
                         const std::filesystem::path& out_dir = {}) {
    cfg.validate();
    const ModelConfig mc = cfg.model.encoder.empty() && cfg.model.decoder.empty()
                               ? ModelConfig::default_for(spec)
                               : cfg.model;
    TrainResult result;
    result.model = build_model(mc, spec, cfg.seed);
    AdamState adam;
    adam.lr = cfg.learning_rate;
    adam.reset(result.model.params());

    struct Pair {
        int r, s;
    };
    std::vector<Pair> pairs;
    for (int r = 0; r < static_cast<int>(data.labeled.size()); ++r)
        for (int s = 0; s <= spec.nt; ++s) pairs.push_back({r, s});

    const int steps_per_epoch =
        !pairs.empty()
            ? static_cast<int>((pairs.size() + cfg.batch_labeled - 1) / cfg.batch_labeled)
            : std::max<int>(1, static_cast<int>((static_cast<long>(data.virtuals.size()) * spec.nt +
                                                 cfg.batch_virtual - 1) /
                                                cfg.batch_virtual));

    std::ofstream log_csv;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log_csv.open(out_dir / "training_log.csv");
        log_csv << "epoch,l_data,l_pde,l_nb,l_db,l_i,total\n";
    }

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng order(cfg.seed, Stream::BatchOrder, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = pairs.size(); i > 1; --i)
            std::swap(pairs[i - 1], pairs[order.below(i)]);

        LossBreakdown epoch_sum;
        for (int step = 0; step < steps_per_epoch; ++step) {
            std::vector<LabeledItem> lb;
            if (!pairs.empty()) {
                const std::size_t lo = static_cast<std::size_t>(step) * cfg.batch_labeled;
                const std::size_t hi = std::min(pairs.size(), lo + cfg.batch_labeled);
                for (std::size_t idx = lo; idx < hi; ++idx) {
                    const LabeledRealization& r = data.labeled[pairs[idx].r];
                    lb.push_back({&r.fields.lnk, pairs[idx].s, &r.series.snapshots[pairs[idx].s]});
                }
            }
            std::vector<VirtualItem> vb;
            if (!data.virtuals.empty()) {
                for (int v = 0; v < cfg.batch_virtual; ++v) {
                    const Realization& r = data.virtuals[order.below(data.virtuals.size())];
                    const int s = 1 + static_cast<int>(order.below(spec.nt));
                    vb.push_back({&r.lnk, &r.k, s});
                }
            }
            if (lb.empty() && vb.empty()) continue;

            CompositeLoss loss = composite_loss(result.model, lb, vb, cfg.weights);
            const LossBreakdown& b = loss.breakdown;
            const double terms[] = {b.l_data, b.l_pde, b.l_nb, b.l_db, b.l_i, b.total};
            const char* names[] = {"l_data", "l_pde", "l_nb", "l_db", "l_i", "total"};
            for (int t = 0; t < 6; ++t)
                if (!std::isfinite(terms[t]) || terms[t] > 1e12)
                    throw NumericError("train: " + std::string(names[t]) + " diverged (" +
                                       std::to_string(terms[t]) + ") at epoch " +
                                       std::to_string(epoch));

            backward(loss.total);
            adam_step(result.model.params(), adam);

            epoch_sum.l_data += b.l_data;
            epoch_sum.l_pde += b.l_pde;
            epoch_sum.l_nb += b.l_nb;
            epoch_sum.l_db += b.l_db;
            epoch_sum.l_i += b.l_i;
            epoch_sum.total += b.total;
        }
        const double inv = 1.0 / steps_per_epoch;
        LossBreakdown avg{epoch_sum.l_data * inv, epoch_sum.l_pde * inv, epoch_sum.l_nb * inv,
                          epoch_sum.l_db * inv, epoch_sum.l_i * inv, epoch_sum.total * inv};
        result.log.push_back(avg);
        if (log_csv)
            log_csv << epoch << ',' << format_double(avg.l_data) << ',' << format_double(avg.l_pde)
                    << ',' << format_double(avg.l_nb) << ',' << format_double(avg.l_db) << ','
                    << format_double(avg.l_i) << ',' << format_double(avg.total) << '\n';
    }

    if (!out_dir.empty()) save_checkpoint(result.model, out_dir / "checkpoint");
    return result;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double relative_l2(const std::vector<double>& pred, const std::vector<double>& ref) {
    require(pred.size() == ref.size() && !ref.empty(), "relative_l2: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = pred[i] - ref[i];
        num += d * d;
        den += ref[i] * ref[i];
    }
    if (den == 0.0) throw std::domain_error("relative_l2: reference has zero norm");
    return std::sqrt(num / den);
}

inline double r2_score(const std::vector<double>& pred, const std::vector<double>& ref) {
    require(pred.size() == ref.size() && !ref.empty(), "r2_score: size mismatch");
    double mean = 0.0;
    for (double x : ref) mean += x;
    mean /= static_cast<double>(ref.size());
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        sse += (pred[i] - ref[i]) * (pred[i] - ref[i]);
        sst += (ref[i] - mean) * (ref[i] - mean);
    }
    if (sst == 0.0) throw std::domain_error("r2_score: constant reference");
    return 1.0 - sse / sst;
}

inline std::vector<double> flatten(const ScalarField2D& f) { return f.v; }

inline std::vector<double> flatten(const HeadSeries& s) {
    std::vector<double> out;
    for (const ScalarField2D& f : s.snapshots) out.insert(out.end(), f.v.begin(), f.v.end());
    return out;
}

inline double relative_l2(const HeadSeries& pred, const HeadSeries& ref) {
    return relative_l2(flatten(pred), flatten(ref));
}
inline double relative_l2(const ScalarField2D& pred, const ScalarField2D& ref) {
    return relative_l2(pred.v, ref.v);
}
inline double r2_score(const HeadSeries& pred, const HeadSeries& ref) {
    return r2_score(flatten(pred), flatten(ref));
}
inline double r2_score(const ScalarField2D& pred, const ScalarField2D& ref) {
    return r2_score(pred.v, ref.v);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct Histogram {
    std::vector<double> edges;  // bins+1 entries
    std::vector<long> counts;   // bins entries
};

inline Histogram make_histogram(std::vector<double> values, int bins = 20) {
    Histogram h;
    if (values.empty() || bins < 1) return h;
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    double lo = *mn_it, hi = *mx_it;
    if (lo == hi) hi = lo + 1.0;
    h.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * b / bins;
    h.counts.assign(bins, 0);
    for (double x : values) {
        int b = static_cast<int>((x - lo) / (hi - lo) * bins);
        if (b >= bins) b = bins - 1;
        if (b < 0) b = 0;
        ++h.counts[b];
    }
    return h;
}

/// A probe location (x, y, t) in physical units, mapped onto the grid.
struct ProbePoint {
    double x = 0, y = 0, t = 0;

    int col(const CaseSpec& spec) const {
        const int j = static_cast<int>(std::floor(x / spec.dx));
        if (j < 0 || j >= spec.nx) throw std::out_of_range("probe x outside the domain");
        return j;
    }
    int row(const CaseSpec& spec) const {
        const int i = static_cast<int>(std::floor(y / spec.dy));
        if (i < 0 || i >= spec.ny) throw std::out_of_range("probe y outside the domain");
        return i;
    }
    int step(const CaseSpec& spec) const {
        const int s = static_cast<int>(std::llround(t / spec.dt));
        if (s < 1 || s > spec.nt) throw std::out_of_range("probe t outside the simulated span");
        return s;
    }
};

/// Head-correlation probes used by the eval scatter output.
inline std::vector<ProbePoint> scatter_probes() {
    return {{200.0, 200.0, 2.0}, {520.0, 520.0, 5.0}, {200.0, 800.0, 8.0}};
}

struct EvalReport {
    std::vector<double> rel_l2;
    std::vector<double> r2;
    double median_rel_l2 = 0.0;
    double median_r2 = 0.0;
    Histogram hist_rel_l2;
    Histogram hist_r2;
    // scatter rows: (realization, probe index, predicted, reference)
    struct ScatterRow {
        int realization, probe;
        double pred, ref;
    };
    std::vector<ScatterRow> scatter;
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Compares an arbitrary forward map against the simulator on the test set.
inline EvalReport evaluate_with(const std::function<HeadSeries(const Realization&)>& forward,
                                const std::vector<Realization>& test, const CaseSpec& spec,
                                const std::vector<ProbePoint>& probes = scatter_probes()) {
    EvalReport report;
    const std::size_t n = test.size();
    report.rel_l2.resize(n);
    report.r2.resize(n);
    std::vector<std::array<std::pair<double, double>, 8>> probe_vals(n);
    require(probes.size() <= 8, "evaluate: too many probes");

    parallel_for(n, [&](std::size_t i) {
        const HeadSeries ref = simulate(spec, test[i].k);
        const HeadSeries pred = forward(test[i]);
        report.rel_l2[i] = relative_l2(pred, ref);
        report.r2[i] = r2_score(pred, ref);
        for (std::size_t p = 0; p < probes.size(); ++p) {
            const int r = probes[p].row(spec), c = probes[p].col(spec), s = probes[p].step(spec);
            probe_vals[i][p] = {pred.snapshots[s].at(r, c), ref.snapshots[s].at(r, c)};
        }
    });

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < probes.size(); ++p)
            report.scatter.push_back({static_cast<int>(i), static_cast<int>(p),
                                      probe_vals[i][p].first, probe_vals[i][p].second});
    report.median_rel_l2 = median_of(report.rel_l2);
    report.median_r2 = median_of(report.r2);
    report.hist_rel_l2 = make_histogram(report.rel_l2);
    report.hist_r2 = make_histogram(report.r2);
    return report;
}

inline EvalReport evaluate(const Model& model, const std::vector<Realization>& test,
                           const std::vector<ProbePoint>& probes = scatter_probes()) {
    return evaluate_with([&](const Realization& r) { return rollout(model, r.lnk); }, test,
                         model.spec(), probes);
}

} // namespace seep
