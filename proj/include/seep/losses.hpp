#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "seep/autodiff.hpp"
#include "seep/common.hpp"
#include "seep/fd_solver.hpp"
#include "seep/grid.hpp"
#include "seep/model.hpp"

namespace seep {

// ============================================================================
// Discrete residual operators and the composite training loss. The interior
// stencil reuses the simulator's face transmissibilities (harmonic means,
// zero at no-flow faces) and masks the Dirichlet columns, so simulator
// snapshots have vanishing interior residual. All operators run on autodiff
// tensors; plain-field overloads wrap their inputs as constants.
// ============================================================================

namespace loss_detail {

inline Tensor tile_plane(const ScalarField2D& f, int batch) {
    const std::size_t plane = f.size();
    std::vector<double> v(static_cast<std::size_t>(batch) * plane);
    for (int b = 0; b < batch; ++b) std::copy(f.v.begin(), f.v.end(), v.begin() + b * plane);
    return Tensor::constant(Shape{batch, 1, f.ny, f.nx}, std::move(v));
}

inline Tensor batch_tensor(const CaseSpec& spec, const std::vector<const ScalarField2D*>& fields) {
    const std::size_t plane = static_cast<std::size_t>(spec.ny) * spec.nx;
    std::vector<double> v(fields.size() * plane);
    for (std::size_t b = 0; b < fields.size(); ++b) {
        require_shape(*fields[b], spec, "batch_tensor");
        std::copy(fields[b]->v.begin(), fields[b]->v.end(), v.begin() + b * plane);
    }
    return Tensor::constant(Shape{static_cast<int>(fields.size()), 1, spec.ny, spec.nx},
                            std::move(v));
}

} // namespace loss_detail

/// Per-batch face transmissibilities and masks for the residual stencils;
/// constants with respect to the network parameters.
struct ResidualStencil {
    Tensor te, tw, tn, ts;   // (B,1,H,W), already divided by dx^2 / dy^2
    Tensor interior_mask;    // (1,1,H,W): 0 on the Dirichlet columns
    Tensor nb_top, nb_bottom; // face conductivity / dy, nonzero on one row each
    double time_coeff = 0.0; // ss / dt
    int batch = 0;

    static ResidualStencil build(const CaseSpec& spec,
                                 const std::vector<const ScalarField2D*>& k_fields) {
        spec.validate();
        require(!k_fields.empty(), "ResidualStencil: empty batch");
        const int ny = spec.ny, nx = spec.nx;
        const std::size_t plane = static_cast<std::size_t>(ny) * nx;
        const double inv_dx2 = 1.0 / (spec.dx * spec.dx);
        const double inv_dy2 = 1.0 / (spec.dy * spec.dy);
        const int B = static_cast<int>(k_fields.size());

        std::vector<double> te(B * plane, 0.0), tw(B * plane, 0.0), tn(B * plane, 0.0),
            ts(B * plane, 0.0), top(B * plane, 0.0), bot(B * plane, 0.0);
        for (int b = 0; b < B; ++b) {
            const ScalarField2D& k = *k_fields[b];
            require_shape(k, spec, "ResidualStencil: K");
            require_positive_conductivity(k);
            const std::size_t base = b * plane;
            for (int i = 0; i < ny; ++i) {
                for (int j = 0; j < nx; ++j) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * nx + j;
                    if (j + 1 < nx) te[idx] = harmonic_mean(k.at(i, j), k.at(i, j + 1)) * inv_dx2;
                    if (j > 0) tw[idx] = harmonic_mean(k.at(i, j), k.at(i, j - 1)) * inv_dx2;
                    if (i + 1 < ny) ts[idx] = harmonic_mean(k.at(i, j), k.at(i + 1, j)) * inv_dy2;
                    if (i > 0) tn[idx] = harmonic_mean(k.at(i, j), k.at(i - 1, j)) * inv_dy2;
                }
            }
            for (int j = 0; j < nx; ++j) {
                top[base + j] = harmonic_mean(k.at(0, j), k.at(1, j)) / spec.dy;
                bot[base + static_cast<std::size_t>(ny - 1) * nx + j] =
                    harmonic_mean(k.at(ny - 1, j), k.at(ny - 2, j)) / spec.dy;
            }
        }

        std::vector<double> mask(plane, 1.0);
        for (int i = 0; i < ny; ++i) {
            mask[static_cast<std::size_t>(i) * nx] = 0.0;
            mask[static_cast<std::size_t>(i) * nx + nx - 1] = 0.0;
        }

        const Shape bs{B, 1, ny, nx};
        ResidualStencil st;
        st.te = Tensor::constant(bs, std::move(te));
        st.tw = Tensor::constant(bs, std::move(tw));
        st.tn = Tensor::constant(bs, std::move(tn));
        st.ts = Tensor::constant(bs, std::move(ts));
        st.nb_top = Tensor::constant(bs, std::move(top));
        st.nb_bottom = Tensor::constant(bs, std::move(bot));
        st.interior_mask = Tensor::constant(Shape{1, 1, ny, nx}, std::move(mask));
        st.time_coeff = spec.ss / spec.dt;
        st.batch = B;
        return st;
    }
};

/// Cellwise backward-Euler residual
///   R = ss (h_t - h_tm1)/dt - div(T grad h_t)
/// with zero no-flow faces and Dirichlet columns masked to zero.
inline Tensor interior_residual(const ResidualStencil& st, const Tensor& h_t, const Tensor& h_tm1) {
    Tensor time_term = scale(sub(h_t, h_tm1), st.time_coeff);
    Tensor flux = add(add(mul(sub(shift2d(h_t, 0, 1), h_t), st.te),
                          mul(sub(shift2d(h_t, 0, -1), h_t), st.tw)),
                      add(mul(sub(shift2d(h_t, 1, 0), h_t), st.ts),
                          mul(sub(shift2d(h_t, -1, 0), h_t), st.tn)));
    return mul(sub(time_term, flux), st.interior_mask);
}

/// One-sided no-flow residual at the top/bottom rows:
///   K_face (h_boundary - h_adjacent) / dy  (prescribed flux g = 0).
/// Nonzero only on the two boundary rows of the returned tensor.
inline Tensor neumann_residual(const ResidualStencil& st, const Tensor& h_t) {
    return add(mul(sub(h_t, shift2d(h_t, 1, 0)), st.nb_top),
               mul(sub(h_t, shift2d(h_t, -1, 0)), st.nb_bottom));
}

// --------------------------------------------------------------------------
// Plain-field overloads (used by the oracle tests and the selfcheck).
// --------------------------------------------------------------------------

inline ScalarField2D interior_residual(const CaseSpec& spec, const ScalarField2D& k,
                                       const ScalarField2D& h_t, const ScalarField2D& h_tm1) {
    require_shape(h_t, spec, "interior_residual: h_t");
    require_shape(h_tm1, spec, "interior_residual: h_tm1");
    const ResidualStencil st = ResidualStencil::build(spec, {&k});
    Tensor r = interior_residual(st, loss_detail::batch_tensor(spec, {&h_t}),
                                 loss_detail::batch_tensor(spec, {&h_tm1}));
    ScalarField2D out(spec.ny, spec.nx);
    out.v = r.values();
    return out;
}

/// Returns a 2 x nx field: row 0 the top-row residuals, row 1 the bottom-row.
inline ScalarField2D neumann_residual(const CaseSpec& spec, const ScalarField2D& k,
                                      const ScalarField2D& h_t) {
    require_shape(h_t, spec, "neumann_residual: h_t");
    const ResidualStencil st = ResidualStencil::build(spec, {&k});
    Tensor r = neumann_residual(st, loss_detail::batch_tensor(spec, {&h_t}));
    ScalarField2D out(2, spec.nx);
    for (int j = 0; j < spec.nx; ++j) {
        out.at(0, j) = r.values()[j];
        out.at(1, j) = r.values()[static_cast<std::size_t>(spec.ny - 1) * spec.nx + j];
    }
    return out;
}

namespace loss_detail {

inline ScalarField2D dirichlet_target(const CaseSpec& spec) {
    ScalarField2D f(spec.ny, spec.nx, 0.0);
    for (int i = 0; i < spec.ny; ++i) {
        f.at(i, 0) = spec.h_left;
        f.at(i, spec.nx - 1) = spec.h_right;
    }
    return f;
}

inline ScalarField2D dirichlet_mask(const CaseSpec& spec) {
    ScalarField2D f(spec.ny, spec.nx, 0.0);
    for (int i = 0; i < spec.ny; ++i) {
        f.at(i, 0) = 1.0;
        f.at(i, spec.nx - 1) = 1.0;
    }
    return f;
}

} // namespace loss_detail

/// Mean squared deviation of the Dirichlet columns from their prescribed
/// heads, averaged over the 2*ny boundary cells (and the batch).
inline Tensor dirichlet_loss(const CaseSpec& spec, const Tensor& h_t) {
    const int B = h_t.shape().n;
    Tensor masked = mul(h_t, Tensor::constant(Shape{1, 1, spec.ny, spec.nx},
                                              loss_detail::dirichlet_mask(spec).v));
    Tensor target = loss_detail::tile_plane(loss_detail::dirichlet_target(spec), B);
    return scale(sum_squares(sub(masked, target)), 1.0 / (2.0 * spec.ny * B));
}

inline double dirichlet_loss(const CaseSpec& spec, const ScalarField2D& h_t) {
    require_shape(h_t, spec, "dirichlet_loss");
    return dirichlet_loss(spec, loss_detail::batch_tensor(spec, {&h_t})).values()[0];
}

/// Mean squared deviation of the t=0 prediction from the initial condition,
/// averaged over all cells (and the batch).
inline Tensor initial_loss(const CaseSpec& spec, const Tensor& h0_pred) {
    const int B = h0_pred.shape().n;
    Tensor target = loss_detail::tile_plane(initial_head(spec), B);
    return scale(sum_squares(sub(h0_pred, target)), 1.0 / (static_cast<double>(spec.cells()) * B));
}

inline double initial_loss(const CaseSpec& spec, const ScalarField2D& h0_pred) {
    require_shape(h0_pred, spec, "initial_loss");
    return initial_loss(spec, loss_detail::batch_tensor(spec, {&h0_pred})).values()[0];
}

/// Mean over (realization, step) pairs of the cellwise mean squared error.
inline Tensor data_loss(const CaseSpec& spec, const Tensor& predictions,
                        const std::vector<const ScalarField2D*>& references) {
    if (static_cast<int>(references.size()) != predictions.shape().n)
        throw ShapeError("data_loss: " + std::to_string(references.size()) + " references for " +
                         std::to_string(predictions.shape().n) + " predictions");
    Tensor ref = loss_detail::batch_tensor(spec, references);
    const double denom = static_cast<double>(references.size()) * spec.cells();
    return scale(sum_squares(sub(predictions, ref)), 1.0 / denom);
}

inline double data_loss(const CaseSpec& spec, const std::vector<const ScalarField2D*>& predictions,
                        const std::vector<const ScalarField2D*>& references) {
    if (predictions.size() != references.size())
        throw ShapeError("data_loss: prediction/reference count mismatch");
    return data_loss(spec, loss_detail::batch_tensor(spec, predictions), references).values()[0];
}

// --------------------------------------------------------------------------
// Composite loss
// --------------------------------------------------------------------------

struct LossWeights {
    double data = 1.0, pde = 1.0, nb = 1.0, db = 1.0, init = 1.0;
};

/// Weighted loss terms; `total` is their sum in this fixed order:
/// (((data + pde) + nb) + db) + init.
struct LossBreakdown {
    double l_data = 0.0, l_pde = 0.0, l_nb = 0.0, l_db = 0.0, l_i = 0.0;
    double total = 0.0;
};

/// One labeled (realization, step) pair: ln K image, step index (0..nt) and
/// the simulator snapshot at that step.
struct LabeledItem {
    const ScalarField2D* lnk = nullptr;
    int step = 0;
    const ScalarField2D* ref = nullptr;
};

/// One virtual (realization, step) pair; no reference solution.
struct VirtualItem {
    const ScalarField2D* lnk = nullptr;
    const ScalarField2D* k = nullptr;
    int step = 1; // 1..nt
};

struct CompositeLoss {
    LossBreakdown breakdown;
    Tensor total; // scalar tensor, ready for backward()
};

/// Evaluates the full training objective on one labeled and one virtual
/// mini-batch. PDE residuals pair the forward pass at step s with a second
/// pass at s-1 (the exact initial head is used as a constant when s = 1);
/// the Dirichlet term sees every prediction made here, the initial-condition
/// term runs the virtual realizations at step 0. Labeled batches may include
/// step-0 pairs, which pins their initial condition through the data term.
inline CompositeLoss composite_loss(const Model& model, const std::vector<LabeledItem>& labeled,
                                    const std::vector<VirtualItem>& virt,
                                    const LossWeights& weights = {}) {
    const CaseSpec& spec = model.spec();
    require(!labeled.empty() || !virt.empty(), "composite_loss: both batches empty");
    const Shape scalar{1, 1, 1, 1};

    std::vector<Tensor> db_terms; // (prediction tensor, count) pairs for the Dirichlet term
    std::vector<int> db_counts;

    // --- data term -------------------------------------------------------
    Tensor t_data = Tensor::constant(scalar, 0.0);
    if (!labeled.empty()) {
        std::vector<const ScalarField2D*> lnk, refs;
        std::vector<int> steps;
        for (const LabeledItem& it : labeled) {
            lnk.push_back(it.lnk);
            steps.push_back(it.step);
            refs.push_back(it.ref);
        }
        Tensor pred = model.forward(model_input(spec, lnk, steps), /*train=*/true);
        t_data = data_loss(spec, pred, refs);
        db_terms.push_back(pred);
        db_counts.push_back(static_cast<int>(labeled.size()));
    }

    // --- physics terms on the virtual batch -------------------------------
    Tensor t_pde = Tensor::constant(scalar, 0.0);
    Tensor t_nb = Tensor::constant(scalar, 0.0);
    Tensor t_init = Tensor::constant(scalar, 0.0);
    if (!virt.empty()) {
        std::vector<const VirtualItem*> first, later; // step == 1 vs step > 1
        for (const VirtualItem& it : virt) {
            require(it.step >= 1 && it.step <= spec.nt, "composite_loss: virtual step out of range");
            (it.step == 1 ? first : later).push_back(&it);
        }

        Tensor ssq_pde = Tensor::constant(scalar, 0.0);
        Tensor ssq_nb = Tensor::constant(scalar, 0.0);
        auto add_group = [&](const std::vector<const VirtualItem*>& group, bool anchored_to_ic) {
            if (group.empty()) return;
            std::vector<const ScalarField2D*> lnk, kf;
            std::vector<int> steps, prev_steps;
            for (const VirtualItem* it : group) {
                lnk.push_back(it->lnk);
                kf.push_back(it->k);
                steps.push_back(it->step);
                prev_steps.push_back(it->step - 1);
            }
            const ResidualStencil st = ResidualStencil::build(spec, kf);
            Tensor pred_t = model.forward(model_input(spec, lnk, steps), true);
            Tensor pred_tm = anchored_to_ic
                                 ? loss_detail::tile_plane(initial_head(spec),
                                                           static_cast<int>(group.size()))
                                 : model.forward(model_input(spec, lnk, prev_steps), true);
            ssq_pde = add(ssq_pde, sum_squares(interior_residual(st, pred_t, pred_tm)));
            ssq_nb = add(ssq_nb, sum_squares(neumann_residual(st, pred_t)));
            db_terms.push_back(pred_t);
            db_counts.push_back(static_cast<int>(group.size()));
            if (!anchored_to_ic) {
                db_terms.push_back(pred_tm);
                db_counts.push_back(static_cast<int>(group.size()));
            }
        };
        add_group(first, true);
        add_group(later, false);

        t_pde = scale(ssq_pde, 1.0 / (static_cast<double>(virt.size()) * spec.cells()));
        t_nb = scale(ssq_nb, 1.0 / (static_cast<double>(virt.size()) * 2.0 * spec.nx));

        std::vector<const ScalarField2D*> lnk0;
        std::vector<int> steps0(virt.size(), 0);
        for (const VirtualItem& it : virt) lnk0.push_back(it.lnk);
        Tensor pred0 = model.forward(model_input(spec, lnk0, steps0), true);
        t_init = initial_loss(spec, pred0);
        db_terms.push_back(pred0);
        db_counts.push_back(static_cast<int>(virt.size()));
    }

    // --- Dirichlet term over every prediction made above -------------------
    Tensor t_db = Tensor::constant(scalar, 0.0);
    if (!db_terms.empty()) {
        Tensor ssq = Tensor::constant(scalar, 0.0);
        int count = 0;
        for (std::size_t g = 0; g < db_terms.size(); ++g) {
            Tensor term = scale(dirichlet_loss(spec, db_terms[g]),
                                static_cast<double>(db_counts[g]));
            ssq = add(ssq, term);
            count += db_counts[g];
        }
        t_db = scale(ssq, 1.0 / count);
    }

    Tensor wd = scale(t_data, weights.data);
    Tensor wp = scale(t_pde, weights.pde);
    Tensor wn = scale(t_nb, weights.nb);
    Tensor wb = scale(t_db, weights.db);
    Tensor wi = scale(t_init, weights.init);
    Tensor total = add(add(add(add(wd, wp), wn), wb), wi);

    CompositeLoss out;
    out.breakdown.l_data = wd.values()[0];
    out.breakdown.l_pde = wp.values()[0];
    out.breakdown.l_nb = wn.values()[0];
    out.breakdown.l_db = wb.values()[0];
    out.breakdown.l_i = wi.values()[0];
    out.breakdown.total = total.values()[0];
    out.total = total;
    return out;
}

} // namespace seep
