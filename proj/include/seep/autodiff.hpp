#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "seep/common.hpp"
#include "seep/parallel.hpp"

namespace seep {

// ============================================================================
// Minimal reverse-mode autodiff over dense 4-D tensors (batch, channel,
// height, width), 64-bit values throughout. Exactly the operations the
// encoder-decoder surrogate and its physics losses need; no broadcasting
// beyond constant spatial masks, no graph rewriting. Gradient accumulation
// order is fixed, so repeated backward passes from identical inputs are
// bitwise identical.
// ============================================================================

struct Shape {
    int n = 1, c = 1, h = 1, w = 1;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }
};

class Tensor;

namespace ad_detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty until touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

} // namespace ad_detail

class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape s, std::vector<double> values) {
        return make(s, std::move(values), false);
    }
    static Tensor constant(Shape s, double fill = 0.0) {
        return make(s, std::vector<double>(s.count(), fill), false);
    }
    static Tensor variable(Shape s, std::vector<double> values) {
        return make(s, std::move(values), true);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& mutable_values() { return node_->values; }
    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& grad_buffer() { return node_->grad_buffer(); }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    std::shared_ptr<ad_detail::Node> node() const { return node_; }

private:
    friend Tensor wrap_node(std::shared_ptr<ad_detail::Node> n);
    static Tensor make(Shape s, std::vector<double> values, bool requires_grad) {
        if (values.size() != s.count())
            throw ShapeError("Tensor: value count " + std::to_string(values.size()) +
                             " does not match shape " + s.str());
        auto n = std::make_shared<ad_detail::Node>();
        n->shape = s;
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    std::shared_ptr<ad_detail::Node> node_;
};

inline Tensor wrap_node(std::shared_ptr<ad_detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

namespace ad_detail {

inline Tensor unary(const Tensor& a, Shape out_shape, std::vector<double> values,
                    std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = out_shape;
    n->values = std::move(values);
    n->requires_grad = a.requires_grad();
    if (n->requires_grad) {
        n->parents = {a.node()};
        n->backward_fn = std::move(backward);
    }
    return wrap_node(std::move(n));
}

inline Tensor binary(const Tensor& a, const Tensor& b, Shape out_shape,
                     std::vector<double> values, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = out_shape;
    n->values = std::move(values);
    n->requires_grad = a.requires_grad() || b.requires_grad();
    if (n->requires_grad) {
        n->parents = {a.node(), b.node()};
        n->backward_fn = std::move(backward);
    }
    return wrap_node(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(op) + ": shapes " + a.shape().str() + " and " +
                         b.shape().str() + " differ");
}

} // namespace ad_detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    ad_detail::require_same_shape(a, b, "add");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
    return ad_detail::binary(a, b, a.shape(), std::move(v), [](ad_detail::Node& n) {
        for (int p = 0; p < 2; ++p) {
            auto& parent = *n.parents[p];
            if (!parent.requires_grad) continue;
            auto& g = parent.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    ad_detail::require_same_shape(a, b, "sub");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
    return ad_detail::binary(a, b, a.shape(), std::move(v), [](ad_detail::Node& n) {
        if (n.parents[0]->requires_grad) {
            auto& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

/// Elementwise product. Either both operands share a shape, or `b` is a
/// non-differentiable (1,1,H,W) mask broadcast across batch and channels.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    const bool bcast = !(a.shape() == b.shape());
    if (bcast) {
        if (b.shape().n != 1 || b.shape().c != 1 || b.shape().h != a.shape().h ||
            b.shape().w != a.shape().w)
            throw ShapeError("mul: incompatible shapes " + a.shape().str() + " vs " +
                             b.shape().str());
        if (b.requires_grad())
            throw ShapeError("mul: broadcast factor must not require gradients");
    }
    const std::size_t plane = static_cast<std::size_t>(a.shape().h) * a.shape().w;
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    if (bcast) {
        const std::size_t planes = v.size() / plane;
        for (std::size_t q = 0; q < planes; ++q)
            for (std::size_t i = 0; i < plane; ++i) v[q * plane + i] *= bv[i];
    } else {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
    }
    return ad_detail::binary(a, b, a.shape(), std::move(v),
                             [bcast, plane](ad_detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            if (bcast) {
                const std::size_t planes = g.size() / plane;
                for (std::size_t q = 0; q < planes; ++q)
                    for (std::size_t i = 0; i < plane; ++i)
                        g[q * plane + i] += n.grad[q * plane + i] * pb.values[i];
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.values[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.values[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.values());
    for (double& x : v) x *= s;
    return ad_detail::unary(a, a.shape(), std::move(v), [s](ad_detail::Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.values());
    for (double& x : v) x += s;
    return ad_detail::unary(a, a.shape(), std::move(v), [](ad_detail::Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

/// x * sigmoid(x). The forward sigmoid is cached for the backward rule.
inline Tensor swish(const Tensor& a) {
    auto sig = std::make_shared<std::vector<double>>(a.values().size());
    std::vector<double> v(a.values());
    for (std::size_t i = 0; i < v.size(); ++i) {
        (*sig)[i] = 1.0 / (1.0 + std::exp(-v[i]));
        v[i] *= (*sig)[i];
    }
    return ad_detail::unary(a, a.shape(), std::move(v), [sig](ad_detail::Node& n) {
        auto& parent = *n.parents[0];
        auto& g = parent.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = (*sig)[i];
            g[i] += n.grad[i] * (s + parent.values[i] * s * (1.0 - s));
        }
    });
}

/// out[b,c,i,j] = in[b,c,i+di,j+dj], zero where the source falls outside.
inline Tensor shift2d(const Tensor& a, int di, int dj) {
    const Shape s = a.shape();
    std::vector<double> v(s.count(), 0.0);
    const int H = s.h, W = s.w;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t planes = s.count() / plane;
    const auto& av = a.values();
    for (std::size_t q = 0; q < planes; ++q) {
        const std::size_t base = q * plane;
        for (int i = 0; i < H; ++i) {
            const int si = i + di;
            if (si < 0 || si >= H) continue;
            for (int j = 0; j < W; ++j) {
                const int sj = j + dj;
                if (sj < 0 || sj >= W) continue;
                v[base + static_cast<std::size_t>(i) * W + j] =
                    av[base + static_cast<std::size_t>(si) * W + sj];
            }
        }
    }
    return ad_detail::unary(a, s, std::move(v), [di, dj, H, W, plane, planes](ad_detail::Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t q = 0; q < planes; ++q) {
            const std::size_t base = q * plane;
            for (int i = 0; i < H; ++i) {
                const int si = i + di;
                if (si < 0 || si >= H) continue;
                for (int j = 0; j < W; ++j) {
                    const int sj = j + dj;
                    if (sj < 0 || sj >= W) continue;
                    g[base + static_cast<std::size_t>(si) * W + sj] +=
                        n.grad[base + static_cast<std::size_t>(i) * W + j];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    return ad_detail::unary(a, Shape{1, 1, 1, 1}, {s}, [](ad_detail::Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        const double go = n.grad[0];
        for (double& x : g) x += go;
    });
}

inline Tensor sum_squares(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x * x;
    return ad_detail::unary(a, Shape{1, 1, 1, 1}, {s}, [](ad_detail::Node& n) {
        auto& parent = *n.parents[0];
        auto& g = parent.grad_buffer();
        const double go = n.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * go * parent.values[i];
    });
}

// ---------------------------------------------------------------------------
// Convolutions. Kernel layouts: conv2d (out_ch, in_ch, k, k); transposed
// conv (in_ch, out_ch, k, k). conv2d is the cross-correlation
//   out[b,o,i,j] = bias[o] + sum_{c,u,v} w[o,c,u,v] in[b,c,i*s-p+u,j*s-p+v]
// and conv2d_transposed is its adjoint (plus its own bias).
// ---------------------------------------------------------------------------

namespace ad_detail {

struct ConvDims {
    int B, Ci, H, W;   // input
    int Co, K;         // kernel
    int Ho, Wo;        // output
    int stride, pad;
};

// Valid output-column range [lo, hi) such that 0 <= j*stride - pad + v < W.
inline void col_range(int v, int pad, int stride, int in_w, int out_w, int& lo, int& hi) {
    const int off = v - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    hi = std::min(out_w, off < in_w ? (in_w - 1 - off) / stride + 1 : 0);
    if (lo > hi) lo = hi;
}

// Patch matrix for one batch item: row r = (c*K+u)*K+v holds the input value
// under kernel tap (c,u,v) for every output position, zero where the tap
// falls outside. Rows are contiguous over output positions, so the
// convolution becomes a (Co x R) * (R x HoWo) product with unit-stride inner
// loops.
inline void im2col(const ConvDims& d, const double* in_b, double* cols) {
    const std::size_t in_plane = static_cast<std::size_t>(d.H) * d.W;
    const std::size_t out_plane = static_cast<std::size_t>(d.Ho) * d.Wo;
    for (int c = 0; c < d.Ci; ++c) {
        const double* in_c = in_b + c * in_plane;
        for (int u = 0; u < d.K; ++u) {
            for (int v = 0; v < d.K; ++v) {
                double* row = cols + (static_cast<std::size_t>(c) * d.K * d.K + u * d.K + v) * out_plane;
                int jlo, jhi;
                col_range(v, d.pad, d.stride, d.W, d.Wo, jlo, jhi);
                for (int i = 0; i < d.Ho; ++i) {
                    const int ii = i * d.stride - d.pad + u;
                    double* dst = row + static_cast<std::size_t>(i) * d.Wo;
                    if (ii < 0 || ii >= d.H) {
                        std::fill(dst, dst + d.Wo, 0.0);
                        continue;
                    }
                    for (int j = 0; j < jlo; ++j) dst[j] = 0.0;
                    const double* src = in_c + static_cast<std::size_t>(ii) * d.W - d.pad + v;
                    if (d.stride == 1) {
                        for (int j = jlo; j < jhi; ++j) dst[j] = src[j];
                    } else {
                        for (int j = jlo; j < jhi; ++j)
                            dst[j] = src[static_cast<std::size_t>(j) * d.stride];
                    }
                    for (int j = jhi; j < d.Wo; ++j) dst[j] = 0.0;
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds patch rows back onto the input grid.
inline void col2im_add(const ConvDims& d, const double* cols, double* in_b) {
    const std::size_t in_plane = static_cast<std::size_t>(d.H) * d.W;
    const std::size_t out_plane = static_cast<std::size_t>(d.Ho) * d.Wo;
    for (int c = 0; c < d.Ci; ++c) {
        double* in_c = in_b + c * in_plane;
        for (int u = 0; u < d.K; ++u) {
            for (int v = 0; v < d.K; ++v) {
                const double* row =
                    cols + (static_cast<std::size_t>(c) * d.K * d.K + u * d.K + v) * out_plane;
                int jlo, jhi;
                col_range(v, d.pad, d.stride, d.W, d.Wo, jlo, jhi);
                for (int i = 0; i < d.Ho; ++i) {
                    const int ii = i * d.stride - d.pad + u;
                    if (ii < 0 || ii >= d.H) continue;
                    double* dst = in_c + static_cast<std::size_t>(ii) * d.W - d.pad + v;
                    const double* src = row + static_cast<std::size_t>(i) * d.Wo;
                    if (d.stride == 1) {
                        for (int j = jlo; j < jhi; ++j) dst[j] += src[j];
                    } else {
                        for (int j = jlo; j < jhi; ++j)
                            dst[static_cast<std::size_t>(j) * d.stride] += src[j];
                    }
                }
            }
        }
    }
}

inline std::vector<double>& col_scratch() {
    thread_local std::vector<double> buf;
    return buf;
}

inline void conv_forward(const ConvDims& d, const double* in, const double* w,
                         const double* bias, double* out, bool accumulate = false) {
    const std::size_t in_plane = static_cast<std::size_t>(d.H) * d.W;
    const std::size_t out_plane = static_cast<std::size_t>(d.Ho) * d.Wo;
    const int R = d.Ci * d.K * d.K;
    parallel_for(static_cast<std::size_t>(d.B), [&](std::size_t b) {
        std::vector<double>& cols = col_scratch();
        cols.resize(static_cast<std::size_t>(R) * out_plane);
        im2col(d, in + b * d.Ci * in_plane, cols.data());
        double* out_b = out + b * d.Co * out_plane;
        for (int o = 0; o < d.Co; ++o) {
            double* out_c = out_b + o * out_plane;
            const double bval = bias ? bias[o] : 0.0;
            if (!accumulate)
                for (std::size_t i = 0; i < out_plane; ++i) out_c[i] = bval;
            else if (bias)
                for (std::size_t i = 0; i < out_plane; ++i) out_c[i] += bval;
            const double* w_o = w + static_cast<std::size_t>(o) * R;
            int r = 0;
            for (; r + 4 <= R; r += 4) {
                const double w0 = w_o[r], w1 = w_o[r + 1], w2 = w_o[r + 2], w3 = w_o[r + 3];
                const double* c0 = cols.data() + static_cast<std::size_t>(r) * out_plane;
                const double* c1 = c0 + out_plane;
                const double* c2 = c1 + out_plane;
                const double* c3 = c2 + out_plane;
                for (std::size_t i = 0; i < out_plane; ++i)
                    out_c[i] += w0 * c0[i] + w1 * c1[i] + w2 * c2[i] + w3 * c3[i];
            }
            for (; r < R; ++r) {
                const double wv = w_o[r];
                const double* cr = cols.data() + static_cast<std::size_t>(r) * out_plane;
                for (std::size_t i = 0; i < out_plane; ++i) out_c[i] += wv * cr[i];
            }
        }
    });
}

inline void conv_backward_input(const ConvDims& d, const double* gout, const double* w,
                                double* gin) {
    const std::size_t in_plane = static_cast<std::size_t>(d.H) * d.W;
    const std::size_t out_plane = static_cast<std::size_t>(d.Ho) * d.Wo;
    const int R = d.Ci * d.K * d.K;
    parallel_for(static_cast<std::size_t>(d.B), [&](std::size_t b) {
        std::vector<double>& cols = col_scratch();
        cols.assign(static_cast<std::size_t>(R) * out_plane, 0.0);
        const double* gout_b = gout + b * d.Co * out_plane;
        for (int o = 0; o < d.Co; ++o) {
            const double* gout_c = gout_b + o * out_plane;
            const double* w_o = w + static_cast<std::size_t>(o) * R;
            for (int r = 0; r < R; ++r) {
                const double wv = w_o[r];
                if (wv == 0.0) continue;
                double* cr = cols.data() + static_cast<std::size_t>(r) * out_plane;
                for (std::size_t i = 0; i < out_plane; ++i) cr[i] += wv * gout_c[i];
            }
        }
        col2im_add(d, cols.data(), gin + b * d.Ci * in_plane);
    });
}

inline void conv_backward_kernel(const ConvDims& d, const double* in, const double* gout,
                                 double* gw) {
    const std::size_t in_plane = static_cast<std::size_t>(d.H) * d.W;
    const std::size_t out_plane = static_cast<std::size_t>(d.Ho) * d.Wo;
    const int R = d.Ci * d.K * d.K;
    // Serial over the batch with per-(o,r) dot products inside keeps every
    // gw slot's accumulation order fixed for any thread count.
    std::vector<double> cols;
    cols.resize(static_cast<std::size_t>(R) * out_plane);
    for (int b = 0; b < d.B; ++b) {
        im2col(d, in + static_cast<std::size_t>(b) * d.Ci * in_plane, cols.data());
        const double* gout_b = gout + static_cast<std::size_t>(b) * d.Co * out_plane;
        parallel_for(static_cast<std::size_t>(d.Co), [&](std::size_t o) {
            const double* gout_c = gout_b + o * out_plane;
            double* gw_o = gw + o * R;
            for (int r = 0; r < R; ++r) {
                const double* cr = cols.data() + static_cast<std::size_t>(r) * out_plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < out_plane; ++i) acc += gout_c[i] * cr[i];
                gw_o[r] += acc;
            }
        });
    }
}

inline void accumulate_bias_grad(int B, int C, std::size_t plane, const double* gout, double* gb) {
    for (int o = 0; o < C; ++o) {
        double acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* g = gout + (static_cast<std::size_t>(b) * C + o) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += g[i];
        }
        gb[o] += acc;
    }
}

} // namespace ad_detail

inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                     int padding) {
    const Shape in = input.shape(), kn = kernels.shape();
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(padding >= 0, "conv2d: padding must be >= 0");
    if (kn.c != in.c)
        throw ShapeError("conv2d: kernel expects " + std::to_string(kn.c) + " input channels, got " +
                         std::to_string(in.c));
    if (kn.h != kn.w) throw ShapeError("conv2d: only square kernels supported");
    if (bias.shape().count() != static_cast<std::size_t>(kn.n))
        throw ShapeError("conv2d: bias size must equal output channel count");
    const int ho = (in.h + 2 * padding - kn.h) / stride + 1;
    const int wo = (in.w + 2 * padding - kn.w) / stride + 1;
    if (ho <= 0 || wo <= 0)
        throw ShapeError("conv2d: empty output for input " + in.str());

    ad_detail::ConvDims d{in.n, in.c, in.h, in.w, kn.n, kn.h, ho, wo, stride, padding};
    const Shape out_shape{in.n, kn.n, ho, wo};
    std::vector<double> out(out_shape.count());
    ad_detail::conv_forward(d, input.values().data(), kernels.values().data(),
                            bias.values().data(), out.data());

    auto n = std::make_shared<ad_detail::Node>();
    n->shape = out_shape;
    n->values = std::move(out);
    n->requires_grad = input.requires_grad() || kernels.requires_grad() || bias.requires_grad();
    if (n->requires_grad) {
        n->parents = {input.node(), kernels.node(), bias.node()};
        n->backward_fn = [d](ad_detail::Node& node) {
            auto& in_p = *node.parents[0];
            auto& w_p = *node.parents[1];
            auto& b_p = *node.parents[2];
            if (in_p.requires_grad)
                ad_detail::conv_backward_input(d, node.grad.data(), w_p.values.data(),
                                               in_p.grad_buffer().data());
            if (w_p.requires_grad)
                ad_detail::conv_backward_kernel(d, in_p.values.data(), node.grad.data(),
                                                w_p.grad_buffer().data());
            if (b_p.requires_grad)
                ad_detail::accumulate_bias_grad(d.B, d.Co,
                                                static_cast<std::size_t>(d.Ho) * d.Wo,
                                                node.grad.data(), b_p.grad_buffer().data());
        };
    }
    return wrap_node(std::move(n));
}

inline Tensor conv2d_transposed(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                                int stride, int padding, int output_padding) {
    const Shape in = input.shape(), kn = kernels.shape();
    require(stride >= 1, "conv2d_transposed: stride must be >= 1");
    require(padding >= 0 && output_padding >= 0, "conv2d_transposed: negative padding");
    require(output_padding < stride, "conv2d_transposed: output_padding must be < stride");
    if (kn.n != in.c)
        throw ShapeError("conv2d_transposed: kernel expects " + std::to_string(kn.n) +
                         " input channels, got " + std::to_string(in.c));
    if (kn.h != kn.w) throw ShapeError("conv2d_transposed: only square kernels supported");
    if (bias.shape().count() != static_cast<std::size_t>(kn.c))
        throw ShapeError("conv2d_transposed: bias size must equal output channel count");
    const int ho = (in.h - 1) * stride - 2 * padding + kn.h + output_padding;
    const int wo = (in.w - 1) * stride - 2 * padding + kn.w + output_padding;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d_transposed: empty output");

    // The scatter with dims (B, Co_out<-c axis, ...) is the adjoint of a conv
    // whose "input" is this op's output, so reuse the conv kernels with
    // Ci = out channels, Co = in channels.
    ad_detail::ConvDims d{in.n, kn.c, ho, wo, in.c, kn.h, in.h, in.w, stride, padding};
    const Shape out_shape{in.n, kn.c, ho, wo};
    std::vector<double> out(out_shape.count(), 0.0);
    ad_detail::conv_backward_input(d, input.values().data(), kernels.values().data(), out.data());
    {
        const std::size_t plane = static_cast<std::size_t>(ho) * wo;
        for (int b = 0; b < in.n; ++b)
            for (int o = 0; o < kn.c; ++o) {
                double* dst = out.data() + (static_cast<std::size_t>(b) * kn.c + o) * plane;
                const double bv = bias.values()[o];
                for (std::size_t i = 0; i < plane; ++i) dst[i] += bv;
            }
    }

    auto n = std::make_shared<ad_detail::Node>();
    n->shape = out_shape;
    n->values = std::move(out);
    n->requires_grad = input.requires_grad() || kernels.requires_grad() || bias.requires_grad();
    if (n->requires_grad) {
        n->parents = {input.node(), kernels.node(), bias.node()};
        n->backward_fn = [d](ad_detail::Node& node) {
            auto& in_p = *node.parents[0];
            auto& w_p = *node.parents[1];
            auto& b_p = *node.parents[2];
            if (in_p.requires_grad)
                ad_detail::conv_forward(d, node.grad.data(), w_p.values.data(), nullptr,
                                        in_p.grad_buffer().data(), /*accumulate=*/true);
            if (w_p.requires_grad)
                ad_detail::conv_backward_kernel(d, node.grad.data(), in_p.values.data(),
                                                w_p.grad_buffer().data());
            if (b_p.requires_grad)
                ad_detail::accumulate_bias_grad(d.B, d.Ci,
                                                static_cast<std::size_t>(d.H) * d.W,
                                                node.grad.data(), b_p.grad_buffer().data());
        };
    }
    return wrap_node(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

/// Accumulates d(loss)/d(x) into every requires_grad ancestor of `loss`.
/// Gradients add across repeated calls; clear them explicitly (or via
/// adam_step) between optimization steps.
inline void backward(const Tensor& loss) {
    if (!(loss.shape() == Shape{1, 1, 1, 1}))
        throw ShapeError("backward: loss must be scalar-shaped, got " + loss.shape().str());
    using ad_detail::Node;

    // Iterative post-order DFS; parents visited in stored order so the
    // accumulation sequence is deterministic.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes carry per-sweep gradients; only leaves (variables)
    // accumulate across repeated backward calls.
    for (Node* node : order)
        if (!node->parents.empty() && !node->grad.empty())
            std::fill(node->grad.begin(), node->grad.end(), 0.0);
    if (!loss.node()->parents.empty()) loss.node()->grad_buffer()[0] = 1.0;
    else loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> m, v;

    void reset(const std::vector<Tensor>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const Tensor& p : params) {
            m.emplace_back(p.values().size(), 0.0);
            v.emplace_back(p.values().size(), 0.0);
        }
    }
};

/// Bias-corrected Adam update in place; gradients are cleared afterwards.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.size() != params.size()) state.reset(params);
    for (std::size_t k = 0; k < params.size(); ++k)
        if (!params[k].has_grad())
            throw std::logic_error("adam_step: parameter " + std::to_string(k) +
                                   " has no gradient; run backward first");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].mutable_values();
        auto& g = params[k].grad_buffer();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        std::fill(g.begin(), g.end(), 0.0);
    }
}

} // namespace seep
