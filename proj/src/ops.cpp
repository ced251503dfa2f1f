#include "xilab/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <memory>

namespace xilab::autodiff {

namespace {

using Vjp = std::function<Tensor(const Tensor&)>;
using Indices = std::shared_ptr<const std::vector<std::int64_t>>;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void check_ndim(const char* op, const Tensor& x, int ndim) {
    if (x.ndim() != ndim)
        throw ShapeError(std::string(op) + ": expected " + std::to_string(ndim) +
                         "-d tensor, got " + shape_str(x.shape()));
}

// y[(N*Ho*Wo) x (C*R*S)] patch matrix of x[N,C,H,W].
void im2col(const double* x, int n, int c, int h, int w, int r, int s, double* out) {
    const int ho = h - r + 1, wo = w - s + 1;
    const std::int64_t cols = std::int64_t(c) * r * s;
    for (int in = 0; in < n; ++in)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                double* row = out + ((std::int64_t(in) * ho + i) * wo + j) * cols;
                for (int ic = 0; ic < c; ++ic) {
                    const double* src = x + ((std::int64_t(in) * c + ic) * h + i) * w + j;
                    for (int ir = 0; ir < r; ++ir) {
                        const double* p = src + std::int64_t(ir) * w;
                        for (int is = 0; is < s; ++is) *row++ = p[is];
                    }
                }
            }
}

// Adjoint of im2col: scatter-add patch matrix rows back into x-shaped grad.
void col2im(const double* m, int n, int c, int h, int w, int r, int s, double* out) {
    const int ho = h - r + 1, wo = w - s + 1;
    const std::int64_t cols = std::int64_t(c) * r * s;
    for (int in = 0; in < n; ++in)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const double* row = m + ((std::int64_t(in) * ho + i) * wo + j) * cols;
                for (int ic = 0; ic < c; ++ic) {
                    double* dst = out + ((std::int64_t(in) * c + ic) * h + i) * w + j;
                    for (int ir = 0; ir < r; ++ir) {
                        double* p = dst + std::int64_t(ir) * w;
                        for (int is = 0; is < s; ++is) p[is] += row[is];
                        row += s;
                    }
                }
            }
}

// [N,K,Ho,Wo] -> [(N*Ho*Wo) x K]
std::vector<double> nchw_to_rows(const Tensor& t) {
    const int n = t.dim(0), k = t.dim(1), ho = t.dim(2), wo = t.dim(3);
    std::vector<double> out(t.values().size());
    const double* src = t.values().data();
    for (int in = 0; in < n; ++in)
        for (int ik = 0; ik < k; ++ik)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j)
                    out[((std::int64_t(in) * ho + i) * wo + j) * k + ik] = *src++;
    return out;
}

Tensor max_unpool2d_impl(const Tensor& g, Indices argmax, Shape in_shape);
Tensor pool_gather_impl(const Tensor& u, Indices argmax, Shape out_shape);

Tensor max_unpool2d_impl(const Tensor& g, Indices argmax, Shape in_shape) {
    std::vector<double> out(static_cast<std::size_t>(numel_of(in_shape)), 0.0);
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i)
        out[static_cast<std::size_t>((*argmax)[i])] += gv[i];
    Shape g_shape = g.shape();
    return make_op_output(in_shape, std::move(out), "max_unpool2d", {g},
                          {[argmax, g_shape](const Tensor& u) {
                              return pool_gather_impl(u, argmax, g_shape);
                          }});
}

Tensor pool_gather_impl(const Tensor& u, Indices argmax, Shape out_shape) {
    std::vector<double> out(static_cast<std::size_t>(numel_of(out_shape)));
    auto uv = u.values();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = uv[static_cast<std::size_t>((*argmax)[i])];
    Shape u_shape = u.shape();
    return make_op_output(out_shape, std::move(out), "pool_gather", {u},
                          {[argmax, u_shape](const Tensor& g) {
                              return max_unpool2d_impl(g, argmax, u_shape);
                          }});
}

// v[N] + row indices (-1 = none) -> [N,M]; adjoint of gather_row_indices.
Tensor scatter_row_indices(const Tensor& v, Indices idx, int m);
Tensor gather_row_indices(const Tensor& x, Indices idx);

Tensor scatter_row_indices(const Tensor& v, Indices idx, int m) {
    const int n = v.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
    auto vv = v.values();
    for (int i = 0; i < n; ++i)
        if ((*idx)[static_cast<std::size_t>(i)] >= 0)
            out[static_cast<std::size_t>(i) * m +
                static_cast<std::size_t>((*idx)[static_cast<std::size_t>(i)])] = vv[static_cast<std::size_t>(i)];
    return make_op_output({n, m}, std::move(out), "scatter_rows", {v},
                          {[idx](const Tensor& g) { return gather_row_indices(g, idx); }});
}

Tensor gather_row_indices(const Tensor& x, Indices idx) {
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    auto xv = x.values();
    for (int i = 0; i < n; ++i)
        if ((*idx)[static_cast<std::size_t>(i)] >= 0)
            out[static_cast<std::size_t>(i)] =
                xv[static_cast<std::size_t>(i) * m + static_cast<std::size_t>((*idx)[static_cast<std::size_t>(i)])];
    return make_op_output({n}, std::move(out), "gather_rows", {x},
                          {[idx, m](const Tensor& g) { return scatter_row_indices(g, idx, m); }});
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_op_output(a.shape(), std::move(out), "add", {a, b},
                          {[](const Tensor& g) { return g; },
                           [](const Tensor& g) { return g; }});
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_op_output(a.shape(), std::move(out), "sub", {a, b},
                          {[](const Tensor& g) { return g; },
                           [](const Tensor& g) { return neg(g); }});
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_op_output(a.shape(), std::move(out), "mul", {a, b},
                          {[b](const Tensor& g) { return mul(g, b); },
                           [a](const Tensor& g) { return mul(g, a); }});
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape("div", a, b);
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
    return make_op_output(a.shape(), std::move(out), "div", {a, b},
                          {[b](const Tensor& g) { return div(g, b); },
                           [a, b](const Tensor& g) {
                               return neg(div(mul(g, a), mul(b, b)));
                           }});
}

Tensor neg(const Tensor& x) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -xv[i];
    return make_op_output(x.shape(), std::move(out), "neg", {x},
                          {[](const Tensor& g) { return neg(g); }});
}

Tensor scale(const Tensor& x, double c) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
    return make_op_output(x.shape(), std::move(out), "scale", {x},
                          {[c](const Tensor& g) { return scale(g, c); }});
}

Tensor exp(const Tensor& x) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
    return make_op_output(x.shape(), std::move(out), "exp", {x},
                          {[x](const Tensor& g) { return mul(g, exp(x)); }});
}

Tensor relu(const Tensor& x) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    std::vector<double> mask(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool pos = xv[i] > 0.0;
        out[i] = pos ? xv[i] : 0.0;
        mask[i] = pos ? 1.0 : 0.0;
    }
    Tensor mask_t = Tensor::from_data(x.shape(), std::move(mask));
    return make_op_output(x.shape(), std::move(out), "relu", {x},
                          {[mask_t](const Tensor& g) { return mul(g, mask_t); }});
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Shape xs = x.shape();
    return make_op_output({}, {s}, "sum_all", {x},
                          {[xs](const Tensor& g) { return expand_scalar(g, xs); }});
}

Tensor expand_scalar(const Tensor& s, Shape shape) {
    if (s.numel() != 1) throw ShapeError("expand_scalar: source must be scalar");
    std::vector<double> out(static_cast<std::size_t>(numel_of(shape)), s.values()[0]);
    return make_op_output(std::move(shape), std::move(out), "expand_scalar", {s},
                          {[](const Tensor& g) { return sum_all(g); }});
}

Tensor row_sum(const Tensor& x) {
    check_ndim("row_sum", x, 2);
    const int n = x.dim(0), c = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    auto xv = x.values();
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += xv[static_cast<std::size_t>(i) * c + j];
        out[static_cast<std::size_t>(i)] = s;
    }
    return make_op_output({n}, std::move(out), "row_sum", {x},
                          {[c](const Tensor& g) { return expand_cols(g, c); }});
}

Tensor expand_cols(const Tensor& v, int cols) {
    check_ndim("expand_cols", v, 1);
    const int n = v.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n) * cols);
    auto vv = v.values();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cols; ++j) out[static_cast<std::size_t>(i) * cols + j] = vv[static_cast<std::size_t>(i)];
    return make_op_output({n, cols}, std::move(out), "expand_cols", {v},
                          {[](const Tensor& g) { return row_sum(g); }});
}

Tensor col_sum(const Tensor& x) {
    check_ndim("col_sum", x, 2);
    const int n = x.dim(0), c = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(c), 0.0);
    auto xv = x.values();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += xv[static_cast<std::size_t>(i) * c + j];
    return make_op_output({c}, std::move(out), "col_sum", {x},
                          {[n](const Tensor& g) { return expand_rows(g, n); }});
}

Tensor expand_rows(const Tensor& v, int rows) {
    check_ndim("expand_rows", v, 1);
    const int c = v.dim(0);
    std::vector<double> out(static_cast<std::size_t>(rows) * c);
    auto vv = v.values();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] = vv[static_cast<std::size_t>(j)];
    return make_op_output({rows, c}, std::move(out), "expand_rows", {v},
                          {[](const Tensor& g) { return col_sum(g); }});
}

Tensor sum_hw(const Tensor& x) {
    check_ndim("sum_hw", x, 4);
    const int n = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(n) * k, 0.0);
    auto xv = x.values();
    const double* p = xv.data();
    for (std::size_t nk = 0; nk < out.size(); ++nk) {
        double s = 0.0;
        for (int i = 0; i < h * w; ++i) s += *p++;
        out[nk] = s;
    }
    return make_op_output({n, k}, std::move(out), "sum_hw", {x},
                          {[h, w](const Tensor& g) { return expand_hw(g, h, w); }});
}

Tensor expand_hw(const Tensor& v, int h, int w) {
    check_ndim("expand_hw", v, 2);
    const int n = v.dim(0), k = v.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * k * h * w);
    auto vv = v.values();
    double* p = out.data();
    for (std::size_t nk = 0; nk < vv.size(); ++nk)
        for (int i = 0; i < h * w; ++i) *p++ = vv[nk];
    return make_op_output({n, k, h, w}, std::move(out), "expand_hw", {v},
                          {[](const Tensor& g) { return sum_hw(g); }});
}

Tensor sum_channels(const Tensor& x) {
    check_ndim("sum_channels", x, 4);
    const int n = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = std::int64_t(h) * w;
    std::vector<double> out(static_cast<std::size_t>(n) * hw, 0.0);
    auto xv = x.values();
    for (int in = 0; in < n; ++in)
        for (int ik = 0; ik < k; ++ik) {
            const double* src = xv.data() + (std::int64_t(in) * k + ik) * hw;
            double* dst = out.data() + std::int64_t(in) * hw;
            for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
    return make_op_output({n, 1, h, w}, std::move(out), "sum_channels", {x},
                          {[k](const Tensor& g) { return expand_channels(g, k); }});
}

Tensor expand_channels(const Tensor& x, int channels) {
    check_ndim("expand_channels", x, 4);
    if (x.dim(1) != 1) throw ShapeError("expand_channels: dim 1 must be 1, got " + shape_str(x.shape()), 1);
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = std::int64_t(h) * w;
    std::vector<double> out(static_cast<std::size_t>(n) * channels * hw);
    auto xv = x.values();
    for (int in = 0; in < n; ++in)
        for (int ik = 0; ik < channels; ++ik)
            std::copy_n(xv.data() + std::int64_t(in) * hw, hw,
                        out.data() + (std::int64_t(in) * channels + ik) * hw);
    return make_op_output({n, channels, h, w}, std::move(out), "expand_channels", {x},
                          {[](const Tensor& g) { return sum_channels(g); }});
}

Tensor sum_over_nhw(const Tensor& x) {
    check_ndim("sum_over_nhw", x, 4);
    const int n = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = std::int64_t(h) * w;
    std::vector<double> out(static_cast<std::size_t>(k), 0.0);
    auto xv = x.values();
    for (int in = 0; in < n; ++in)
        for (int ik = 0; ik < k; ++ik) {
            const double* src = xv.data() + (std::int64_t(in) * k + ik) * hw;
            double s = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) s += src[i];
            out[static_cast<std::size_t>(ik)] += s;
        }
    return make_op_output({k}, std::move(out), "sum_over_nhw", {x},
                          {[n, h, w](const Tensor& g) { return expand_bias_nchw(g, n, h, w); }});
}

Tensor expand_bias_nchw(const Tensor& b, int n, int h, int w) {
    check_ndim("expand_bias_nchw", b, 1);
    const int k = b.dim(0);
    const std::int64_t hw = std::int64_t(h) * w;
    std::vector<double> out(static_cast<std::size_t>(n) * k * hw);
    auto bv = b.values();
    for (int in = 0; in < n; ++in)
        for (int ik = 0; ik < k; ++ik)
            std::fill_n(out.data() + (std::int64_t(in) * k + ik) * hw, hw, bv[static_cast<std::size_t>(ik)]);
    return make_op_output({n, k, h, w}, std::move(out), "expand_bias_nchw", {b},
                          {[](const Tensor& g) { return sum_over_nhw(g); }});
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    Shape orig = x.shape();
    return make_op_output(std::move(shape), std::move(out), "reshape", {x},
                          {[orig](const Tensor& g) { return reshape(g, orig); }});
}

Tensor transpose(const Tensor& x) {
    check_ndim("transpose", x, 2);
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * m);
    auto xv = x.values();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            out[static_cast<std::size_t>(j) * n + i] = xv[static_cast<std::size_t>(i) * m + j];
    return make_op_output({m, n}, std::move(out), "transpose", {x},
                          {[](const Tensor& g) { return transpose(g); }});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_ndim("matmul", a, 2);
    check_ndim("matmul", b, 2);
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()), 1);
    const int n = a.dim(0), d = a.dim(1), e = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * e, 0.0);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, e, d, 1.0,
                a.values().data(), d, b.values().data(), e, 0.0, out.data(), e);
    return make_op_output({n, e}, std::move(out), "matmul", {a, b},
                          {[b](const Tensor& g) { return matmul(g, transpose(b)); },
                           [a](const Tensor& g) { return matmul(transpose(a), g); }});
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    check_ndim("dense", input, 2);
    check_ndim("dense", weights, 2);
    check_ndim("dense", bias, 1);
    if (input.dim(1) != weights.dim(0))
        throw ShapeError("dense: input width " + std::to_string(input.dim(1)) +
                         " does not match weight rows " + std::to_string(weights.dim(0)), 1);
    if (weights.dim(1) != bias.dim(0))
        throw ShapeError("dense: weight cols " + std::to_string(weights.dim(1)) +
                         " do not match bias size " + std::to_string(bias.dim(0)), 1);
    return add(matmul(input, weights), expand_rows(bias, input.dim(0)));
}

Tensor gather_labels(const Tensor& x, const std::vector<int>& labels) {
    check_ndim("gather_labels", x, 2);
    const int n = x.dim(0), c = x.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("gather_labels: got " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(n));
    for (int i = 0; i < n; ++i)
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= c)
            throw ShapeError("gather_labels: label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                             " at index " + std::to_string(i) + " out of range [0," + std::to_string(c) + ")");
    std::vector<double> out(static_cast<std::size_t>(n));
    auto xv = x.values();
    for (int i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>(i) * c + labels[static_cast<std::size_t>(i)]];
    std::vector<int> lab = labels;
    return make_op_output({n}, std::move(out), "gather_labels", {x},
                          {[lab, c](const Tensor& g) { return scatter_labels(g, lab, c); }});
}

Tensor scatter_labels(const Tensor& v, const std::vector<int>& labels, int cols) {
    check_ndim("scatter_labels", v, 1);
    const int n = v.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n) * cols, 0.0);
    auto vv = v.values();
    for (int i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i) * cols + labels[static_cast<std::size_t>(i)]] = vv[static_cast<std::size_t>(i)];
    std::vector<int> lab = labels;
    return make_op_output({n, cols}, std::move(out), "scatter_labels", {v},
                          {[lab](const Tensor& g) { return gather_labels(g, lab); }});
}

Tensor reduce_max(const Tensor& x) {
    auto xv = x.values();
    if (xv.empty()) throw ShapeError("reduce_max: empty tensor");
    std::int64_t idx = 0;
    double best = xv[0];
    for (std::size_t i = 1; i < xv.size(); ++i)
        if (xv[i] > best) { best = xv[i]; idx = static_cast<std::int64_t>(i); }
    Shape xs = x.shape();
    return make_op_output({}, {best}, "reduce_max", {x},
                          {[idx, xs](const Tensor& g) { return scatter_at(g, idx, xs); }});
}

Tensor gather_at(const Tensor& x, std::int64_t flat_index) {
    if (flat_index < 0 || flat_index >= x.numel())
        throw ShapeError("gather_at: index out of range");
    Shape xs = x.shape();
    return make_op_output({}, {x.values()[static_cast<std::size_t>(flat_index)]}, "gather_at", {x},
                          {[flat_index, xs](const Tensor& g) { return scatter_at(g, flat_index, xs); }});
}

Tensor scatter_at(const Tensor& s, std::int64_t flat_index, Shape shape) {
    if (s.numel() != 1) throw ShapeError("scatter_at: source must be scalar");
    std::vector<double> out(static_cast<std::size_t>(numel_of(shape)), 0.0);
    out[static_cast<std::size_t>(flat_index)] = s.values()[0];
    return make_op_output(std::move(shape), std::move(out), "scatter_at", {s},
                          {[flat_index](const Tensor& g) { return gather_at(g, flat_index); }});
}

Tensor rowwise_max_positive(const Tensor& x) {
    check_ndim("rowwise_max_positive", x, 2);
    const int n = x.dim(0), m = x.dim(1);
    auto xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(n));
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        double best = 0.0;
        std::int64_t at = -1;
        for (int j = 0; j < m; ++j) {
            double v = xv[static_cast<std::size_t>(i) * m + j];
            if (v > best) { best = v; at = j; }
        }
        out[static_cast<std::size_t>(i)] = at >= 0 ? best : 1.0;
        (*idx)[static_cast<std::size_t>(i)] = at;
    }
    Indices ci = idx;
    return make_op_output({n}, std::move(out), "rowwise_max_positive", {x},
                          {[ci, m](const Tensor& g) { return scatter_row_indices(g, ci, m); }});
}

Tensor log_softmax(const Tensor& x) {
    check_ndim("log_softmax", x, 2);
    const int n = x.dim(0), c = x.dim(1);
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (int i = 0; i < n; ++i) {
        const double* row = xv.data() + std::int64_t(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
        lse = mx + std::log(lse);
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] = row[j] - lse;
    }
    return make_op_output(x.shape(), std::move(out), "log_softmax", {x},
                          {[x, c](const Tensor& g) {
                              // d/dx <g, log_softmax(x)> = g - softmax(x) * rowsum(g)
                              Tensor sm = exp(log_softmax(x));
                              return sub(g, mul(sm, expand_cols(row_sum(g), c)));
                          }});
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_ndim("cross_entropy", logits, 2);
    const int n = logits.dim(0);
    Tensor picked = gather_labels(log_softmax(logits), labels);
    return scale(sum_all(picked), -1.0 / n);
}

Tensor conv2d_raw(const Tensor& input, const Tensor& kernels) {
    check_ndim("conv2d", input, 4);
    check_ndim("conv2d", kernels, 4);
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int k = kernels.dim(0), kc = kernels.dim(1), r = kernels.dim(2), s = kernels.dim(3);
    if (c != kc)
        throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(c) +
                         " do not match kernel channels = " + std::to_string(kc), 1);
    if (h < r || w < s)
        throw ShapeError("conv2d: kernel " + std::to_string(r) + "x" + std::to_string(s) +
                         " larger than input " + std::to_string(h) + "x" + std::to_string(w), 2);
    const int ho = h - r + 1, wo = w - s + 1;
    const std::int64_t rows = std::int64_t(n) * ho * wo;
    const std::int64_t cols = std::int64_t(c) * r * s;

    std::vector<double> patches(static_cast<std::size_t>(rows * cols));
    im2col(input.values().data(), n, c, h, w, r, s, patches.data());
    std::vector<double> prod(static_cast<std::size_t>(rows) * k, 0.0);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(rows), k,
                static_cast<int>(cols), 1.0, patches.data(), static_cast<int>(cols),
                kernels.values().data(), static_cast<int>(cols), 0.0, prod.data(), k);

    std::vector<double> out(static_cast<std::size_t>(n) * k * ho * wo);
    for (int in = 0; in < n; ++in)
        for (int ik = 0; ik < k; ++ik)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j)
                    out[((std::int64_t(in) * k + ik) * ho + i) * wo + j] =
                        prod[((std::int64_t(in) * ho + i) * wo + j) * k + ik];

    return make_op_output({n, k, ho, wo}, std::move(out), "conv2d", {input, kernels},
                          {[kernels, h, w](const Tensor& g) { return conv2d_input_vjp(g, kernels, h, w); },
                           [input, r, s](const Tensor& g) { return conv2d_kernel_vjp(input, g, r, s); }});
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    check_ndim("conv2d", bias, 1);
    if (bias.dim(0) != kernels.dim(0))
        throw ShapeError("conv2d: bias size " + std::to_string(bias.dim(0)) +
                         " does not match kernel count (dim 0) = " + std::to_string(kernels.dim(0)), 0);
    Tensor y = conv2d_raw(input, kernels);
    return add(y, expand_bias_nchw(bias, y.dim(0), y.dim(2), y.dim(3)));
}

Tensor conv2d_input_vjp(const Tensor& grad_out, const Tensor& kernels, int in_h, int in_w) {
    check_ndim("conv2d_input_vjp", grad_out, 4);
    const int n = grad_out.dim(0), k = grad_out.dim(1), ho = grad_out.dim(2), wo = grad_out.dim(3);
    const int c = kernels.dim(1), r = kernels.dim(2), s = kernels.dim(3);
    if (kernels.dim(0) != k)
        throw ShapeError("conv2d_input_vjp: kernel count mismatch", 0);
    const std::int64_t rows = std::int64_t(n) * ho * wo;
    const std::int64_t cols = std::int64_t(c) * r * s;

    std::vector<double> grows = nchw_to_rows(grad_out);
    std::vector<double> patches(static_cast<std::size_t>(rows * cols), 0.0);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(rows),
                static_cast<int>(cols), k, 1.0, grows.data(), k,
                kernels.values().data(), static_cast<int>(cols), 0.0, patches.data(),
                static_cast<int>(cols));

    std::vector<double> out(static_cast<std::size_t>(n) * c * in_h * in_w, 0.0);
    col2im(patches.data(), n, c, in_h, in_w, r, s, out.data());
    return make_op_output({n, c, in_h, in_w}, std::move(out), "conv2d_input_vjp",
                          {grad_out, kernels},
                          {[kernels](const Tensor& u) { return conv2d_raw(u, kernels); },
                           [grad_out, r, s](const Tensor& u) { return conv2d_kernel_vjp(u, grad_out, r, s); }});
}

Tensor conv2d_kernel_vjp(const Tensor& input, const Tensor& grad_out, int k_h, int k_w) {
    check_ndim("conv2d_kernel_vjp", input, 4);
    check_ndim("conv2d_kernel_vjp", grad_out, 4);
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int k = grad_out.dim(1), ho = grad_out.dim(2), wo = grad_out.dim(3);
    if (h - ho + 1 != k_h || w - wo + 1 != k_w)
        throw ShapeError("conv2d_kernel_vjp: inconsistent spatial extents", 2);
    const std::int64_t rows = std::int64_t(n) * ho * wo;
    const std::int64_t cols = std::int64_t(c) * k_h * k_w;

    std::vector<double> patches(static_cast<std::size_t>(rows * cols));
    im2col(input.values().data(), n, c, h, w, k_h, k_w, patches.data());
    std::vector<double> grows = nchw_to_rows(grad_out);
    std::vector<double> out(static_cast<std::size_t>(k) * cols, 0.0);
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, static_cast<int>(cols),
                static_cast<int>(rows), 1.0, grows.data(), k, patches.data(),
                static_cast<int>(cols), 0.0, out.data(), static_cast<int>(cols));

    const int in_h = h, in_w = w;
    return make_op_output({k, c, k_h, k_w}, std::move(out), "conv2d_kernel_vjp",
                          {input, grad_out},
                          {[grad_out, in_h, in_w](const Tensor& u) {
                               return conv2d_input_vjp(grad_out, u, in_h, in_w);
                           },
                           [input](const Tensor& u) { return conv2d_raw(input, u); }});
}

Tensor max_pool2d(const Tensor& x) {
    check_ndim("max_pool2d", x, 4);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0)
        throw ShapeError("max_pool2d: height " + std::to_string(h) + " not divisible by 2", 2);
    if (w % 2 != 0)
        throw ShapeError("max_pool2d: width " + std::to_string(w) + " not divisible by 2", 3);
    const int ho = h / 2, wo = w / 2;
    auto xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(n) * c * ho * wo);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    std::size_t oi = 0;
    for (int nc = 0; nc < n * c; ++nc) {
        const std::int64_t base = std::int64_t(nc) * h * w;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                // ties keep the first candidate in row-major order
                std::int64_t best_at = base + std::int64_t(2 * i) * w + 2 * j;
                double best = xv[static_cast<std::size_t>(best_at)];
                const std::int64_t cand[3] = {best_at + 1, best_at + w, best_at + w + 1};
                for (std::int64_t a : cand)
                    if (xv[static_cast<std::size_t>(a)] > best) {
                        best = xv[static_cast<std::size_t>(a)];
                        best_at = a;
                    }
                out[oi] = best;
                (*argmax)[oi] = best_at;
                ++oi;
            }
    }
    Shape in_shape = x.shape();
    Indices ci = argmax;
    return make_op_output({n, c, ho, wo}, std::move(out), "max_pool2d", {x},
                          {[ci, in_shape](const Tensor& g) {
                              return max_unpool2d_impl(g, ci, in_shape);
                          }});
}

Tensor max_unpool2d(const Tensor& g, const std::vector<std::int64_t>& argmax, Shape in_shape) {
    if (static_cast<std::int64_t>(argmax.size()) != g.numel())
        throw ShapeError("max_unpool2d: index count does not match gradient size");
    return max_unpool2d_impl(g, std::make_shared<const std::vector<std::int64_t>>(argmax),
                             std::move(in_shape));
}

Tensor pool_gather(const Tensor& u, const std::vector<std::int64_t>& argmax, Shape out_shape) {
    if (static_cast<std::int64_t>(argmax.size()) != numel_of(out_shape))
        throw ShapeError("pool_gather: index count does not match output size");
    return pool_gather_impl(u, std::make_shared<const std::vector<std::int64_t>>(argmax),
                            std::move(out_shape));
}

namespace {

struct BilinearTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

// Half-pixel-center source coordinates, clamped to the valid range.
BilinearTaps bilinear_taps(int in_n, int out_n) {
    BilinearTaps t;
    t.lo.resize(static_cast<std::size_t>(out_n));
    t.hi.resize(static_cast<std::size_t>(out_n));
    t.frac.resize(static_cast<std::size_t>(out_n));
    const double ratio = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
        double src = (o + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
        int lo = static_cast<int>(std::floor(src));
        t.lo[static_cast<std::size_t>(o)] = lo;
        t.hi[static_cast<std::size_t>(o)] = std::min(lo + 1, in_n - 1);
        t.frac[static_cast<std::size_t>(o)] = src - lo;
    }
    return t;
}

} // namespace

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
    check_ndim("upsample_bilinear", x, 4);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const BilinearTaps ty = bilinear_taps(h, out_h), tx = bilinear_taps(w, out_w);
    auto xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(n) * c * out_h * out_w);
    std::size_t oi = 0;
    for (int nc = 0; nc < n * c; ++nc) {
        const double* plane = xv.data() + std::int64_t(nc) * h * w;
        for (int i = 0; i < out_h; ++i) {
            const int y0 = ty.lo[static_cast<std::size_t>(i)], y1 = ty.hi[static_cast<std::size_t>(i)];
            const double fy = ty.frac[static_cast<std::size_t>(i)];
            for (int j = 0; j < out_w; ++j) {
                const int x0 = tx.lo[static_cast<std::size_t>(j)], x1 = tx.hi[static_cast<std::size_t>(j)];
                const double fx = tx.frac[static_cast<std::size_t>(j)];
                out[oi++] = (1 - fy) * ((1 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1]) +
                            fy * ((1 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1]);
            }
        }
    }
    return make_op_output({n, c, out_h, out_w}, std::move(out), "upsample_bilinear", {x},
                          {[h, w](const Tensor& g) { return upsample_bilinear_adj(g, h, w); }});
}

Tensor upsample_bilinear_adj(const Tensor& g, int in_h, int in_w) {
    check_ndim("upsample_bilinear_adj", g, 4);
    const int n = g.dim(0), c = g.dim(1), out_h = g.dim(2), out_w = g.dim(3);
    const BilinearTaps ty = bilinear_taps(in_h, out_h), tx = bilinear_taps(in_w, out_w);
    auto gv = g.values();
    std::vector<double> out(static_cast<std::size_t>(n) * c * in_h * in_w, 0.0);
    std::size_t gi = 0;
    for (int nc = 0; nc < n * c; ++nc) {
        double* plane = out.data() + std::int64_t(nc) * in_h * in_w;
        for (int i = 0; i < out_h; ++i) {
            const int y0 = ty.lo[static_cast<std::size_t>(i)], y1 = ty.hi[static_cast<std::size_t>(i)];
            const double fy = ty.frac[static_cast<std::size_t>(i)];
            for (int j = 0; j < out_w; ++j) {
                const int x0 = tx.lo[static_cast<std::size_t>(j)], x1 = tx.hi[static_cast<std::size_t>(j)];
                const double fx = tx.frac[static_cast<std::size_t>(j)];
                const double v = gv[gi++];
                plane[y0 * in_w + x0] += (1 - fy) * (1 - fx) * v;
                plane[y0 * in_w + x1] += (1 - fy) * fx * v;
                plane[y1 * in_w + x0] += fy * (1 - fx) * v;
                plane[y1 * in_w + x1] += fy * fx * v;
            }
        }
    }
    return make_op_output({n, c, in_h, in_w}, std::move(out), "upsample_bilinear_adj", {g},
                          {[out_h, out_w](const Tensor& u) {
                              return upsample_bilinear(u, out_h, out_w);
                          }});
}

} // namespace xilab::autodiff
