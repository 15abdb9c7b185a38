#include "attnseg/layers.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"

namespace attnseg {

namespace {

struct ConvDims {
    int64_t n, cin, h, w;
    int64_t cout, k;
    int64_t hout, wout;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, int64_t stride, int64_t padding) {
    if (x.rank() != 4) throw DimensionError("conv2d expects N×C×H×W input, got " + shape_str(x.shape()));
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
        throw DimensionError("conv2d expects Cout×Cin×k×k weight, got " + shape_str(weight.shape()));
    }
    if (x.dim(1) != weight.dim(1)) {
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(weight.shape()));
    }
    ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = weight.dim(0);
    d.k = weight.dim(2);
    d.hout = (d.h + 2 * padding - d.k) / stride + 1;
    d.wout = (d.w + 2 * padding - d.k) / stride + 1;
    if (d.hout <= 0 || d.wout <= 0) {
        throw DimensionError("conv2d output extent is not positive for input " + shape_str(x.shape()));
    }
    return d;
}

// columns: (Cin·k·k) × (Hout·Wout)
void im2col(const double* x, const ConvDims& d, int64_t stride, int64_t padding, double* col) {
    const int64_t cols = d.hout * d.wout;
    for (int64_t c = 0; c < d.cin; ++c) {
        const double* plane = x + c * d.h * d.w;
        for (int64_t ki = 0; ki < d.k; ++ki) {
            for (int64_t kj = 0; kj < d.k; ++kj) {
                double* row = col + ((c * d.k + ki) * d.k + kj) * cols;
                for (int64_t oh = 0; oh < d.hout; ++oh) {
                    const int64_t ih = oh * stride - padding + ki;
                    double* out = row + oh * d.wout;
                    if (ih < 0 || ih >= d.h) {
                        std::fill_n(out, d.wout, 0.0);
                        continue;
                    }
                    const double* src = plane + ih * d.w;
                    for (int64_t ow = 0; ow < d.wout; ++ow) {
                        const int64_t iw = ow * stride - padding + kj;
                        out[ow] = (iw >= 0 && iw < d.w) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const double* col, const ConvDims& d, int64_t stride, int64_t padding, double* gx) {
    const int64_t cols = d.hout * d.wout;
    for (int64_t c = 0; c < d.cin; ++c) {
        double* plane = gx + c * d.h * d.w;
        for (int64_t ki = 0; ki < d.k; ++ki) {
            for (int64_t kj = 0; kj < d.k; ++kj) {
                const double* row = col + ((c * d.k + ki) * d.k + kj) * cols;
                for (int64_t oh = 0; oh < d.hout; ++oh) {
                    const int64_t ih = oh * stride - padding + ki;
                    if (ih < 0 || ih >= d.h) continue;
                    double* dst = plane + ih * d.w;
                    const double* src = row + oh * d.wout;
                    for (int64_t ow = 0; ow < d.wout; ++ow) {
                        const int64_t iw = ow * stride - padding + kj;
                        if (iw >= 0 && iw < d.w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

bool tape_wants(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int64_t stride, int64_t padding) {
    const ConvDims d = conv_dims(x, weight, stride, padding);
    const int64_t cols = d.hout * d.wout;
    const int64_t krows = d.cin * d.k * d.k;

    Tensor out = Tensor::zeros({d.n, d.cout, d.hout, d.wout});
    const bool recording = tape_wants({&x, &weight, &bias});

    // columns are kept per sample for the backward pass
    auto saved_cols = std::make_shared<std::vector<std::vector<double>>>();
    std::vector<double> scratch;
    for (int64_t n = 0; n < d.n; ++n) {
        std::vector<double>* col;
        if (recording) {
            saved_cols->emplace_back(static_cast<size_t>(krows * cols));
            col = &saved_cols->back();
        } else {
            scratch.assign(static_cast<size_t>(krows * cols), 0.0);
            col = &scratch;
        }
        im2col(x.data().data() + n * d.cin * d.h * d.w, d, stride, padding, col->data());
        detail::gemm_nn(d.cout, cols, krows, weight.data().data(), col->data(),
                        out.data().data() + n * d.cout * cols);
    }
    if (bias.defined()) {
        if (bias.numel() != d.cout) {
            throw DimensionError("conv2d bias shape " + shape_str(bias.shape()) + " does not match Cout " +
                                 std::to_string(d.cout));
        }
        auto& ov = out.data();
        for (int64_t n = 0; n < d.n; ++n) {
            for (int64_t c = 0; c < d.cout; ++c) {
                const double b = bias.data()[static_cast<size_t>(c)];
                double* p = ov.data() + (n * d.cout + c) * cols;
                for (int64_t i = 0; i < cols; ++i) p[i] += b;
            }
        }
    }

    if (recording) {
        Tensor tx = x, tw = weight, tb = bias, to = out;
        Tape::active()->record([tx, tw, tb, to, d, stride, padding, cols, krows, saved_cols]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.impl()->grad;
            for (int64_t n = 0; n < d.n; ++n) {
                const double* gout = g.data() + n * d.cout * cols;
                const std::vector<double>& col = (*saved_cols)[static_cast<size_t>(n)];
                if (tw.requires_grad()) {
                    detail::gemm_nt(d.cout, krows, cols, gout, col.data(), tw.grad().data());
                }
                if (tx.requires_grad()) {
                    std::vector<double> gcol(static_cast<size_t>(krows * cols), 0.0);
                    detail::gemm_tn(krows, cols, d.cout, tw.data().data(), gout, gcol.data());
                    col2im_accumulate(gcol.data(), d, stride, padding,
                                      tx.grad().data() + n * d.cin * d.h * d.w);
                }
                if (tb.defined() && tb.requires_grad()) {
                    auto& gb = tb.grad();
                    for (int64_t c = 0; c < d.cout; ++c) {
                        double s = 0.0;
                        const double* p = gout + c * cols;
                        for (int64_t i = 0; i < cols; ++i) s += p[i];
                        gb[static_cast<size_t>(c)] += s;
                    }
                }
            }
        });
        out.set_requires_grad(true);
    }
    return out;
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var,
                   double eps, double momentum, bool training) {
    if (x.rank() != 4) throw DimensionError("batchnorm2d expects N×C×H×W input, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("batchnorm2d parameter size does not match C=" + std::to_string(c));
    }
    const int64_t m = n * hw;
    if (training && m < 2) {
        throw ContractError("batchnorm2d train mode needs at least 2 elements per channel, got " +
                            std::to_string(m));
    }

    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();

    std::vector<double> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
    auto xhat = std::make_shared<std::vector<double>>(); // normalized pre-affine values

    if (training) {
        for (int64_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int64_t b = 0; b < n; ++b) {
                const double* p = xv.data() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(m);
            double var = 0.0;
            for (int64_t b = 0; b < n; ++b) {
                const double* p = xv.data() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const double dv = p[i] - mu;
                    var += dv * dv;
                }
            }
            var /= static_cast<double>(m);
            mean[static_cast<size_t>(ch)] = mu;
            inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + eps);
            // unbiased variance feeds the running buffer
            const double var_unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            auto& rm = running_mean.data();
            auto& rv = running_var.data();
            rm[static_cast<size_t>(ch)] = (1.0 - momentum) * rm[static_cast<size_t>(ch)] + momentum * mu;
            rv[static_cast<size_t>(ch)] = (1.0 - momentum) * rv[static_cast<size_t>(ch)] + momentum * var_unbiased;
        }
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            mean[static_cast<size_t>(ch)] = running_mean.data()[static_cast<size_t>(ch)];
            inv_std[static_cast<size_t>(ch)] =
                1.0 / std::sqrt(running_var.data()[static_cast<size_t>(ch)] + eps);
        }
    }

    const bool recording = tape_wants({&x, &gamma, &beta});
    if (recording) xhat->resize(xv.size());
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const double mu = mean[static_cast<size_t>(ch)];
            const double is = inv_std[static_cast<size_t>(ch)];
            const double gm = gamma.data()[static_cast<size_t>(ch)];
            const double bt = beta.data()[static_cast<size_t>(ch)];
            const double* p = xv.data() + (b * c + ch) * hw;
            double* o = ov.data() + (b * c + ch) * hw;
            if (recording) {
                double* xh = xhat->data() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    xh[i] = (p[i] - mu) * is;
                    o[i] = gm * xh[i] + bt;
                }
            } else {
                for (int64_t i = 0; i < hw; ++i) o[i] = gm * ((p[i] - mu) * is) + bt;
            }
        }
    }

    if (recording) {
        Tensor tx = x, tg = gamma, tb = beta, to = out;
        auto inv_std_saved = std::make_shared<std::vector<double>>(inv_std);
        Tape::active()->record([tx, tg, tb, to, xhat, inv_std_saved, n, c, hw, m, training]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.impl()->grad;
            for (int64_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int64_t b = 0; b < n; ++b) {
                    const double* gp = g.data() + (b * c + ch) * hw;
                    const double* xh = xhat->data() + (b * c + ch) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        sum_g += gp[i];
                        sum_gx += gp[i] * xh[i];
                    }
                }
                if (tg.requires_grad()) tg.grad()[static_cast<size_t>(ch)] += sum_gx;
                if (tb.requires_grad()) tb.grad()[static_cast<size_t>(ch)] += sum_g;
                if (!tx.requires_grad()) continue;
                const double gm = tg.data()[static_cast<size_t>(ch)];
                const double is = (*inv_std_saved)[static_cast<size_t>(ch)];
                if (training) {
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (int64_t b = 0; b < n; ++b) {
                        const double* gp = g.data() + (b * c + ch) * hw;
                        const double* xh = xhat->data() + (b * c + ch) * hw;
                        double* gx = tx.grad().data() + (b * c + ch) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            gx[i] += gm * is * (gp[i] - inv_m * sum_g - xh[i] * inv_m * sum_gx);
                        }
                    }
                } else {
                    for (int64_t b = 0; b < n; ++b) {
                        const double* gp = g.data() + (b * c + ch) * hw;
                        double* gx = tx.grad().data() + (b * c + ch) * hw;
                        for (int64_t i = 0; i < hw; ++i) gx[i] += gm * is * gp[i];
                    }
                }
            }
        });
        out.set_requires_grad(true);
    }
    return out;
}

Tensor maxpool2x2(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("maxpool2x2 expects N×C×H×W input, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("maxpool2x2 requires even spatial extents, got " + shape_str(x.shape()));
    }
    const int64_t ho = h / 2, wo = w / 2;
    Tensor out = Tensor::zeros({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const double* plane = xv.data() + nc * h * w;
        double* oplane = ov.data() + nc * ho * wo;
        int64_t* aplane = argmax->data() + nc * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
            for (int64_t ow = 0; ow < wo; ++ow) {
                // first-encountered position wins ties
                int64_t best = (2 * oh) * w + 2 * ow;
                double bv = plane[best];
                const int64_t cands[3] = {(2 * oh) * w + 2 * ow + 1, (2 * oh + 1) * w + 2 * ow,
                                          (2 * oh + 1) * w + 2 * ow + 1};
                for (int64_t cand : cands) {
                    if (plane[cand] > bv) {
                        bv = plane[cand];
                        best = cand;
                    }
                }
                oplane[oh * wo + ow] = bv;
                aplane[oh * wo + ow] = nc * h * w + best;
            }
        }
    }
    if (tape_wants({&x})) {
        Tensor tx = x, to = out;
        Tape::active()->record([tx, to, argmax]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>((*argmax)[i])] += g[i];
        });
        out.set_requires_grad(true);
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool expects N×C×H×W input, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({n, c, 1, 1});
    const double inv = 1.0 / static_cast<double>(hw);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        const double* p = xv.data() + i * hw;
        for (int64_t j = 0; j < hw; ++j) s += p[j];
        ov[i] = s * inv;
    }
    if (tape_wants({&x})) {
        Tensor tx = x, to = out;
        Tape::active()->record([tx, to, n, c, hw, inv]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (int64_t i = 0; i < n * c; ++i) {
                const double gi = g[i] * inv;
                double* p = gx.data() + i * hw;
                for (int64_t j = 0; j < hw; ++j) p[j] += gi;
            }
        });
        out.set_requires_grad(true);
    }
    return out;
}

Tensor global_max_pool(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("global_max_pool expects N×C×H×W input, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({n, c, 1, 1});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c));
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t i = 0; i < n * c; ++i) {
        const double* p = xv.data() + i * hw;
        int64_t best = 0;
        for (int64_t j = 1; j < hw; ++j) {
            if (p[j] > p[best]) best = j;
        }
        ov[i] = p[best];
        (*argmax)[static_cast<size_t>(i)] = i * hw + best;
    }
    if (tape_wants({&x})) {
        Tensor tx = x, to = out;
        Tape::active()->record([tx, to, argmax]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>((*argmax)[i])] += g[i];
        });
        out.set_requires_grad(true);
    }
    return out;
}

namespace {

struct LerpCoord {
    int64_t lo, hi;
    double frac;
};

LerpCoord resize_coord(int64_t out_idx, int64_t out_size, int64_t in_size) {
    // align-corners=false source coordinate, clamped to the edge
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    double src = (static_cast<double>(out_idx) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    const double max_src = static_cast<double>(in_size - 1);
    if (src > max_src) src = max_src;
    LerpCoord c;
    c.lo = static_cast<int64_t>(src);
    if (c.lo > in_size - 1) c.lo = in_size - 1;
    c.hi = std::min<int64_t>(c.lo + 1, in_size - 1);
    c.frac = src - static_cast<double>(c.lo);
    return c;
}

} // namespace

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
    if (x.rank() != 4) throw DimensionError("bilinear_resize expects N×C×H×W input, got " + shape_str(x.shape()));
    if (out_h <= 0 || out_w <= 0) throw DimensionError("bilinear_resize target extents must be positive");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out = Tensor::zeros({n, c, out_h, out_w});
    const auto& xv = x.data();
    auto& ov = out.data();

    std::vector<LerpCoord> ys(static_cast<size_t>(out_h)), xs(static_cast<size_t>(out_w));
    for (int64_t i = 0; i < out_h; ++i) ys[static_cast<size_t>(i)] = resize_coord(i, out_h, h);
    for (int64_t j = 0; j < out_w; ++j) xs[static_cast<size_t>(j)] = resize_coord(j, out_w, w);

    for (int64_t nc = 0; nc < n * c; ++nc) {
        const double* plane = xv.data() + nc * h * w;
        double* oplane = ov.data() + nc * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const LerpCoord& cy = ys[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const LerpCoord& cx = xs[static_cast<size_t>(ox)];
                const double p00 = plane[cy.lo * w + cx.lo];
                const double p01 = plane[cy.lo * w + cx.hi];
                const double p10 = plane[cy.hi * w + cx.lo];
                const double p11 = plane[cy.hi * w + cx.hi];
                // nested lerps keep constant inputs exactly constant
                const double top = p00 + cx.frac * (p01 - p00);
                const double bot = p10 + cx.frac * (p11 - p10);
                oplane[oy * out_w + ox] = top + cy.frac * (bot - top);
            }
        }
    }
    if (tape_wants({&x})) {
        Tensor tx = x, to = out;
        auto ys_s = std::make_shared<std::vector<LerpCoord>>(ys);
        auto xs_s = std::make_shared<std::vector<LerpCoord>>(xs);
        Tape::active()->record([tx, to, ys_s, xs_s, n, c, h, w, out_h, out_w]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (int64_t nc = 0; nc < n * c; ++nc) {
                const double* gplane = g.data() + nc * out_h * out_w;
                double* xplane = gx.data() + nc * h * w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    const LerpCoord& cy = (*ys_s)[static_cast<size_t>(oy)];
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        const LerpCoord& cx = (*xs_s)[static_cast<size_t>(ox)];
                        const double gv = gplane[oy * out_w + ox];
                        xplane[cy.lo * w + cx.lo] += gv * (1.0 - cy.frac) * (1.0 - cx.frac);
                        xplane[cy.lo * w + cx.hi] += gv * (1.0 - cy.frac) * cx.frac;
                        xplane[cy.hi * w + cx.lo] += gv * cy.frac * (1.0 - cx.frac);
                        xplane[cy.hi * w + cx.hi] += gv * cy.frac * cx.frac;
                    }
                }
            }
        });
        out.set_requires_grad(true);
    }
    return out;
}

// ---- parameter records ----

Conv2d::Conv2d(int64_t in_channels, int64_t out_channels, int64_t kernel,
               int64_t stride_, int64_t padding_, bool with_bias)
    : weight(Tensor::zeros({out_channels, in_channels, kernel, kernel}, true)),
      stride(stride_),
      padding(padding_) {
    if (with_bias) bias = Tensor::zeros({out_channels}, true);
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int64_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)) {}

void BatchNorm2d::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.emplace_back(prefix + ".running_mean", running_mean);
    out.emplace_back(prefix + ".running_var", running_var);
}

Linear::Linear(int64_t in_features, int64_t out_features)
    : weight(Tensor::zeros({out_features, in_features}, true)),
      bias(Tensor::zeros({out_features}, true)) {}

Tensor Linear::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != weight.dim(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    Tensor y = matmul(x, transpose2d(weight));
    return add(y, reshape(bias, {1, bias.numel()}));
}

void Linear::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

ConvBNRelu::ConvBNRelu(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t padding)
    : conv(in_channels, out_channels, kernel, 1, padding, /*with_bias=*/false), bn(out_channels) {}

void ConvBNRelu::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    conv.collect_parameters(prefix + ".conv", out);
    bn.collect_parameters(prefix + ".bn", out);
}

void ConvBNRelu::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
    bn.collect_buffers(prefix + ".bn", out);
}

// ---- initialization ----

void init_parameters(Conv2d& layer, Rng& rng) {
    const int64_t fan_in = layer.weight.dim(1) * layer.weight.dim(2) * layer.weight.dim(3);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : layer.weight.data()) v = rng.normal(0.0, stddev);
    if (layer.bias.defined()) {
        for (double& v : layer.bias.data()) v = 0.0;
    }
}

void init_parameters(Linear& layer, Rng& rng) {
    const int64_t fan_in = layer.weight.dim(1);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : layer.weight.data()) v = rng.normal(0.0, stddev);
    for (double& v : layer.bias.data()) v = 0.0;
}

void init_parameters(BatchNorm2d& layer) {
    std::fill(layer.gamma.data().begin(), layer.gamma.data().end(), 1.0);
    std::fill(layer.beta.data().begin(), layer.beta.data().end(), 0.0);
    std::fill(layer.running_mean.data().begin(), layer.running_mean.data().end(), 0.0);
    std::fill(layer.running_var.data().begin(), layer.running_var.data().end(), 1.0);
}

int64_t parameter_count(const std::vector<NamedTensor>& params) {
    int64_t total = 0;
    for (const auto& [name, t] : params) total += t.numel();
    return total;
}

} // namespace attnseg
