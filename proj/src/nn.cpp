#include "trfs/nn.hpp"

#include <algorithm>
#include <cmath>

namespace trfs {

using detail::finish_op;

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
    const std::size_t c = x.extent(x.rank() - 1);
    if (p.gamma.extent(0) != c || p.beta.extent(0) != c)
        throw ShapeMismatch("layer_norm: affine extent mismatch");
    const std::size_t rows = x.size() / c;
    const double eps = p.eps;

    std::vector<double> d(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x.at(r * c + j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double dv = x.at(r * c + j) - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (x.at(r * c + j) - mu) * is;
            (*xhat)[r * c + j] = xh;
            d[r * c + j] = p.gamma.at(j) * xh + p.beta.at(j);
        }
    }

    auto gamma = p.gamma.shared_data();
    return finish_op(
        x.shape(), std::move(d), {&x, &p.gamma, &p.beta},
        [xhat, inv_std, gamma, rows, c](const std::vector<double>& g,
                                        const std::vector<std::vector<double>*>& gi) {
            for (std::size_t r = 0; r < rows; ++r) {
                if (gi[0]) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g[r * c + j] * (*gamma)[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * (*xhat)[r * c + j];
                    }
                    mean_dxh /= static_cast<double>(c);
                    mean_dxh_xh /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g[r * c + j] * (*gamma)[j];
                        (*gi[0])[r * c + j] +=
                            (*inv_std)[r] *
                            (dxh - mean_dxh - (*xhat)[r * c + j] * mean_dxh_xh);
                    }
                }
                for (std::size_t j = 0; j < c; ++j) {
                    if (gi[1]) (*gi[1])[j] += g[r * c + j] * (*xhat)[r * c + j];
                    if (gi[2]) (*gi[2])[j] += g[r * c + j];
                }
            }
        });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
} // namespace

Tensor gelu(const Tensor& x) {
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = x.at(i);
        d[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    auto dx = x.shared_data();
    return finish_op(x.shape(), std::move(d), {&x},
                     [dx](const std::vector<double>& g,
                          const std::vector<std::vector<double>*>& gi) {
                         if (!gi[0]) return;
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             const double v = (*dx)[i];
                             const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                             const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                             (*gi[0])[i] += g[i] * (cdf + v * pdf);
                         }
                     });
}

Tensor conv2d(const Tensor& x, const Conv2DParams& p) {
    if (x.rank() != 3 || p.kernel.rank() != 4)
        throw ShapeMismatch("conv2d: expect HxWxC input, 4-D kernel");
    const std::size_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
    const std::size_t cout = p.kernel.extent(0);
    if (p.kernel.extent(1) != cin)
        throw ShapeMismatch("conv2d: kernel input channels");
    if (p.bias.extent(0) != cout) throw ShapeMismatch("conv2d: bias extent");
    const std::size_t kh = p.kernel.extent(2), kw = p.kernel.extent(3);
    const std::size_t ph = kh / 2, pw = kw / 2;

    std::vector<double> d(h * w * cout);
    const auto& X = x.data();
    const auto& K = p.kernel.data();
    const auto& B = p.bias.data();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = B[o];
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const long sy = static_cast<long>(y + dy) - static_cast<long>(ph);
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    for (std::size_t dxk = 0; dxk < kw; ++dxk) {
                        const long sx =
                            static_cast<long>(xx + dxk) - static_cast<long>(pw);
                        if (sx < 0 || sx >= static_cast<long>(w)) continue;
                        const std::size_t xoff =
                            (static_cast<std::size_t>(sy) * w +
                             static_cast<std::size_t>(sx)) * cin;
                        const std::size_t koff = ((o * cin) * kh + dy) * kw + dxk;
                        for (std::size_t i = 0; i < cin; ++i)
                            acc += X[xoff + i] * K[koff + i * kh * kw];
                    }
                }
                d[(y * w + xx) * cout + o] = acc;
            }

    auto dx = x.shared_data();
    auto dk = p.kernel.shared_data();
    return finish_op(
        {h, w, cout}, std::move(d), {&x, &p.kernel, &p.bias},
        [dx, dk, h, w, cin, cout, kh, kw, ph, pw](
            const std::vector<double>& g,
            const std::vector<std::vector<double>*>& gi) {
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx)
                    for (std::size_t o = 0; o < cout; ++o) {
                        const double go = g[(y * w + xx) * cout + o];
                        if (gi[2]) (*gi[2])[o] += go;
                        for (std::size_t dy = 0; dy < kh; ++dy) {
                            const long sy =
                                static_cast<long>(y + dy) - static_cast<long>(ph);
                            if (sy < 0 || sy >= static_cast<long>(h)) continue;
                            for (std::size_t dxk = 0; dxk < kw; ++dxk) {
                                const long sx = static_cast<long>(xx + dxk) -
                                                static_cast<long>(pw);
                                if (sx < 0 || sx >= static_cast<long>(w)) continue;
                                const std::size_t xoff =
                                    (static_cast<std::size_t>(sy) * w +
                                     static_cast<std::size_t>(sx)) * cin;
                                const std::size_t koff =
                                    ((o * cin) * kh + dy) * kw + dxk;
                                for (std::size_t i = 0; i < cin; ++i) {
                                    if (gi[0])
                                        (*gi[0])[xoff + i] +=
                                            go * (*dk)[koff + i * kh * kw];
                                    if (gi[1])
                                        (*gi[1])[koff + i * kh * kw] +=
                                            go * (*dx)[xoff + i];
                                }
                            }
                        }
                    }
        });
}

namespace {
// bin i over extent n -> [floor(i*n/out), ceil((i+1)*n/out))
inline std::size_t bin_lo(std::size_t i, std::size_t n, std::size_t out) {
    return (i * n) / out;
}
inline std::size_t bin_hi(std::size_t i, std::size_t n, std::size_t out) {
    return ((i + 1) * n + out - 1) / out;
}
} // namespace

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 3) throw ShapeMismatch("adaptive_avg_pool: expect HxWxC");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (out_h < 1 || out_h > h || out_w < 1 || out_w > w)
        throw BadOutputSize("adaptive_avg_pool: bad output size");

    std::vector<double> d(out_h * out_w * c, 0.0);
    const auto& X = x.data();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const std::size_t y0 = bin_lo(oy, h, out_h), y1 = bin_hi(oy, h, out_h);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::size_t x0 = bin_lo(ox, w, out_w), x1 = bin_hi(ox, w, out_w);
            const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t xx = x0; xx < x1; ++xx)
                    for (std::size_t j = 0; j < c; ++j)
                        d[(oy * out_w + ox) * c + j] += X[(y * w + xx) * c + j] * inv;
        }
    }

    return finish_op(
        {out_h, out_w, c}, std::move(d), {&x},
        [h, w, c, out_h, out_w](const std::vector<double>& g,
                                const std::vector<std::vector<double>*>& gi) {
            if (!gi[0]) return;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                const std::size_t y0 = bin_lo(oy, h, out_h),
                                  y1 = bin_hi(oy, h, out_h);
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const std::size_t x0 = bin_lo(ox, w, out_w),
                                      x1 = bin_hi(ox, w, out_w);
                    const double inv =
                        1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
                    for (std::size_t y = y0; y < y1; ++y)
                        for (std::size_t xx = x0; xx < x1; ++xx)
                            for (std::size_t j = 0; j < c; ++j)
                                (*gi[0])[(y * w + xx) * c + j] +=
                                    g[(oy * out_w + ox) * c + j] * inv;
                }
            }
        });
}

namespace {
struct LerpCoef {
    std::size_t i0, i1;
    double w0, w1;
};

LerpCoef lerp_coef(std::size_t dst, std::size_t in, std::size_t out) {
    double s = (static_cast<double>(dst) + 0.5) *
                   (static_cast<double>(in) / static_cast<double>(out)) -
               0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double f = s - static_cast<double>(i0);
    return {i0, i1, 1.0 - f, f};
}
} // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 3) throw ShapeMismatch("bilinear_resize: expect HxWxC");
    if (out_h < 1 || out_w < 1)
        throw BadOutputSize("bilinear_resize: bad output size");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);

    std::vector<double> d(out_h * out_w * c);
    const auto& X = x.data();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const LerpCoef ly = lerp_coef(oy, h, out_h);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const LerpCoef lx = lerp_coef(ox, w, out_w);
            for (std::size_t j = 0; j < c; ++j) {
                d[(oy * out_w + ox) * c + j] =
                    ly.w0 * (lx.w0 * X[(ly.i0 * w + lx.i0) * c + j] +
                             lx.w1 * X[(ly.i0 * w + lx.i1) * c + j]) +
                    ly.w1 * (lx.w0 * X[(ly.i1 * w + lx.i0) * c + j] +
                             lx.w1 * X[(ly.i1 * w + lx.i1) * c + j]);
            }
        }
    }

    return finish_op(
        {out_h, out_w, c}, std::move(d), {&x},
        [h, w, c, out_h, out_w](const std::vector<double>& g,
                                const std::vector<std::vector<double>*>& gi) {
            if (!gi[0]) return;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                const LerpCoef ly = lerp_coef(oy, h, out_h);
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const LerpCoef lx = lerp_coef(ox, w, out_w);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double go = g[(oy * out_w + ox) * c + j];
                        (*gi[0])[(ly.i0 * w + lx.i0) * c + j] += go * ly.w0 * lx.w0;
                        (*gi[0])[(ly.i0 * w + lx.i1) * c + j] += go * ly.w0 * lx.w1;
                        (*gi[0])[(ly.i1 * w + lx.i0) * c + j] += go * ly.w1 * lx.w0;
                        (*gi[0])[(ly.i1 * w + lx.i1) * c + j] += go * ly.w1 * lx.w1;
                    }
                }
            }
        });
}

Tensor mhsa(const Tensor& x, const MHSAParams& p) {
    if (x.rank() != 2) throw ShapeMismatch("mhsa: expect [N, C]");
    const std::size_t c = x.extent(1);
    if (p.heads == 0 || c % p.heads != 0)
        throw HeadsDontDivide("mhsa: C not divisible by heads");
    const std::size_t dh = c / p.heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    const Tensor q = linear(x, p.wq.weight, p.wq.bias);
    const Tensor k = linear(x, p.wk.weight, p.wk.bias);
    const Tensor v = linear(x, p.wv.weight, p.wv.bias);

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(p.heads);
    for (std::size_t hd = 0; hd < p.heads; ++hd) {
        const Tensor qh = slice_lastdim(q, hd * dh, dh);
        const Tensor kh = slice_lastdim(k, hd * dh, dh);
        const Tensor vh = slice_lastdim(v, hd * dh, dh);
        const Tensor scores = scale(matmul(qh, transpose2d(kh)), scl);
        const Tensor attn = softmax_lastdim(scores);
        head_outputs.push_back(matmul(attn, vh));
    }
    const Tensor merged =
        p.heads == 1 ? head_outputs[0] : concat_lastdim(head_outputs);
    return linear(merged, p.wo.weight, p.wo.bias);
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p,
                         bool post_norm) {
    if (post_norm) {
        const Tensor h = layer_norm(add(x, mhsa(x, p.attn)), p.ln1);
        const Tensor m =
            linear(gelu(linear(h, p.mlp_in.weight, p.mlp_in.bias)),
                   p.mlp_out.weight, p.mlp_out.bias);
        return layer_norm(add(h, m), p.ln2);
    }
    const Tensor h = add(x, mhsa(layer_norm(x, p.ln1), p.attn));
    const Tensor n = layer_norm(h, p.ln2);
    const Tensor m = linear(gelu(linear(n, p.mlp_in.weight, p.mlp_in.bias)),
                            p.mlp_out.weight, p.mlp_out.bias);
    return add(h, m);
}

namespace {
Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                      std::size_t fan_out, Rng& rng, Precision prec) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> d(shape_product(shape));
    for (double& v : d) v = rng.uniform(-a, a);
    return Tensor(std::move(shape), std::move(d), prec);
}
} // namespace

LinearParams init_linear(std::size_t out, std::size_t in, Rng& rng,
                         Precision prec) {
    return {glorot_uniform({out, in}, in, out, rng, prec),
            Tensor::zeros({out}, prec)};
}

Conv2DParams init_conv2d(std::size_t out_ch, std::size_t in_ch, std::size_t kh,
                         std::size_t kw, Rng& rng, Precision prec) {
    return {glorot_uniform({out_ch, in_ch, kh, kw}, in_ch * kh * kw,
                           out_ch * kh * kw, rng, prec),
            Tensor::zeros({out_ch}, prec)};
}

LayerNormParams init_layer_norm(std::size_t c, Precision prec) {
    return {Tensor::full({c}, 1.0, prec), Tensor::zeros({c}, prec), 1e-5};
}

LayerNormParams unit_layer_norm(std::size_t c) {
    return {Tensor::full({c}, 1.0), Tensor::zeros({c}), 1e-5};
}

MHSAParams init_mhsa(std::size_t c, std::size_t heads, Rng& rng, Precision prec) {
    if (heads == 0 || c % heads != 0)
        throw HeadsDontDivide("init_mhsa: C not divisible by heads");
    return {init_linear(c, c, rng, prec), init_linear(c, c, rng, prec),
            init_linear(c, c, rng, prec), init_linear(c, c, rng, prec), heads};
}

TransformerBlockParams init_transformer_block(std::size_t c, std::size_t heads,
                                              std::size_t mlp_ratio, Rng& rng,
                                              Precision prec) {
    return {init_layer_norm(c, prec),
            init_layer_norm(c, prec),
            init_mhsa(c, heads, rng, prec),
            init_linear(mlp_ratio * c, c, rng, prec),
            init_linear(c, mlp_ratio * c, rng, prec)};
}

} // namespace trfs
