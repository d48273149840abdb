#include "ds2net/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ds2net {
namespace {

Tape& tape_of(std::initializer_list<Var> vars) {
    Tape* tape = vars.begin()->tape;
    for (const Var& v : vars)
        if (v.tape == nullptr || v.tape != tape) throw std::logic_error("op inputs live on different tapes");
    return *tape;
}

// ---------------------------------------------------------------------------
// convolution

// Sum of a[i] * b[i] (or of a[i] when b is null) with four running partial
// sums, which keeps the loop from serialising on one accumulator.
double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    if (b) {
        for (; i + 4 <= n; i += 4) {
            s0 += a[i] * b[i];
            s1 += a[i + 1] * b[i + 1];
            s2 += a[i + 2] * b[i + 2];
            s3 += a[i + 3] * b[i + 3];
        }
        for (; i < n; ++i) s0 += a[i] * b[i];
    } else {
        for (; i + 4 <= n; i += 4) {
            s0 += a[i];
            s1 += a[i + 1];
            s2 += a[i + 2];
            s3 += a[i + 3];
        }
        for (; i < n; ++i) s0 += a[i];
    }
    return (s0 + s1) + (s2 + s3);
}

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
    std::size_t rows() const { return cin * k * k; }
    std::size_t cols() const { return ho * wo; }
};

// Column buffers hold one row per (c, kh, kw); `ld` is the row stride, so a
// batch can be laid out side by side.
void im2col(const double* x, const ConvGeometry& g, double* col, std::size_t ld) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.cin; ++c) {
        const double* plane = x + c * g.h * g.w;
        for (std::size_t kh = 0; kh < g.k; ++kh) {
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                double* row = col + ((c * g.k + kh) * g.k + kw) * ld;
                for (std::size_t oh = 0; oh < g.ho; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
                    double* dst = row + oh * g.wo;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(ih) * g.w;
                    for (std::size_t ow = 0; ow < g.wo; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - pad;
                        dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[iw];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx, std::size_t ld) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.cin; ++c) {
        double* plane = dx + c * g.h * g.w;
        for (std::size_t kh = 0; kh < g.k; ++kh) {
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                const double* row = col + ((c * g.k + kh) * g.k + kw) * ld;
                for (std::size_t oh = 0; oh < g.ho; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    double* dst = plane + static_cast<std::size_t>(ih) * g.w;
                    const double* src = row + oh * g.wo;
                    for (std::size_t ow = 0; ow < g.wo; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - pad;
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                           std::size_t padding) {
    const Dims4 x = dims4(input, "conv2d input");
    const Dims4 w = dims4(kernel, "conv2d kernel");
    require(w.c == x.c, "conv2d: input channels disagree with kernel: input " + shape_string(input.shape()) +
                            " vs kernel " + shape_string(kernel.shape()));
    require(w.h == w.w, "conv2d: kernel must be square, got " + shape_string(kernel.shape()));
    require(bias.rank() == 1 && bias.dim(0) == w.n,
            "conv2d: bias " + shape_string(bias.shape()) + " does not match kernel " + shape_string(kernel.shape()));
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(x.h + 2 * padding >= w.h && x.w + 2 * padding >= w.w,
            "conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                shape_string(input.shape()));
    ConvGeometry g{x.n, x.c, x.h, x.w, w.n, w.h, stride, padding, 0, 0};
    g.ho = (x.h + 2 * padding - w.h) / stride + 1;
    g.wo = (x.w + 2 * padding - w.w) / stride + 1;
    return g;
}

// ---------------------------------------------------------------------------
// bilinear sampling table for one axis

struct Tap {
    std::size_t lo, hi;
    double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

// ---------------------------------------------------------------------------
// channel broadcasting for add / mul

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (same_shape(a, b)) return a.shape();
    const bool ok = a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                    a.dim(3) == b.dim(3) && (a.dim(1) == 1 || b.dim(1) == 1);
    require(ok, std::string(op) + ": cannot broadcast " + shape_string(a.shape()) + " with " +
                    shape_string(b.shape()) + " (only a size-1 channel axis broadcasts)");
    Shape s = a.shape();
    s[1] = std::max(a.dim(1), b.dim(1));
    return s;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Tensor& a, const Tensor& b, const Shape& out, F&& f) {
    if (same_shape(a, b)) {
        for (std::size_t i = 0; i < a.numel(); ++i) f(i, i, i);
        return;
    }
    const std::size_t n = out[0], c = out[1], plane = out[2] * out[3];
    const std::size_t ca = a.dim(1), cb = b.dim(1);
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ic = 0; ic < c; ++ic) {
            const std::size_t o = (in * c + ic) * plane;
            const std::size_t ia = (in * ca + (ca == 1 ? 0 : ic)) * plane;
            const std::size_t ib = (in * cb + (cb == 1 ? 0 : ic)) * plane;
            for (std::size_t p = 0; p < plane; ++p) f(o + p, ia + p, ib + p);
        }
}

// Horizontal then vertical window sums on each plane, zero outside.
void box_sum(const double* src, double* dst, std::size_t h, std::size_t w, std::size_t radius, double* tmp) {
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t x0 = x >= radius ? x - radius : 0, x1 = std::min(w - 1, x + radius);
            double s = 0.0;
            for (std::size_t xx = x0; xx <= x1; ++xx) s += src[y * w + xx];
            tmp[y * w + x] = s;
        }
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t y0 = y >= radius ? y - radius : 0, y1 = std::min(h - 1, y + radius);
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::size_t yy = y0; yy <= y1; ++yy) s += tmp[yy * w + x];
            dst[y * w + x] = s;
        }
    }
}

std::vector<double> tap_counts(std::size_t len, std::size_t radius) {
    std::vector<double> counts(len);
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t lo = i >= radius ? i - radius : 0, hi = std::min(len - 1, i + radius);
        counts[i] = static_cast<double>(hi - lo + 1);
    }
    return counts;
}

} // namespace

// ---------------------------------------------------------------------------

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
    Tape& tape = tape_of({input, kernel, bias});
    const Tensor& x = input.value();
    const Tensor& w = kernel.value();
    const Tensor& b = bias.value();
    const ConvGeometry g = conv_geometry(x, w, b, stride, padding);

    Tensor out({g.n, g.cout, g.ho, g.wo});
    const std::size_t rows = g.rows(), cols = g.cols(), ld = g.n * cols;
    std::vector<double> col(rows * ld), y(g.cout * ld);
    for (std::size_t n = 0; n < g.n; ++n) im2col(x.data().data() + n * g.cin * g.h * g.w, g, col.data() + n * cols, ld);
    for (std::size_t co = 0; co < g.cout; ++co) {
        double* yrow = y.data() + co * ld;
        std::fill(yrow, yrow + ld, b[co]);
        const double* wrow = w.data().data() + co * rows;
        for (std::size_t r = 0; r < rows; ++r) {
            const double wv = wrow[r];
            const double* crow = col.data() + r * ld;
            for (std::size_t p = 0; p < ld; ++p) yrow[p] += wv * crow[p];
        }
    }
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t co = 0; co < g.cout; ++co)
            std::copy_n(y.data() + co * ld + n * cols, cols, out.data().data() + (n * g.cout + co) * cols);

    return tape.record("conv2d", std::move(out), {input, kernel, bias}, [g](BackwardContext& ctx) {
        const Tensor& x = *ctx.inputs[0];
        const Tensor& w = *ctx.inputs[1];
        const Tensor& gy = ctx.grad_output;
        Tensor* gx = ctx.input_grads[0];
        Tensor* gw = ctx.input_grads[1];
        Tensor* gb = ctx.input_grads[2];
        const std::size_t rows = g.rows(), cols = g.cols(), ld = g.n * cols;
        std::vector<double> grad(g.cout * ld);
        for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t co = 0; co < g.cout; ++co)
                std::copy_n(gy.data().data() + (n * g.cout + co) * cols, cols, grad.data() + co * ld + n * cols);
        if (gb) {
            for (std::size_t co = 0; co < g.cout; ++co) (*gb)[co] += dot(grad.data() + co * ld, nullptr, ld);
        }
        if (gw) {
            std::vector<double> col(rows * ld);
            for (std::size_t n = 0; n < g.n; ++n)
                im2col(x.data().data() + n * g.cin * g.h * g.w, g, col.data() + n * cols, ld);
            for (std::size_t co = 0; co < g.cout; ++co) {
                double* gwrow = gw->data().data() + co * rows;
                for (std::size_t r = 0; r < rows; ++r) gwrow[r] += dot(grad.data() + co * ld, col.data() + r * ld, ld);
            }
        }
        if (gx) {
            std::vector<double> dcol(rows * ld, 0.0);
            for (std::size_t co = 0; co < g.cout; ++co) {
                const double* grow = grad.data() + co * ld;
                const double* wrow = w.data().data() + co * rows;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double wv = wrow[r];
                    double* drow = dcol.data() + r * ld;
                    for (std::size_t p = 0; p < ld; ++p) drow[p] += wv * grow[p];
                }
            }
            for (std::size_t n = 0; n < g.n; ++n)
                col2im_add(dcol.data() + n * cols, g, gx->data().data() + n * g.cin * g.h * g.w, ld);
        }
    });
}

Var channel_max(Var input) {
    Tape& tape = tape_of({input});
    const Tensor& x = input.value();
    const Dims4 d = dims4(x, "channel_max");
    Tensor out({d.n, 1, d.h, d.w});
    const std::size_t plane = d.plane();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            double best = x[n * d.c * plane + p];
            for (std::size_t c = 1; c < d.c; ++c) best = std::max(best, x[(n * d.c + c) * plane + p]);
            out[n * plane + p] = best;
        }
    return tape.record("channel_max", std::move(out), {input}, [d](BackwardContext& ctx) {
        const Tensor& x = *ctx.inputs[0];
        Tensor& gx = *ctx.input_grads[0];
        const std::size_t plane = d.plane();
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t p = 0; p < plane; ++p) {
                std::size_t arg = 0;
                double best = x[n * d.c * plane + p];
                for (std::size_t c = 1; c < d.c; ++c) {
                    const double v = x[(n * d.c + c) * plane + p];
                    if (v > best) best = v, arg = c;
                }
                gx[(n * d.c + arg) * plane + p] += ctx.grad_output[n * plane + p];
            }
    });
}

Var channel_mean(Var input) {
    Tape& tape = tape_of({input});
    const Tensor& x = input.value();
    const Dims4 d = dims4(x, "channel_mean");
    Tensor out({d.n, 1, d.h, d.w});
    const std::size_t plane = d.plane();
    const double inv = 1.0 / static_cast<double>(d.c);
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            double s = 0.0;
            for (std::size_t c = 0; c < d.c; ++c) s += x[(n * d.c + c) * plane + p];
            out[n * plane + p] = s * inv;
        }
    return tape.record("channel_mean", std::move(out), {input}, [d, inv](BackwardContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        const std::size_t plane = d.plane();
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t c = 0; c < d.c; ++c)
                for (std::size_t p = 0; p < plane; ++p)
                    gx[(n * d.c + c) * plane + p] += ctx.grad_output[n * plane + p] * inv;
    });
}

Var global_avg_pool(Var input) {
    Tape& tape = tape_of({input});
    const Tensor& x = input.value();
    const Dims4 d = dims4(x, "global_avg_pool");
    Tensor out({d.n, d.c, 1, 1});
    const std::size_t plane = d.plane();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += x[nc * plane + p];
        out[nc] = s * inv;
    }
    return tape.record("global_avg_pool", std::move(out), {input}, [d, inv](BackwardContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        const std::size_t plane = d.plane();
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
            for (std::size_t p = 0; p < plane; ++p) gx[nc * plane + p] += ctx.grad_output[nc] * inv;
    });
}

Tensor avg_pool_same(const Tensor& input, std::size_t window) {
    const Dims4 d = dims4(input, "avg_pool_same");
    require(window % 2 == 1, "avg_pool_same: window must be odd, got " + std::to_string(window));
    const std::size_t radius = window / 2, plane = d.plane();
    const auto ch = tap_counts(d.h, radius), cw = tap_counts(d.w, radius);
    Tensor out(input.shape());
    std::vector<double> tmp(plane);
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        box_sum(input.data().data() + nc * plane, out.data().data() + nc * plane, d.h, d.w, radius, tmp.data());
        for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t x = 0; x < d.w; ++x) out[nc * plane + y * d.w + x] /= ch[y] * cw[x];
    }
    return out;
}

Var avg_pool_same(Var input, std::size_t window) {
    Tape& tape = tape_of({input});
    Tensor out = avg_pool_same(input.value(), window);
    const Dims4 d = dims4(out, "avg_pool_same");
    return tape.record("avg_pool_same", std::move(out), {input}, [d, window](BackwardContext& ctx) {
        const std::size_t radius = window / 2, plane = d.plane();
        const auto ch = tap_counts(d.h, radius), cw = tap_counts(d.w, radius);
        std::vector<double> scaled(plane), summed(plane), tmp(plane);
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
            for (std::size_t y = 0; y < d.h; ++y)
                for (std::size_t x = 0; x < d.w; ++x)
                    scaled[y * d.w + x] = ctx.grad_output[nc * plane + y * d.w + x] / (ch[y] * cw[x]);
            box_sum(scaled.data(), summed.data(), d.h, d.w, radius, tmp.data());
            for (std::size_t p = 0; p < plane; ++p) gx[nc * plane + p] += summed[p];
        }
    });
}

Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    const Dims4 d = dims4(input, "upsample_bilinear");
    require(out_h >= d.h && out_w >= d.w, "upsample_bilinear: output " + std::to_string(out_h) + "x" +
                                              std::to_string(out_w) + " smaller than input " +
                                              shape_string(input.shape()));
    const auto th = bilinear_taps(d.h, out_h), tw = bilinear_taps(d.w, out_w);
    Tensor out({d.n, d.c, out_h, out_w});
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        const double* src = input.data().data() + nc * d.plane();
        double* dst = out.data().data() + nc * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const Tap& ty = th[y];
            const double* r0 = src + ty.lo * d.w;
            const double* r1 = src + ty.hi * d.w;
            for (std::size_t x = 0; x < out_w; ++x) {
                const Tap& tx = tw[x];
                const double top = (1.0 - tx.frac) * r0[tx.lo] + tx.frac * r0[tx.hi];
                const double bot = (1.0 - tx.frac) * r1[tx.lo] + tx.frac * r1[tx.hi];
                dst[y * out_w + x] = (1.0 - ty.frac) * top + ty.frac * bot;
            }
        }
    }
    return out;
}

Var upsample_bilinear(Var input, std::size_t out_h, std::size_t out_w) {
    Tape& tape = tape_of({input});
    const Dims4 d = dims4(input.value(), "upsample_bilinear");
    Tensor out = upsample_bilinear(input.value(), out_h, out_w);
    return tape.record("upsample_bilinear", std::move(out), {input}, [d, out_h, out_w](BackwardContext& ctx) {
        const auto th = bilinear_taps(d.h, out_h), tw = bilinear_taps(d.w, out_w);
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
            double* g = gx.data().data() + nc * d.plane();
            const double* go = ctx.grad_output.data().data() + nc * out_h * out_w;
            for (std::size_t y = 0; y < out_h; ++y) {
                const Tap& ty = th[y];
                for (std::size_t x = 0; x < out_w; ++x) {
                    const Tap& tx = tw[x];
                    const double v = go[y * out_w + x];
                    const double top = (1.0 - ty.frac) * v, bot = ty.frac * v;
                    g[ty.lo * d.w + tx.lo] += (1.0 - tx.frac) * top;
                    g[ty.lo * d.w + tx.hi] += tx.frac * top;
                    g[ty.hi * d.w + tx.lo] += (1.0 - tx.frac) * bot;
                    g[ty.hi * d.w + tx.hi] += tx.frac * bot;
                }
            }
        }
    });
}

Var add(Var a, Var b) {
    Tape& tape = tape_of({a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Shape shape = broadcast_shape(av, bv, "add");
    Tensor out(shape);
    for_each_broadcast(av, bv, shape, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] + bv[ib]; });
    return tape.record("add", std::move(out), {a, b}, [shape](BackwardContext& ctx) {
        const Tensor& av = *ctx.inputs[0];
        const Tensor& bv = *ctx.inputs[1];
        Tensor* ga = ctx.input_grads[0];
        Tensor* gb = ctx.input_grads[1];
        for_each_broadcast(av, bv, shape, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            if (ga) (*ga)[ia] += ctx.grad_output[o];
            if (gb) (*gb)[ib] += ctx.grad_output[o];
        });
    });
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of({a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Shape shape = broadcast_shape(av, bv, "mul");
    Tensor out(shape);
    for_each_broadcast(av, bv, shape, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] * bv[ib]; });
    return tape.record("mul", std::move(out), {a, b}, [shape](BackwardContext& ctx) {
        const Tensor& av = *ctx.inputs[0];
        const Tensor& bv = *ctx.inputs[1];
        Tensor* ga = ctx.input_grads[0];
        Tensor* gb = ctx.input_grads[1];
        for_each_broadcast(av, bv, shape, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            if (ga) (*ga)[ia] += ctx.grad_output[o] * bv[ib];
            if (gb) (*gb)[ib] += ctx.grad_output[o] * av[ia];
        });
    });
}

Var scale_channels(Var x, Var s) {
    Tape& tape = tape_of({x, s});
    const Tensor& xv = x.value();
    const Dims4 d = dims4(xv, "scale_channels input");
    const Dims4 ds = dims4(s.value(), "scale_channels scale");
    require(ds.n == d.n && ds.c == d.c && ds.h == 1 && ds.w == 1,
            "scale_channels: scale " + shape_string(s.value().shape()) + " does not match input " +
                shape_string(xv.shape()));
    Tensor out(xv.shape());
    const std::size_t plane = d.plane();
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        const double sv = s.value()[nc];
        for (std::size_t p = 0; p < plane; ++p) out[nc * plane + p] = xv[nc * plane + p] * sv;
    }
    return tape.record("scale_channels", std::move(out), {x, s}, [d](BackwardContext& ctx) {
        const Tensor& xv = *ctx.inputs[0];
        const Tensor& sv = *ctx.inputs[1];
        Tensor* gx = ctx.input_grads[0];
        Tensor* gs = ctx.input_grads[1];
        const std::size_t plane = d.plane();
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
            double acc = 0.0;
            for (std::size_t p = 0; p < plane; ++p) {
                const double g = ctx.grad_output[nc * plane + p];
                if (gx) (*gx)[nc * plane + p] += g * sv[nc];
                acc += g * xv[nc * plane + p];
            }
            if (gs) (*gs)[nc] += acc;
        }
    });
}

Var concat_channels(Var a, Var b) {
    Tape& tape = tape_of({a, b});
    const Dims4 da = dims4(a.value(), "concat_channels");
    const Dims4 db = dims4(b.value(), "concat_channels");
    require(da.n == db.n && da.h == db.h && da.w == db.w, "concat_channels: incompatible shapes " +
                                                              shape_string(a.value().shape()) + " and " +
                                                              shape_string(b.value().shape()));
    const std::size_t plane = da.plane(), c = da.c + db.c;
    Tensor out({da.n, c, da.h, da.w});
    for (std::size_t n = 0; n < da.n; ++n) {
        std::copy_n(a.value().data().data() + n * da.c * plane, da.c * plane, out.data().data() + n * c * plane);
        std::copy_n(b.value().data().data() + n * db.c * plane, db.c * plane,
                    out.data().data() + (n * c + da.c) * plane);
    }
    return tape.record("concat_channels", std::move(out), {a, b}, [da, db](BackwardContext& ctx) {
        const std::size_t plane = da.plane(), c = da.c + db.c;
        for (std::size_t n = 0; n < da.n; ++n) {
            const double* g = ctx.grad_output.data().data() + n * c * plane;
            if (Tensor* ga = ctx.input_grads[0])
                for (std::size_t i = 0; i < da.c * plane; ++i) (*ga)[n * da.c * plane + i] += g[i];
            if (Tensor* gb = ctx.input_grads[1])
                for (std::size_t i = 0; i < db.c * plane; ++i) (*gb)[n * db.c * plane + i] += g[da.c * plane + i];
        }
    });
}

Var relu(Var x) {
    Tape& tape = tape_of({x});
    Tensor out = x.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return tape.record("relu", std::move(out), {x}, [](BackwardContext& ctx) {
        const Tensor& xv = *ctx.inputs[0];
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t i = 0; i < xv.numel(); ++i)
            if (xv[i] > 0.0) gx[i] += ctx.grad_output[i];
    });
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) v = sigmoid(v);
    return out;
}

Var sigmoid(Var x) {
    Tape& tape = tape_of({x});
    return tape.record("sigmoid", sigmoid(x.value()), {x}, [](BackwardContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            const double y = ctx.output[i];
            gx[i] += ctx.grad_output[i] * y * (1.0 - y);
        }
    });
}

Var conv1d_channels(Var input, Var kernel) {
    Tape& tape = tape_of({input, kernel});
    const Dims4 d = dims4(input.value(), "conv1d_channels");
    require(d.h == 1 && d.w == 1, "conv1d_channels: expected [N,C,1,1], got " + shape_string(input.value().shape()));
    const Tensor& k = kernel.value();
    require(k.rank() == 1 && k.numel() % 2 == 1,
            "conv1d_channels: kernel must be 1-D with odd length, got " + shape_string(k.shape()));
    const auto radius = static_cast<std::ptrdiff_t>(k.numel() / 2);
    const auto channels = static_cast<std::ptrdiff_t>(d.c);
    Tensor out(input.value().shape());
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::ptrdiff_t c = 0; c < channels; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < k.numel(); ++j) {
                const std::ptrdiff_t src = c + static_cast<std::ptrdiff_t>(j) - radius;
                if (src >= 0 && src < channels) s += k[j] * input.value()[n * d.c + static_cast<std::size_t>(src)];
            }
            out[n * d.c + static_cast<std::size_t>(c)] = s;
        }
    return tape.record("conv1d_channels", std::move(out), {input, kernel}, [d, radius](BackwardContext& ctx) {
        const Tensor& x = *ctx.inputs[0];
        const Tensor& k = *ctx.inputs[1];
        Tensor* gx = ctx.input_grads[0];
        Tensor* gk = ctx.input_grads[1];
        const auto channels = static_cast<std::ptrdiff_t>(d.c);
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::ptrdiff_t c = 0; c < channels; ++c) {
                const double g = ctx.grad_output[n * d.c + static_cast<std::size_t>(c)];
                for (std::size_t j = 0; j < k.numel(); ++j) {
                    const std::ptrdiff_t src = c + static_cast<std::ptrdiff_t>(j) - radius;
                    if (src < 0 || src >= channels) continue;
                    const std::size_t si = n * d.c + static_cast<std::size_t>(src);
                    if (gx) (*gx)[si] += g * k[j];
                    if (gk) (*gk)[j] += g * x[si];
                }
            }
    });
}

Var sum(Var x) {
    Tape& tape = tape_of({x});
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return tape.record("sum", Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        const double g = ctx.grad_output[0];
        for (double& v : gx.data()) v += g;
    });
}

Var scale(Var x, double factor) {
    Tape& tape = tape_of({x});
    Tensor out = x.value();
    for (double& v : out.data()) v *= factor;
    return tape.record("scale", std::move(out), {x}, [factor](BackwardContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += ctx.grad_output[i] * factor;
    });
}

} // namespace ds2net
