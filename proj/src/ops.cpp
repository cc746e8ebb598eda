#include "tsgb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tsgb/error.hpp"

namespace tsgb {

namespace {

std::size_t out_extent_axis(std::size_t in, std::size_t pad, std::size_t kernel, std::size_t stride,
                            const char* axis) {
    if (stride == 0 || kernel == 0) {
        throw ShapeError(std::string("zero kernel or stride on ") + axis + " axis");
    }
    if (in + 2 * pad < kernel) {
        throw ShapeError(std::string(axis) + " extent " + std::to_string(in) + " with padding " +
                         std::to_string(pad) + " is smaller than kernel " + std::to_string(kernel));
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
    }
}

void check_conv_operands(const Tensor& input, const Tensor& weights, const ConvGeometry& geom) {
    const Shape& ws = weights.shape();
    if (ws.n != geom.out_channels || ws.c != geom.in_channels || ws.h != geom.kernel_h || ws.w != geom.kernel_w) {
        throw ShapeError("conv weights " + ws.str() + " do not match geometry (N=" +
                         std::to_string(geom.out_channels) + ", M=" + std::to_string(geom.in_channels) +
                         ", K=" + std::to_string(geom.kernel_h) + "x" + std::to_string(geom.kernel_w) + ")");
    }
    if (input.shape().c != geom.in_channels) {
        throw ShapeError("conv input channel extent " + std::to_string(input.shape().c) + " != M=" +
                         std::to_string(geom.in_channels));
    }
}

// Range of output positions o whose window (o*s - p + k) covers input i, for one axis.
// Visits each (o, k) with o*s + k == i + p.
template <typename Fn>
inline void for_each_cover(std::size_t i, std::size_t pad, std::size_t kernel, std::size_t stride,
                           std::size_t out, Fn&& fn) {
    const std::size_t ip = i + pad;
    for (std::size_t k = 0; k < kernel && k <= ip; ++k) {
        const std::size_t num = ip - k;
        if (num % stride != 0) continue;
        const std::size_t o = num / stride;
        if (o < out) fn(o, k);
    }
}

}  // namespace

Extent2 ConvGeometry::output_extent(Extent2 in) const {
    return {out_extent_axis(in.h, pad_h, kernel_h, stride_h, "height"),
            out_extent_axis(in.w, pad_w, kernel_w, stride_w, "width")};
}

Extent2 PoolGeometry::output_extent(Extent2 in) const {
    return {out_extent_axis(in.h, pad_h, kernel_h, stride_h, "height"),
            out_extent_axis(in.w, pad_w, kernel_w, stride_w, "width")};
}

ConvGeometry PoolGeometry::as_conv(std::size_t channels) const {
    return {channels, channels, kernel_h, kernel_w, stride_h, stride_w, pad_h, pad_w};
}

Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
              const ConvGeometry& geom) {
    check_conv_operands(input, weights, geom);
    if (!bias.empty() && bias.size() != geom.out_channels) {
        throw ShapeError("conv bias length " + std::to_string(bias.size()) + " != N=" +
                         std::to_string(geom.out_channels));
    }
    const Shape& is = input.shape();
    const Extent2 oe = geom.output_extent({is.h, is.w});
    Tensor out(Shape{is.n, geom.out_channels, oe.h, oe.w});

    for (std::size_t b = 0; b < is.n; ++b) {
        for (std::size_t n = 0; n < geom.out_channels; ++n) {
            const float bv = bias.empty() ? 0.0f : bias[n];
            for (std::size_t oh = 0; oh < oe.h; ++oh) {
                for (std::size_t ow = 0; ow < oe.w; ++ow) {
                    float acc = bv;
                    for (std::size_t m = 0; m < geom.in_channels; ++m) {
                        for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geom.stride_h + kh) -
                                                      static_cast<std::ptrdiff_t>(geom.pad_h);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.h)) continue;
                            for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geom.stride_w + kw) -
                                                          static_cast<std::ptrdiff_t>(geom.pad_w);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.w)) continue;
                                acc += weights.at(n, m, kh, kw) *
                                       input.at(b, m, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
                            }
                        }
                    }
                    out.at(b, n, oh, ow) = acc;
                }
            }
        }
    }
    return out;
}

Tensor conv2d_transposed(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom,
                         Extent2 out_extent) {
    const Shape& ks = kernel.shape();
    if (ks.n != geom.out_channels || ks.c != geom.in_channels || ks.h != geom.kernel_h || ks.w != geom.kernel_w) {
        throw ShapeError("transposed-conv kernel " + ks.str() + " does not match geometry");
    }
    const Shape& is = input.shape();
    if (is.c != geom.out_channels) {
        throw ShapeError("transposed-conv input channel extent " + std::to_string(is.c) + " != N=" +
                         std::to_string(geom.out_channels));
    }
    const Extent2 fwd = geom.output_extent(out_extent);
    if (fwd.h != is.h || fwd.w != is.w) {
        throw ShapeError("transposed-conv input extent " + std::to_string(is.h) + "x" + std::to_string(is.w) +
                         " is not the forward output of " + std::to_string(out_extent.h) + "x" +
                         std::to_string(out_extent.w) + " (expected " + std::to_string(fwd.h) + "x" +
                         std::to_string(fwd.w) + ")");
    }
    Tensor out(Shape{is.n, geom.in_channels, out_extent.h, out_extent.w});
    for (std::size_t b = 0; b < is.n; ++b) {
        for (std::size_t n = 0; n < geom.out_channels; ++n) {
            for (std::size_t oh = 0; oh < is.h; ++oh) {
                for (std::size_t ow = 0; ow < is.w; ++ow) {
                    const float g = input.at(b, n, oh, ow);
                    if (g == 0.0f) continue;
                    for (std::size_t m = 0; m < geom.in_channels; ++m) {
                        for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geom.stride_h + kh) -
                                                      static_cast<std::ptrdiff_t>(geom.pad_h);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(out_extent.h)) continue;
                            for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geom.stride_w + kw) -
                                                          static_cast<std::ptrdiff_t>(geom.pad_w);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(out_extent.w)) continue;
                                out.at(b, m, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) +=
                                    kernel.at(n, m, kh, kw) * g;
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor box_sum(const Tensor& plane, const ConvGeometry& geom) {
    const Shape& s = plane.shape();
    if (s.c != 1) throw ShapeError("box_sum expects a single-channel plane, got " + s.str());
    const Extent2 oe = geom.output_extent({s.h, s.w});
    Tensor out(Shape{s.n, 1, oe.h, oe.w});
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t oh = 0; oh < oe.h; ++oh) {
            const std::ptrdiff_t h0 = static_cast<std::ptrdiff_t>(oh * geom.stride_h) -
                                      static_cast<std::ptrdiff_t>(geom.pad_h);
            const std::size_t hs = static_cast<std::size_t>(std::max<std::ptrdiff_t>(h0, 0));
            const std::size_t he = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
                h0 + static_cast<std::ptrdiff_t>(geom.kernel_h), static_cast<std::ptrdiff_t>(s.h)));
            for (std::size_t ow = 0; ow < oe.w; ++ow) {
                const std::ptrdiff_t w0 = static_cast<std::ptrdiff_t>(ow * geom.stride_w) -
                                          static_cast<std::ptrdiff_t>(geom.pad_w);
                const std::size_t ws = static_cast<std::size_t>(std::max<std::ptrdiff_t>(w0, 0));
                const std::size_t we = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
                    w0 + static_cast<std::ptrdiff_t>(geom.kernel_w), static_cast<std::ptrdiff_t>(s.w)));
                float acc = 0.0f;
                for (std::size_t ih = hs; ih < he; ++ih) {
                    for (std::size_t iw = ws; iw < we; ++iw) acc += plane.at(b, 0, ih, iw);
                }
                out.at(b, 0, oh, ow) = acc;
            }
        }
    }
    return out;
}

Tensor box_scatter(const Tensor& plane, const ConvGeometry& geom, Extent2 out_extent) {
    const Shape& s = plane.shape();
    if (s.c != 1) throw ShapeError("box_scatter expects a single-channel plane, got " + s.str());
    const Extent2 fwd = geom.output_extent(out_extent);
    if (fwd.h != s.h || fwd.w != s.w) {
        throw ShapeError("box_scatter input " + s.str() + " is not the forward output of " +
                         std::to_string(out_extent.h) + "x" + std::to_string(out_extent.w));
    }
    Tensor out(Shape{s.n, 1, out_extent.h, out_extent.w});
    // Gather form: each input cell sums the outputs whose window covers it.
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t ih = 0; ih < out_extent.h; ++ih) {
            for (std::size_t iw = 0; iw < out_extent.w; ++iw) {
                float acc = 0.0f;
                for_each_cover(ih, geom.pad_h, geom.kernel_h, geom.stride_h, s.h, [&](std::size_t oh, std::size_t) {
                    for_each_cover(iw, geom.pad_w, geom.kernel_w, geom.stride_w, s.w,
                                   [&](std::size_t ow, std::size_t) { acc += plane.at(b, 0, oh, ow); });
                });
                out.at(b, 0, ih, iw) = acc;
            }
        }
    }
    return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op, float eps, GuardCounter* counter) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const bool broadcast = bs.c == 1 && as.c != 1 && bs.n == as.n && bs.h == as.h && bs.w == as.w;
    if (!broadcast && as != bs) {
        throw ShapeError("elementwise operands " + as.str() + " and " + bs.str() + " differ");
    }
    Tensor out(as);
    const std::size_t plane = as.plane();
    for (std::size_t i = 0; i < a.numel(); ++i) {
        std::size_t j = i;
        if (broadcast) {
            const std::size_t nb = i / (as.c * plane);
            j = nb * plane + i % plane;
        }
        const float x = a[i];
        const float y = b[j];
        switch (op) {
            case BinaryOp::mul: out[i] = x * y; break;
            case BinaryOp::add: out[i] = x + y; break;
            case BinaryOp::div_with_eps: out[i] = guarded_div(x, y, eps, counter); break;
        }
    }
    return out;
}

Tensor sign_mask(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        out[i] = a[i] > 0.0f ? 1.0f : (a[i] < 0.0f ? -1.0f : 0.0f);
    }
    return out;
}

Tensor abs(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::fabs(a[i]);
    return out;
}

Tensor channel_sum(const Tensor& a) {
    const Shape& s = a.shape();
    Tensor out(Shape{s.n, 1, s.h, s.w});
    const std::size_t plane = s.plane();
    for (std::size_t b = 0; b < s.n; ++b) {
        float* dst = out.data().data() + b * plane;
        for (std::size_t c = 0; c < s.c; ++c) {
            const float* src = a.data().data() + (b * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    }
    return out;
}

Tensor scale(const Tensor& a, float factor) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * factor;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

float max_value(const Tensor& a) {
    if (a.empty()) throw ShapeError("max_value of an empty tensor");
    return *std::max_element(a.data().begin(), a.data().end());
}

float min_value(const Tensor& a) {
    if (a.empty()) throw ShapeError("min_value of an empty tensor");
    return *std::min_element(a.data().begin(), a.data().end());
}

std::vector<float> linear(std::span<const float> x, const Tensor& weights, std::span<const float> bias) {
    const std::size_t out = weights.shape().h;
    const std::size_t in = weights.shape().w;
    if (x.size() != in) {
        throw ShapeError("linear input length " + std::to_string(x.size()) + " != in=" + std::to_string(in));
    }
    if (!bias.empty() && bias.size() != out) {
        throw ShapeError("linear bias length " + std::to_string(bias.size()) + " != out=" + std::to_string(out));
    }
    std::vector<float> y(out);
    const float* w = weights.data().data();
    for (std::size_t j = 0; j < out; ++j) {
        float acc = bias.empty() ? 0.0f : bias[j];
        for (std::size_t i = 0; i < in; ++i) acc += w[j * in + i] * x[i];
        y[j] = acc;
    }
    return y;
}

std::vector<float> linear_transposed(std::span<const float> g_out, const Tensor& weights) {
    const std::size_t out = weights.shape().h;
    const std::size_t in = weights.shape().w;
    if (g_out.size() != out) {
        throw ShapeError("linear upstream gradient length " + std::to_string(g_out.size()) +
                         " != out=" + std::to_string(out));
    }
    std::vector<float> g(in, 0.0f);
    const float* w = weights.data().data();
    for (std::size_t j = 0; j < out; ++j) {
        const float gj = g_out[j];
        if (gj == 0.0f) continue;
        for (std::size_t i = 0; i < in; ++i) g[i] += w[j * in + i] * gj;
    }
    return g;
}

MaxPoolResult max_pool(const Tensor& input, const PoolGeometry& geom) {
    const Shape& s = input.shape();
    const Extent2 oe = geom.output_extent({s.h, s.w});
    MaxPoolResult r{Tensor(Shape{s.n, s.c, oe.h, oe.w}), {}};
    r.argmax.resize(r.output.numel());
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t oh = 0; oh < oe.h; ++oh) {
                for (std::size_t ow = 0; ow < oe.w; ++ow) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::size_t best_at = std::numeric_limits<std::size_t>::max();
                    for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geom.stride_h + kh) -
                                                  static_cast<std::ptrdiff_t>(geom.pad_h);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.h)) continue;
                        for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geom.stride_w + kw) -
                                                      static_cast<std::ptrdiff_t>(geom.pad_w);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.w)) continue;
                            const std::size_t at = input.offset(b, c, static_cast<std::size_t>(ih),
                                                                static_cast<std::size_t>(iw));
                            if (best_at == std::numeric_limits<std::size_t>::max() || input[at] > best) {
                                best = input[at];
                                best_at = at;
                            }
                        }
                    }
                    if (best_at == std::numeric_limits<std::size_t>::max()) {
                        throw ShapeError("max-pool window covers only padding");
                    }
                    const std::size_t o = r.output.offset(b, c, oh, ow);
                    r.output[o] = best;
                    r.argmax[o] = best_at;
                }
            }
        }
    }
    return r;
}

Tensor max_pool_backward(const Tensor& g_out, std::span<const std::size_t> argmax, Shape input_shape) {
    if (argmax.size() != g_out.numel()) {
        throw ShapeError("max-pool argmax table size " + std::to_string(argmax.size()) +
                         " != upstream gradient size " + std::to_string(g_out.numel()));
    }
    Tensor g_in(input_shape);
    for (std::size_t o = 0; o < g_out.numel(); ++o) {
        if (argmax[o] >= g_in.numel()) throw ShapeError("max-pool argmax out of range");
        g_in[argmax[o]] += g_out[o];
    }
    return g_in;
}

Tensor avg_pool(const Tensor& input, const PoolGeometry& geom) {
    const Shape& s = input.shape();
    const float inv = 1.0f / static_cast<float>(geom.kernel_h * geom.kernel_w);
    std::vector<float> data;
    const Extent2 oe = geom.output_extent({s.h, s.w});
    data.reserve(s.n * s.c * oe.h * oe.w);
    const ConvGeometry cg = geom.as_conv(1);
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            Tensor plane(Shape{1, 1, s.h, s.w},
                         std::vector<float>(input.data().begin() + static_cast<std::ptrdiff_t>(input.offset(b, c, 0, 0)),
                                            input.data().begin() + static_cast<std::ptrdiff_t>(input.offset(b, c, 0, 0) + s.plane())));
            const Tensor summed = box_sum(plane, cg);
            for (float v : summed.data()) data.push_back(v * inv);
        }
    }
    return Tensor(Shape{s.n, s.c, oe.h, oe.w}, std::move(data));
}

Tensor avg_pool_backward(const Tensor& g_out, const PoolGeometry& geom, Shape input_shape) {
    const Shape& s = g_out.shape();
    const float inv = 1.0f / static_cast<float>(geom.kernel_h * geom.kernel_w);
    const ConvGeometry cg = geom.as_conv(1);
    std::vector<float> data;
    data.reserve(input_shape.numel());
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            Tensor plane(Shape{1, 1, s.h, s.w},
                         std::vector<float>(g_out.data().begin() + static_cast<std::ptrdiff_t>(g_out.offset(b, c, 0, 0)),
                                            g_out.data().begin() + static_cast<std::ptrdiff_t>(g_out.offset(b, c, 0, 0) + s.plane())));
            const Tensor spread = box_scatter(plane, cg, {input_shape.h, input_shape.w});
            for (float v : spread.data()) data.push_back(v * inv);
        }
    }
    return Tensor(input_shape, std::move(data));
}

namespace {

struct Bin {
    std::size_t begin;
    std::size_t end;
};

Bin adaptive_bin(std::size_t i, std::size_t in, std::size_t out) {
    const std::size_t begin = (i * in) / out;
    const std::size_t end = ((i + 1) * in + out - 1) / out;
    return {begin, end};
}

}  // namespace

Tensor adaptive_avg_pool(const Tensor& input, Extent2 out_ext) {
    const Shape& s = input.shape();
    if (out_ext.h == 0 || out_ext.w == 0) throw ShapeError("adaptive pool target extent must be positive");
    Tensor out(Shape{s.n, s.c, out_ext.h, out_ext.w});
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t oh = 0; oh < out_ext.h; ++oh) {
                const Bin bh = adaptive_bin(oh, s.h, out_ext.h);
                for (std::size_t ow = 0; ow < out_ext.w; ++ow) {
                    const Bin bw = adaptive_bin(ow, s.w, out_ext.w);
                    float acc = 0.0f;
                    for (std::size_t ih = bh.begin; ih < bh.end; ++ih) {
                        for (std::size_t iw = bw.begin; iw < bw.end; ++iw) acc += input.at(b, c, ih, iw);
                    }
                    out.at(b, c, oh, ow) = acc / static_cast<float>((bh.end - bh.begin) * (bw.end - bw.begin));
                }
            }
        }
    }
    return out;
}

Tensor adaptive_avg_pool_backward(const Tensor& g_out, Shape input_shape) {
    const Shape& s = g_out.shape();
    Tensor g_in(input_shape);
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t oh = 0; oh < s.h; ++oh) {
                const Bin bh = adaptive_bin(oh, input_shape.h, s.h);
                for (std::size_t ow = 0; ow < s.w; ++ow) {
                    const Bin bw = adaptive_bin(ow, input_shape.w, s.w);
                    const float share =
                        g_out.at(b, c, oh, ow) / static_cast<float>((bh.end - bh.begin) * (bw.end - bw.begin));
                    for (std::size_t ih = bh.begin; ih < bh.end; ++ih) {
                        for (std::size_t iw = bw.begin; iw < bw.end; ++iw) g_in.at(b, c, ih, iw) += share;
                    }
                }
            }
        }
    }
    return g_in;
}

Tensor global_avg_pool(const Tensor& input) {
    const Shape& s = input.shape();
    return adaptive_avg_pool(input, {1, 1}).reshaped(Shape{s.n, s.c, 1, 1});
}

Tensor global_avg_pool_backward(const Tensor& g_out, Shape input_shape) {
    return adaptive_avg_pool_backward(g_out, input_shape);
}

}  // namespace tsgb
