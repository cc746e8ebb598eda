#pragma once

// Shared fixtures and 64-bit reference implementations for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "tsgb/model.hpp"
#include "tsgb/ops.hpp"
#include "tsgb/random.hpp"
#include "tsgb/tensor.hpp"

namespace tsgb::testing {

inline Tensor random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

inline std::vector<float> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

/// Plain nested-loop convolution in double.
inline std::vector<double> naive_conv(const std::vector<double>& x, Shape in, const std::vector<double>& w,
                                      const std::vector<double>& bias, const ConvGeometry& g, Extent2 out) {
    std::vector<double> y(g.out_channels * out.h * out.w, 0.0);
    for (std::size_t n = 0; n < g.out_channels; ++n)
        for (std::size_t oy = 0; oy < out.h; ++oy)
            for (std::size_t ox = 0; ox < out.w; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[n];
                for (std::size_t m = 0; m < g.in_channels; ++m)
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            const long iy = static_cast<long>(oy * g.stride_h + ky) - static_cast<long>(g.pad_h);
                            const long ix = static_cast<long>(ox * g.stride_w + kx) - static_cast<long>(g.pad_w);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w))
                                continue;
                            acc += x[(m * in.h + static_cast<std::size_t>(iy)) * in.w + static_cast<std::size_t>(ix)] *
                                   w[((n * g.in_channels + m) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                y[(n * out.h + oy) * out.w + ox] = acc;
            }
    return y;
}

inline std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

inline LayerSpec conv_layer(int id, int input, ConvGeometry g, Rng& rng, double scale = 0.5) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::Conv2d;
    l.inputs = {input};
    l.conv = g;
    l.weights = random_tensor(rng, {g.out_channels, g.in_channels, g.kernel_h, g.kernel_w}, -scale, scale);
    l.bias = random_vector(rng, g.out_channels, -0.1, 0.1);
    return l;
}

inline LayerSpec simple_layer(int id, LayerKind kind, std::vector<int> inputs) {
    LayerSpec l;
    l.id = id;
    l.kind = kind;
    l.inputs = std::move(inputs);
    return l;
}

inline LayerSpec linear_layer(int id, int input, std::size_t in, std::size_t out, Rng& rng, bool final,
                              double scale = 0.5) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::Linear;
    l.inputs = {input};
    l.final = final;
    l.weights = random_tensor(rng, {1, 1, out, in}, -scale, scale);
    l.bias = random_vector(rng, out, -0.1, 0.1);
    return l;
}

/// conv(3x3, 2->3, pad 1) -> ReLU -> Flatten -> Linear(3*6*6 -> 4, final). No preprocessing.
inline ModelGraph tiny_fixture(std::uint64_t seed = 11) {
    Rng rng(seed);
    ModelGraph g;
    g.name = "tiny-fixture";
    g.family = ModelFamily::vgg_like;
    g.input_shape = {1, 2, 6, 6};
    g.class_count = 4;
    g.layers.push_back(conv_layer(0, kGraphInput, {2, 3, 3, 3, 1, 1, 1, 1}, rng));
    g.layers.push_back(simple_layer(1, LayerKind::ReLU, {0}));
    g.layers.push_back(simple_layer(2, LayerKind::Flatten, {1}));
    g.layers.push_back(linear_layer(3, 2, 3 * 6 * 6, 4, rng, true, 0.3));
    infer_shapes(g);
    return g;
}

/// Deterministic input for tiny_fixture: a signed ramp.
inline Tensor tiny_fixture_input() {
    Tensor x(Shape{1, 2, 6, 6});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>((static_cast<double>(i % 13) - 6.0) / 7.0);
    return x;
}

/// 64-bit scores of tiny_fixture by plain loops.
inline std::vector<double> reference_tiny_scores(const ModelGraph& g, const Tensor& x) {
    const LayerSpec& conv = g.layers[0];
    const LayerSpec& fc = g.layers[3];
    const Extent2 out = conv.conv.output_extent({x.shape().h, x.shape().w});
    auto h = naive_conv(to_double(x.data()), x.shape(), to_double(conv.weights.data()), to_double(conv.bias), conv.conv,
                        out);
    for (auto& v : h) v = std::max(v, 0.0);
    const std::size_t classes = fc.weights.shape().h;
    std::vector<double> s(classes);
    for (std::size_t j = 0; j < classes; ++j) {
        double acc = fc.bias[j];
        for (std::size_t i = 0; i < h.size(); ++i) acc += static_cast<double>(fc.weights.at(0, 0, j, i)) * h[i];
        s[j] = acc;
    }
    return s;
}

/// conv -> BN -> ReLU -> AvgPool -> Flatten -> Linear, used by the BN and avg-pool tests.
inline ModelGraph bn_fixture(std::uint64_t seed = 5) {
    Rng rng(seed);
    ModelGraph g;
    g.name = "bn-fixture";
    g.family = ModelFamily::other;
    g.input_shape = {1, 3, 8, 8};
    g.class_count = 3;
    g.layers.push_back(conv_layer(0, kGraphInput, {3, 4, 3, 3, 1, 1, 1, 1}, rng));
    LayerSpec bn = simple_layer(1, LayerKind::BatchNormInference, {0});
    bn.bn.gamma = random_vector(rng, 4, 0.5, 1.5);
    bn.bn.beta = random_vector(rng, 4, -0.2, 0.2);
    bn.bn.mean = random_vector(rng, 4, -0.2, 0.2);
    bn.bn.var = random_vector(rng, 4, 0.5, 2.0);
    g.layers.push_back(bn);
    g.layers.push_back(simple_layer(2, LayerKind::ReLU, {1}));
    LayerSpec pool = simple_layer(3, LayerKind::AvgPool, {2});
    g.layers.push_back(pool);
    g.layers.push_back(simple_layer(4, LayerKind::Flatten, {3}));
    g.layers.push_back(linear_layer(5, 4, 4 * 4 * 4, 3, rng, true));
    infer_shapes(g);
    return g;
}

/// Four-layer net for the finite-difference check: conv(3->4, 3x3, pad 1) -> ReLU ->
/// MaxPool(2) -> Linear, with a Flatten in between.
inline ModelGraph fd_fixture(std::uint64_t seed = 17) {
    Rng rng(seed);
    ModelGraph g;
    g.name = "fd-fixture";
    g.input_shape = {1, 3, 8, 8};
    g.class_count = 5;
    g.layers.push_back(conv_layer(0, kGraphInput, {3, 4, 3, 3, 1, 1, 1, 1}, rng));
    g.layers.push_back(simple_layer(1, LayerKind::ReLU, {0}));
    g.layers.push_back(simple_layer(2, LayerKind::MaxPool, {1}));
    g.layers.push_back(simple_layer(3, LayerKind::Flatten, {2}));
    g.layers.push_back(linear_layer(4, 3, 4 * 4 * 4, 5, rng, true));
    infer_shapes(g);
    return g;
}

/// Pre-softmax score of `target` for fd_fixture, evaluated entirely in double.
inline double reference_fd_score(const ModelGraph& g, const std::vector<double>& x, std::size_t target) {
    const LayerSpec& conv = g.layers[0];
    const LayerSpec& fc = g.layers[4];
    const Shape in = g.input_shape;
    const Extent2 e = conv.conv.output_extent({in.h, in.w});
    auto h = naive_conv(x, in, to_double(conv.weights.data()), to_double(conv.bias), conv.conv, e);
    for (auto& v : h) v = std::max(v, 0.0);
    const std::size_t c = conv.conv.out_channels;
    const std::size_t ph = e.h / 2;
    const std::size_t pw = e.w / 2;
    std::vector<double> pooled(c * ph * pw);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t xx = 0; xx < pw; ++xx) {
                double m = -1e300;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, h[(k * e.h + 2 * y + dy) * e.w + 2 * xx + dx]);
                pooled[(k * ph + y) * pw + xx] = m;
            }
    double s = fc.bias[target];
    for (std::size_t i = 0; i < pooled.size(); ++i) s += static_cast<double>(fc.weights.at(0, 0, target, i)) * pooled[i];
    return s;
}

/// Central finite differences of reference_fd_score with respect to every input element.
inline std::vector<double> reference_fd_gradient(const ModelGraph& g, const Tensor& x, std::size_t target,
                                                 double step = 1e-3) {
    std::vector<double> base = to_double(x.data());
    std::vector<double> grad(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double keep = base[i];
        base[i] = keep + step;
        const double up = reference_fd_score(g, base, target);
        base[i] = keep - step;
        const double down = reference_fd_score(g, base, target);
        base[i] = keep;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

/// Random instance of the feature-driven conv rule: input, conv output and upstream gradient.
struct ConvRuleCase {
    ConvGeometry geom;
    Tensor x_in;
    Tensor x_out;
    Tensor g_out;
};

inline ConvRuleCase random_conv_case(Rng& rng, std::size_t max_channels = 8, std::size_t max_spatial = 12) {
    ConvRuleCase c;
    ConvGeometry& g = c.geom;
    g.in_channels = 1 + rng.index(max_channels);
    g.out_channels = 1 + rng.index(max_channels);
    g.kernel_h = 1 + rng.index(3);
    g.kernel_w = 1 + rng.index(3);
    g.stride_h = g.stride_w = 1 + rng.index(2);
    g.pad_h = g.pad_w = rng.index(2);
    const std::size_t h = std::max<std::size_t>(g.kernel_h, 1 + rng.index(max_spatial));
    const std::size_t w = std::max<std::size_t>(g.kernel_w, 1 + rng.index(max_spatial));
    c.x_in = random_tensor(rng, {1, g.in_channels, h, w});
    const Tensor weights = random_tensor(rng, {g.out_channels, g.in_channels, g.kernel_h, g.kernel_w});
    c.x_out = conv2d(c.x_in, weights, {}, g);
    c.g_out = random_tensor(rng, c.x_out.shape());
    return c;
}

/// max |a - b| / max |b|.
inline double normwise_relative_error(std::span<const float> a, std::span<const float> b) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::fabs(static_cast<double>(a[i]) - b[i]));
        den = std::max(den, std::fabs(static_cast<double>(b[i])));
    }
    return den == 0.0 ? num : num / den;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("tsgb-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    static int& counter() {
        static int n = 0;
        return n;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace tsgb::testing
