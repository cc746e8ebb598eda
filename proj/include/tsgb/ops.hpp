#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tsgb/tensor.hpp"

namespace tsgb {

/// Default guard used by every division in the library.
inline constexpr float kDefaultEps = 1e-6f;

/// Height/width pair.
struct Extent2 {
    std::size_t h = 0;
    std::size_t w = 0;
    friend constexpr bool operator==(const Extent2&, const Extent2&) = default;
};

/// Geometry of a zero-padded 2-D convolution.
struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;

    /// floor((in + 2p - K)/s) + 1 per axis. Throws ShapeError when not strictly positive.
    Extent2 output_extent(Extent2 in) const;

    friend constexpr bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Window geometry shared by max/avg pooling.
struct PoolGeometry {
    std::size_t kernel_h = 2;
    std::size_t kernel_w = 2;
    std::size_t stride_h = 2;
    std::size_t stride_w = 2;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;

    Extent2 output_extent(Extent2 in) const;
    ConvGeometry as_conv(std::size_t channels) const;

    friend constexpr bool operator==(const PoolGeometry&, const PoolGeometry&) = default;
};

// ---- convolution -------------------------------------------------------------

/// Forward convolution. weights: N x M x Kh x Kw, bias: N values or empty.
Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
              const ConvGeometry& geom);

/// Adjoint of conv2d with respect to its input.
///
/// `input` carries the forward output extents (N channels); the result has M channels
/// and the forward input extents `out_extent`. `kernel` is N x M x Kh x Kw, the same
/// layout as the forward weights.
Tensor conv2d_transposed(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom,
                         Extent2 out_extent);

/// Single-channel convolution with the all-ones Kh x Kw window (zero padding).
Tensor box_sum(const Tensor& plane, const ConvGeometry& geom);

/// Adjoint of box_sum: scatter every output cell over its window.
Tensor box_scatter(const Tensor& plane, const ConvGeometry& geom, Extent2 out_extent);

// ---- elementwise -------------------------------------------------------------

enum class BinaryOp { mul, div_with_eps, add };

/// Counts divisions whose denominator magnitude fell below the guard.
struct GuardCounter {
    std::size_t guarded = 0;
    std::size_t total = 0;
};

/// a / b with the denominator magnitude clamped to at least `eps`, keeping its sign
/// (zero counts as positive).
inline float guarded_div(float a, float b, float eps, GuardCounter* counter = nullptr) {
    if (counter) ++counter->total;
    const float mag = b < 0.0f ? -b : b;
    if (mag < eps) {
        if (counter) ++counter->guarded;
        return a / (b < 0.0f ? -eps : eps);
    }
    return a / b;
}

/// Binary elementwise op. `b` may have a single channel, in which case it is broadcast
/// over the channels of `a`.
Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op, float eps = kDefaultEps,
                   GuardCounter* counter = nullptr);

Tensor sign_mask(const Tensor& a);
Tensor abs(const Tensor& a);
/// Sums over the channel axis: N x C x H x W -> N x 1 x H x W.
Tensor channel_sum(const Tensor& a);
Tensor scale(const Tensor& a, float factor);
Tensor relu(const Tensor& a);

double dot(const Tensor& a, const Tensor& b);
float max_value(const Tensor& a);
float min_value(const Tensor& a);

// ---- dense -------------------------------------------------------------------

/// y = W x + b, W is out x in (stored as 1 x 1 x out x in). x is read flat.
std::vector<float> linear(std::span<const float> x, const Tensor& weights, std::span<const float> bias);

/// g_in = W^T g_out.
std::vector<float> linear_transposed(std::span<const float> g_out, const Tensor& weights);

// ---- pooling -----------------------------------------------------------------

struct MaxPoolResult {
    Tensor output;
    /// For every output cell, the flat input offset of the winning element.
    std::vector<std::size_t> argmax;
};

/// Max pooling; padded cells never win. Ties go to the first element in row-major
/// window order.
MaxPoolResult max_pool(const Tensor& input, const PoolGeometry& geom);
Tensor max_pool_backward(const Tensor& g_out, std::span<const std::size_t> argmax, Shape input_shape);

/// Average pooling with zero padding; every window divides by Kh*Kw.
Tensor avg_pool(const Tensor& input, const PoolGeometry& geom);
Tensor avg_pool_backward(const Tensor& g_out, const PoolGeometry& geom, Shape input_shape);

/// Adaptive average pooling to a fixed output size; cell i covers
/// [floor(i*H/oh), ceil((i+1)*H/oh)).
Tensor adaptive_avg_pool(const Tensor& input, Extent2 out);
Tensor adaptive_avg_pool_backward(const Tensor& g_out, Shape input_shape);

Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Tensor& g_out, Shape input_shape);

}  // namespace tsgb
