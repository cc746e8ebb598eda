#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tsgb {

/// Extents of a rank-4 (batch, channel, height, width) tensor.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const;
};

/// Dense rank-4 float tensor, row-major with the batch axis outermost.
///
/// The shape is fixed at construction; only element values may change.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape) { return Tensor(shape, 0.0f); }
    static Tensor full(Shape shape, float value) { return Tensor(shape, value); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[offset(n, c, h, w)];
    }
    float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[offset(n, c, h, w)];
    }

    // Single (batch 0) channel plane as a contiguous span.
    std::span<float> channel(std::size_t c) noexcept {
        return std::span<float>(data_).subspan(c * shape_.plane(), shape_.plane());
    }
    std::span<const float> channel(std::size_t c) const noexcept {
        return std::span<const float>(data_).subspan(c * shape_.plane(), shape_.plane());
    }

    /// Copy with the same elements under a new shape of equal element count.
    Tensor reshaped(Shape shape) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<float> data_;
};

}  // namespace tsgb
