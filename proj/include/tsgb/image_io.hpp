#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tsgb/tensor.hpp"

namespace tsgb {

/// Reads a binary PGM (P5) or PPM (P6) with maxval <= 255 into a 1 x C x H x W tensor
/// scaled to [0, 1].
Tensor read_pnm(const std::filesystem::path& path);
Tensor decode_pnm(std::span<const std::uint8_t> bytes);

/// Encodes a 1- or 3-channel tensor with values in [0, 1] as P5/P6, rounding to 8 bits.
std::vector<std::uint8_t> encode_pnm(const Tensor& image);
void write_pnm(const Tensor& image, const std::filesystem::path& path);

}  // namespace tsgb
