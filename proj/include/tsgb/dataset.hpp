#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsgb/model.hpp"
#include "tsgb/saliency.hpp"
#include "tsgb/tensor.hpp"

namespace tsgb {

/// Binary mask at image resolution, row-major.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> cells;

    bool at(std::size_t row, std::size_t col) const { return cells[row * width + col] != 0; }
};

/// Ground-truth region of one labeled class.
struct Region {
    std::size_t class_id = 0;
    BBox box;
    std::optional<Mask> mask;  // when present, the region is the mask rather than the box

    /// True iff (row, col) lies within `margin` pixels (Chebyshev) of the region.
    bool hit(std::size_t row, std::size_t col, std::size_t margin) const;
};

struct ImageRecord {
    std::size_t id = 0;
    std::string file;
    Tensor image;
    std::vector<std::size_t> labels;
    std::vector<Region> regions;
};

struct Dataset {
    std::size_t class_count = 0;
    std::vector<ImageRecord> images;
};

/// Writes one PPM per image plus ground_truth.json.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Checks regions lie within bounds and every label has a region.
std::vector<std::string> validate_ground_truth(const Dataset& d);

// ---- synthetic suite ---------------------------------------------------------

/// Colored squares on a textured gray background. Every image holds one dim, large
/// labeled object; with probability `distractor_probability` a small, saturated
/// object of another class is added.
struct SyntheticSpec {
    std::size_t height = 48;
    std::size_t width = 48;
    std::size_t class_count = 3;
    std::size_t target_min = 14;
    std::size_t target_max = 16;
    float target_intensity_min = 0.32f;
    float target_intensity_max = 0.38f;
    std::size_t distractor_min = 4;
    std::size_t distractor_max = 5;
    float distractor_intensity_min = 0.90f;
    float distractor_intensity_max = 1.00f;
    double distractor_probability = 0.6;
    float background = 0.5f;
    float texture_amplitude = 0.03f;
};

Dataset generate_synthetic_dataset(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed);

/// Hand-built detector for the synthetic suite. A first conv has one color-opponent
/// channel per class and one shared brightness channel; the classifier head reads
/// the class channel positively, other classes negatively and the brightness
/// channel positively, so a bright distractor leaks into every class score.
ModelGraph build_synthetic_detector(const SyntheticSpec& spec);

}  // namespace tsgb
