#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tsgb/attribution.hpp"
#include "tsgb/forward.hpp"

namespace tsgb {

struct SaliencyMeta {
    std::size_t target = 0;
    float alpha = 0.0f;
    RuleSet rule_set = RuleSet::tsgb;
    std::string model_name;
};

/// Signed H x W map at input resolution, row-major.
struct SaliencyMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;
    SaliencyMeta meta;

    float at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
};

/// Inclusive pixel box; x is the column, y the row.
struct BBox {
    std::size_t x0 = 0;
    std::size_t y0 = 0;
    std::size_t x1 = 0;
    std::size_t y1 = 0;

    std::size_t area() const { return (x1 - x0 + 1) * (y1 - y0 + 1); }
    bool contains(std::size_t row, std::size_t col) const { return col >= x0 && col <= x1 && row >= y0 && row <= y1; }
    friend bool operator==(const BBox&, const BBox&) = default;
};

class EmptyMapError : public Error {
public:
    using Error::Error;
};

/// Channel sum of (input gradient * network input).
SaliencyMap assemble(const AttributionState& state, const ActivationTrace& trace, SaliencyMeta meta = {});

/// Same product at the (first) input of an intermediate layer, for runs cut short by
/// stop_layer. The map has that feature map's spatial extent.
SaliencyMap assemble_at(const AttributionState& state, const ActivationTrace& trace, int layer_id,
                        SaliencyMeta meta = {});

SaliencyMap truncate_negatives(const SaliencyMap& m);

/// Tight box around every pixel whose truncated value reaches fraction * max.
/// Throws EmptyMapError when the truncated map is all zero.
BBox binarize_bbox(const SaliencyMap& m, float threshold_fraction);

/// (row, col) of the maximum; first in row-major order on ties.
std::pair<std::size_t, std::size_t> argmax_point(const SaliencyMap& m);

/// Intersection over union of two inclusive boxes as an exact fraction (num/den).
std::pair<std::size_t, std::size_t> iou_fraction(const BBox& a, const BBox& b);
double iou(const BBox& a, const BBox& b);

enum class ExportMode { grayscale, signed_diverging };

/// Binary 8-bit image bytes: P5 min-max normalized for grayscale, P6 with
/// positives in red and negatives in blue (scaled by max |v|) for signed_diverging.
std::vector<std::uint8_t> render_image(const SaliencyMap& m, ExportMode mode);
void export_image(const SaliencyMap& m, const std::filesystem::path& path, ExportMode mode);

}  // namespace tsgb
