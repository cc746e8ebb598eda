#include "tsgb/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tsgb {

SaliencyMap assemble(const AttributionState& state, const ActivationTrace& trace, SaliencyMeta meta) {
    const Tensor& grad = state.input_gradient();
    const Tensor& x = trace.network_input;
    const Tensor summed = channel_sum(elementwise(grad, x, BinaryOp::mul));
    SaliencyMap m;
    m.height = summed.shape().h;
    m.width = summed.shape().w;
    m.values.assign(summed.data().begin(), summed.data().end());
    m.meta = std::move(meta);
    return m;
}

SaliencyMap assemble_at(const AttributionState& state, const ActivationTrace& trace, int layer_id, SaliencyMeta meta) {
    const auto it = state.input_grads.find(layer_id);
    if (it == state.input_grads.end() || it->second.empty()) {
        throw ArgumentError("no gradient recorded at layer " + std::to_string(layer_id));
    }
    const Tensor summed = channel_sum(elementwise(it->second.front(), trace.at(layer_id).inputs.front(), BinaryOp::mul));
    SaliencyMap m;
    m.height = summed.shape().h;
    m.width = summed.shape().w;
    m.values.assign(summed.data().begin(), summed.data().end());
    m.meta = std::move(meta);
    return m;
}

SaliencyMap truncate_negatives(const SaliencyMap& m) {
    SaliencyMap out = m;
    for (auto& v : out.values) v = v > 0.0f ? v : 0.0f;
    return out;
}

BBox binarize_bbox(const SaliencyMap& m, float threshold_fraction) {
    if (!(threshold_fraction > 0.0f && threshold_fraction < 1.0f)) {
        throw ArgumentError("threshold fraction must lie in (0, 1)");
    }
    float peak = 0.0f;
    for (float v : m.values) peak = std::max(peak, v);
    if (!(peak > 0.0f)) throw EmptyMapError("saliency map has no positive value; bounding box is empty");
    const float threshold = threshold_fraction * peak;
    BBox box{m.width, m.height, 0, 0};
    for (std::size_t r = 0; r < m.height; ++r) {
        for (std::size_t c = 0; c < m.width; ++c) {
            if (m.at(r, c) >= threshold) {
                box.x0 = std::min(box.x0, c);
                box.y0 = std::min(box.y0, r);
                box.x1 = std::max(box.x1, c);
                box.y1 = std::max(box.y1, r);
            }
        }
    }
    return box;
}

std::pair<std::size_t, std::size_t> argmax_point(const SaliencyMap& m) {
    if (m.values.empty()) throw ArgumentError("argmax of an empty map");
    std::size_t best = 0;
    for (std::size_t i = 1; i < m.values.size(); ++i) {
        if (m.values[i] > m.values[best]) best = i;
    }
    return {best / m.width, best % m.width};
}

std::pair<std::size_t, std::size_t> iou_fraction(const BBox& a, const BBox& b) {
    const std::size_t ix0 = std::max(a.x0, b.x0);
    const std::size_t iy0 = std::max(a.y0, b.y0);
    const std::size_t ix1 = std::min(a.x1, b.x1);
    const std::size_t iy1 = std::min(a.y1, b.y1);
    const std::size_t inter = (ix0 <= ix1 && iy0 <= iy1) ? (ix1 - ix0 + 1) * (iy1 - iy0 + 1) : 0;
    return {inter, a.area() + b.area() - inter};
}

double iou(const BBox& a, const BBox& b) {
    const auto [num, den] = iou_fraction(a, b);
    return static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::uint8_t> render_image(const SaliencyMap& m, ExportMode mode) {
    const std::size_t count = m.height * m.width;
    const std::string header = std::string(mode == ExportMode::grayscale ? "P5" : "P6") + "\n" +
                               std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    if (mode == ExportMode::grayscale) {
        float lo = 0.0f;
        float hi = 0.0f;
        if (count) {
            lo = *std::min_element(m.values.begin(), m.values.end());
            hi = *std::max_element(m.values.begin(), m.values.end());
        }
        for (float v : m.values) {
            const long level = hi > lo ? std::lround(255.0 * (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo)) : 128;
            out.push_back(static_cast<std::uint8_t>(std::clamp(level, 0L, 255L)));
        }
    } else {
        float peak = 0.0f;
        for (float v : m.values) peak = std::max(peak, std::fabs(v));
        for (float v : m.values) {
            const long level = peak > 0.0f ? std::lround(255.0 * std::fabs(static_cast<double>(v)) / peak) : 0;
            const auto c = static_cast<std::uint8_t>(std::clamp(level, 0L, 255L));
            out.push_back(v > 0.0f ? c : 0);
            out.push_back(0);
            out.push_back(v < 0.0f ? c : 0);
        }
    }
    return out;
}

void export_image(const SaliencyMap& m, const std::filesystem::path& path, ExportMode mode) {
    if (path.empty()) throw IoError("export path is empty");
    const auto bytes = render_image(m, mode);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write image '" + path.string() + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to image '" + path.string() + "'");
}

}  // namespace tsgb
