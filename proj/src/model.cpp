#include "tsgb/model.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>

namespace tsgb {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 12> kKindNames{{
    {LayerKind::Conv2d, "Conv2d"},
    {LayerKind::Linear, "Linear"},
    {LayerKind::ReLU, "ReLU"},
    {LayerKind::MaxPool, "MaxPool"},
    {LayerKind::AvgPool, "AvgPool"},
    {LayerKind::AdaptiveAvgPool, "AdaptiveAvgPool"},
    {LayerKind::BatchNormInference, "BatchNormInference"},
    {LayerKind::LocalResponseNorm, "LocalResponseNorm"},
    {LayerKind::Flatten, "Flatten"},
    {LayerKind::Add, "Add"},
    {LayerKind::Concat, "Concat"},
    {LayerKind::GlobalAvgPool, "GlobalAvgPool"},
}};

std::string layer_tag(const LayerSpec& l) {
    return "layer " + std::to_string(l.id) + " (" + std::string(to_string(l.kind)) + ")";
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    throw ModelFormatError(ModelFormatError::Kind::UnknownLayerKind,
                           "unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(ModelFamily family) {
    switch (family) {
        case ModelFamily::vgg_like: return "vgg-like";
        case ModelFamily::resnet_like: return "resnet-like";
        case ModelFamily::other: return "other";
    }
    return "other";
}

ModelFamily model_family_from_string(std::string_view name) {
    if (name == "vgg-like") return ModelFamily::vgg_like;
    if (name == "resnet-like") return ModelFamily::resnet_like;
    if (name == "other") return ModelFamily::other;
    throw ModelFormatError(ModelFormatError::Kind::Malformed, "unknown model family '" + std::string(name) + "'");
}

const LayerSpec& ModelGraph::layer(int id) const {
    if (auto i = index_of(id)) return layers[*i];
    throw ArgumentError("no layer with id " + std::to_string(id));
}

std::optional<std::size_t> ModelGraph::index_of(int id) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].id == id) return i;
    }
    return std::nullopt;
}

const LayerSpec& ModelGraph::final_linear() const {
    const LayerSpec* found = nullptr;
    for (const auto& l : layers) {
        if (l.final) {
            if (found) throw InvariantError("more than one layer is marked final");
            found = &l;
        }
    }
    if (!found) throw InvariantError("no layer is marked final");
    return *found;
}

std::vector<int> ModelGraph::consumers(int id) const {
    std::vector<int> out;
    for (const auto& l : layers) {
        if (std::find(l.inputs.begin(), l.inputs.end(), id) != l.inputs.end()) out.push_back(l.id);
    }
    return out;
}

Shape infer_output_shape(const LayerSpec& l, std::span<const Shape> in) {
    const auto fail = [&](const std::string& msg) -> ShapeError { return ShapeError(layer_tag(l) + ": " + msg); };
    const bool multi = l.kind == LayerKind::Add || l.kind == LayerKind::Concat;
    if (multi ? in.size() < 2 : in.size() != 1) {
        throw fail("expects " + std::string(multi ? "at least 2 inputs" : "exactly 1 input") + ", got " +
                   std::to_string(in.size()));
    }
    const Shape& s = in[0];
    switch (l.kind) {
        case LayerKind::Conv2d: {
            const Shape& ws = l.weights.shape();
            if (ws.n != l.conv.out_channels || ws.c != l.conv.in_channels || ws.h != l.conv.kernel_h ||
                ws.w != l.conv.kernel_w) {
                throw fail("weights " + ws.str() + " do not match its geometry");
            }
            if (s.c != l.conv.in_channels) {
                throw fail("input channel extent " + std::to_string(s.c) + " != in_channels " +
                           std::to_string(l.conv.in_channels));
            }
            if (!l.bias.empty() && l.bias.size() != l.conv.out_channels) {
                throw fail("bias length " + std::to_string(l.bias.size()) + " != out_channels");
            }
            Extent2 e;
            try {
                e = l.conv.output_extent({s.h, s.w});
            } catch (const ShapeError& err) {
                throw fail(err.what());
            }
            return {s.n, l.conv.out_channels, e.h, e.w};
        }
        case LayerKind::Linear: {
            const Shape& ws = l.weights.shape();
            if (ws.n != 1 || ws.c != 1) throw fail("weights must be stored as 1x1xoutxin, got " + ws.str());
            if (s.c * s.h * s.w != ws.w) {
                throw fail("input feature count " + std::to_string(s.c * s.h * s.w) + " != in " + std::to_string(ws.w));
            }
            if (!l.bias.empty() && l.bias.size() != ws.h) throw fail("bias length != out features");
            return {s.n, ws.h, 1, 1};
        }
        case LayerKind::ReLU:
        case LayerKind::LocalResponseNorm:
            return s;
        case LayerKind::BatchNormInference: {
            const auto& bn = l.bn;
            if (bn.gamma.size() != s.c || bn.beta.size() != s.c || bn.mean.size() != s.c || bn.var.size() != s.c) {
                throw fail("batch-norm parameter lengths do not match channel extent " + std::to_string(s.c));
            }
            return s;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            Extent2 e;
            try {
                e = l.pool.output_extent({s.h, s.w});
            } catch (const ShapeError& err) {
                throw fail(err.what());
            }
            return {s.n, s.c, e.h, e.w};
        }
        case LayerKind::AdaptiveAvgPool:
            if (l.adaptive_out.h == 0 || l.adaptive_out.w == 0) throw fail("adaptive output size must be positive");
            return {s.n, s.c, l.adaptive_out.h, l.adaptive_out.w};
        case LayerKind::GlobalAvgPool:
            return {s.n, s.c, 1, 1};
        case LayerKind::Flatten:
            return {s.n, s.c * s.h * s.w, 1, 1};
        case LayerKind::Add:
            for (const auto& o : in) {
                if (o != s) throw fail("Add operands differ: " + s.str() + " vs " + o.str());
            }
            return s;
        case LayerKind::Concat: {
            Shape out = s;
            out.c = 0;
            for (const auto& o : in) {
                if (o.n != s.n || o.h != s.h || o.w != s.w) {
                    throw fail("Concat operands differ spatially: " + s.str() + " vs " + o.str());
                }
                out.c += o.c;
            }
            return out;
        }
    }
    throw fail("unsupported layer kind");
}

void infer_shapes(ModelGraph& g) {
    for (auto& l : g.layers) {
        std::vector<Shape> in;
        for (int src : l.inputs) {
            if (src == kGraphInput) {
                in.push_back(g.input_shape);
                continue;
            }
            const auto idx = g.index_of(src);
            if (!idx || g.layers[*idx].id == l.id || *idx >= static_cast<std::size_t>(&l - g.layers.data())) {
                throw ShapeError(layer_tag(l) + ": source " + std::to_string(src) + " is not an earlier layer");
            }
            in.push_back(g.layers[*idx].output_shape);
        }
        l.output_shape = infer_output_shape(l, in);
    }
}

std::vector<std::string> validate(const ModelGraph& g) {
    std::vector<std::string> v;
    if (g.layers.empty()) {
        v.push_back("graph has no layers");
        return v;
    }
    if (g.input_shape.n != 1 || g.input_shape.numel() == 0) {
        v.push_back("input shape must be 1xCxHxW with positive extents, got " + g.input_shape.str());
    }
    if (!g.preprocess.mean.empty() || !g.preprocess.std.empty()) {
        if (g.preprocess.mean.size() != g.input_shape.c || g.preprocess.std.size() != g.input_shape.c) {
            v.push_back("preprocessing constants must have one value per input channel");
        }
        for (float s : g.preprocess.std) {
            if (!(s > 0.0f)) v.push_back("preprocessing std must be strictly positive");
        }
    }

    std::set<int> seen;
    std::set<int> consumed;
    std::size_t finals = 0;
    bool reads_input = false;
    for (const auto& l : g.layers) {
        const std::string tag = layer_tag(l);
        if (l.id < 0) v.push_back(tag + ": ids must be non-negative");
        if (!seen.insert(l.id).second) v.push_back(tag + ": duplicate id");
        for (int src : l.inputs) {
            if (src == kGraphInput) {
                reads_input = true;
            } else if (!seen.contains(src) || src == l.id) {
                v.push_back(tag + ": source " + std::to_string(src) + " is not an earlier layer");
            }
            consumed.insert(src);
        }
        if (l.final) {
            ++finals;
            if (l.kind != LayerKind::Linear) v.push_back(tag + ": only a Linear layer may be marked final");
        }
        if (l.kind == LayerKind::BatchNormInference) {
            for (std::size_t c = 0; c < l.bn.var.size(); ++c) {
                if (!(l.bn.var[c] > 0.0f)) {
                    v.push_back(tag + ": batch-norm variance of channel " + std::to_string(c) +
                                " must be strictly positive");
                    break;
                }
            }
            if (!(l.bn.eps >= 0.0f)) v.push_back(tag + ": batch-norm eps must be non-negative");
        }
        if (l.kind == LayerKind::LocalResponseNorm && l.lrn.size == 0) v.push_back(tag + ": LRN size must be positive");
    }
    if (finals != 1) v.push_back("exactly one Linear layer must be marked final, found " + std::to_string(finals));
    if (!reads_input) v.push_back("no layer reads the graph input");
    for (std::size_t i = 0; i + 1 < g.layers.size(); ++i) {
        if (!consumed.contains(g.layers[i].id)) {
            v.push_back(layer_tag(g.layers[i]) + ": output is unused (graph must have a single output node)");
        }
    }
    if (!v.empty()) return v;

    ModelGraph copy = g;
    try {
        infer_shapes(copy);
    } catch (const ShapeError& e) {
        v.push_back(e.what());
        return v;
    }
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        const Shape& recorded = g.layers[i].output_shape;
        if (recorded.numel() != 0 && recorded != copy.layers[i].output_shape) {
            v.push_back(layer_tag(g.layers[i]) + ": recorded output shape " + recorded.str() +
                        " disagrees with inferred " + copy.layers[i].output_shape.str());
        }
    }
    if (copy.layers.back().output_shape.numel() != g.class_count) {
        v.push_back("output layer produces " + std::to_string(copy.layers.back().output_shape.numel()) +
                    " values but class count is " + std::to_string(g.class_count));
    }
    for (const auto& l : copy.layers) {
        if (l.final && l.output_shape.numel() != g.class_count) {
            v.push_back(layer_tag(l) + ": final layer width differs from class count");
        }
    }
    return v;
}

}  // namespace tsgb
