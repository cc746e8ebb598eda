#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsgb/error.hpp"
#include "tsgb/ops.hpp"
#include "tsgb/tensor.hpp"

namespace tsgb {

enum class LayerKind {
    Conv2d,
    Linear,
    ReLU,
    MaxPool,
    AvgPool,
    AdaptiveAvgPool,
    BatchNormInference,
    LocalResponseNorm,
    Flatten,
    Add,
    Concat,
    GlobalAvgPool,
};

std::string_view to_string(LayerKind kind);
/// Throws ModelFormatError(UnknownLayerKind) for names outside the supported set.
LayerKind layer_kind_from_string(std::string_view name);

/// Source id that refers to the (preprocessed) network input.
inline constexpr int kGraphInput = -1;

struct BatchNormParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> mean;
    std::vector<float> var;
    float eps = 1e-5f;
};

/// Cross-channel LRN: b_c = a_c / (k + alpha/size * sum_{c' in window} a_c'^2)^beta.
struct LrnParams {
    std::size_t size = 5;
    float alpha = 1e-4f;
    float beta = 0.75f;
    float k = 1.0f;
};

struct LayerSpec {
    int id = 0;
    LayerKind kind = LayerKind::ReLU;
    std::vector<int> inputs;

    // Conv2d: N x M x Kh x Kw. Linear: 1 x 1 x out x in.
    Tensor weights;
    std::vector<float> bias;
    ConvGeometry conv{};
    PoolGeometry pool{};
    Extent2 adaptive_out{1, 1};
    BatchNormParams bn{};
    LrnParams lrn{};
    /// Marks the classifier head whose outputs are the pre-softmax scores.
    bool final = false;

    /// Output shape recorded at load time (batch extent 1).
    Shape output_shape{};

    bool has_parameters() const noexcept {
        return kind == LayerKind::Conv2d || kind == LayerKind::Linear || kind == LayerKind::BatchNormInference;
    }
};

enum class ModelFamily { vgg_like, resnet_like, other };

std::string_view to_string(ModelFamily family);
ModelFamily model_family_from_string(std::string_view name);

struct Preprocess {
    std::vector<float> mean;  // per input channel
    std::vector<float> std;   // per input channel
};

struct ModelGraph {
    std::string name;
    ModelFamily family = ModelFamily::other;
    Shape input_shape{};  // 1 x C x H x W
    std::size_t class_count = 0;
    Preprocess preprocess;
    std::vector<LayerSpec> layers;  // topological order

    const LayerSpec& layer(int id) const;
    std::optional<std::size_t> index_of(int id) const;
    const LayerSpec& output_layer() const { return layers.back(); }
    /// The unique layer marked final. Throws InvariantError when absent.
    const LayerSpec& final_linear() const;
    std::vector<int> consumers(int id) const;
};

/// Shape of a layer's output given its inputs' shapes. Throws ShapeError naming the layer.
Shape infer_output_shape(const LayerSpec& layer, std::span<const Shape> input_shapes);

/// Recomputes every layer's output shape from the graph input and stores it.
void infer_shapes(ModelGraph& g);

/// Human-readable list of invariant violations; empty iff the graph is valid.
std::vector<std::string> validate(const ModelGraph& g);

// ---- NNSM file format ------------------------------------------------------

class ModelFormatError : public Error {
public:
    enum class Kind { BadMagic, BadVersion, ShapeInconsistency, TruncatedBlob, UnknownLayerKind, Malformed, Invalid };

    ModelFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

inline constexpr std::uint32_t kNnsmVersion = 1;

std::vector<std::uint8_t> serialize_model(const ModelGraph& g);
ModelGraph deserialize_model(std::span<const std::uint8_t> bytes);

ModelGraph load_model(const std::filesystem::path& path);
void save_model(const ModelGraph& g, const std::filesystem::path& path);

}  // namespace tsgb
