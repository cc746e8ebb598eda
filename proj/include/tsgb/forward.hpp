#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "tsgb/model.hpp"
#include "tsgb/tensor.hpp"

namespace tsgb {

/// Per-layer record of one forward pass.
struct LayerActivation {
    std::vector<Tensor> inputs;  // one per source, in LayerSpec::inputs order
    Tensor output;
    std::vector<std::size_t> argmax;  // MaxPool only
};

/// Everything the backward rules read: both sides of every layer plus the scores.
struct ActivationTrace {
    Tensor image;      // raw input as given
    Tensor network_input;  // after per-channel preprocessing
    std::map<int, LayerActivation> layers;
    std::vector<float> scores;  // pre-softmax

    const LayerActivation& at(int id) const;
};

/// (x - mean) / std per channel. No-op when the graph has no preprocessing constants.
Tensor preprocess(const ModelGraph& g, const Tensor& image);

/// Runs the graph on one image and records every layer's features.
ActivationTrace run_forward(const ModelGraph& g, const Tensor& image);

/// Output of one layer given its input tensors (no recording).
Tensor apply_layer(const LayerSpec& layer, std::span<const Tensor> inputs, std::vector<std::size_t>* argmax = nullptr);

/// Indices of the k largest scores, ties by lower index.
std::vector<std::size_t> top_k(std::span<const float> scores, std::size_t k);

/// Numerically stable softmax in double precision.
std::vector<double> softmax(std::span<const float> scores);

}  // namespace tsgb
