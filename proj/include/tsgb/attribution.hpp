#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsgb/forward.hpp"
#include "tsgb/model.hpp"
#include "tsgb/ops.hpp"

namespace tsgb {

/// Which backward rules to use.
///
/// `tsgb` rectifies the final FC layer and uses the feature-driven rules for conv,
/// normalization and negative-input average pooling. The two `_only` variants apply
/// one half and fall back to the plain gradient elsewhere. `guided` is the plain
/// gradient with negative upstream gradients clamped at every ReLU.
enum class RuleSet { tsgb, vanilla, guided, tsgb_fc_only, tsgb_conv_only };

std::string_view to_string(RuleSet r);
RuleSet rule_set_from_string(std::string_view name);

/// How average-pool layers are treated under the feature-driven rules.
enum class AvgPoolMode {
    automatic,          // normalization rule iff the layer input has a negative element
    force_norm_rule,
    force_passthrough,
};

enum class ConvRuleImpl { fast, direct };

struct AttributionRequest {
    std::size_t target = 0;
    float alpha = 0.8f;
    RuleSet rule_set = RuleSet::tsgb;
    /// Stop once this layer's input gradient is computed.
    std::optional<int> stop_layer;
};

struct AttributionOptions {
    float eps = kDefaultEps;
    AvgPoolMode avgpool = AvgPoolMode::automatic;
    ConvRuleImpl conv_impl = ConvRuleImpl::fast;
};

/// Backward rule chosen for one layer.
enum class Rule {
    fc_tsgb,
    fc_vanilla,
    conv_tsgb,
    conv_vanilla,
    norm_tsgb,
    norm_vanilla,
    avgpool_tsgb,
    relu,
    relu_guided,
    passthrough,
};

std::string_view to_string(Rule r);

struct RuleDispatch {
    int layer_id = 0;
    LayerKind kind = LayerKind::ReLU;
    Rule rule = Rule::passthrough;
};

struct Diagnostics {
    std::size_t guarded_cells = 0;
    std::size_t guarded_divisions = 0;
    std::vector<std::string> warnings;
};

struct AttributionState {
    /// Gradient with respect to each node's output; kGraphInput keys the network input.
    std::map<int, Tensor> node_grads;
    /// Gradient with respect to each input of each visited layer (same shapes as the trace).
    std::map<int, std::vector<Tensor>> input_grads;
    std::vector<RuleDispatch> dispatch;
    Diagnostics diagnostics;

    bool has_input_gradient() const { return node_grads.contains(kGraphInput); }
    const Tensor& input_gradient() const;
};

/// alpha default per model family: 0.8 for vgg-like, 0.9 for resnet-like, 0.8 otherwise.
float default_alpha(ModelFamily family);

/// One-hot vector at `target` over the pre-softmax scores.
std::vector<float> init_output_gradient(const ActivationTrace& trace, std::size_t target);

/// Pre-alpha ratio of positive to negative contributions into output `j`:
/// sum_i x_i w+_ij / sum_i |x_i w-_ij|.
double enhancement_ratio(std::span<const float> x, const Tensor& weights, std::size_t j);

/// Enhancement factor per output. Columns without negative weights get 1.
std::vector<float> enhancement_factors(std::span<const float> x, const Tensor& weights, float alpha,
                                       float eps = kDefaultEps, GuardCounter* counter = nullptr);

/// Rectified gradient through the final FC layer:
/// g_i = sum_j (w+_ij + E_j w-_ij) g_j.
std::vector<float> backward_fc_final(std::span<const float> x, const Tensor& weights, std::span<const float> g_out,
                                     float alpha, float eps = kDefaultEps, GuardCounter* counter = nullptr);

/// Plain gradient W^T g through a Linear layer.
std::vector<float> backward_fc_vanilla(std::span<const float> x, const Tensor& weights, std::span<const float> g_out);

/// Feature-driven conv rule evaluated node by node over receptive fields. Every output
/// node recomputes its own window denominator, so the cost is O(N*M*H*W*K*K). Kept as
/// the reference for backward_conv_fast.
Tensor backward_conv_direct(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, const ConvGeometry& geom,
                            float eps = kDefaultEps, GuardCounter* counter = nullptr);

/// Same rule with the channel axis collapsed: one single-channel box filter for the
/// denominator and one single-channel scatter, shared by every input channel.
Tensor backward_conv_fast(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, const ConvGeometry& geom,
                          float eps = kDefaultEps, GuardCounter* counter = nullptr);

/// g_in = (x_out / x_in) g_out for elementwise normalization layers.
Tensor backward_norm(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, float eps = kDefaultEps,
                     GuardCounter* counter = nullptr);

/// Normalization rule for average pooling: scatter x_out*g_out through the pooling
/// adjoint, then divide by x_in.
Tensor backward_avgpool_norm(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, const PoolGeometry& geom,
                             float eps = kDefaultEps, GuardCounter* counter = nullptr);

/// Ordinary gradient of a layer, one tensor per input. `guided` clamps negative
/// upstream gradients at ReLU.
std::vector<Tensor> backward_standard(const LayerSpec& layer, const LayerActivation& act, const Tensor& g_out,
                                      bool guided = false);

/// Rule per layer, decided before any gradient is computed. Throws if some layer has
/// no rule under the request.
std::vector<RuleDispatch> plan_rules(const ModelGraph& g, const ActivationTrace& trace, const AttributionRequest& req,
                                     const AttributionOptions& opts = {});

AttributionState run_attribution(const ModelGraph& g, const ActivationTrace& trace, const AttributionRequest& req,
                                 const AttributionOptions& opts = {});

}  // namespace tsgb
