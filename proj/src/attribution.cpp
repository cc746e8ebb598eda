#include "tsgb/attribution.hpp"

#include <cmath>
#include <limits>

namespace tsgb {

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
    }
}

void check_linear_operands(std::span<const float> x, const Tensor& w, std::span<const float> g_out) {
    if (w.shape().n != 1 || w.shape().c != 1) throw ShapeError("Linear weights must be 1x1xoutxin, got " + w.shape().str());
    if (x.size() != w.shape().w) {
        throw ShapeError("Linear input length " + std::to_string(x.size()) + " != in=" + std::to_string(w.shape().w));
    }
    if (g_out.size() != w.shape().h) {
        throw ShapeError("Linear upstream gradient length " + std::to_string(g_out.size()) +
                         " != out=" + std::to_string(w.shape().h));
    }
}

void check_conv_rule_operands(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, const ConvGeometry& geom) {
    check_same(x_out, g_out, "conv rule x_out/g_out");
    if (x_in.shape().c != geom.in_channels || x_out.shape().c != geom.out_channels) {
        throw ShapeError("conv rule channel extents " + x_in.shape().str() + " -> " + x_out.shape().str() +
                         " do not match geometry M=" + std::to_string(geom.in_channels) +
                         ", N=" + std::to_string(geom.out_channels));
    }
    const Extent2 e = geom.output_extent({x_in.shape().h, x_in.shape().w});
    if (e.h != x_out.shape().h || e.w != x_out.shape().w || x_in.shape().n != x_out.shape().n) {
        throw ShapeError("conv rule output extent " + x_out.shape().str() + " is not the forward output of " +
                         x_in.shape().str());
    }
}

}  // namespace

std::string_view to_string(RuleSet r) {
    switch (r) {
        case RuleSet::tsgb: return "tsgb";
        case RuleSet::vanilla: return "vanilla";
        case RuleSet::guided: return "guided";
        case RuleSet::tsgb_fc_only: return "tsgb_fc_only";
        case RuleSet::tsgb_conv_only: return "tsgb_conv_only";
    }
    return "?";
}

RuleSet rule_set_from_string(std::string_view name) {
    for (RuleSet r : {RuleSet::tsgb, RuleSet::vanilla, RuleSet::guided, RuleSet::tsgb_fc_only, RuleSet::tsgb_conv_only}) {
        if (to_string(r) == name) return r;
    }
    throw ArgumentError("unknown rule set '" + std::string(name) +
                        "' (expected tsgb, vanilla, guided, tsgb_fc_only or tsgb_conv_only)");
}

std::string_view to_string(Rule r) {
    switch (r) {
        case Rule::fc_tsgb: return "fc_tsgb";
        case Rule::fc_vanilla: return "fc_vanilla";
        case Rule::conv_tsgb: return "conv_tsgb";
        case Rule::conv_vanilla: return "conv_vanilla";
        case Rule::norm_tsgb: return "norm_tsgb";
        case Rule::norm_vanilla: return "norm_vanilla";
        case Rule::avgpool_tsgb: return "avgpool_tsgb";
        case Rule::relu: return "relu";
        case Rule::relu_guided: return "relu_guided";
        case Rule::passthrough: return "passthrough";
    }
    return "?";
}

const Tensor& AttributionState::input_gradient() const {
    const auto it = node_grads.find(kGraphInput);
    if (it == node_grads.end()) throw ArgumentError("attribution state has no input-layer gradient");
    return it->second;
}

float default_alpha(ModelFamily family) {
    return family == ModelFamily::resnet_like ? 0.9f : 0.8f;
}

std::vector<float> init_output_gradient(const ActivationTrace& trace, std::size_t target) {
    if (target >= trace.scores.size()) {
        throw ArgumentError("target class " + std::to_string(target) + " out of range [0, " +
                            std::to_string(trace.scores.size()) + ")");
    }
    std::vector<float> g(trace.scores.size(), 0.0f);
    g[target] = 1.0f;
    return g;
}

double enhancement_ratio(std::span<const float> x, const Tensor& weights, std::size_t j) {
    const std::size_t in = weights.shape().w;
    if (x.size() != in || j >= weights.shape().h) throw ShapeError("enhancement_ratio operands mismatch");
    double pos = 0.0;
    double neg = 0.0;
    const float* w = weights.data().data() + j * in;
    for (std::size_t i = 0; i < in; ++i) {
        if (w[i] > 0.0f) pos += static_cast<double>(x[i]) * w[i];
        else neg += std::fabs(static_cast<double>(x[i]) * w[i]);
    }
    if (neg == 0.0) return std::numeric_limits<double>::infinity();
    return pos / neg;
}

std::vector<float> enhancement_factors(std::span<const float> x, const Tensor& weights, float alpha, float eps,
                                       GuardCounter* counter) {
    const std::size_t out = weights.shape().h;
    const std::size_t in = weights.shape().w;
    if (x.size() != in) throw ShapeError("enhancement_factors: input length mismatch");
    std::vector<float> e(out, 1.0f);
    for (std::size_t j = 0; j < out; ++j) {
        const float* w = weights.data().data() + j * in;
        float pos = 0.0f;
        float neg = 0.0f;
        bool has_negative = false;
        for (std::size_t i = 0; i < in; ++i) {
            if (w[i] > 0.0f) {
                pos += x[i] * w[i];
            } else if (w[i] < 0.0f) {
                has_negative = true;
                neg += std::fabs(x[i] * w[i]);
            }
        }
        if (has_negative) e[j] = alpha * guarded_div(pos, neg, eps, counter);
    }
    return e;
}

std::vector<float> backward_fc_final(std::span<const float> x, const Tensor& weights, std::span<const float> g_out,
                                     float alpha, float eps, GuardCounter* counter) {
    check_linear_operands(x, weights, g_out);
    const std::size_t out = weights.shape().h;
    const std::size_t in = weights.shape().w;
    const std::vector<float> e = enhancement_factors(x, weights, alpha, eps, counter);
    std::vector<float> g(in, 0.0f);
    for (std::size_t j = 0; j < out; ++j) {
        if (g_out[j] == 0.0f) continue;
        const float* w = weights.data().data() + j * in;
        for (std::size_t i = 0; i < in; ++i) {
            const float wp = w[i] > 0.0f ? w[i] : 0.0f;
            const float wn = w[i] - wp;
            g[i] += (wp + e[j] * wn) * g_out[j];
        }
    }
    return g;
}

std::vector<float> backward_fc_vanilla(std::span<const float> x, const Tensor& weights, std::span<const float> g_out) {
    check_linear_operands(x, weights, g_out);
    return linear_transposed(g_out, weights);
}

Tensor backward_conv_direct(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, const ConvGeometry& geom,
                            float eps, GuardCounter* counter) {
    check_conv_rule_operands(x_in, x_out, g_out, geom);
    const Shape& is = x_in.shape();
    const Shape& os = x_out.shape();
    std::vector<double> acc(x_in.numel(), 0.0);

    for (std::size_t b = 0; b < os.n; ++b) {
        for (std::size_t n = 0; n < os.c; ++n) {
            for (std::size_t oh = 0; oh < os.h; ++oh) {
                for (std::size_t ow = 0; ow < os.w; ++ow) {
                    const std::ptrdiff_t h0 = static_cast<std::ptrdiff_t>(oh * geom.stride_h) -
                                              static_cast<std::ptrdiff_t>(geom.pad_h);
                    const std::ptrdiff_t w0 = static_cast<std::ptrdiff_t>(ow * geom.stride_w) -
                                              static_cast<std::ptrdiff_t>(geom.pad_w);
                    auto inside = [&](std::size_t kh, std::size_t kw) {
                        const std::ptrdiff_t ih = h0 + static_cast<std::ptrdiff_t>(kh);
                        const std::ptrdiff_t iw = w0 + static_cast<std::ptrdiff_t>(kw);
                        return ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(is.h) &&
                               iw < static_cast<std::ptrdiff_t>(is.w);
                    };
                    // Denominator: sum of |x_i| over every input node inside this receptive field.
                    double denom = 0.0;
                    for (std::size_t m = 0; m < is.c; ++m) {
                        for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                            for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                                if (!inside(kh, kw)) continue;
                                denom += std::fabs(static_cast<double>(
                                    x_in.at(b, m, static_cast<std::size_t>(h0 + static_cast<std::ptrdiff_t>(kh)),
                                            static_cast<std::size_t>(w0 + static_cast<std::ptrdiff_t>(kw)))));
                            }
                        }
                    }
                    if (counter) ++counter->total;
                    if (denom < eps) {
                        if (counter) ++counter->guarded;
                        denom = eps;
                    }
                    const double coef = static_cast<double>(x_out.at(b, n, oh, ow)) * g_out.at(b, n, oh, ow) / denom;
                    for (std::size_t m = 0; m < is.c; ++m) {
                        for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                            for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                                if (!inside(kh, kw)) continue;
                                acc[x_in.offset(b, m, static_cast<std::size_t>(h0 + static_cast<std::ptrdiff_t>(kh)),
                                                static_cast<std::size_t>(w0 + static_cast<std::ptrdiff_t>(kw)))] += coef;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor g_in(is);
    for (std::size_t i = 0; i < g_in.numel(); ++i) {
        const float x = x_in[i];
        const double s = x > 0.0f ? 1.0 : (x < 0.0f ? -1.0 : 0.0);
        g_in[i] = static_cast<float>(s * acc[i]);
    }
    return g_in;
}

Tensor backward_conv_fast(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, const ConvGeometry& geom,
                          float eps, GuardCounter* counter) {
    check_conv_rule_operands(x_in, x_out, g_out, geom);
    const ConvGeometry single{1, 1, geom.kernel_h, geom.kernel_w, geom.stride_h, geom.stride_w, geom.pad_h, geom.pad_w};
    const Tensor denom = box_sum(channel_sum(abs(x_in)), single);
    const Tensor numer = channel_sum(elementwise(x_out, g_out, BinaryOp::mul));
    const Tensor ratio = elementwise(numer, denom, BinaryOp::div_with_eps, eps, counter);
    const Tensor spread = box_scatter(ratio, single, {x_in.shape().h, x_in.shape().w});
    return elementwise(sign_mask(x_in), spread, BinaryOp::mul);
}

Tensor backward_norm(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, float eps, GuardCounter* counter) {
    check_same(x_in, x_out, "normalization rule x_in/x_out");
    check_same(x_out, g_out, "normalization rule x_out/g_out");
    Tensor g_in(x_in.shape());
    for (std::size_t i = 0; i < g_in.numel(); ++i) g_in[i] = guarded_div(x_out[i], x_in[i], eps, counter) * g_out[i];
    return g_in;
}

Tensor backward_avgpool_norm(const Tensor& x_in, const Tensor& x_out, const Tensor& g_out, const PoolGeometry& geom,
                             float eps, GuardCounter* counter) {
    check_same(x_out, g_out, "avg-pool rule x_out/g_out");
    const Tensor scattered = avg_pool_backward(elementwise(x_out, g_out, BinaryOp::mul), geom, x_in.shape());
    Tensor g_in(x_in.shape());
    for (std::size_t i = 0; i < g_in.numel(); ++i) g_in[i] = guarded_div(scattered[i], x_in[i], eps, counter);
    return g_in;
}

namespace {

Tensor batch_norm_backward(const Tensor& g_out, const BatchNormParams& bn) {
    Tensor g(g_out.shape());
    const Shape& s = g_out.shape();
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const float k = bn.gamma[c] / std::sqrt(bn.var[c] + bn.eps);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const std::size_t o = g_out.offset(b, c, 0, 0) + i;
                g[o] = g_out[o] * k;
            }
        }
    }
    return g;
}

Tensor lrn_backward(const Tensor& x, const Tensor& g_out, const LrnParams& p) {
    const Shape& s = x.shape();
    const std::size_t before = p.size / 2;
    const std::size_t after = (p.size - 1) / 2;
    const float coeff = p.alpha / static_cast<float>(p.size);
    Tensor denom(s);
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t lo = c >= before ? c - before : 0;
            const std::size_t hi = std::min(s.c - 1, c + after);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                float sq = 0.0f;
                for (std::size_t cc = lo; cc <= hi; ++cc) {
                    const float v = x[x.offset(b, cc, 0, 0) + i];
                    sq += v * v;
                }
                denom[x.offset(b, c, 0, 0) + i] = p.k + coeff * sq;
            }
        }
    }
    Tensor g(s);
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t i_c = 0; i_c < s.c; ++i_c) {
            // Output channels c whose window contains i_c: c - before <= i_c <= c + after.
            const std::size_t lo = i_c >= after ? i_c - after : 0;
            const std::size_t hi = std::min(s.c - 1, i_c + before);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const std::size_t oi = x.offset(b, i_c, 0, 0) + i;
                float cross = 0.0f;
                for (std::size_t c = lo; c <= hi; ++c) {
                    const std::size_t oc = x.offset(b, c, 0, 0) + i;
                    cross += g_out[oc] * x[oc] * std::pow(denom[oc], -p.beta - 1.0f);
                }
                g[oi] = g_out[oi] * std::pow(denom[oi], -p.beta) - 2.0f * coeff * p.beta * x[oi] * cross;
            }
        }
    }
    return g;
}

}  // namespace

std::vector<Tensor> backward_standard(const LayerSpec& l, const LayerActivation& act, const Tensor& g_out, bool guided) {
    if (g_out.shape() != act.output.shape()) {
        throw ShapeError("layer " + std::to_string(l.id) + ": upstream gradient " + g_out.shape().str() +
                         " does not match output " + act.output.shape().str());
    }
    const Tensor& x = act.inputs.at(0);
    switch (l.kind) {
        case LayerKind::Conv2d:
            return {conv2d_transposed(g_out, l.weights, l.conv, {x.shape().h, x.shape().w})};
        case LayerKind::Linear:
            return {Tensor(x.shape(), linear_transposed(g_out.data(), l.weights))};
        case LayerKind::ReLU: {
            Tensor g(x.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const bool pass = x[i] > 0.0f && (!guided || g_out[i] > 0.0f);
                g[i] = pass ? g_out[i] : 0.0f;
            }
            return {g};
        }
        case LayerKind::MaxPool:
            return {max_pool_backward(g_out, act.argmax, x.shape())};
        case LayerKind::AvgPool:
            return {avg_pool_backward(g_out, l.pool, x.shape())};
        case LayerKind::AdaptiveAvgPool:
            return {adaptive_avg_pool_backward(g_out, x.shape())};
        case LayerKind::GlobalAvgPool:
            return {global_avg_pool_backward(g_out, x.shape())};
        case LayerKind::BatchNormInference:
            return {batch_norm_backward(g_out, l.bn)};
        case LayerKind::LocalResponseNorm:
            return {lrn_backward(x, g_out, l.lrn)};
        case LayerKind::Flatten:
            return {g_out.reshaped(x.shape())};
        case LayerKind::Add:
            return std::vector<Tensor>(act.inputs.size(), g_out);
        case LayerKind::Concat: {
            std::vector<Tensor> parts;
            const Shape& os = g_out.shape();
            std::size_t c0 = 0;
            for (const auto& in : act.inputs) {
                Tensor part(in.shape());
                for (std::size_t b = 0; b < os.n; ++b) {
                    const std::size_t count = in.shape().c * os.plane();
                    std::copy_n(g_out.data().begin() + static_cast<std::ptrdiff_t>(g_out.offset(b, c0, 0, 0)), count,
                                part.data().begin() + static_cast<std::ptrdiff_t>(part.offset(b, 0, 0, 0)));
                }
                c0 += in.shape().c;
                parts.push_back(std::move(part));
            }
            return parts;
        }
    }
    throw InvariantError("no standard backward rule for layer " + std::to_string(l.id));
}

std::vector<RuleDispatch> plan_rules(const ModelGraph& g, const ActivationTrace& trace, const AttributionRequest& req,
                                     const AttributionOptions& opts) {
    const RuleSet rs = req.rule_set;
    const bool fc_rule = rs == RuleSet::tsgb || rs == RuleSet::tsgb_fc_only;
    const bool fine_rules = rs == RuleSet::tsgb || rs == RuleSet::tsgb_conv_only;
    std::vector<RuleDispatch> plan;
    for (const auto& l : g.layers) {
        Rule rule = Rule::passthrough;
        switch (l.kind) {
            case LayerKind::Linear:
                rule = (l.final && fc_rule) ? Rule::fc_tsgb : Rule::fc_vanilla;
                break;
            case LayerKind::Conv2d:
                rule = fine_rules ? Rule::conv_tsgb : Rule::conv_vanilla;
                break;
            case LayerKind::BatchNormInference:
            case LayerKind::LocalResponseNorm:
                rule = fine_rules ? Rule::norm_tsgb : Rule::norm_vanilla;
                break;
            case LayerKind::AvgPool: {
                bool use_norm = false;
                if (fine_rules) {
                    switch (opts.avgpool) {
                        case AvgPoolMode::automatic: {
                            const auto it = trace.layers.find(l.id);
                            if (it == trace.layers.end()) {
                                throw ArgumentError("trace has no activation for layer " + std::to_string(l.id));
                            }
                            use_norm = min_value(it->second.inputs.at(0)) < 0.0f;
                            break;
                        }
                        case AvgPoolMode::force_norm_rule: use_norm = true; break;
                        case AvgPoolMode::force_passthrough: use_norm = false; break;
                    }
                }
                rule = use_norm ? Rule::avgpool_tsgb : Rule::passthrough;
                break;
            }
            case LayerKind::ReLU:
                rule = rs == RuleSet::guided ? Rule::relu_guided : Rule::relu;
                break;
            case LayerKind::MaxPool:
            case LayerKind::AdaptiveAvgPool:
            case LayerKind::GlobalAvgPool:
            case LayerKind::Flatten:
            case LayerKind::Add:
            case LayerKind::Concat:
                rule = Rule::passthrough;
                break;
            default:
                throw InvariantError("no backward rule for layer " + std::to_string(l.id) + " of kind " +
                                     std::to_string(static_cast<int>(l.kind)));
        }
        plan.push_back({l.id, l.kind, rule});
    }
    return plan;
}

AttributionState run_attribution(const ModelGraph& g, const ActivationTrace& trace, const AttributionRequest& req,
                                 const AttributionOptions& opts) {
    if (req.target >= g.class_count) {
        throw ArgumentError("target class " + std::to_string(req.target) + " out of range [0, " +
                            std::to_string(g.class_count) + ")");
    }
    if (!(req.alpha > 0.0f)) throw ArgumentError("alpha must be positive");
    if (req.stop_layer && !g.index_of(*req.stop_layer)) {
        throw ArgumentError("stop layer " + std::to_string(*req.stop_layer) + " is not in the graph");
    }
    for (const auto& l : g.layers) {
        if (!trace.layers.contains(l.id)) {
            throw ArgumentError("trace was not produced from this graph (missing layer " + std::to_string(l.id) + ")");
        }
    }

    AttributionState state;
    const std::vector<RuleDispatch> plan = plan_rules(g, trace, req, opts);

    if (trace.scores[req.target] <= 0.0f) {
        state.diagnostics.warnings.push_back("target logit " + std::to_string(trace.scores[req.target]) +
                                             " is not positive; the enhancement ratio may fall below 1");
    }

    GuardCounter guard;
    const LayerSpec& out_layer = g.output_layer();
    state.node_grads.emplace(out_layer.id,
                             Tensor(trace.at(out_layer.id).output.shape(), init_output_gradient(trace, req.target)));

    for (std::size_t li = g.layers.size(); li-- > 0;) {
        const LayerSpec& l = g.layers[li];
        const RuleDispatch& rd = plan[li];
        const LayerActivation& act = trace.at(l.id);
        auto it = state.node_grads.find(l.id);
        const Tensor g_out = it != state.node_grads.end() ? it->second : Tensor(act.output.shape());

        std::vector<Tensor> g_in;
        switch (rd.rule) {
            case Rule::fc_tsgb:
                g_in.emplace_back(act.inputs[0].shape(),
                                  backward_fc_final(act.inputs[0].data(), l.weights, g_out.data(), req.alpha, opts.eps,
                                                    &guard));
                break;
            case Rule::conv_tsgb:
                g_in.push_back(opts.conv_impl == ConvRuleImpl::fast
                                   ? backward_conv_fast(act.inputs[0], act.output, g_out, l.conv, opts.eps, &guard)
                                   : backward_conv_direct(act.inputs[0], act.output, g_out, l.conv, opts.eps, &guard));
                break;
            case Rule::norm_tsgb:
                g_in.push_back(backward_norm(act.inputs[0], act.output, g_out, opts.eps, &guard));
                break;
            case Rule::avgpool_tsgb:
                g_in.push_back(backward_avgpool_norm(act.inputs[0], act.output, g_out, l.pool, opts.eps, &guard));
                break;
            default:
                g_in = backward_standard(l, act, g_out, rd.rule == Rule::relu_guided);
                break;
        }
        state.dispatch.push_back(rd);

        for (std::size_t k = 0; k < l.inputs.size(); ++k) {
            const int src = l.inputs[k];
            auto [pos, inserted] = state.node_grads.try_emplace(src, g_in[k]);
            if (!inserted) pos->second = elementwise(pos->second, g_in[k], BinaryOp::add);
        }
        state.input_grads.emplace(l.id, std::move(g_in));
        if (req.stop_layer && *req.stop_layer == l.id) break;
    }

    state.diagnostics.guarded_cells = guard.guarded;
    state.diagnostics.guarded_divisions = guard.total;
    return state;
}

}  // namespace tsgb
