#include "tsgb/forward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsgb {

const LayerActivation& ActivationTrace::at(int id) const {
    const auto it = layers.find(id);
    if (it == layers.end()) throw ArgumentError("activation trace has no entry for layer " + std::to_string(id));
    return it->second;
}

Tensor preprocess(const ModelGraph& g, const Tensor& image) {
    if (g.preprocess.mean.empty()) return image;
    Tensor out = image;
    const Shape& s = image.shape();
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const float m = g.preprocess.mean[c];
            const float sd = g.preprocess.std[c];
            for (std::size_t i = 0; i < s.plane(); ++i) {
                float& v = out[out.offset(b, c, 0, 0) + i];
                v = (v - m) / sd;
            }
        }
    }
    return out;
}

namespace {

Tensor batch_norm(const Tensor& x, const BatchNormParams& bn) {
    Tensor out(x.shape());
    const Shape& s = x.shape();
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const float inv = 1.0f / std::sqrt(bn.var[c] + bn.eps);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const std::size_t o = x.offset(b, c, 0, 0) + i;
                out[o] = (x[o] - bn.mean[c]) * inv * bn.gamma[c] + bn.beta[c];
            }
        }
    }
    return out;
}

Tensor local_response_norm(const Tensor& x, const LrnParams& p) {
    Tensor out(x.shape());
    const Shape& s = x.shape();
    const std::size_t before = p.size / 2;
    const std::size_t after = (p.size - 1) / 2;
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
                const float denom = std::pow(p.k + p.alpha / static_cast<float>(p.size) * sq, p.beta);
                const std::size_t o = x.offset(b, c, 0, 0) + i;
                out[o] = x[o] / denom;
            }
        }
    }
    return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
    const Shape& s0 = parts[0].shape();
    Shape out_shape = s0;
    out_shape.c = 0;
    for (const auto& p : parts) out_shape.c += p.shape().c;
    Tensor out(out_shape);
    for (std::size_t b = 0; b < s0.n; ++b) {
        std::size_t c0 = 0;
        for (const auto& p : parts) {
            const std::size_t count = p.shape().c * s0.plane();
            std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(p.offset(b, 0, 0, 0)), count,
                        out.data().begin() + static_cast<std::ptrdiff_t>(out.offset(b, c0, 0, 0)));
            c0 += p.shape().c;
        }
    }
    return out;
}

}  // namespace

Tensor apply_layer(const LayerSpec& l, std::span<const Tensor> in, std::vector<std::size_t>* argmax) {
    std::vector<Shape> shapes;
    for (const auto& t : in) shapes.push_back(t.shape());
    const Shape out_shape = infer_output_shape(l, shapes);
    const Tensor& x = in[0];
    switch (l.kind) {
        case LayerKind::Conv2d:
            return conv2d(x, l.weights, l.bias, l.conv);
        case LayerKind::Linear:
            return Tensor(out_shape, linear(x.data(), l.weights, l.bias));
        case LayerKind::ReLU:
            return relu(x);
        case LayerKind::MaxPool: {
            auto r = max_pool(x, l.pool);
            if (argmax) *argmax = std::move(r.argmax);
            return std::move(r.output);
        }
        case LayerKind::AvgPool:
            return avg_pool(x, l.pool);
        case LayerKind::AdaptiveAvgPool:
            return adaptive_avg_pool(x, l.adaptive_out);
        case LayerKind::GlobalAvgPool:
            return global_avg_pool(x);
        case LayerKind::BatchNormInference:
            return batch_norm(x, l.bn);
        case LayerKind::LocalResponseNorm:
            return local_response_norm(x, l.lrn);
        case LayerKind::Flatten:
            return x.reshaped(out_shape);
        case LayerKind::Add: {
            Tensor out = x;
            for (std::size_t k = 1; k < in.size(); ++k) out = elementwise(out, in[k], BinaryOp::add);
            return out;
        }
        case LayerKind::Concat:
            return concat_channels(in);
    }
    throw InvariantError("no forward rule for layer " + std::to_string(l.id));
}

ActivationTrace run_forward(const ModelGraph& g, const Tensor& image) {
    if (image.shape() != g.input_shape) {
        throw ShapeError("image shape " + image.shape().str() + " does not match the model input " +
                         g.input_shape.str());
    }
    ActivationTrace trace;
    trace.image = image;
    trace.network_input = preprocess(g, image);
    for (const auto& l : g.layers) {
        LayerActivation act;
        for (int src : l.inputs) {
            act.inputs.push_back(src == kGraphInput ? trace.network_input : trace.layers.at(src).output);
        }
        try {
            act.output = apply_layer(l, act.inputs, l.kind == LayerKind::MaxPool ? &act.argmax : nullptr);
        } catch (const ShapeError& e) {
            throw ShapeError(std::string("forward pass failed at layer ") + std::to_string(l.id) + ": " + e.what());
        }
        if (act.output.shape() != l.output_shape && l.output_shape.numel() != 0) {
            throw ShapeError("layer " + std::to_string(l.id) + " produced " + act.output.shape().str() +
                             ", expected " + l.output_shape.str());
        }
        trace.layers.emplace(l.id, std::move(act));
    }
    const auto& out = trace.layers.at(g.output_layer().id).output;
    trace.scores.assign(out.data().begin(), out.data().end());
    return trace;
}

std::vector<std::size_t> top_k(std::span<const float> scores, std::size_t k) {
    if (k > scores.size()) {
        throw ArgumentError("top_k: k=" + std::to_string(k) + " exceeds class count " + std::to_string(scores.size()));
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(k);
    return idx;
}

std::vector<double> softmax(std::span<const float> scores) {
    std::vector<double> p(scores.size());
    if (scores.empty()) return p;
    const double mx = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = std::exp(static_cast<double>(scores[i]) - mx);
        total += p[i];
    }
    for (auto& v : p) v /= total;
    return p;
}

}  // namespace tsgb
