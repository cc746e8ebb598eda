#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tsgb/forward.hpp"

using namespace tsgb;
using namespace tsgb::testing;

TEST(Forward, TinyFixtureMatchesReference) {
    Rng rng(21);
    const ModelGraph g = tiny_fixture();
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor(rng, g.input_shape);
        const auto trace = run_forward(g, x);
        const auto ref = reference_tiny_scores(g, x);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(trace.scores[i], ref[i], 1e-5);
        EXPECT_EQ(trace.layers.size(), g.layers.size());
        EXPECT_EQ(trace.at(1).inputs.front(), trace.at(0).output);
    }
}

TEST(Forward, BatchNormInference) {
    const ModelGraph g = bn_fixture();
    Rng rng(22);
    const Tensor x = random_tensor(rng, g.input_shape);
    const auto trace = run_forward(g, x);
    const auto& act = trace.at(1);
    const auto& p = g.layers[1].bn;
    const Tensor& in = act.inputs.front();
    for (std::size_t c = 0; c < in.shape().c; ++c) {
        for (std::size_t i = 0; i < in.shape().plane(); ++i) {
            const double v = in.channel(c)[i];
            const double ref = (v - p.mean[c]) / std::sqrt(static_cast<double>(p.var[c]) + p.eps) * p.gamma[c] + p.beta[c];
            EXPECT_NEAR(act.output.channel(c)[i], ref, 1e-5);
        }
    }
}

TEST(Forward, LocalResponseNormAcrossChannels) {
    Rng rng(23);
    LayerSpec l = simple_layer(0, LayerKind::LocalResponseNorm, {kGraphInput});
    l.lrn = {3, 0.5f, 0.75f, 2.0f};
    const Tensor x = random_tensor(rng, {1, 5, 2, 3});
    const std::vector<Tensor> in{x};
    const Tensor y = apply_layer(l, in);
    for (std::size_t c = 0; c < 5; ++c) {
        for (std::size_t i = 0; i < 6; ++i) {
            double sq = 0.0;
            for (long cc = static_cast<long>(c) - 1; cc <= static_cast<long>(c) + 1; ++cc) {
                if (cc < 0 || cc >= 5) continue;
                const double v = x.channel(static_cast<std::size_t>(cc))[i];
                sq += v * v;
            }
            const double ref = x.channel(c)[i] / std::pow(2.0 + 0.5 / 3.0 * sq, 0.75);
            EXPECT_NEAR(y.channel(c)[i], ref, 1e-6);
        }
    }
}

TEST(Forward, AddConcatGraph) {
    Rng rng(24);
    ModelGraph g;
    g.name = "branchy";
    g.input_shape = {1, 2, 5, 5};
    g.class_count = 2;
    g.layers.push_back(conv_layer(0, kGraphInput, {2, 2, 3, 3, 1, 1, 1, 1}, rng));
    g.layers.push_back(conv_layer(1, kGraphInput, {2, 2, 1, 1, 1, 1, 0, 0}, rng));
    g.layers.push_back(simple_layer(2, LayerKind::Add, {0, 1}));
    g.layers.push_back(simple_layer(3, LayerKind::Concat, {2, 0}));
    g.layers.push_back(simple_layer(4, LayerKind::GlobalAvgPool, {3}));
    g.layers.push_back(simple_layer(5, LayerKind::Flatten, {4}));
    g.layers.push_back(linear_layer(6, 5, 4, 2, rng, true));
    infer_shapes(g);
    ASSERT_TRUE(validate(g).empty()) << validate(g).front();
    const Tensor x = random_tensor(rng, g.input_shape);
    const auto t = run_forward(g, x);
    const Tensor& a = t.at(0).output;
    const Tensor& b = t.at(1).output;
    const Tensor& sum = t.at(2).output;
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_FLOAT_EQ(sum[i], a[i] + b[i]);
    const Tensor& cat = t.at(3).output;
    EXPECT_EQ(cat.shape(), (Shape{1, 4, 5, 5}));
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_EQ(cat[i], sum[i]);
        EXPECT_EQ(cat[a.numel() + i], a[i]);
    }
}

TEST(Forward, PreprocessPerChannel) {
    ModelGraph g = tiny_fixture();
    g.preprocess = {{0.5f, 0.25f}, {0.5f, 2.0f}};
    const Tensor x(g.input_shape, 1.0f);
    const Tensor p = preprocess(g, x);
    EXPECT_FLOAT_EQ(p.channel(0)[0], 1.0f);
    EXPECT_FLOAT_EQ(p.channel(1)[7], 0.375f);
}

TEST(Forward, WrongImageShapeThrows) {
    const ModelGraph g = tiny_fixture();
    EXPECT_THROW((void)run_forward(g, Tensor(Shape{1, 3, 6, 6})), ShapeError);
}

TEST(Forward, TopKAndSoftmax) {
    const std::vector<float> s{1.0f, 3.0f, 3.0f, -2.0f};
    EXPECT_EQ(top_k(s, 3), (std::vector<std::size_t>{1, 2, 0}));
    EXPECT_THROW((void)top_k(s, 5), ArgumentError);
    const auto p = softmax(s);
    double total = 0.0;
    for (double v : p) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(p[1], p[2]);
    const auto big = softmax(std::vector<float>{1000.0f, 0.0f});
    EXPECT_TRUE(std::isfinite(big[0]));
    EXPECT_NEAR(big[0], 1.0, 1e-12);
}
