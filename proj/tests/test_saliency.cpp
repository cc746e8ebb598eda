#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "tsgb/image_io.hpp"
#include "tsgb/saliency.hpp"

using namespace tsgb;
using namespace tsgb::testing;

namespace {

SaliencyMap map_of(std::size_t h, std::size_t w, std::vector<float> v) {
    SaliencyMap m;
    m.height = h;
    m.width = w;
    m.values = std::move(v);
    return m;
}

}  // namespace

TEST(Assemble, ChannelSumOfGradientTimesInput) {
    const ModelGraph g = tiny_fixture();
    const auto trace = run_forward(g, tiny_fixture_input());
    AttributionRequest req;
    req.target = 1;
    const auto state = run_attribution(g, trace, req);
    const SaliencyMap m = assemble(state, trace, {1, 0.8f, RuleSet::tsgb, g.name});
    ASSERT_EQ(m.height, 6u);
    ASSERT_EQ(m.width, 6u);
    const Tensor& grad = state.input_gradient();
    const Tensor& x = trace.network_input;
    for (std::size_t p = 0; p < 36; ++p) {
        EXPECT_FLOAT_EQ(m.values[p], grad.channel(0)[p] * x.channel(0)[p] + grad.channel(1)[p] * x.channel(1)[p]);
    }
    EXPECT_EQ(m.meta.target, 1u);

    const SaliencyMap mid = assemble_at(state, trace, 3);
    EXPECT_EQ(mid.values.size(), 1u);
}

TEST(Saliency, TruncationKeepsPositives) {
    const SaliencyMap t = truncate_negatives(map_of(1, 4, {-1, 2, 0, -0.5f}));
    EXPECT_EQ(t.values, (std::vector<float>{0, 2, 0, 0}));
}

TEST(Saliency, BoundingBoxAtThreshold) {
    // Max 10; fraction 0.5 keeps cells >= 5.
    const SaliencyMap m = map_of(3, 4, {0, 5, 0, 0, 0, 10, 4.9f, 0, 0, 0, 0, 6});
    EXPECT_EQ(binarize_bbox(m, 0.5f), (BBox{1, 0, 3, 2}));
    EXPECT_EQ(binarize_bbox(m, 0.7f), (BBox{1, 1, 1, 1}));
    EXPECT_THROW((void)binarize_bbox(m, 1.0f), ArgumentError);
    EXPECT_THROW((void)binarize_bbox(m, 0.0f), ArgumentError);
    EXPECT_THROW((void)binarize_bbox(map_of(1, 2, {-1, 0}), 0.5f), EmptyMapError);
}

TEST(Saliency, ArgmaxFirstInRowMajorOrder) {
    EXPECT_EQ(argmax_point(map_of(2, 3, {1, 7, 2, 7, 0, 7})), (std::pair<std::size_t, std::size_t>{0, 1}));
}

TEST(Saliency, IouExactFractionAndBoundary) {
    const BBox a{0, 0, 1, 1};  // area 4
    const BBox b{0, 0, 3, 1};  // area 8, overlap 4
    EXPECT_EQ(iou_fraction(a, b), (std::pair<std::size_t, std::size_t>{4, 8}));
    EXPECT_DOUBLE_EQ(iou(a, b), 0.5);
    EXPECT_EQ(iou_fraction(a, BBox{5, 5, 6, 6}).first, 0u);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
}

TEST(Render, GrayscaleMinMax) {
    const auto bytes = render_image(map_of(1, 3, {-1, 0, 1}), ExportMode::grayscale);
    const std::string header = "P5\n3 1\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 3);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
    EXPECT_EQ(bytes[header.size()], 0);
    EXPECT_EQ(bytes[header.size() + 1], 128);
    EXPECT_EQ(bytes[header.size() + 2], 255);
}

TEST(Render, ConstantMapIsMidGray) {
    const auto bytes = render_image(map_of(1, 2, {3, 3}), ExportMode::grayscale);
    EXPECT_EQ(bytes[bytes.size() - 1], 128);
    EXPECT_EQ(bytes[bytes.size() - 2], 128);
}

TEST(Render, SignedDivergingColors) {
    const auto bytes = render_image(map_of(1, 2, {2, -1}), ExportMode::signed_diverging);
    const std::string header = "P6\n2 1\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 6);
    const std::uint8_t* px = bytes.data() + header.size();
    EXPECT_EQ(px[0], 255);  // full red
    EXPECT_EQ(px[2], 0);
    EXPECT_EQ(px[3], 0);
    EXPECT_GT(px[5], 0);  // half blue
    EXPECT_LT(px[5], 255);
}

TEST(Render, ExportWritesFileAndRejectsEmptyPath) {
    TempDir dir("render");
    const SaliencyMap m = map_of(2, 2, {0, 1, 2, 3});
    export_image(m, dir.path / "m.pgm", ExportMode::grayscale);
    const Tensor back = read_pnm(dir.path / "m.pgm");
    EXPECT_EQ(back.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_FLOAT_EQ(back[3], 1.0f);
    EXPECT_THROW(export_image(m, "", ExportMode::grayscale), IoError);
}

TEST(ImageIo, PpmRoundTrip) {
    Rng rng(51);
    Tensor img(Shape{1, 3, 4, 5});
    for (auto& v : img.data()) v = static_cast<float>(rng.index(256)) / 255.0f;
    const Tensor back = decode_pnm(encode_pnm(img));
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_FLOAT_EQ(back[i], img[i]);
}

TEST(ImageIo, RejectsMalformedFiles) {
    const std::string bad = "P3\n1 1\n255\n0 0 0\n";
    EXPECT_THROW((void)decode_pnm(std::vector<std::uint8_t>(bad.begin(), bad.end())), DataError);
    const std::string short_data = "P5\n2 2\n255\nab";
    EXPECT_THROW((void)decode_pnm(std::vector<std::uint8_t>(short_data.begin(), short_data.end())), DataError);
    const std::string wide = "P5\n1 1\n65535\nab";
    EXPECT_THROW((void)decode_pnm(std::vector<std::uint8_t>(wide.begin(), wide.end())), DataError);
    EXPECT_THROW((void)read_pnm("/nonexistent.ppm"), IoError);
}

TEST(ImageIo, HeaderCommentsAreSkipped) {
    const std::string header = "P5\n# made by hand\n2 1\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.push_back(0);
    bytes.push_back(255);
    const Tensor t = decode_pnm(bytes);
    EXPECT_EQ(t.shape(), (Shape{1, 1, 1, 2}));
    EXPECT_FLOAT_EQ(t[1], 1.0f);
}
