#include <gtest/gtest.h>

#include <fstream>

#include "json.hpp"
#include "test_util.hpp"
#include "tsgb/forward.hpp"
#include "tsgb/model.hpp"

using namespace tsgb;
using namespace tsgb::testing;
using json = nlohmann::json;
using FmtKind = ModelFormatError::Kind;

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Split {
    std::uint32_t version = 0;
    json header;
    std::vector<std::uint8_t> blob;
};

Split split(const std::vector<std::uint8_t>& bytes) {
    Split s;
    std::uint64_t len = 0;
    for (int i = 0; i < 4; ++i) s.version |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
    s.header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    s.blob.assign(bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len), bytes.end());
    return s;
}

std::vector<std::uint8_t> pack(const std::string& header, const std::vector<std::uint8_t>& blob,
                               std::uint32_t version = 1) {
    std::vector<std::uint8_t> out{'N', 'N', 'S', 'M'};
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(version >> (8 * i)));
    const std::uint64_t len = header.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

FmtKind kind_of(const std::vector<std::uint8_t>& bytes) {
    try {
        (void)deserialize_model(bytes);
    } catch (const ModelFormatError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected a ModelFormatError";
    return FmtKind::Invalid;
}

}  // namespace

TEST(Nnsm, RoundTripIsByteStable) {
    for (const ModelGraph& g : {tiny_fixture(), bn_fixture()}) {
        const auto bytes = serialize_model(g);
        const ModelGraph back = deserialize_model(bytes);
        EXPECT_EQ(serialize_model(back), bytes);
        ASSERT_EQ(back.layers.size(), g.layers.size());
        for (std::size_t i = 0; i < g.layers.size(); ++i) {
            EXPECT_EQ(back.layers[i].kind, g.layers[i].kind);
            EXPECT_EQ(back.layers[i].weights, g.layers[i].weights);
            EXPECT_EQ(back.layers[i].bias, g.layers[i].bias);
            EXPECT_EQ(back.layers[i].output_shape, g.layers[i].output_shape);
        }
        EXPECT_EQ(back.family, g.family);
        EXPECT_EQ(back.class_count, g.class_count);
    }
}

TEST(Nnsm, CommittedFixtureMatchesWriterAndReferenceScores) {
    const auto committed = read_file(std::filesystem::path(TSGB_TEST_DATA) / "tiny.nnsm");
    ASSERT_FALSE(committed.empty());
    EXPECT_EQ(serialize_model(tiny_fixture()), committed);

    const ModelGraph g = load_model(std::filesystem::path(TSGB_TEST_DATA) / "tiny.nnsm");
    const Tensor x = tiny_fixture_input();
    const auto trace = run_forward(g, x);
    std::ifstream in(std::filesystem::path(TSGB_TEST_DATA) / "tiny_scores.json");
    const auto frozen = json::parse(in).at("scores").get<std::vector<double>>();
    const auto fresh = reference_tiny_scores(g, x);
    ASSERT_EQ(trace.scores.size(), frozen.size());
    for (std::size_t i = 0; i < frozen.size(); ++i) {
        EXPECT_NEAR(trace.scores[i], frozen[i], 1e-5);
        EXPECT_NEAR(fresh[i], frozen[i], 1e-12);
    }
}

TEST(Nnsm, BadMagic) {
    auto bytes = serialize_model(tiny_fixture());
    bytes[0] = 'X';
    EXPECT_EQ(kind_of(bytes), FmtKind::BadMagic);
}

TEST(Nnsm, BadVersion) {
    auto bytes = serialize_model(tiny_fixture());
    bytes[4] = 2;
    EXPECT_EQ(kind_of(bytes), FmtKind::BadVersion);
}

TEST(Nnsm, TruncatedBlob) {
    auto bytes = serialize_model(tiny_fixture());
    bytes.resize(bytes.size() - 10);
    EXPECT_EQ(kind_of(bytes), FmtKind::TruncatedBlob);
}

TEST(Nnsm, TensorRangePastBlob) {
    Split s = split(serialize_model(tiny_fixture()));
    s.header["layers"][0]["tensors"]["weight"]["offset"] = s.blob.size();
    EXPECT_EQ(kind_of(pack(s.header.dump(), s.blob)), FmtKind::TruncatedBlob);
}

TEST(Nnsm, TrailingBytesAreMalformed) {
    auto bytes = serialize_model(tiny_fixture());
    bytes.push_back(0);
    EXPECT_EQ(kind_of(bytes), FmtKind::Malformed);
}

TEST(Nnsm, HeaderLengthPastEnd) {
    auto bytes = serialize_model(tiny_fixture());
    bytes[15] = 0x7f;
    EXPECT_EQ(kind_of(bytes), FmtKind::Malformed);
}

TEST(Nnsm, HeaderNotJson) {
    const Split s = split(serialize_model(tiny_fixture()));
    EXPECT_EQ(kind_of(pack("{not json", s.blob)), FmtKind::Malformed);
}

TEST(Nnsm, UnknownLayerKind) {
    Split s = split(serialize_model(tiny_fixture()));
    s.header["layers"][1]["kind"] = "Softplus";
    EXPECT_EQ(kind_of(pack(s.header.dump(), s.blob)), FmtKind::UnknownLayerKind);
}

TEST(Nnsm, DeclaredShapeDisagreesWithInference) {
    Split s = split(serialize_model(tiny_fixture()));
    s.header["layers"][0]["output_shape"] = {3, 5, 6};
    EXPECT_EQ(kind_of(pack(s.header.dump(), s.blob)), FmtKind::ShapeInconsistency);
}

TEST(Nnsm, RefusesToSaveInvalidModel) {
    ModelGraph g = tiny_fixture();
    g.layers[3].final = false;
    try {
        (void)serialize_model(g);
        FAIL() << "expected a ModelFormatError";
    } catch (const ModelFormatError& e) {
        EXPECT_EQ(e.kind(), FmtKind::Invalid);
    }
}

TEST(Nnsm, MissingFileIsIoError) { EXPECT_THROW((void)load_model("/nonexistent/model.nnsm"), IoError); }

TEST(Validate, AcceptsFixtures) {
    EXPECT_TRUE(validate(tiny_fixture()).empty());
    EXPECT_TRUE(validate(bn_fixture()).empty());
}

TEST(Validate, FlagsStructuralProblems) {
    {
        ModelGraph g = tiny_fixture();
        g.layers[2].final = true;
        EXPECT_FALSE(validate(g).empty());
    }
    {
        ModelGraph g = bn_fixture();
        g.layers[1].bn.var[2] = 0.0f;
        const auto v = validate(g);
        ASSERT_FALSE(v.empty());
        EXPECT_NE(v.front().find("layer 1"), std::string::npos) << v.front();
    }
    {
        ModelGraph g = tiny_fixture();
        g.layers[1].inputs = {2};
        EXPECT_FALSE(validate(g).empty());
    }
    {
        ModelGraph g = tiny_fixture();
        g.class_count = 5;
        EXPECT_FALSE(validate(g).empty());
    }
    {
        ModelGraph g = tiny_fixture();
        g.layers[1].id = 0;
        EXPECT_FALSE(validate(g).empty());
    }
}

TEST(Shapes, InferenceCoversMultiInputLayers) {
    LayerSpec cat = simple_layer(9, LayerKind::Concat, {1, 2});
    const std::vector<Shape> in{{1, 3, 4, 4}, {1, 5, 4, 4}};
    EXPECT_EQ(infer_output_shape(cat, in), (Shape{1, 8, 4, 4}));
    LayerSpec add = simple_layer(9, LayerKind::Add, {1, 2});
    EXPECT_THROW((void)infer_output_shape(add, in), ShapeError);
    const std::vector<Shape> same{{1, 3, 4, 4}, {1, 3, 4, 4}};
    EXPECT_EQ(infer_output_shape(add, same), (Shape{1, 3, 4, 4}));
    LayerSpec flat = simple_layer(9, LayerKind::Flatten, {1});
    EXPECT_EQ(infer_output_shape(flat, std::vector<Shape>{{1, 3, 4, 4}}), (Shape{1, 48, 1, 1}));
}

TEST(Names, LayerKindStrings) {
    for (LayerKind k : {LayerKind::Conv2d, LayerKind::Linear, LayerKind::ReLU, LayerKind::MaxPool, LayerKind::AvgPool,
                        LayerKind::AdaptiveAvgPool, LayerKind::GlobalAvgPool, LayerKind::BatchNormInference,
                        LayerKind::LocalResponseNorm, LayerKind::Flatten, LayerKind::Add, LayerKind::Concat}) {
        EXPECT_EQ(layer_kind_from_string(to_string(k)), k);
    }
    EXPECT_THROW((void)layer_kind_from_string("Dropout"), ModelFormatError);
    EXPECT_EQ(model_family_from_string("resnet-like"), ModelFamily::resnet_like);
}
