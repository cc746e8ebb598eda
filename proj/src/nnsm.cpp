// NNSM v1: "NNSM" | u32 version | u64 header length | JSON header | f32-LE blob.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "tsgb/model.hpp"

namespace tsgb {

namespace {

using json = nlohmann::json;
using FmtKind = ModelFormatError::Kind;

constexpr std::array<std::uint8_t, 4> kMagic{'N', 'N', 'S', 'M'};
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

class BlobWriter {
public:
    json add(std::span<const float> values, const std::vector<std::size_t>& shape) {
        const std::size_t offset = bytes_.size();
        for (float f : values) put_le(bytes_, std::bit_cast<std::uint32_t>(f));
        return json{{"offset", offset}, {"length", values.size() * 4}, {"shape", shape}};
    }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class BlobReader {
public:
    explicit BlobReader(std::span<const std::uint8_t> blob) : blob_(blob) {}

    std::vector<float> read(const json& entry, std::size_t expected_count, const std::string& what) const {
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto length = entry.at("length").get<std::uint64_t>();
        if (length % 4 != 0 || length / 4 != expected_count) {
            throw ModelFormatError(FmtKind::ShapeInconsistency,
                                   what + ": blob length " + std::to_string(length) + " bytes does not hold " +
                                       std::to_string(expected_count) + " floats");
        }
        if (offset > blob_.size() || length > blob_.size() - offset) {
            throw ModelFormatError(FmtKind::TruncatedBlob, what + ": tensor bytes [" + std::to_string(offset) + ", " +
                                                               std::to_string(offset + length) +
                                                               ") run past the end of the weight blob (" +
                                                               std::to_string(blob_.size()) + " bytes)");
        }
        std::vector<float> out(expected_count);
        for (std::size_t i = 0; i < expected_count; ++i) {
            out[i] = std::bit_cast<float>(get_le<std::uint32_t>(blob_.data() + offset + 4 * i));
        }
        return out;
    }

private:
    std::span<const std::uint8_t> blob_;
};

json pair_json(std::size_t a, std::size_t b) { return json::array({a, b}); }

std::vector<std::size_t> shape_vec(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

json layer_to_json(const LayerSpec& l, BlobWriter& blob) {
    json j;
    j["id"] = l.id;
    j["kind"] = std::string(to_string(l.kind));
    j["inputs"] = l.inputs;
    j["output_shape"] = json::array({l.output_shape.c, l.output_shape.h, l.output_shape.w});
    json tensors = json::object();
    switch (l.kind) {
        case LayerKind::Conv2d:
            j["geometry"] = {{"in_channels", l.conv.in_channels},
                             {"out_channels", l.conv.out_channels},
                             {"kernel", pair_json(l.conv.kernel_h, l.conv.kernel_w)},
                             {"stride", pair_json(l.conv.stride_h, l.conv.stride_w)},
                             {"padding", pair_json(l.conv.pad_h, l.conv.pad_w)}};
            tensors["weight"] = blob.add(l.weights.data(), shape_vec(l.weights.shape()));
            if (!l.bias.empty()) tensors["bias"] = blob.add(l.bias, {l.bias.size()});
            break;
        case LayerKind::Linear:
            j["final"] = l.final;
            tensors["weight"] = blob.add(l.weights.data(), {l.weights.shape().h, l.weights.shape().w});
            if (!l.bias.empty()) tensors["bias"] = blob.add(l.bias, {l.bias.size()});
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            j["pool"] = {{"kernel", pair_json(l.pool.kernel_h, l.pool.kernel_w)},
                         {"stride", pair_json(l.pool.stride_h, l.pool.stride_w)},
                         {"padding", pair_json(l.pool.pad_h, l.pool.pad_w)}};
            break;
        case LayerKind::AdaptiveAvgPool:
            j["output_size"] = pair_json(l.adaptive_out.h, l.adaptive_out.w);
            break;
        case LayerKind::BatchNormInference:
            j["eps"] = static_cast<double>(l.bn.eps);
            tensors["gamma"] = blob.add(l.bn.gamma, {l.bn.gamma.size()});
            tensors["beta"] = blob.add(l.bn.beta, {l.bn.beta.size()});
            tensors["running_mean"] = blob.add(l.bn.mean, {l.bn.mean.size()});
            tensors["running_var"] = blob.add(l.bn.var, {l.bn.var.size()});
            break;
        case LayerKind::LocalResponseNorm:
            j["lrn"] = {{"size", l.lrn.size},
                        {"alpha", static_cast<double>(l.lrn.alpha)},
                        {"beta", static_cast<double>(l.lrn.beta)},
                        {"k", static_cast<double>(l.lrn.k)}};
            break;
        default:
            break;
    }
    if (!tensors.empty()) j["tensors"] = tensors;
    return j;
}

std::pair<std::size_t, std::size_t> read_pair(const json& j) {
    if (!j.is_array() || j.size() != 2) throw ModelFormatError(FmtKind::Malformed, "expected a [h, w] pair");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

std::size_t product(const std::vector<std::size_t>& v) {
    std::size_t p = 1;
    for (auto x : v) p *= x;
    return p;
}

LayerSpec layer_from_json(const json& j, const BlobReader& blob) {
    LayerSpec l;
    l.id = j.at("id").get<int>();
    l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    l.inputs = j.at("inputs").get<std::vector<int>>();
    const auto os = j.at("output_shape").get<std::vector<std::size_t>>();
    if (os.size() != 3) throw ModelFormatError(FmtKind::Malformed, "output_shape must have 3 extents");
    l.output_shape = {1, os[0], os[1], os[2]};
    const std::string tag = "layer " + std::to_string(l.id);
    const json empty = json::object();
    const json& tensors = j.contains("tensors") ? j.at("tensors") : empty;

    auto read_vec = [&](const char* name, std::size_t count) {
        return blob.read(tensors.at(name), count, tag + " tensor '" + name + "'");
    };
    auto read_optional_bias = [&](std::size_t count) {
        if (!tensors.contains("bias")) return std::vector<float>{};
        return read_vec("bias", count);
    };

    switch (l.kind) {
        case LayerKind::Conv2d: {
            const json& g = j.at("geometry");
            l.conv.in_channels = g.at("in_channels").get<std::size_t>();
            l.conv.out_channels = g.at("out_channels").get<std::size_t>();
            std::tie(l.conv.kernel_h, l.conv.kernel_w) = read_pair(g.at("kernel"));
            std::tie(l.conv.stride_h, l.conv.stride_w) = read_pair(g.at("stride"));
            std::tie(l.conv.pad_h, l.conv.pad_w) = read_pair(g.at("padding"));
            const Shape ws{l.conv.out_channels, l.conv.in_channels, l.conv.kernel_h, l.conv.kernel_w};
            const auto declared = tensors.at("weight").at("shape").get<std::vector<std::size_t>>();
            if (declared != shape_vec(ws)) {
                throw ModelFormatError(FmtKind::ShapeInconsistency, tag + ": weight shape disagrees with geometry");
            }
            l.weights = Tensor(ws, read_vec("weight", ws.numel()));
            l.bias = read_optional_bias(l.conv.out_channels);
            break;
        }
        case LayerKind::Linear: {
            l.final = j.value("final", false);
            const auto declared = tensors.at("weight").at("shape").get<std::vector<std::size_t>>();
            if (declared.size() != 2) {
                throw ModelFormatError(FmtKind::ShapeInconsistency, tag + ": Linear weight must be out x in");
            }
            const Shape ws{1, 1, declared[0], declared[1]};
            l.weights = Tensor(ws, read_vec("weight", product(declared)));
            l.bias = read_optional_bias(declared[0]);
            break;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            const json& p = j.at("pool");
            std::tie(l.pool.kernel_h, l.pool.kernel_w) = read_pair(p.at("kernel"));
            std::tie(l.pool.stride_h, l.pool.stride_w) = read_pair(p.at("stride"));
            std::tie(l.pool.pad_h, l.pool.pad_w) = read_pair(p.at("padding"));
            break;
        }
        case LayerKind::AdaptiveAvgPool:
            std::tie(l.adaptive_out.h, l.adaptive_out.w) = read_pair(j.at("output_size"));
            break;
        case LayerKind::BatchNormInference: {
            l.bn.eps = static_cast<float>(j.at("eps").get<double>());
            const std::size_t c = l.output_shape.c;
            l.bn.gamma = read_vec("gamma", c);
            l.bn.beta = read_vec("beta", c);
            l.bn.mean = read_vec("running_mean", c);
            l.bn.var = read_vec("running_var", c);
            break;
        }
        case LayerKind::LocalResponseNorm: {
            const json& p = j.at("lrn");
            l.lrn.size = p.at("size").get<std::size_t>();
            l.lrn.alpha = static_cast<float>(p.at("alpha").get<double>());
            l.lrn.beta = static_cast<float>(p.at("beta").get<double>());
            l.lrn.k = static_cast<float>(p.at("k").get<double>());
            break;
        }
        default:
            break;
    }
    return l;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelGraph& g) {
    if (auto violations = validate(g); !violations.empty()) {
        throw ModelFormatError(FmtKind::Invalid, "refusing to save an invalid model: " + violations.front());
    }
    ModelGraph shaped = g;
    infer_shapes(shaped);

    BlobWriter blob;
    json layers = json::array();
    for (const auto& l : shaped.layers) layers.push_back(layer_to_json(l, blob));

    json header;
    header["format"] = "NNSM";
    header["version"] = kNnsmVersion;
    header["name"] = g.name;
    header["family"] = std::string(to_string(g.family));
    header["input_shape"] = json::array({g.input_shape.c, g.input_shape.h, g.input_shape.w});
    header["class_count"] = g.class_count;
    json mean = json::array();
    json stdv = json::array();
    for (float m : g.preprocess.mean) mean.push_back(static_cast<double>(m));
    for (float s : g.preprocess.std) stdv.push_back(static_cast<double>(s));
    header["preprocess"] = {{"mean", mean}, {"std", stdv}};
    header["blob_bytes"] = blob.bytes().size();
    header["layers"] = layers;

    const std::string text = header.dump(1);
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    put_le<std::uint32_t>(out, kNnsmVersion);
    put_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.bytes().begin(), blob.bytes().end());
    return out;
}

ModelGraph deserialize_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw ModelFormatError(FmtKind::BadMagic, "not an NNSM file (magic bytes mismatch)");
    }
    if (bytes.size() < kPreambleBytes) throw ModelFormatError(FmtKind::Malformed, "NNSM preamble is truncated");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kNnsmVersion) {
        throw ModelFormatError(FmtKind::BadVersion, "unsupported NNSM version " + std::to_string(version) +
                                                        " (expected " + std::to_string(kNnsmVersion) + ")");
    }
    const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
    if (header_len > bytes.size() - kPreambleBytes) {
        throw ModelFormatError(FmtKind::Malformed, "NNSM header length runs past the end of the file");
    }
    const auto header_bytes = bytes.subspan(kPreambleBytes, header_len);
    const auto blob = bytes.subspan(kPreambleBytes + header_len);

    json header;
    try {
        header = json::parse(header_bytes.begin(), header_bytes.end());
    } catch (const json::exception& e) {
        throw ModelFormatError(FmtKind::Malformed, std::string("NNSM header is not valid JSON: ") + e.what());
    }

    ModelGraph g;
    try {
        const auto blob_bytes = header.at("blob_bytes").get<std::uint64_t>();
        if (blob.size() < blob_bytes) {
            throw ModelFormatError(FmtKind::TruncatedBlob, "weight blob holds " + std::to_string(blob.size()) +
                                                               " bytes but the header declares " +
                                                               std::to_string(blob_bytes));
        }
        if (blob.size() > blob_bytes) {
            throw ModelFormatError(FmtKind::Malformed, "trailing bytes after the weight blob");
        }
        g.name = header.at("name").get<std::string>();
        g.family = model_family_from_string(header.at("family").get<std::string>());
        const auto is = header.at("input_shape").get<std::vector<std::size_t>>();
        if (is.size() != 3) throw ModelFormatError(FmtKind::Malformed, "input_shape must have 3 extents");
        g.input_shape = {1, is[0], is[1], is[2]};
        g.class_count = header.at("class_count").get<std::size_t>();
        for (const auto& m : header.at("preprocess").at("mean")) g.preprocess.mean.push_back(static_cast<float>(m.get<double>()));
        for (const auto& s : header.at("preprocess").at("std")) g.preprocess.std.push_back(static_cast<float>(s.get<double>()));
        const BlobReader reader(blob);
        for (const auto& lj : header.at("layers")) g.layers.push_back(layer_from_json(lj, reader));
    } catch (const json::exception& e) {
        throw ModelFormatError(FmtKind::Malformed, std::string("NNSM header field error: ") + e.what());
    }

    ModelGraph inferred = g;
    try {
        infer_shapes(inferred);
    } catch (const ShapeError& e) {
        throw ModelFormatError(FmtKind::ShapeInconsistency, e.what());
    }
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        if (g.layers[i].output_shape != inferred.layers[i].output_shape) {
            throw ModelFormatError(FmtKind::ShapeInconsistency,
                                   "layer " + std::to_string(g.layers[i].id) + ": declared output shape " +
                                       g.layers[i].output_shape.str() + " but inputs produce " +
                                       inferred.layers[i].output_shape.str());
        }
    }
    if (auto violations = validate(g); !violations.empty()) {
        std::string msg = "invalid model:";
        for (const auto& v : violations) msg += "\n  " + v;
        throw ModelFormatError(FmtKind::Invalid, msg);
    }
    return g;
}

ModelGraph load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

void save_model(const ModelGraph& g, const std::filesystem::path& path) {
    const auto bytes = serialize_model(g);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write model file '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to model file '" + path.string() + "'");
}

}  // namespace tsgb
