#include "tsgb/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tsgb/image_io.hpp"
#include "tsgb/random.hpp"

namespace tsgb {

using json = nlohmann::json;

bool Region::hit(std::size_t row, std::size_t col, std::size_t margin) const {
    if (!mask) {
        const std::size_t x0 = box.x0 >= margin ? box.x0 - margin : 0;
        const std::size_t y0 = box.y0 >= margin ? box.y0 - margin : 0;
        return col >= x0 && col <= box.x1 + margin && row >= y0 && row <= box.y1 + margin;
    }
    const std::size_t r0 = row >= margin ? row - margin : 0;
    const std::size_t c0 = col >= margin ? col - margin : 0;
    for (std::size_t r = r0; r <= row + margin && r < mask->height; ++r) {
        for (std::size_t c = c0; c <= col + margin && c < mask->width; ++c) {
            if (mask->at(r, c)) return true;
        }
    }
    return false;
}

std::vector<std::string> validate_ground_truth(const Dataset& d) {
    std::vector<std::string> v;
    for (const auto& img : d.images) {
        const std::string tag = "image " + std::to_string(img.id);
        const std::size_t h = img.image.shape().h;
        const std::size_t w = img.image.shape().w;
        for (const auto& r : img.regions) {
            if (r.box.x0 > r.box.x1 || r.box.y0 > r.box.y1 || r.box.x1 >= w || r.box.y1 >= h) {
                v.push_back(tag + ": region box out of bounds or inverted");
            }
            if (r.mask && (r.mask->height != h || r.mask->width != w || r.mask->cells.size() != h * w)) {
                v.push_back(tag + ": region mask extent differs from the image");
            }
            if (r.class_id >= d.class_count) v.push_back(tag + ": region class out of range");
        }
        for (std::size_t label : img.labels) {
            if (label >= d.class_count) v.push_back(tag + ": label " + std::to_string(label) + " out of range");
            bool found = false;
            for (const auto& r : img.regions) found = found || r.class_id == label;
            if (!found) v.push_back(tag + ": label " + std::to_string(label) + " has no region");
        }
    }
    return v;
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json index;
    index["class_count"] = d.class_count;
    json images = json::array();
    for (const auto& img : d.images) {
        write_pnm(img.image, dir / img.file);
        json regions = json::array();
        for (const auto& r : img.regions) {
            json rj{{"class", r.class_id}, {"bbox", {r.box.x0, r.box.y0, r.box.x1, r.box.y1}}};
            if (r.mask) {
                std::string rows;
                for (auto c : r.mask->cells) rows.push_back(c ? '1' : '0');
                rj["mask"] = rows;
            }
            regions.push_back(rj);
        }
        images.push_back({{"id", img.id}, {"file", img.file}, {"labels", img.labels}, {"regions", regions}});
    }
    index["images"] = images;
    std::ofstream out(dir / "ground_truth.json", std::ios::trunc);
    if (!out) throw IoError("cannot write '" + (dir / "ground_truth.json").string() + "'");
    out << index.dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto index_path = dir / "ground_truth.json";
    std::ifstream in(index_path);
    if (!in) throw DataError("dataset directory '" + dir.string() + "' has no ground_truth.json");
    Dataset d;
    try {
        const json index = json::parse(in);
        d.class_count = index.at("class_count").get<std::size_t>();
        for (const auto& ij : index.at("images")) {
            ImageRecord rec;
            rec.id = ij.at("id").get<std::size_t>();
            rec.file = ij.at("file").get<std::string>();
            rec.labels = ij.value("labels", std::vector<std::size_t>{});
            rec.image = read_pnm(dir / rec.file);
            for (const auto& rj : ij.value("regions", json::array())) {
                Region r;
                r.class_id = rj.at("class").get<std::size_t>();
                const auto b = rj.at("bbox").get<std::vector<std::size_t>>();
                if (b.size() != 4) throw DataError("bbox must have 4 coordinates");
                r.box = {b[0], b[1], b[2], b[3]};
                if (rj.contains("mask")) {
                    Mask m{rec.image.shape().h, rec.image.shape().w, {}};
                    for (char c : rj.at("mask").get<std::string>()) m.cells.push_back(c == '1' ? 1 : 0);
                    r.mask = std::move(m);
                }
                rec.regions.push_back(std::move(r));
            }
            d.images.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed ground_truth.json: " + std::string(e.what()));
    }
    if (auto v = validate_ground_truth(d); !v.empty()) throw DataError("invalid ground truth: " + v.front());
    return d;
}

namespace {

float quantize(double v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    return static_cast<float>(std::lround(clamped * 255.0)) / 255.0f;
}

struct Placement {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t size = 0;
};

bool overlaps(const Placement& a, const Placement& b, std::size_t gap) {
    return a.x < b.x + b.size + gap && b.x < a.x + a.size + gap && a.y < b.y + b.size + gap &&
           b.y < a.y + a.size + gap;
}

void paint(Tensor& img, const Placement& p, std::size_t class_id, float intensity, float background) {
    for (std::size_t r = p.y; r < p.y + p.size; ++r) {
        for (std::size_t c = p.x; c < p.x + p.size; ++c) {
            // Raise the class channel; keep the texture on the other channels.
            float& v = img.at(0, class_id, r, c);
            v = quantize(v + (1.0f - background) * intensity);
        }
    }
}

}  // namespace

Dataset generate_synthetic_dataset(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed) {
    if (spec.class_count < 2 || spec.class_count > 3) throw ArgumentError("synthetic suite supports 2 or 3 classes");
    if (spec.target_max + 2 > std::min(spec.height, spec.width)) throw ArgumentError("target does not fit the image");
    Rng rng(seed);
    Dataset d;
    d.class_count = spec.class_count;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor img(Shape{1, 3, spec.height, spec.width});
        // Background: gray plus per-pixel texture and faint diagonal stripes.
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t r = 0; r < spec.height; ++r) {
                for (std::size_t col = 0; col < spec.width; ++col) {
                    const double stripe = 0.3 * spec.texture_amplitude * std::sin(0.7 * static_cast<double>(r + col));
                    const double noise = rng.uniform(-spec.texture_amplitude, spec.texture_amplitude);
                    img.at(0, c, r, col) = quantize(spec.background + stripe + noise);
                }
            }
        }
        const std::size_t label = static_cast<std::size_t>(rng.index(spec.class_count));
        Placement target;
        target.size = spec.target_min + static_cast<std::size_t>(rng.index(spec.target_max - spec.target_min + 1));
        target.x = 1 + static_cast<std::size_t>(rng.index(spec.width - target.size - 1));
        target.y = 1 + static_cast<std::size_t>(rng.index(spec.height - target.size - 1));
        const float t_int = static_cast<float>(rng.uniform(spec.target_intensity_min, spec.target_intensity_max));
        paint(img, target, label, t_int, spec.background);

        if (rng.uniform() < spec.distractor_probability) {
            const std::size_t other =
                (label + 1 + static_cast<std::size_t>(rng.index(spec.class_count - 1))) % spec.class_count;
            Placement dp;
            dp.size = spec.distractor_min +
                      static_cast<std::size_t>(rng.index(spec.distractor_max - spec.distractor_min + 1));
            for (int attempt = 0; attempt < 1000; ++attempt) {
                dp.x = 1 + static_cast<std::size_t>(rng.index(spec.width - dp.size - 1));
                dp.y = 1 + static_cast<std::size_t>(rng.index(spec.height - dp.size - 1));
                if (!overlaps(dp, target, 3)) break;
            }
            if (!overlaps(dp, target, 3)) {
                const float d_int =
                    static_cast<float>(rng.uniform(spec.distractor_intensity_min, spec.distractor_intensity_max));
                paint(img, dp, other, d_int, spec.background);
            }
        }

        ImageRecord rec;
        rec.id = i;
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04zu.ppm", i);
        rec.file = name;
        rec.image = std::move(img);
        rec.labels = {label};
        rec.regions.push_back(
            Region{label, BBox{target.x, target.y, target.x + target.size - 1, target.y + target.size - 1}, {}});
        d.images.push_back(std::move(rec));
    }
    return d;
}

ModelGraph build_synthetic_detector(const SyntheticSpec& spec) {
    constexpr float kThreshold = 0.1f;   // first-layer bias, removes background texture
    constexpr float kBrightness = 1.5f;  // gain of the shared brightness channel
    constexpr float kOwn = 1.0f;
    constexpr float kOther = -0.25f;
    constexpr float kShared = 1.0f;
    constexpr float kLogitScale = 40.0f;

    const std::size_t classes = spec.class_count;
    const std::size_t feat = classes + 1;
    ModelGraph g;
    g.name = "synthetic-detector";
    g.family = ModelFamily::other;
    g.input_shape = {1, 3, spec.height, spec.width};
    g.class_count = classes;
    g.preprocess = {{0.5f, 0.5f, 0.5f}, {0.5f, 0.5f, 0.5f}};

    LayerSpec conv0;
    conv0.id = 0;
    conv0.kind = LayerKind::Conv2d;
    conv0.inputs = {kGraphInput};
    conv0.conv = {3, feat, 3, 3, 1, 1, 1, 1};
    conv0.weights = Tensor(Shape{feat, 3, 3, 3});
    for (std::size_t n = 0; n < feat; ++n) {
        for (std::size_t m = 0; m < 3; ++m) {
            float w = 0.0f;
            if (n < classes) w = (m == n) ? 1.0f : (m < classes ? -1.0f : 0.0f);
            else w = kBrightness;
            for (std::size_t k = 0; k < 9; ++k) conv0.weights.at(n, m, k / 3, k % 3) = w / 9.0f;
        }
    }
    conv0.bias.assign(feat, -kThreshold);

    LayerSpec bn;
    bn.id = 1;
    bn.kind = LayerKind::BatchNormInference;
    bn.inputs = {0};
    bn.bn = {std::vector<float>(feat, 1.25f), std::vector<float>(feat, 0.0f), std::vector<float>(feat, 0.0f),
             std::vector<float>(feat, 1.0f), 1e-5f};

    LayerSpec relu0;
    relu0.id = 2;
    relu0.kind = LayerKind::ReLU;
    relu0.inputs = {1};

    LayerSpec pool;
    pool.id = 3;
    pool.kind = LayerKind::MaxPool;
    pool.inputs = {2};
    pool.pool = {2, 2, 2, 2, 0, 0};

    LayerSpec conv1;
    conv1.id = 4;
    conv1.kind = LayerKind::Conv2d;
    conv1.inputs = {3};
    conv1.conv = {feat, feat, 3, 3, 1, 1, 1, 1};
    conv1.weights = Tensor(Shape{feat, feat, 3, 3});
    for (std::size_t n = 0; n < feat; ++n) {
        for (std::size_t k = 0; k < 9; ++k) conv1.weights.at(n, n, k / 3, k % 3) = (k == 4) ? 1.0f : 0.05f;
    }
    conv1.bias.assign(feat, 0.0f);

    LayerSpec relu1;
    relu1.id = 5;
    relu1.kind = LayerKind::ReLU;
    relu1.inputs = {4};

    LayerSpec gap;
    gap.id = 6;
    gap.kind = LayerKind::GlobalAvgPool;
    gap.inputs = {5};

    LayerSpec flat;
    flat.id = 7;
    flat.kind = LayerKind::Flatten;
    flat.inputs = {6};

    LayerSpec fc;
    fc.id = 8;
    fc.kind = LayerKind::Linear;
    fc.inputs = {7};
    fc.final = true;
    fc.weights = Tensor(Shape{1, 1, classes, feat});
    for (std::size_t j = 0; j < classes; ++j) {
        for (std::size_t i = 0; i < feat; ++i) {
            const float w = i == classes ? kShared : (i == j ? kOwn : kOther);
            fc.weights.at(0, 0, j, i) = w * kLogitScale;
        }
    }
    fc.bias.assign(classes, 0.0f);

    g.layers = {conv0, bn, relu0, pool, conv1, relu1, gap, flat, fc};
    infer_shapes(g);
    return g;
}

}  // namespace tsgb
