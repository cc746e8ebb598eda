#include "tsgb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tsgb/random.hpp"

namespace tsgb {

using json = nlohmann::json;

namespace {

SaliencyMap saliency_from_trace(const ModelGraph& g, const ActivationTrace& trace, const AttributionRequest& req,
                                const AttributionOptions& opts, Diagnostics* diag) {
    AttributionState state = run_attribution(g, trace, req, opts);
    if (diag) *diag = state.diagnostics;
    return assemble(state, trace, {req.target, req.alpha, req.rule_set, g.name});
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

json values_json(const std::map<std::string, double>& values) {
    json j = json::object();
    for (const auto& [k, v] : values) j[k] = v;
    return j;
}

}  // namespace

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    return {mean, std::sqrt(sq / static_cast<double>(v.size()))};
}

std::string report_to_jsonl(const EvalReport& r) {
    std::string out;
    for (const auto& rec : r.records) {
        json j;
        j["metric"] = r.metric;
        j["image"] = rec.image_id;
        if (rec.class_id) j["class"] = *rec.class_id;
        j["values"] = values_json(rec.values);
        out += j.dump() + "\n";
    }
    json agg;
    agg["metric"] = r.metric;
    agg["aggregate"] = {{"mean", r.mean}, {"std", r.stddev}, {"records", r.records.size()}};
    json cfg = json::object();
    for (const auto& [k, v] : r.config) cfg[k] = v;
    agg["config"] = cfg;
    agg["extras"] = values_json(r.extras);
    out += agg.dump() + "\n";
    return out;
}

std::string summary_table(const EvalReport& r) {
    std::ostringstream os;
    os << "metric     : " << r.metric << "\n";
    os << "records    : " << r.records.size() << "\n";
    os << "mean       : " << format_double(r.mean) << "\n";
    os << "std        : " << format_double(r.stddev) << "\n";
    for (const auto& [k, v] : r.config) os << "config     : " << k << " = " << v << "\n";
    for (const auto& [k, v] : r.extras) os << "detail     : " << k << " = " << format_double(v) << "\n";
    return os.str();
}

SaliencyMap compute_saliency(const ModelGraph& g, const Tensor& image, const AttributionRequest& req,
                             const AttributionOptions& opts, Diagnostics* diag) {
    const ActivationTrace trace = run_forward(g, image);
    return saliency_from_trace(g, trace, req, opts, diag);
}

// ---- deletion ------------------------------------------------------------------

DeletionResult deletion_curve(const ModelGraph& g, const Tensor& image, const std::vector<std::size_t>& order,
                              std::size_t target, double step_fraction, float erase_baseline) {
    if (target >= g.class_count) {
        throw ArgumentError("target class " + std::to_string(target) + " out of range [0, " +
                            std::to_string(g.class_count) + ")");
    }
    if (!(step_fraction > 0.0 && step_fraction <= 0.5)) throw ArgumentError("step fraction must lie in (0, 0.5]");
    const Shape& s = image.shape();
    const std::size_t pixels = s.plane();
    if (order.size() != pixels) throw ArgumentError("pixel order must rank every pixel exactly once");

    std::vector<float> fill(s.c, erase_baseline);
    if (!g.preprocess.mean.empty()) {
        for (std::size_t c = 0; c < s.c; ++c) fill[c] = g.preprocess.mean[c] + erase_baseline * g.preprocess.std[c];
    }

    DeletionResult r;
    Tensor work = image;
    auto probability = [&]() { return softmax(run_forward(g, work).scores)[target]; };
    r.fractions.push_back(0.0);
    r.probabilities.push_back(probability());

    const auto steps = static_cast<std::size_t>(std::ceil(1.0 / step_fraction - 1e-9));
    std::size_t removed = 0;
    for (std::size_t k = 1; k <= steps; ++k) {
        const auto upto = std::min(pixels, static_cast<std::size_t>(std::llround(static_cast<double>(k) * step_fraction *
                                                                                 static_cast<double>(pixels))));
        const std::size_t end = k == steps ? pixels : upto;
        for (; removed < end; ++removed) {
            const std::size_t p = order[removed];
            for (std::size_t c = 0; c < s.c; ++c) work[c * pixels + p] = fill[c];
        }
        r.fractions.push_back(static_cast<double>(removed) / static_cast<double>(pixels));
        r.probabilities.push_back(probability());
        ++r.steps;
    }
    for (std::size_t i = 1; i < r.fractions.size(); ++i) {
        r.auc += 0.5 * (r.probabilities[i] + r.probabilities[i - 1]) * (r.fractions[i] - r.fractions[i - 1]);
    }
    return r;
}

std::vector<std::size_t> saliency_order(const SaliencyMap& m) {
    const SaliencyMap t = truncate_negatives(m);
    std::vector<std::size_t> order(t.values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return t.values[a] > t.values[b]; });
    return order;
}

DeletionResult deletion_score(const ModelGraph& g, const Tensor& image, const SaliencyMap& m, std::size_t target,
                              double step_fraction, float erase_baseline) {
    return deletion_curve(g, image, saliency_order(m), target, step_fraction, erase_baseline);
}

double random_deletion_auc(const ModelGraph& g, const Tensor& image, std::size_t target, double step_fraction,
                           std::size_t seeds, std::uint64_t base_seed, float erase_baseline) {
    if (seeds == 0) throw ArgumentError("random deletion needs at least one seed");
    double total = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
        std::vector<std::size_t> order(image.shape().plane());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(base_seed + s);
        rng.shuffle(order);
        total += deletion_curve(g, image, order, target, step_fraction, erase_baseline).auc;
    }
    return total / static_cast<double>(seeds);
}

// ---- pointing game -------------------------------------------------------------

EvalReport pointing_game(const std::vector<LabeledMap>& maps, const Dataset& gt, std::size_t margin, bool truncate) {
    EvalReport r;
    r.metric = "pointing_game";
    r.config["margin"] = std::to_string(margin);
    r.config["truncate"] = truncate ? "true" : "false";
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_class;  // hits, total
    for (const auto& img : gt.images) {
        for (std::size_t label : img.labels) {
            const auto it = std::find_if(maps.begin(), maps.end(), [&](const LabeledMap& m) {
                return m.image_id == img.id && m.class_id == label;
            });
            if (it == maps.end()) {
                throw DataError("no saliency map for image " + std::to_string(img.id) + ", class " + std::to_string(label));
            }
            const SaliencyMap m = truncate ? truncate_negatives(it->map) : it->map;
            const auto [row, col] = argmax_point(m);
            bool hit = false;
            for (const auto& region : img.regions) {
                if (region.class_id == label && region.hit(row, col, margin)) hit = true;
            }
            auto& tally = per_class[label];
            tally.first += hit ? 1 : 0;
            tally.second += 1;
            r.records.push_back({img.id, label,
                                 {{"hit", hit ? 1.0 : 0.0}, {"row", static_cast<double>(row)},
                                  {"col", static_cast<double>(col)}}});
        }
    }
    std::vector<double> accuracies;
    for (const auto& [cls, tally] : per_class) {
        const double acc = static_cast<double>(tally.first) / static_cast<double>(tally.second);
        r.extras["class_" + std::to_string(cls) + "_accuracy"] = acc;
        accuracies.push_back(acc);
    }
    std::tie(r.mean, r.stddev) = mean_std(accuracies);
    return r;
}

// ---- localization --------------------------------------------------------------

EvalReport loc_error(const ModelGraph& g, const Dataset& d, std::size_t k, float threshold_fraction,
                     const AttributionRequest& req, const AttributionOptions& opts) {
    for (const auto& img : d.images) {
        if (img.regions.empty()) throw DataError("image " + std::to_string(img.id) + " has no ground-truth boxes");
    }
    EvalReport r;
    r.metric = "loc_error";
    r.config["k"] = std::to_string(k);
    r.config["threshold_fraction"] = format_double(threshold_fraction);
    r.config["alpha"] = format_double(req.alpha);
    r.config["rule_set"] = std::string(to_string(req.rule_set));
    std::vector<double> errors;
    for (const auto& img : d.images) {
        const ActivationTrace trace = run_forward(g, img.image);
        bool correct = false;
        double best_iou = 0.0;
        for (std::size_t cls : top_k(trace.scores, k)) {
            if (std::find(img.labels.begin(), img.labels.end(), cls) == img.labels.end()) continue;
            AttributionRequest cr = req;
            cr.target = cls;
            const SaliencyMap m = saliency_from_trace(g, trace, cr, opts, nullptr);
            BBox box;
            try {
                box = binarize_bbox(truncate_negatives(m), threshold_fraction);
            } catch (const EmptyMapError&) {
                continue;
            }
            for (const auto& region : img.regions) {
                if (region.class_id != cls) continue;
                const auto [inter, uni] = iou_fraction(box, region.box);
                best_iou = std::max(best_iou, static_cast<double>(inter) / static_cast<double>(uni));
                if (2 * inter >= uni) correct = true;
            }
        }
        errors.push_back(correct ? 0.0 : 1.0);
        r.records.push_back({img.id, std::nullopt, {{"error", correct ? 0.0 : 1.0}, {"best_iou", best_iou}}});
    }
    std::tie(r.mean, r.stddev) = mean_std(errors);
    return r;
}

std::vector<float> default_threshold_grid() {
    std::vector<float> grid;
    for (int i = 1; i <= 10; ++i) grid.push_back(0.05f * static_cast<float>(i));
    return grid;
}

EvalReport loc_error_search(const ModelGraph& g, const Dataset& d, std::size_t k, const std::vector<float>& grid,
                            const AttributionRequest& req, const AttributionOptions& opts) {
    if (grid.empty()) throw ArgumentError("threshold grid is empty");
    EvalReport best;
    bool have = false;
    std::map<std::string, double> sweep;
    std::string grid_text;
    for (float t : grid) {
        EvalReport r = loc_error(g, d, k, t, req, opts);
        sweep["error_at_" + format_double(t)] = r.mean;
        grid_text += (grid_text.empty() ? "" : ",") + format_double(t);
        if (!have || r.mean < best.mean) {
            best = std::move(r);
            have = true;
        }
    }
    best.config["threshold_grid"] = grid_text;
    for (const auto& [key, v] : sweep) best.extras[key] = v;
    return best;
}

// ---- sanity check --------------------------------------------------------------

namespace {

std::vector<double> average_ranks(const std::vector<float>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

std::pair<double, double> tensor_moments(std::span<const float> v) {
    std::vector<double> d(v.begin(), v.end());
    return mean_std(d);
}

void redraw(std::span<float> v, Rng& rng) {
    if (v.empty()) return;
    const auto [mean, sd] = tensor_moments(v);
    for (auto& x : v) x = static_cast<float>(rng.normal(mean, sd));
}

}  // namespace

double spearman(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw ArgumentError("spearman: vectors differ in length");
    if (a.size() < 2) throw ArgumentError("spearman: need at least two values");
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    if (ra == rb) return 1.0;
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double cov = 0.0;
    double va = 0.0;
    double vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - mean) * (rb[i] - mean);
        va += (ra[i] - mean) * (ra[i] - mean);
        vb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (va == 0.0 || vb == 0.0) return (va == 0.0 && vb == 0.0) ? 1.0 : 0.0;
    return cov / std::sqrt(va * vb);
}

std::vector<int> parameterized_layers_top_down(const ModelGraph& g) {
    std::vector<int> ids;
    for (auto it = g.layers.rbegin(); it != g.layers.rend(); ++it) {
        if (it->has_parameters()) ids.push_back(it->id);
    }
    return ids;
}

ModelGraph randomize_parameters(const ModelGraph& g, const std::vector<int>& layer_ids, std::uint64_t seed) {
    ModelGraph out = g;
    for (auto& l : out.layers) {
        if (std::find(layer_ids.begin(), layer_ids.end(), l.id) == layer_ids.end()) continue;
        if (!l.has_parameters()) throw ArgumentError("layer " + std::to_string(l.id) + " has no parameters to randomize");
        // Per-layer stream so a layer's draws do not depend on which other layers are selected.
        Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(l.id + 1)));
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Linear:
                redraw(l.weights.data(), rng);
                redraw(l.bias, rng);
                break;
            case LayerKind::BatchNormInference:
                redraw(l.bn.gamma, rng);
                redraw(l.bn.beta, rng);
                break;
            default:
                break;
        }
    }
    return out;
}

SanityResult sanity_check(const ModelGraph& g, const std::vector<Tensor>& images, const AttributionRequest& req,
                          RandomizationMode mode, std::uint64_t seed, const std::optional<std::vector<int>>& layer_ids,
                          const AttributionOptions& opts) {
    std::vector<int> selected;
    const std::vector<int> top_down = parameterized_layers_top_down(g);
    if (layer_ids) {
        for (int id : top_down) {
            if (std::find(layer_ids->begin(), layer_ids->end(), id) != layer_ids->end()) selected.push_back(id);
        }
        for (int id : *layer_ids) {
            if (std::find(top_down.begin(), top_down.end(), id) == top_down.end()) {
                throw ArgumentError("layer " + std::to_string(id) + " is not a parameterized layer");
            }
        }
    } else {
        selected = top_down;
    }

    std::vector<std::vector<int>> stages;
    if (mode == RandomizationMode::all_at_once) {
        stages.push_back(selected);
    } else {
        for (std::size_t k = 1; k <= selected.size(); ++k) stages.emplace_back(selected.begin(), selected.begin() + static_cast<std::ptrdiff_t>(k));
        if (stages.empty()) stages.emplace_back();
    }

    struct Original {
        std::size_t target;
        SaliencyMap map;
    };
    std::vector<Original> originals;
    for (const auto& img : images) {
        const ActivationTrace trace = run_forward(g, img);
        AttributionRequest r = req;
        r.target = top_k(trace.scores, 1).front();
        originals.push_back({r.target, saliency_from_trace(g, trace, r, opts, nullptr)});
    }

    SanityResult result;
    for (const auto& stage : stages) {
        const ModelGraph randomized = randomize_parameters(g, stage, seed);
        EvalReport trunc;
        EvalReport absr;
        trunc.metric = "sanity_spearman_truncated";
        absr.metric = "sanity_spearman_absolute";
        std::string layers_text;
        for (int id : stage) layers_text += (layers_text.empty() ? "" : ",") + std::to_string(id);
        for (EvalReport* rep : {&trunc, &absr}) {
            rep->config["mode"] = mode == RandomizationMode::all_at_once ? "all-at-once" : "cascading-top-down";
            rep->config["randomized_layers"] = layers_text;
            rep->config["seed"] = std::to_string(seed);
            rep->config["rule_set"] = std::string(to_string(req.rule_set));
            rep->config["alpha"] = format_double(req.alpha);
        }
        std::vector<double> rt;
        std::vector<double> ra;
        for (std::size_t i = 0; i < images.size(); ++i) {
            AttributionRequest r = req;
            r.target = originals[i].target;
            const SaliencyMap after = compute_saliency(randomized, images[i], r, opts);
            const SaliencyMap& before = originals[i].map;
            std::vector<float> bt = truncate_negatives(before).values;
            std::vector<float> at = truncate_negatives(after).values;
            std::vector<float> ba = before.values;
            std::vector<float> aa = after.values;
            for (auto& v : ba) v = std::fabs(v);
            for (auto& v : aa) v = std::fabs(v);
            const double rho_t = spearman(bt, at);
            const double rho_a = spearman(ba, aa);
            rt.push_back(rho_t);
            ra.push_back(rho_a);
            trunc.records.push_back({i, r.target, {{"rho", rho_t}}});
            absr.records.push_back({i, r.target, {{"rho", rho_a}}});
        }
        std::tie(trunc.mean, trunc.stddev) = mean_std(rt);
        std::tie(absr.mean, absr.stddev) = mean_std(ra);
        result.truncated.push_back(std::move(trunc));
        result.absolute.push_back(std::move(absr));
    }
    return result;
}

}  // namespace tsgb
