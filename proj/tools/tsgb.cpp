// tsgb: command-line front end for saliency maps and the evaluation protocols.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsgb/attribution.hpp"
#include "tsgb/dataset.hpp"
#include "tsgb/eval.hpp"
#include "tsgb/forward.hpp"
#include "tsgb/image_io.hpp"
#include "tsgb/model.hpp"
#include "tsgb/saliency.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tsgb;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kInvariant = 4 };

struct RunConfig {
    std::string config_path;
    std::string model_path;
    std::vector<std::string> inputs;
    std::string dataset_dir;
    std::vector<std::string> targets;
    float alpha = 0.8f;
    std::string rule_set = "tsgb";
    float threshold_fraction = 0.5f;
    std::string output_dir;
    std::uint64_t seed = 0;
    float erase_baseline = 0.0f;
    std::size_t margin = 15;
    int stop_layer = 0;
    std::string export_mode = "grayscale";
    std::vector<std::string> metrics;
    double step_fraction = 0.05;
    std::size_t random_seeds = 20;
    std::size_t k = 5;
    std::vector<float> alphas;
    std::string mode = "all-at-once";
    std::vector<int> layers;
    std::size_t count = 50;
    bool timing = false;
};

// Options the config file may also set; all are identified by their long name.
void add_model_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--config", cfg.config_path, "JSON file with option defaults (flags override)");
    sub->add_option("--model", cfg.model_path, "NNSM model file");
}

void add_rule_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--alpha", cfg.alpha, "Scale coefficient of the final-layer rule (default by model family)");
    sub->add_option("--rule-set", cfg.rule_set, "tsgb | vanilla | guided | tsgb_fc_only | tsgb_conv_only");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string option_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) {
        std::ostringstream os;
        os.precision(9);
        os << v.get<double>();
        return os.str();
    }
    throw ArgumentError("config value must be a string, number or boolean");
}

// Fills options not given on the command line from the JSON config file.
void apply_config(CLI::App* sub, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError("config file '" + path + "' must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
        std::string name = key;
        std::replace(name.begin(), name.end(), '_', '-');
        if (name == "config") throw ArgumentError("config files cannot include other config files");
        CLI::Option* opt = sub->get_option_no_throw("--" + name);
        if (opt == nullptr) throw ArgumentError("config key '" + key + "' is not an option of '" + sub->get_name() + "'");
        if (opt->count() > 0) continue;
        try {
            if (value.is_array()) {
                for (const auto& item : value) opt->add_result(option_text(item));
            } else {
                opt->add_result(option_text(value));
            }
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw ArgumentError("config key '" + key + "': " + e.what());
        }
    }
}

bool given(CLI::App* sub, const std::string& name) {
    const CLI::Option* opt = sub->get_option_no_throw("--" + name);
    return opt != nullptr && opt->count() > 0;
}

std::string fixed4(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

struct Prepared {
    ModelGraph model;
    AttributionRequest request;
};

Prepared prepare(CLI::App* sub, const RunConfig& cfg) {
    if (cfg.model_path.empty()) throw ArgumentError("--model is required");
    Prepared p{load_model(cfg.model_path), {}};
    p.request.rule_set = rule_set_from_string(cfg.rule_set);
    p.request.alpha = given(sub, "alpha") ? cfg.alpha : default_alpha(p.model.family);
    if (!(p.request.alpha > 0.0f) || !std::isfinite(p.request.alpha)) throw ArgumentError("--alpha must be positive");
    return p;
}

void check_fraction(float f) {
    if (!(f > 0.0f && f < 1.0f)) throw ArgumentError("--threshold-fraction must lie in (0, 1)");
}

Dataset require_dataset(const RunConfig& cfg) {
    if (cfg.dataset_dir.empty()) throw ArgumentError("--dataset is required");
    Dataset d = load_dataset(cfg.dataset_dir);
    const auto problems = validate_ground_truth(d);
    if (!problems.empty()) throw DataError("ground truth: " + problems.front());
    return d;
}

void check_dataset_fits(const Dataset& d, const ModelGraph& g) {
    if (d.class_count != g.class_count) {
        throw DataError("dataset has " + std::to_string(d.class_count) + " classes but the model has " +
                        std::to_string(g.class_count));
    }
    for (const auto& img : d.images) {
        const Shape& s = img.image.shape();
        if (s.c != g.input_shape.c || s.h != g.input_shape.h || s.w != g.input_shape.w) {
            throw DataError("image " + img.file + " is " + s.str() + " but the model expects " + g.input_shape.str());
        }
    }
}

json scores_json(std::span<const float> scores) {
    json a = json::array();
    for (float s : scores) a.push_back(s);
    return a;
}

// ---- explain -------------------------------------------------------------------

int cmd_explain(CLI::App* sub, const RunConfig& cfg) {
    Prepared p = prepare(sub, cfg);
    check_fraction(cfg.threshold_fraction);
    if (cfg.inputs.empty()) throw ArgumentError("--input is required");
    if (cfg.output_dir.empty()) throw ArgumentError("--output-dir is required");
    const ExportMode mode = cfg.export_mode == "signed" ? ExportMode::signed_diverging : ExportMode::grayscale;
    if (cfg.export_mode != "signed" && cfg.export_mode != "grayscale") {
        throw ArgumentError("--export-mode must be grayscale or signed");
    }
    const std::vector<std::string> targets = cfg.targets.empty() ? std::vector<std::string>{"predicted"} : cfg.targets;
    std::optional<int> stop;
    if (given(sub, "stop-layer")) stop = cfg.stop_layer;

    struct Output {
        fs::path image_path;
        std::vector<std::uint8_t> image;
        fs::path sidecar_path;
        std::string sidecar;
    };
    std::vector<Output> outputs;
    std::set<std::string> names;
    for (const auto& input : cfg.inputs) {
        const Tensor image = read_pnm(input);
        const ActivationTrace trace = run_forward(p.model, image);
        const auto probabilities = softmax(trace.scores);
        for (const auto& t : targets) {
            AttributionRequest req = p.request;
            req.stop_layer = stop;
            if (t == "predicted") {
                req.target = top_k(trace.scores, 1).front();
            } else {
                std::size_t used = 0;
                long long v = -1;
                try {
                    v = std::stoll(t, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != t.size() || v < 0) throw ArgumentError("--target must be a class index or 'predicted', got '" + t + "'");
                req.target = static_cast<std::size_t>(v);
            }
            const AttributionState state = run_attribution(p.model, trace, req);
            const SaliencyMeta meta{req.target, req.alpha, req.rule_set, p.model.name};
            const SaliencyMap m = stop ? assemble_at(state, trace, *stop, meta) : assemble(state, trace, meta);

            json side;
            side["model"] = p.model.name;
            side["input"] = fs::path(input).filename().string();
            side["target"] = req.target;
            side["target_mode"] = t == "predicted" ? "predicted" : "explicit";
            side["alpha"] = req.alpha;
            side["rule_set"] = std::string(to_string(req.rule_set));
            side["stop_layer"] = stop ? json(*stop) : json(nullptr);
            side["scores"] = scores_json(trace.scores);
            side["probabilities"] = probabilities;
            side["predicted"] = top_k(trace.scores, 1).front();
            side["map"] = {{"height", m.height}, {"width", m.width}};
            const auto [row, col] = argmax_point(truncate_negatives(m));
            side["argmax"] = {{"row", row}, {"col", col}};
            try {
                const BBox box = binarize_bbox(truncate_negatives(m), cfg.threshold_fraction);
                side["bbox"] = {{"x0", box.x0}, {"y0", box.y0}, {"x1", box.x1}, {"y1", box.y1},
                                {"threshold_fraction", cfg.threshold_fraction}};
            } catch (const EmptyMapError&) {
                side["bbox"] = nullptr;
            }
            side["diagnostics"] = {{"guarded_cells", state.diagnostics.guarded_cells},
                                   {"guarded_divisions", state.diagnostics.guarded_divisions},
                                   {"warnings", state.diagnostics.warnings}};
            json dispatch = json::array();
            for (const auto& d : state.dispatch) {
                dispatch.push_back({{"layer", d.layer_id}, {"kind", std::string(to_string(d.kind))},
                                    {"rule", std::string(to_string(d.rule))}});
            }
            side["dispatch"] = dispatch;
            for (const auto& w : state.diagnostics.warnings) std::cerr << "warning: " << w << "\n";

            const std::string stem = fs::path(input).stem().string() + ".c" + std::to_string(req.target);
            if (!names.insert(stem).second) continue;
            const fs::path dir(cfg.output_dir);
            outputs.push_back({dir / (stem + (mode == ExportMode::grayscale ? ".pgm" : ".ppm")), render_image(m, mode),
                               dir / (stem + ".json"), side.dump(2) + "\n"});
        }
    }
    ensure_dir(cfg.output_dir);
    for (const auto& o : outputs) {
        write_bytes(o.image_path, o.image);
        write_text(o.sidecar_path, o.sidecar);
        std::cout << o.image_path.string() << "\n";
    }
    return kOk;
}

// ---- eval ----------------------------------------------------------------------

EvalReport run_pointing(const ModelGraph& g, const Dataset& d, const AttributionRequest& base, std::size_t margin) {
    std::vector<LabeledMap> maps;
    for (const auto& img : d.images) {
        const ActivationTrace trace = run_forward(g, img.image);
        for (std::size_t label : img.labels) {
            AttributionRequest req = base;
            req.target = label;
            const AttributionState state = run_attribution(g, trace, req);
            maps.push_back({img.id, label, assemble(state, trace, {label, req.alpha, req.rule_set, g.name})});
        }
    }
    EvalReport r = pointing_game(maps, d, margin);
    r.config["alpha"] = fixed4(base.alpha);
    r.config["rule_set"] = std::string(to_string(base.rule_set));
    return r;
}

EvalReport run_deletion(const ModelGraph& g, const Dataset& d, const AttributionRequest& base, const RunConfig& cfg) {
    EvalReport r;
    r.metric = "deletion";
    r.config["alpha"] = fixed4(base.alpha);
    r.config["rule_set"] = std::string(to_string(base.rule_set));
    r.config["step_fraction"] = fixed4(cfg.step_fraction);
    r.config["erase_baseline"] = fixed4(cfg.erase_baseline);
    r.config["random_seeds"] = std::to_string(cfg.random_seeds);
    r.config["seed"] = std::to_string(cfg.seed);
    std::vector<double> aucs;
    std::vector<double> random_aucs;
    for (const auto& img : d.images) {
        const ActivationTrace trace = run_forward(g, img.image);
        AttributionRequest req = base;
        req.target = top_k(trace.scores, 1).front();
        const SaliencyMap m = assemble(run_attribution(g, trace, req), trace);
        const DeletionResult del = deletion_score(g, img.image, m, req.target, cfg.step_fraction, cfg.erase_baseline);
        EvalRecord rec{img.id, req.target, {{"auc", del.auc}, {"steps", static_cast<double>(del.steps)}}};
        if (cfg.random_seeds > 0) {
            const double rnd = random_deletion_auc(g, img.image, req.target, cfg.step_fraction, cfg.random_seeds,
                                                   cfg.seed, cfg.erase_baseline);
            rec.values["random_auc"] = rnd;
            random_aucs.push_back(rnd);
        }
        aucs.push_back(del.auc);
        r.records.push_back(std::move(rec));
    }
    std::tie(r.mean, r.stddev) = mean_std(aucs);
    if (!random_aucs.empty()) r.extras["random_auc_mean"] = mean_std(random_aucs).first;
    return r;
}

std::size_t resolve_k(CLI::App* sub, const RunConfig& cfg, const ModelGraph& g) {
    if (!given(sub, "k")) return std::min(cfg.k, g.class_count);
    if (cfg.k == 0 || cfg.k > g.class_count) {
        throw ArgumentError("--k must lie in [1, " + std::to_string(g.class_count) + "]");
    }
    return cfg.k;
}

int cmd_eval(CLI::App* sub, const RunConfig& cfg) {
    Prepared p = prepare(sub, cfg);
    if (cfg.output_dir.empty()) throw ArgumentError("--output-dir is required");
    std::vector<std::string> metrics = cfg.metrics.empty() ? std::vector<std::string>{"pointing", "deletion", "loc"}
                                                           : cfg.metrics;
    for (const auto& m : metrics) {
        if (m != "pointing" && m != "deletion" && m != "loc") {
            throw ArgumentError("unknown metric '" + m + "' (pointing, deletion, loc)");
        }
    }
    if (!(cfg.step_fraction > 0.0 && cfg.step_fraction <= 0.5)) throw ArgumentError("--step-fraction must lie in (0, 0.5]");
    if (given(sub, "threshold-fraction")) check_fraction(cfg.threshold_fraction);
    const Dataset d = require_dataset(cfg);
    check_dataset_fits(d, p.model);
    const std::size_t k = resolve_k(sub, cfg, p.model);

    std::vector<std::pair<std::string, EvalReport>> reports;
    std::set<std::string> done;
    const auto start = std::chrono::steady_clock::now();
    for (const auto& m : metrics) {
        if (!done.insert(m).second) continue;
        if (m == "pointing") {
            reports.emplace_back("pointing_game", run_pointing(p.model, d, p.request, cfg.margin));
        } else if (m == "deletion") {
            reports.emplace_back("deletion", run_deletion(p.model, d, p.request, cfg));
        } else {
            EvalReport r = given(sub, "threshold-fraction")
                               ? loc_error(p.model, d, k, cfg.threshold_fraction, p.request)
                               : loc_error_search(p.model, d, k, default_threshold_grid(), p.request);
            reports.emplace_back("loc_error", std::move(r));
        }
    }
    if (cfg.timing) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << "elapsed " << secs << " s over " << d.images.size() << " images\n";
    }
    ensure_dir(cfg.output_dir);
    for (const auto& [name, r] : reports) {
        write_text(fs::path(cfg.output_dir) / (name + ".jsonl"), report_to_jsonl(r));
        std::cout << summary_table(r) << "\n";
    }
    return kOk;
}

// ---- sweep-alpha ---------------------------------------------------------------

std::vector<float> default_alpha_grid() {
    std::vector<float> grid;
    for (int i = 5; i <= 13; ++i) grid.push_back(static_cast<float>(i) / 10.0f);
    return grid;
}

int cmd_sweep_alpha(CLI::App* sub, const RunConfig& cfg) {
    Prepared p = prepare(sub, cfg);
    if (cfg.output_dir.empty()) throw ArgumentError("--output-dir is required");
    std::vector<float> alphas;
    for (float a : given(sub, "alphas") ? cfg.alphas : default_alpha_grid()) {
        if (!(a > 0.0f) || !std::isfinite(a)) throw ArgumentError("every alpha must be positive");
        if (std::find(alphas.begin(), alphas.end(), a) != alphas.end()) {
            std::cerr << "warning: duplicate alpha " << a << " ignored\n";
            continue;
        }
        alphas.push_back(a);
    }
    if (alphas.empty()) throw ArgumentError("--alphas is empty");
    const Dataset d = require_dataset(cfg);
    check_dataset_fits(d, p.model);

    EvalReport sweep;
    sweep.metric = "sweep_alpha";
    sweep.config["rule_set"] = std::string(to_string(p.request.rule_set));
    sweep.config["margin"] = std::to_string(cfg.margin);
    std::ostringstream table;
    table << "alpha    pointing_accuracy\n";
    std::vector<double> values;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        AttributionRequest req = p.request;
        req.alpha = alphas[i];
        const EvalReport r = run_pointing(p.model, d, req, cfg.margin);
        sweep.records.push_back({i, std::nullopt, {{"alpha", alphas[i]}, {"pointing_accuracy", r.mean}}});
        values.push_back(r.mean);
        table << std::fixed << std::setprecision(2) << alphas[i] << "     " << std::setprecision(4) << r.mean << "\n";
    }
    std::tie(sweep.mean, sweep.stddev) = mean_std(values);
    ensure_dir(cfg.output_dir);
    write_text(fs::path(cfg.output_dir) / "sweep_alpha.jsonl", report_to_jsonl(sweep));
    std::cout << table.str();
    return kOk;
}

// ---- sanity --------------------------------------------------------------------

int cmd_sanity(CLI::App* sub, const RunConfig& cfg) {
    Prepared p = prepare(sub, cfg);
    if (cfg.output_dir.empty()) throw ArgumentError("--output-dir is required");
    RandomizationMode mode = RandomizationMode::all_at_once;
    if (cfg.mode == "cascading") mode = RandomizationMode::cascading;
    else if (cfg.mode != "all-at-once") throw ArgumentError("--mode must be all-at-once or cascading");
    std::vector<Tensor> images;
    if (!cfg.dataset_dir.empty()) {
        const Dataset d = load_dataset(cfg.dataset_dir);
        check_dataset_fits(d, p.model);
        for (const auto& img : d.images) images.push_back(img.image);
    }
    for (const auto& input : cfg.inputs) images.push_back(read_pnm(input));
    if (images.empty()) throw ArgumentError("sanity needs --dataset or --input");
    std::optional<std::vector<int>> layers;
    if (given(sub, "layers")) layers = cfg.layers;

    const SanityResult r = sanity_check(p.model, images, p.request, mode, cfg.seed, layers);
    std::string jsonl;
    for (std::size_t s = 0; s < r.truncated.size(); ++s) {
        jsonl += report_to_jsonl(r.truncated[s]);
        jsonl += report_to_jsonl(r.absolute[s]);
    }
    ensure_dir(cfg.output_dir);
    write_text(fs::path(cfg.output_dir) / "sanity.jsonl", jsonl);
    std::cout << "randomized_layers        rho_truncated        rho_absolute\n";
    for (std::size_t s = 0; s < r.truncated.size(); ++s) {
        std::cout << std::left << std::setw(25) << r.truncated[s].config.at("randomized_layers") << std::fixed
                  << std::setprecision(4) << r.truncated[s].mean << " +- " << r.truncated[s].stddev << "   "
                  << r.absolute[s].mean << " +- " << r.absolute[s].stddev << "\n";
    }
    return kOk;
}

// ---- synth / inspect -----------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
    if (cfg.output_dir.empty()) throw ArgumentError("--output-dir is required");
    const SyntheticSpec spec;
    const Dataset d = generate_synthetic_dataset(spec, cfg.count, cfg.seed);
    const ModelGraph g = build_synthetic_detector(spec);
    const auto model_bytes = serialize_model(g);
    ensure_dir(cfg.output_dir);
    save_dataset(d, cfg.output_dir);
    write_bytes(fs::path(cfg.output_dir) / "detector.nnsm", model_bytes);
    std::cout << "wrote " << d.images.size() << " images and detector.nnsm to " << cfg.output_dir << "\n";
    return kOk;
}

int cmd_inspect(const RunConfig& cfg) {
    if (cfg.model_path.empty()) throw ArgumentError("--model is required");
    const ModelGraph g = load_model(cfg.model_path);
    std::cout << "name: " << g.name << "\nfamily: " << to_string(g.family) << "\ninput: " << g.input_shape.str()
              << "\nclasses: " << g.class_count << "\n";
    for (const auto& l : g.layers) {
        std::cout << std::setw(4) << l.id << "  " << std::left << std::setw(20) << to_string(l.kind) << std::right
                  << " <- ";
        for (std::size_t i = 0; i < l.inputs.size(); ++i) std::cout << (i ? "," : "") << l.inputs[i];
        std::cout << "  " << l.output_shape.str() << (l.final ? "  final" : "") << "\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TSGB saliency maps and evaluation protocols"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto* explain = app.add_subcommand("explain", "Write saliency maps and JSON sidecars for input images");
    add_model_options(explain, cfg);
    add_rule_options(explain, cfg);
    explain->add_option("--input", cfg.inputs, "PPM/PGM image(s)");
    explain->add_option("--target", cfg.targets, "Class index or 'predicted' (repeatable)");
    explain->add_option("--threshold-fraction", cfg.threshold_fraction, "Box threshold as a fraction of the map max");
    explain->add_option("--output-dir", cfg.output_dir, "Output directory");
    explain->add_option("--stop-layer", cfg.stop_layer, "Stop at this layer and map its input features");
    explain->add_option("--export-mode", cfg.export_mode, "grayscale (PGM) or signed (PPM)");

    auto* eval = app.add_subcommand("eval", "Run evaluation metrics over a dataset directory");
    add_model_options(eval, cfg);
    add_rule_options(eval, cfg);
    eval->add_option("--dataset", cfg.dataset_dir, "Directory with ground_truth.json and images");
    eval->add_option("--metric", cfg.metrics, "pointing | deletion | loc (repeatable; default all)");
    eval->add_option("--output-dir", cfg.output_dir, "Output directory for JSONL reports");
    eval->add_option("--margin", cfg.margin, "Pointing-game tolerance in pixels");
    eval->add_option("--erase-baseline", cfg.erase_baseline, "Deletion fill value in normalized units");
    eval->add_option("--step-fraction", cfg.step_fraction, "Fraction of pixels erased per deletion step");
    eval->add_option("--random-seeds", cfg.random_seeds, "Random orderings for the deletion baseline (0 skips)");
    eval->add_option("--seed", cfg.seed, "Base seed of the random deletion orderings");
    eval->add_option("--k", cfg.k, "Top-k for localization error");
    eval->add_option("--threshold-fraction", cfg.threshold_fraction,
                     "Fixed box threshold for localization (default: grid search)");
    eval->add_flag("--timing", cfg.timing, "Print wall-clock time to stderr");

    auto* sweep = app.add_subcommand("sweep-alpha", "Pointing-game accuracy over a list of alpha values");
    add_model_options(sweep, cfg);
    sweep->add_option("--rule-set", cfg.rule_set, "Rule set");
    sweep->add_option("--alphas", cfg.alphas, "Comma-separated alpha values (default 0.5:0.1:1.3)")->delimiter(',');
    sweep->add_option("--dataset", cfg.dataset_dir, "Dataset directory");
    sweep->add_option("--margin", cfg.margin, "Pointing-game tolerance in pixels");
    sweep->add_option("--output-dir", cfg.output_dir, "Output directory");

    auto* sanity = app.add_subcommand("sanity", "Parameter-randomization sanity check");
    add_model_options(sanity, cfg);
    add_rule_options(sanity, cfg);
    sanity->add_option("--dataset", cfg.dataset_dir, "Dataset directory");
    sanity->add_option("--input", cfg.inputs, "Additional PPM/PGM images");
    sanity->add_option("--mode", cfg.mode, "all-at-once or cascading");
    sanity->add_option("--layers", cfg.layers, "Layer ids to randomize (default: all with parameters)")->delimiter(',');
    sanity->add_option("--seed", cfg.seed, "Randomization seed");
    sanity->add_option("--output-dir", cfg.output_dir, "Output directory");

    auto* synth = app.add_subcommand("synth", "Generate the synthetic suite and its detector model");
    synth->add_option("--config", cfg.config_path, "JSON file with option defaults");
    synth->add_option("--count", cfg.count, "Number of images");
    synth->add_option("--seed", cfg.seed, "Generator seed");
    synth->add_option("--output-dir", cfg.output_dir, "Output directory");

    auto* inspect = app.add_subcommand("inspect", "Print the layers of a model");
    inspect->add_option("--model", cfg.model_path, "NNSM model file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        if (sub != inspect && !cfg.config_path.empty()) apply_config(sub, cfg.config_path);
        if (sub == explain) return cmd_explain(sub, cfg);
        if (sub == eval) return cmd_eval(sub, cfg);
        if (sub == sweep) return cmd_sweep_alpha(sub, cfg);
        if (sub == sanity) return cmd_sanity(sub, cfg);
        if (sub == synth) return cmd_synth(cfg);
        return cmd_inspect(cfg);
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const InvariantError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInvariant;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInvariant;
    }
}
