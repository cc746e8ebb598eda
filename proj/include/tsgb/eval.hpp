#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsgb/attribution.hpp"
#include "tsgb/dataset.hpp"
#include "tsgb/saliency.hpp"

namespace tsgb {

struct EvalRecord {
    std::size_t image_id = 0;
    std::optional<std::size_t> class_id;
    std::map<std::string, double> values;
};

struct EvalReport {
    std::string metric;
    std::vector<EvalRecord> records;
    double mean = 0.0;
    double stddev = 0.0;
    std::map<std::string, std::string> config;
    std::map<std::string, double> extras;
};

/// One JSON object per record, then one aggregate object, newline-terminated.
std::string report_to_jsonl(const EvalReport& r);
std::string summary_table(const EvalReport& r);

/// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& v);

/// Forward + attribution + assembly for one image.
SaliencyMap compute_saliency(const ModelGraph& g, const Tensor& image, const AttributionRequest& req,
                             const AttributionOptions& opts = {}, Diagnostics* diag = nullptr);

// ---- deletion ----------------------------------------------------------------

struct DeletionResult {
    std::vector<double> fractions;      // removed fraction, starts at 0, ends at 1
    std::vector<double> probabilities;  // softmax probability of the class
    double auc = 0.0;
    std::size_t steps = 0;  // perturbation steps executed
};

/// Erases pixels in `order` (flat row-major indices), step_fraction of the pixels at a
/// time, to `erase_baseline` in normalized units, and integrates the class probability.
DeletionResult deletion_curve(const ModelGraph& g, const Tensor& image, const std::vector<std::size_t>& order,
                              std::size_t target, double step_fraction, float erase_baseline = 0.0f);

/// Pixel order by truncated saliency, descending; ties by row-major index.
std::vector<std::size_t> saliency_order(const SaliencyMap& m);

DeletionResult deletion_score(const ModelGraph& g, const Tensor& image, const SaliencyMap& m, std::size_t target,
                              double step_fraction, float erase_baseline = 0.0f);

/// Mean deletion AUC over `seeds` uniformly random pixel orders (seeds base, base+1, ...).
double random_deletion_auc(const ModelGraph& g, const Tensor& image, std::size_t target, double step_fraction,
                           std::size_t seeds, std::uint64_t base_seed, float erase_baseline = 0.0f);

// ---- pointing game -----------------------------------------------------------

struct LabeledMap {
    std::size_t image_id = 0;
    std::size_t class_id = 0;
    SaliencyMap map;
};

/// Hit iff the map maximum lies in the class region dilated by `margin`. Accuracy is
/// computed per class and averaged over classes.
EvalReport pointing_game(const std::vector<LabeledMap>& maps, const Dataset& gt, std::size_t margin,
                         bool truncate = true);

// ---- localization ------------------------------------------------------------

/// Top-k localization error: an image is correct iff some class among the top k equals
/// a ground-truth label and the thresholded box of its map has IoU >= 0.5 with one of
/// that label's boxes.
EvalReport loc_error(const ModelGraph& g, const Dataset& d, std::size_t k, float threshold_fraction,
                     const AttributionRequest& req, const AttributionOptions& opts = {});

/// Default threshold grid {0.05, 0.10, ..., 0.50}.
std::vector<float> default_threshold_grid();

/// Runs loc_error over a threshold grid and returns the best report; the grid and every
/// grid point's error are echoed in the report.
EvalReport loc_error_search(const ModelGraph& g, const Dataset& d, std::size_t k, const std::vector<float>& grid,
                            const AttributionRequest& req, const AttributionOptions& opts = {});

// ---- sanity check ------------------------------------------------------------

enum class RandomizationMode { all_at_once, cascading };

/// Spearman rank correlation (average ranks for ties), computed in double.
double spearman(const std::vector<float>& a, const std::vector<float>& b);

/// Replaces the parameters of the listed layers with normal draws matched to each
/// tensor's own mean and standard deviation. Variances of batch-norm layers are kept.
ModelGraph randomize_parameters(const ModelGraph& g, const std::vector<int>& layer_ids, std::uint64_t seed);

/// Ids of every layer with parameters, top (output side) first.
std::vector<int> parameterized_layers_top_down(const ModelGraph& g);

struct SanityResult {
    /// One report per randomization stage; all_at_once has a single stage.
    std::vector<EvalReport> truncated;
    std::vector<EvalReport> absolute;
};

/// Compares maps before and after randomizing `layer_ids` (nullopt: every
/// parameterized layer). Maps are computed for each image's predicted class.
SanityResult sanity_check(const ModelGraph& g, const std::vector<Tensor>& images, const AttributionRequest& req,
                          RandomizationMode mode, std::uint64_t seed,
                          const std::optional<std::vector<int>>& layer_ids = std::nullopt,
                          const AttributionOptions& opts = {});

}  // namespace tsgb
