#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tsgb/attribution.hpp"
#include "tsgb/dataset.hpp"
#include "tsgb/error.hpp"
#include "tsgb/eval.hpp"
#include "tsgb/forward.hpp"
#include "tsgb/image_io.hpp"
#include "tsgb/model.hpp"
#include "tsgb/saliency.hpp"

namespace py = pybind11;
using namespace tsgb;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Accepts C x H x W or 1 x C x H x W.
Tensor to_tensor(const FloatArray& a) {
    Shape s;
    if (a.ndim() == 3) {
        s = {1, static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
             static_cast<std::size_t>(a.shape(2))};
    } else if (a.ndim() == 4 && a.shape(0) == 1) {
        s = {1, static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2)),
             static_cast<std::size_t>(a.shape(3))};
    } else {
        throw ArgumentError("image must be C x H x W or 1 x C x H x W");
    }
    return Tensor(s, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
    const Shape& s = t.shape();
    py::array_t<float> out({s.c, s.h, s.w});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::array_t<float> map_to_array(const SaliencyMap& m) {
    py::array_t<float> out({m.height, m.width});
    std::copy(m.values.begin(), m.values.end(), out.mutable_data());
    return out;
}

SaliencyMap array_to_map(const FloatArray& a) {
    if (a.ndim() != 2) throw ArgumentError("map must be H x W");
    SaliencyMap m;
    m.height = static_cast<std::size_t>(a.shape(0));
    m.width = static_cast<std::size_t>(a.shape(1));
    m.values.assign(a.data(), a.data() + a.size());
    return m;
}

AttributionRequest make_request(const ModelGraph& g, const Tensor& image, std::optional<std::size_t> target,
                                std::optional<float> alpha, const std::string& rule_set,
                                std::optional<int> stop_layer) {
    AttributionRequest req;
    req.alpha = alpha.value_or(default_alpha(g.family));
    req.rule_set = rule_set_from_string(rule_set);
    req.stop_layer = stop_layer;
    req.target = target ? *target : top_k(run_forward(g, image).scores, 1)[0];
    return req;
}

AttributionOptions make_options(const std::string& conv_impl) {
    AttributionOptions o;
    if (conv_impl == "fast") o.conv_impl = ConvRuleImpl::fast;
    else if (conv_impl == "direct") o.conv_impl = ConvRuleImpl::direct;
    else throw ArgumentError("conv_impl must be 'fast' or 'direct'");
    return o;
}

py::tuple bbox_tuple(const BBox& b) { return py::make_tuple(b.x0, b.y0, b.x1, b.y1); }

}  // namespace

PYBIND11_MODULE(_tsgb, m) {
    m.doc() = "TSGB saliency engine";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<InvariantError>(m, "InvariantError", base.ptr());

    py::class_<ModelGraph>(m, "Model")
        .def_readonly("name", &ModelGraph::name)
        .def_readonly("class_count", &ModelGraph::class_count)
        .def_property_readonly("family", [](const ModelGraph& g) { return std::string(to_string(g.family)); })
        .def_property_readonly("input_shape",
                               [](const ModelGraph& g) {
                                   return py::make_tuple(g.input_shape.c, g.input_shape.h, g.input_shape.w);
                               })
        .def_property_readonly("default_alpha", [](const ModelGraph& g) { return default_alpha(g.family); })
        .def_property_readonly("layers",
                               [](const ModelGraph& g) {
                                   py::list out;
                                   for (const auto& l : g.layers) {
                                       out.append(py::make_tuple(l.id, std::string(to_string(l.kind)), l.inputs));
                                   }
                                   return out;
                               })
        .def("validate", [](const ModelGraph& g) { return validate(g); })
        .def("save", [](const ModelGraph& g, const std::filesystem::path& p) { save_model(g, p); })
        .def("to_bytes",
             [](const ModelGraph& g) {
                 const auto b = serialize_model(g);
                 return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
             });

    m.def("load_model", [](const std::filesystem::path& p) { return load_model(p); }, py::arg("path"));
    m.def(
        "model_from_bytes",
        [](const py::bytes& b) {
            const std::string s = b;
            return deserialize_model(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
        },
        py::arg("data"));
    m.def("synthetic_detector", [] { return build_synthetic_detector(SyntheticSpec{}); },
          "Detector network paired with the synthetic suite.");

    m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_pnm(p)); }, py::arg("path"),
          "Reads a binary PPM/PGM as a float32 C x H x W array in [0, 1].");
    m.def("write_image", [](const FloatArray& a, const std::filesystem::path& p) { write_pnm(to_tensor(a), p); },
          py::arg("image"), py::arg("path"));

    m.def(
        "forward",
        [](const ModelGraph& g, const FloatArray& image) {
            const auto t = run_forward(g, to_tensor(image));
            return py::array_t<float>(static_cast<py::ssize_t>(t.scores.size()), t.scores.data());
        },
        py::arg("model"), py::arg("image"), "Pre-softmax class scores.");

    m.def(
        "saliency",
        [](const ModelGraph& g, const FloatArray& image, std::optional<std::size_t> target, std::optional<float> alpha,
           const std::string& rule_set, std::optional<int> stop_layer, const std::string& conv_impl) {
            const Tensor x = to_tensor(image);
            const auto req = make_request(g, x, target, alpha, rule_set, stop_layer);
            Diagnostics diag;
            SaliencyMap sm;
            {
                py::gil_scoped_release release;
                sm = compute_saliency(g, x, req, make_options(conv_impl), &diag);
            }
            py::dict out;
            out["map"] = map_to_array(sm);
            out["target"] = req.target;
            out["alpha"] = req.alpha;
            out["rule_set"] = rule_set;
            out["guarded_cells"] = diag.guarded_cells;
            out["warnings"] = diag.warnings;
            return out;
        },
        py::arg("model"), py::arg("image"), py::arg("target") = py::none(), py::arg("alpha") = py::none(),
        py::arg("rule_set") = "tsgb", py::arg("stop_layer") = py::none(), py::arg("conv_impl") = "fast",
        "Signed saliency map; target defaults to the predicted class, alpha to the model family default.");

    m.def("truncate", [](const FloatArray& a) { return map_to_array(truncate_negatives(array_to_map(a))); },
          py::arg("map"));
    m.def(
        "bbox",
        [](const FloatArray& a, float t) { return bbox_tuple(binarize_bbox(truncate_negatives(array_to_map(a)), t)); },
        py::arg("map"), py::arg("threshold_fraction") = 0.5f, "Inclusive (x0, y0, x1, y1) of the thresholded map.");
    m.def("argmax_point", [](const FloatArray& a) { return argmax_point(array_to_map(a)); }, py::arg("map"));
    m.def(
        "render",
        [](const FloatArray& a, const std::string& mode) {
            const ExportMode em = mode == "signed" ? ExportMode::signed_diverging : ExportMode::grayscale;
            if (mode != "signed" && mode != "grayscale") throw ArgumentError("mode must be 'grayscale' or 'signed'");
            const auto b = render_image(array_to_map(a), em);
            return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
        },
        py::arg("map"), py::arg("mode") = "grayscale", "PGM (grayscale) or PPM (signed) bytes.");

    m.def(
        "deletion",
        [](const ModelGraph& g, const FloatArray& image, const FloatArray& map, std::size_t target, double step) {
            const auto r = deletion_score(g, to_tensor(image), array_to_map(map), target, step);
            py::dict out;
            out["auc"] = r.auc;
            out["fractions"] = r.fractions;
            out["probabilities"] = r.probabilities;
            return out;
        },
        py::arg("model"), py::arg("image"), py::arg("map"), py::arg("target"), py::arg("step_fraction") = 0.05);
    m.def(
        "random_deletion_auc",
        [](const ModelGraph& g, const FloatArray& image, std::size_t target, double step, std::size_t seeds,
           std::uint64_t seed) { return random_deletion_auc(g, to_tensor(image), target, step, seeds, seed); },
        py::arg("model"), py::arg("image"), py::arg("target"), py::arg("step_fraction") = 0.05, py::arg("seeds") = 20,
        py::arg("seed") = 0);
    m.def("spearman", &spearman, py::arg("a"), py::arg("b"));

    m.def(
        "make_synthetic_dataset",
        [](const std::filesystem::path& dir, std::size_t count, std::uint64_t seed) {
            save_dataset(generate_synthetic_dataset(SyntheticSpec{}, count, seed), dir);
        },
        py::arg("directory"), py::arg("count"), py::arg("seed") = 0);

    m.def(
        "pointing_game_jsonl",
        [](const ModelGraph& g, const std::filesystem::path& dir, std::size_t margin, std::optional<float> alpha,
           const std::string& rule_set) {
            const Dataset d = load_dataset(dir);
            std::vector<LabeledMap> maps;
            for (const auto& img : d.images) {
                for (std::size_t c : img.labels) {
                    const auto req = make_request(g, img.image, c, alpha, rule_set, std::nullopt);
                    maps.push_back({img.id, c, compute_saliency(g, img.image, req)});
                }
            }
            return report_to_jsonl(pointing_game(maps, d, margin));
        },
        py::arg("model"), py::arg("dataset"), py::arg("margin") = 15, py::arg("alpha") = py::none(),
        py::arg("rule_set") = "tsgb");
    m.def(
        "sanity_jsonl",
        [](const ModelGraph& g, const std::filesystem::path& dir, const std::string& mode, std::uint64_t seed,
           std::optional<std::vector<int>> layers) {
            if (mode != "all-at-once" && mode != "cascading")
                throw ArgumentError("mode must be 'all-at-once' or 'cascading'");
            const Dataset d = load_dataset(dir);
            std::vector<Tensor> images;
            for (const auto& img : d.images) images.push_back(img.image);
            AttributionRequest req;
            req.alpha = default_alpha(g.family);
            const auto r = sanity_check(g, images, req,
                                        mode == "cascading" ? RandomizationMode::cascading
                                                            : RandomizationMode::all_at_once,
                                        seed, layers);
            std::string out;
            for (const auto& rep : r.truncated) out += report_to_jsonl(rep);
            return out;
        },
        py::arg("model"), py::arg("dataset"), py::arg("mode") = "all-at-once", py::arg("seed") = 0,
        py::arg("layers") = py::none());
}
