// Python bindings for the hashing engine: synthetic/CIFAR data and split
// protocols, model construction and training, split encoding, Hamming
// retrieval metrics, and the weight/code containers.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <sstream>

#include "vithash/data.hpp"
#include "vithash/model.hpp"
#include "vithash/objectives.hpp"
#include "vithash/retrieval.hpp"
#include "vithash/serialize.hpp"
#include "vithash/trainer.hpp"

namespace py = pybind11;
using namespace py::literals;
using namespace vith;

namespace {

// builtin protocol name, or a JSON object with the protocol fields
ProtocolSpec parse_protocol(const std::string& spec) {
    const auto first = spec.find_first_not_of(" \t\n");
    if (first != std::string::npos && spec[first] == '{') return ProtocolSpec::from_json(spec);
    return ProtocolSpec::builtin(spec);
}

const std::vector<std::uint32_t>& split_indices(const Dataset& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "query") return ds.query;
    if (split == "database") return ds.database;
    throw ConfigError("unknown split '" + split + "' (want train|query|database)");
}

py::dict map_result_dict(const MapResult& r) {
    py::dict out;
    out["map"] = r.map;
    out["per_query_ap"] = r.per_query_ap;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "transformer-based deep hashing: training, encoding, Hamming retrieval";
    m.attr("__version__") = "0.1.0";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {   // includes shape and contract violations
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const DataError& e) {
            PyErr_SetString(PyExc_OSError, e.what());
        } catch (const NumericError& e) {
            PyErr_SetString(PyExc_FloatingPointError, e.what());
        }
    });

    // ---- data ------------------------------------------------------------

    py::class_<Dataset>(m, "Dataset", "Item pool plus (after a protocol) index-based splits.")
        .def_readonly("protocol", &Dataset::protocol)
        .def_readonly("image_size", &Dataset::image_size)
        .def_readonly("channels", &Dataset::channels)
        .def_readonly("classes", &Dataset::classes)
        .def_readonly("map_cutoff", &Dataset::map_cutoff)
        .def_readonly("train", &Dataset::train)
        .def_readonly("query", &Dataset::query)
        .def_readonly("database", &Dataset::database)
        .def("__len__", [](const Dataset& d) { return d.items.size(); })
        .def(
            "labels_of",
            [](const Dataset& d, std::size_t i) {
                if (i >= d.items.size()) throw py::index_error();
                return d.items[i].labels;
            },
            "index"_a)
        .def(
            "image_of",
            [](const Dataset& d, std::size_t i) {
                if (i >= d.items.size()) throw py::index_error();
                const auto& img = d.items[i].image;
                const py::ssize_t s = py::ssize_t(d.image_size), c = py::ssize_t(d.channels);
                py::array_t<float> a({s, s, c});
                std::copy(img.begin(), img.end(), a.mutable_data());
                return a;
            },
            "index"_a, "Image as a float32 [H, W, C] array in [0, 1].");

    m.def(
        "synth_dataset",
        [](std::size_t classes, std::size_t per_class, std::size_t image_size,
           std::size_t channels, double noise_sigma, bool multi_label, std::uint64_t seed) {
            SynthConfig cfg;
            cfg.classes = classes;
            cfg.per_class = per_class;
            cfg.image_size = image_size;
            cfg.channels = channels;
            cfg.noise_sigma = noise_sigma;
            cfg.multi_label = multi_label;
            return synth_dataset(cfg, seed);
        },
        "classes"_a = 10, "per_class"_a = 100, "image_size"_a = 32, "channels"_a = 3,
        "noise_sigma"_a = 0.1, "multi_label"_a = false, "seed"_a = 0,
        "Class-pattern images with Gaussian noise; labels follow the patterns.");

    m.def("load_cifar10", &load_cifar10, "dir"_a,
          "Load the six CIFAR-10 binary batch files from a directory.");
    m.def("save_dataset", &save_dataset, "path"_a, "dataset"_a);
    m.def("load_dataset", &load_dataset, "path"_a);

    m.def("protocols", [] {
        return std::vector<std::string>{"cifar10@54000", "cifar10@all", "imagenet",
                                        "nuswide",       "coco",        "synth"};
    });
    m.def(
        "apply_protocol",
        [](const Dataset& ds, const std::string& spec, std::uint64_t seed) {
            return apply_protocol(ds, parse_protocol(spec), seed);
        },
        "dataset"_a, "protocol"_a, "seed"_a = 0,
        "Carve train/query/database splits; `protocol` is a builtin name or a JSON object.");

    // ---- model and training ----------------------------------------------

    py::class_<Model>(m, "Model", "Patch encoder plus hashing head.")
        .def_static(
            "fresh",
            [](const std::string& preset, std::size_t bits, const std::string& mode,
               std::uint64_t seed) {
                return Model::fresh(ModelConfig::preset(preset, bits, parse_feature_mode(mode)),
                                    seed);
            },
            "preset"_a = "tiny", "bits"_a = 16, "mode"_a = "all", "seed"_a = 0,
            "Random initialization. Presets: vts32, vts16, tiny. Modes: all, cls.")
        .def_property_readonly("bits", [](const Model& mo) { return mo.config.head.bits; })
        .def_property_readonly("mode",
                               [](const Model& mo) {
                                   return std::string(to_string(mo.config.head.mode));
                               })
        .def_property_readonly("parameters",
                               [](const Model& mo) {
                                   std::size_t n = 0;
                                   for (const auto& [name, t] : mo.named()) n += t.numel();
                                   return n;
                               })
        .def(
            "save", [](const Model& mo, const std::string& path) {
                save_weights(path, snapshot(mo.named()));
            },
            "path"_a, "Write all weights to a .vtsw container.")
        .def(
            "load",
            [](Model& mo, const std::string& path) {
                const auto w = load_weights(path);
                auto named = mo.named();
                restore(w, named, /*ignore_unknown=*/true);
            },
            "path"_a,
            "Restore weights from a .vtsw container; extra entries (e.g. objective "
            "auxiliaries from a training checkpoint) are ignored.");

    m.def(
        "train",
        [](Model& model, const Dataset& ds, const std::string& objective, double lr,
           std::size_t epochs, std::size_t batch_size, std::size_t eval_every,
           std::uint64_t seed, double dsh_margin_scale, double dsh_alpha,
           double hashnet_step_size, double greedy_alpha, double idhn_lambda,
           double csq_lambda, double dpn_margin) {
            TrainConfig tc;
            tc.adam.lr = lr;
            tc.epochs = epochs;
            tc.batch_size = batch_size;
            tc.eval_every = eval_every == 0 ? epochs : eval_every;
            tc.seed = seed;
            tc.loss.objective = parse_objective(objective);
            tc.loss.dsh_margin_scale = dsh_margin_scale;
            tc.loss.dsh_alpha = dsh_alpha;
            tc.loss.hashnet_step_size = hashnet_step_size;
            tc.loss.greedy_alpha = greedy_alpha;
            tc.loss.idhn_lambda = idhn_lambda;
            tc.loss.csq_lambda = csq_lambda;
            tc.loss.dpn_margin = dpn_margin;

            std::ostringstream echo;
            echo << "{\"objective\":\"" << objective << "\",\"lr\":" << lr
                 << ",\"epochs\":" << epochs << ",\"batch\":" << batch_size
                 << ",\"seed\":" << seed << "}";

            auto obj = ObjectiveState<float>::make(tc.loss, ds.classes, model.config.head.bits,
                                                   tc.seed);
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(model, obj, ds, tc, echo.str());
            }
            // leave the model at the best evaluation point, like a saved checkpoint
            auto named = model.named();
            restore(r.best_weights, named, /*ignore_unknown=*/true);

            py::dict out;
            out["best_map"] = r.best_map;
            out["best_epoch"] = r.best_epoch;
            out["final_step"] = r.final_step;
            out["map_history"] = r.map_history;
            out["metrics_csv"] = r.metrics_csv;
            return out;
        },
        "model"_a, "dataset"_a, "objective"_a = "greedyhash", "lr"_a = 1e-5,
        "epochs"_a = 150, "batch_size"_a = 32, "eval_every"_a = 30, "seed"_a = 0,
        "dsh_margin_scale"_a = 2.0, "dsh_alpha"_a = 0.01, "hashnet_step_size"_a = 200.0,
        "greedy_alpha"_a = 0.1, "idhn_lambda"_a = 0.1, "csq_lambda"_a = 1e-4,
        "dpn_margin"_a = 1.0,
        "Adam training on the dataset's train split with periodic retrieval "
        "evaluation; returns the metric log and leaves the model at its best "
        "evaluation point. Objectives: dsh, hashnet, greedyhash, idhn, csq, dpn.");

    m.def(
        "encode_split",
        [](const Model& model, const Dataset& ds, const std::string& split,
           std::size_t batch_size) {
            const auto& idx = split_indices(ds, split);
            py::gil_scoped_release release;
            return encode_split(model, ds, idx, batch_size);
        },
        "model"_a, "dataset"_a, "split"_a, "batch_size"_a = 32,
        "Eval-mode encoding of one split ('train' | 'query' | 'database') into packed codes.");

    // ---- codes and retrieval ----------------------------------------------

    py::class_<BinaryCodeSet>(m, "CodeSet", "Packed binary codes with ids and label sets.")
        .def(py::init<>())
        .def_readwrite("bits", &BinaryCodeSet::bits)
        .def_readonly("ids", &BinaryCodeSet::ids)
        .def_readonly("labels", &BinaryCodeSet::labels)
        .def("__len__", &BinaryCodeSet::size)
        .def("codes",
             [](const BinaryCodeSet& s) {
                 py::array_t<std::uint64_t> a(
                     {py::ssize_t(s.size()), py::ssize_t(s.words_per_code())});
                 std::copy(s.words.begin(), s.words.end(), a.mutable_data());
                 return a;
             },
             "Codes as a uint64 [n, words_per_code] array, bit i of code j at "
             "word i//64, bit i%64.")
        .def(
            "push",
            [](BinaryCodeSet& s, std::uint64_t id, std::vector<std::uint32_t> labels,
               const std::vector<std::uint64_t>& words) {
                s.push(id, std::move(labels), words);
            },
            "id"_a, "labels"_a, "words"_a)
        .def("save", [](const BinaryCodeSet& s, const std::string& p) { save_code_set(p, s); },
             "path"_a)
        .def_static("load", &load_code_set, "path"_a);

    m.def(
        "hamming",
        [](const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b,
           std::size_t bits) { return hamming(a, b, bits); },
        "a"_a, "b"_a, "bits"_a);

    m.def(
        "rank",
        [](const std::vector<std::uint64_t>& query, std::size_t bits, const BinaryCodeSet& db,
           std::size_t topk) { return rank(query.data(), bits, db, topk); },
        "query"_a, "bits"_a, "db"_a, "topk"_a = 0,
        "Database indices by ascending Hamming distance; ties rank by index.");

    m.def(
        "map_at_k",
        [](const BinaryCodeSet& queries, const BinaryCodeSet& db, std::size_t cutoff,
           bool exclude_self) {
            EvalOptions opt;
            opt.cutoff = cutoff;
            opt.exclude_self = exclude_self;
            MapResult r;
            {
                py::gil_scoped_release release;
                r = map_at_k(queries, db, opt);
            }
            return map_result_dict(r);
        },
        "queries"_a, "db"_a, "cutoff"_a = 0, "exclude_self"_a = false,
        "Mean average precision at `cutoff` (0 = whole database).");

    m.def(
        "pr_curve",
        [](const BinaryCodeSet& queries, const BinaryCodeSet& db, bool exclude_self) {
            PrCurve pr;
            {
                py::gil_scoped_release release;
                pr = pr_curve(queries, db, exclude_self);
            }
            py::dict out;
            out["recall"] = pr.recall;
            out["precision"] = pr.precision;
            out["queries_used"] = pr.queries_used;
            out["queries_skipped"] = pr.queries_skipped;
            return out;
        },
        "queries"_a, "db"_a, "exclude_self"_a = false,
        "Macro-averaged precision at the 21-point recall grid {0, 0.05, ..., 1}.");

    // ---- weight container --------------------------------------------------

    m.def(
        "load_weights",
        [](const std::string& path) {
            py::dict out;
            for (auto& [name, nt] : load_weights(path)) {
                std::vector<py::ssize_t> shape(nt.shape.begin(), nt.shape.end());
                py::array_t<float> a(shape);
                std::copy(nt.data.begin(), nt.data.end(), a.mutable_data());
                out[py::str(name)] = a;
            }
            return out;
        },
        "path"_a, "Read a .vtsw container as {name: float32 array}.");
}
