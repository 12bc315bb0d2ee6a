#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>
#include <sstream>

#include "fann/checkpoint.hpp"
#include "fann/config.hpp"
#include "fann/dataio.hpp"
#include "fann/error.hpp"
#include "fann/evaluator.hpp"
#include "fann/gradcheck.hpp"
#include "fann/losses.hpp"
#include "fann/network.hpp"
#include "fann/trainer.hpp"

namespace py = pybind11;
using namespace fann;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
    return Tensor(Shape(dims), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array out(t.shape().dims());
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

std::vector<int> to_ints(const py::sequence& s) { return s.cast<std::vector<int>>(); }

DistanceMatrix to_distances(const Array& d) {
    if (d.ndim() != 2) throw ShapeError("distance matrix must be 2-D");
    DistanceMatrix m;
    m.rows = static_cast<std::size_t>(d.shape(0));
    m.cols = static_cast<std::size_t>(d.shape(1));
    m.values.assign(d.data(), d.data() + d.size());
    return m;
}

py::dict metrics_dict(const MetricsRow& r) {
    py::dict d;
    d["iter"] = r.iteration;
    d["E"] = r.objective;
    d["L1"] = r.triplet;
    d["L2"] = r.regression;
    d["R"] = r.regularizer;
    d["mean_u"] = r.mean_u;
    d["mean_v"] = r.mean_v;
    d["lr"] = r.learning_rate;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Foreground-attentive re-identification network";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("paper", &RunConfig::paper)
        .def_static("desk", &RunConfig::desk)
        .def_static("load", [](const std::filesystem::path& p) { return RunConfig::load(p); })
        .def_static("parse", [](const std::string& text) {
            std::istringstream in(text);
            return RunConfig::parse(in);
        })
        .def_static("keys", &RunConfig::keys)
        .def("get", &RunConfig::get)
        .def("set", &RunConfig::set)
        .def("serialize", &RunConfig::serialize)
        .def("__getitem__", &RunConfig::get)
        .def("__setitem__", &RunConfig::set);

    py::class_<Network>(m, "Network")
        .def_static("build", [](const RunConfig& cfg, std::uint64_t seed) { return Network::build(cfg.network(), seed); },
                    py::arg("config"), py::arg("seed") = 1)
        .def_property_readonly("input_shape", [](const Network& n) { return n.config().input_shape().dims(); })
        .def_property_readonly("embedding_dim", [](const Network& n) { return n.config().embedding_dim(); })
        .def_property_readonly("param_names", &Network::param_names)
        .def("param_count", &Network::param_count)
        .def("embed", [](const Network& n, const Array& image) { return to_array(n.embed(to_tensor(image))); })
        .def("reconstruct", [](const Network& n, const Array& image) {
            return to_array(n.forward(to_tensor(image), true).reconstruction);
        })
        .def("weights", [](const Network& n, const std::string& name) {
            return to_array(n.params()[n.param_index(name)].weights);
        })
        .def("biases", [](const Network& n, const std::string& name) {
            return to_array(n.params()[n.param_index(name)].biases);
        });

    py::class_<AdaptiveWeightState>(m, "AdaptiveWeightState")
        .def(py::init([](double u, double v, double gamma, const std::string& sign) {
                 if (sign != "textual" && sign != "literal") throw Error("sign must be textual or literal");
                 return AdaptiveWeightState::from_weights(u, v, gamma,
                                                          sign == "textual" ? SignMode::textual : SignMode::literal);
             }),
             py::arg("u") = 0.6, py::arg("v") = 0.4, py::arg("gamma") = 0.01, py::arg("sign") = "textual")
        .def_property_readonly("u", &AdaptiveWeightState::u)
        .def_property_readonly("v", &AdaptiveWeightState::v)
        .def_property_readonly("alpha", &AdaptiveWeightState::alpha)
        .def_property_readonly("beta", &AdaptiveWeightState::beta)
        .def("step",
             [](AdaptiveWeightState& s, double d12, double d13, double d23, double margin) {
                 return s.step(TripletDistances{d12, d13, d23}, margin);
             },
             py::arg("d12"), py::arg("d13"), py::arg("d23"), py::arg("margin"));

    m.def("symmetric_triplet_loss",
          [](const Array& a, const Array& p, const Array& n, double u, double v, double margin) {
              return symmetric_triplet_loss(TripletFeatures{to_tensor(a), to_tensor(p), to_tensor(n)}, u, v, margin);
          },
          py::arg("anchor"), py::arg("positive"), py::arg("negative"), py::arg("u"), py::arg("v"),
          py::arg("margin"));

    m.def("cmc",
          [](const Array& d, const py::sequence& probe_ids, const py::sequence& gallery_ids, std::size_t max_rank) {
              return cmc(to_distances(d), to_ints(probe_ids), to_ints(gallery_ids), max_rank);
          },
          py::arg("distances"), py::arg("probe_ids"), py::arg("gallery_ids"), py::arg("max_rank") = 20);
    m.def("average_precision",
          [](const Array& row, int probe_id, const py::sequence& gallery_ids) {
              if (row.ndim() != 1) throw ShapeError("distance row must be 1-D");
              return average_precision(std::span(row.data(), static_cast<std::size_t>(row.size())), probe_id,
                                       to_ints(gallery_ids));
          },
          py::arg("row"), py::arg("probe_id"), py::arg("gallery_ids"));

    m.def("encode_fant", [](const Array& a) {
        auto bytes = encode_fant(to_tensor(a));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    });
    m.def("decode_fant", [](const py::bytes& b) {
        std::string s = b;
        std::vector<std::uint8_t> bytes(s.begin(), s.end());
        return to_array(decode_fant(bytes));
    });

    m.def("generate_synthetic_dataset",
          [](const std::filesystem::path& out, std::size_t identities, std::size_t cameras, std::size_t per_camera,
             std::uint64_t seed, std::size_t clutter) {
              SyntheticSpec spec;
              spec.identities = identities;
              spec.cameras = cameras;
              spec.images_per_camera = per_camera;
              spec.seed = seed;
              spec.clutter = clutter;
              return generate_synthetic_dataset(spec, out).manifest.entries.size();
          },
          py::arg("out"), py::arg("identities") = 20, py::arg("cameras") = 2, py::arg("per_camera") = 4,
          py::arg("seed") = 1, py::arg("clutter") = 3);

    m.def("load_manifest", [](const std::filesystem::path& p) {
        py::list out;
        for (const auto& e : DatasetManifest::load(p).entries) {
            out.append(py::make_tuple(e.image_path, e.mask_path, e.identity, e.camera));
        }
        return out;
    });

    m.def("train",
          [](Network& net, const RunConfig& cfg, const std::filesystem::path& data, std::size_t iterations,
             const std::filesystem::path& out_dir) {
              const auto manifest = DatasetManifest::load(data);
              const auto& nc = net.config();
              const auto samples = manifest.load_all(nc.input_height, nc.input_width);
              TrainState state;
              {
                  py::gil_scoped_release release;
                  state = train(net, samples, manifest.entries, cfg, iterations, TrainOptions{out_dir, {}});
              }
              py::list log;
              for (const auto& r : state.log) log.append(metrics_dict(r));
              return log;
          },
          py::arg("network"), py::arg("config"), py::arg("data"), py::arg("iterations"),
          py::arg("out_dir") = std::filesystem::path());

    m.def("save_checkpoint", &save_checkpoint, py::arg("dir"), py::arg("network"), py::arg("config"));
    m.def("load_checkpoint", [](const std::filesystem::path& dir) {
        auto ck = load_checkpoint(dir);
        return py::make_tuple(std::move(ck.network), std::move(ck.config));
    });

    m.def("run_gradcheck",
          [](const RunConfig& cfg, std::uint64_t seed) {
              const auto report = run_gradcheck(cfg.network(), seed);
              py::dict out;
              for (const auto& e : report.entries) out[py::str(e.term)] = e.max_rel_error;
              return py::make_tuple(report.passed(), out);
          },
          py::arg("config"), py::arg("seed") = 1);

    m.def("simulate_triplet_dynamics",
          [](const std::string& loss, std::size_t steps) {
              if (loss != "symmetric" && loss != "asymmetric") throw Error("loss must be symmetric or asymmetric");
              DynamicsConfig cfg;
              cfg.kind = loss == "symmetric" ? TripletLossKind::symmetric : TripletLossKind::asymmetric;
              cfg.steps = steps;
              std::ostringstream csv;
              write_dynamics_csv(csv, simulate_triplet_dynamics(cfg));
              return csv.str();
          },
          py::arg("loss") = "symmetric", py::arg("steps") = 200);
}
