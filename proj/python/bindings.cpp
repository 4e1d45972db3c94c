#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "lsvis/gemm.hpp"
#include "lsvis/harness.hpp"
#include "lsvis/metrics.hpp"

namespace py = pybind11;
using namespace lsvis;

namespace {

py::array_t<float> images_to_numpy(const data::LabeledImageSet& set) {
    py::array_t<float> out({set.count(), int64_t(1), set.height(), set.width()});
    std::copy(set.images.data.begin(), set.images.data.end(), out.mutable_data());
    return out;
}

nd::Array numpy_to_matrix(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D float array");
    nd::Array z({a.shape(0), a.shape(1)});
    std::copy(a.data(), a.data() + a.size(), z.data.begin());
    return z;
}

py::dict dataset_to_dict(const data::LabeledImageSet& set) {
    py::dict d;
    d["images"] = images_to_numpy(set);
    d["labels"] = py::array_t<int>(static_cast<py::ssize_t>(set.labels.size()), set.labels.data());
    d["class_count"] = set.class_count;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "latent-space visualization pipeline (C++ core)";
    nd::pin_blas_threads();

    m.def("generate_channels",
          [](int64_t n, uint64_t seed) { return dataset_to_dict(data::generate_channels(n, seed)); },
          py::arg("n"), py::arg("seed") = 0);
    m.def("generate_splash",
          [](int64_t n, uint64_t seed) { return dataset_to_dict(data::generate_splash(n, seed)); },
          py::arg("n"), py::arg("seed") = 0);
    m.def("generate_digits",
          [](int64_t n, uint64_t seed) { return dataset_to_dict(data::generate_digits(n, seed)); },
          py::arg("n"), py::arg("seed") = 0);

    m.def("silhouette_score",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& points,
             const std::vector<int>& labels) {
              auto rep = metrics::silhouette_score(numpy_to_matrix(points), labels);
              py::dict d;
              d["silhouette"] = rep.silhouette;
              d["n"] = rep.n;
              d["k"] = rep.k;
              d["per_class_mean"] = rep.per_class_mean;
              return d;
          },
          py::arg("points"), py::arg("labels"));

    m.def("fit_ab", &proj::fit_ab, py::arg("min_dist"), py::arg("spread"));

    m.def("project",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& z,
             const std::vector<int>& labels, int64_t n_neighbors, int epochs, uint64_t seed) {
              proj::ProjectionConfig cfg;
              cfg.n_neighbors = n_neighbors;
              cfg.epochs = epochs;
              cfg.seed = seed;
              auto e = proj::project(numpy_to_matrix(z), labels, cfg);
              py::array_t<float> coords({e.coords.shape[0], int64_t(2)});
              std::copy(e.coords.data.begin(), e.coords.data.end(), coords.mutable_data());
              return coords;
          },
          py::arg("z"), py::arg("labels"), py::arg("n_neighbors") = 15, py::arg("epochs") = 200,
          py::arg("seed") = 0);

    m.def("run_experiment",
          [](const std::string& config_json) {
              auto cfg = harness::parse_config(nlohmann::json::parse(config_json));
              auto res = harness::run_experiment(cfg);
              py::dict d;
              d["silhouette"] = res.silhouette;
              d["classifier_accuracy"] = res.classifier_accuracy;
              d["final_train_total"] = res.epochs.back().train.total;
              d["final_train_rec"] = res.epochs.back().train.l_rec;
              d["aux_skipped_batches"] = res.aux_skipped_batches;
              d["aux_evaluations"] = res.aux_evaluations;
              d["output_dir"] = harness::resolve_output_dir(cfg.output_dir);
              return d;
          },
          py::arg("config_json"));
}
