#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "forgeloc/checkpoint.hpp"
#include "forgeloc/errors.hpp"
#include "forgeloc/gradcheck.hpp"
#include "forgeloc/losses.hpp"
#include "forgeloc/metrics.hpp"
#include "forgeloc/synth.hpp"
#include "forgeloc/trainer.hpp"
#include "forgeloc/version.hpp"

namespace py = pybind11;
using namespace forgeloc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

FloatArray to_numpy(const TensorF& t) {
  FloatArray out(t.shape());
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

template <class T, class A>
Tensor<T> from_numpy(const A& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

std::span<const float> view(const FloatArray& a) { return {a.data(), static_cast<size_t>(a.size())}; }

py::dict sample_dict(const ForgerySample& s) {
  py::dict d;
  d["image"] = to_numpy(s.image);
  d["mask"] = to_numpy(s.mask);
  d["kind"] = to_string(s.kind);
  d["seed"] = s.seed;
  return d;
}

/// A trained model loaded from a checkpoint.
class Model {
 public:
  explicit Model(const std::string& path) : ck_(load_checkpoint(path)), model_(model_from_checkpoint(ck_)) {}

  FloatArray predict(const FloatArray& image, int branch) const {
    if (branch == 0) branch = ck_.config.output_branch;
    return to_numpy(forgeloc::predict(*model_, from_numpy<float>(image), branch));
  }
  std::string config_json() const { return to_json(ck_.config).dump(); }
  int64_t epoch() const { return ck_.epoch; }
  int64_t num_parameters() const { return model_->parameters().num_parameters(); }

 private:
  Checkpoint ck_;
  std::unique_ptr<ForgeryLocalizer<float>> model_;
};

}  // namespace

PYBIND11_MODULE(_forgeloc, m) {
  m.doc() = "Forgery localization: synthetic data, metrics, losses and inference";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);

  m.def("version", &version_string);

  m.def(
      "make_sample",
      [](uint64_t seed, const std::string& kind, int64_t size) {
        return sample_dict(make_sample(seed, parse_forgery_kind(kind), size, size));
      },
      py::arg("seed"), py::arg("kind"), py::arg("size") = 64,
      "Synthetic forgery sample: image [3,H,W] and mask [1,H,W] as float32 arrays.");

  m.def(
      "build_manifest",
      [](int64_t n, uint64_t seed, int64_t size, const std::string& kinds) {
        return build_manifest(n, seed, size, size, parse_forgery_kinds(kinds)).to_json().dump();
      },
      py::arg("n"), py::arg("seed"), py::arg("size") = 64,
      py::arg("kinds") = "copy_move,splicing,removal", "Dataset manifest as a JSON string.");

  m.def(
      "write_dataset",
      [](int64_t n, uint64_t seed, int64_t size, const std::string& kinds, const std::string& root) {
        write_dataset(build_manifest(n, seed, size, size, parse_forgery_kinds(kinds)), root);
      },
      py::arg("n"), py::arg("seed"), py::arg("size"), py::arg("kinds"), py::arg("root"));

  m.def(
      "pixel_auc",
      [](const FloatArray& scores, const FloatArray& gt) -> std::optional<double> {
        return pixel_auc(view(scores), view(gt));
      },
      py::arg("scores"), py::arg("gt"), "None when the ground truth is all 0 or all 1.");
  m.def(
      "f1_score",
      [](const FloatArray& scores, const FloatArray& gt, double threshold) {
        return f1_score(view(scores), view(gt), threshold);
      },
      py::arg("scores"), py::arg("gt"), py::arg("threshold") = 0.5);

  m.def(
      "dice_loss",
      [](const DoubleArray& y, const DoubleArray& p, double smooth) {
        return dice_loss(from_numpy<double>(y), from_numpy<double>(p), smooth).item();
      },
      py::arg("y"), py::arg("y_hat"), py::arg("smooth") = 1.0);
  m.def(
      "focal_loss",
      [](const DoubleArray& y, const DoubleArray& p, double alpha, double gamma) {
        return focal_loss(from_numpy<double>(y), from_numpy<double>(p), alpha, gamma).item();
      },
      py::arg("y"), py::arg("y_hat"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);

  m.def(
      "gradcheck_ops",
      [](uint64_t seed, double tol) {
        py::list out;
        for (const auto& r : gradcheck_ops(seed, tol)) {
          py::dict d;
          d["name"] = r.name;
          d["max_error"] = r.max_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("tol") = 1e-4);

  m.def(
      "default_config",
      [] { return to_json(TrainConfig{}).dump(); }, "Default training config as a JSON string.");

  m.def(
      "train",
      [](const std::string& config_json, const std::string& data_dir, const std::string& out_dir) {
        const TrainConfig cfg = train_config_from_json(nlohmann::json::parse(config_json));
        cfg.validate();
        const DatasetManifest man = read_manifest(data_dir);
        const auto tr = load_split(data_dir, man, Split::kTrain);
        const auto va = load_split(data_dir, man, Split::kVal);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg, tr, va, {out_dir, {}});
        }
        return metrics_csv(r.history);
      },
      py::arg("config_json"), py::arg("data_dir"), py::arg("out_dir"),
      "Trains on a dataset directory; returns the metrics CSV.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("predict", &Model::predict, py::arg("image"), py::arg("branch") = 0,
           "Probability map [1,H,W] for a [3,H,W] image in [0,1].")
      .def_property_readonly("config_json", &Model::config_json)
      .def_property_readonly("epoch", &Model::epoch)
      .def_property_readonly("num_parameters", &Model::num_parameters);
}
