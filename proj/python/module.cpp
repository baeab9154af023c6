#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "scvm/checkpoint.hpp"
#include "scvm/config.hpp"
#include "scvm/gradcheck_suite.hpp"
#include "scvm/objective.hpp"
#include "scvm/trainer.hpp"

namespace py = pybind11;
using namespace scvm;

namespace {

// Configs cross the boundary as JSON text; the Python side wraps them in dicts.
RunConfig parse_config(const std::string& text) {
  RunConfig cfg = text.empty() ? default_run_config() : run_config_from_json(nlohmann::json::parse(text));
  cfg.validate();
  return cfg;
}

py::array_t<float> to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor<float> from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>::from(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["seed"] = s.seed;
  d["image"] = to_array(s.image_tensor<float>());
  d["question_id"] = s.question_id;
  d["family"] = std::string(family_name(s.family));
  d["question_tokens"] = s.question_tokens;
  d["answer_id"] = s.answer_id;
  d["answer"] = std::string(answer_name(s.answer_id));
  return d;
}

py::dict gate_dict(const GateStats& g) {
  py::dict d;
  d["layer"] = g.layer;
  d["mean_f"] = g.mean_f;
  d["mean_i"] = g.mean_i;
  d["mean_alpha"] = g.mean_alpha;
  d["mem_l2"] = g.mem_l2;
  d["delta_linf"] = g.delta_linf;
  return d;
}

// A model bundled with the run config it was built from.
class PyModel {
 public:
  explicit PyModel(RunConfig cfg) : cfg_(std::move(cfg)), model_(cfg_.model), space_(language_space(cfg_)) {}
  PyModel(RunConfig cfg, Model<float> model)
      : cfg_(std::move(cfg)), model_(std::move(model)), space_(language_space(cfg_)) {}

  static PyModel load(const std::filesystem::path& path) {
    const auto ckpt = read_checkpoint(path);
    return PyModel(ckpt.config, restore_model(ckpt));
  }

  void save(const std::filesystem::path& path) const {
    write_checkpoint(path, capture_checkpoint(model_, nullptr, cfg_, "export", 0));
  }

  std::string config() const { return to_json(cfg_).dump(); }

  void set_ablation(bool scvm, bool tag, bool text) {
    model_.mechanism().enabled = scvm;
    model_.mechanism().tag_enabled = tag;
    model_.mechanism().text_conditioning = text;
  }

  py::dict forward(const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
                   const std::vector<std::uint32_t>& question_tokens, std::uint32_t answer_id, double lambda) {
    Sample s;
    s.image_size = static_cast<std::uint32_t>(cfg_.task.image_size);
    const auto img = from_array(image);
    if (img.shape() != Shape{s.image_size, s.image_size, 3})
      throw ShapeError("forward: image must be " + to_string(Shape{s.image_size, s.image_size, 3}) + ", got " +
                       to_string(img.shape()));
    s.image = img.to_vector();
    s.question_tokens = question_tokens;
    s.answer_id = answer_id;
    NoGradGuard guard;
    const auto fwd = forward_sample(model_, s, space_, cfg_.task, lambda, EncodeOptions::from(model_.mechanism()));
    py::dict d;
    d["logits"] = to_array(fwd.logits);
    // No memory is threaded through the encoder with the mechanism off.
    d["memory"] = fwd.encode.memory.c.defined() ? py::object(to_array(fwd.encode.memory.c)) : py::none();
    d["features"] = to_array(fwd.encode.features);
    d["loss_task"] = static_cast<double>(fwd.task.item());
    d["loss_align"] = static_cast<double>(fwd.align.item());
    d["loss_total"] = static_cast<double>(fwd.total.item());
    return d;
  }

  py::list inspect(std::uint64_t sample_seed) const {
    py::list out;
    for (const auto& g : inspect_gates(model_, space_, cfg_.task, sample_seed)) out.append(gate_dict(g));
    return out;
  }

  std::string evaluate_json(std::size_t n, std::uint64_t seed) const {
    return evaluate(model_, space_, cfg_.task, seed, n).to_json().dump();
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto& p : model_.parameters().all()) names.push_back(p.name);
    return names;
  }

  py::array_t<float> parameter(const std::string& name) const { return to_array(model_.parameters().get(name).tensor); }

  std::uint64_t hash(const std::string& prefix) const { return parameter_hash(model_, prefix); }

 private:
  RunConfig cfg_;
  Model<float> model_;
  ProxyLanguageSpace space_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Stateful cross-layer memory on a miniature vision transformer";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("default_config", [] { return to_json(default_run_config()).dump(); });
  m.def("normalize_config", [](const std::string& text) { return to_json(parse_config(text)).dump(); },
        py::arg("config_json"));

  m.def(
      "generate_sample",
      [](std::uint64_t seed, const std::string& config) { return sample_dict(generate_sample(seed, parse_config(config).task)); },
      py::arg("seed"), py::arg("config_json") = "");
  m.def(
      "dataset_sample",
      [](std::uint64_t dataset_seed, std::uint64_t index, const std::string& config) {
        return sample_dict(dataset_sample(dataset_seed, index, parse_config(config).task));
      },
      py::arg("dataset_seed"), py::arg("index"), py::arg("config_json") = "");

  m.def(
      "train",
      [](const std::string& config, std::optional<std::filesystem::path> out_dir) {
        const RunConfig cfg = parse_config(config);
        TrainResult result = [&] {
          py::gil_scoped_release release;
          return train(cfg, out_dir);
        }();
        py::list metrics;
        for (const auto& r : result.metrics) metrics.append(r.to_json().dump());
        return py::make_tuple(PyModel(cfg, std::move(result.model)), metrics);
      },
      py::arg("config_json") = "", py::arg("out_dir") = py::none());

  m.def("gradcheck", [](std::uint64_t seed) {
    py::list out;
    for (const auto& r : run_gradcheck_suite(seed)) {
      py::dict d;
      d["name"] = r.name;
      d["status"] = std::string(to_string(r.status));
      d["max_relative_error"] = r.max_relative_error;
      d["coordinates"] = r.coordinates;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 0);

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& config) { return PyModel(parse_config(config)); }),
           py::arg("config_json") = "")
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("config_json", &PyModel::config)
      .def("set_ablation", &PyModel::set_ablation, py::arg("scvm") = true, py::arg("tag") = true,
           py::arg("text") = true)
      .def("forward", &PyModel::forward, py::arg("image"), py::arg("question_tokens"), py::arg("answer_id"),
           py::arg("lam") = 0.05)
      .def("inspect", &PyModel::inspect, py::arg("sample_seed"))
      .def("evaluate_json", &PyModel::evaluate_json, py::arg("n"), py::arg("seed"))
      .def("parameter_names", &PyModel::parameter_names)
      .def("parameter", &PyModel::parameter, py::arg("name"))
      .def("parameter_hash", &PyModel::hash, py::arg("prefix") = "");
}
