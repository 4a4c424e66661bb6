// Python bindings over the float build of the model: dataset generation,
// training, evaluation, single forward passes and the gradient-check suite.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mpn/check_suite.hpp"
#include "mpn/config.hpp"
#include "mpn/train.hpp"

namespace py = pybind11;
using namespace mpn;

namespace {

RunConfig config_from_dict(const py::dict& overrides) {
  RunConfig cfg;
  for (auto item : overrides)
    cfg.set(py::cast<std::string>(item.first), py::cast<std::string>(py::str(item.second)));
  cfg.finalize();
  return cfg;
}

Tensor<float> tensor_from_array(const py::array_t<float>& arr, const char* what) {
  py::buffer_info info = arr.request();
  Shape shape(info.shape.begin(), info.shape.end());
  auto flat = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
  if (!flat) throw ValueError(std::string(what) + ": expected a float array");
  std::vector<float> vals(flat.data(), flat.data() + flat.size());
  return Tensor<float>::from(std::move(shape), std::move(vals));
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

// Owns the model plus everything needed to run it.
struct Session {
  RunConfig cfg;
  ModelParams<float> params;

  explicit Session(const py::dict& overrides) : cfg(config_from_dict(overrides)) {
    Rng rng(cfg.train.seed);
    params.init(rng, cfg.model);
  }

  py::dict forward(const py::array_t<float>& visual, const py::array_t<float>& audio,
                   double tau) {
    NoGradGuard ng;
    auto v = tensor_from_array(visual, "visual");
    auto a = tensor_from_array(audio, "audio");
    auto preds = mpn_forward(v, a, params, cfg.model, static_cast<float>(tau));
    py::dict out;
    out["p_r"] = array_from_tensor(preds.p_r);
    out["p_c"] = array_from_tensor(preds.p_c);
    out["p_c_seg"] = array_from_tensor(preds.p_c_seg);
    out["p_j"] = array_from_tensor(preds.p_j);
    out["region_weights"] = array_from_tensor(preds.agva_weights);
    out["labels"] = decode(preds, cfg.train.decode_threshold,
                           cfg.train.regime == Regime::Weak);
    return out;
  }

  py::list fit(const Dataset& ds) {
    auto result = train(params, cfg.model, ds, cfg.train);
    py::list reports;
    for (const auto& r : result.reports) {
      py::dict d;
      d["epoch"] = r.epoch;
      d["train_loss"] = r.train_loss;
      d["tau"] = r.tau;
      d["val_accuracy"] = r.val_accuracy;
      reports.append(d);
    }
    return reports;
  }

  double score(const Dataset& ds, const std::string& split) {
    const auto& ids = split == "train"  ? ds.splits.train
                      : split == "val"  ? ds.splits.val
                      : split == "test" ? ds.splits.test
                                        : throw ValueError("unknown split " + split);
    return evaluate(params, cfg.model, ds, ids, cfg.train.schedule.tau_end, cfg.train.regime,
                    cfg.train.decode_threshold);
  }

  void save(const std::string& path) {
    auto plist = params.collect();
    save_params(plist, cfg.echo(), path);
  }

  void load(const std::string& path) {
    auto plist = params.collect();
    load_params(plist, path);
  }
};

}  // namespace

PYBIND11_MODULE(_mpn, m) {
  m.doc() = "multimodal parallel network for audio-visual event localization";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.attr("BACKGROUND") = kBackground;

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("n_videos",
                             [](const Dataset& ds) { return ds.samples.size(); })
      .def_property_readonly("splits",
                             [](const Dataset& ds) {
                               py::dict d;
                               d["train"] = ds.splits.train;
                               d["val"] = ds.splits.val;
                               d["test"] = ds.splits.test;
                               return d;
                             })
      .def("video",
           [](const Dataset& ds, std::uint32_t id) {
             const auto& s = ds.by_id(id);
             py::dict d;
             d["id"] = s.id;
             d["video_label"] = s.video_label;
             d["segment_labels"] = s.segment_labels;
             std::vector<py::ssize_t> vshape = {
                 static_cast<py::ssize_t>(ds.spec.n_segments),
                 static_cast<py::ssize_t>(ds.spec.n_regions),
                 static_cast<py::ssize_t>(ds.spec.p)};
             py::array_t<float> visual(vshape);
             std::copy(s.visual.begin(), s.visual.end(), visual.mutable_data());
             py::array_t<float> audio({static_cast<py::ssize_t>(ds.spec.n_segments),
                                       static_cast<py::ssize_t>(ds.spec.q)});
             std::copy(s.audio.begin(), s.audio.end(), audio.mutable_data());
             d["visual"] = visual;
             d["audio"] = audio;
             return d;
           });

  m.def(
      "generate",
      [](const py::dict& overrides) {
        return generate(config_from_dict(overrides).dataset);
      },
      py::arg("overrides") = py::dict());
  m.def("write_bundle", &write_bundle);
  m.def("read_bundle", &read_bundle);
  m.def("tau_at", [](double start, double end, int anneal, int epoch) {
    return tau_at(TemperatureSchedule{start, end, anneal}, epoch);
  });
  m.def("nearest_prototype_accuracy", [](const Dataset& ds, const std::string& split) {
    const auto& ids = split == "train"  ? ds.splits.train
                      : split == "val"  ? ds.splits.val
                      : split == "test" ? ds.splits.test
                                        : throw ValueError("unknown split " + split);
    return nearest_prototype_accuracy(ds, ids);
  });
  m.def(
      "grad_check",
      [](std::uint64_t seed) {
        py::dict out;
        for (const auto& c : run_check_suite(seed)) out[c.name.c_str()] = c.report.max_rel_err;
        return out;
      },
      py::arg("seed") = 7);

  py::class_<Session>(m, "Session")
      .def(py::init<const py::dict&>(), py::arg("overrides") = py::dict())
      .def_property_readonly("config", [](const Session& s) { return s.cfg.echo(); })
      .def("forward", &Session::forward, py::arg("visual"), py::arg("audio"),
           py::arg("tau") = 1.0)
      .def("fit", &Session::fit)
      .def("score", &Session::score, py::arg("dataset"), py::arg("split") = "test")
      .def("save", &Session::save)
      .def("load", &Session::load);
}
