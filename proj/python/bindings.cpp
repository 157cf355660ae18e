/*
 * Copyright (c) 2026 The LFAM Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lfam/admm.hpp"
#include "lfam/amp.hpp"
#include "lfam/calibrate_kl.hpp"
#include "lfam/errors.hpp"
#include "lfam/model_format.hpp"
#include "lfam/pipeline.hpp"
#include "lfam/quant.hpp"
#include "lfam/sparsify.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using Int8Array = py::array_t<std::int8_t, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
lfam::BasicTensor<T> to_tensor(const A& a) {
  lfam::Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return lfam::BasicTensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const lfam::BasicTensor<T>& t) {
  py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

lfam::PipelineConfig make_config(const std::vector<std::string>& overrides, const std::string& work_dir) {
  lfam::PipelineConfig cfg;
  for (const auto& kv : overrides) lfam::apply_override(cfg, kv);
  if (!work_dir.empty()) cfg.work_dir = work_dir;
  cfg.validate();
  return cfg;
}

py::dict size_dict(const lfam::SizeReport& r) {
  py::dict d;
  d["file_bytes"] = r.file_bytes;
  d["baseline_bytes"] = r.baseline_bytes;
  d["metadata_bytes"] = r.metadata_bytes;
  d["compression_ratio"] = r.compression_ratio;
  return d;
}

}  // namespace

PYBIND11_MODULE(_lfam, m) {
  m.doc() = "Sparse int8 compression for weight-shared transformers";

  static py::exception<lfam::Error> error(m, "Error");
  py::register_exception<lfam::ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<lfam::FormatError>(m, "FormatError", error.ptr());
  py::register_exception<lfam::CalibrationError>(m, "CalibrationError", error.ptr());
  py::register_exception<lfam::StageError>(m, "StageError", error.ptr());
  py::register_exception<lfam::ValueError>(m, "ValueError", error.ptr());
  py::register_exception<lfam::DimensionError>(m, "DimensionError", error.ptr());

  m.def("quantize", [](const FloatArray& v, float scale) {
    return to_array(lfam::quantize(to_tensor<float>(v), lfam::QuantParams::from_scale(scale)));
  }, py::arg("values"), py::arg("scale"));
  m.def("dequantize", [](const Int8Array& q, float scale) {
    return to_array(lfam::dequantize(to_tensor<std::int8_t>(q), lfam::QuantParams::from_scale(scale)));
  }, py::arg("codes"), py::arg("scale"));
  m.def("fake_quantize", [](const FloatArray& v, float scale) {
    return to_array(lfam::fake_quantize(to_tensor<float>(v), lfam::QuantParams::from_scale(scale)));
  }, py::arg("values"), py::arg("scale"));

  m.def("maxabs_scale", [](const FloatArray& w) { return lfam::maxabs_scale(to_tensor<float>(w)); });
  m.def("quantization_mse", [](const FloatArray& w, float s) { return lfam::quantization_mse(to_tensor<float>(w), s); });
  m.def("admm_refine", [](const FloatArray& w, float s0, int iters) {
    const auto r = lfam::admm_refine(to_tensor<float>(w), s0, iters);
    py::list trace;
    for (const auto& rec : r.trace.records) trace.append(py::make_tuple(rec.scale, rec.mse));
    return py::make_tuple(r.params.scale, trace, r.trace.best_index);
  }, py::arg("weights"), py::arg("s0"), py::arg("iters") = lfam::kDefaultAdmmIters,
        "Returns (scale, [(scale, mse), ...], best_index).");

  py::class_<lfam::CalibHistogram>(m, "CalibHistogram")
      .def_property_readonly("mode", [](const lfam::CalibHistogram& h) { return lfam::to_string(h.mode); })
      .def_readonly("bin_count", &lfam::CalibHistogram::bin_count)
      .def_readonly("range_lo", &lfam::CalibHistogram::range_lo)
      .def_readonly("range_hi", &lfam::CalibHistogram::range_hi)
      .def_readonly("counts", &lfam::CalibHistogram::counts)
      .def("total", &lfam::CalibHistogram::total)
      .def("merge", [](const lfam::CalibHistogram& a, const lfam::CalibHistogram& b) { return lfam::merge(a, b); });

  m.def("collect_histogram", [](const std::vector<FloatArray>& samples, const std::string& mode) {
    std::vector<lfam::Tensor> ts;
    for (const auto& s : samples) ts.push_back(to_tensor<float>(s));
    return lfam::collect_histogram(ts, lfam::histogram_mode_from_string(mode));
  }, py::arg("samples"), py::arg("mode") = "real");
  m.def("search_threshold", [](const lfam::CalibHistogram& h) {
    const auto r = lfam::search_threshold(h);
    py::dict d;
    d["threshold"] = r.threshold;
    d["divergence"] = r.divergence;
    d["scale"] = r.params.scale;
    d["candidate"] = r.candidate;
    return d;
  });

  m.def("update_importance", [](std::vector<std::vector<double>> importance, const std::vector<FloatArray>& weights,
                                const std::vector<FloatArray>& grads, double alpha) {
    lfam::ImportanceState s;
    s.importance = std::move(importance);
    s.alpha = alpha;
    std::vector<lfam::Tensor> w, g;
    for (const auto& a : weights) w.push_back(to_tensor<float>(a));
    for (const auto& a : grads) g.push_back(to_tensor<float>(a));
    return lfam::update_importance(std::move(s), w, g).importance;
  }, py::arg("importance"), py::arg("weights"), py::arg("grads"), py::arg("alpha") = lfam::kImportanceDecay);
  m.def("global_mask", [](std::vector<std::vector<double>> importance, double ratio) {
    lfam::ImportanceState s;
    s.importance = std::move(importance);
    return lfam::global_mask(s, ratio).keep;
  }, py::arg("importance"), py::arg("ratio"), "Keep flags per tensor (1 = kept).");

  m.def("select_fallback", [](const std::map<int, double>& costs, std::size_t k, const std::vector<int>& excluded) {
    std::vector<lfam::LayerCost> c;
    for (const auto& [id, v] : costs) c.push_back({id, v, 1});
    const auto plan = lfam::select_fallback(c, k, excluded);
    return py::make_tuple(plan.fallback_layers(), lfam::format_plan(plan));
  }, py::arg("costs"), py::arg("k"), py::arg("excluded") = std::vector<int>{},
        "Returns (fallback layer ids, plan text).");

  m.def("read_model", [](const std::filesystem::path& path) {
    const auto model = lfam::read_model_file(path);
    py::dict tensors;
    for (const auto& t : model.tensors) {
      tensors[py::str(t.name)] = py::make_tuple(lfam::to_string(t.encoding()), to_array(t.to_float()));
    }
    py::dict out;
    out["metadata"] = model.metadata;
    out["tensors"] = tensors;
    out["size"] = size_dict(lfam::model_size_report(model));
    return out;
  }, "Decodes an LFAM file: metadata, {name: (encoding, float array)} and size figures.");

  m.def("stage_order", &lfam::stage_order);
  m.def("default_config", [] { return lfam::format_config(lfam::PipelineConfig{}); });
  m.def("run_stage", [](const std::string& name, const std::vector<std::string>& overrides,
                        const std::string& work_dir) { lfam::run_stage(name, make_config(overrides, work_dir)); },
        py::arg("name"), py::arg("overrides") = std::vector<std::string>{}, py::arg("work_dir") = "");
  m.def("run_pipeline", [](const std::vector<std::string>& overrides, const std::string& work_dir) {
    const auto r = [&] {
      py::gil_scoped_release release;
      return lfam::run_pipeline(make_config(overrides, work_dir));
    }();
    py::dict d;
    d["stages"] = r.stage_log;
    d["size"] = size_dict(r.size);
    d["float_accuracy"] = r.evaluation.float_accuracy.sequence;
    d["quant_accuracy"] = r.evaluation.quant_accuracy.sequence;
    d["output_mse"] = r.evaluation.output_mse;
    d["fallback_layers"] = r.plan.fallback_layers();
    d["excluded_layers"] = r.plan.excluded;
    d["report"] = r.report_text;
    return d;
  }, py::arg("overrides") = std::vector<std::string>{}, py::arg("work_dir") = "",
        "Runs every stage with `key=value` overrides and returns a summary dict.");
}
