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

#include "lfam/amp.hpp"

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <sstream>

namespace lfam {

const char* to_string(Precision p) { return p == Precision::Int8 ? "int8" : "float32"; }

std::vector<int> PrecisionPlan::fallback_layers() const {
  std::vector<int> out;
  for (const auto& [id, p] : precision) {
    if (p == Precision::Float32 && !is_excluded(id)) out.push_back(id);
  }
  return out;
}

bool PrecisionPlan::is_excluded(int layer_id) const {
  return std::find(excluded.begin(), excluded.end(), layer_id) != excluded.end();
}

Precision PrecisionPlan::at(int layer_id) const {
  auto it = precision.find(layer_id);
  if (it == precision.end()) throw ConfigError("plan has no entry for layer " + std::to_string(layer_id));
  return it->second;
}

LayerCost layer_cost(int layer_id, const Tensor& weight, const Tensor& bias, std::span<const Tensor> calib,
                     const QuantParams& wq, const QuantParams& aq, CostOptions options) {
  if (calib.empty()) throw CalibrationError("layer " + std::to_string(layer_id) + ": empty calibration stream");
  if (weight.rank() != 2 || bias.size() != weight.cols()) {
    throw DimensionError("layer " + std::to_string(layer_id) + ": weight must be [in, out] with a matching bias");
  }
  const std::size_t in = weight.rows(), out = weight.cols();
  const IntTensor qw = quantize(weight, wq);
  const double rescale = static_cast<double>(wq.scale) * static_cast<double>(aq.scale);

  double total = 0.0;
  std::vector<std::int32_t> acc(out);
  std::vector<double> ref(out);
  for (const Tensor& a : calib) {
    if (a.rank() != 2 || a.cols() != in) {
      throw DimensionError("layer " + std::to_string(layer_id) + ": activation " + shape_to_string(a.shape()) +
                           " does not feed a weight of " + shape_to_string(weight.shape()));
    }
    const IntTensor qa = quantize(a, aq);
    double err = 0.0, energy = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      std::fill(acc.begin(), acc.end(), 0);
      for (std::size_t j = 0; j < out; ++j) ref[j] = bias[j];
      for (std::size_t p = 0; p < in; ++p) {
        const double av = a(r, p);
        const std::int32_t qav = qa(r, p);
        for (std::size_t j = 0; j < out; ++j) {
          ref[j] += av * static_cast<double>(weight(p, j));
          acc[j] += qav * static_cast<std::int32_t>(qw(p, j));
        }
      }
      for (std::size_t j = 0; j < out; ++j) {
        const double deq = rescale * static_cast<double>(acc[j]) + static_cast<double>(bias[j]);
        const double d = ref[j] - deq;
        err += d * d;
        energy += ref[j] * ref[j];
      }
    }
    double sample = err / static_cast<double>(a.rows() * out);
    if (options.relative) sample = energy > 0.0 ? err / energy : 0.0;
    total += sample;
  }
  return {layer_id, total / static_cast<double>(calib.size()), calib.size()};
}

PrecisionPlan select_fallback(std::span<const LayerCost> costs, std::size_t k, std::span<const int> excluded) {
  PrecisionPlan plan;
  plan.k = k;
  plan.excluded.assign(excluded.begin(), excluded.end());
  std::sort(plan.excluded.begin(), plan.excluded.end());

  std::vector<LayerCost> eligible;
  for (const auto& c : costs) {
    if (plan.is_excluded(c.layer_id)) continue;
    if (plan.precision.count(c.layer_id)) throw ConfigError("duplicate cost for layer " + std::to_string(c.layer_id));
    plan.precision[c.layer_id] = Precision::Int8;
    plan.cost[c.layer_id] = c.cost;
    eligible.push_back(c);
  }
  if (k > eligible.size()) {
    throw ConfigError("fallback budget " + std::to_string(k) + " exceeds " + std::to_string(eligible.size()) +
                      " eligible layers");
  }
  if (!eligible.empty()) {
    const std::size_t n = eligible.front().sample_count;
    for (const auto& c : eligible) {
      if (c.sample_count != n) throw ConfigError("layer costs were measured over different sample counts");
    }
  }
  std::sort(eligible.begin(), eligible.end(), [](const LayerCost& a, const LayerCost& b) {
    if (a.cost != b.cost) return a.cost > b.cost;
    return a.layer_id < b.layer_id;
  });
  for (std::size_t i = 0; i < k; ++i) plan.precision[eligible[i].layer_id] = Precision::Float32;
  for (int id : plan.excluded) plan.precision[id] = Precision::Float32;
  return plan;
}

std::string format_plan(const PrecisionPlan& plan) {
  std::ostringstream os;
  os << "# layer_id precision cost\n";
  os << "# k " << plan.k << "\n";
  for (const auto& [id, p] : plan.precision) {
    os << id << ' ' << to_string(p) << ' ';
    if (plan.is_excluded(id)) {
      os << "excluded";
    } else {
      os << std::setprecision(17) << plan.cost.at(id);
    }
    os << '\n';
  }
  return os.str();
}

PrecisionPlan parse_plan(const std::string& text) {
  PrecisionPlan plan;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "k") ls >> plan.k;
      continue;
    }
    int id = 0;
    std::string prec, cost;
    if (!(ls >> id >> prec >> cost)) throw FormatError("plan line " + std::to_string(lineno) + " is malformed");
    Precision p;
    if (prec == "int8") {
      p = Precision::Int8;
    } else if (prec == "float32") {
      p = Precision::Float32;
    } else {
      throw FormatError("plan line " + std::to_string(lineno) + ": unknown precision '" + prec + "'");
    }
    plan.precision[id] = p;
    if (cost == "excluded") {
      plan.excluded.push_back(id);
    } else {
      try {
        plan.cost[id] = std::stod(cost);
      } catch (const std::exception&) {
        throw FormatError("plan line " + std::to_string(lineno) + ": bad cost '" + cost + "'");
      }
    }
  }
  std::sort(plan.excluded.begin(), plan.excluded.end());
  return plan;
}

}  // namespace lfam
