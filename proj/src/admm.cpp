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

#include "lfam/admm.hpp"

#include <cmath>

namespace lfam {

namespace {

void require_nonzero(const Tensor& w) {
  for (float v : w.data()) {
    if (!std::isfinite(v)) throw ValueError("weight tensor holds a non-finite value");
  }
  for (float v : w.data()) {
    if (v != 0.0f) return;
  }
  throw CalibrationError("cannot calibrate an all-zero weight tensor");
}

}  // namespace

float maxabs_scale(const Tensor& w) {
  require_nonzero(w);
  float m = 0.0f;
  for (float v : w.data()) m = std::max(m, std::fabs(v));
  return m / static_cast<float>(kQuantBound);
}

double quantization_mse(const Tensor& w, float scale) {
  double acc = 0.0;
  for (float v : w.data()) {
    const double d = static_cast<double>(v) - fake_quantize_value(v, scale);
    acc += d * d;
  }
  return acc / static_cast<double>(w.size());
}

AdmmResult admm_refine(const Tensor& w, float s0, int iters) {
  require_nonzero(w);
  if (!(std::isfinite(s0) && s0 > 0.0f)) throw ValueError("initial scale must be positive");
  if (iters < 1) throw ValueError("admm_refine needs at least one iteration");

  AdmmResult result;
  auto& records = result.trace.records;
  float s = s0;
  for (int k = 0; k < iters; ++k) {
    double wq = 0.0, qq = 0.0, err = 0.0;
    for (float v : w.data()) {
      const double q = quantize_value(v, s);
      const double d = static_cast<double>(v) - static_cast<double>(s * static_cast<float>(q));
      wq += static_cast<double>(v) * q;
      qq += q * q;
      err += d * d;
    }
    records.push_back({s, err / static_cast<double>(w.size())});
    if (records.back().mse < records[result.trace.best_index].mse) {
      result.trace.best_index = records.size() - 1;
    }
    if (qq == 0.0) break;
    const auto next = static_cast<float>(wq / qq);
    if (!(next > 0.0f) || !std::isfinite(next)) break;
    if (std::fabs(static_cast<double>(next) - s) / s < kAdmmRelativeTolerance) break;
    s = next;
  }
  result.params = QuantParams::from_scale(records[result.trace.best_index].scale);
  return result;
}

}  // namespace lfam
