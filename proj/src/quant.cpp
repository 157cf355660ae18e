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

#include "lfam/quant.hpp"

#include <algorithm>
#include <cmath>

namespace lfam {

QuantParams QuantParams::from_scale(float scale) {
  QuantParams p{scale, kQuantBound};
  p.validate();
  return p;
}

void QuantParams::validate() const {
  if (!(std::isfinite(scale) && scale > 0.0f)) {
    throw ValueError("quantization scale must be finite and positive, got " + std::to_string(scale));
  }
  if (bound != kQuantBound) {
    throw ValueError("quantization bound must be 127, got " + std::to_string(bound));
  }
}

std::int8_t quantize_value(float v, float scale) {
  const double x = std::clamp(static_cast<double>(v) / static_cast<double>(scale),
                              -static_cast<double>(kQuantBound), static_cast<double>(kQuantBound));
  // std::round is half-away-from-zero.
  return static_cast<std::int8_t>(std::round(x));
}

IntTensor quantize(const Tensor& v, const QuantParams& p) {
  p.validate();
  std::vector<std::int8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ValueError("cannot quantize non-finite value at flat index " + std::to_string(i));
    }
    out[i] = quantize_value(v[i], p.scale);
  }
  return IntTensor(v.shape(), std::move(out));
}

Tensor dequantize(const IntTensor& q, const QuantParams& p) {
  p.validate();
  std::vector<float> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = p.scale * static_cast<float>(q[i]);
  return Tensor(q.shape(), std::move(out));
}

Tensor fake_quantize(const Tensor& v, const QuantParams& p) { return dequantize(quantize(v, p), p); }

double fake_quantize_value(double v, float scale) {
  return static_cast<double>(scale * static_cast<float>(quantize_value(static_cast<float>(v), scale)));
}

}  // namespace lfam
