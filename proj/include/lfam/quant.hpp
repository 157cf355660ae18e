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

#pragma once

#include <cstdint>

#include "lfam/tensor.hpp"

namespace lfam {

/// Integer bound of symmetric int8 quantization; -128 is never produced.
inline constexpr int kQuantBound = 127;

/// Per-tensor symmetric quantization parameters: q = round(clip(v/scale, -127, 127)).
struct QuantParams {
  float scale = 1.0f;
  int bound = kQuantBound;

  /// Validated construction; throws ValueError unless scale is finite and positive.
  static QuantParams from_scale(float scale);

  void validate() const;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Quantizes one value. Rounding is half away from zero, so Q(-v) == -Q(v).
std::int8_t quantize_value(float v, float scale);

IntTensor quantize(const Tensor& v, const QuantParams& p);
Tensor dequantize(const IntTensor& q, const QuantParams& p);

/// DQ(Q(v)): the simulated-quantization round trip used by fake-quant inference.
Tensor fake_quantize(const Tensor& v, const QuantParams& p);
double fake_quantize_value(double v, float scale);

}  // namespace lfam
