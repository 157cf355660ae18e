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

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lfam/quant.hpp"
#include "lfam/tensor.hpp"

namespace lfam {

enum class Precision { Int8, Float32 };

const char* to_string(Precision p);

struct LayerCost {
  int layer_id = 0;
  double cost = 0.0;
  std::size_t sample_count = 0;
};

/**
 * Per-layer precision decision. `precision` covers every layer, excluded ones
 * included (always Float32); exactly `k` eligible layers are Float32.
 */
struct PrecisionPlan {
  std::map<int, Precision> precision;
  std::size_t k = 0;
  std::vector<int> excluded;
  std::map<int, double> cost;

  std::vector<int> fallback_layers() const;
  bool is_excluded(int layer_id) const;
  Precision at(int layer_id) const;

  friend bool operator==(const PrecisionPlan&, const PrecisionPlan&) = default;
};

struct CostOptions {
  /// Divide by the float output's mean square. Off: the cost is the plain MSE.
  bool relative = false;
};

/**
 * Quantization cost of one linear layer y = a W + b.
 *
 * For each calibration activation `a` ([rows, in]) the float output is
 * compared against the integer path: int32 accumulation of Q(a) Q(W),
 * rescaled by s_a * s_w, plus the float bias. Both paths see the same `a`.
 * The cost is the per-sample MSE averaged over the stream.
 */
LayerCost layer_cost(int layer_id, const Tensor& weight, const Tensor& bias, std::span<const Tensor> calib,
                     const QuantParams& wq, const QuantParams& aq, CostOptions options = {});

/// Top-k costs fall back to Float32; equal costs prefer the smaller layer id.
PrecisionPlan select_fallback(std::span<const LayerCost> costs, std::size_t k, std::span<const int> excluded = {});

/// One `layer_id precision cost` line per layer; excluded layers carry cost `excluded`.
std::string format_plan(const PrecisionPlan& plan);
PrecisionPlan parse_plan(const std::string& text);

}  // namespace lfam
