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

#include <cstddef>
#include <vector>

#include "lfam/quant.hpp"
#include "lfam/tensor.hpp"

namespace lfam {

struct AdmmRecord {
  float scale = 0.0f;
  double mse = 0.0;
};

/// Every scale visited by the alternating update, with its reconstruction MSE.
struct AdmmTrace {
  std::vector<AdmmRecord> records;
  std::size_t best_index = 0;
};

struct AdmmResult {
  QuantParams params;
  AdmmTrace trace;
};

inline constexpr int kDefaultAdmmIters = 50;
inline constexpr double kAdmmRelativeTolerance = 1e-6;

/// max|w| / 127, the smallest scale at which Q(w) never clips.
float maxabs_scale(const Tensor& w);

/// MSE(w, scale * Q(w)).
double quantization_mse(const Tensor& w, float scale);

/**
 * Alternating scale refinement for weight quantization.
 *
 * Each step fixes the integer assignment q = clip(round(w/s_k), -127, 127)
 * and moves to its least-squares scale s_{k+1} = <w, q> / <q, q>. The MSE of
 * every visited scale is recorded and the minimum one wins, so the result is
 * never worse than `s0`. Stops after `iters` evaluated scales, when the
 * relative scale change falls below 1e-6, or when q collapses to all zeros.
 */
AdmmResult admm_refine(const Tensor& w, float s0, int iters = kDefaultAdmmIters);

}  // namespace lfam
