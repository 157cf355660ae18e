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
#include <span>
#include <vector>

#include "lfam/tensor.hpp"

namespace lfam {

inline constexpr double kImportanceDecay = 0.99;

/// EMA of Taylor importance (w * dL/dw)^2, one vector per prunable tensor.
struct ImportanceState {
  std::vector<std::vector<double>> importance;
  double alpha = kImportanceDecay;
  std::int64_t step = 0;

  std::size_t weight_count() const;
};

/// Staircase linear ramp from 0 at start_step to final_sparsity at end_step.
struct SparsitySchedule {
  std::int64_t start_step = 0;
  std::int64_t end_step = 0;
  double final_sparsity = 0.0;
  std::int64_t update_interval = 100;

  void validate() const;
};

/// keep[tensor][offset] == 1 for surviving weights.
struct SparseMask {
  std::vector<std::vector<std::uint8_t>> keep;

  std::size_t total() const;
  std::size_t pruned() const;
  std::size_t kept() const { return total() - pruned(); }

  friend bool operator==(const SparseMask&, const SparseMask&) = default;
};

/// I_0 = |w_0|.
ImportanceState init_importance(std::span<const Tensor> weights, double alpha = kImportanceDecay);

/// I_t = alpha * I_{t-1} + (1 - alpha) * (w_t * g_t)^2, step += 1.
ImportanceState update_importance(ImportanceState state, std::span<const Tensor> weights,
                                  std::span<const Tensor> grads);

double schedule_ratio(const SparsitySchedule& schedule, std::int64_t t);

/// floor(ratio * n). A 1e-9 guard absorbs representation error such as 0.29 * 100 = 28.999...
std::size_t pruned_count_for(double ratio, std::size_t n);

/**
 * Ranks every prunable weight across all tensors by importance and prunes the
 * floor(ratio * N) least important. Per-tensor sparsity falls out of the
 * global ranking. Ties prune the lower (tensor index, flat offset) first.
 */
SparseMask global_mask(const ImportanceState& state, double ratio);
SparseMask apply_global_mask(const ImportanceState& state, const SparsitySchedule& schedule, std::int64_t t);

SparseMask full_mask(std::span<const Tensor> weights);

/// Zeroes pruned positions in place.
void apply_mask(std::span<Tensor> tensors, const SparseMask& mask);

/**
 * Drives importance tracking and mask updates from a training loop.
 *
 * The mask is re-ranked at every update_interval boundary from start_step on,
 * so pruned weights may regrow, and is frozen once end_step is reached.
 */
class Sparsifier {
 public:
  Sparsifier(SparsitySchedule schedule, std::span<const Tensor> weights);

  /// Feeds the weights and (masked) gradients of step t. Returns true when the mask changed.
  bool on_step(std::int64_t t, std::span<const Tensor> weights, std::span<const Tensor> grads);

  const SparseMask& mask() const noexcept { return mask_; }
  const ImportanceState& state() const noexcept { return state_; }
  const SparsitySchedule& schedule() const noexcept { return schedule_; }
  bool frozen() const noexcept { return frozen_; }

 private:
  SparsitySchedule schedule_;
  ImportanceState state_;
  SparseMask mask_;
  bool frozen_ = false;
};

}  // namespace lfam
