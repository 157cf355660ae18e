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

#include "lfam/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace lfam {

std::size_t ImportanceState::weight_count() const {
  std::size_t n = 0;
  for (const auto& v : importance) n += v.size();
  return n;
}

void SparsitySchedule::validate() const {
  if (!(final_sparsity >= 0.0 && final_sparsity < 1.0)) {
    throw ConfigError("final sparsity must lie in [0, 1)");
  }
  if (start_step < 0 || end_step < start_step) throw ConfigError("schedule needs 0 <= start_step <= end_step");
  if (update_interval < 1) throw ConfigError("schedule update_interval must be >= 1");
}

std::size_t SparseMask::total() const {
  std::size_t n = 0;
  for (const auto& k : keep) n += k.size();
  return n;
}

std::size_t SparseMask::pruned() const {
  std::size_t n = 0;
  for (const auto& k : keep) n += static_cast<std::size_t>(std::count(k.begin(), k.end(), std::uint8_t{0}));
  return n;
}

ImportanceState init_importance(std::span<const Tensor> weights, double alpha) {
  ImportanceState s;
  s.alpha = alpha;
  s.importance.reserve(weights.size());
  for (const auto& w : weights) {
    std::vector<double> imp(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) imp[i] = std::fabs(static_cast<double>(w[i]));
    s.importance.push_back(std::move(imp));
  }
  return s;
}

ImportanceState update_importance(ImportanceState state, std::span<const Tensor> weights,
                                  std::span<const Tensor> grads) {
  if (weights.size() != state.importance.size() || grads.size() != weights.size()) {
    throw DimensionError("importance update needs one weight and one gradient per tracked tensor");
  }
  const double a = state.alpha;
  for (std::size_t t = 0; t < weights.size(); ++t) {
    const Tensor& w = weights[t];
    const Tensor& g = grads[t];
    auto& imp = state.importance[t];
    if (w.shape() != g.shape() || w.size() != imp.size()) {
      throw DimensionError("importance update shape mismatch on tensor " + std::to_string(t) + ": " +
                           shape_to_string(w.shape()) + " vs " + shape_to_string(g.shape()));
    }
    for (std::size_t i = 0; i < imp.size(); ++i) {
      const double taylor = static_cast<double>(w[i]) * static_cast<double>(g[i]);
      imp[i] = a * imp[i] + (1.0 - a) * taylor * taylor;
    }
  }
  ++state.step;
  return state;
}

double schedule_ratio(const SparsitySchedule& s, std::int64_t t) {
  if (t < s.start_step) return 0.0;
  if (t >= s.end_step) return s.final_sparsity;
  const std::int64_t stair = s.start_step + ((t - s.start_step) / s.update_interval) * s.update_interval;
  return s.final_sparsity * static_cast<double>(stair - s.start_step) /
         static_cast<double>(s.end_step - s.start_step);
}

std::size_t pruned_count_for(double ratio, std::size_t n) {
  if (ratio <= 0.0) return 0;
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  return std::min(k, n);
}

SparseMask global_mask(const ImportanceState& state, double ratio) {
  SparseMask mask;
  mask.keep.reserve(state.importance.size());
  for (const auto& imp : state.importance) mask.keep.emplace_back(imp.size(), std::uint8_t{1});

  const std::size_t n = state.weight_count();
  const std::size_t k = pruned_count_for(ratio, n);
  if (k == 0) return mask;

  struct Entry {
    double importance;
    std::uint32_t tensor;
    std::uint32_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(n);
  for (std::size_t t = 0; t < state.importance.size(); ++t) {
    for (std::size_t i = 0; i < state.importance[t].size(); ++i) {
      entries.push_back({state.importance[t][i], static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
    }
  }
  auto less = [](const Entry& a, const Entry& b) {
    return std::tie(a.importance, a.tensor, a.offset) < std::tie(b.importance, b.tensor, b.offset);
  };
  std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k - 1), entries.end(), less);
  // nth_element leaves [0, k) as the k smallest under `less`.
  for (std::size_t j = 0; j < k; ++j) mask.keep[entries[j].tensor][entries[j].offset] = 0;
  return mask;
}

SparseMask apply_global_mask(const ImportanceState& state, const SparsitySchedule& schedule, std::int64_t t) {
  return global_mask(state, schedule_ratio(schedule, t));
}

SparseMask full_mask(std::span<const Tensor> weights) {
  SparseMask m;
  for (const auto& w : weights) m.keep.emplace_back(w.size(), std::uint8_t{1});
  return m;
}

void apply_mask(std::span<Tensor> tensors, const SparseMask& mask) {
  if (tensors.size() != mask.keep.size()) throw DimensionError("mask covers a different number of tensors");
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (tensors[t].size() != mask.keep[t].size()) throw DimensionError("mask/tensor size mismatch");
    for (std::size_t i = 0; i < tensors[t].size(); ++i) {
      if (!mask.keep[t][i]) tensors[t][i] = 0.0f;
    }
  }
}

Sparsifier::Sparsifier(SparsitySchedule schedule, std::span<const Tensor> weights)
    : schedule_(schedule), state_(init_importance(weights)), mask_(full_mask(weights)) {
  schedule_.validate();
}

bool Sparsifier::on_step(std::int64_t t, std::span<const Tensor> weights, std::span<const Tensor> grads) {
  state_ = update_importance(std::move(state_), weights, grads);
  if (frozen_ || t < schedule_.start_step) return false;
  const bool boundary = (t - schedule_.start_step) % schedule_.update_interval == 0 || t >= schedule_.end_step;
  if (!boundary) return false;
  SparseMask next = apply_global_mask(state_, schedule_, t);
  if (t >= schedule_.end_step) frozen_ = true;
  if (next == mask_) return false;
  mask_ = std::move(next);
  return true;
}

}  // namespace lfam
