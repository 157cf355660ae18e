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

#include "lfam/calibrate_kl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace lfam {

const char* to_string(HistogramMode mode) { return mode == HistogramMode::Absolute ? "absolute" : "real"; }

HistogramMode histogram_mode_from_string(const std::string& s) {
  if (s == "absolute") return HistogramMode::Absolute;
  if (s == "real") return HistogramMode::Real;
  throw ConfigError("unknown histogram mode '" + s + "' (expected absolute|real)");
}

std::size_t default_bin_count(HistogramMode mode) {
  return mode == HistogramMode::Absolute ? kAbsoluteBins : kRealBins;
}

std::size_t target_levels(HistogramMode mode) { return mode == HistogramMode::Absolute ? 128 : 256; }

std::uint64_t CalibHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

CalibHistogram make_histogram(HistogramMode mode, double range_hi, std::optional<std::size_t> bins) {
  if (!(std::isfinite(range_hi) && range_hi > 0.0)) {
    throw CalibrationError("histogram range must be positive and finite");
  }
  CalibHistogram h;
  h.mode = mode;
  h.bin_count = bins.value_or(default_bin_count(mode));
  if (h.bin_count == 0) throw ValueError("histogram needs at least one bin");
  if (mode == HistogramMode::Real && h.bin_count % 2 != 0) {
    throw ValueError("real-mode histogram needs an even bin count");
  }
  h.range_hi = range_hi;
  h.range_lo = mode == HistogramMode::Absolute ? 0.0 : -range_hi;
  h.counts.assign(h.bin_count, 0);
  return h;
}

void accumulate(CalibHistogram& h, std::span<const float> values) {
  const double width = h.bin_width();
  const auto last = static_cast<std::int64_t>(h.bin_count) - 1;
  for (float f : values) {
    if (f == 0.0f) continue;
    if (!std::isfinite(f)) throw ValueError("non-finite calibration sample");
    const double v = h.mode == HistogramMode::Absolute ? std::fabs(static_cast<double>(f)) : f;
    auto idx = static_cast<std::int64_t>(std::floor((v - h.range_lo) / width));
    idx = std::clamp<std::int64_t>(idx, 0, last);
    ++h.counts[static_cast<std::size_t>(idx)];
  }
}

CalibHistogram merge(const CalibHistogram& a, const CalibHistogram& b) {
  if (a.mode != b.mode || a.bin_count != b.bin_count || a.range_lo != b.range_lo || a.range_hi != b.range_hi) {
    throw ValueError("cannot merge histograms with different mode, bins or range");
  }
  CalibHistogram out = a;
  for (std::size_t i = 0; i < out.counts.size(); ++i) out.counts[i] += b.counts[i];
  return out;
}

double max_abs(std::span<const Tensor> samples) {
  double m = 0.0;
  for (const auto& t : samples) {
    for (float v : t.data()) m = std::max(m, std::fabs(static_cast<double>(v)));
  }
  if (m == 0.0) throw CalibrationError("calibration data is all zeros");
  return m;
}

CalibHistogram collect_histogram(std::span<const Tensor> samples, HistogramMode mode,
                                 std::optional<std::size_t> bins) {
  CalibHistogram h = make_histogram(mode, max_abs(samples), bins);
  for (const auto& t : samples) accumulate(h, t.data());
  return h;
}

namespace {

// KL(P || Q). P is the clipped slice with outliers folded into its edge
// bin(s); Q re-quantizes the in-range slice (no outliers) to `levels` merge
// groups and spreads each group's mass evenly over the bins where P is
// non-zero. Support bins left empty in Q (a group with P mass but no in-range
// mass) get kSmoothing before Q is renormalized. An empty in-range slice
// rules the candidate out.
constexpr double kSmoothing = 1e-4;

double requantized_divergence(std::span<const double> folded, std::span<const double> in_range, std::size_t levels) {
  const std::size_t n = folded.size();
  double p_mass = 0.0, q_mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p_mass += folded[i];
    q_mass += in_range[i];
  }
  if (p_mass <= 0.0) return 0.0;
  if (q_mass <= 0.0) return std::numeric_limits<double>::infinity();

  std::vector<double> q(n, 0.0);
  double q_total = 0.0;
  for (std::size_t g = 0; g < levels; ++g) {
    const std::size_t begin = g * n / levels;
    const std::size_t end = (g + 1) * n / levels;
    double group_mass = 0.0;
    std::size_t support = 0;
    for (std::size_t i = begin; i < end; ++i) {
      group_mass += in_range[i];
      if (folded[i] > 0.0) ++support;
    }
    if (support == 0) continue;
    const double share = group_mass > 0.0 ? group_mass / static_cast<double>(support) / q_mass : kSmoothing;
    for (std::size_t i = begin; i < end; ++i) {
      if (folded[i] > 0.0) {
        q[i] = share;
        q_total += share;
      }
    }
  }

  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (folded[i] > 0.0) {
      const double p = folded[i] / p_mass;
      kl += p * std::log(p / (q[i] / q_total));
    }
  }
  return std::max(kl, 0.0);
}

}  // namespace

DivergenceSweep divergence_sweep(const CalibHistogram& h) {
  const std::size_t levels = target_levels(h.mode);
  DivergenceSweep sweep;
  std::vector<double> ref, slice;

  if (h.mode == HistogramMode::Absolute) {
    if (h.bin_count < levels) return sweep;
    sweep.first_candidate = levels;
    for (std::size_t edge = levels; edge <= h.bin_count; ++edge) {
      slice.assign(h.counts.begin(), h.counts.begin() + static_cast<std::ptrdiff_t>(edge));
      ref = slice;
      for (std::size_t i = edge; i < h.bin_count; ++i) ref[edge - 1] += static_cast<double>(h.counts[i]);
      sweep.divergence.push_back(requantized_divergence(ref, slice, levels));
    }
  } else {
    const std::size_t center = h.bin_count / 2;
    const std::size_t min_half = levels / 2;
    if (center < min_half) return sweep;
    sweep.first_candidate = min_half;
    for (std::size_t half = min_half; half <= center; ++half) {
      const std::size_t lo = center - half;
      const std::size_t hi = center + half;
      slice.assign(h.counts.begin() + static_cast<std::ptrdiff_t>(lo),
                   h.counts.begin() + static_cast<std::ptrdiff_t>(hi));
      ref = slice;
      for (std::size_t i = 0; i < lo; ++i) ref.front() += static_cast<double>(h.counts[i]);
      for (std::size_t i = hi; i < h.bin_count; ++i) ref.back() += static_cast<double>(h.counts[i]);
      sweep.divergence.push_back(requantized_divergence(ref, slice, levels));
    }
  }
  return sweep;
}

ThresholdResult search_threshold(const CalibHistogram& h) {
  if (h.total() == 0) throw CalibrationError("cannot search a threshold on an empty histogram");

  const DivergenceSweep sweep = divergence_sweep(h);
  ThresholdResult r;
  if (sweep.divergence.empty()) {
    // Too few bins to re-quantize: keep the full range.
    r.threshold = h.range_hi;
    r.divergence = 0.0;
    r.candidate = h.mode == HistogramMode::Absolute ? h.bin_count : h.bin_count / 2;
    r.params = scale_from_threshold(r.threshold);
    return r;
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < sweep.divergence.size(); ++i) {
    if (sweep.divergence[i] < sweep.divergence[best]) best = i;
  }
  r.candidate = sweep.first_candidate + best;
  r.divergence = sweep.divergence[best];
  r.threshold = static_cast<double>(r.candidate) * h.bin_width();
  r.params = scale_from_threshold(r.threshold);
  return r;
}

QuantParams scale_from_threshold(double threshold) {
  if (!(std::isfinite(threshold) && threshold > 0.0)) {
    throw ValueError("threshold must be positive, got " + std::to_string(threshold));
  }
  return QuantParams::from_scale(static_cast<float>(threshold / kQuantBound));
}

}  // namespace lfam
