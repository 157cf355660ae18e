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
#include <optional>
#include <span>
#include <vector>

#include "lfam/quant.hpp"
#include "lfam/tensor.hpp"

namespace lfam {

/**
 * Histogram flavours for entropy calibration.
 *
 * Absolute bins |v| over [0, max|v|] and re-quantizes to 128 levels, the
 * classic treatment for ReLU outputs. Real bins the signed value over
 * [-max|v|, max|v|] with twice as many raw bins and re-quantizes to 256
 * levels, so sign information survives into the divergence.
 */
enum class HistogramMode { Absolute, Real };

const char* to_string(HistogramMode mode);
HistogramMode histogram_mode_from_string(const std::string& s);

inline constexpr std::size_t kAbsoluteBins = 2048;
inline constexpr std::size_t kRealBins = 4096;

std::size_t default_bin_count(HistogramMode mode);
std::size_t target_levels(HistogramMode mode);

struct CalibHistogram {
  HistogramMode mode = HistogramMode::Absolute;
  std::size_t bin_count = 0;
  double range_lo = 0.0;
  double range_hi = 0.0;
  std::vector<std::uint64_t> counts;
  bool zero_excluded = true;

  std::uint64_t total() const;
  double bin_width() const { return (range_hi - range_lo) / static_cast<double>(bin_count); }

  friend bool operator==(const CalibHistogram&, const CalibHistogram&) = default;
};

/// Empty histogram over [0, range_hi] (Absolute) or [-range_hi, range_hi] (Real).
CalibHistogram make_histogram(HistogramMode mode, double range_hi, std::optional<std::size_t> bins = std::nullopt);

/// Adds samples; exact zeros are skipped and values beyond the range land in the edge bins.
void accumulate(CalibHistogram& h, std::span<const float> values);

/// Elementwise count addition; both sides must share mode, bins and range.
CalibHistogram merge(const CalibHistogram& a, const CalibHistogram& b);

/// Largest magnitude over all samples; throws CalibrationError if every sample is zero.
double max_abs(std::span<const Tensor> samples);

/// Two passes: find max|v| over all samples, then bin them.
CalibHistogram collect_histogram(std::span<const Tensor> samples, HistogramMode mode,
                                 std::optional<std::size_t> bins = std::nullopt);

struct ThresholdResult {
  double threshold = 0.0;
  double divergence = 0.0;
  QuantParams params;
  /// Candidate index: upper bin edge in Absolute mode, half-width in bins in Real mode.
  std::size_t candidate = 0;
};

/// One divergence value per candidate, ordered by increasing threshold.
struct DivergenceSweep {
  std::size_t first_candidate = 0;
  std::vector<double> divergence;
};

DivergenceSweep divergence_sweep(const CalibHistogram& h);

/// Threshold minimizing KL(P || Q_T); ties go to the smaller threshold.
ThresholdResult search_threshold(const CalibHistogram& h);

/// scale = T / 127.
QuantParams scale_from_threshold(double threshold);

}  // namespace lfam
