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

#include <gtest/gtest.h>

#include <random>

#include "lfam/calibrate_kl.hpp"
#include "lfam/errors.hpp"
#include "oracles.hpp"

using namespace lfam;

namespace {

CalibHistogram random_histogram(HistogramMode mode, std::size_t bins, std::mt19937_64& rng) {
  CalibHistogram h = make_histogram(mode, 1.0, bins);
  std::uniform_int_distribution<int> c(0, 40);
  std::bernoulli_distribution empty(0.3);
  for (auto& v : h.counts) v = empty(rng) ? 0 : static_cast<std::uint64_t>(c(rng));
  h.counts[bins - 1] += 1;
  return h;
}

}  // namespace

TEST(CalibrateKl, ZerosAreExcluded) {
  Tensor t(Shape{3}, {-1.0f, 0.0f, 1.0f});
  const auto abs = collect_histogram(std::span(&t, 1), HistogramMode::Absolute);
  EXPECT_EQ(abs.total(), 2u);
  EXPECT_EQ(abs.range_lo, 0.0);
  const auto real = collect_histogram(std::span(&t, 1), HistogramMode::Real);
  EXPECT_EQ(real.total(), 2u);
  EXPECT_EQ(real.range_lo, -real.range_hi);
  for (std::size_t i = 0; i < real.bin_count; ++i) EXPECT_EQ(real.counts[i], real.counts[real.bin_count - 1 - i]);
}

TEST(CalibrateKl, RealModeHasTwiceTheBins) {
  std::mt19937_64 rng(5);
  const Tensor t = oracle::random_tensor({1000}, rng);
  const auto a = collect_histogram(std::span(&t, 1), HistogramMode::Absolute);
  const auto r = collect_histogram(std::span(&t, 1), HistogramMode::Real);
  EXPECT_EQ(r.bin_count, 2 * a.bin_count);
  EXPECT_EQ(a.bin_count, 2048u);
}

TEST(CalibrateKl, MergeEqualsConcatenation) {
  std::mt19937_64 rng(6);
  const Tensor a = oracle::random_tensor({500}, rng), b = oracle::random_tensor({700}, rng);
  Tensor ab(Shape{1200});
  std::copy(a.data().begin(), a.data().end(), ab.data().begin());
  std::copy(b.data().begin(), b.data().end(), ab.data().begin() + 500);
  const double m = max_abs(std::span(&ab, 1));
  for (auto mode : {HistogramMode::Absolute, HistogramMode::Real}) {
    CalibHistogram ha = make_histogram(mode, m), hb = make_histogram(mode, m), hab = make_histogram(mode, m);
    accumulate(ha, a.data());
    accumulate(hb, b.data());
    accumulate(hab, ab.data());
    EXPECT_EQ(merge(ha, hb), hab);
    EXPECT_EQ(merge(hb, ha), hab);
  }
  EXPECT_THROW(merge(make_histogram(HistogramMode::Real, 1.0), make_histogram(HistogramMode::Real, 2.0)), ValueError);
}

TEST(CalibrateKl, AllZeroDataIsAnError) {
  Tensor z(Shape{4});
  EXPECT_THROW(collect_histogram(std::span(&z, 1), HistogramMode::Absolute), CalibrationError);
}

TEST(CalibrateKl, ThresholdMatchesExhaustiveOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const bool real = trial % 2 == 1;
    const std::size_t bins = real ? 600 : 300;
    const auto h = random_histogram(real ? HistogramMode::Real : HistogramMode::Absolute, bins, rng);
    const ThresholdResult r = search_threshold(h);
    EXPECT_EQ(r.candidate, oracle::kl_argmin(h.counts, real)) << "trial " << trial;
    EXPECT_FLOAT_EQ(r.params.scale, static_cast<float>(r.threshold / 127.0));
  }
}

TEST(CalibrateKl, UniformHistogramKeepsFullRange) {
  CalibHistogram h = make_histogram(HistogramMode::Absolute, 1.0, 128);
  for (auto& c : h.counts) c = 10;
  const auto r = search_threshold(h);
  EXPECT_DOUBLE_EQ(r.threshold, 1.0);
  EXPECT_DOUBLE_EQ(r.divergence, 0.0);
}

TEST(CalibrateKl, DegenerateHistogramReturnsRange) {
  CalibHistogram h = make_histogram(HistogramMode::Absolute, 2.0, 1);
  h.counts[0] = 5;
  const auto r = search_threshold(h);
  EXPECT_DOUBLE_EQ(r.threshold, 2.0);
  EXPECT_DOUBLE_EQ(r.divergence, 0.0);
}

TEST(CalibrateKl, OutliersAreClipped) {
  // A bulk near zero plus a single far outlier: the threshold should sit well below the outlier.
  std::mt19937_64 rng(8);
  Tensor t = oracle::random_tensor({20000}, rng, 0.1);
  t[0] = 10.0f;
  const auto r = search_threshold(collect_histogram(std::span(&t, 1), HistogramMode::Absolute));
  EXPECT_LT(r.threshold, 2.0);
  EXPECT_GT(r.threshold, 0.2);
}

TEST(CalibrateKl, ScaleFromThreshold) {
  EXPECT_FLOAT_EQ(scale_from_threshold(127.0).scale, 1.0f);
  EXPECT_FLOAT_EQ(scale_from_threshold(12.7).scale, 0.1f);
  EXPECT_EQ(scale_from_threshold(12.7).bound, 127);
  EXPECT_THROW(scale_from_threshold(0.0), ValueError);
  EXPECT_THROW(scale_from_threshold(-1.0), ValueError);
}

TEST(CalibrateKl, ModeNames) {
  EXPECT_EQ(histogram_mode_from_string("real"), HistogramMode::Real);
  EXPECT_EQ(histogram_mode_from_string("absolute"), HistogramMode::Absolute);
  EXPECT_THROW(histogram_mode_from_string("signed"), ConfigError);
}
