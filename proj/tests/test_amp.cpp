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

#include "lfam/amp.hpp"
#include "lfam/errors.hpp"
#include "oracles.hpp"

using namespace lfam;

TEST(Amp, FallbackIsTopKOfCosts) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> level(0, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 12;
    std::vector<LayerCost> costs;
    std::vector<std::pair<int, double>> plain;
    for (int i = 0; i < n; ++i) {
      const double c = level(rng) * 0.25;  // coarse levels force ties
      costs.push_back({i, c, 4});
      plain.emplace_back(i, c);
    }
    const std::vector<int> excluded{n - 1};
    const std::size_t k = static_cast<std::size_t>(trial % 6);
    const PrecisionPlan plan = select_fallback(costs, k, excluded);
    EXPECT_EQ(plan.fallback_layers(), oracle::topk(plain, k, excluded));
    EXPECT_EQ(plan.at(n - 1), Precision::Float32);
    EXPECT_TRUE(plan.is_excluded(n - 1));
  }
}

TEST(Amp, BudgetChecks) {
  std::vector<LayerCost> costs{{0, 1.0, 2}, {1, 2.0, 2}};
  EXPECT_THROW(select_fallback(costs, 3), ConfigError);
  std::vector<int> ex{1};
  EXPECT_THROW(select_fallback(costs, 2, ex), ConfigError);
  std::vector<LayerCost> uneven{{0, 1.0, 2}, {1, 2.0, 3}};
  EXPECT_THROW(select_fallback(uneven, 1), ConfigError);
  std::vector<LayerCost> dup{{0, 1.0, 2}, {0, 2.0, 2}};
  EXPECT_THROW(select_fallback(dup, 1), ConfigError);
  EXPECT_TRUE(select_fallback(costs, 0).fallback_layers().empty());
}

TEST(Amp, PlanTextRoundTrip) {
  std::vector<LayerCost> costs{{0, 0.125, 2}, {1, 3.5, 2}, {2, 1e-7, 2}};
  std::vector<int> ex{3};
  PrecisionPlan plan = select_fallback(costs, 1, ex);
  const std::string text = format_plan(plan);
  EXPECT_NE(text.find("1 float32 3.5"), std::string::npos);
  EXPECT_NE(text.find("3 float32 excluded"), std::string::npos);
  EXPECT_EQ(parse_plan(text), plan);
  EXPECT_THROW(parse_plan("0 int4 1.0\n"), FormatError);
}

TEST(Amp, LayerCostMatchesFakeQuantReference) {
  std::mt19937_64 rng(32);
  const Tensor w = oracle::random_tensor({5, 4}, rng, 0.5);
  const Tensor b = oracle::random_tensor({4}, rng);
  std::vector<Tensor> calib{oracle::random_tensor({3, 5}, rng), oracle::random_tensor({6, 5}, rng)};
  const QuantParams wq = QuantParams::from_scale(0.01f), aq = QuantParams::from_scale(0.02f);
  const LayerCost c = layer_cost(7, w, b, calib, wq, aq);
  EXPECT_EQ(c.layer_id, 7);
  EXPECT_EQ(c.sample_count, 2u);
  double total = 0.0;
  for (const Tensor& a : calib) {
    double err = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t j = 0; j < 4; ++j) {
        double ref = b[j];
        long acc = 0;
        for (std::size_t p = 0; p < 5; ++p) {
          ref += static_cast<double>(a(r, p)) * w(p, j);
          acc += oracle::quantize(a(r, p), aq.scale) * oracle::quantize(w(p, j), wq.scale);
        }
        const double q = static_cast<double>(acc) * (static_cast<double>(wq.scale) * aq.scale);
        const double d = ref - (q + b[j]);
        err += d * d;
      }
    total += err / static_cast<double>(a.rows() * 4);
  }
  EXPECT_NEAR(c.cost, total / 2.0, 1e-9 * total);
}

TEST(Amp, ShapeErrors) {
  const Tensor w(Shape{3, 2}), b(Shape{2});
  std::vector<Tensor> bad{Tensor(Shape{1, 4})};
  const auto p = QuantParams::from_scale(1.0f);
  EXPECT_THROW(layer_cost(0, w, b, bad, p, p), DimensionError);
  EXPECT_THROW(layer_cost(0, w, b, {}, p, p), CalibrationError);
}
