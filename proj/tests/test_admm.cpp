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

#include "lfam/admm.hpp"
#include "lfam/errors.hpp"
#include "oracles.hpp"

using namespace lfam;

TEST(Admm, NeverWorseThanMaxAbs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor w = oracle::random_tensor({256}, rng);
    const float s0 = maxabs_scale(w);
    const AdmmResult r = admm_refine(w, s0);
    EXPECT_LE(quantization_mse(w, r.params.scale), quantization_mse(w, s0));
  }
}

TEST(Admm, ReturnedScaleIsTraceMinimum) {
  std::mt19937_64 rng(12);
  const Tensor w = oracle::random_tensor({64}, rng);
  const AdmmResult r = admm_refine(w, maxabs_scale(w));
  ASSERT_FALSE(r.trace.records.empty());
  EXPECT_LE(r.trace.records.size(), static_cast<std::size_t>(kDefaultAdmmIters));
  for (const auto& rec : r.trace.records) EXPECT_GE(rec.mse, r.trace.records[r.trace.best_index].mse);
  EXPECT_EQ(r.params.scale, r.trace.records[r.trace.best_index].scale);
  EXPECT_EQ(r.trace.records.front().scale, maxabs_scale(w));
}

TEST(Admm, MseMatchesOracle) {
  std::mt19937_64 rng(13);
  const Tensor w = oracle::random_tensor({100}, rng);
  for (float s : {0.001f, 0.01f, 0.03f}) {
    // f32 reconstruction inside the library vs double in the oracle
    EXPECT_NEAR(quantization_mse(w, s), oracle::quant_mse(w.values(), s), 1e-6 * oracle::quant_mse(w.values(), s));
  }
}

TEST(Admm, FixedPointOnGridAlignedWeights) {
  // Weights that are exact multiples of the max-abs scale quantize losslessly.
  Tensor w(Shape{4}, {127.0f * 0.5f, -3.0f * 0.5f, 10.0f * 0.5f, 0.0f});
  const AdmmResult r = admm_refine(w, maxabs_scale(w));
  EXPECT_FLOAT_EQ(r.params.scale, 0.5f);
  EXPECT_EQ(r.trace.records[r.trace.best_index].mse, 0.0);
}

TEST(Admm, SingleIterationReturnsInitialScale) {
  std::mt19937_64 rng(14);
  const Tensor w = oracle::random_tensor({32}, rng);
  const AdmmResult r = admm_refine(w, maxabs_scale(w), 1);
  EXPECT_EQ(r.trace.records.size(), 1u);
  EXPECT_EQ(r.params.scale, maxabs_scale(w));
}

TEST(Admm, Errors) {
  EXPECT_THROW(maxabs_scale(Tensor(Shape{3})), CalibrationError);
  EXPECT_THROW(admm_refine(Tensor(Shape{3}), 1.0f), CalibrationError);
  Tensor w(Shape{2}, {1.0f, 2.0f});
  EXPECT_THROW(admm_refine(w, 0.0f), ValueError);
  EXPECT_THROW(admm_refine(w, 1.0f, 0), ValueError);
}
