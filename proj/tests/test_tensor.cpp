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

#include "lfam/errors.hpp"
#include "lfam/tensor.hpp"
#include "oracles.hpp"

using namespace lfam;

TEST(Tensor, MatmulMatchesNaiveLoop) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dim(1, 9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = dim(rng), k = dim(rng), m = dim(rng);
    Matrix a = tensor_cast<double>(oracle::random_tensor({n, k}, rng));
    Matrix b = tensor_cast<double>(oracle::random_tensor({k, m}, rng));
    const Matrix c = matmul(a, b);
    const auto ref = oracle::naive_matmul(a.values(), b.values(), n, k, m);
    ASSERT_EQ(c.shape(), (Shape{n, m}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
  }
}

TEST(Tensor, MatmulRejectsMismatchedShapes) {
  EXPECT_THROW(matmul(Tensor(Shape{2, 3}), Tensor(Shape{4, 2})), DimensionError);
  EXPECT_THROW(matmul(Tensor(Shape{2, 3, 1}), Tensor(Shape{3, 2})), DimensionError);
}

TEST(Tensor, ConstructionValidatesShapeAndLength) {
  EXPECT_THROW(Tensor(Shape{0, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
  EXPECT_THROW(IntTensor(Shape{1}, {std::int8_t{-128}}), ValueError);
  EXPECT_NO_THROW(IntTensor(Shape{2}, {std::int8_t{-127}, std::int8_t{127}}));
}

TEST(Tensor, MseIsMeanSquaredDifference) {
  Tensor a(Shape{4}, {1, 2, 3, 4});
  Tensor b(Shape{4}, {1, 0, 3, 0});
  EXPECT_DOUBLE_EQ(mse(a, b), (4.0 + 16.0) / 4.0);
  EXPECT_THROW(mse(a, Tensor(Shape{3})), DimensionError);
}

TEST(Tensor, RawRoundTripIsLittleEndian) {
  Tensor t(Shape{2, 2}, {1.0f, -2.5f, 0.0f, 3.25f});
  const Bytes b = serialize_raw(t);
  ASSERT_EQ(b.size(), 16u);
  // 1.0f = 0x3f800000
  EXPECT_EQ(b[0], 0x00);
  EXPECT_EQ(b[3], 0x3f);
  EXPECT_EQ(deserialize_raw(b, t.shape()), t);
  EXPECT_THROW(deserialize_raw(std::span(b).first(15), t.shape()), FormatError);
}

TEST(Tensor, IntegerHelpersRoundTrip) {
  Bytes b;
  put_u16(b, 0x1234);
  put_u32(b, 0xdeadbeef);
  put_u64(b, 0x0102030405060708ull);
  ASSERT_EQ(b.size(), 14u);
  EXPECT_EQ(b[0], 0x34);
  EXPECT_EQ(get_u16(b.data()), 0x1234);
  EXPECT_EQ(get_u32(b.data() + 2), 0xdeadbeefu);
  EXPECT_EQ(get_u64(b.data() + 6), 0x0102030405060708ull);
}
