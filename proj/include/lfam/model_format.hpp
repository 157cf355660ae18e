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
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lfam/quant.hpp"
#include "lfam/tensor.hpp"

namespace lfam {

/*
 * LFAM container, all integers little-endian:
 *
 *   "LFAM" | u16 version | u32 chunk_count
 *   chunk_count x { u8 kind | u64 offset | u64 length }   offsets from file start
 *   chunk bodies, in table order
 *
 * Metadata body (kind 1): u16 key_len | key | u32 text_len | UTF-8 text
 * Tensor body   (kind 0): u16 name_len | name | u8 encoding | u8 rank |
 *                         rank x u32 dim | u64 payload_len | payload
 *
 * Payloads:
 *   DenseF32  4 * n bytes of f32
 *   DenseI8   f32 scale | n x i8
 *   SparseI8  f32 scale | ceil(n/8) bitmap | popcount x i8
 * Bitmap bit (i % 8) of byte (i / 8) is set when element i is kept (LSB first);
 * kept values follow in flat order and decode back with zeros elsewhere.
 */

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 4;
inline constexpr std::size_t kTableEntryBytes = 1 + 8 + 8;

enum class Encoding : std::uint8_t { DenseF32 = 0, DenseI8 = 1, SparseI8 = 2 };
enum class ChunkKind : std::uint8_t { Tensor = 0, Metadata = 1 };

const char* to_string(Encoding e);

struct DenseF32 {
  Tensor values;
  friend bool operator==(const DenseF32&, const DenseF32&) = default;
};

struct DenseI8 {
  IntTensor values;
  QuantParams params;
  friend bool operator==(const DenseI8&, const DenseI8&) = default;
};

struct SparseI8 {
  /// Full dense view; positions with keep == 0 must hold 0.
  IntTensor values;
  QuantParams params;
  std::vector<std::uint8_t> keep;
  friend bool operator==(const SparseI8&, const SparseI8&) = default;
};

struct TensorChunk {
  std::string name;
  std::variant<DenseF32, DenseI8, SparseI8> payload;

  Encoding encoding() const;
  const Shape& shape() const;
  /// Float view: the tensor itself, or its dequantization.
  Tensor to_float() const;

  friend bool operator==(const TensorChunk&, const TensorChunk&) = default;
};

struct CompressedModel {
  std::uint16_t version = kFormatVersion;
  std::map<std::string, std::string> metadata;
  std::vector<TensorChunk> tensors;

  const TensorChunk* find(const std::string& name) const;

  friend bool operator==(const CompressedModel&, const CompressedModel&) = default;
};

Bytes encode_tensor(const TensorChunk& chunk);
/// `base_offset` only positions error messages within a larger file.
TensorChunk decode_tensor(std::span<const std::uint8_t> bytes, std::size_t base_offset = 0);

Bytes serialize_model(const CompressedModel& model);
CompressedModel deserialize_model(std::span<const std::uint8_t> bytes);

/// Writes to `path` through a temporary file and rename.
void write_model_file(const std::filesystem::path& path, const CompressedModel& model);
CompressedModel read_model_file(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Closed-form sizes.
std::size_t payload_bytes(Encoding e, std::size_t elements, std::size_t kept);
std::size_t tensor_chunk_bytes(std::size_t name_len, std::size_t rank, std::size_t payload);
std::size_t metadata_chunk_bytes(std::size_t key_len, std::size_t text_len);

struct TensorSize {
  std::string name;
  Encoding encoding = Encoding::DenseF32;
  Shape shape;
  std::size_t elements = 0;
  std::size_t kept = 0;
  std::size_t payload_bytes = 0;
  std::size_t chunk_bytes = 0;
  /// Forward-pass applications of this tensor (>1 for shared block parameters).
  int applications = 1;
};

struct SizeReport {
  std::vector<TensorSize> tensors;
  std::size_t metadata_bytes = 0;
  std::size_t file_bytes = 0;
  /// Same network, sharing unrolled, every tensor DenseF32: 4 bytes per applied element.
  std::size_t baseline_bytes = 0;
  double compression_ratio = 0.0;
};

/**
 * Per-tensor and total sizes. Shared tensors are recognized through the
 * `share` lines of the "graph" metadata entry ("share <position> <owner>"):
 * a tensor named "<owner>.*" is applied once per position of that owner.
 */
SizeReport model_size_report(const CompressedModel& model);

std::string format_size_report(const SizeReport& report);

}  // namespace lfam
