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

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lfam/model.hpp"
#include "lfam/tensor.hpp"

namespace lfam {

/**
 * Calibration capture on disk: a text manifest plus one raw little-endian
 * f32 dump per (layer, batch).
 *
 *   # lfam capture v1
 *   <layer_id> <batch_id> <dim0>x<dim1> <file>
 *
 * Each dump holds the rows fed to that linear layer over the batch, all
 * shared-weight applications included, as a [rows, in] matrix.
 */
struct CaptureEntry {
  int layer_id = 0;
  int batch_id = 0;
  Shape shape;
  std::string file;

  friend bool operator==(const CaptureEntry&, const CaptureEntry&) = default;
};

/// In-memory activations: layer_id -> one tensor per batch, in batch order.
using ActivationCapture = std::map<int, std::vector<Tensor>>;

struct CalibCapture {
  std::filesystem::path dir;
  std::vector<CaptureEntry> entries;

  std::set<int> layers() const;
  Tensor load(const CaptureEntry& entry) const;
  /// Every batch of one layer, ordered by batch_id.
  std::vector<Tensor> load_layer(int layer_id) const;
};

/**
 * Runs the float model over `sources` and records each linear layer's input.
 * Decoder inputs come from the model's own greedy output, so no labels are used.
 */
ActivationCapture capture_activations(const ModelGraph& graph, std::span<const Tensor> sources, int length,
                                      std::size_t batch_size, std::size_t n_batches);

std::string format_manifest(std::span<const CaptureEntry> entries);
std::vector<CaptureEntry> parse_manifest(const std::string& text);

/// Writes manifest.txt and the dumps under `dir` (created if needed).
CalibCapture write_capture(const ActivationCapture& capture, const std::filesystem::path& dir);
/// Reads the manifest and checks every dump is 4 * product(shape) bytes.
CalibCapture read_capture(const std::filesystem::path& dir);

}  // namespace lfam
