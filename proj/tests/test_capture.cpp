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

#include "lfam/capture.hpp"
#include "lfam/errors.hpp"

using namespace lfam;

namespace {

ModelGraph small_graph() {
  ModelConfig c;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab = 5;
  return ModelGraph::create(c, 3);
}

std::vector<Tensor> sources(int n) {
  std::vector<Tensor> out;
  for (auto& ex : make_dataset(TaskConfig{TaskKind::Copy, 5, 4}, static_cast<std::size_t>(n), 1)) out.push_back(ex.source);
  return out;
}

}  // namespace

TEST(Capture, EveryLayerEveryBatch) {
  const auto g = small_graph();
  const auto cap = capture_activations(g, sources(6), 4, 3, 2);
  EXPECT_EQ(cap.size(), g.linear_layers().size());
  for (const auto& [id, batches] : cap) {
    ASSERT_EQ(batches.size(), 2u) << id;
    const auto& l = g.layer(id);
    const auto apps = static_cast<std::size_t>(g.parameters()[l.weight].applications);
    EXPECT_EQ(batches[0].cols(), g.parameters()[l.weight].value.rows());
    // decoder cross k/v read encoder memory; everything else reads one row per position
    EXPECT_EQ(batches[0].rows(), 3u * 4u * apps) << l.name;
  }
  EXPECT_THROW(capture_activations(g, sources(5), 4, 3, 2), ConfigError);
}

TEST(Capture, ManifestRoundTrip) {
  std::vector<CaptureEntry> e{{0, 0, {12, 5}, "layer0_batch0.f32"}, {3, 1, {24, 8}, "layer3_batch1.f32"}};
  const std::string text = format_manifest(e);
  EXPECT_EQ(text, "# lfam capture v1\n0 0 12x5 layer0_batch0.f32\n3 1 24x8 layer3_batch1.f32\n");
  EXPECT_EQ(parse_manifest(text), e);
  EXPECT_THROW(parse_manifest("0 0 12 f\n"), FormatError);
}

TEST(Capture, DiskRoundTrip) {
  const auto g = small_graph();
  const auto cap = capture_activations(g, sources(4), 4, 2, 2);
  const auto dir = std::filesystem::temp_directory_path() / "lfam_capture_test";
  std::filesystem::remove_all(dir);
  write_capture(cap, dir);
  const CalibCapture back = read_capture(dir);
  EXPECT_EQ(back.layers().size(), cap.size());
  for (const auto& [id, batches] : cap) EXPECT_EQ(back.load_layer(id), batches);
  std::filesystem::resize_file(dir / back.entries.front().file, 4);
  EXPECT_THROW(read_capture(dir), FormatError);
  std::filesystem::remove_all(dir);
}
