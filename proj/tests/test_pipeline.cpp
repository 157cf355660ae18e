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

#include "lfam/errors.hpp"
#include "lfam/pipeline.hpp"

using namespace lfam;

namespace {

PipelineConfig tiny(const std::string& name) {
  PipelineConfig c;
  c.model = ModelConfig{1, 1, 2, 2, 8, 16, 5};
  c.seq_len = 4;
  c.train_examples = 40;
  c.eval_examples = 10;
  c.pretrain_steps = 30;
  c.sparse_steps = 30;
  c.batch_size = 4;
  c.schedule_end = 20;
  c.update_interval = 10;
  c.calib_batches = 2;
  c.calib_batch_size = 3;
  c.amp_k = 2;
  c.work_dir = std::filesystem::temp_directory_path() / ("lfam_pipeline_" + name);
  std::filesystem::remove_all(c.work_dir);
  return c;
}

}  // namespace

TEST(Pipeline, ConfigRoundTripAndOverrides) {
  PipelineConfig c;
  apply_override(c, "sparsity=0.3");
  apply_override(c, "calib_mode = absolute");
  apply_override(c, "strategy=kl");
  apply_override(c, "exclude=predict,stem");
  const PipelineConfig back = parse_config(format_config(c));
  EXPECT_EQ(back.sparsity, 0.3);
  EXPECT_EQ(back.calib_mode, HistogramMode::Absolute);
  EXPECT_EQ(back.strategy, QuantStrategy::KL);
  EXPECT_EQ(back.exclude, (std::vector<std::string>{"predict", "stem"}));
  EXPECT_EQ(format_config(back), format_config(c));
  EXPECT_THROW(apply_override(c, "bogus=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "seed=abc"), ConfigError);
  EXPECT_THROW(apply_override(c, "noequals"), ConfigError);
  EXPECT_THROW(parse_config("strategy = fp16\n"), ConfigError);
}

TEST(Pipeline, RowLabels) {
  PipelineConfig c;
  EXPECT_EQ(c.row_label(), "50% KL† + AMP(3)");
  c.amp_k = 0;
  c.strategy = QuantStrategy::KL;
  c.sparsity = 0.3;
  EXPECT_EQ(c.row_label(), "30% KL");
}

TEST(Pipeline, ValidationCatchesBadSchedules) {
  PipelineConfig c;
  c.schedule_end = c.sparse_steps + 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.sparsity = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Pipeline, GraphMetadataRoundTrip) {
  const auto g = ModelGraph::create(ModelConfig{2, 1, 3, 2, 8, 16, 5}, 1);
  const std::string text = format_graph(g);
  EXPECT_NE(text.find("share enc1@2 enc1"), std::string::npos);
  EXPECT_EQ(parse_graph(text), g.config());
  EXPECT_EQ(graph_from_model(checkpoint_from_graph(g)).values(), g.values());
  EXPECT_THROW(parse_graph("M 2\n"), FormatError);
}

TEST(Pipeline, EndToEndStagesInOrder) {
  const PipelineConfig c = tiny("e2e");
  const PipelineResult r = run_pipeline(c);
  EXPECT_EQ(r.stage_log, stage_order());
  EXPECT_EQ(r.plan.fallback_layers().size(), 2u);
  EXPECT_EQ(r.plan.excluded.size(), 1u);
  EXPECT_NE(r.report_text.find("compression_ratio="), std::string::npos);
  EXPECT_NE(r.report_text.find("stages=train,sparsify,capture,calibrate,quantize,amp,pack,evaluate,report"),
            std::string::npos);
  const Artifacts a{c.work_dir};
  const CompressedModel m = read_model_file(a.model());
  EXPECT_EQ(r.size.file_bytes, std::filesystem::file_size(a.model()));
  EXPECT_TRUE(m.metadata.count("plan"));
  std::size_t int8 = 0;
  for (const auto& t : m.tensors) int8 += t.encoding() != Encoding::DenseF32;
  const auto g = graph_from_model(m);
  EXPECT_EQ(int8, g.linear_layers().size() - 1 - 2);
  std::filesystem::remove_all(c.work_dir);
}

TEST(Pipeline, FloatOnlyRunKeepsCheckpoint) {
  PipelineConfig c = tiny("float");
  c.strategy = QuantStrategy::None;
  c.sparsity = 0.0;
  run_pipeline(c);
  const Artifacts a{c.work_dir};
  EXPECT_EQ(read_file(a.model()), read_file(a.dense()));
  std::filesystem::remove_all(c.work_dir);
}

TEST(Pipeline, FailedStageRemovesItsOutput) {
  const PipelineConfig c = tiny("fail");
  run_stage("train", c);
  run_stage("sparsify", c);
  const Artifacts a{c.work_dir};
  // calibrate without a capture directory
  try {
    run_stage("calibrate", c);
    FAIL() << "calibrate should fail without a capture";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "calibrate");
  }
  EXPECT_FALSE(std::filesystem::exists(a.activation_scales()));
  EXPECT_THROW(run_stage("compile", c), ConfigError);
  std::filesystem::remove_all(c.work_dir);
}

TEST(Pipeline, UnknownExcludedLayerIsConfigError) {
  PipelineConfig c = tiny("exclude");
  c.exclude = {"nope"};
  const auto g = ModelGraph::create(c.model, 1);
  EXPECT_THROW(excluded_layers(g, c), ConfigError);
}

TEST(Pipeline, PlanWithUnknownLayerIsRejected) {
  const auto g = ModelGraph::create(ModelConfig{1, 1, 1, 1, 8, 16, 5}, 1);
  PrecisionPlan plan;
  plan.precision[99] = Precision::Int8;
  ScaleTable act{{99, {0.1, 12.7, 0.0}}};
  const auto data = make_dataset(TaskConfig{TaskKind::Copy, 5, 3}, 2, 1);
  EXPECT_THROW(evaluate(g, g, data, &plan, &act), ConfigError);
}
