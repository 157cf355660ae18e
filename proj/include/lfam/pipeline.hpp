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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lfam/amp.hpp"
#include "lfam/calibrate_kl.hpp"
#include "lfam/capture.hpp"
#include "lfam/model.hpp"
#include "lfam/model_format.hpp"

namespace lfam {

/// None keeps every tensor f32. KL: KL activation scales + max-abs weight scales. KLAdmm adds ADMM weight scales.
enum class QuantStrategy { None, KL, KLAdmm };

const char* to_string(QuantStrategy s);
QuantStrategy quant_strategy_from_string(const std::string& s);

struct PipelineConfig {
  ModelConfig model{2, 1, 2, 2, 32, 64, 8};
  TaskKind task = TaskKind::Copy;
  int seq_len = 6;
  std::uint64_t seed = 1;

  std::size_t train_examples = 2000;
  std::size_t eval_examples = 200;
  std::int64_t pretrain_steps = 2000;
  std::int64_t sparse_steps = 1000;
  std::size_t batch_size = 16;
  double learning_rate = 0.2;
  double clip_norm = 1.0;

  double sparsity = 0.5;
  std::int64_t schedule_start = 0;
  std::int64_t schedule_end = 600;
  std::int64_t update_interval = 100;

  HistogramMode calib_mode = HistogramMode::Real;
  QuantStrategy strategy = QuantStrategy::KLAdmm;
  std::size_t amp_k = 3;
  std::vector<std::string> exclude{"predict"};
  std::size_t calib_batches = 4;
  std::size_t calib_batch_size = 16;

  std::filesystem::path work_dir = "lfam_work";

  void validate() const;
  /// Row label in the style "50% KL† + AMP(3)".
  std::string row_label() const;
  SparsitySchedule schedule() const;
  TaskConfig task_config() const;
};

/// `key = value` lines; `#` starts a comment. Unknown keys are errors.
PipelineConfig parse_config(const std::string& text);
std::string format_config(const PipelineConfig& cfg);
void apply_override(PipelineConfig& cfg, const std::string& assignment);
PipelineConfig load_config(const std::filesystem::path& path);

/// Text form of ModelConfig plus share lines, stored as the "graph" metadata entry.
std::string format_graph(const ModelGraph& graph);
ModelConfig parse_graph(const std::string& text);

CompressedModel checkpoint_from_graph(const ModelGraph& graph);
ModelGraph graph_from_model(const CompressedModel& model);

/// Files a pipeline run produces inside work_dir.
struct Artifacts {
  std::filesystem::path dir;
  std::filesystem::path dense() const { return dir / "dense.lfam"; }
  std::filesystem::path sparse() const { return dir / "sparse.lfam"; }
  std::filesystem::path mask() const { return dir / "mask.lfam"; }
  std::filesystem::path capture() const { return dir / "capture"; }
  std::filesystem::path activation_scales() const { return dir / "activation_scales.txt"; }
  std::filesystem::path weight_scales() const { return dir / "weight_scales.txt"; }
  std::filesystem::path plan() const { return dir / "plan.txt"; }
  std::filesystem::path model() const { return dir / "model.lfam"; }
  std::filesystem::path evaluation() const { return dir / "evaluation.txt"; }
  std::filesystem::path report() const { return dir / "report.txt"; }
};

struct ScaleEntry {
  double scale = 0.0;
  double threshold = 0.0;
  double divergence = 0.0;
};
using ScaleTable = std::map<int, ScaleEntry>;

std::string format_scales(const ScaleTable& table, const char* header);
ScaleTable parse_scales(const std::string& text);

/// Activation scales per linear layer from a capture.
ScaleTable calibrate_activations(const CalibCapture& capture, HistogramMode mode, const std::vector<int>& layers);
/// Weight scales per layer: max-abs, or ADMM-refined from max-abs.
ScaleTable calibrate_weights(const ModelGraph& graph, const std::vector<int>& layers, bool admm);

/**
 * Builds the packed model: weights of layers the plan marks Int8 are quantized
 * with their weight scale and stored as SparseI8 or DenseI8, whichever is
 * smaller; everything else stays DenseF32. Without a plan the result is the
 * plain f32 checkpoint.
 */
CompressedModel pack_model(const ModelGraph& graph, const SparseMask& mask, const PrecisionPlan* plan,
                           const ScaleTable& weight_scales, const ScaleTable& activation_scales,
                           const std::string& quantization_note = {});

/// Ids of layers named in cfg.exclude, sorted. Unknown names are config errors.
std::vector<int> excluded_layers(const ModelGraph& graph, const PipelineConfig& cfg);
/// Layers subject to quantization: everything not excluded.
std::vector<int> quantizable_layers(const ModelGraph& graph, const std::vector<int>& excluded);

struct EvaluationReport {
  Accuracy float_accuracy;
  Accuracy quant_accuracy;
  double output_mse = 0.0;
  std::size_t examples = 0;
};

/**
 * Fake-quantized inference: layers the plan marks Int8 see DQ(Q(x)) inputs
 * with their activation scale; weights are whatever `quantized` carries.
 * Compared against `reference` on teacher-forced logits and greedy accuracy.
 */
EvaluationReport evaluate(const ModelGraph& reference, const ModelGraph& quantized, std::span<const Example> data,
                          const PrecisionPlan* plan, const ScaleTable* activation_scales);

std::string format_evaluation(const EvaluationReport& r);

struct PipelineResult {
  std::vector<std::string> stage_log;
  SizeReport size;
  EvaluationReport evaluation;
  PrecisionPlan plan;
  std::string report_text;
};

// Individual stages, each reading and writing Artifacts under cfg.work_dir.
void stage_train(const PipelineConfig& cfg);
void stage_sparsify(const PipelineConfig& cfg);
void stage_capture(const PipelineConfig& cfg);
void stage_calibrate(const PipelineConfig& cfg);
void stage_quantize(const PipelineConfig& cfg);
void stage_amp(const PipelineConfig& cfg);
void stage_pack(const PipelineConfig& cfg);
EvaluationReport stage_evaluate(const PipelineConfig& cfg);
std::string stage_report(const PipelineConfig& cfg);

/// Stage names in execution order.
const std::vector<std::string>& stage_order();

/// Runs one stage by name; failures surface as StageError and the stage's outputs are removed.
void run_stage(const std::string& name, const PipelineConfig& cfg);

/// train -> sparsify -> capture -> calibrate -> quantize -> amp -> pack -> evaluate -> report.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace lfam
