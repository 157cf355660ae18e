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
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lfam/quant.hpp"
#include "lfam/sparsify.hpp"
#include "lfam/tensor.hpp"

namespace lfam {

/**
 * Shape of the weight-shared encoder-decoder.
 *
 * The encoder is a stem (linear + ReLU) followed by `M` blocks; each block
 * owns one sub-layer (self-attention + FFN) and applies it `S1` times. The
 * decoder is a token embedding, `N` blocks of one decoder sub-layer (causal
 * self-attention + cross-attention + FFN) applied `S2` times each, and a
 * predict sub-layer (layer norm + linear). Attention is single-head.
 */
struct ModelConfig {
  int M = 2;
  int N = 1;
  int S1 = 2;
  int S2 = 2;
  int d_model = 16;
  int d_ff = 32;
  int vocab = 8;

  /// Source features are one-hot symbols, so the stem input width is `vocab`.
  int input_dim() const { return vocab; }
  /// Decoder symbols: `vocab` outputs plus a begin-of-sequence token.
  int bos() const { return vocab; }

  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamKind { Weight, Bias, NormGain, NormBias, Embedding };

struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::Weight;
  Tensor value;
  /// Owning linear layer for weights and biases, -1 otherwise.
  int layer_id = -1;
  /// How many times the forward pass applies this tensor (S1 or S2 inside blocks).
  int applications = 1;
};

/// A quantizable matrix multiply y = x W + b, the unit of calibration and AMP.
struct LinearLayer {
  int id = 0;
  std::string name;
  std::size_t weight = 0;
  std::size_t bias = 0;
  /// Never quantized nor pruned (the predict layer).
  bool excluded = false;
};

class ModelGraph {
 public:
  /// Randomly initialized model; identical seeds give bit-identical parameters.
  static ModelGraph create(const ModelConfig& config, std::uint64_t seed);

  /// Rebuilds a model from named tensors; every expected name must be present with its shape.
  static ModelGraph from_named(const ModelConfig& config, const std::map<std::string, Tensor>& tensors);

  const ModelConfig& config() const noexcept { return config_; }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_index(const std::string& name) const;
  const Tensor& parameter(const std::string& name) const { return params_[parameter_index(name)].value; }

  const std::vector<LinearLayer>& linear_layers() const noexcept { return layers_; }
  const LinearLayer& layer(int id) const { return layers_.at(static_cast<std::size_t>(id)); }
  int layer_id(const std::string& name) const;
  int predict_layer_id() const { return static_cast<int>(layers_.size()) - 1; }

  /// Weight tensors of every non-excluded linear layer, in layer order.
  std::vector<std::size_t> prunable_indices() const;
  std::vector<Tensor> prunable_weights() const;
  void set_prunable_weights(std::span<const Tensor> weights);

  std::size_t unique_parameter_count() const;
  /// Parameter count of the same network with sharing unrolled.
  std::size_t unrolled_parameter_count() const;

  /// (application position, owning parameter set), e.g. ("enc1@0", "enc1").
  std::vector<std::pair<std::string, std::string>> share_groups() const;

  std::vector<Tensor> values() const;

  // Parameter index layout, consumed by the forward/backward engine.
  struct LinearIdx {
    int layer = 0;
    std::size_t w = 0, b = 0;
  };
  struct NormIdx {
    std::size_t g = 0, b = 0;
  };
  struct AttnIdx {
    LinearIdx q, k, v, o;
  };
  struct EncoderIdx {
    NormIdx n1;
    AttnIdx self;
    NormIdx n2;
    LinearIdx ff1, ff2;
  };
  struct DecoderIdx {
    NormIdx n1;
    AttnIdx self;
    NormIdx n2;
    AttnIdx cross;
    NormIdx n3;
    LinearIdx ff1, ff2;
  };
  struct Layout {
    LinearIdx stem;
    std::vector<EncoderIdx> encoder;
    std::size_t embedding = 0;
    std::vector<DecoderIdx> decoder;
    NormIdx predict_norm;
    LinearIdx predict;
  };
  const Layout& layout() const noexcept { return layout_; }

 private:
  explicit ModelGraph(const ModelConfig& config);

  std::size_t add_param(std::string name, ParamKind kind, Shape shape, int layer_id, int applications);
  LinearIdx add_linear(const std::string& name, int in, int out, int applications, bool excluded = false);
  NormIdx add_norm(const std::string& name, int width, int applications);
  AttnIdx add_attention(const std::string& prefix, int applications);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::vector<LinearLayer> layers_;
  Layout layout_;
};

/// Equivalent model with S1 = S2 = 1 and each shared block duplicated in place.
ModelGraph unroll_sharing(const ModelGraph& graph);

/// One training/evaluation sequence pair.
struct Example {
  Tensor source;                  // [len, vocab] one-hot
  std::vector<int> decoder_input; // BOS, t_0 .. t_{len-2}
  std::vector<int> target;        // t_0 .. t_{len-1}
};

enum class TaskKind { Copy, Reverse };

struct TaskConfig {
  TaskKind kind = TaskKind::Copy;
  int vocab = 8;
  int length = 6;
};

Example make_example(const TaskConfig& task, std::span<const int> symbols);
std::vector<Example> make_dataset(const TaskConfig& task, std::size_t count, std::uint64_t seed);

/// Per-linear-layer behaviour of a forward pass.
struct ForwardHooks {
  /// Layers listed here see DQ(Q(x)) instead of x.
  const std::map<int, QuantParams>* activation_quant = nullptr;
  /// Called with every linear layer's (float) input, once per application.
  std::function<void(int layer_id, const Matrix& input)> capture;
};

/// Logits [len, vocab] for teacher-forced decoder inputs.
Matrix forward(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
               const ForwardHooks& hooks = {});

struct TrainStep {
  double loss = 0.0;
  /// Aligned with graph.parameters(); shared tensors hold the sum over applications.
  std::vector<Matrix> grads;
};

/// Mean token cross-entropy and its exact gradient.
TrainStep backward(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
                   std::span<const int> target);
/// Same with a soft target distribution per position ([len, vocab], rows summing to 1).
TrainStep backward(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
                   const Matrix& target_distribution);

double loss(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
            std::span<const int> target);

/// Autoregressive argmax decoding of `length` symbols.
std::vector<int> greedy_decode(const ModelGraph& graph, const Tensor& source, int length,
                               const ForwardHooks& hooks = {});

struct Accuracy {
  double token = 0.0;
  double sequence = 0.0;
};

Accuracy evaluate_accuracy(const ModelGraph& graph, std::span<const Example> data, const ForwardHooks& hooks = {});

struct TrainOptions {
  std::int64_t steps = 1000;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  /// Rescales the batch gradient to this global L2 norm when it is larger; 0 disables.
  double clip_norm = 0.0;
  std::uint64_t seed = 1;
  /// When set, prunable weights are sparsified along this schedule (steps counted from 1).
  std::optional<SparsitySchedule> schedule;
  /// Frozen mask to respect from the start (e.g. masks carried over from an earlier stage).
  std::optional<SparseMask> initial_mask;
};

struct TrainResult {
  std::vector<double> losses;
  SparseMask mask;
  std::optional<ImportanceState> importance;
};

/// Mini-batch SGD with a fixed step size. Throws TrainingError on a non-finite loss.
TrainResult train(ModelGraph& graph, std::span<const Example> data, const TrainOptions& options);

}  // namespace lfam
