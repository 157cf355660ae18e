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

#include <cmath>

#include "lfam/errors.hpp"
#include "lfam/model.hpp"
#include "oracles.hpp"

using namespace lfam;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.M = 2;
  c.N = 1;
  c.S1 = 2;
  c.S2 = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab = 5;
  return c;
}

Example sample_example(const ModelConfig& c, std::uint64_t seed) {
  return make_dataset(TaskConfig{TaskKind::Copy, c.vocab, 4}, 1, seed).front();
}

}  // namespace

TEST(Model, UniqueCountIndependentOfSharing) {
  ModelConfig c = small_config();
  c.S1 = 1;
  const auto base = ModelGraph::create(c, 1).unique_parameter_count();
  for (int s1 : {2, 3, 4}) {
    c.S1 = s1;
    const auto g = ModelGraph::create(c, 1);
    EXPECT_EQ(g.unique_parameter_count(), base);
    EXPECT_GT(g.unrolled_parameter_count(), base);
    EXPECT_EQ(unroll_sharing(g).unique_parameter_count(), g.unrolled_parameter_count());
  }
}

TEST(Model, SeededCreationIsDeterministic) {
  const auto a = ModelGraph::create(small_config(), 9), b = ModelGraph::create(small_config(), 9);
  const auto c = ModelGraph::create(small_config(), 10);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), c.values());
}

TEST(Model, LayerTableEndsWithExcludedPredict) {
  const auto g = ModelGraph::create(small_config(), 1);
  const auto& layers = g.linear_layers();
  EXPECT_EQ(layers.front().name, "stem");
  EXPECT_EQ(layers.back().name, "predict");
  EXPECT_TRUE(layers.back().excluded);
  EXPECT_EQ(g.predict_layer_id(), static_cast<int>(layers.size()) - 1);
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) EXPECT_FALSE(layers[i].excluded);
  EXPECT_EQ(g.prunable_indices().size(), layers.size() - 1);
  EXPECT_THROW(g.layer_id("nope"), ConfigError);
}

TEST(Model, GradientsMatchFiniteDifferences) {
  auto g = ModelGraph::create(small_config(), 7);
  const Example ex = sample_example(g.config(), 3);
  const TrainStep step = backward(g, ex.source, ex.decoder_input, ex.target);
  const auto check = oracle::finite_difference(g, ex, step.grads);
  EXPECT_LT(check.worst_rel, 1e-3) << check.where;
}

TEST(Model, SharedGradientsEqualUnrolledSum) {
  const auto g = ModelGraph::create(small_config(), 5);
  const auto u = unroll_sharing(g);
  const Example ex = sample_example(g.config(), 4);
  const TrainStep gs = backward(g, ex.source, ex.decoder_input, ex.target);
  const TrainStep us = backward(u, ex.source, ex.decoder_input, ex.target);
  EXPECT_NEAR(gs.loss, us.loss, 1e-12);
  const auto& c = g.config();
  for (std::size_t p = 0; p < g.parameters().size(); ++p) {
    const auto& name = g.parameters()[p].name;
    std::vector<std::string> twins;
    const bool enc = name.rfind("enc", 0) == 0, dec = name.rfind("dec", 0) == 0;
    if (enc || dec) {
      const auto dot = name.find('.');
      const int block = std::stoi(name.substr(3, dot - 3));
      const int s = enc ? c.S1 : c.S2;
      for (int k = 0; k < s; ++k) twins.push_back(name.substr(0, 3) + std::to_string(block * s + k) + name.substr(dot));
    } else {
      twins.push_back(name);
    }
    for (std::size_t i = 0; i < gs.grads[p].size(); ++i) {
      double sum = 0.0;
      for (const auto& t : twins) sum += us.grads[u.parameter_index(t)][i];
      EXPECT_NEAR(gs.grads[p][i], sum, 1e-6 * std::max(1.0, std::fabs(sum))) << name << "[" << i << "]";
    }
  }
}

TEST(Model, SoftTargetGradientMatchesHardOneHot) {
  const auto g = ModelGraph::create(small_config(), 8);
  const Example ex = sample_example(g.config(), 6);
  Matrix soft(Shape{ex.target.size(), static_cast<std::size_t>(g.config().vocab)});
  for (std::size_t i = 0; i < ex.target.size(); ++i) soft(i, static_cast<std::size_t>(ex.target[i])) = 1.0;
  const TrainStep hard = backward(g, ex.source, ex.decoder_input, ex.target);
  const TrainStep sft = backward(g, ex.source, ex.decoder_input, soft);
  EXPECT_NEAR(hard.loss, sft.loss, 1e-12);
  for (std::size_t p = 0; p < hard.grads.size(); ++p)
    for (std::size_t i = 0; i < hard.grads[p].size(); ++i) EXPECT_NEAR(hard.grads[p][i], sft.grads[p][i], 1e-7);
}

TEST(Model, ForwardRejectsBadInput) {
  const auto g = ModelGraph::create(small_config(), 1);
  const Example ex = sample_example(g.config(), 1);
  std::vector<int> bad = ex.decoder_input;
  bad[1] = 99;
  EXPECT_THROW(forward(g, ex.source, bad), ValueError);
  EXPECT_THROW(forward(g, Tensor(Shape{4, 3}), ex.decoder_input), DimensionError);
}

TEST(Model, DatasetIsSeededAndShifted) {
  const TaskConfig t{TaskKind::Reverse, 6, 5};
  const auto a = make_dataset(t, 10, 3), b = make_dataset(t, 10, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].target, b[i].target);
    EXPECT_EQ(a[i].decoder_input.front(), 6);
    for (std::size_t j = 1; j < 5; ++j) EXPECT_EQ(a[i].decoder_input[j], a[i].target[j - 1]);
  }
}

TEST(Model, TrainingReducesLoss) {
  ModelConfig c = small_config();
  auto g = ModelGraph::create(c, 2);
  const auto data = make_dataset(TaskConfig{TaskKind::Copy, c.vocab, 4}, 200, 2);
  TrainOptions o;
  o.steps = 300;
  o.batch_size = 8;
  o.learning_rate = 0.2;
  o.clip_norm = 1.0;
  const auto r = train(g, data, o);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 30; ++i) {
    head += r.losses[static_cast<std::size_t>(i)];
    tail += r.losses[r.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, 0.7 * head);
}

TEST(Model, SparseTrainingHitsTargetSparsity) {
  ModelConfig c = small_config();
  for (double ratio : {0.3, 0.5}) {
    auto g = ModelGraph::create(c, 4);
    const auto data = make_dataset(TaskConfig{TaskKind::Copy, c.vocab, 4}, 100, 4);
    TrainOptions o;
    o.steps = 120;
    o.batch_size = 4;
    o.learning_rate = 0.1;
    o.schedule = SparsitySchedule{0, 100, ratio, 20};
    const auto r = train(g, data, o);
    std::size_t n = 0, nz = 0;
    for (const auto& w : g.prunable_weights())
      for (float v : w.data()) {
        ++n;
        nz += v != 0.0f;
      }
    EXPECT_EQ(r.mask.pruned(), pruned_count_for(ratio, n));
    EXPECT_EQ(n - nz, r.mask.pruned());
  }
}

TEST(Model, FromNamedRequiresEveryTensor) {
  const auto g = ModelGraph::create(small_config(), 1);
  std::map<std::string, Tensor> named;
  for (const auto& p : g.parameters()) named[p.name] = p.value;
  EXPECT_EQ(ModelGraph::from_named(g.config(), named).values(), g.values());
  named.erase("embed");
  EXPECT_THROW(ModelGraph::from_named(g.config(), named), FormatError);
}
