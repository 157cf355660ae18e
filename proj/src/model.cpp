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

#include "lfam/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lfam {

void ModelConfig::validate() const {
  if (M < 1 || N < 1 || S1 < 1 || S2 < 1) throw ConfigError("M, N, S1 and S2 must all be >= 1");
  if (d_model < 1 || d_ff < 1) throw ConfigError("d_model and d_ff must be positive");
  if (vocab < 2) throw ConfigError("vocab must be >= 2");
}

ModelGraph::ModelGraph(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  layout_.stem = add_linear("stem", config_.input_dim(), d, 1);
  for (int b = 0; b < config_.M; ++b) {
    const std::string p = "enc" + std::to_string(b);
    EncoderIdx e;
    e.n1 = add_norm(p + ".ln1", d, config_.S1);
    e.self = add_attention(p + ".self", config_.S1);
    e.n2 = add_norm(p + ".ln2", d, config_.S1);
    e.ff1 = add_linear(p + ".ff1", d, config_.d_ff, config_.S1);
    e.ff2 = add_linear(p + ".ff2", config_.d_ff, d, config_.S1);
    layout_.encoder.push_back(e);
  }
  layout_.embedding = add_param("embed", ParamKind::Embedding,
                                Shape{static_cast<std::size_t>(config_.vocab + 1), static_cast<std::size_t>(d)}, -1, 1);
  for (int b = 0; b < config_.N; ++b) {
    const std::string p = "dec" + std::to_string(b);
    DecoderIdx e;
    e.n1 = add_norm(p + ".ln1", d, config_.S2);
    e.self = add_attention(p + ".self", config_.S2);
    e.n2 = add_norm(p + ".ln2", d, config_.S2);
    e.cross = add_attention(p + ".cross", config_.S2);
    e.n3 = add_norm(p + ".ln3", d, config_.S2);
    e.ff1 = add_linear(p + ".ff1", d, config_.d_ff, config_.S2);
    e.ff2 = add_linear(p + ".ff2", config_.d_ff, d, config_.S2);
    layout_.decoder.push_back(e);
  }
  layout_.predict_norm = add_norm("predict.ln", d, 1);
  layout_.predict = add_linear("predict", d, config_.vocab, 1, /*excluded=*/true);
}

std::size_t ModelGraph::add_param(std::string name, ParamKind kind, Shape shape, int layer_id, int applications) {
  Parameter p;
  p.name = std::move(name);
  p.kind = kind;
  p.value = Tensor(std::move(shape));
  p.layer_id = layer_id;
  p.applications = applications;
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

ModelGraph::LinearIdx ModelGraph::add_linear(const std::string& name, int in, int out, int applications,
                                             bool excluded) {
  LinearIdx li;
  li.layer = static_cast<int>(layers_.size());
  li.w = add_param(name + ".w", ParamKind::Weight, Shape{std::size_t(in), std::size_t(out)}, li.layer, applications);
  li.b = add_param(name + ".b", ParamKind::Bias, Shape{std::size_t(out)}, li.layer, applications);
  layers_.push_back({li.layer, name, li.w, li.b, excluded});
  return li;
}

ModelGraph::NormIdx ModelGraph::add_norm(const std::string& name, int width, int applications) {
  NormIdx n;
  n.g = add_param(name + ".g", ParamKind::NormGain, Shape{std::size_t(width)}, -1, applications);
  n.b = add_param(name + ".b", ParamKind::NormBias, Shape{std::size_t(width)}, -1, applications);
  return n;
}

ModelGraph::AttnIdx ModelGraph::add_attention(const std::string& prefix, int applications) {
  const int d = config_.d_model;
  AttnIdx a;
  a.q = add_linear(prefix + ".q", d, d, applications);
  a.k = add_linear(prefix + ".k", d, d, applications);
  a.v = add_linear(prefix + ".v", d, d, applications);
  a.o = add_linear(prefix + ".o", d, d, applications);
  return a;
}

namespace {

// Portable uniform draw in [0, 1).
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace

ModelGraph ModelGraph::create(const ModelConfig& config, std::uint64_t seed) {
  ModelGraph g(config);
  std::mt19937_64 rng(seed);
  for (auto& p : g.params_) {
    auto data = p.value.data();
    switch (p.kind) {
      case ParamKind::Weight: {
        const double fan = static_cast<double>(p.value.dim(0) + p.value.dim(1));
        const double limit = std::sqrt(6.0 / fan);
        for (auto& v : data) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * limit);
        break;
      }
      case ParamKind::Embedding:
        for (auto& v : data) v = static_cast<float>(normal(rng));
        break;
      case ParamKind::NormGain:
        p.value.fill(1.0f);
        break;
      case ParamKind::Bias:
      case ParamKind::NormBias:
        break;
    }
  }
  return g;
}

ModelGraph ModelGraph::from_named(const ModelConfig& config, const std::map<std::string, Tensor>& tensors) {
  ModelGraph g(config);
  for (auto& p : g.params_) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw FormatError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw DimensionError("tensor '" + p.name + "' has shape " + shape_to_string(it->second.shape()) +
                           ", model expects " + shape_to_string(p.value.shape()));
    }
    p.value = it->second;
  }
  return g;
}

std::size_t ModelGraph::parameter_index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

int ModelGraph::layer_id(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.name == name) return l.id;
  }
  throw ConfigError("unknown layer '" + name + "'");
}

std::vector<std::size_t> ModelGraph::prunable_indices() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers_) {
    if (!l.excluded) out.push_back(l.weight);
  }
  return out;
}

std::vector<Tensor> ModelGraph::prunable_weights() const {
  std::vector<Tensor> out;
  for (auto i : prunable_indices()) out.push_back(params_[i].value);
  return out;
}

void ModelGraph::set_prunable_weights(std::span<const Tensor> weights) {
  const auto idx = prunable_indices();
  if (weights.size() != idx.size()) throw DimensionError("prunable weight count mismatch");
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (weights[i].shape() != params_[idx[i]].value.shape()) throw DimensionError("prunable weight shape mismatch");
    params_[idx[i]].value = weights[i];
  }
}

std::size_t ModelGraph::unique_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ModelGraph::unrolled_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size() * static_cast<std::size_t>(p.applications);
  return n;
}

std::vector<std::pair<std::string, std::string>> ModelGraph::share_groups() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (int b = 0; b < config_.M; ++b) {
    for (int s = 0; s < config_.S1; ++s) {
      out.emplace_back("enc" + std::to_string(b) + "@" + std::to_string(s), "enc" + std::to_string(b));
    }
  }
  for (int b = 0; b < config_.N; ++b) {
    for (int s = 0; s < config_.S2; ++s) {
      out.emplace_back("dec" + std::to_string(b) + "@" + std::to_string(s), "dec" + std::to_string(b));
    }
  }
  return out;
}

std::vector<Tensor> ModelGraph::values() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

ModelGraph unroll_sharing(const ModelGraph& graph) {
  const ModelConfig& c = graph.config();
  ModelConfig u = c;
  u.M = c.M * c.S1;
  u.N = c.N * c.S2;
  u.S1 = 1;
  u.S2 = 1;
  std::map<std::string, Tensor> named;
  auto copy_block = [&](const std::string& from, const std::string& to) {
    const std::string prefix = from + ".";
    for (const auto& p : graph.parameters()) {
      if (p.name.rfind(prefix, 0) == 0) named[to + "." + p.name.substr(prefix.size())] = p.value;
    }
  };
  for (int b = 0; b < c.M; ++b) {
    for (int s = 0; s < c.S1; ++s) copy_block("enc" + std::to_string(b), "enc" + std::to_string(b * c.S1 + s));
  }
  for (int b = 0; b < c.N; ++b) {
    for (int s = 0; s < c.S2; ++s) copy_block("dec" + std::to_string(b), "dec" + std::to_string(b * c.S2 + s));
  }
  for (const auto& p : graph.parameters()) {
    if (p.name.rfind("enc", 0) != 0 && p.name.rfind("dec", 0) != 0) named[p.name] = p.value;
  }
  return ModelGraph::from_named(u, named);
}

// ---------------------------------------------------------------------------
// Tasks

Example make_example(const TaskConfig& task, std::span<const int> symbols) {
  const std::size_t len = symbols.size();
  Example ex;
  ex.source = Tensor(Shape{len, static_cast<std::size_t>(task.vocab)});
  for (std::size_t i = 0; i < len; ++i) {
    if (symbols[i] < 0 || symbols[i] >= task.vocab) throw ValueError("task symbol out of vocabulary");
    ex.source(i, static_cast<std::size_t>(symbols[i])) = 1.0f;
  }
  ex.target.assign(symbols.begin(), symbols.end());
  if (task.kind == TaskKind::Reverse) std::reverse(ex.target.begin(), ex.target.end());
  ex.decoder_input.push_back(task.vocab);
  ex.decoder_input.insert(ex.decoder_input.end(), ex.target.begin(), ex.target.end() - 1);
  return ex;
}

std::vector<Example> make_dataset(const TaskConfig& task, std::size_t count, std::uint64_t seed) {
  if (task.length < 1) throw ConfigError("task length must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  out.reserve(count);
  std::vector<int> symbols(static_cast<std::size_t>(task.length));
  for (std::size_t n = 0; n < count; ++n) {
    for (auto& s : symbols) s = static_cast<int>(rng() % static_cast<std::uint64_t>(task.vocab));
    out.push_back(make_example(task, symbols));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward engine

namespace {

constexpr double kNormEps = 1e-5;

void add_into(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// a [n,k] * b[m,k]^T -> [n,m]
Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
      out(i, j) = acc;
    }
  }
  return out;
}

// a[k,n]^T * b[k,m] -> [n,m], accumulated into `out`.
void matmul_tn_into(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t p = 0; p < a.rows(); ++p) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += av * b(p, j);
    }
  }
}

Matrix positional_encoding(std::size_t len, std::size_t d) {
  Matrix pe = Matrix::matrix(len, d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

struct NormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

struct AttnCache {
  Matrix xq, xkv, q, k, v, p, o;
};

struct FfnCache {
  Matrix x, pre, act;
};

struct EncoderApp {
  std::size_t block = 0;
  NormCache n1;
  AttnCache self;
  NormCache n2;
  FfnCache ffn;
};

struct DecoderApp {
  std::size_t block = 0;
  NormCache n1;
  AttnCache self;
  NormCache n2;
  AttnCache cross;
  NormCache n3;
  FfnCache ffn;
};

class Engine {
 public:
  using LinearIdx = ModelGraph::LinearIdx;
  using NormIdx = ModelGraph::NormIdx;
  using AttnIdx = ModelGraph::AttnIdx;

  Engine(const ModelGraph& graph, const ForwardHooks& hooks, bool record)
      : graph_(graph), layout_(graph.layout()), hooks_(hooks), record_(record) {
    params_.reserve(graph.parameters().size());
    for (const auto& p : graph.parameters()) params_.push_back(tensor_cast<double>(p.value));
  }

  void encode(const Tensor& source) {
    const auto d = static_cast<std::size_t>(graph_.config().d_model);
    if (source.rank() != 2 || source.cols() != static_cast<std::size_t>(graph_.config().input_dim())) {
      throw DimensionError("source must be [len, " + std::to_string(graph_.config().input_dim()) + "], got " +
                           shape_to_string(source.shape()));
    }
    source_ = tensor_cast<double>(source);
    stem_pre_ = linear(layout_.stem, source_);
    Matrix x = stem_pre_;
    for (auto& v : x.data()) v = std::max(v, 0.0);
    add_into(x, positional_encoding(source_.rows(), d));
    for (std::size_t b = 0; b < layout_.encoder.size(); ++b) {
      for (int s = 0; s < graph_.config().S1; ++s) x = encoder_apply(b, x);
    }
    memory_ = std::move(x);
  }

  Matrix decode(std::span<const int> decoder_input) {
    const auto d = static_cast<std::size_t>(graph_.config().d_model);
    if (decoder_input.empty()) throw DimensionError("decoder input is empty");
    tokens_.assign(decoder_input.begin(), decoder_input.end());
    const Matrix& emb = params_[layout_.embedding];
    Matrix y = positional_encoding(tokens_.size(), d);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const int t = tokens_[i];
      if (t < 0 || static_cast<std::size_t>(t) >= emb.rows()) throw ValueError("decoder symbol out of vocabulary");
      for (std::size_t j = 0; j < d; ++j) y(i, j) += emb(static_cast<std::size_t>(t), j);
    }
    decoder_apps_.clear();
    for (std::size_t b = 0; b < layout_.decoder.size(); ++b) {
      for (int s = 0; s < graph_.config().S2; ++s) y = decoder_apply(b, y);
    }
    predict_in_ = layer_norm(layout_.predict_norm, y, predict_norm_);
    return linear(layout_.predict, predict_in_);
  }

  std::vector<Matrix> backprop(const Matrix& dlogits) {
    grads_.clear();
    for (const auto& p : params_) grads_.emplace_back(p.shape());

    Matrix dy = norm_back(layout_.predict_norm, linear_back(layout_.predict, predict_in_, dlogits), predict_norm_);
    Matrix dmem(memory_.shape());
    for (auto it = decoder_apps_.rbegin(); it != decoder_apps_.rend(); ++it) dy = decoder_back(*it, dy, dmem);

    Matrix& gemb = grads_[layout_.embedding];
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      for (std::size_t j = 0; j < dy.cols(); ++j) gemb(static_cast<std::size_t>(tokens_[i]), j) += dy(i, j);
    }

    Matrix dx = std::move(dmem);
    for (auto it = encoder_apps_.rbegin(); it != encoder_apps_.rend(); ++it) dx = encoder_back(*it, dx);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (stem_pre_[i] <= 0.0) dx[i] = 0.0;
    }
    linear_back(layout_.stem, source_, dx, /*need_input_grad=*/false);
    return std::move(grads_);
  }

 private:
  Matrix linear(const LinearIdx& li, const Matrix& x) {
    if (hooks_.capture) hooks_.capture(li.layer, x);
    const Matrix& w = params_[li.w];
    const Matrix& b = params_[li.b];
    Matrix y;
    const QuantParams* aq = nullptr;
    if (hooks_.activation_quant) {
      auto it = hooks_.activation_quant->find(li.layer);
      if (it != hooks_.activation_quant->end()) aq = &it->second;
    }
    if (aq) {
      Matrix xq = x;
      for (auto& v : xq.data()) v = fake_quantize_value(v, aq->scale);
      y = matmul(xq, w);
    } else {
      y = matmul(x, w);
    }
    for (std::size_t r = 0; r < y.rows(); ++r) {
      for (std::size_t j = 0; j < y.cols(); ++j) y(r, j) += b[j];
    }
    return y;
  }

  Matrix linear_back(const LinearIdx& li, const Matrix& x, const Matrix& dy, bool need_input_grad = true) {
    matmul_tn_into(x, dy, grads_[li.w]);
    Matrix& gb = grads_[li.b];
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      for (std::size_t j = 0; j < dy.cols(); ++j) gb[j] += dy(r, j);
    }
    if (!need_input_grad) return {};
    return matmul_nt(dy, params_[li.w]);
  }

  Matrix layer_norm(const NormIdx& ni, const Matrix& x, NormCache& cache) {
    const Matrix& g = params_[ni.g];
    const Matrix& b = params_[ni.b];
    const std::size_t n = x.cols();
    Matrix y(x.shape());
    cache.xhat = Matrix(x.shape());
    cache.inv_std.assign(x.rows(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += x(r, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + kNormEps);
      cache.inv_std[r] = inv;
      for (std::size_t j = 0; j < n; ++j) {
        const double xh = (x(r, j) - mean) * inv;
        cache.xhat(r, j) = xh;
        y(r, j) = g[j] * xh + b[j];
      }
    }
    return y;
  }

  Matrix norm_back(const NormIdx& ni, const Matrix& dy, const NormCache& cache) {
    const Matrix& g = params_[ni.g];
    Matrix& gg = grads_[ni.g];
    Matrix& gb = grads_[ni.b];
    const std::size_t n = dy.cols();
    Matrix dx(dy.shape());
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        gg[j] += dy(r, j) * cache.xhat(r, j);
        gb[j] += dy(r, j);
        dxhat[j] = dy(r, j) * g[j];
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * cache.xhat(r, j);
      }
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        dx(r, j) = cache.inv_std[r] * (dxhat[j] - mean_d - cache.xhat(r, j) * mean_dx);
      }
    }
    return dx;
  }

  Matrix attention(const AttnIdx& ai, const Matrix& xq, const Matrix& xkv, bool causal, AttnCache& c) {
    c.xq = xq;
    c.xkv = xkv;
    c.q = linear(ai.q, xq);
    c.k = linear(ai.k, xkv);
    c.v = linear(ai.v, xkv);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.q.cols()));
    c.p = matmul_nt(c.q, c.k);
    for (std::size_t i = 0; i < c.p.rows(); ++i) {
      for (std::size_t j = 0; j < c.p.cols(); ++j) {
        c.p(i, j) = (causal && j > i) ? -std::numeric_limits<double>::infinity() : c.p(i, j) * inv_sqrt_d;
      }
    }
    softmax_rows(c.p);
    c.o = matmul(c.p, c.v);
    return linear(ai.o, c.o);
  }

  // Returns (d xq, d xkv).
  std::pair<Matrix, Matrix> attention_back(const AttnIdx& ai, const Matrix& dout, const AttnCache& c) {
    const Matrix d_o = linear_back(ai.o, c.o, dout);
    Matrix dp = matmul_nt(d_o, c.v);
    Matrix dv(c.v.shape());
    matmul_tn_into(c.p, d_o, dv);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.q.cols()));
    Matrix ds(dp.shape());
    for (std::size_t i = 0; i < dp.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < dp.cols(); ++j) dot += dp(i, j) * c.p(i, j);
      for (std::size_t j = 0; j < dp.cols(); ++j) ds(i, j) = c.p(i, j) * (dp(i, j) - dot) * inv_sqrt_d;
    }
    const Matrix dq = matmul(ds, c.k);
    Matrix dk(c.k.shape());
    matmul_tn_into(ds, c.q, dk);
    Matrix dxq = linear_back(ai.q, c.xq, dq);
    Matrix dxkv = linear_back(ai.k, c.xkv, dk);
    add_into(dxkv, linear_back(ai.v, c.xkv, dv));
    return {std::move(dxq), std::move(dxkv)};
  }

  Matrix ffn(const LinearIdx& l1, const LinearIdx& l2, const Matrix& x, FfnCache& c) {
    c.x = x;
    c.pre = linear(l1, x);
    c.act = c.pre;
    for (auto& v : c.act.data()) v = std::max(v, 0.0);
    return linear(l2, c.act);
  }

  Matrix ffn_back(const LinearIdx& l1, const LinearIdx& l2, const Matrix& dout, const FfnCache& c) {
    Matrix dact = linear_back(l2, c.act, dout);
    for (std::size_t i = 0; i < dact.size(); ++i) {
      if (c.pre[i] <= 0.0) dact[i] = 0.0;
    }
    return linear_back(l1, c.x, dact);
  }

  Matrix encoder_apply(std::size_t block, const Matrix& x) {
    const auto& e = layout_.encoder[block];
    EncoderApp app;
    app.block = block;
    const Matrix n1 = layer_norm(e.n1, x, app.n1);
    Matrix h = attention(e.self, n1, n1, false, app.self);
    add_into(h, x);
    const Matrix n2 = layer_norm(e.n2, h, app.n2);
    Matrix y = ffn(e.ff1, e.ff2, n2, app.ffn);
    add_into(y, h);
    if (record_) encoder_apps_.push_back(std::move(app));
    return y;
  }

  Matrix encoder_back(const EncoderApp& app, const Matrix& dy) {
    const auto& e = layout_.encoder[app.block];
    Matrix dh = dy;
    add_into(dh, norm_back(e.n2, ffn_back(e.ff1, e.ff2, dy, app.ffn), app.n2));
    auto [dq, dkv] = attention_back(e.self, dh, app.self);
    add_into(dq, dkv);
    Matrix dx = dh;
    add_into(dx, norm_back(e.n1, dq, app.n1));
    return dx;
  }

  Matrix decoder_apply(std::size_t block, const Matrix& x) {
    const auto& e = layout_.decoder[block];
    DecoderApp app;
    app.block = block;
    const Matrix n1 = layer_norm(e.n1, x, app.n1);
    Matrix h1 = attention(e.self, n1, n1, true, app.self);
    add_into(h1, x);
    const Matrix n2 = layer_norm(e.n2, h1, app.n2);
    Matrix h2 = attention(e.cross, n2, memory_, false, app.cross);
    add_into(h2, h1);
    const Matrix n3 = layer_norm(e.n3, h2, app.n3);
    Matrix y = ffn(e.ff1, e.ff2, n3, app.ffn);
    add_into(y, h2);
    if (record_) decoder_apps_.push_back(std::move(app));
    return y;
  }

  Matrix decoder_back(const DecoderApp& app, const Matrix& dy, Matrix& dmem) {
    const auto& e = layout_.decoder[app.block];
    Matrix dh2 = dy;
    add_into(dh2, norm_back(e.n3, ffn_back(e.ff1, e.ff2, dy, app.ffn), app.n3));
    auto [dcq, dckv] = attention_back(e.cross, dh2, app.cross);
    add_into(dmem, dckv);
    Matrix dh1 = dh2;
    add_into(dh1, norm_back(e.n2, dcq, app.n2));
    auto [dsq, dskv] = attention_back(e.self, dh1, app.self);
    add_into(dsq, dskv);
    Matrix dx = dh1;
    add_into(dx, norm_back(e.n1, dsq, app.n1));
    return dx;
  }

  const ModelGraph& graph_;
  const ModelGraph::Layout& layout_;
  const ForwardHooks& hooks_;
  bool record_;
  std::vector<Matrix> params_;
  std::vector<Matrix> grads_;

  Matrix source_, stem_pre_, memory_, predict_in_;
  NormCache predict_norm_;
  std::vector<int> tokens_;
  std::vector<EncoderApp> encoder_apps_;
  std::vector<DecoderApp> decoder_apps_;
};

// Softmax probabilities of logits (in place) plus mean cross-entropy against `target`.
double cross_entropy(Matrix& logits, const Matrix& target) {
  double l = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double logp = row[j] - log_z;
      if (target(r, j) != 0.0) l -= target(r, j) * logp;
      row[j] = std::exp(logp);
    }
  }
  return l / static_cast<double>(logits.rows());
}

Matrix one_hot_targets(std::span<const int> target, int vocab) {
  Matrix t = Matrix::matrix(target.size(), static_cast<std::size_t>(vocab));
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] < 0 || target[i] >= vocab) {
      throw ValueError("target symbol " + std::to_string(target[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    t(i, static_cast<std::size_t>(target[i])) = 1.0;
  }
  return t;
}

TrainStep backward_impl(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
                        const Matrix& target) {
  ForwardHooks none;
  Engine engine(graph, none, /*record=*/true);
  engine.encode(source);
  Matrix probs = engine.decode(decoder_input);
  if (target.shape() != probs.shape()) {
    throw DimensionError("target " + shape_to_string(target.shape()) + " does not match logits " +
                         shape_to_string(probs.shape()));
  }
  TrainStep step;
  step.loss = cross_entropy(probs, target);
  const double inv_len = 1.0 / static_cast<double>(probs.rows());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = (probs[i] - target[i]) * inv_len;
  step.grads = engine.backprop(probs);
  return step;
}

}  // namespace

Matrix forward(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
               const ForwardHooks& hooks) {
  Engine engine(graph, hooks, /*record=*/false);
  engine.encode(source);
  return engine.decode(decoder_input);
}

TrainStep backward(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
                   std::span<const int> target) {
  if (target.size() != decoder_input.size()) throw DimensionError("target and decoder input lengths differ");
  return backward_impl(graph, source, decoder_input, one_hot_targets(target, graph.config().vocab));
}

TrainStep backward(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
                   const Matrix& target_distribution) {
  return backward_impl(graph, source, decoder_input, target_distribution);
}

double loss(const ModelGraph& graph, const Tensor& source, std::span<const int> decoder_input,
            std::span<const int> target) {
  Matrix logits = forward(graph, source, decoder_input);
  if (target.size() != logits.rows()) throw DimensionError("target and decoder input lengths differ");
  return cross_entropy(logits, one_hot_targets(target, graph.config().vocab));
}

std::vector<int> greedy_decode(const ModelGraph& graph, const Tensor& source, int length, const ForwardHooks& hooks) {
  Engine engine(graph, hooks, /*record=*/false);
  engine.encode(source);
  std::vector<int> prefix{graph.config().bos()};
  std::vector<int> out;
  for (int i = 0; i < length; ++i) {
    const Matrix logits = engine.decode(prefix);
    const auto row = logits.row(static_cast<std::size_t>(i));
    const int next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

Accuracy evaluate_accuracy(const ModelGraph& graph, std::span<const Example> data, const ForwardHooks& hooks) {
  Accuracy acc;
  if (data.empty()) return acc;
  std::size_t tokens = 0, correct = 0, sequences = 0;
  for (const auto& ex : data) {
    const auto pred = greedy_decode(graph, ex.source, static_cast<int>(ex.target.size()), hooks);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == ex.target[i];
    correct += ok;
    tokens += pred.size();
    sequences += ok == pred.size();
  }
  acc.token = static_cast<double>(correct) / static_cast<double>(tokens);
  acc.sequence = static_cast<double>(sequences) / static_cast<double>(data.size());
  return acc;
}

TrainResult train(ModelGraph& graph, std::span<const Example> data, const TrainOptions& options) {
  if (data.empty()) throw ConfigError("training data is empty");
  if (options.batch_size == 0) throw ConfigError("batch size must be >= 1");

  auto& params = graph.parameters();
  const auto prunable = graph.prunable_indices();
  auto gather = [&](const std::vector<Tensor>& all) {
    std::vector<Tensor> out;
    out.reserve(prunable.size());
    for (auto i : prunable) out.push_back(all[i]);
    return out;
  };

  TrainResult result;
  result.mask = options.initial_mask ? *options.initial_mask : full_mask(graph.prunable_weights());
  if (result.mask.keep.size() != prunable.size()) throw DimensionError("initial mask does not cover the prunable set");

  auto enforce_mask = [&](std::vector<Tensor>& tensors, bool whole_model) {
    for (std::size_t t = 0; t < prunable.size(); ++t) {
      Tensor& target = whole_model ? params[prunable[t]].value : tensors[prunable[t]];
      const auto& keep = result.mask.keep[t];
      for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) target[i] = 0.0f;
      }
    }
  };

  std::optional<Sparsifier> sparsifier;
  if (options.schedule) sparsifier.emplace(*options.schedule, graph.prunable_weights());
  std::vector<Tensor> unused;
  enforce_mask(unused, true);

  std::mt19937_64 rng(options.seed);
  const double scale = 1.0 / static_cast<double>(options.batch_size);
  for (std::int64_t t = 1; t <= options.steps; ++t) {
    std::vector<Matrix> acc;
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      const auto& ex = data[rng() % data.size()];
      TrainStep step = backward(graph, ex.source, ex.decoder_input, ex.target);
      batch_loss += step.loss;
      if (acc.empty()) {
        acc = std::move(step.grads);
      } else {
        for (std::size_t i = 0; i < acc.size(); ++i) {
          for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += step.grads[i][j];
        }
      }
    }
    batch_loss *= scale;
    if (!std::isfinite(batch_loss)) {
      throw TrainingError("loss became non-finite at step " + std::to_string(t) + " (lr " +
                          std::to_string(options.learning_rate) + ")");
    }
    result.losses.push_back(batch_loss);

    std::vector<Tensor> grads;
    grads.reserve(acc.size());
    double norm2 = 0.0;
    for (auto& g : acc) {
      for (auto& v : g.data()) {
        v *= scale;
        norm2 += v * v;
      }
    }
    const double norm = std::sqrt(norm2);
    const double clip = options.clip_norm > 0.0 && norm > options.clip_norm ? options.clip_norm / norm : 1.0;
    for (auto& g : acc) {
      if (clip != 1.0) {
        for (auto& v : g.data()) v *= clip;
      }
      grads.push_back(tensor_cast<float>(g));
    }
    enforce_mask(grads, false);

    if (sparsifier) {
      const auto weights = graph.prunable_weights();
      if (sparsifier->on_step(t, weights, gather(grads))) {
        result.mask = sparsifier->mask();
        enforce_mask(unused, true);
        enforce_mask(grads, false);
      }
    }

    const auto lr = static_cast<float>(options.learning_rate);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].value.data();
      const auto g = grads[i].data();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
    }
  }
  if (sparsifier) {
    // Reaching end_step freezes the mask at the final ratio even if training stops early.
    if (!sparsifier->frozen()) {
      result.mask = apply_global_mask(sparsifier->state(), sparsifier->schedule(), sparsifier->schedule().end_step);
      enforce_mask(unused, true);
    }
    result.importance = sparsifier->state();
  }
  return result;
}

}  // namespace lfam
