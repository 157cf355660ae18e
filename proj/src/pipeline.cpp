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

#include "lfam/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <iomanip>
#include <sstream>

#include "lfam/admm.hpp"

namespace lfam {

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || line[0] == '[' || eq == std::string::npos) continue;
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace

const char* to_string(QuantStrategy s) {
  switch (s) {
    case QuantStrategy::None:
      return "none";
    case QuantStrategy::KL:
      return "kl";
    case QuantStrategy::KLAdmm:
      return "kl+admm";
  }
  return "unknown";
}

QuantStrategy quant_strategy_from_string(const std::string& s) {
  if (s == "none") return QuantStrategy::None;
  if (s == "kl") return QuantStrategy::KL;
  if (s == "kl+admm") return QuantStrategy::KLAdmm;
  throw ConfigError("unknown quantization strategy '" + s + "' (expected none|kl|kl+admm)");
}

void PipelineConfig::validate() const {
  model.validate();
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  if (train_examples == 0 || eval_examples == 0) throw ConfigError("example counts must be positive");
  if (pretrain_steps < 0 || sparse_steps < 0) throw ConfigError("step counts must be non-negative");
  if (batch_size == 0 || calib_batches == 0 || calib_batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  schedule().validate();
  if (sparsity > 0.0 && schedule_end > sparse_steps) {
    throw ConfigError("schedule_end (" + std::to_string(schedule_end) + ") exceeds sparse_steps (" +
                      std::to_string(sparse_steps) + ")");
  }
}

std::string PipelineConfig::row_label() const {
  std::ostringstream os;
  os << static_cast<int>(std::lround(sparsity * 100.0)) << "% ";
  switch (strategy) {
    case QuantStrategy::None:
      os << "float32";
      return os.str();
    case QuantStrategy::KL:
      os << "KL";
      break;
    case QuantStrategy::KLAdmm:
      os << "KL†";
      break;
  }
  if (amp_k > 0) os << " + AMP(" << amp_k << ")";
  return os.str();
}

SparsitySchedule PipelineConfig::schedule() const {
  return SparsitySchedule{schedule_start, schedule_end, sparsity, update_interval};
}

TaskConfig PipelineConfig::task_config() const { return TaskConfig{task, model.vocab, seq_len}; }

void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  auto as_int = [&] { return parse_number<int>(key, value); };
  auto as_size = [&] { return parse_number<std::size_t>(key, value); };
  auto as_i64 = [&] { return parse_number<std::int64_t>(key, value); };
  auto as_double = [&] { return parse_number<double>(key, value); };

  if (key == "M") cfg.model.M = as_int();
  else if (key == "N") cfg.model.N = as_int();
  else if (key == "S1") cfg.model.S1 = as_int();
  else if (key == "S2") cfg.model.S2 = as_int();
  else if (key == "d_model") cfg.model.d_model = as_int();
  else if (key == "d_ff") cfg.model.d_ff = as_int();
  else if (key == "vocab") cfg.model.vocab = as_int();
  else if (key == "task") {
    if (value == "copy") cfg.task = TaskKind::Copy;
    else if (value == "reverse") cfg.task = TaskKind::Reverse;
    else throw ConfigError("unknown task '" + value + "' (expected copy|reverse)");
  }
  else if (key == "seq_len") cfg.seq_len = as_int();
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train_examples") cfg.train_examples = as_size();
  else if (key == "eval_examples") cfg.eval_examples = as_size();
  else if (key == "pretrain_steps") cfg.pretrain_steps = as_i64();
  else if (key == "sparse_steps") cfg.sparse_steps = as_i64();
  else if (key == "batch_size") cfg.batch_size = as_size();
  else if (key == "learning_rate") cfg.learning_rate = as_double();
  else if (key == "clip_norm") cfg.clip_norm = as_double();
  else if (key == "sparsity") cfg.sparsity = as_double();
  else if (key == "schedule_start") cfg.schedule_start = as_i64();
  else if (key == "schedule_end") cfg.schedule_end = as_i64();
  else if (key == "update_interval") cfg.update_interval = as_i64();
  else if (key == "calib_mode") cfg.calib_mode = histogram_mode_from_string(value);
  else if (key == "strategy") cfg.strategy = quant_strategy_from_string(value);
  else if (key == "amp_k") cfg.amp_k = as_size();
  else if (key == "exclude") {
    cfg.exclude.clear();
    std::istringstream is(value);
    std::string name;
    while (std::getline(is, name, ',')) {
      name = trim(name);
      if (!name.empty()) cfg.exclude.push_back(name);
    }
  }
  else if (key == "calib_batches") cfg.calib_batches = as_size();
  else if (key == "calib_batch_size") cfg.calib_batch_size = as_size();
  else if (key == "work_dir") cfg.work_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    apply_override(cfg, line);
  }
  return cfg;
}

std::string format_config(const PipelineConfig& cfg) {
  std::ostringstream os;
  os << "# lfam pipeline config\n";
  os << "M = " << cfg.model.M << "\nN = " << cfg.model.N << "\nS1 = " << cfg.model.S1 << "\nS2 = " << cfg.model.S2
     << "\nd_model = " << cfg.model.d_model << "\nd_ff = " << cfg.model.d_ff << "\nvocab = " << cfg.model.vocab << "\n";
  os << "task = " << (cfg.task == TaskKind::Copy ? "copy" : "reverse") << "\nseq_len = " << cfg.seq_len
     << "\nseed = " << cfg.seed << "\n";
  os << "train_examples = " << cfg.train_examples << "\neval_examples = " << cfg.eval_examples << "\n";
  os << "pretrain_steps = " << cfg.pretrain_steps << "\nsparse_steps = " << cfg.sparse_steps
     << "\nbatch_size = " << cfg.batch_size << "\nlearning_rate = " << num(cfg.learning_rate) << "\nclip_norm = " << num(cfg.clip_norm) << "\n";
  os << "sparsity = " << num(cfg.sparsity) << "\nschedule_start = " << cfg.schedule_start
     << "\nschedule_end = " << cfg.schedule_end << "\nupdate_interval = " << cfg.update_interval << "\n";
  os << "calib_mode = " << to_string(cfg.calib_mode) << "\nstrategy = " << to_string(cfg.strategy)
     << "\namp_k = " << cfg.amp_k << "\nexclude = ";
  for (std::size_t i = 0; i < cfg.exclude.size(); ++i) os << (i ? "," : "") << cfg.exclude[i];
  os << "\ncalib_batches = " << cfg.calib_batches << "\ncalib_batch_size = " << cfg.calib_batch_size
     << "\nwork_dir = " << cfg.work_dir.string() << "\n";
  return os.str();
}

PipelineConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

std::string format_graph(const ModelGraph& graph) {
  const auto& c = graph.config();
  std::ostringstream os;
  os << "M " << c.M << "\nN " << c.N << "\nS1 " << c.S1 << "\nS2 " << c.S2 << "\nd_model " << c.d_model
     << "\nd_ff " << c.d_ff << "\nvocab " << c.vocab << "\n";
  for (const auto& [position, owner] : graph.share_groups()) os << "share " << position << ' ' << owner << '\n';
  return os.str();
}

ModelConfig parse_graph(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string key;
  std::set<std::string> seen;
  while (is >> key) {
    if (key == "share") {
      std::string a, b;
      is >> a >> b;
      continue;
    }
    int v = 0;
    if (!(is >> v)) throw FormatError("graph metadata: missing value for '" + key + "'");
    if (key == "M") c.M = v;
    else if (key == "N") c.N = v;
    else if (key == "S1") c.S1 = v;
    else if (key == "S2") c.S2 = v;
    else if (key == "d_model") c.d_model = v;
    else if (key == "d_ff") c.d_ff = v;
    else if (key == "vocab") c.vocab = v;
    else throw FormatError("graph metadata: unknown key '" + key + "'");
    seen.insert(key);
  }
  if (seen.size() != 7) throw FormatError("graph metadata is incomplete");
  c.validate();
  return c;
}

CompressedModel checkpoint_from_graph(const ModelGraph& graph) {
  CompressedModel m;
  m.metadata["graph"] = format_graph(graph);
  for (const auto& p : graph.parameters()) m.tensors.push_back({p.name, DenseF32{p.value}});
  return m;
}

ModelGraph graph_from_model(const CompressedModel& model) {
  auto it = model.metadata.find("graph");
  if (it == model.metadata.end()) throw FormatError("model has no graph metadata");
  std::map<std::string, Tensor> named;
  for (const auto& t : model.tensors) named[t.name] = t.to_float();
  return ModelGraph::from_named(parse_graph(it->second), named);
}

std::string format_scales(const ScaleTable& table, const char* header) {
  std::ostringstream os;
  os << "# " << header << "\n# layer_id scale threshold divergence\n";
  for (const auto& [id, e] : table) {
    os << id << ' ' << num(e.scale) << ' ' << num(e.threshold) << ' ' << num(e.divergence) << '\n';
  }
  return os.str();
}

ScaleTable parse_scales(const std::string& text) {
  ScaleTable t;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int id = 0;
    ScaleEntry e;
    if (!(ls >> id >> e.scale >> e.threshold >> e.divergence)) throw FormatError("malformed scale line: " + line);
    t[id] = e;
  }
  return t;
}

ScaleTable calibrate_activations(const CalibCapture& capture, HistogramMode mode, const std::vector<int>& layers) {
  ScaleTable out;
  for (int id : layers) {
    const auto samples = capture.load_layer(id);
    if (samples.empty()) throw CalibrationError("capture has no activations for layer " + std::to_string(id));
    const CalibHistogram h = collect_histogram(samples, mode);
    const ThresholdResult r = search_threshold(h);
    out[id] = {r.params.scale, r.threshold, r.divergence};
  }
  return out;
}

ScaleTable calibrate_weights(const ModelGraph& graph, const std::vector<int>& layers, bool admm) {
  ScaleTable out;
  for (int id : layers) {
    const Tensor& w = graph.parameters()[graph.layer(id).weight].value;
    const float s0 = maxabs_scale(w);
    if (admm) {
      const AdmmResult r = admm_refine(w, s0);
      out[id] = {r.params.scale, r.params.scale * kQuantBound, r.trace.records[r.trace.best_index].mse};
    } else {
      out[id] = {s0, s0 * kQuantBound, quantization_mse(w, s0)};
    }
  }
  return out;
}

std::vector<int> excluded_layers(const ModelGraph& graph, const PipelineConfig& cfg) {
  std::vector<int> out;
  for (const auto& name : cfg.exclude) out.push_back(graph.layer_id(name));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> quantizable_layers(const ModelGraph& graph, const std::vector<int>& excluded) {
  std::vector<int> out;
  for (const auto& l : graph.linear_layers()) {
    if (std::find(excluded.begin(), excluded.end(), l.id) == excluded.end()) out.push_back(l.id);
  }
  return out;
}

EvaluationReport evaluate(const ModelGraph& reference, const ModelGraph& quantized, std::span<const Example> data,
                          const PrecisionPlan* plan, const ScaleTable* activation_scales) {
  std::map<int, QuantParams> act;
  if (plan) {
    const int layers = static_cast<int>(quantized.linear_layers().size());
    for (const auto& [id, p] : plan->precision) {
      if (id < 0 || id >= layers) throw ConfigError("plan references unknown layer " + std::to_string(id));
      if (p != Precision::Int8) continue;
      if (!activation_scales || !activation_scales->count(id)) {
        throw ConfigError("no activation scale for int8 layer " + std::to_string(id));
      }
      act[id] = QuantParams::from_scale(static_cast<float>(activation_scales->at(id).scale));
    }
  }
  ForwardHooks hooks;
  hooks.activation_quant = &act;

  EvaluationReport r;
  r.examples = data.size();
  r.float_accuracy = evaluate_accuracy(reference, data);
  r.quant_accuracy = evaluate_accuracy(quantized, data, hooks);
  double total = 0.0;
  for (const auto& ex : data) {
    total += mse(forward(reference, ex.source, ex.decoder_input), forward(quantized, ex.source, ex.decoder_input, hooks));
  }
  r.output_mse = data.empty() ? 0.0 : total / static_cast<double>(data.size());
  return r;
}

std::string format_evaluation(const EvaluationReport& r) {
  std::ostringstream os;
  os << "examples=" << r.examples << "\nfloat_token_accuracy=" << num(r.float_accuracy.token)
     << "\nfloat_sequence_accuracy=" << num(r.float_accuracy.sequence)
     << "\nquant_token_accuracy=" << num(r.quant_accuracy.token)
     << "\nquant_sequence_accuracy=" << num(r.quant_accuracy.sequence) << "\noutput_mse=" << num(r.output_mse)
     << "\n";
  return os.str();
}

namespace {

EvaluationReport parse_evaluation(const std::string& text) {
  const auto kv = parse_key_values(text);
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(std::string("evaluation file lacks '") + k + "'");
    return it->second;
  };
  EvaluationReport r;
  r.examples = parse_number<std::size_t>("examples", get("examples"));
  r.float_accuracy.token = parse_number<double>("float_token_accuracy", get("float_token_accuracy"));
  r.float_accuracy.sequence = parse_number<double>("float_sequence_accuracy", get("float_sequence_accuracy"));
  r.quant_accuracy.token = parse_number<double>("quant_token_accuracy", get("quant_token_accuracy"));
  r.quant_accuracy.sequence = parse_number<double>("quant_sequence_accuracy", get("quant_sequence_accuracy"));
  r.output_mse = parse_number<double>("output_mse", get("output_mse"));
  return r;
}

Artifacts artifacts(const PipelineConfig& cfg) { return Artifacts{cfg.work_dir}; }

ModelGraph load_graph(const std::filesystem::path& path) { return graph_from_model(read_model_file(path)); }

SparseMask load_mask(const std::filesystem::path& path, const ModelGraph& graph) {
  const CompressedModel m = read_model_file(path);
  SparseMask mask;
  for (auto idx : graph.prunable_indices()) {
    const auto& name = graph.parameters()[idx].name;
    const TensorChunk* chunk = m.find("mask/" + name);
    if (!chunk) throw FormatError("mask file lacks '" + name + "'");
    const Tensor t = chunk->to_float();
    std::vector<std::uint8_t> keep(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) keep[i] = t[i] != 0.0f;
    mask.keep.push_back(std::move(keep));
  }
  return mask;
}

void save_mask(const std::filesystem::path& path, const ModelGraph& graph, const SparseMask& mask) {
  CompressedModel m;
  const auto idx = graph.prunable_indices();
  for (std::size_t t = 0; t < idx.size(); ++t) {
    const auto& p = graph.parameters()[idx[t]];
    Tensor keep(p.value.shape());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = mask.keep[t][i] ? 1.0f : 0.0f;
    m.tensors.push_back({"mask/" + p.name, DenseF32{std::move(keep)}});
  }
  write_model_file(path, m);
}

std::vector<Example> training_set(const PipelineConfig& cfg) {
  return make_dataset(cfg.task_config(), cfg.train_examples, cfg.seed);
}

std::vector<Example> evaluation_set(const PipelineConfig& cfg) {
  return make_dataset(cfg.task_config(), cfg.eval_examples, cfg.seed + 1);
}

std::vector<Tensor> calibration_sources(const PipelineConfig& cfg) {
  std::vector<Tensor> out;
  for (auto& ex : make_dataset(cfg.task_config(), cfg.calib_batches * cfg.calib_batch_size, cfg.seed + 2)) {
    out.push_back(std::move(ex.source));
  }
  return out;
}

PrecisionPlan float_plan(const ModelGraph& graph) {
  PrecisionPlan plan;
  for (const auto& l : graph.linear_layers()) {
    plan.precision[l.id] = Precision::Float32;
    plan.excluded.push_back(l.id);
  }
  return plan;
}

}  // namespace

void stage_train(const PipelineConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.work_dir);
  ModelGraph graph = ModelGraph::create(cfg.model, cfg.seed);
  const auto data = training_set(cfg);
  TrainOptions opts;
  opts.steps = cfg.pretrain_steps;
  opts.batch_size = cfg.batch_size;
  opts.learning_rate = cfg.learning_rate;
  opts.clip_norm = cfg.clip_norm;
  opts.seed = cfg.seed;
  train(graph, data, opts);
  write_model_file(artifacts(cfg).dense(), checkpoint_from_graph(graph));
}

void stage_sparsify(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  ModelGraph graph = load_graph(a.dense());
  SparseMask mask = full_mask(graph.prunable_weights());
  if (cfg.sparsity > 0.0) {
    const auto data = training_set(cfg);
    TrainOptions opts;
    opts.steps = cfg.sparse_steps;
    opts.batch_size = cfg.batch_size;
    opts.learning_rate = cfg.learning_rate;
  opts.clip_norm = cfg.clip_norm;
    opts.seed = cfg.seed + 1;
    opts.schedule = cfg.schedule();
    mask = train(graph, data, opts).mask;
  }
  write_model_file(a.sparse(), checkpoint_from_graph(graph));
  save_mask(a.mask(), graph, mask);
}

void stage_capture(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  const ModelGraph graph = load_graph(a.sparse());
  const auto sources = calibration_sources(cfg);
  const auto capture = capture_activations(graph, sources, cfg.seq_len, cfg.calib_batch_size, cfg.calib_batches);
  std::filesystem::remove_all(a.capture());
  write_capture(capture, a.capture());
}

void stage_calibrate(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  ScaleTable table;
  if (cfg.strategy != QuantStrategy::None) {
    const ModelGraph graph = load_graph(a.sparse());
    const auto layers = quantizable_layers(graph, excluded_layers(graph, cfg));
    table = calibrate_activations(read_capture(a.capture()), cfg.calib_mode, layers);
  }
  write_text(a.activation_scales(), format_scales(table, "activation scales"));
}

void stage_quantize(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  ScaleTable table;
  if (cfg.strategy != QuantStrategy::None) {
    const ModelGraph graph = load_graph(a.sparse());
    const auto layers = quantizable_layers(graph, excluded_layers(graph, cfg));
    table = calibrate_weights(graph, layers, cfg.strategy == QuantStrategy::KLAdmm);
  }
  write_text(a.weight_scales(), format_scales(table, "weight scales"));
}

void stage_amp(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  const ModelGraph graph = load_graph(a.sparse());
  if (cfg.strategy == QuantStrategy::None) {
    write_text(a.plan(), format_plan(float_plan(graph)));
    return;
  }
  const auto excluded = excluded_layers(graph, cfg);
  const auto layers = quantizable_layers(graph, excluded);
  const ScaleTable act = parse_scales(read_text(a.activation_scales()));
  const ScaleTable wts = parse_scales(read_text(a.weight_scales()));
  const CalibCapture capture = read_capture(a.capture());
  std::vector<LayerCost> costs;
  for (int id : layers) {
    if (!act.count(id) || !wts.count(id)) throw CalibrationError("missing scales for layer " + std::to_string(id));
    const auto& l = graph.layer(id);
    costs.push_back(layer_cost(id, graph.parameters()[l.weight].value, graph.parameters()[l.bias].value,
                               capture.load_layer(id), QuantParams::from_scale(static_cast<float>(wts.at(id).scale)),
                               QuantParams::from_scale(static_cast<float>(act.at(id).scale))));
  }
  write_text(a.plan(), format_plan(select_fallback(costs, cfg.amp_k, excluded)));
}

void stage_pack(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  const ModelGraph graph = load_graph(a.sparse());
  if (cfg.strategy == QuantStrategy::None) {
    write_model_file(a.model(), checkpoint_from_graph(graph));
    return;
  }
  const SparseMask mask = load_mask(a.mask(), graph);
  const PrecisionPlan plan = parse_plan(read_text(a.plan()));
  const ScaleTable act = parse_scales(read_text(a.activation_scales()));
  const ScaleTable wts = parse_scales(read_text(a.weight_scales()));
  const std::string note = std::string("strategy ") + to_string(cfg.strategy) + "\ncalib_mode " +
                           to_string(cfg.calib_mode) + "\nrow " + cfg.row_label() + "\n";
  const CompressedModel m = pack_model(graph, mask, &plan, wts, act, note);
  write_model_file(a.model(), m);
}

EvaluationReport stage_evaluate(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  const ModelGraph reference = load_graph(a.sparse());
  const CompressedModel packed = read_model_file(a.model());
  const ModelGraph quantized = graph_from_model(packed);
  const auto data = evaluation_set(cfg);

  EvaluationReport r;
  auto plan_it = packed.metadata.find("plan");
  if (plan_it != packed.metadata.end()) {
    const PrecisionPlan plan = parse_plan(plan_it->second);
    const ScaleTable act = parse_scales(packed.metadata.at("activation_scales"));
    r = evaluate(reference, quantized, data, &plan, &act);
  } else {
    r = evaluate(reference, quantized, data, nullptr, nullptr);
  }
  write_text(a.evaluation(), format_evaluation(r));
  return r;
}

std::string stage_report(const PipelineConfig& cfg) {
  cfg.validate();
  const Artifacts a = artifacts(cfg);
  const CompressedModel packed = read_model_file(a.model());
  const SizeReport size = model_size_report(packed);
  const EvaluationReport eval = parse_evaluation(read_text(a.evaluation()));
  const ModelGraph graph = graph_from_model(packed);

  std::ostringstream os;
  os << "row: " << cfg.row_label() << "\n\n" << format_size_report(size) << "\n";

  std::vector<int> fallback, excluded;
  if (auto it = packed.metadata.find("plan"); it != packed.metadata.end()) {
    const PrecisionPlan plan = parse_plan(it->second);
    fallback = plan.fallback_layers();
    excluded = plan.excluded;
    os << "layer                   precision  cost\n";
    for (const auto& [id, p] : plan.precision) {
      os << std::left << std::setw(24) << graph.layer(id).name << std::setw(11) << to_string(p);
      if (plan.is_excluded(id)) {
        os << "excluded";
      } else {
        os << num(plan.cost.at(id));
      }
      os << "\n";
    }
    os << "\n";
  }
  auto join = [](const std::vector<int>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
    return s;
  };

  os << "[summary]\n";
  os << "row=" << cfg.row_label() << "\n";
  os << "strategy=" << to_string(cfg.strategy) << "\ncalib_mode=" << to_string(cfg.calib_mode) << "\n";
  os << "sparsity=" << num(cfg.sparsity) << "\n";
  os << "file_bytes=" << size.file_bytes << "\nbaseline_bytes=" << size.baseline_bytes
     << "\ncompression_ratio=" << num(size.compression_ratio) << "\n";
  os << "unique_parameters=" << graph.unique_parameter_count()
     << "\nunrolled_parameters=" << graph.unrolled_parameter_count() << "\n";
  os << "fallback_layers=" << join(fallback) << "\nexcluded_layers=" << join(excluded) << "\n";
  os << format_evaluation(eval);
  os << "stages=";
  for (std::size_t i = 0; i < stage_order().size(); ++i) os << (i ? "," : "") << stage_order()[i];
  os << "\n";
  const std::string text = os.str();
  write_text(a.report(), text);
  return text;
}

CompressedModel pack_model(const ModelGraph& graph, const SparseMask& mask, const PrecisionPlan* plan,
                           const ScaleTable& weight_scales, const ScaleTable& activation_scales,
                           const std::string& quantization_note) {
  CompressedModel m = checkpoint_from_graph(graph);
  if (!plan) return m;
  const auto prunable = graph.prunable_indices();
  if (mask.keep.size() != prunable.size()) throw DimensionError("mask does not cover the prunable set");

  ScaleTable int8_act;
  for (const auto& [id, p] : plan->precision) {
    if (p != Precision::Int8) continue;
    auto it = activation_scales.find(id);
    if (it == activation_scales.end()) throw ConfigError("no activation scale for int8 layer " + std::to_string(id));
    int8_act[id] = it->second;
  }
  m.metadata["activation_scales"] = format_scales(int8_act, "activation scales");
  m.metadata["plan"] = format_plan(*plan);
  if (!quantization_note.empty()) m.metadata["quantization"] = quantization_note;

  for (std::size_t i = 0; i < graph.parameters().size(); ++i) {
    const auto& p = graph.parameters()[i];
    if (p.kind != ParamKind::Weight || plan->at(p.layer_id) != Precision::Int8) continue;
    auto ws = weight_scales.find(p.layer_id);
    if (ws == weight_scales.end()) throw ConfigError("no weight scale for int8 layer " + std::to_string(p.layer_id));
    const QuantParams qp = QuantParams::from_scale(static_cast<float>(ws->second.scale));
    IntTensor q = quantize(p.value, qp);
    auto& chunk = m.tensors[i];
    const auto pos = std::find(prunable.begin(), prunable.end(), i);
    if (pos != prunable.end()) {
      const auto& keep = mask.keep[static_cast<std::size_t>(pos - prunable.begin())];
      const auto kept = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
      if (payload_bytes(Encoding::SparseI8, q.size(), kept) < payload_bytes(Encoding::DenseI8, q.size(), 0)) {
        chunk.payload = SparseI8{std::move(q), qp, keep};
        continue;
      }
    }
    chunk.payload = DenseI8{std::move(q), qp};
  }
  return m;
}

const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order{"train",    "sparsify", "capture",  "calibrate", "quantize",
                                              "amp",      "pack",     "evaluate", "report"};
  return order;
}

void run_stage(const std::string& name, const PipelineConfig& cfg) {
  const Artifacts a = artifacts(cfg);
  std::vector<std::filesystem::path> outputs;
  std::function<void()> fn;
  if (name == "train") {
    outputs = {a.dense()};
    fn = [&] { stage_train(cfg); };
  } else if (name == "sparsify") {
    outputs = {a.sparse(), a.mask()};
    fn = [&] { stage_sparsify(cfg); };
  } else if (name == "capture") {
    outputs = {a.capture()};
    fn = [&] { stage_capture(cfg); };
  } else if (name == "calibrate") {
    outputs = {a.activation_scales()};
    fn = [&] { stage_calibrate(cfg); };
  } else if (name == "quantize") {
    outputs = {a.weight_scales()};
    fn = [&] { stage_quantize(cfg); };
  } else if (name == "amp") {
    outputs = {a.plan()};
    fn = [&] { stage_amp(cfg); };
  } else if (name == "pack") {
    outputs = {a.model()};
    fn = [&] { stage_pack(cfg); };
  } else if (name == "evaluate") {
    outputs = {a.evaluation()};
    fn = [&] { stage_evaluate(cfg); };
  } else if (name == "report") {
    outputs = {a.report()};
    fn = [&] { stage_report(cfg); };
  } else {
    throw ConfigError("unknown stage '" + name + "'");
  }
  try {
    fn();
  } catch (const std::exception& e) {
    std::error_code ec;
    for (const auto& p : outputs) {
      std::filesystem::remove_all(p, ec);
      auto tmp = p;
      tmp += ".tmp";
      std::filesystem::remove(tmp, ec);
    }
    throw StageError(name, e.what());
  }
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineResult result;
  for (const auto& name : stage_order()) {
    run_stage(name, cfg);
    result.stage_log.push_back(name);
  }
  const Artifacts a = artifacts(cfg);
  const CompressedModel packed = read_model_file(a.model());
  result.size = model_size_report(packed);
  result.evaluation = parse_evaluation(read_text(a.evaluation()));
  result.plan = parse_plan(read_text(a.plan()));
  result.report_text = read_text(a.report());
  return result;
}

}  // namespace lfam
