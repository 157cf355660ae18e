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

#include "lfam/capture.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "lfam/model_format.hpp"

namespace lfam {

std::set<int> CalibCapture::layers() const {
  std::set<int> out;
  for (const auto& e : entries) out.insert(e.layer_id);
  return out;
}

Tensor CalibCapture::load(const CaptureEntry& entry) const {
  const Bytes bytes = read_file(dir / entry.file);
  try {
    return deserialize_raw(bytes, entry.shape);
  } catch (const FormatError& e) {
    throw FormatError("capture file '" + entry.file + "': " + e.what());
  }
}

std::vector<Tensor> CalibCapture::load_layer(int layer_id) const {
  std::vector<const CaptureEntry*> picked;
  for (const auto& e : entries) {
    if (e.layer_id == layer_id) picked.push_back(&e);
  }
  std::sort(picked.begin(), picked.end(), [](auto* a, auto* b) { return a->batch_id < b->batch_id; });
  std::vector<Tensor> out;
  for (const auto* e : picked) out.push_back(load(*e));
  return out;
}

ActivationCapture capture_activations(const ModelGraph& graph, std::span<const Tensor> sources, int length,
                                      std::size_t batch_size, std::size_t n_batches) {
  if (batch_size == 0 || n_batches == 0) throw ConfigError("capture needs at least one batch of one sequence");
  if (sources.size() < batch_size * n_batches) {
    throw ConfigError("capture needs " + std::to_string(batch_size * n_batches) + " sources, got " +
                      std::to_string(sources.size()));
  }
  ActivationCapture out;
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::map<int, std::vector<double>> rows;
    std::map<int, std::size_t> widths;
    ForwardHooks hooks;
    hooks.capture = [&](int layer, const Matrix& x) {
      auto& buf = rows[layer];
      buf.insert(buf.end(), x.data().begin(), x.data().end());
      widths[layer] = x.cols();
    };
    for (std::size_t i = 0; i < batch_size; ++i) {
      const Tensor& src = sources[b * batch_size + i];
      const auto predicted = greedy_decode(graph, src, length);
      std::vector<int> dec_in{graph.config().bos()};
      dec_in.insert(dec_in.end(), predicted.begin(), predicted.end() - 1);
      forward(graph, src, dec_in, hooks);
    }
    for (auto& [layer, buf] : rows) {
      const std::size_t w = widths[layer];
      std::vector<float> f(buf.begin(), buf.end());
      out[layer].emplace_back(Shape{buf.size() / w, w}, std::move(f));
    }
  }
  return out;
}

std::string format_manifest(std::span<const CaptureEntry> entries) {
  std::ostringstream os;
  os << "# lfam capture v1\n";
  for (const auto& e : entries) {
    os << e.layer_id << ' ' << e.batch_id << ' ';
    for (std::size_t i = 0; i < e.shape.size(); ++i) os << (i ? "x" : "") << e.shape[i];
    os << ' ' << e.file << '\n';
  }
  return os.str();
}

std::vector<CaptureEntry> parse_manifest(const std::string& text) {
  std::vector<CaptureEntry> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    CaptureEntry e;
    std::string dims;
    if (!(ls >> e.layer_id >> e.batch_id >> dims >> e.file)) {
      throw FormatError("capture manifest line " + std::to_string(lineno) + " is malformed");
    }
    std::istringstream ds(dims);
    std::string d;
    while (std::getline(ds, d, 'x')) {
      try {
        const auto v = std::stoull(d);
        if (v == 0) throw FormatError("zero dimension");
        e.shape.push_back(v);
      } catch (const std::exception&) {
        throw FormatError("capture manifest line " + std::to_string(lineno) + ": bad shape '" + dims + "'");
      }
    }
    if (e.shape.size() != 2) {
      throw FormatError("capture manifest line " + std::to_string(lineno) + ": shape '" + dims + "' is not rows x cols");
    }
    out.push_back(std::move(e));
  }
  return out;
}

CalibCapture write_capture(const ActivationCapture& capture, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  CalibCapture c;
  c.dir = dir;
  for (const auto& [layer, batches] : capture) {
    for (std::size_t b = 0; b < batches.size(); ++b) {
      CaptureEntry e;
      e.layer_id = layer;
      e.batch_id = static_cast<int>(b);
      e.shape = batches[b].shape();
      e.file = "layer" + std::to_string(layer) + "_batch" + std::to_string(b) + ".f32";
      write_file_atomic(dir / e.file, serialize_raw(batches[b]));
      c.entries.push_back(std::move(e));
    }
  }
  const std::string manifest = format_manifest(c.entries);
  write_file_atomic(dir / "manifest.txt", Bytes(manifest.begin(), manifest.end()));
  return c;
}

CalibCapture read_capture(const std::filesystem::path& dir) {
  const Bytes text = read_file(dir / "manifest.txt");
  CalibCapture c;
  c.dir = dir;
  c.entries = parse_manifest(std::string(text.begin(), text.end()));
  for (const auto& e : c.entries) {
    const auto size = std::filesystem::file_size(dir / e.file);
    if (size != 4 * element_count(e.shape)) {
      throw FormatError("capture file '" + e.file + "' is " + std::to_string(size) + " bytes, shape " +
                        shape_to_string(e.shape) + " needs " + std::to_string(4 * element_count(e.shape)));
    }
  }
  return c;
}

}  // namespace lfam
