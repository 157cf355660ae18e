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

#include "lfam/model_format.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace lfam {

const char* to_string(Encoding e) {
  switch (e) {
    case Encoding::DenseF32:
      return "dense_f32";
    case Encoding::DenseI8:
      return "dense_i8";
    case Encoding::SparseI8:
      return "sparse_i8";
  }
  return "unknown";
}

Encoding TensorChunk::encoding() const { return static_cast<Encoding>(payload.index()); }

const Shape& TensorChunk::shape() const {
  return std::visit([](const auto& p) -> const Shape& { return p.values.shape(); }, payload);
}

Tensor TensorChunk::to_float() const {
  if (const auto* f = std::get_if<DenseF32>(&payload)) return f->values;
  if (const auto* d = std::get_if<DenseI8>(&payload)) return dequantize(d->values, d->params);
  const auto& s = std::get<SparseI8>(payload);
  return dequantize(s.values, s.params);
}

const TensorChunk* CompressedModel::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::size_t payload_bytes(Encoding e, std::size_t elements, std::size_t kept) {
  switch (e) {
    case Encoding::DenseF32:
      return 4 * elements;
    case Encoding::DenseI8:
      return 4 + elements;
    case Encoding::SparseI8:
      return 4 + (elements + 7) / 8 + kept;
  }
  return 0;
}

std::size_t tensor_chunk_bytes(std::size_t name_len, std::size_t rank, std::size_t payload) {
  return 2 + name_len + 1 + 1 + 4 * rank + 8 + payload;
}

std::size_t metadata_chunk_bytes(std::size_t key_len, std::size_t text_len) { return 2 + key_len + 4 + text_len; }

namespace {

void put_name(Bytes& out, const std::string& name) {
  if (name.size() > 0xFFFF) throw FormatError("name too long: " + name.substr(0, 32) + "...");
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t base, std::string what)
      : bytes_(bytes), base_(base), what_(std::move(what)) {}

  const std::uint8_t* take(std::size_t n, const char* field) {
    if (n > bytes_.size() - pos_) {
      throw FormatError(what_ + ": truncated " + field + " at byte offset " + std::to_string(base_ + pos_) +
                        " (need " + std::to_string(n) + ", have " + std::to_string(bytes_.size() - pos_) + ")");
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint8_t u8(const char* f) { return *take(1, f); }
  std::uint16_t u16(const char* f) { return get_u16(take(2, f)); }
  std::uint32_t u32(const char* f) { return get_u32(take(4, f)); }
  std::uint64_t u64(const char* f) { return get_u64(take(8, f)); }
  float f32(const char* f) { return get_f32(take(4, f)); }
  std::string str(std::size_t n, const char* f) {
    const auto* p = take(n, f);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void rename(std::string what) { what_ = std::move(what); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at byte offset " + std::to_string(base_ + pos_));
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
  std::string what_;
};

QuantParams read_params(Reader& r) {
  const float s = r.f32("scale");
  if (!(std::isfinite(s) && s > 0.0f)) r.fail("invalid quantization scale");
  return QuantParams{s, kQuantBound};
}

}  // namespace

Bytes encode_tensor(const TensorChunk& chunk) {
  const Shape& shape = chunk.shape();
  const std::size_t n = element_count(shape);
  if (shape.size() > 0xFF) throw FormatError("tensor '" + chunk.name + "' rank exceeds 255");

  Bytes payload;
  if (const auto* f = std::get_if<DenseF32>(&chunk.payload)) {
    payload = serialize_raw(f->values);
  } else if (const auto* d = std::get_if<DenseI8>(&chunk.payload)) {
    d->params.validate();
    put_f32(payload, d->params.scale);
    for (auto v : d->values.data()) payload.push_back(static_cast<std::uint8_t>(v));
  } else {
    const auto& s = std::get<SparseI8>(chunk.payload);
    s.params.validate();
    if (s.keep.size() != n) {
      throw FormatError("tensor '" + chunk.name + "': mask has " + std::to_string(s.keep.size()) +
                        " entries for shape " + shape_to_string(shape));
    }
    put_f32(payload, s.params.scale);
    Bytes bitmap((n + 7) / 8, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (s.keep[i]) {
        bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      } else if (s.values[i] != 0) {
        throw FormatError("tensor '" + chunk.name + "': pruned position " + std::to_string(i) +
                          " holds non-zero value");
      }
    }
    payload.insert(payload.end(), bitmap.begin(), bitmap.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (s.keep[i]) payload.push_back(static_cast<std::uint8_t>(s.values[i]));
    }
  }

  Bytes out;
  out.reserve(tensor_chunk_bytes(chunk.name.size(), shape.size(), payload.size()));
  put_name(out, chunk.name);
  put_u8(out, static_cast<std::uint8_t>(chunk.encoding()));
  put_u8(out, static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) {
    if (d > 0xFFFFFFFFu) throw FormatError("tensor '" + chunk.name + "' dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  put_u64(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

TensorChunk decode_tensor(std::span<const std::uint8_t> bytes, std::size_t base_offset) {
  Reader r(bytes, base_offset, "tensor chunk");
  TensorChunk chunk;
  const std::uint16_t name_len = r.u16("name length");
  chunk.name = r.str(name_len, "name");
  r.rename("tensor '" + chunk.name + "'");
  const std::uint8_t enc = r.u8("encoding");
  if (enc > static_cast<std::uint8_t>(Encoding::SparseI8)) r.fail("unknown encoding " + std::to_string(enc));
  const std::uint8_t rank = r.u8("rank");
  Shape shape(rank);
  for (auto& d : shape) {
    d = r.u32("dimension");
    if (d == 0) r.fail("zero dimension");
  }
  const std::size_t n = element_count(shape);
  const std::uint64_t len = r.u64("payload length");
  if (len > r.remaining()) {
    r.fail("truncated payload (declared " + std::to_string(len) + " bytes, " + std::to_string(r.remaining()) +
           " available)");
  }
  const std::size_t payload_start = r.offset();

  switch (static_cast<Encoding>(enc)) {
    case Encoding::DenseF32: {
      if (len != payload_bytes(Encoding::DenseF32, n, 0)) r.fail("payload length does not match shape");
      const auto* p = r.take(len, "payload");
      chunk.payload = DenseF32{deserialize_raw({p, len}, shape)};
      break;
    }
    case Encoding::DenseI8: {
      if (len != payload_bytes(Encoding::DenseI8, n, 0)) r.fail("payload length does not match shape");
      const QuantParams params = read_params(r);
      const auto* p = r.take(n, "values");
      std::vector<std::int8_t> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = static_cast<std::int8_t>(p[i]);
        if (v[i] == -128) r.fail("int8 value -128 is outside [-127, 127]");
      }
      chunk.payload = DenseI8{IntTensor(shape, std::move(v)), params};
      break;
    }
    case Encoding::SparseI8: {
      const std::size_t bitmap_len = (n + 7) / 8;
      if (len < 4 + bitmap_len) r.fail("payload shorter than scale + bitmap");
      const QuantParams params = read_params(r);
      const auto* bitmap = r.take(bitmap_len, "bitmap");
      std::vector<std::uint8_t> keep(n);
      std::size_t popcount = 0;
      for (std::size_t i = 0; i < n; ++i) {
        keep[i] = (bitmap[i / 8] >> (i % 8)) & 1u;
        popcount += keep[i];
      }
      for (std::size_t i = n; i < bitmap_len * 8; ++i) {
        if ((bitmap[i / 8] >> (i % 8)) & 1u) r.fail("bitmap padding bits are set");
      }
      if (len != 4 + bitmap_len + popcount) {
        r.fail("bitmap popcount " + std::to_string(popcount) + " disagrees with " +
               std::to_string(len - 4 - bitmap_len) + " packed values");
      }
      const auto* p = r.take(popcount, "values");
      std::vector<std::int8_t> v(n, 0);
      std::size_t next = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        v[i] = static_cast<std::int8_t>(p[next++]);
        if (v[i] == -128) r.fail("int8 value -128 is outside [-127, 127]");
      }
      chunk.payload = SparseI8{IntTensor(shape, std::move(v)), params, std::move(keep)};
      break;
    }
  }
  if (r.offset() != payload_start + len) r.fail("payload length mismatch");
  if (r.remaining() != 0) r.fail("trailing bytes after payload");
  return chunk;
}

Bytes serialize_model(const CompressedModel& model) {
  std::vector<std::pair<ChunkKind, Bytes>> bodies;
  for (const auto& [key, text] : model.metadata) {
    Bytes b;
    put_name(b, key);
    put_u32(b, static_cast<std::uint32_t>(text.size()));
    b.insert(b.end(), text.begin(), text.end());
    bodies.emplace_back(ChunkKind::Metadata, std::move(b));
  }
  for (const auto& t : model.tensors) bodies.emplace_back(ChunkKind::Tensor, encode_tensor(t));

  Bytes out;
  out.insert(out.end(), {'L', 'F', 'A', 'M'});
  put_u16(out, model.version);
  put_u32(out, static_cast<std::uint32_t>(bodies.size()));
  std::uint64_t offset = kHeaderBytes + kTableEntryBytes * bodies.size();
  for (const auto& [kind, body] : bodies) {
    put_u8(out, static_cast<std::uint8_t>(kind));
    put_u64(out, offset);
    put_u64(out, body.size());
    offset += body.size();
  }
  for (const auto& [kind, body] : bodies) out.insert(out.end(), body.begin(), body.end());
  return out;
}

CompressedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, 0, "LFAM file");
  const std::string magic = r.str(4, "magic");
  if (magic != "LFAM") throw FormatError("LFAM file: bad magic at byte offset 0");
  CompressedModel model;
  model.version = r.u16("version");
  if (model.version != kFormatVersion) {
    throw FormatError("LFAM file: unsupported version " + std::to_string(model.version) + " (expected " +
                      std::to_string(kFormatVersion) + ")");
  }
  const std::uint32_t count = r.u32("chunk count");
  struct Entry {
    std::uint8_t kind;
    std::uint64_t offset, length;
  };
  std::vector<Entry> table(count);
  for (auto& e : table) {
    e.kind = r.u8("chunk kind");
    e.offset = r.u64("chunk offset");
    e.length = r.u64("chunk length");
  }
  std::uint64_t expected = kHeaderBytes + kTableEntryBytes * static_cast<std::uint64_t>(count);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table[i];
    if (e.offset != expected) {
      throw FormatError("LFAM file: chunk " + std::to_string(i) + " starts at " + std::to_string(e.offset) +
                        ", expected byte offset " + std::to_string(expected));
    }
    if (e.length > bytes.size() || e.offset > bytes.size() - e.length) {
      throw FormatError("LFAM file: chunk " + std::to_string(i) + " truncated at byte offset " +
                        std::to_string(e.offset) + " (length " + std::to_string(e.length) + ", file " +
                        std::to_string(bytes.size()) + ")");
    }
    const auto body = bytes.subspan(e.offset, e.length);
    if (e.kind == static_cast<std::uint8_t>(ChunkKind::Tensor)) {
      model.tensors.push_back(decode_tensor(body, e.offset));
    } else if (e.kind == static_cast<std::uint8_t>(ChunkKind::Metadata)) {
      Reader m(body, e.offset, "metadata chunk");
      const std::string key = m.str(m.u16("key length"), "key");
      m.rename("metadata '" + key + "'");
      const std::uint32_t len = m.u32("text length");
      model.metadata[key] = m.str(len, "text");
      if (m.remaining() != 0) m.fail("trailing bytes");
    } else {
      throw FormatError("LFAM file: unknown chunk kind " + std::to_string(e.kind) + " at byte offset " +
                        std::to_string(e.offset));
    }
    expected += e.length;
  }
  if (expected != bytes.size()) {
    throw FormatError("LFAM file: " + std::to_string(bytes.size() - expected) + " trailing bytes at byte offset " +
                      std::to_string(expected));
  }
  return model;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_model_file(const std::filesystem::path& path, const CompressedModel& model) {
  write_file_atomic(path, serialize_model(model));
}

CompressedModel read_model_file(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

SizeReport model_size_report(const CompressedModel& model) {
  std::map<std::string, int> applications;
  if (auto it = model.metadata.find("graph"); it != model.metadata.end()) {
    std::istringstream is(it->second);
    std::string line;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      std::string tag, position, owner;
      if (ls >> tag >> position >> owner && tag == "share") ++applications[owner];
    }
  }

  SizeReport report;
  for (const auto& [key, text] : model.metadata) report.metadata_bytes += metadata_chunk_bytes(key.size(), text.size());
  std::size_t tensor_total = 0;
  for (const auto& t : model.tensors) {
    TensorSize s;
    s.name = t.name;
    s.encoding = t.encoding();
    s.shape = t.shape();
    s.elements = element_count(s.shape);
    s.kept = s.elements;
    if (const auto* sp = std::get_if<SparseI8>(&t.payload)) {
      s.kept = 0;
      for (auto k : sp->keep) s.kept += k;
    }
    s.payload_bytes = payload_bytes(s.encoding, s.elements, s.kept);
    s.chunk_bytes = tensor_chunk_bytes(s.name.size(), s.shape.size(), s.payload_bytes);
    const auto dot = s.name.find('.');
    if (dot != std::string::npos) {
      if (auto it = applications.find(s.name.substr(0, dot)); it != applications.end()) s.applications = it->second;
    }
    report.baseline_bytes += 4 * s.elements * static_cast<std::size_t>(s.applications);
    tensor_total += s.chunk_bytes;
    report.tensors.push_back(std::move(s));
  }
  const std::size_t chunks = model.metadata.size() + model.tensors.size();
  report.file_bytes = kHeaderBytes + kTableEntryBytes * chunks + report.metadata_bytes + tensor_total;
  report.compression_ratio =
      report.file_bytes ? static_cast<double>(report.baseline_bytes) / static_cast<double>(report.file_bytes) : 0.0;
  return report;
}

std::string format_size_report(const SizeReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "tensor" << std::setw(11) << "encoding" << std::setw(12) << "shape"
     << std::right << std::setw(8) << "kept" << std::setw(10) << "bytes" << std::setw(6) << "apps" << "\n";
  for (const auto& t : report.tensors) {
    os << std::left << std::setw(24) << t.name << std::setw(11) << to_string(t.encoding) << std::setw(12)
       << shape_to_string(t.shape) << std::right << std::setw(8) << t.kept << std::setw(10) << t.chunk_bytes
       << std::setw(6) << t.applications << "\n";
  }
  os << "metadata_bytes=" << report.metadata_bytes << "\n";
  os << "file_bytes=" << report.file_bytes << "\n";
  os << "baseline_bytes=" << report.baseline_bytes << "\n";
  os << "compression_ratio=" << std::fixed << std::setprecision(4) << report.compression_ratio << "\n";
  return os.str();
}

}  // namespace lfam
