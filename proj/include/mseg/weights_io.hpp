#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unordered_map>
#include <vector>

#include "mseg/errors.hpp"
#include "mseg/model.hpp"

namespace mseg {

// Container layout (all integers little-endian):
//   "MSEG" | u32 version | u32 spec length | spec fields | u32 block count |
//   per block: u16 name length, name, u8 rank, u32 dims..., float32 payload
inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr char kWeightsMagic[4] = {'M', 'S', 'E', 'G'};
inline const std::string kOptSuffix = ".opt";

enum class WeightsErrorKind {
  io,
  bad_magic,
  unsupported_version,
  truncated,
  bad_spec,
  shape_mismatch,
  missing_block,
  unexpected_block,
  trailing_data,
};

inline const char* to_string(WeightsErrorKind k) {
  switch (k) {
    case WeightsErrorKind::io: return "io";
    case WeightsErrorKind::bad_magic: return "bad_magic";
    case WeightsErrorKind::unsupported_version: return "unsupported_version";
    case WeightsErrorKind::truncated: return "truncated";
    case WeightsErrorKind::bad_spec: return "bad_spec";
    case WeightsErrorKind::shape_mismatch: return "shape_mismatch";
    case WeightsErrorKind::missing_block: return "missing_block";
    case WeightsErrorKind::unexpected_block: return "unexpected_block";
    case WeightsErrorKind::trailing_data: return "trailing_data";
  }
  return "unknown";
}

class WeightsError : public DataError {
 public:
  WeightsError(WeightsErrorKind kind, std::string block, const std::string& detail)
      : DataError(std::string("weights file error [") + to_string(kind) + "]" +
                  (block.empty() ? "" : " in block '" + block + "'") + ": " + detail),
        kind_(kind),
        block_(std::move(block)) {}

  WeightsErrorKind kind() const { return kind_; }
  const std::string& block() const { return block_; }

 private:
  WeightsErrorKind kind_;
  std::string block_;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  void set_context(std::string block) { block_ = std::move(block); }
  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw WeightsError(WeightsErrorKind::truncated, block_,
                         "unexpected end of file at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
  std::string block_;
};

inline void write_spec(ByteWriter& w, const ArchitectureSpec& s) {
  ByteWriter body;
  body.u8(static_cast<std::uint8_t>(s.family));
  body.u32(static_cast<std::uint32_t>(s.in_channels));
  body.u32(static_cast<std::uint32_t>(s.input_size));
  body.u32(static_cast<std::uint32_t>(s.num_classes));
  body.u32(static_cast<std::uint32_t>(s.widths.size()));
  for (int v : s.widths) body.u32(static_cast<std::uint32_t>(v));
  body.u32(static_cast<std::uint32_t>(s.res_blocks));
  body.f64(s.dropout_rate);
  body.f64(s.residual_scaling);
  body.f64(s.leaky_slope);
  body.f64(s.elu_alpha);
  body.u8(s.skip_connections ? 1 : 0);
  body.u64(s.seed);
  w.u32(static_cast<std::uint32_t>(body.buffer().size()));
  w.bytes(body.buffer().data(), body.buffer().size());
}

inline ArchitectureSpec read_spec(ByteReader& r) {
  r.set_context("<spec>");
  const std::uint32_t len = r.u32();
  const std::size_t start = r.position();
  ArchitectureSpec s;
  const std::uint8_t fam = r.u8();
  if (fam > 1) throw WeightsError(WeightsErrorKind::bad_spec, "<spec>", "unknown family");
  s.family = static_cast<Family>(fam);
  s.in_channels = static_cast<int>(r.u32());
  s.input_size = static_cast<int>(r.u32());
  s.num_classes = static_cast<int>(r.u32());
  const std::uint32_t stages = r.u32();
  if (stages == 0 || stages > 16) {
    throw WeightsError(WeightsErrorKind::bad_spec, "<spec>", "implausible stage count");
  }
  s.widths.resize(stages);
  for (auto& v : s.widths) {
    const std::uint32_t w = r.u32();
    if (w > 4096) throw WeightsError(WeightsErrorKind::bad_spec, "<spec>", "implausible width");
    v = static_cast<int>(w);
  }
  s.res_blocks = static_cast<int>(r.u32());
  s.dropout_rate = r.f64();
  s.residual_scaling = r.f64();
  s.leaky_slope = r.f64();
  s.elu_alpha = r.f64();
  s.skip_connections = r.u8() != 0;
  s.seed = r.u64();
  if (s.in_channels > 64 || s.num_classes > 255 || s.res_blocks > 64 || s.input_size > (1 << 20)) {
    throw WeightsError(WeightsErrorKind::bad_spec, "<spec>", "implausible architecture fields");
  }
  if (r.position() - start != len) {
    throw WeightsError(WeightsErrorKind::bad_spec, "<spec>", "spec length field mismatch");
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw WeightsError(WeightsErrorKind::bad_spec, "<spec>", e.what());
  }
  return s;
}

template <class T>
void write_block(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
  if (name.size() > 0xFFFF) throw InvalidArgument("block name too long: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t[i]));
}

}  // namespace detail

template <class T>
struct LoadedWeights {
  ModelParams<T> params;
  ArchitectureSpec spec;
  ModelParams<T> extra;  // ".opt" blocks of a training checkpoint
};

template <class T>
std::vector<std::uint8_t> serialize_weights(const ModelParams<T>& params,
                                            const ArchitectureSpec& spec,
                                            const ModelParams<T>* extra = nullptr) {
  detail::ByteWriter w;
  w.bytes(kWeightsMagic, 4);
  w.u32(kWeightsVersion);
  detail::write_spec(w, spec);
  const std::size_t n_extra = extra ? extra->size() : 0;
  w.u32(static_cast<std::uint32_t>(params.size() + n_extra));
  for (const auto& b : params) detail::write_block(w, b.name, b.value);
  if (extra) {
    for (const auto& b : *extra) {
      if (!b.name.ends_with(kOptSuffix)) {
        throw InvalidArgument("checkpoint block must end in .opt: " + b.name);
      }
      detail::write_block(w, b.name, b.value);
    }
  }
  return std::move(w.buffer());
}

// Parses and validates the whole buffer before returning anything.
template <class T>
LoadedWeights<T> deserialize_weights(const std::vector<std::uint8_t>& buf) {
  detail::ByteReader r(buf);
  r.set_context("<header>");
  if (buf.size() < 4 || std::memcmp(buf.data(), kWeightsMagic, 4) != 0) {
    throw WeightsError(WeightsErrorKind::bad_magic, "", "missing MSEG magic");
  }
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion) {
    throw WeightsError(WeightsErrorKind::unsupported_version, "",
                       "format version " + std::to_string(version) + " (supported: " +
                           std::to_string(kWeightsVersion) + ")");
  }
  LoadedWeights<T> out;
  out.spec = detail::read_spec(r);
  const auto expected_blocks = parameter_shapes(out.spec);
  std::unordered_map<std::string, std::size_t> expected;
  for (std::size_t i = 0; i < expected_blocks.size(); ++i) expected.emplace(expected_blocks[i].name, i);

  r.set_context("<header>");
  const std::uint32_t count = r.u32();
  std::vector<bool> seen(expected_blocks.size(), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("<block " + std::to_string(i) + ">");
    const std::string name = r.str(r.u16());
    r.set_context(name);
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_size(shape);
    if (r.remaining() / 4 < n) {
      throw WeightsError(WeightsErrorKind::truncated, name, "payload shorter than shape " +
                                                               shape_str(shape));
    }
    std::vector<T> data(n);
    for (auto& v : data) v = static_cast<T>(r.f32());

    if (name.ends_with(kOptSuffix)) {
      out.extra.add(name, Tensor<T>(shape, std::move(data)));
      continue;
    }
    const auto it = expected.find(name);
    if (it == expected.end()) {
      throw WeightsError(WeightsErrorKind::unexpected_block, name, "not part of the architecture");
    }
    const std::size_t idx = it->second;
    if (expected_blocks[idx].shape != shape) {
      throw WeightsError(WeightsErrorKind::shape_mismatch, name,
                         "stored shape " + shape_str(shape) + ", architecture expects " +
                             shape_str(expected_blocks[idx].shape));
    }
    if (seen[idx]) throw WeightsError(WeightsErrorKind::unexpected_block, name, "duplicate block");
    seen[idx] = true;
    if (idx != out.params.size()) {
      throw WeightsError(WeightsErrorKind::unexpected_block, name, "block out of order");
    }
    out.params.add(name, Tensor<T>(shape, std::move(data)));
  }
  for (std::size_t i = 0; i < expected_blocks.size(); ++i) {
    if (!seen[i]) {
      throw WeightsError(WeightsErrorKind::missing_block, expected_blocks[i].name, "not in file");
    }
  }
  if (r.remaining() != 0) {
    throw WeightsError(WeightsErrorKind::trailing_data, "", std::to_string(r.remaining()) +
                                                                " unexpected bytes after last block");
  }
  return out;
}

template <class T>
void save_weights(const ModelParams<T>& params, const ArchitectureSpec& spec,
                  const std::filesystem::path& path, const ModelParams<T>* extra = nullptr) {
  const auto bytes = serialize_weights(params, spec, extra);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WeightsError(WeightsErrorKind::io, "", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WeightsError(WeightsErrorKind::io, "", "write failed: " + path.string());
}

template <class T>
LoadedWeights<T> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightsError(WeightsErrorKind::io, "", "cannot open " + path.string());
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
  return deserialize_weights<T>(buf);
}

}  // namespace mseg
