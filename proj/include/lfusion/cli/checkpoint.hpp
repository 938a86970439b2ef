#pragma once

// Binary checkpoints. Layout (all integers little-endian):
//   "LFCK" | u32 version | u32 tensor count |
//   per tensor: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 payload
// Parameters come first, then optimizer moments named "<param>.m" and
// "<param>.v", then two reserved tensors: "__step" (step split into 24-bit
// halves so both are exact in f32) and "__config" (config text, one byte
// per element).

#include <bit>
#include <iterator>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfusion/diffcore/optim.hpp"
#include "lfusion/fusenet/layers.hpp"

namespace lfusion {


inline constexpr char kCheckpointMagic[4] = {'L', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class UnsupportedVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Checkpoint and config describe different models.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<NamedTensor> params;
  std::vector<std::vector<float>> m, v;  // parallel to params; empty when no optimizer state
  std::uint64_t step = 0;
  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class U>
  void le(U x) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  void f32(float f) { le(std::bit_cast<std::uint32_t>(f)); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> b) : buf_(std::move(b)) {}
  void need(std::size_t n, const std::string& what) const {
    if (pos_ + n > buf_.size())
      throw TruncatedError("checkpoint truncated while reading " + what + " (needed " + std::to_string(n) +
                           " bytes at offset " + std::to_string(pos_) + ", file has " + std::to_string(buf_.size()) + ")");
  }
  template <class U>
  U le(const std::string& what) {
    need(sizeof(U), what);
    U x = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      x |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return x;
  }
  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Shape& shape, const std::vector<float>& data) {
  if (name.size() > 0xffff) throw CheckpointError("tensor name too long: " + name.substr(0, 32) + "...");
  if (shape.size() > 0xff) throw CheckpointError("tensor rank too large: " + name);
  if (shape_numel(shape) != data.size()) throw CheckpointError("tensor " + name + ": shape does not match payload");
  w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.raw(name.data(), name.size());
  w.le<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) {
    if (d > 0xffffffffULL) throw CheckpointError("tensor dimension too large: " + name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
  for (float f : data) w.f32(f);
}

inline NamedTensor read_tensor(ByteReader& r, std::size_t index) {
  const std::string at = "tensor " + std::to_string(index);
  NamedTensor t;
  const auto len = r.le<std::uint16_t>(at + " name length");
  t.name = r.str(len, at + " name");
  const auto rank = r.le<std::uint8_t>(t.name + " rank");
  for (std::size_t i = 0; i < rank; ++i) t.shape.push_back(r.le<std::uint32_t>(t.name + " dims"));
  const std::size_t n = rank ? shape_numel(t.shape) : 0;
  r.need(n * 4, t.name + " payload (" + std::to_string(n) + " elements)");
  t.data.resize(n);
  for (auto& f : t.data) f = std::bit_cast<float>(r.le<std::uint32_t>(t.name));
  return t;
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& c) {
  if (!c.m.empty() && (c.m.size() != c.params.size() || c.v.size() != c.params.size()))
    throw CheckpointError("optimizer state does not match parameter list");
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.le<std::uint32_t>(c.version);
  const std::size_t count = c.params.size() * (c.m.empty() ? 1 : 3) + 2;
  w.le<std::uint32_t>(static_cast<std::uint32_t>(count));
  for (const auto& p : c.params) detail::write_tensor(w, p.name, p.shape, p.data);
  if (!c.m.empty()) {
    for (std::size_t i = 0; i < c.params.size(); ++i)
      detail::write_tensor(w, c.params[i].name + ".m", c.params[i].shape, c.m[i]);
    for (std::size_t i = 0; i < c.params.size(); ++i)
      detail::write_tensor(w, c.params[i].name + ".v", c.params[i].shape, c.v[i]);
  }
  if (c.step >= (std::uint64_t{1} << 48)) throw CheckpointError("step counter too large to store");
  detail::write_tensor(w, "__step", {2},
                       {static_cast<float>(c.step & 0xffffff), static_cast<float>(c.step >> 24)});
  std::vector<float> text(c.config_text.begin(), c.config_text.end());
  for (std::size_t i = 0; i < text.size(); ++i) text[i] = static_cast<unsigned char>(c.config_text[i]);
  if (text.empty()) {
    detail::write_tensor(w, "__config", {1}, {0.0f});
  } else {
    detail::write_tensor(w, "__config", {text.size()}, text);
  }
  return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  const auto magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw BadMagicError("not a checkpoint: magic is '" + magic + "', expected 'LFCK'");
  Checkpoint c;
  c.version = r.le<std::uint32_t>("version");
  if (c.version != kCheckpointVersion)
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(c.version) + " (this build reads " +
                                  std::to_string(kCheckpointVersion) + ")");
  const auto count = r.le<std::uint32_t>("tensor count");
  std::vector<NamedTensor> all;
  for (std::uint32_t i = 0; i < count; ++i) all.push_back(detail::read_tensor(r, i));
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes after " + std::to_string(count) + " tensors");

  std::map<std::string, std::size_t> index;
  for (auto& t : all) {
    if (t.name == "__step") {
      if (t.data.size() != 2) throw CheckpointError("__step must hold 2 values");
      c.step = static_cast<std::uint64_t>(t.data[0]) | (static_cast<std::uint64_t>(t.data[1]) << 24);
    } else if (t.name == "__config") {
      for (float f : t.data)
        if (f != 0.0f) c.config_text.push_back(static_cast<char>(static_cast<unsigned char>(f)));
    } else if (t.name.starts_with("__")) {
      throw CheckpointError("unknown reserved tensor " + t.name);
    } else {
      index[t.name] = c.params.size();
      c.params.push_back(std::move(t));
    }
  }
  // Split moments out of the parameter list.
  std::vector<NamedTensor> params;
  std::map<std::string, std::vector<float>> m, v;
  for (auto& t : c.params) {
    auto base_of = [&](const char* suffix) -> std::string {
      if (t.name.size() > 2 && t.name.ends_with(suffix)) {
        auto base = t.name.substr(0, t.name.size() - 2);
        if (index.count(base)) return base;
      }
      return {};
    };
    if (auto b = base_of(".m"); !b.empty()) {
      m[b] = std::move(t.data);
    } else if (auto b2 = base_of(".v"); !b2.empty()) {
      v[b2] = std::move(t.data);
    } else {
      params.push_back(std::move(t));
    }
  }
  c.params = std::move(params);
  if (!m.empty() || !v.empty()) {
    for (const auto& p : c.params) {
      auto im = m.find(p.name), iv = v.find(p.name);
      if (im == m.end() || iv == v.end()) throw CheckpointError("optimizer state missing for " + p.name);
      if (im->second.size() != p.data.size() || iv->second.size() != p.data.size())
        throw CheckpointError("optimizer state size differs for " + p.name);
      c.m.push_back(std::move(im->second));
      c.v.push_back(std::move(iv->second));
    }
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

/// Snapshot of a parameter registry and (optionally) its optimizer state.
inline Checkpoint make_checkpoint(const ParamSet<float>& ps, const OptimizerState* opt, const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  for (const auto& [name, t] : ps.named()) c.params.push_back({name, t.shape(), t.values()});
  if (opt) {
    c.m = opt->m;
    c.v = opt->v;
    c.step = opt->step;
  }
  return c;
}

/// Writes checkpoint parameters into `ps` in place (and moments into `opt`
/// when both are present). Names and shapes must match exactly.
inline void restore_checkpoint(const Checkpoint& c, ParamSet<float>& ps, OptimizerState* opt = nullptr) {
  const auto& named = ps.named();
  if (named.size() != c.params.size())
    throw CheckpointMismatchError("checkpoint has " + std::to_string(c.params.size()) + " parameters, model has " +
                                  std::to_string(named.size()));
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, t] = named[i];
    const auto& src = c.params[i];
    if (src.name != name || src.shape != t.shape())
      throw CheckpointMismatchError("checkpoint parameter " + src.name + " " + shape_str(src.shape) +
                                    " does not match model parameter " + name + " " + shape_str(t.shape()));
    auto dst = t;
    std::copy(src.data.begin(), src.data.end(), dst.data().begin());
  }
  if (opt && !c.m.empty()) {
    opt->m = c.m;
    opt->v = c.v;
    opt->step = c.step;
  }
}

}  // namespace lfusion
