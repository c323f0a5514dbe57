#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffuma/io.hpp"
#include "diffuma/training.hpp"

// DFMA checkpoint:
//   "DFMA" | version u32 | scalar tag u32 | config text | step u64 | parameter count u32 |
//   per parameter: name, ndim u32, dims u64..., raw scalars |
//   optimizer: lr beta1 beta2 eps f64, step u64, moment count u32, (m, v) raw scalars per parameter |
//   CRC-32 of all preceding bytes u32
// Strings are u64 length + bytes; all integers and scalars little-endian.

namespace diffuma {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr std::uint32_t scalar_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 1u : 2u;
}

template <typename T>
struct NamedBlob {
  std::string name;
  Shape shape;
  std::vector<T> data;
};

template <typename T>
struct CheckpointData {
  std::string config_text;
  std::uint64_t step = 0;
  std::vector<NamedBlob<T>> params;
  AdamConfig adam;
  std::uint64_t adam_step = 0;
  std::vector<std::vector<T>> m, v;
};

namespace detail {

template <typename T>
void put_scalars(io::ByteWriter& w, std::span<const T> values) {
  for (const T x : values) {
    if constexpr (std::is_same_v<T, float>) w.f32(x);
    else w.f64(x);
  }
}

template <typename T>
std::vector<T> get_scalars(io::ByteReader& r, std::size_t n, const char* what) {
  if (n > r.remaining() / sizeof(T)) throw FormatError(std::string("checkpoint truncated in ") + what);
  std::vector<T> out(n);
  for (auto& x : out) {
    if constexpr (std::is_same_v<T, float>) x = r.f32(what);
    else x = r.f64(what);
  }
  return out;
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParameterSet<T>& params, const Adam<T>& adam,
                                            std::uint64_t step, const std::string& config_text) {
  io::ByteWriter w;
  w.raw("DFMA");
  w.u32(kCheckpointVersion);
  w.u32(scalar_tag<T>());
  w.string(config_text);
  w.u64(step);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    w.string(name);
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) w.u64(d);
    detail::put_scalars<T>(w, t.data());
  }
  w.f64(adam.config().lr);
  w.f64(adam.config().beta1);
  w.f64(adam.config().beta2);
  w.f64(adam.config().eps);
  w.u64(adam.step_count());
  const auto& m = adam.first_moments();
  const auto& v = adam.second_moments();
  w.u32(static_cast<std::uint32_t>(m.size()));
  for (std::size_t k = 0; k < m.size(); ++k) {
    detail::put_scalars<T>(w, m[k]);
    detail::put_scalars<T>(w, v[k]);
  }
  w.u32(io::crc32(w.view()));
  return w.take();
}

template <typename T>
CheckpointData<T> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("checkpoint too short");
  io::ByteReader head(bytes);
  auto magic = head.bytes(4, "magic");
  if (std::string(magic.begin(), magic.end()) != "DFMA") throw FormatError("not a checkpoint (bad magic)");
  const auto body = bytes.first(bytes.size() - 4);
  io::ByteReader tail(bytes.subspan(bytes.size() - 4));
  if (io::crc32(body) != tail.u32("checksum")) throw CorruptArchiveError("checkpoint checksum mismatch");

  io::ByteReader r(body);
  r.bytes(4, "magic");
  if (const auto ver = r.u32("version"); ver != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(ver));
  if (r.u32("scalar tag") != scalar_tag<T>()) throw FormatError("checkpoint scalar type does not match");
  CheckpointData<T> c;
  c.config_text = r.string("config");
  c.step = r.u64("step");
  const auto n = r.u32("parameter count");
  for (std::uint32_t k = 0; k < n; ++k) {
    NamedBlob<T> blob;
    blob.name = r.string("parameter name");
    const auto ndim = r.u32("ndim");
    if (ndim > 8) throw FormatError("parameter '" + blob.name + "' has implausible rank");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.u64("dims");
      if (dim != 0 && count > r.remaining() / dim) throw FormatError("parameter '" + blob.name + "' larger than file");
      count *= dim;
      blob.shape.push_back(static_cast<std::size_t>(dim));
    }
    blob.data = detail::get_scalars<T>(r, static_cast<std::size_t>(count), "parameter data");
    c.params.push_back(std::move(blob));
  }
  c.adam.lr = r.f64("optimizer");
  c.adam.beta1 = r.f64("optimizer");
  c.adam.beta2 = r.f64("optimizer");
  c.adam.eps = r.f64("optimizer");
  c.adam_step = r.u64("optimizer step");
  const auto moments = r.u32("moment count");
  if (moments != 0 && moments != n) throw FormatError("optimizer moment count does not match parameters");
  for (std::uint32_t k = 0; k < moments; ++k) {
    c.m.push_back(detail::get_scalars<T>(r, c.params[k].data.size(), "first moment"));
    c.v.push_back(detail::get_scalars<T>(r, c.params[k].data.size(), "second moment"));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
  return c;
}

/// Copies stored parameters into a model's set (names and shapes must match one to one) and
/// returns the optimizer state.
template <typename T>
Adam<T> apply_checkpoint(const CheckpointData<T>& c, ParameterSet<T>& params) {
  const auto& entries = params.entries();
  if (entries.size() != c.params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(c.params.size()) + " parameters, model has " +
                      std::to_string(entries.size()));
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [name, t] = entries[k];
    if (c.params[k].name != name || c.params[k].shape != t.shape()) {
      throw FormatError("checkpoint parameter '" + c.params[k].name + "' " + to_string(c.params[k].shape) +
                        " does not match model parameter '" + name + "' " + to_string(t.shape()));
    }
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto t = entries[k].second;
    std::copy(c.params[k].data.begin(), c.params[k].data.end(), t.mutable_data().begin());
  }
  Adam<T> adam(c.adam);
  adam.restore(c.adam_step, c.m, c.v);
  return adam;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params, const Adam<T>& adam,
                     std::uint64_t step, const std::string& config_text) {
  io::write_file_atomic(path, encode_checkpoint(params, adam, step, config_text));
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(io::read_file(path));
}

}  // namespace diffuma
