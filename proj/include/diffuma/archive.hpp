#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "diffuma/frames.hpp"
#include "diffuma/io.hpp"

// BTCW sequence archive:
//   "BTCW" | version u32 | B T C H W u32 | scalar tag u32 | t_in u32 | t_out u32 |
//   payload (row-major little-endian f32) | CRC-32 of payload u32

namespace diffuma {

inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint32_t kScalarF32 = 1;
inline constexpr std::size_t kArchiveHeaderSize = 40;

struct ArchiveHeader {
  std::uint32_t version = kArchiveVersion;
  std::uint32_t dims[5] = {0, 0, 0, 0, 0};
  std::uint32_t scalar_tag = kScalarF32;
  std::uint32_t t_in = 0;
  std::uint32_t t_out = 0;

  std::uint64_t elements() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  std::uint64_t file_size() const { return kArchiveHeaderSize + elements() * 4 + 4; }
};

/// Parses and validates the fixed header. Any inconsistency is a FormatError.
inline ArchiveHeader parse_archive_header(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (std::string(magic.begin(), magic.end()) != "BTCW") throw FormatError("not a BTCW archive (bad magic)");
  ArchiveHeader h;
  h.version = r.u32("version");
  if (h.version != kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(h.version));
  for (auto& d : h.dims) d = r.u32("dims");
  h.scalar_tag = r.u32("scalar tag");
  h.t_in = r.u32("t_in");
  h.t_out = r.u32("t_out");
  if (h.scalar_tag != kScalarF32) throw FormatError("unsupported scalar tag " + std::to_string(h.scalar_tag));
  for (auto d : h.dims)
    if (d == 0) throw FormatError("archive has a zero dimension");
  if (static_cast<std::uint64_t>(h.t_in) + h.t_out != h.dims[1]) {
    throw FormatError("archive t_in + t_out (" + std::to_string(h.t_in) + " + " + std::to_string(h.t_out) +
                      ") != T (" + std::to_string(h.dims[1]) + ")");
  }
  // Reject products that would overflow before anyone multiplies them out.
  std::uint64_t n = 1;
  for (auto d : h.dims) {
    if (n > (std::uint64_t{1} << 40) / d) throw FormatError("archive dimensions are implausibly large");
    n *= d;
  }
  return h;
}

inline std::vector<std::uint8_t> encode_archive(const FrameSequence<float>& seq) {
  const auto& t = seq.tensor;
  if (!t.defined() || t.ndim() != 5) throw DimensionError("archive needs a 5-D [B,T,C,H,W] tensor");
  if (seq.t_in + seq.t_out != t.dim(1))
    throw DimensionError("archive needs t_in + t_out == T, got " + std::to_string(seq.t_in) + " + " +
                         std::to_string(seq.t_out) + " vs " + std::to_string(t.dim(1)));
  io::ByteWriter w;
  w.raw("BTCW");
  w.u32(kArchiveVersion);
  for (std::size_t i = 0; i < 5; ++i) {
    if (t.dim(i) == 0 || t.dim(i) > 0xffffffffu) throw DimensionError("archive dimension out of range");
    w.u32(static_cast<std::uint32_t>(t.dim(i)));
  }
  w.u32(kScalarF32);
  w.u32(static_cast<std::uint32_t>(seq.t_in));
  w.u32(static_cast<std::uint32_t>(seq.t_out));
  const std::size_t payload_start = w.size();
  for (float v : t.values()) w.f32(v);
  const auto crc = io::crc32(w.view().subspan(payload_start));
  w.u32(crc);
  return w.take();
}

inline FrameSequence<float> decode_archive(std::span<const std::uint8_t> bytes) {
  const auto h = parse_archive_header(bytes);
  if (bytes.size() != h.file_size()) {
    throw FormatError("archive size " + std::to_string(bytes.size()) + " does not match header (expected " +
                      std::to_string(h.file_size()) + ")");
  }
  const auto payload = bytes.subspan(kArchiveHeaderSize, static_cast<std::size_t>(h.elements() * 4));
  io::ByteReader footer(bytes.subspan(kArchiveHeaderSize + payload.size()));
  if (io::crc32(payload) != footer.u32("checksum")) throw CorruptArchiveError("archive checksum mismatch");
  io::ByteReader r(payload);
  std::vector<float> data(static_cast<std::size_t>(h.elements()));
  for (auto& v : data) v = r.f32("payload");
  Shape shape{h.dims[0], h.dims[1], h.dims[2], h.dims[3], h.dims[4]};
  return {Tensor<float>::from_data(std::move(shape), std::move(data)), h.t_in, h.t_out};
}

inline void write_archive(const FrameSequence<float>& seq, const std::filesystem::path& path) {
  const auto bytes = encode_archive(seq);
  io::write_file_atomic(path, bytes);
}

/// Reads the header first and checks the on-disk size against it before allocating the payload.
inline FrameSequence<float> read_archive(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot read archive '" + path.string() + "': " + ec.message());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive '" + path.string() + "'");
  std::vector<std::uint8_t> head(std::min<std::uintmax_t>(size, kArchiveHeaderSize));
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  const auto h = parse_archive_header(head);
  if (size != h.file_size()) {
    throw FormatError("archive '" + path.string() + "' is " + std::to_string(size) +
                      " bytes but its header describes " + std::to_string(h.file_size()));
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  std::copy(head.begin(), head.end(), bytes.begin());
  in.read(reinterpret_cast<char*>(bytes.data() + head.size()), static_cast<std::streamsize>(size - head.size()));
  if (!in) throw IoError("short read on archive '" + path.string() + "'");
  return decode_archive(bytes);
}

}  // namespace diffuma
