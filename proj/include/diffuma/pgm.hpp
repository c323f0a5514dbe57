#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffuma/io.hpp"

namespace diffuma {

/// round(255 * clip(v, 0, 1)); NaN maps to 0.
inline std::uint8_t to_pixel(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(255.0 * v));
}

template <typename T>
std::vector<std::uint8_t> encode_pgm(std::span<const T> frame, std::size_t h, std::size_t w) {
  if (frame.size() != h * w) throw DimensionError("pgm: frame has " + std::to_string(frame.size()) + " values, expected " + std::to_string(h * w));
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + frame.size());
  for (const T v : frame) out.push_back(to_pixel(static_cast<double>(v)));
  return out;
}

template <typename T>
void write_pgm(const std::filesystem::path& path, std::span<const T> frame, std::size_t h, std::size_t w) {
  io::write_file_atomic(path, encode_pgm(frame, h, w));
}

struct PgmImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads the binary P5 variant with maxval 255 and no comments, as written above.
inline PgmImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError("pgm: expected P5 magic");
  PgmImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (token() != "255") throw FormatError("pgm: only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError("pgm: malformed header");
  }
  ++pos;
  if (bytes.size() - std::min(pos, bytes.size()) != img.width * img.height) throw FormatError("pgm: pixel count mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

}  // namespace diffuma
