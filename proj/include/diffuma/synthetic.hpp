#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "diffuma/frames.hpp"
#include "diffuma/random.hpp"

// Synthetic clips with constant-velocity motion, standing in for real radar/reanalysis data.

namespace diffuma {

enum class Motif { DriftingStripes, BouncingBlob, AdvectedNoise };

inline Motif parse_motif(std::string_view name) {
  if (name == "drifting-stripes") return Motif::DriftingStripes;
  if (name == "bouncing-blob") return Motif::BouncingBlob;
  if (name == "advected-noise") return Motif::AdvectedNoise;
  throw ConfigError("unknown motif '" + std::string(name) +
                    "' (expected drifting-stripes, bouncing-blob or advected-noise)");
}

inline std::string motif_name(Motif m) {
  switch (m) {
    case Motif::DriftingStripes: return "drifting-stripes";
    case Motif::BouncingBlob: return "bouncing-blob";
    case Motif::AdvectedNoise: return "advected-noise";
  }
  return "unknown";
}

struct SyntheticSpec {
  std::size_t n_samples = 8;
  std::size_t frames = 10;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t t_in = 5;
  Motif motif = Motif::BouncingBlob;
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 16 || width < 16) throw ConfigError("synthetic frames must be at least 16x16");
    if (n_samples == 0) throw ConfigError("samples must be positive");
    if (t_in == 0 || t_in >= frames) throw ConfigError("t_in must be < frames");
  }
};

namespace detail {

/// Gaussian blob reflecting off walls placed 3 sigma inside the frame.
inline void bouncing_blob(float* out, std::size_t frames, std::size_t h, std::size_t w, Rng& rng) {
  const double sigma = rng.uniform(1.5, 2.5) * static_cast<double>(std::min(h, w)) / 32.0;
  const double margin = 3.0 * sigma;
  const double lo_y = margin, hi_y = static_cast<double>(h - 1) - margin;
  const double lo_x = margin, hi_x = static_cast<double>(w - 1) - margin;
  double y = rng.uniform(lo_y, hi_y), x = rng.uniform(lo_x, hi_x);
  const double speed = rng.uniform(1.0, 2.0) * static_cast<double>(std::min(h, w)) / 32.0;
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double vy = speed * std::sin(angle), vx = speed * std::cos(angle);
  auto reflect = [](double& p, double& v, double lo, double hi) {
    p += v;
    // Repeated folding handles steps longer than the box.
    for (int guard = 0; guard < 8 && (p < lo || p > hi); ++guard) {
      if (p < lo) p = 2.0 * lo - p;
      if (p > hi) p = 2.0 * hi - p;
      v = -v;
    }
  };
  for (std::size_t t = 0; t < frames; ++t) {
    if (t > 0) {
      reflect(y, vy, lo_y, hi_y);
      reflect(x, vx, lo_x, hi_x);
    }
    float* f = out + t * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double dy = static_cast<double>(i) - y, dx = static_cast<double>(j) - x;
        f[i * w + j] = static_cast<float>(std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)));
      }
  }
}

/// Periodic stripes shifted circularly by round(v t) columns per frame.
inline void drifting_stripes(float* out, std::size_t frames, std::size_t h, std::size_t w, Rng& rng) {
  const double k = static_cast<double>(rng.uniform_int(1, 4));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double tilt = rng.uniform(-0.15, 0.15);
  double v = rng.uniform(0.5, 2.5);
  if (rng.uniform() < 0.5) v = -v;
  std::vector<float> base(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double arg = 2.0 * std::numbers::pi * k * static_cast<double>(j) / static_cast<double>(w) +
                         tilt * static_cast<double>(i) + phase;
      base[i * w + j] = static_cast<float>(0.5 + 0.5 * std::sin(arg));
    }
  const auto wi = static_cast<std::int64_t>(w);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto shift = static_cast<std::int64_t>(std::lround(v * static_cast<double>(t)));
    float* f = out + t * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const auto src = ((static_cast<std::int64_t>(j) - shift) % wi + wi) % wi;
        f[i * w + j] = base[i * w + static_cast<std::size_t>(src)];
      }
  }
}

/// Smooth periodic random field translated at constant (sub-pixel) velocity.
inline void advected_noise(float* out, std::size_t frames, std::size_t h, std::size_t w, Rng& rng) {
  struct Mode {
    double ky, kx, amp, phase;
  };
  std::vector<Mode> modes(6);
  double total = 0.0;
  for (auto& m : modes) {
    m.ky = 2.0 * std::numbers::pi * static_cast<double>(rng.uniform_int(0, 3)) / static_cast<double>(h);
    m.kx = 2.0 * std::numbers::pi * static_cast<double>(rng.uniform_int(1, 3)) / static_cast<double>(w);
    m.amp = rng.uniform(0.3, 1.0);
    m.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    total += m.amp;
  }
  const double vy = rng.uniform(-1.5, 1.5), vx = rng.uniform(-1.5, 1.5);
  for (std::size_t t = 0; t < frames; ++t) {
    float* f = out + t * h * w;
    const double oy = vy * static_cast<double>(t), ox = vx * static_cast<double>(t);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double s = 0.0;
        for (const auto& m : modes)
          s += m.amp * std::cos(m.ky * (static_cast<double>(i) - oy) + m.kx * (static_cast<double>(j) - ox) + m.phase);
        f[i * w + j] = static_cast<float>(0.5 + 0.5 * s / total);
      }
  }
}

}  // namespace detail

/// [n_samples, frames, 1, H, W] in [0, 1]; sample s draws from Rng(seed, s).
inline FrameSequence<float> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t per = spec.frames * spec.height * spec.width;
  std::vector<float> data(spec.n_samples * per);
  for (std::size_t s = 0; s < spec.n_samples; ++s) {
    Rng rng(spec.seed, s);
    float* out = data.data() + s * per;
    switch (spec.motif) {
      case Motif::BouncingBlob: detail::bouncing_blob(out, spec.frames, spec.height, spec.width, rng); break;
      case Motif::DriftingStripes: detail::drifting_stripes(out, spec.frames, spec.height, spec.width, rng); break;
      case Motif::AdvectedNoise: detail::advected_noise(out, spec.frames, spec.height, spec.width, rng); break;
    }
  }
  auto tensor = Tensor<float>::from_data({spec.n_samples, spec.frames, 1, spec.height, spec.width}, std::move(data));
  return {tensor, spec.t_in, spec.frames - spec.t_in};
}

}  // namespace diffuma
