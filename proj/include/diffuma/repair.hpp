#pragma once

#include <optional>
#include <vector>

#include "diffuma/frames.hpp"

namespace diffuma {

/// Replaces flagged frames by linear interpolation in time between the nearest good frames;
/// leading/trailing flagged frames copy the nearest good frame. `bad` holds either T flags
/// (shared by every sample) or B*T flags (sample-major).
template <typename T>
FrameSequence<T> repair_frames(const FrameSequence<T>& seq, const std::vector<bool>& bad) {
  const std::size_t b = seq.batch(), t = seq.frames(), fs = seq.frame_size();
  const bool shared = bad.size() == t;
  if (!shared && bad.size() != b * t)
    throw DimensionError("repair_frames: mask needs " + std::to_string(t) + " or " + std::to_string(b * t) + " flags");
  std::vector<T> out(seq.tensor.values());
  const auto& in = seq.tensor.values();
  for (std::size_t s = 0; s < b; ++s) {
    auto is_bad = [&](std::size_t f) { return bad[shared ? f : s * t + f]; };
    std::size_t lead = 0, trail = 0;
    while (lead < t && is_bad(lead)) ++lead;
    if (lead == t) throw ConfigError("repair_frames: every frame of sample " + std::to_string(s) + " is flagged");
    while (is_bad(t - 1 - trail)) ++trail;
    if (lead > 1 || trail > 1)
      throw ConfigError("repair_frames: consecutive flagged frames at a sequence boundary");
    for (std::size_t f = 0; f < t; ++f) {
      if (!is_bad(f)) continue;
      std::optional<std::size_t> prev, next;
      for (std::size_t k = f; k-- > 0;)
        if (!is_bad(k)) { prev = k; break; }
      for (std::size_t k = f + 1; k < t; ++k)
        if (!is_bad(k)) { next = k; break; }
      T* dst = out.data() + (s * t + f) * fs;
      if (!prev || !next) {
        const T* src = in.data() + (s * t + (prev ? *prev : *next)) * fs;
        std::copy(src, src + fs, dst);
        continue;
      }
      const T w = static_cast<T>(f - *prev) / static_cast<T>(*next - *prev);
      const T* a = in.data() + (s * t + *prev) * fs;
      const T* c = in.data() + (s * t + *next) * fs;
      for (std::size_t i = 0; i < fs; ++i) dst[i] = (T(1) - w) * a[i] + w * c[i];
    }
  }
  return {Tensor<T>::from_data(seq.tensor.shape(), std::move(out)), seq.t_in, seq.t_out};
}

}  // namespace diffuma
