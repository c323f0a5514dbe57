#pragma once

#include <cmath>
#include <cstddef>
#include <iostream>

#include "diffuma/ops.hpp"

namespace diffuma {

/// A [B,T,C,H,W] clip plus the history/horizon split it belongs to. A paired sequence holds
/// T = t_in + t_out frames (inputs then targets); input-only and target-only views hold t_in or
/// t_out frames respectively.
template <typename T>
struct FrameSequence {
  Tensor<T> tensor;
  std::size_t t_in = 0;
  std::size_t t_out = 0;

  std::size_t batch() const { return tensor.dim(0); }
  std::size_t frames() const { return tensor.dim(1); }
  std::size_t channels() const { return tensor.dim(2); }
  std::size_t height() const { return tensor.dim(3); }
  std::size_t width() const { return tensor.dim(4); }
  std::size_t frame_size() const { return channels() * height() * width(); }

  bool is_paired() const { return frames() == t_in + t_out; }

  /// First t_in frames of a paired sequence.
  FrameSequence inputs() const {
    require_paired();
    return {slice(tensor, 1, 0, t_in), t_in, t_out};
  }

  /// Last t_out frames of a paired sequence.
  FrameSequence targets() const {
    require_paired();
    return {slice(tensor, 1, t_in, t_in + t_out), t_in, t_out};
  }

  /// Samples [begin, end) along the batch axis.
  FrameSequence samples(std::size_t begin, std::size_t end) const {
    return {slice(tensor, 0, begin, end), t_in, t_out};
  }

  /// Shape and finiteness check; values outside [-0.5, 1.5] only produce a warning.
  void validate(std::ostream& warn = std::cerr) const {
    if (!tensor.defined() || tensor.ndim() != 5) {
      throw DimensionError("frame sequence must be 5-D [B,T,C,H,W], got " +
                           (tensor.defined() ? to_string(tensor.shape()) : std::string("undefined")));
    }
    const auto t = frames();
    if (t != t_in && t != t_out && t != t_in + t_out) {
      throw DimensionError("frame sequence has " + std::to_string(t) + " frames but t_in=" +
                           std::to_string(t_in) + ", t_out=" + std::to_string(t_out));
    }
    bool out_of_range = false;
    for (const T v : tensor.values()) {
      if (!std::isfinite(v)) throw NumericalError("frame sequence contains non-finite values");
      if (v < T(-0.5) || v > T(1.5)) out_of_range = true;
    }
    if (out_of_range) warn << "warning: frame values outside [-0.5, 1.5]\n";
  }

 private:
  void require_paired() const {
    if (!is_paired()) {
      throw DimensionError("expected a paired sequence with " + std::to_string(t_in + t_out) +
                           " frames, got " + std::to_string(frames()));
    }
  }
};

}  // namespace diffuma
