#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "diffuma/frames.hpp"

namespace diffuma {

template <typename T>
double mse(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("mse: size mismatch");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <typename T>
double mae(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("mae: size mismatch");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc / static_cast<double>(a.size());
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("mse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return mse<T>(a.data(), b.data());
}

template <typename T>
double mae(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("mae: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return mae<T>(a.data(), b.data());
}

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    total += (g[i] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  for (auto& v : g) v /= total;
  return g;
}

/// Mean SSIM over all fully contained windows of one H x W frame.
template <typename T>
double ssim_frame(std::span<const T> a, std::span<const T> b, std::size_t h, std::size_t w,
                  const SsimOptions& opt = {}) {
  if (a.size() != h * w || b.size() != h * w) throw DimensionError("ssim: frame size mismatch");
  const std::size_t k = opt.window;
  if (k == 0 || h < k || w < k) {
    throw DimensionError("ssim: frame " + std::to_string(h) + "x" + std::to_string(w) +
                         " is smaller than the " + std::to_string(k) + "x" + std::to_string(k) +
                         " window; pass a smaller SsimOptions::window");
  }
  const auto g = gaussian_taps(k, opt.sigma);
  const double c1 = (opt.k1 * opt.dynamic_range) * (opt.k1 * opt.dynamic_range);
  const double c2 = (opt.k2 * opt.dynamic_range) * (opt.k2 * opt.dynamic_range);
  const std::size_t oh = h - k + 1, ow = w - k + 1;

  // Separable filtering: horizontal pass into [h, ow], vertical pass into [oh, ow].
  auto filter = [&](auto value) {
    std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < k; ++q) s += g[q] * value(i * w + j + q);
        rows[i * ow + j] = s;
      }
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += g[p] * rows[(i + p) * ow + j];
        out[i * ow + j] = s;
      }
    return out;
  };
  auto x = [&](std::size_t i) { return static_cast<double>(a[i]); };
  auto y = [&](std::size_t i) { return static_cast<double>(b[i]); };
  const auto mx = filter(x), my = filter(y);
  const auto sxx = filter([&](std::size_t i) { return x(i) * x(i); });
  const auto syy = filter([&](std::size_t i) { return y(i) * y(i); });
  const auto sxy = filter([&](std::size_t i) { return x(i) * y(i); });

  double total = 0.0;
  for (std::size_t i = 0; i < oh * ow; ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
    total += num / den;
  }
  return total / static_cast<double>(oh * ow);
}

/// Mean SSIM over every H x W frame of two tensors with matching shapes [..., H, W].
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
  if (a.shape() != b.shape()) throw DimensionError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.ndim() < 2) throw DimensionError("ssim: need at least [H, W]");
  const std::size_t h = a.dim(a.ndim() - 2), w = a.dim(a.ndim() - 1);
  const std::size_t frames = a.numel() / (h * w);
  double total = 0.0;
  for (std::size_t f = 0; f < frames; ++f)
    total += ssim_frame<T>(a.data().subspan(f * h * w, h * w), b.data().subspan(f * h * w, h * w), h, w, opt);
  return total / static_cast<double>(frames);
}

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  double ssim = 0.0;
  std::vector<double> frame_mse, frame_mae, frame_ssim;  // one entry per predicted frame index
};

/// Aggregate and per-horizon metrics for predictions vs targets, both [B,T,C,H,W]. Only the
/// first `horizon` frames are scored (0 = all).
template <typename T>
MetricReport evaluate_metrics(const Tensor<T>& pred, const Tensor<T>& target, std::size_t horizon = 0,
                              const SsimOptions& opt = {}) {
  if (pred.shape() != target.shape() || pred.ndim() != 5)
    throw DimensionError("evaluate: expected matching [B,T,C,H,W] tensors");
  const std::size_t b = pred.dim(0), t = pred.dim(1), c = pred.dim(2), h = pred.dim(3), w = pred.dim(4);
  if (horizon == 0) horizon = t;
  if (horizon > t)
    throw DimensionError("evaluate: horizon " + std::to_string(horizon) + " exceeds " + std::to_string(t) + " frames");
  MetricReport r;
  const std::size_t plane = h * w, fs = c * plane;
  for (std::size_t f = 0; f < horizon; ++f) {
    double se = 0.0, ae = 0.0, ss = 0.0;
    for (std::size_t s = 0; s < b; ++s) {
      const auto pa = pred.data().subspan((s * t + f) * fs, fs);
      const auto pb = target.data().subspan((s * t + f) * fs, fs);
      se += mse<T>(pa, pb);
      ae += mae<T>(pa, pb);
      for (std::size_t ch = 0; ch < c; ++ch)
        ss += ssim_frame<T>(pa.subspan(ch * plane, plane), pb.subspan(ch * plane, plane), h, w, opt);
    }
    r.frame_mse.push_back(se / static_cast<double>(b));
    r.frame_mae.push_back(ae / static_cast<double>(b));
    r.frame_ssim.push_back(ss / static_cast<double>(b * c));
  }
  for (std::size_t f = 0; f < horizon; ++f) {
    r.mse += r.frame_mse[f];
    r.mae += r.frame_mae[f];
    r.ssim += r.frame_ssim[f];
  }
  r.mse /= static_cast<double>(horizon);
  r.mae /= static_cast<double>(horizon);
  r.ssim /= static_cast<double>(horizon);
  return r;
}

}  // namespace diffuma
