#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "diffuma/model.hpp"

namespace diffuma {

// ---------------------------------------------------------------------------------------------
// Loss terms

/// Mean over all elements of (eps - eps_hat)^2.
template <typename T>
Tensor<T> diffusion_loss(const Tensor<T>& eps, const Tensor<T>& eps_hat) {
  detail::require_same_shape("diffusion_loss", eps, eps_hat);
  return mean(square(sub(eps, eps_hat)));
}

/// Mean absolute difference; subgradient 0 where y_hat == y.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& y_hat, const Tensor<T>& y) {
  detail::require_same_shape("reconstruction_loss", y_hat, y);
  return mean(abs(sub(y_hat, y)));
}

template <typename T>
T total_loss(T l_diff, T l_recon, T lambda) {
  if (!(lambda >= T(0))) throw ConfigError("lambda must be non-negative");
  return l_diff + lambda * l_recon;
}

/// Graph version; evaluates to exactly total_loss(l_diff, l_recon, lambda) in T arithmetic.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_diff, const Tensor<T>& l_recon, T lambda) {
  if (!(lambda >= T(0))) throw ConfigError("lambda must be non-negative");
  return add(l_diff, scale(l_recon, lambda));
}

template <typename T>
struct LossReport {
  std::uint64_t step = 0;
  T l_diff = 0;
  T l_recon = 0;
  T lambda = 0;
  T l_total = 0;
  double lr = 0.0;
};

// ---------------------------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are stored in parameter registration order.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  void restore(std::uint64_t step, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  /// One update using each parameter's accumulated gradient (absent gradient = zeros).
  void step(ParameterSet<T>& params, double lr) {
    const auto& entries = params.entries();
    if (m_.empty()) {
      for (const auto& [_, t] : entries) {
        m_.emplace_back(t.numel(), T(0));
        v_.emplace_back(t.numel(), T(0));
      }
    }
    if (m_.size() != entries.size()) throw ConfigError("optimizer state does not match parameter count");
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& [name, t] = entries[k];
      if (m_[k].size() != t.numel()) throw ConfigError("optimizer moment shape mismatch for '" + name + "'");
      for (const T g : t.grad())
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + name + "'");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t k = 0; k < entries.size(); ++k) {
      auto t = entries[k].second;
      if (!t.has_grad()) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
          m_[k][i] = b1 * m_[k][i];
          v_[k][i] = b2 * v_[k][i];
        }
      } else {
        const auto g = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) {
          m_[k][i] = b1 * m_[k][i] + (T(1) - b1) * g[i];
          v_[k][i] = b2 * v_[k][i] + (T(1) - b2) * g[i] * g[i];
        }
      }
      auto data = t.mutable_data();
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double mhat = static_cast<double>(m_[k][i]) / bc1;
        const double vhat = static_cast<double>(v_[k][i]) / bc2;
        data[i] = static_cast<T>(static_cast<double>(data[i]) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

template <typename T>
void adam_step(ParameterSet<T>& params, Adam<T>& state, double lr) {
  state.step(params, lr);
}

/// Rescales all gradients so their global L2 norm is at most max_norm; returns the prior norm.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : params.entries())
    for (const T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [_, t] : params.entries()) {
      if (!t.has_grad()) continue;
      auto tt = t;
      for (auto& g : tt.mutable_grad()) g *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------------------------
// Training step

struct TrainSettings {
  double lr = 2e-3;
  std::size_t batch = 4;
  std::uint64_t steps = 500;
  std::uint64_t seed = 0;
  double lambda = 1.0;
  std::uint64_t warmup = 50;
  double clip_norm = 1.0;
  PathOptions paths;

  double lr_at(std::uint64_t step) const {
    if (warmup == 0 || step >= warmup) return lr;
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
};

/// Copies the listed samples of a [N,...] tensor into a new batch tensor.
template <typename T>
Tensor<T> gather_samples(const Tensor<T>& data, const std::vector<std::size_t>& indices) {
  Shape shape = data.shape();
  const std::size_t per = data.numel() / std::max<std::size_t>(shape[0], 1);
  shape[0] = indices.size();
  std::vector<T> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.dim(0)) throw DimensionError("gather_samples: index out of range");
    std::copy_n(data.values().begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor<T>::from_data(std::move(shape), std::move(out));
}

/// One end-to-end update: sample t ~ U{1..t_diff} and eps ~ N(0, I), run both paths, back-
/// propagate L_total = L_diff + lambda * L_recon, clip, and apply Adam.
template <typename T>
LossReport<T> train_step(const Tensor<T>& x, const Tensor<T>& y, DiffumaModel<T>& model,
                         Adam<T>& optimizer, Rng& rng, const TrainSettings& settings,
                         std::uint64_t step_index = 0) {
  const T lambda = static_cast<T>(settings.lambda);
  if (settings.paths.disable_diffusion && !(lambda > T(0)))
    throw ConfigError("disabling diffusion with lambda = 0 leaves nothing to train");
  const std::size_t b = x.dim(0);
  const std::size_t t_diff = model.schedule().steps();
  std::vector<std::size_t> t(b);
  for (auto& v : t) v = static_cast<std::size_t>(rng.uniform_int(1, t_diff));
  std::vector<T> noise(x.numel());
  for (auto& v : noise) v = static_cast<T>(rng.normal());
  auto eps = Tensor<T>::from_data(x.shape(), std::move(noise));

  auto r = model.train_forward(x, t, eps, settings.paths);
  auto l_diff = settings.paths.disable_diffusion ? Tensor<T>::scalar(T(0)) : diffusion_loss(eps, r.eps_hat);
  auto l_recon = reconstruction_loss(r.y_hat.tensor, y);
  auto l_total = total_loss(l_diff, l_recon, lambda);

  LossReport<T> report;
  report.step = step_index;
  report.l_diff = l_diff.item();
  report.l_recon = l_recon.item();
  report.lambda = lambda;
  report.l_total = l_total.item();
  report.lr = settings.lr_at(step_index);
  if (!std::isfinite(report.l_total)) {
    throw NumericalError("non-finite loss at step " + std::to_string(step_index) +
                         ": l_diff=" + std::to_string(report.l_diff) +
                         " l_recon=" + std::to_string(report.l_recon));
  }
  auto& params = model.parameters();
  params.zero_grad();
  backward(l_total);
  clip_grad_norm(params, settings.clip_norm);
  optimizer.step(params, report.lr);
  return report;
}

/// Deterministic batch schedule over a paired dataset: sample position p = step*batch + j maps
/// to permutation(seed, epoch = p / N)[p % N]. Stateless, so resuming at any step reproduces
/// the same batches.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step,
                                              std::size_t batch, std::size_t n_samples) {
  std::vector<std::size_t> out(batch);
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> perm;
  for (std::size_t j = 0; j < batch; ++j) {
    const std::uint64_t pos = step * batch + j;
    const std::uint64_t epoch = pos / n_samples;
    if (epoch != cached_epoch) {
      Rng rng(seed, 0x65706f6368ULL + epoch);
      perm = rng.permutation(n_samples);
      cached_epoch = epoch;
    }
    out[j] = perm[pos % n_samples];
  }
  return out;
}

/// Owns the optimizer and step counter for one training run over a paired dataset.
template <typename T>
class Trainer {
 public:
  Trainer(DiffumaModel<T>& model, FrameSequence<T> data, TrainSettings settings)
      : model_(model), data_(std::move(data)), settings_(settings),
        optimizer_(AdamConfig{settings.lr, 0.9, 0.999, 1e-8}) {
    if (!data_.is_paired()) throw DimensionError("training data must hold t_in + t_out frames");
    if (data_.t_in != model.config().mamba.t_in || data_.t_out != model.config().mamba.t_out)
      throw ConfigError("data (t_in, t_out) does not match the model configuration");
    if (settings_.batch == 0) throw ConfigError("batch size must be positive");
    inputs_ = data_.inputs().tensor.detach();
    targets_ = data_.targets().tensor.detach();
  }

  std::uint64_t step_count() const { return step_; }
  Adam<T>& optimizer() { return optimizer_; }
  const TrainSettings& settings() const { return settings_; }

  void restore(std::uint64_t step, Adam<T> optimizer) {
    step_ = step;
    optimizer_ = std::move(optimizer);
  }

  LossReport<T> step() {
    const auto idx = batch_indices(settings_.seed, step_, settings_.batch, inputs_.dim(0));
    Rng rng(settings_.seed, 0x7374657000ULL + step_);
    auto report = train_step(gather_samples(inputs_, idx), gather_samples(targets_, idx), model_,
                             optimizer_, rng, settings_, step_);
    ++step_;
    return report;
  }

 private:
  DiffumaModel<T>& model_;
  FrameSequence<T> data_;
  TrainSettings settings_;
  Adam<T> optimizer_;
  Tensor<T> inputs_, targets_;
  std::uint64_t step_ = 0;
};

}  // namespace diffuma
