#pragma once

#include <cstddef>
#include <vector>

#include "diffuma/diffusion.hpp"
#include "diffuma/mamba.hpp"

namespace diffuma {

struct ModelConfig {
  MambaConfig mamba;
  DiffusionConfig diffusion;

  /// Copies the shared frame geometry into both paths and validates them.
  void finalize() {
    diffusion.channels = mamba.channels;
    diffusion.height = mamba.height;
    diffusion.width = mamba.width;
    mamba.validate();
    diffusion.validate();
  }
};

/// Switches for the single-path ablations.
struct PathOptions {
  bool disable_diffusion = false;  // Y_hat = Y_hat_mamba, no denoising objective
  bool zero_context = false;       // c_context replaced by zeros
};

template <typename T>
struct ForwardResult {
  FrameSequence<T> y_mamba;
  LatentSequence<T> latent;
  Tensor<T> c_context;
  Tensor<T> delta_x;   // t = 0 residual over the input frames; undefined when diffusion is off
  Tensor<T> eps_hat;   // noise prediction on x_t; undefined outside training
  FrameSequence<T> y_hat;
};

/// Dual-path predictor: Mamba temporal path plus conditioned denoiser, fused at t = 0.
template <typename T>
class DiffumaModel {
 public:
  DiffumaModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.finalize();
    Rng rng(seed, 0x6d6f64656cULL);
    mamba_ = MambaPath<T>(cfg_.mamba, params_, rng);
    denoiser_ = Denoiser<T>(cfg_.diffusion, cfg_.mamba.d_model, params_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  const MambaPath<T>& mamba() const { return mamba_; }
  const Denoiser<T>& denoiser() const { return denoiser_; }
  const NoiseSchedule& schedule() const { return denoiser_.schedule(); }

  Tensor<T> context(const LatentSequence<T>& latent, const PathOptions& opt) const {
    if (opt.zero_context) return Tensor<T>::zeros({latent.tensor.dim(0), cfg_.diffusion.d_cond});
    return denoiser_.make_context(latent.tensor);
  }

  /// Inference: x [B,t_in,C,H,W] -> Y_hat [B,t_out,C,H,W].
  ForwardResult<T> predict(const Tensor<T>& x, const PathOptions& opt = {}) const {
    ForwardResult<T> r;
    auto m = mamba_.forward(x);
    r.y_mamba = m.prediction;
    r.latent = m.latent;
    if (opt.disable_diffusion) {
      r.y_hat = r.y_mamba;
      return r;
    }
    r.c_context = context(r.latent, opt);
    std::vector<std::size_t> zeros(x.dim(0), 0);
    r.delta_x = denoiser_.predict(x, zeros, r.c_context);
    r.y_hat = fuse_residual(r.y_mamba, r.delta_x);
    return r;
  }

  /// Training forward: noise prediction on x_t (timesteps t) and the fused prediction, computed
  /// in one denoiser pass over the stacked batch [x_t; x].
  ForwardResult<T> train_forward(const Tensor<T>& x, const std::vector<std::size_t>& t,
                                 const Tensor<T>& eps, const PathOptions& opt = {}) const {
    ForwardResult<T> r;
    auto m = mamba_.forward(x);
    r.y_mamba = m.prediction;
    r.latent = m.latent;
    if (opt.disable_diffusion) {
      r.y_hat = r.y_mamba;
      return r;
    }
    r.c_context = context(r.latent, opt);
    const std::size_t b = x.dim(0);
    auto x_t = add_noise(x, t, eps, schedule());
    std::vector<std::size_t> steps = t;
    steps.resize(2 * b, 0);
    auto c = add(denoiser_.time_embedding(steps), concat(std::vector<Tensor<T>>{r.c_context, r.c_context}, 0));
    auto out = denoiser_.predict(concat(std::vector<Tensor<T>>{x_t, x}, 0), c);
    r.eps_hat = slice(out, 0, 0, b);
    r.delta_x = slice(out, 0, b, 2 * b);
    r.y_hat = fuse_residual(r.y_mamba, r.delta_x);
    return r;
  }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
  MambaPath<T> mamba_;
  Denoiser<T> denoiser_;
};

}  // namespace diffuma
