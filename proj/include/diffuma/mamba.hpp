#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "diffuma/frames.hpp"
#include "diffuma/nn.hpp"

// Temporal backbone: per-frame spatial encoder, stacked bidirectional selective-scan blocks with
// gated fusion, and a transposed-conv spatial decoder.

namespace diffuma {

struct MambaConfig {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t t_in = 5;
  std::size_t t_out = 5;
  std::size_t d_model = 64;
  std::size_t d_state = 16;
  std::size_t n_layers = 4;
  std::size_t conv_kernel = 3;
  std::size_t enc_channels1 = 16;
  std::size_t enc_channels2 = 32;
  bool residual = true;
  bool pre_norm = true;  // layer norm on the scan-branch input; the gate and residual see raw Z

  static constexpr std::size_t downsample = 4;

  void validate() const {
    if (height % downsample != 0 || width % downsample != 0 || height == 0 || width == 0) {
      throw ConfigError("spatial dims " + std::to_string(height) + "x" + std::to_string(width) +
                        " must be positive and divisible by the encoder downsampling factor " +
                        std::to_string(downsample));
    }
    if (conv_kernel % 2 == 0) throw ConfigError("temporal conv kernel must be odd");
    if (d_model == 0 || d_state == 0 || channels == 0 || enc_channels1 == 0 || enc_channels2 == 0)
      throw ConfigError("model dimensions must be positive");
    if (t_in == 0 || t_out == 0) throw ConfigError("t_in and t_out must be positive");
  }

  std::size_t latent_h() const { return height / downsample; }
  std::size_t latent_w() const { return width / downsample; }
  std::size_t grid_features() const { return enc_channels2 * latent_h() * latent_w(); }
};

/// Z^(l): [B,T,D] per-frame features after block `layer_index` (0 = encoder output).
template <typename T>
struct LatentSequence {
  Tensor<T> tensor;
  std::size_t layer_index = 0;
};

enum class ScanDirection { forward, backward };

/// Selection and state parameters for one scan direction.
template <typename T>
struct DirectionalSsm {
  Tensor<T> conv_kernel;  // [D,1,k] depthwise temporal kernel
  Tensor<T> conv_bias;    // [D]
  Tensor<T> a_log;        // [D,N], A = -exp(a_log)
  Linear<T> delta_proj;   // D -> D, softplus applied afterwards
  Linear<T> b_proj;       // D -> N
  Linear<T> c_proj;       // D -> N

  std::size_t d_model() const { return a_log.dim(0); }
  std::size_t d_state() const { return a_log.dim(1); }

  static DirectionalSsm make(ParameterSet<T>& params, const std::string& name, std::size_t d,
                             std::size_t n, std::size_t k, Rng& rng) {
    DirectionalSsm s;
    s.conv_kernel = params.add(name + ".conv.weight",
                               uniform_tensor<T>({d, 1, k}, std::sqrt(3.0 / static_cast<double>(k)), rng));
    s.conv_bias = params.add(name + ".conv.bias", Tensor<T>::zeros({d}));
    std::vector<T> alog(d * n);
    for (auto& v : alog) v = static_cast<T>(std::log(rng.uniform(0.5, 8.0)));
    s.a_log = params.add(name + ".a_log", Tensor<T>::from_data({d, n}, std::move(alog)));
    s.delta_proj = Linear<T>::make(params, name + ".delta_proj", d, d, rng, true, 0.1);
    // softplus(bias) log-uniform in [1e-3, 1e-1]
    auto bias = s.delta_proj.bias.mutable_data();
    for (auto& v : bias) {
      const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    s.b_proj = Linear<T>::make(params, name + ".b_proj", d, n, rng, false);
    s.c_proj = Linear<T>::make(params, name + ".c_proj", d, n, rng, false);
    return s;
  }
};

template <typename T>
struct SsmBlockParams {
  DirectionalSsm<T> forward;
  DirectionalSsm<T> backward;
  Linear<T> gate;  // D -> D, SiLU applied afterwards
  Tensor<T> norm_gamma, norm_beta;  // [D]; undefined without pre-norm

  static SsmBlockParams make(ParameterSet<T>& params, const std::string& name,
                             const MambaConfig& cfg, Rng& rng) {
    SsmBlockParams p;
    if (cfg.pre_norm) {
      p.norm_gamma = params.add(name + ".norm.gamma", Tensor<T>::full({cfg.d_model}, T(1)));
      p.norm_beta = params.add(name + ".norm.beta", Tensor<T>::zeros({cfg.d_model}));
    }
    p.forward = DirectionalSsm<T>::make(params, name + ".fwd", cfg.d_model, cfg.d_state,
                                        cfg.conv_kernel, rng);
    p.backward = DirectionalSsm<T>::make(params, name + ".bwd", cfg.d_model, cfg.d_state,
                                         cfg.conv_kernel, rng);
    p.gate = Linear<T>::make(params, name + ".gate", cfg.d_model, cfg.d_model, rng, true, 0.5);
    return p;
  }
};

// ---------------------------------------------------------------------------------------------
// Discretization and scan kernels

/// Discretized step matrices, laid out [..., D, N].
template <typename T>
struct DiscreteSsm {
  Shape shape;
  std::vector<T> a_bar;
  std::vector<T> b_bar;
};

/// a_log [D,N]; delta [..., D] (> 0); b [..., N]. A_bar = exp(delta*A) with A = -exp(a_log),
/// B_bar = delta*B.
template <typename T>
DiscreteSsm<T> discretize(const Tensor<T>& a_log, const Tensor<T>& delta, const Tensor<T>& b) {
  if (a_log.ndim() != 2 || delta.ndim() < 1 || b.ndim() != delta.ndim()) {
    throw DimensionError("discretize: expected a_log [D,N], delta [...,D], b [...,N]");
  }
  const std::size_t d = a_log.dim(0), n = a_log.dim(1);
  if (delta.shape().back() != d || b.shape().back() != n) {
    throw DimensionError("discretize: delta/b trailing dims must be D=" + std::to_string(d) +
                         ", N=" + std::to_string(n));
  }
  const std::size_t steps = delta.numel() / std::max<std::size_t>(d, 1);
  if (b.numel() / std::max<std::size_t>(n, 1) != steps)
    throw DimensionError("discretize: delta and b have different leading shapes");
  DiscreteSsm<T> out;
  out.shape = delta.shape();
  out.shape.push_back(n);
  out.a_bar.resize(steps * d * n);
  out.b_bar.resize(steps * d * n);
  for (std::size_t s = 0; s < steps; ++s)
    for (std::size_t i = 0; i < d; ++i) {
      const T dl = delta[s * d + i];
      if (!(dl > T(0))) throw NumericalError("discretize: step size delta must be positive");
      for (std::size_t j = 0; j < n; ++j) {
        const T a = -std::exp(a_log[i * n + j]);
        out.a_bar[(s * d + i) * n + j] = std::exp(dl * a);
        out.b_bar[(s * d + i) * n + j] = dl * b[s * n + j];
      }
    }
  return out;
}

/// Runs h_t = a_bar_t * h_{t-1} + b_bar_t * u_t, y_t = sum_n c_t h_t over t = 0..steps-1 with
/// h_{-1} = 0, for `batch` independent sequences. Layouts: a_bar/b_bar [B,T,D,N], c [B,T,N],
/// u [B,T,D]. When `states` is non-null it receives every h_t ([B,T,D,N]).
template <typename T>
std::vector<T> scan_discretized(std::span<const T> a_bar, std::span<const T> b_bar,
                                std::span<const T> c, std::span<const T> u, std::size_t batch,
                                std::size_t steps, std::size_t d, std::size_t n,
                                std::vector<T>* states = nullptr) {
  std::vector<T> y(batch * steps * d, T(0));
  if (states) states->assign(batch * steps * d * n, T(0));
  std::vector<T> h(d * n);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t bt = b * steps + t;
      const T* ct = &c[bt * n];
      for (std::size_t i = 0; i < d; ++i) {
        const T ui = u[bt * d + i];
        const T* ab = &a_bar[(bt * d + i) * n];
        const T* bb = &b_bar[(bt * d + i) * n];
        T* hi = &h[i * n];
        T acc = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          hi[j] = ab[j] * hi[j] + bb[j] * ui;
          acc += ct[j] * hi[j];
        }
        y[bt * d + i] = acc;
        if (states) std::copy_n(hi, n, states->data() + (bt * d + i) * n);
      }
    }
  }
  return y;
}

/// Differentiable selective scan. u, delta [B,T,D]; a [D,N] (negative); b, c [B,T,N].
/// Output [B,T,D]. Saves A_bar and every state for the reverse sweep.
template <typename T>
Tensor<T> ssm_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a,
                   const Tensor<T>& b, const Tensor<T>& c) {
  if (u.ndim() != 3 || delta.shape() != u.shape() || a.ndim() != 2 || b.ndim() != 3 ||
      c.shape() != b.shape() || a.dim(0) != u.dim(2) || b.dim(2) != a.dim(1) ||
      b.dim(0) != u.dim(0) || b.dim(1) != u.dim(1)) {
    throw DimensionError("ssm_scan: incompatible shapes u" + to_string(u.shape()) + " delta" +
                         to_string(delta.shape()) + " A" + to_string(a.shape()) + " B" +
                         to_string(b.shape()) + " C" + to_string(c.shape()));
  }
  const std::size_t nb = u.dim(0), nt = u.dim(1), d = u.dim(2), n = a.dim(1);
  auto a_bar = std::make_shared<std::vector<T>>(nb * nt * d * n);
  std::vector<T> b_bar(nb * nt * d * n);
  for (std::size_t bt = 0; bt < nb * nt; ++bt)
    for (std::size_t i = 0; i < d; ++i) {
      const T dl = delta[bt * d + i];
      for (std::size_t j = 0; j < n; ++j) {
        (*a_bar)[(bt * d + i) * n + j] = std::exp(dl * a[i * n + j]);
        b_bar[(bt * d + i) * n + j] = dl * b[bt * n + j];
      }
    }
  auto states = std::make_shared<std::vector<T>>();
  auto y = scan_discretized<T>(*a_bar, b_bar, c.data(), u.data(), nb, nt, d, n, states.get());

  auto un = u.node(), dn = delta.node(), an = a.node(), bn = b.node(), cn = c.node();
  return detail::make_result<T>(
      "ssm_scan", u.shape(), std::move(y), {un, dn, an, bn, cn},
      [=](const std::vector<T>& gy) {
        T* gu = un->requires_grad ? un->grad_buffer().data() : nullptr;
        T* gd = dn->requires_grad ? dn->grad_buffer().data() : nullptr;
        T* ga = an->requires_grad ? an->grad_buffer().data() : nullptr;
        T* gb = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
        T* gc = cn->requires_grad ? cn->grad_buffer().data() : nullptr;
        const auto& h = *states;
        const auto& ab = *a_bar;
        std::vector<T> carry(d * n);
        for (std::size_t bi = 0; bi < nb; ++bi) {
          std::fill(carry.begin(), carry.end(), T(0));
          for (std::size_t t = nt; t-- > 0;) {
            const std::size_t bt = bi * nt + t;
            for (std::size_t i = 0; i < d; ++i) {
              const T g = gy[bt * d + i];
              const T dl = dn->data[bt * d + i];
              const T ui = un->data[bt * d + i];
              T g_delta = T(0), g_u = T(0);
              for (std::size_t j = 0; j < n; ++j) {
                const std::size_t k = (bt * d + i) * n + j;
                const T bj = bn->data[bt * n + j];
                const T dh = g * cn->data[bt * n + j] + carry[i * n + j];
                if (gc) gc[bt * n + j] += g * h[k];
                const T h_prev = t > 0 ? h[k - d * n] : T(0);
                const T d_abar = dh * h_prev * ab[k];  // d/d(delta*A) of A_bar*h_prev
                g_delta += d_abar * an->data[i * n + j] + dh * bj * ui;
                if (ga) ga[i * n + j] += d_abar * dl;
                if (gb) gb[bt * n + j] += dh * dl * ui;
                g_u += dh * dl * bj;
                carry[i * n + j] = dh * ab[k];
              }
              if (gd) gd[bt * d + i] += g_delta;
              if (gu) gu[bt * d + i] += g_u;
            }
          }
        }
      });
}

/// Selective SSM over z [B,T,D]: delta, B, C are per-step functions of z_t. The backward
/// direction is exactly reverse(forward(reverse(z))).
template <typename T>
LatentSequence<T> selective_scan(const LatentSequence<T>& z, const DirectionalSsm<T>& p,
                                 ScanDirection direction) {
  const auto& x = z.tensor;
  if (x.ndim() != 3 || x.dim(2) != p.d_model()) {
    throw DimensionError("selective_scan: expected [B,T," + std::to_string(p.d_model()) +
                         "], got " + to_string(x.shape()));
  }
  const bool rev = direction == ScanDirection::backward;
  auto zin = rev ? flip(x, 1) : x;
  auto delta = softplus(p.delta_proj(zin));
  auto bm = p.b_proj(zin);
  auto cm = p.c_proj(zin);
  auto a = neg(exp(p.a_log));
  auto y = ssm_scan(zin, delta, a, bm, cm);
  return {rev ? flip(y, 1) : y, z.layer_index};
}

/// Depthwise temporal conv over [B,T,D] with symmetric zero padding.
template <typename T>
Tensor<T> temporal_conv(const Tensor<T>& z, const Tensor<T>& kernel, const Tensor<T>& bias) {
  const std::size_t d = z.dim(2), k = kernel.dim(2);
  auto y = conv1d(transpose(z, 1, 2), kernel, (k - 1) / 2, d);
  y = add_channel_bias(y, bias);
  return transpose(y, 1, 2);
}

/// One bidirectional block: Z_l = (fwd_ssm(conv(N(Z))) + bwd_ssm(conv(N(Z)))) * SiLU(W_g Z) [+ Z],
/// where N is the block's layer norm when present and the identity otherwise.
template <typename T>
LatentSequence<T> mamba_block_forward(const LatentSequence<T>& z, const SsmBlockParams<T>& p,
                                      bool residual = true) {
  const auto& x = z.tensor;
  const auto xn = p.norm_gamma.defined() ? layer_norm(x, p.norm_gamma, p.norm_beta) : x;
  auto branch = [&](const DirectionalSsm<T>& s, ScanDirection dir) {
    LatentSequence<T> u{temporal_conv(xn, s.conv_kernel, s.conv_bias), z.layer_index};
    return selective_scan(u, s, dir).tensor;
  };
  auto o_bi = add(branch(p.forward, ScanDirection::forward),
                  branch(p.backward, ScanDirection::backward));
  auto gate = silu(p.gate(x));
  auto out = mul(o_bi, gate);
  if (residual) out = add(out, x);
  return {out, z.layer_index + 1};
}

// ---------------------------------------------------------------------------------------------
// Spatial encoder / decoder

template <typename T>
struct SpatialEncoder {
  Tensor<T> conv1, bias1, conv2, bias2;
  Linear<T> proj;

  static SpatialEncoder make(ParameterSet<T>& params, const MambaConfig& cfg, Rng& rng) {
    SpatialEncoder e;
    const double b1 = std::sqrt(3.0 / static_cast<double>(cfg.channels * 9));
    const double b2 = std::sqrt(3.0 / static_cast<double>(cfg.enc_channels1 * 9));
    e.conv1 = params.add("encoder.conv1.weight",
                         uniform_tensor<T>({cfg.enc_channels1, cfg.channels, 3, 3}, b1, rng));
    e.bias1 = params.add("encoder.conv1.bias", Tensor<T>::zeros({cfg.enc_channels1}));
    e.conv2 = params.add("encoder.conv2.weight",
                         uniform_tensor<T>({cfg.enc_channels2, cfg.enc_channels1, 3, 3}, b2, rng));
    e.bias2 = params.add("encoder.conv2.bias", Tensor<T>::zeros({cfg.enc_channels2}));
    e.proj = Linear<T>::make(params, "encoder.proj", cfg.grid_features(), cfg.d_model, rng, true,
                             std::sqrt(3.0));
    return e;
  }

  /// x [B,T,C,H,W] -> [B,T,D]; frames are encoded independently.
  LatentSequence<T> operator()(const Tensor<T>& x, const MambaConfig& cfg) const {
    if (x.ndim() != 5) throw DimensionError("spatial_encode: expected [B,T,C,H,W]");
    if (x.dim(3) % MambaConfig::downsample != 0 || x.dim(4) % MambaConfig::downsample != 0) {
      throw ConfigError("spatial_encode: H and W must be divisible by " +
                        std::to_string(MambaConfig::downsample) + ", got " +
                        to_string(x.shape()));
    }
    if (x.dim(2) != cfg.channels || x.dim(3) != cfg.height || x.dim(4) != cfg.width) {
      throw DimensionError("spatial_encode: frame shape " + to_string(x.shape()) +
                           " does not match configured (C,H,W)");
    }
    const std::size_t b = x.dim(0), t = x.dim(1);
    auto f = reshape(x, {b * t, x.dim(2), x.dim(3), x.dim(4)});
    f = silu(add_channel_bias(conv2d(f, conv1, {2, 2}, {1, 1}), bias1));
    f = silu(add_channel_bias(conv2d(f, conv2, {2, 2}, {1, 1}), bias2));
    auto z = proj(reshape(f, {b * t, cfg.grid_features()}));
    return {reshape(z, {b, t, cfg.d_model}), 0};
  }
};

template <typename T>
struct SpatialDecoder {
  Tensor<T> temporal;  // [t_out, t_in]; undefined when t_in == t_out
  Linear<T> proj;
  Tensor<T> deconv1, bias1, deconv2, bias2;

  static SpatialDecoder make(ParameterSet<T>& params, const MambaConfig& cfg, Rng& rng) {
    SpatialDecoder d;
    if (cfg.t_in != cfg.t_out) {
      d.temporal = params.add(
          "decoder.temporal",
          uniform_tensor<T>({cfg.t_out, cfg.t_in}, 1.0 / std::sqrt(static_cast<double>(cfg.t_in)), rng));
    }
    d.proj = Linear<T>::make(params, "decoder.proj", cfg.d_model, cfg.grid_features(), rng, true,
                             std::sqrt(3.0));
    const double b1 = std::sqrt(3.0 / static_cast<double>(cfg.enc_channels2 * 4));
    const double b2 = std::sqrt(3.0 / static_cast<double>(cfg.enc_channels1 * 4));
    d.deconv1 = params.add("decoder.deconv1.weight",
                           uniform_tensor<T>({cfg.enc_channels2, cfg.enc_channels1, 4, 4}, b1, rng));
    d.bias1 = params.add("decoder.deconv1.bias", Tensor<T>::zeros({cfg.enc_channels1}));
    d.deconv2 = params.add("decoder.deconv2.weight",
                           uniform_tensor<T>({cfg.enc_channels1, cfg.channels, 4, 4}, b2, rng));
    d.bias2 = params.add("decoder.deconv2.bias", Tensor<T>::zeros({cfg.channels}));
    return d;
  }

  /// Z^(L) [B,T,D] -> prediction [B,t_out,C,H,W].
  FrameSequence<T> operator()(const LatentSequence<T>& z, const MambaConfig& cfg) const {
    auto x = z.tensor;
    if (x.ndim() != 3 || x.dim(2) != cfg.d_model)
      throw DimensionError("spatial_decode: expected [B,T," + std::to_string(cfg.d_model) + "]");
    const std::size_t b = x.dim(0);
    if (temporal.defined()) {
      if (x.dim(1) != cfg.t_in)
        throw DimensionError("spatial_decode: latent has " + std::to_string(x.dim(1)) +
                             " steps, temporal map expects " + std::to_string(cfg.t_in));
      // [t_out,t_in] x [t_in, B*D] along the time axis.
      auto zt = reshape(transpose(x, 0, 1), {cfg.t_in, b * cfg.d_model});
      x = transpose(reshape(matmul(temporal, zt), {cfg.t_out, b, cfg.d_model}), 0, 1);
    } else if (x.dim(1) != cfg.t_out) {
      throw DimensionError("spatial_decode: latent has " + std::to_string(x.dim(1)) +
                           " steps, expected t_out=" + std::to_string(cfg.t_out));
    }
    const std::size_t t = cfg.t_out;
    auto f = silu(proj(reshape(x, {b * t, cfg.d_model})));
    f = reshape(f, {b * t, cfg.enc_channels2, cfg.latent_h(), cfg.latent_w()});
    f = silu(add_channel_bias(conv_transpose2d(f, deconv1, {2, 2}, {1, 1}), bias1));
    f = add_channel_bias(conv_transpose2d(f, deconv2, {2, 2}, {1, 1}), bias2);
    return {reshape(f, {b, t, cfg.channels, cfg.height, cfg.width}), cfg.t_in, cfg.t_out};
  }
};

/// Encoder, L bidirectional blocks, decoder.
template <typename T>
class MambaPath {
 public:
  struct Output {
    FrameSequence<T> prediction;  // Y_hat_mamba
    LatentSequence<T> latent;     // Z^(L)
  };

  MambaPath() = default;
  MambaPath(const MambaConfig& cfg, ParameterSet<T>& params, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    encoder_ = SpatialEncoder<T>::make(params, cfg_, rng);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l)
      blocks_.push_back(SsmBlockParams<T>::make(params, "mamba.block" + std::to_string(l), cfg_, rng));
    decoder_ = SpatialDecoder<T>::make(params, cfg_, rng);
  }

  const MambaConfig& config() const { return cfg_; }
  const SpatialEncoder<T>& encoder() const { return encoder_; }
  const SpatialDecoder<T>& decoder() const { return decoder_; }
  const std::vector<SsmBlockParams<T>>& blocks() const { return blocks_; }

  LatentSequence<T> encode(const Tensor<T>& x) const { return encoder_(x, cfg_); }

  LatentSequence<T> temporal(LatentSequence<T> z) const {
    for (const auto& block : blocks_) z = mamba_block_forward(z, block, cfg_.residual);
    return z;
  }

  FrameSequence<T> decode(const LatentSequence<T>& z) const { return decoder_(z, cfg_); }

  Output forward(const Tensor<T>& x) const {
    auto latent = temporal(encode(x));
    return {decode(latent), latent};
  }

 private:
  MambaConfig cfg_;
  SpatialEncoder<T> encoder_;
  std::vector<SsmBlockParams<T>> blocks_;
  SpatialDecoder<T> decoder_;
};

}  // namespace diffuma
