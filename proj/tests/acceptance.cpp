// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <unistd.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diffuma/app.hpp"
#include "diffuma/gradcheck.hpp"

using namespace diffuma;
namespace fs = std::filesystem;
using T64 = Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int rc = app::run(args, o, e);
  if (out != nullptr) *out = o.str() + e.str();
  return rc;
}

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string c; std::getline(ss, c, sep);) out.push_back(c);
  return out;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

/// Mean SSIM of the last horizon block in an eval report.
double report_mean_ssim(const fs::path& report) {
  double v = std::nan("");
  for (const auto& l : lines_of(report))
    if (l.rfind("mean,", 0) == 0) v = std::stod(split(l)[3]);
  return v;
}

T64 weighted_sum(const T64& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, normal_tensor<double>(y.shape(), 1.0, rng)));
}

T64 randn(Shape s, Rng& rng, double scale = 1.0) { return normal_tensor<double>(std::move(s), scale, rng); }

void randomize(const T64& t, Rng& rng, double scale) {
  auto tt = t;
  for (auto& v : tt.mutable_data()) v = scale * rng.normal();
}

// ---------------------------------------------------------------------------------------------
// 1. gradient suite

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  struct Case {
    std::string name;
    std::vector<T64> inputs;
    GradCheckFn fn;
    double eps = 1e-4;
    std::size_t coords = 0;
  };
  std::vector<Case> ops;
  auto unary_case = [&](const char* name, auto op, double scale = 1.0) {
    ops.push_back({name, {randn({3, 5}, rng, scale)}, [op](auto& in) { return weighted_sum(op(in[0])); }});
  };
  ops.push_back({"add", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](auto& in) { return weighted_sum(add(in[0], in[1])); }});
  ops.push_back({"sub", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](auto& in) { return weighted_sum(sub(in[0], in[1])); }});
  ops.push_back({"mul", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](auto& in) { return weighted_sum(mul(in[0], in[1])); }});
  unary_case("scale", [](const T64& x) { return scale(x, -1.7); });
  unary_case("add_scalar", [](const T64& x) { return add_scalar(x, 0.3); });
  unary_case("neg", [](const T64& x) { return neg(x); });
  unary_case("exp", [](const T64& x) { return exp(x); });
  unary_case("square", [](const T64& x) { return square(x); });
  unary_case("abs", [](const T64& x) { return abs(x); });
  unary_case("sigmoid", [](const T64& x) { return sigmoid(x); }, 2.0);
  unary_case("silu", [](const T64& x) { return silu(x); }, 2.0);
  unary_case("softplus", [](const T64& x) { return softplus(x); }, 2.0);
  unary_case("softmax", [](const T64& x) { return softmax(x); }, 2.0);
  unary_case("reshape", [](const T64& x) { return reshape(x, {5, 3}); });
  unary_case("flip", [](const T64& x) { return flip(x, 1); });
  unary_case("slice", [](const T64& x) { return slice(x, 1, 1, 4); });
  unary_case("sum", [](const T64& x) { return sum(x); });
  unary_case("mean", [](const T64& x) { return mean(x); });
  ops.push_back({"permute", {randn({2, 3, 4}, rng)}, [](auto& in) { return weighted_sum(permute(in[0], {2, 0, 1})); }});
  ops.push_back({"transpose", {randn({2, 3, 4}, rng)}, [](auto& in) { return weighted_sum(transpose(in[0], 0, 2)); }});
  ops.push_back({"broadcast_to", {randn({1, 3}, rng)}, [](auto& in) { return weighted_sum(broadcast_to(in[0], {4, 3})); }});
  ops.push_back({"concat", {randn({2, 3}, rng), randn({2, 2}, rng)},
                 [](auto& in) { return weighted_sum(concat(std::vector<T64>{in[0], in[1]}, 1)); }});
  ops.push_back({"sum_axis", {randn({2, 3, 4}, rng)}, [](auto& in) { return weighted_sum(sum_axis(in[0], 1)); }});
  ops.push_back({"mean_axis", {randn({2, 3, 4}, rng)}, [](auto& in) { return weighted_sum(mean_axis(in[0], 2)); }});
  ops.push_back({"matmul", {randn({3, 4}, rng), randn({4, 5}, rng)}, [](auto& in) { return weighted_sum(matmul(in[0], in[1])); }});
  ops.push_back({"matmul_batched", {randn({2, 3, 4}, rng), randn({2, 4, 2}, rng)},
                 [](auto& in) { return weighted_sum(matmul(in[0], in[1])); }});
  ops.push_back({"layer_norm", {randn({4, 8}, rng), randn({8}, rng), randn({8}, rng)},
                 [](auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2])); }});
  ops.push_back({"linear", {randn({3, 5}, rng), randn({5, 4}, rng), randn({4}, rng)},
                 [](auto& in) { return weighted_sum(linear(in[0], in[1], in[2])); }});
  ops.push_back({"add_channel_bias", {randn({2, 3, 4, 4}, rng), randn({3}, rng)},
                 [](auto& in) { return weighted_sum(add_channel_bias(in[0], in[1])); }});
  ops.push_back({"conv2d", {randn({2, 2, 7, 6}, rng), randn({3, 2, 3, 3}, rng)},
                 [](auto& in) { return weighted_sum(conv2d(in[0], in[1], {2, 2}, {1, 1})); }});
  ops.push_back({"conv_transpose2d", {randn({2, 3, 4, 4}, rng), randn({3, 2, 4, 4}, rng)},
                 [](auto& in) { return weighted_sum(conv_transpose2d(in[0], in[1], {2, 2}, {1, 1})); }});
  ops.push_back({"conv1d_depthwise", {randn({2, 3, 7}, rng), randn({3, 1, 3}, rng)},
                 [](auto& in) { return weighted_sum(conv1d(in[0], in[1], 1, 3)); }});
  ops.push_back({"conv1d_dense", {randn({2, 2, 6}, rng), randn({3, 2, 3}, rng)},
                 [](auto& in) { return weighted_sum(conv1d(in[0], in[1], 0, 1)); }});
  ops.push_back({"temporal_conv", {randn({2, 5, 3}, rng), randn({3, 1, 3}, rng), randn({3}, rng)},
                 [](auto& in) { return weighted_sum(temporal_conv(in[0], in[1], in[2])); }});
  {
    const std::size_t nb = 2, nt = 5, d = 3, n = 2;
    std::vector<double> dl(nb * nt * d), a(d * n);
    for (auto& v : dl) v = rng.uniform(0.05, 1.0);
    for (auto& v : a) v = -rng.uniform(0.5, 4.0);
    ops.push_back({"ssm_scan",
                   {randn({nb, nt, d}, rng), T64::from_data({nb, nt, d}, dl), T64::from_data({d, n}, a),
                    randn({nb, nt, n}, rng), randn({nb, nt, n}, rng)},
                   [](auto& in) { return weighted_sum(ssm_scan(in[0], in[1], in[2], in[3], in[4])); },
                   1e-5});
  }
  ops.push_back({"patchify", {randn({2, 1, 8, 8}, rng)}, [](auto& in) { return weighted_sum(patchify(in[0], 4)); }});
  ops.push_back({"unpatchify", {randn({2, 4, 16}, rng)},
                 [](auto& in) { return weighted_sum(unpatchify(in[0], 4, 1, 8, 8)); }});
  ops.push_back({"modulate", {randn({2, 3, 4}, rng), randn({2, 4}, rng), randn({2, 4}, rng)},
                 [](auto& in) { return weighted_sum(modulate(in[0], in[1], in[2])); }});
  {
    const auto sched = NoiseSchedule::linear(50, 1e-3, 0.2);
    ops.push_back({"add_noise", {randn({2, 6}, rng), randn({2, 6}, rng)},
                   [sched](auto& in) { return weighted_sum(add_noise(in[0], {3, 41}, in[1], sched)); }});
  }
  ops.push_back({"diffusion_loss", {randn({3, 4}, rng), randn({3, 4}, rng)},
                 [](auto& in) { return diffusion_loss(in[0], in[1]); }});
  ops.push_back({"reconstruction_loss", {randn({3, 4}, rng), randn({3, 4}, rng)},
                 [](auto& in) { return reconstruction_loss(in[0], in[1]); }, 1e-6});

  double worst_op = 0.0;
  std::string worst_op_name;
  for (auto& c : ops) {
    const double e = check_gradients(c.fn, c.inputs, c.eps, c.coords);
    if (e >= worst_op) {
      worst_op = e;
      worst_op_name = c.name;
    }
  }

  // composite blocks in 64-bit
  std::vector<Case> blocks;
  std::vector<std::shared_ptr<void>> keep;  // block parameters outlive the closures
  {
    auto params = std::make_shared<ParameterSet<double>>();
    MambaConfig cfg;
    cfg.d_model = 4;
    cfg.d_state = 2;
    auto p = std::make_shared<SsmBlockParams<double>>(SsmBlockParams<double>::make(*params, "b", cfg, rng));
    for (auto* s : {&p->forward, &p->backward})
      for (auto& v : s->delta_proj.bias.mutable_data()) v = 0.3;
    std::vector<T64> in{randn({2, 4, 4}, rng)};
    for (const auto& [_, t] : params->entries()) in.push_back(t);
    blocks.push_back({"mamba_block", in, [p](auto& x) {
                        return weighted_sum(mamba_block_forward(LatentSequence<double>{x[0], 0}, *p, true).tensor);
                      }});
    keep.push_back(params);
  }
  {
    auto params = std::make_shared<ParameterSet<double>>();
    DiffusionConfig cfg;
    cfg.height = cfg.width = 8;
    cfg.dim = 8;
    cfg.n_heads = 2;
    cfg.d_cond = 6;
    auto b = std::make_shared<DitBlockParams<double>>(DitBlockParams<double>::make(*params, "b", cfg, rng));
    randomize(b->adaln.weight, rng, 0.3);
    randomize(b->adaln.bias, rng, 0.3);
    std::vector<T64> in{randn({2, 3, 8}, rng), randn({2, 6}, rng)};
    for (const auto& [_, t] : params->entries()) in.push_back(t);
    blocks.push_back({"dit_block", in, [b](auto& x) { return weighted_sum(dit_block_forward(x[0], x[1], *b)); }});
    blocks.push_back({"multi_head_attention", {in[0], b->qkv.weight, b->qkv.bias, b->attn_out.weight, b->attn_out.bias},
                      [b](auto& x) { return weighted_sum(multi_head_attention(x[0], b->qkv, b->attn_out, 2)); }});
    keep.push_back(params);
  }
  {
    ModelConfig cfg;
    cfg.mamba.height = cfg.mamba.width = 8;
    cfg.mamba.t_in = 3;
    cfg.mamba.t_out = 2;
    cfg.mamba.d_model = 8;
    cfg.mamba.d_state = 4;
    cfg.mamba.n_layers = 2;
    cfg.mamba.enc_channels1 = 2;
    cfg.mamba.enc_channels2 = 4;
    cfg.diffusion.dim = 8;
    cfg.diffusion.n_heads = 2;
    cfg.diffusion.n_blocks = 1;
    cfg.diffusion.d_cond = 8;
    cfg.diffusion.t_diff = 40;
    auto model = std::make_shared<DiffumaModel<double>>(cfg, 15);
    for (const auto& [name, t] : model->parameters().entries())
      if (name.rfind("dit.", 0) == 0) {
        auto tt = t;
        for (auto& v : tt.mutable_data())
          if (v == 0.0) v = 0.05 * rng.normal();
      }
    auto x = uniform_tensor<double>({2, 3, 1, 8, 8}, 0.5, rng);
    auto y = uniform_tensor<double>({2, 2, 1, 8, 8}, 0.5, rng);
    auto eps = randn(x.shape(), rng);
    std::vector<T64> in;
    for (const auto& [_, t] : model->parameters().entries()) in.push_back(t);
    blocks.push_back({"full_tiny_model", in,
                      [model, x, y, eps](auto&) {
                        auto r = model->train_forward(x, {3, 31}, eps);
                        return total_loss(diffusion_loss(eps, r.eps_hat), reconstruction_loss(r.y_hat.tensor, y), 1.0);
                      },
                      1e-5, 4});
    keep.push_back(model);
  }
  double worst_block = 0.0;
  std::string worst_block_name;
  for (auto& c : blocks) {
    const double e = check_gradients(c.fn, c.inputs, c.eps, c.coords);
    if (e >= worst_block) {
      worst_block = e;
      worst_block_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst_op < 1e-4 && worst_block < 1e-3 && secs < 120.0,
          fmt("%zu ops max rel %.2e (%s) < 1e-4; %zu blocks max rel %.2e (%s) < 1e-3; %.1f s < 120 s", ops.size(),
              worst_op, worst_op_name.c_str(), blocks.size(), worst_block, worst_block_name.c_str(), secs)};
}


// ---------------------------------------------------------------------------------------------
// 2. scan oracle

std::vector<double> unrolled_scan(const T64& u, const T64& delta, const T64& a, const T64& b, const T64& c) {
  const std::size_t nb = u.dim(0), nt = u.dim(1), d = u.dim(2), n = a.dim(1);
  std::vector<double> y(nb * nt * d, 0.0);
  for (std::size_t bi = 0; bi < nb; ++bi)
    for (std::size_t i = 0; i < d; ++i) {
      std::vector<double> h(n, 0.0);
      for (std::size_t t = 0; t < nt; ++t) {
        const std::size_t r = bi * nt + t;
        const double dl = delta[r * d + i];
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          h[j] = std::exp(dl * a[i * n + j]) * h[j] + dl * b[r * n + j] * u[r * d + i];
          acc += c[r * n + j] * h[j];
        }
        y[r * d + i] = acc;
      }
    }
  return y;
}

Outcome scan_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t nb = rng.uniform_int(1, 4), nt = rng.uniform_int(1, 32), d = rng.uniform_int(1, 16),
                      n = rng.uniform_int(1, 8);
    auto u = randn({nb, nt, d}, rng);
    auto delta = softplus(randn({nb, nt, d}, rng));
    auto a = neg(exp(randn({d, n}, rng)));
    auto b = randn({nb, nt, n}, rng), c = randn({nb, nt, n}, rng);
    const auto y = ssm_scan(u, delta, a, b, c);
    const auto ref = unrolled_scan(u, delta, a, b, c);
    double scale = 0.0;
    for (double v : ref) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(y[i] - ref[i]) / std::max(std::abs(ref[i]), 1e-9 * scale + 1e-300));
  }

  std::size_t mismatched = 0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t nb = rng.uniform_int(1, 4), nt = rng.uniform_int(1, 32), d = rng.uniform_int(1, 16),
                      n = rng.uniform_int(1, 8);
    ParameterSet<double> params;
    auto s = DirectionalSsm<double>::make(params, "s", d, n, 3, rng);
    const LatentSequence<double> z{randn({nb, nt, d}, rng), 0};
    const auto bwd = selective_scan(z, s, ScanDirection::backward).tensor;
    const auto dual = flip(selective_scan(LatentSequence<double>{flip(z.tensor, 1), 0}, s, ScanDirection::forward).tensor, 1);
    for (std::size_t i = 0; i < bwd.numel(); ++i) mismatched += bwd[i] != dual[i];
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && mismatched == 0 && secs < 60.0,
          fmt("1000 cases max rel %.2e < 1e-6; duality mismatches %zu over 100 cases; %.1f s < 60 s", worst,
              mismatched, secs)};
}

// ---------------------------------------------------------------------------------------------
// 3. diffusion statistics

Outcome diffusion_statistics() {
  const auto t0 = std::chrono::steady_clock::now();
  const DiffumaModel<float> model(ModelConfig{}, 0);
  const auto& sched = model.schedule();
  const std::size_t t_diff = sched.steps(), samples = 100000;
  bool ok = true;
  std::string detail;
  Rng rng(303);
  for (std::size_t t : {std::size_t{1}, t_diff / 2, t_diff}) {
    const auto x = T64::full({samples, 1}, 1.0);
    const auto eps = randn({samples, 1}, rng);
    const auto xt = add_noise(x, std::vector<std::size_t>(samples, t), eps, sched);
    double m = 0.0, v = 0.0;
    for (double s : xt.values()) m += s;
    m /= samples;
    for (double s : xt.values()) v += (s - m) * (s - m);
    v /= samples - 1;
    const double ab = sched.alpha_bar(t), mu = std::sqrt(ab), var = 1.0 - ab;
    // The mean is judged on the scale of the sample (signal or noise, whichever dominates).
    const double mean_err = std::abs(m - mu) / std::max(mu, std::sqrt(var));
    const double var_err = std::abs(v - var) / var;
    ok = ok && mean_err < 0.03 && var_err < 0.03;
    detail += fmt("t=%zu mean %.4f/%.4f (%.2f%%) var %.4f/%.4f (%.2f%%); ", t, m, mu, 100 * mean_err, v, var,
                  100 * var_err);
  }
  bool monotone = true;
  const auto& abar = sched.alpha_bars();
  for (std::size_t i = 1; i < abar.size(); ++i) monotone = monotone && abar[i] < abar[i - 1];
  const double secs = seconds_since(t0);
  return {ok && monotone && secs < 60.0,
          detail + fmt("alpha_bar strictly decreasing: %s; %.1f s < 60 s", monotone ? "yes" : "no", secs)};
}

// ---------------------------------------------------------------------------------------------
// 4. initialization identity

Outcome initialization_identity() {
  NoGradGuard g;
  ModelConfig cfg;
  const DiffumaModel<float> model(cfg, 404);
  const auto& m = model.config().mamba;
  Rng rng(404);
  const std::size_t b = 2;
  auto x = normal_tensor<float>({b, m.t_in, m.channels, m.height, m.width}, 0.3, rng);
  auto eps = normal_tensor<float>(x.shape(), 1.0, rng);
  std::vector<std::size_t> t(b);
  for (auto& v : t) v = rng.uniform_int(1, model.schedule().steps());
  const auto tr = model.train_forward(x, t, eps);
  std::size_t nonzero_eps = 0, nonzero_dx = 0, differing = 0;
  for (float v : tr.eps_hat.values()) nonzero_eps += v != 0.0f;
  const auto inf = model.predict(x);
  for (float v : inf.delta_x.values()) nonzero_dx += v != 0.0f;
  for (const auto* r : {&tr, &inf})
    for (std::size_t i = 0; i < r->y_hat.tensor.numel(); ++i)
      differing += std::bit_cast<std::uint32_t>(r->y_hat.tensor[i]) != std::bit_cast<std::uint32_t>(r->y_mamba.tensor[i]);
  return {nonzero_eps == 0 && nonzero_dx == 0 && differing == 0,
          fmt("nonzero eps_hat %zu/%zu; nonzero residual %zu/%zu; bitwise Y_hat != Y_mamba %zu", nonzero_eps,
              tr.eps_hat.numel(), nonzero_dx, inf.delta_x.numel(), differing)};
}

// ---------------------------------------------------------------------------------------------
// 5 and 7. overfit run and loss decomposition

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("diffuma_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string operator()(const std::string& name) const { return (dir / name).string(); }
};

/// Desk config: module defaults, only paths and the step budget set.
std::string write_desk_config(const Workspace& ws, const std::string& name, const std::string& train,
                              std::uint64_t steps, std::uint64_t seed = 0) {
  std::ofstream(ws(name + ".ini")) << "[data]\ntrain = " << train << "\n[train]\nsteps = " << steps
                                   << "\nseed = " << seed << "\ncheckpoint_every = " << steps
                                   << "\ncheckpoint_dir = " << ws(name) << "\n";
  return ws(name + ".ini");
}

struct OverfitRun {
  bool ran = false;
  std::string error;
  double secs = 0.0, first_total = 0.0, last_total = 0.0, ssim = 0.0;
  std::size_t rows = 0, exact_rows = 0;
};

const OverfitRun& overfit_run(const Workspace& ws) {
  static OverfitRun r;
  if (r.ran) return r;
  r.ran = true;
  std::string log;
  const auto t0 = std::chrono::steady_clock::now();
  if (cli({"gen-data", "--out", ws("overfit.btchw"), "--motif", "bouncing-blob", "--samples", "8", "--seed", "7"},
          &log) != 0) {
    r.error = "gen-data failed: " + log;
    return r;
  }
  const auto cfg = write_desk_config(ws, "overfit", ws("overfit.btchw"), 500);
  if (cli({"train", "--config", cfg}, &log) != 0) {
    r.error = "train failed: " + log;
    return r;
  }
  if (cli({"eval", "--checkpoint", ws("overfit/latest.dfma"), "--data", ws("overfit.btchw"), "--report",
           ws("overfit_eval.csv")},
          &log) != 0) {
    r.error = "eval failed: " + log;
    return r;
  }
  r.secs = seconds_since(t0);
  r.ssim = report_mean_ssim(ws("overfit_eval.csv"));

  const auto lines = lines_of(ws("overfit/metrics.csv"));
  std::vector<double> totals;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = split(lines[i]);
    const double l_diff = std::stod(c[1]), l_recon = std::stod(c[2]), l_total = std::stod(c[3]);
    ++r.rows;
    // lambda = 1 in the desk config; the logged float sum must reproduce exactly
    r.exact_rows += static_cast<float>(l_diff) + 1.0f * static_cast<float>(l_recon) == static_cast<float>(l_total);
    totals.push_back(l_total);
  }
  if (totals.size() >= 10) {
    r.first_total = totals.front();
    for (std::size_t i = totals.size() - 10; i < totals.size(); ++i) r.last_total += totals[i] / 10.0;
  }
  return r;
}

Outcome overfit(const Workspace& ws) {
  const auto& r = overfit_run(ws);
  if (!r.error.empty()) return {false, r.error};
  const double drop = 1.0 - r.last_total / r.first_total;
  return {drop >= 0.9 && r.ssim >= 0.95 && r.secs < 900.0,
          fmt("l_total %.4f -> %.4f (mean of last 10), drop %.1f%% >= 90%%; train-target SSIM %.4f >= 0.95; %.0f s < "
              "900 s",
              r.first_total, r.last_total, 100 * drop, r.ssim, r.secs)};
}

Outcome loss_decomposition(const Workspace& ws) {
  const auto& r = overfit_run(ws);
  if (!r.error.empty()) return {false, r.error};
  return {r.rows == 500 && r.exact_rows == r.rows,
          fmt("%zu/%zu logged rows satisfy l_total == l_diff + lambda*l_recon exactly (500 expected)", r.exact_rows,
              r.rows)};
}


/// Validation L_diff of the overfit checkpoint with and without c_context, on common (t, eps) draws.
Outcome conditioning_effectiveness(const Workspace& ws) {
  const auto& r = overfit_run(ws);
  if (!r.error.empty()) return {false, r.error};
  std::string log;
  if (cli({"gen-data", "--out", ws("validation.btchw"), "--motif", "bouncing-blob", "--samples", "8", "--seed", "8"},
          &log) != 0)
    return {false, "gen-data failed: " + log};
  const auto restored = app::detail::restore_model(ws("overfit/latest.dfma"), "");
  const auto& model = restored.model;
  const auto x = read_archive(ws("validation.btchw")).inputs().tensor;
  NoGradGuard g;
  double loss[2] = {0.0, 0.0};
  for (int v = 0; v < 2; ++v) {
    Rng rng(505);
    PathOptions paths;
    paths.zero_context = v == 1;
    for (int k = 0; k < 8; ++k) {
      std::vector<std::size_t> t(x.dim(0));
      for (auto& s : t) s = rng.uniform_int(1, model.schedule().steps());
      auto eps = normal_tensor<float>(x.shape(), 1.0, rng);
      loss[v] += diffusion_loss(eps, model.train_forward(x, t, eps, paths).eps_hat).item() / 8.0;
    }
  }
  return {loss[1] > loss[0], fmt("validation L_diff with c_context %.5f, zeroed %.5f (must increase)", loss[0], loss[1])};
}

// ---------------------------------------------------------------------------------------------
// 6. dual-path ordering

constexpr const char* kOrderingMotif = "advected-noise";

Outcome dual_path_ordering(const Workspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::string log;
    const auto all = ws(fmt("order%llu.btchw", static_cast<unsigned long long>(seed)));
    if (cli({"gen-data", "--out", all, "--motif", kOrderingMotif, "--samples", "64", "--seed",
             std::to_string(100 + seed)},
            &log) != 0)
      return {false, "gen-data failed: " + log};
    const auto data = read_archive(all);
    const auto train = ws(fmt("order%llu_train.btchw", static_cast<unsigned long long>(seed)));
    const auto test = ws(fmt("order%llu_test.btchw", static_cast<unsigned long long>(seed)));
    write_archive(data.samples(0, 32), train);
    write_archive(data.samples(32, 64), test);

    double score[2];
    for (int v = 0; v < 2; ++v) {
      const std::string name = fmt("order%llu_%s", static_cast<unsigned long long>(seed), v == 0 ? "full" : "mamba");
      const auto cfg = write_desk_config(ws, name, train, 500, seed);
      std::vector<std::string> args{"train", "--config", cfg};
      if (v == 1) args.push_back("--disable-diffusion");
      if (cli(args, &log) != 0) return {false, name + " train failed: " + log};
      args = {"eval", "--checkpoint", ws(name + "/latest.dfma"), "--data", test, "--report", ws(name + ".csv")};
      if (v == 1) args.push_back("--disable-diffusion");
      if (cli(args, &log) != 0) return {false, name + " eval failed: " + log};
      score[v] = report_mean_ssim(ws(name + ".csv"));
    }
    wins += score[0] >= score[1];
    detail += fmt("seed %llu %.4f vs %.4f; ", static_cast<unsigned long long>(seed), score[0], score[1]);
  }
  return {wins >= 4, fmt("%s held-out SSIM full vs --disable-diffusion: ", kOrderingMotif) + detail +
                         fmt("full wins %d/5 (need 4); %.0f s", wins, seconds_since(t0))};
}

// ---------------------------------------------------------------------------------------------
// 8. metric identities

/// SSIM straight from the windowed definition: explicit 2-D Gaussian weights, one window at a time.
double ssim_oracle(const std::vector<double>& x, const std::vector<double>& y, std::size_t h, std::size_t w) {
  const std::size_t k = 11;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> wt(k * k);
  double norm = 0.0;
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = 0; q < k; ++q) {
      const double dp = static_cast<double>(p) - 5.0, dq = static_cast<double>(q) - 5.0;
      norm += wt[p * k + q] = std::exp(-(dp * dp + dq * dq) / (2 * sigma * sigma));
    }
  for (auto& v : wt) v /= norm;
  double total = 0.0;
  for (std::size_t i = 0; i + k <= h; ++i)
    for (std::size_t j = 0; j + k <= w; ++j) {
      double mx = 0, my = 0;
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t q = 0; q < k; ++q) {
          mx += wt[p * k + q] * x[(i + p) * w + j + q];
          my += wt[p * k + q] * y[(i + p) * w + j + q];
        }
      double vx = 0, vy = 0, cov = 0;
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t q = 0; q < k; ++q) {
          const double dx = x[(i + p) * w + j + q] - mx, dy = y[(i + p) * w + j + q] - my;
          vx += wt[p * k + q] * dx * dx;
          vy += wt[p * k + q] * dy * dy;
          cov += wt[p * k + q] * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / static_cast<double>((h - k + 1) * (w - k + 1));
}

Outcome metric_identities() {
  Rng rng(808);
  const std::size_t h = 24, w = 28;
  std::size_t broken = 0;
  double worst = 0.0;
  for (int f = 0; f < 100; ++f) {
    std::vector<double> x(h * w), y(h * w), shifted(h * w);
    const double amp = rng.uniform(0.1, 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = amp * rng.uniform();
      y[i] = std::clamp(x[i] + 0.2 * rng.normal(), 0.0, 1.0);
      shifted[i] = x[i] + 0.5;
    }
    const auto tx = T64::from_data({h, w}, std::vector<double>(x)), ty = T64::from_data({h, w}, std::vector<double>(y)),
               ts = T64::from_data({h, w}, std::vector<double>(shifted));
    broken += ssim(tx, tx) != 1.0;
    broken += mse(tx, tx) != 0.0;
    broken += mae(tx, tx) != 0.0;
    for (const auto* other : {&y, &shifted}) {
      const double ref = ssim_oracle(x, *other, h, w);
      const double got = ssim(tx, other == &y ? ty : ts);
      worst = std::max(worst, std::abs(got - ref) / std::abs(ref));
    }
  }
  // constant frame vs the same constant + 0.5: only the luminance term survives
  double worst_const = 0.0;
  for (double c : {0.0, 0.1, 0.25, 0.5}) {
    const std::vector<double> x(h * w, c), y(h * w, c + 0.5);
    const double got = ssim(T64::from_data({h, w}, std::vector<double>(x)), T64::from_data({h, w}, std::vector<double>(y)));
    const double lum = (2 * c * (c + 0.5) + 1e-4) / (c * c + (c + 0.5) * (c + 0.5) + 1e-4);
    worst_const = std::max({worst_const, std::abs(got - ssim_oracle(x, y, h, w)) / lum, std::abs(got - lum) / lum});
  }
  return {broken == 0 && worst < 1e-6 && worst_const < 1e-6,
          fmt("identity violations %zu over 100 frames (ssim(x,x)=1, mse=mae=0); ssim vs direct oracle max rel %.2e < "
              "1e-6 (noisy and +0.5 offset pairs); constant vs constant+0.5 max rel %.2e < 1e-6",
              broken, worst, worst_const)};
}

// ---------------------------------------------------------------------------------------------
// 9. format robustness

Outcome format_robustness(const Workspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string log;
  const auto data = ws("fuzz.btchw");
  if (cli({"gen-data", "--out", data, "--samples", "2", "--frames", "4", "--height", "16", "--width", "16", "--t-in",
           "2", "--seed", "9"},
          &log) != 0)
    return {false, "gen-data failed: " + log};
  std::ofstream(ws("fuzz.ini")) << "[model]\nheight = 16\nwidth = 16\nd_model = 8\nd_state = 2\nn_layers = 1\n"
                                   "enc_channels1 = 2\nenc_channels2 = 4\nn_dit_blocks = 1\ndit_dim = 8\nn_heads = 2\n"
                                   "d_cond = 8\nt_diff = 10\n[data]\ntrain = "
                                << data << "\nt_in = 2\nt_out = 2\n[train]\nsteps = 1\nbatch = 2\ncheckpoint_dir = "
                                << ws("fuzz") << "\n";
  if (cli({"train", "--config", ws("fuzz.ini")}, &log) != 0) return {false, "train failed: " + log};
  const auto ckpt = ws("fuzz/latest.dfma");
  const auto pristine = io::read_file(data);
  const auto probe = ws("probe.btchw");
  auto run_eval = [&] { return cli({"eval", "--checkpoint", ckpt, "--data", probe, "--report", ws("probe.csv")}); };

  io::write_file_atomic(probe, pristine);
  const int pristine_rc = run_eval();

  Rng rng(909);
  std::size_t accepted = 0, bad_code = 0, untyped = 0;
  int codes[5] = {0, 0, 0, 0, 0};
  for (int k = 0; k < 1000; ++k) {
    auto bytes = pristine;
    switch (k % 5) {
      case 0: {  // header byte
        const auto at = rng.uniform_int(0, kArchiveHeaderSize - 1);
        bytes[at] ^= static_cast<std::uint8_t>(rng.uniform_int(1, 255));
        break;
      }
      case 1: {  // payload or checksum bytes
        const auto flips = rng.uniform_int(1, 8);
        for (std::uint64_t i = 0; i < flips; ++i)
          bytes[rng.uniform_int(kArchiveHeaderSize, bytes.size() - 1)] ^= static_cast<std::uint8_t>(rng.uniform_int(1, 255));
        break;
      }
      case 2:  // truncation
        bytes.resize(rng.uniform_int(0, bytes.size() - 1));
        break;
      case 3: {  // extension
        const auto extra = rng.uniform_int(1, 64);
        for (std::uint64_t i = 0; i < extra; ++i) bytes.push_back(static_cast<std::uint8_t>(rng.next_u64()));
        break;
      }
      default: {  // whole header fields set to random, extreme or boundary values
        const std::uint32_t picks[] = {0u, 1u, 2u, 0xffffffffu, 0x80000000u, static_cast<std::uint32_t>(rng.next_u64())};
        const auto field = rng.uniform_int(1, 9);  // version, 5 dims, tag, t_in, t_out
        std::uint32_t v;
        std::uint32_t old;
        std::memcpy(&old, &bytes[4 * field], 4);
        do v = picks[rng.uniform_int(0, 5)];
        while (v == old);
        std::memcpy(&bytes[4 * field], &v, 4);
      }
    }
    try {
      (void)decode_archive(bytes);
      ++accepted;
    } catch (const Error&) {
    } catch (...) {
      ++untyped;
    }
    io::write_file_atomic(probe, bytes);
    const int rc = run_eval();
    ++codes[std::clamp(rc, 0, 4)];
    bad_code += rc != 2 && rc != 3;
  }
  const double secs = seconds_since(t0);
  return {pristine_rc == 0 && accepted == 0 && untyped == 0 && bad_code == 0,
          fmt("pristine exit %d; 1000 mutants: decoder accepted %zu, untyped exceptions %zu; eval exit codes "
              "0:%d 1:%d 2:%d 3:%d 4:%d (only 2/3 allowed); %.1f s",
              pristine_rc, accepted, untyped, codes[0], codes[1], codes[2], codes[3], codes[4], secs)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const Workspace ws;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"scan oracle", scan_oracle},
      {"diffusion statistics", diffusion_statistics},
      {"initialization identity", initialization_identity},
      {"overfit", [&] { return overfit(ws); }},
      {"dual-path ordering", [&] { return dual_path_ordering(ws); }},
      {"loss decomposition", [&] { return loss_decomposition(ws); }},
      {"metric identities", metric_identities},
      {"format robustness", [&] { return format_robustness(ws); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  if (selected.empty() || selected.contains(5)) {
    Outcome o;
    try {
      o = conditioning_effectiveness(ws);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s check (conditioning effectiveness): %s\n", o.pass ? "PASS" : "FAIL", o.detail.c_str());
  }
  return failed == 0 ? 0 : 1;
}
