#pragma once

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "diffuma/archive.hpp"
#include "diffuma/checkpoint.hpp"
#include "diffuma/config.hpp"
#include "diffuma/metrics.hpp"
#include "diffuma/pgm.hpp"
#include "diffuma/synthetic.hpp"

// Command-line front end. Every subcommand is an ordinary function over parsed options so the
// test suite can drive the tool in-process; `run` adds argument parsing and maps exceptions to
// the exit-code contract below.

namespace diffuma::app {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,      // bad flags, invalid config or data geometry
  kIo = 3,         // unreadable, unwritable, truncated or corrupt files
  kNumerical = 4,  // non-finite loss or values
};

struct GenDataOptions {
  std::string out;
  std::string motif = "bouncing-blob";
  std::size_t samples = 8;
  std::size_t frames = 10;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t t_in = 5;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string config;
  std::string resume;
  std::string checkpoint_dir;  // empty: from config
  std::uint64_t steps = 0;     // 0: from config
  double lambda = -1.0;        // < 0: from config
  bool disable_diffusion = false;
  bool zero_context = false;
};

struct EvalOptions {
  std::string config;  // empty: the config echoed in the checkpoint
  std::string checkpoint;
  std::string data;    // empty: [data] eval, falling back to [data] train
  std::vector<std::size_t> horizons;  // empty: t_out
  std::string report = "-";
  bool disable_diffusion = false;
  bool zero_context = false;
};

struct SweepOptions {
  std::string config;
  std::vector<double> lambdas{0.0, 0.5, 1.0, 2.0};
  std::string out_dir;
  std::string data;  // scored archive; empty: [data] eval, else [data] train
  std::uint64_t steps = 0;
};

struct PredictOptions {
  std::string config;
  std::string checkpoint;
  std::string data;
  std::string out_dir;
  std::string format = "pgm";
  bool disable_diffusion = false;
  bool zero_context = false;
};

inline constexpr const char* kMetricsHeader = "step,l_diff,l_recon,l_total,lr,wallclock_ms";
inline constexpr const char* kLockName = "train.lock";

inline std::string checkpoint_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06llu.dfma", static_cast<unsigned long long>(step));
  return buf;
}

namespace detail {

/// Exclusive lock file for a checkpoint directory, removed on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / kLockName) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw IoError("cannot lock '" + dir.string() + "': " + path_.string() +
                    " exists (another run is writing there; delete it if that run is gone)");
    }
    std::fclose(f);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

/// Shortest text that parses back to exactly `v`.
template <typename F>
std::string format_real(F v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

inline FrameSequence<float> load_data(const std::string& path, const RunConfig& cfg, std::ostream& err) {
  if (path.empty()) throw ConfigError("no data archive given (set [data] train/eval or pass --data)");
  auto seq = read_archive(path);
  seq.validate(err);
  if (seq.t_in != cfg.data.t_in || seq.t_out != cfg.data.t_out) {
    throw DimensionError("archive '" + path + "' has t_in=" + std::to_string(seq.t_in) + ", t_out=" +
                         std::to_string(seq.t_out) + " but the config expects t_in=" + std::to_string(cfg.data.t_in) +
                         ", t_out=" + std::to_string(cfg.data.t_out));
  }
  const auto& m = cfg.model.mamba;
  if (seq.channels() != m.channels || seq.height() != m.height || seq.width() != m.width) {
    throw DimensionError("archive '" + path + "' frames are " + std::to_string(seq.channels()) + "x" +
                         std::to_string(seq.height()) + "x" + std::to_string(seq.width()) + ", model expects " +
                         std::to_string(m.channels) + "x" + std::to_string(m.height) + "x" + std::to_string(m.width));
  }
  return seq;
}

/// Model restored from a checkpoint, with the config it runs under.
struct Restored {
  RunConfig cfg;
  CheckpointData<float> data;
  DiffumaModel<float> model;
};

inline Restored restore_model(const std::string& checkpoint, const std::string& config) {
  auto data = load_checkpoint<float>(checkpoint);
  auto cfg = config.empty() ? parse_run_config(data.config_text) : load_run_config(config);
  DiffumaModel<float> model(cfg.model, cfg.train.seed);
  (void)apply_checkpoint(data, model.parameters());
  return {std::move(cfg), std::move(data), std::move(model)};
}

/// Runs inference in chunks of `chunk` samples; returns the fused prediction and the t = 0
/// diffusion residual restricted to the predicted frames (zeros when diffusion is off).
inline std::pair<Tensor<float>, Tensor<float>> predict_all(const DiffumaModel<float>& model,
                                                           const Tensor<float>& inputs, const PathOptions& paths,
                                                           std::size_t chunk = 8) {
  NoGradGuard guard;
  const std::size_t n = inputs.dim(0);
  const std::size_t t_out = model.config().mamba.t_out;
  std::vector<Tensor<float>> preds, residuals;
  for (std::size_t b = 0; b < n; b += chunk) {
    const auto e = std::min(n, b + chunk);
    auto r = model.predict(slice(inputs, 0, b, e), paths);
    preds.push_back(r.y_hat.tensor.detach());
    if (r.delta_x.defined()) {
      const std::size_t t = r.delta_x.dim(1);
      residuals.push_back(slice(r.delta_x, 1, t - t_out, t).detach());
    } else {
      residuals.push_back(Tensor<float>::zeros(r.y_hat.tensor.shape()));
    }
  }
  return {concat(preds, 0), concat(residuals, 0)};
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// gen-data

inline int gen_data(const GenDataOptions& o, std::ostream& out) {
  SyntheticSpec spec;
  spec.n_samples = o.samples;
  spec.frames = o.frames;
  spec.height = o.height;
  spec.width = o.width;
  spec.t_in = o.t_in;
  spec.motif = parse_motif(o.motif);
  spec.seed = o.seed;
  spec.validate();
  const auto seq = generate_synthetic(spec);
  const auto bytes = encode_archive(seq);
  if (const auto parent = std::filesystem::path(o.out).parent_path(); !parent.empty()) detail::ensure_directory(parent);
  io::write_file_atomic(o.out, bytes);
  out << "wrote " << o.out << ": dims " << to_string(seq.tensor.shape()) << " t_in=" << seq.t_in
      << " t_out=" << seq.t_out << " motif=" << motif_name(spec.motif) << " seed=" << spec.seed
      << " bytes=" << bytes.size() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------------
// train

inline int train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  auto cfg = load_run_config(o.config);
  if (o.disable_diffusion) cfg.train.paths.disable_diffusion = true;
  if (o.zero_context) cfg.train.paths.zero_context = true;
  if (o.steps != 0) cfg.train.steps = o.steps;
  if (o.lambda >= 0.0) cfg.train.lambda = o.lambda;
  const std::filesystem::path dir = o.checkpoint_dir.empty() ? cfg.checkpoint_dir : o.checkpoint_dir;

  auto data = detail::load_data(cfg.data.train_path, cfg, err);
  DiffumaModel<float> model(cfg.model, cfg.train.seed);
  Trainer<float> trainer(model, data, cfg.train);
  if (!o.resume.empty()) {
    const auto ckpt = load_checkpoint<float>(o.resume);
    if (ckpt.config_text != cfg.text) err << "warning: resuming under a config that differs from the checkpoint's\n";
    trainer.restore(ckpt.step, apply_checkpoint(ckpt, model.parameters()));
    out << "resumed from " << o.resume << " at step " << ckpt.step << "\n";
  }

  detail::ensure_directory(dir);
  detail::DirectoryLock lock(dir);
  const auto metrics_path = dir / "metrics.csv";
  std::error_code ec;
  const bool fresh_log = !std::filesystem::exists(metrics_path, ec) || std::filesystem::file_size(metrics_path, ec) == 0;
  std::ofstream log(metrics_path, std::ios::app);
  if (!log) throw IoError("cannot open '" + metrics_path.string() + "' for appending");
  if (fresh_log) log << kMetricsHeader << "\n";

  auto save = [&](std::uint64_t step) {
    const auto bytes = encode_checkpoint(model.parameters(), trainer.optimizer(), step, cfg.text);
    io::write_file_atomic(dir / checkpoint_name(step), bytes);
    io::write_file_atomic(dir / "latest.dfma", bytes);
  };

  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t every = cfg.checkpoint_every;
  const std::uint64_t report_every = std::max<std::uint64_t>(1, cfg.train.steps / 10);
  while (trainer.step_count() < cfg.train.steps) {
    LossReport<float> r;
    try {
      r = trainer.step();
    } catch (const NumericalError& e) {
      const std::string msg = "training aborted: " + std::string(e.what()) +
                              " (last good checkpoint: " + (dir / "latest.dfma").string() + ")";
      std::ofstream(dir / "diagnostic.txt") << msg << "\n";
      err << msg << "\n";
      return kNumerical;
    }
    const auto step = trainer.step_count();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log << step << ',' << detail::format_real(r.l_diff) << ',' << detail::format_real(r.l_recon) << ','
        << detail::format_real(r.l_total) << ',' << detail::format_real(r.lr) << ','
        << detail::format_real(std::round(ms * 1000.0) / 1000.0) << '\n';
    log.flush();
    if (!log) throw IoError("write failed for '" + metrics_path.string() + "'");
    if (step % every == 0 || step == cfg.train.steps) save(step);
    if (step % report_every == 0 || step == cfg.train.steps) {
      out << "step " << step << "/" << cfg.train.steps << " l_total=" << r.l_total << " l_diff=" << r.l_diff
          << " l_recon=" << r.l_recon << " lr=" << r.lr << "\n";
    }
  }
  out << "done: " << (dir / "latest.dfma").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------------
// eval

inline int eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  auto restored = detail::restore_model(o.checkpoint, o.config);
  auto& cfg = restored.cfg;
  PathOptions paths = cfg.train.paths;
  if (o.disable_diffusion) paths.disable_diffusion = true;
  if (o.zero_context) paths.zero_context = true;
  const std::string path = !o.data.empty() ? o.data : !cfg.data.eval_path.empty() ? cfg.data.eval_path : cfg.data.train_path;
  auto data = detail::load_data(path, cfg, err);
  std::vector<std::size_t> horizons = o.horizons.empty() ? std::vector<std::size_t>{data.t_out} : o.horizons;
  for (const auto h : horizons) {
    if (h == 0 || h > data.t_out)
      throw DimensionError("horizon " + std::to_string(h) + " outside [1, t_out = " + std::to_string(data.t_out) + "]");
  }

  const auto [pred, residual] = detail::predict_all(restored.model, data.inputs().tensor, paths);
  const auto target = data.targets().tensor;
  double residual_max = 0.0;
  for (const float v : residual.values()) residual_max = std::max(residual_max, static_cast<double>(std::fabs(v)));

  std::ostringstream rep;
  const auto step = restored.data.step;
  rep << "# checkpoint: " << o.checkpoint << "\n"
      << "# data: " << path << " (" << data.batch() << " samples, t_in=" << data.t_in << ", t_out=" << data.t_out << ")\n"
      << "# step: " << step << "\n"
      << "# steps_per_epoch: " << cfg.steps_per_epoch << "\n"
      << "# epoch: " << detail::format_real(static_cast<double>(step) / static_cast<double>(cfg.steps_per_epoch)) << "\n"
      << "# paths: diffusion=" << (paths.disable_diffusion ? "off" : "on")
      << " context=" << (paths.zero_context ? "zero" : "latent") << "\n"
      << "# diffusion_residual_max_abs: " << detail::format_real(residual_max) << "\n";
  const std::size_t plane = data.frame_size();
  for (const auto h : horizons) {
    const auto m = evaluate_metrics(pred, target, h);
    rep << "\n# horizon " << h << "\n" << "frame_index,mse,mae,ssim,residual_mean_abs\n";
    double residual_total = 0.0;
    for (std::size_t f = 0; f < h; ++f) {
      double acc = 0.0;
      for (std::size_t s = 0; s < data.batch(); ++s) {
        for (const float v : residual.data().subspan((s * data.t_out + f) * plane, plane)) acc += std::fabs(v);
      }
      const double mean_abs = acc / static_cast<double>(data.batch() * plane);
      residual_total += mean_abs;
      rep << f + 1 << ',' << detail::format_real(m.frame_mse[f]) << ',' << detail::format_real(m.frame_mae[f]) << ','
          << detail::format_real(m.frame_ssim[f]) << ',' << detail::format_real(mean_abs) << "\n";
    }
    rep << "mean," << detail::format_real(m.mse) << ',' << detail::format_real(m.mae) << ','
        << detail::format_real(m.ssim) << ',' << detail::format_real(residual_total / static_cast<double>(h)) << "\n";
  }

  const auto text = rep.str();
  if (o.report == "-") {
    out << text;
  } else {
    io::write_file_atomic(o.report, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    out << "wrote " << o.report << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------------------------
// lambda-sweep

/// One training run per lambda, each in its own subdirectory, scored on the eval archive.
inline int lambda_sweep(const SweepOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_run_config(o.config);
  const std::filesystem::path dir = o.out_dir;
  detail::ensure_directory(dir);
  const std::string path = !o.data.empty() ? o.data : !cfg.data.eval_path.empty() ? cfg.data.eval_path : cfg.data.train_path;
  const auto data = detail::load_data(path, cfg, err);
  std::ostringstream summary;
  summary << "lambda,l_diff,l_recon,l_total,mse,mae,ssim\n";
  for (const double lambda : o.lambdas) {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0, got " + detail::format_real(lambda));
    TrainOptions t;
    t.config = o.config;
    t.steps = o.steps;
    t.lambda = lambda;
    t.checkpoint_dir = (dir / ("lambda_" + detail::format_real(lambda))).string();
    out << "== lambda " << detail::format_real(lambda) << "\n";
    if (const int rc = train(t, out, err); rc != kOk) return rc;
    auto restored = detail::restore_model((std::filesystem::path(t.checkpoint_dir) / "latest.dfma").string(), o.config);
    const auto pred = detail::predict_all(restored.model, data.inputs().tensor, cfg.train.paths).first;
    const auto m = evaluate_metrics(pred, data.targets().tensor);

    // final losses from the run's own log
    std::ifstream log(std::filesystem::path(t.checkpoint_dir) / "metrics.csv");
    std::string line, last;
    while (std::getline(log, line)) {
      if (!line.empty()) last = line;
    }
    std::vector<std::string> cols;
    std::stringstream ls(last);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    if (cols.size() < 4) throw IoError("cannot read final losses from " + t.checkpoint_dir + "/metrics.csv");
    summary << detail::format_real(lambda) << ',' << cols[1] << ',' << cols[2] << ',' << cols[3] << ','
            << detail::format_real(m.mse) << ',' << detail::format_real(m.mae) << ',' << detail::format_real(m.ssim) << "\n";
  }
  const auto text = summary.str();
  io::write_file_atomic(dir / "sweep.csv", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  out << text;
  return kOk;
}

// ---------------------------------------------------------------------------------------------
// predict

inline int predict(const PredictOptions& o, std::ostream& out, std::ostream& err) {
  if (o.format != "pgm" && o.format != "btchw") throw ConfigError("--format must be pgm or btchw");
  auto restored = detail::restore_model(o.checkpoint, o.config);
  auto& cfg = restored.cfg;
  PathOptions paths = cfg.train.paths;
  if (o.disable_diffusion) paths.disable_diffusion = true;
  if (o.zero_context) paths.zero_context = true;
  const std::string path = !o.data.empty() ? o.data : !cfg.data.eval_path.empty() ? cfg.data.eval_path : cfg.data.train_path;
  auto data = detail::load_data(path, cfg, err);
  const auto pred = detail::predict_all(restored.model, data.inputs().tensor, paths).first;

  const std::filesystem::path dir = o.out_dir;
  detail::ensure_directory(dir);
  if (o.format == "btchw") {
    const auto file = dir / "predictions.btchw";
    write_archive(FrameSequence<float>{pred, 0, pred.dim(1)}, file);
    out << "wrote " << file.string() << " dims " << to_string(pred.shape()) << "\n";
    return kOk;
  }
  const std::size_t n = pred.dim(0), t = pred.dim(1), c = pred.dim(2), h = pred.dim(3), w = pred.dim(4);
  std::size_t written = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t f = 0; f < t; ++f) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::string name = "s" + std::to_string(s) + "_f" + std::to_string(f);
        if (c > 1) name += "_c" + std::to_string(ch);
        write_pgm<float>(dir / (name + ".pgm"), pred.data().subspan(((s * t + f) * c + ch) * h * w, h * w), h, w);
        ++written;
      }
    }
  }
  out << "wrote " << written << " PGM frames to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------------
// argument parsing and error mapping

/// Parses `args` (without the program name) and runs the selected subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App cli{"diffuma: dual-path (selective scan + diffusion transformer) video frame predictor"};
  cli.name("diffuma");
  cli.require_subcommand(1);
  cli.option_defaults()->always_capture_default();
  cli.get_formatter()->column_width(34);

  GenDataOptions g;
  auto* gen = cli.add_subcommand("gen-data", "Generate a synthetic BTCW archive");
  gen->add_option("--out", g.out, "Output archive path")->required();
  gen->add_option("--motif", g.motif, "bouncing-blob | drifting-stripes | advected-noise");
  gen->add_option("--samples", g.samples, "Number of clips");
  gen->add_option("--frames", g.frames, "Frames per clip (t_in + t_out)");
  gen->add_option("--height", g.height, "Frame height (>= 16)");
  gen->add_option("--width", g.width, "Frame width (>= 16)");
  gen->add_option("--t-in", g.t_in, "Input frames per clip");
  gen->add_option("--seed", g.seed, "Generator seed");

  TrainOptions t;
  auto* tr = cli.add_subcommand("train", "Train from a run config");
  tr->add_option("--config", t.config, "Run config file")->required();
  tr->add_option("--resume", t.resume, "Checkpoint to continue from (step, weights and optimizer state)");
  tr->add_option("--checkpoint-dir", t.checkpoint_dir, "Override [train] checkpoint_dir");
  tr->add_option("--steps", t.steps, "Override [train] steps; training stops at this total step count (0 = config)");
  tr->add_option("--lambda", t.lambda, "Override [model] lambda (negative = config)");
  tr->add_flag("--disable-diffusion", t.disable_diffusion, "Train the selective-scan path alone");
  tr->add_flag("--zero-context", t.zero_context, "Replace the denoiser context vector with zeros");

  EvalOptions e;
  std::string horizon_list;
  auto* ev = cli.add_subcommand("eval", "Score predictions with MSE / MAE / SSIM per horizon");
  ev->add_option("--checkpoint", e.checkpoint, "Checkpoint file")->required();
  ev->add_option("--config", e.config, "Run config (default: the config stored in the checkpoint)");
  ev->add_option("--data", e.data, "Archive to score (default: [data] eval, else [data] train)");
  ev->add_option("--horizon", horizon_list, "Comma-separated prediction lengths (default: t_out)");
  ev->add_option("--report", e.report, "Report CSV path, - for stdout");
  ev->add_flag("--disable-diffusion", e.disable_diffusion, "Score the selective-scan path alone");
  ev->add_flag("--zero-context", e.zero_context, "Replace the denoiser context vector with zeros");

  SweepOptions sw;
  auto* sweep = cli.add_subcommand("lambda-sweep", "Train and score one run per reconstruction weight lambda");
  sweep->add_option("--config", sw.config, "Run config file")->required();
  sweep->add_option("--lambdas", sw.lambdas, "Lambda values")->delimiter(',');
  sweep->add_option("--out-dir", sw.out_dir, "Directory for per-lambda runs and sweep.csv")->required();
  sweep->add_option("--data", sw.data, "Archive to score (default: [data] eval, else [data] train)");
  sweep->add_option("--steps", sw.steps, "Override [train] steps (0 = config)");

  PredictOptions p;
  auto* pr = cli.add_subcommand("predict", "Export predicted frames");
  pr->add_option("--checkpoint", p.checkpoint, "Checkpoint file")->required();
  pr->add_option("--config", p.config, "Run config (default: the config stored in the checkpoint)");
  pr->add_option("--data", p.data, "Input archive (default: [data] eval, else [data] train)");
  pr->add_option("--out-dir", p.out_dir, "Output directory")->required();
  pr->add_option("--format", p.format, "pgm (one file per frame) | btchw (one archive)");
  pr->add_flag("--disable-diffusion", p.disable_diffusion, "Predict with the selective-scan path alone");
  pr->add_flag("--zero-context", p.zero_context, "Replace the denoiser context vector with zeros");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = cli.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(g, out);
    if (tr->parsed()) return train(t, out, err);
    if (ev->parsed()) {
      std::stringstream ss(horizon_list);
      for (std::string item; std::getline(ss, item, ',');) {
        std::size_t used = 0;
        long long v = -1;
        try {
          v = std::stoll(item, &used);
        } catch (const std::exception&) {
        }
        if (v <= 0 || used != item.size()) throw ConfigError("--horizon expects positive integers, got '" + item + "'");
        e.horizons.push_back(static_cast<std::size_t>(v));
      }
      return eval(e, out, err);
    }
    if (pr->parsed()) return predict(p, out, err);
    if (sweep->parsed()) return lambda_sweep(sw, out, err);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const DimensionError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const FormatError& ex) {
    err << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const NumericalError& ex) {
    err << "error: " << ex.what() << "\n";
    return kNumerical;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace diffuma::app
