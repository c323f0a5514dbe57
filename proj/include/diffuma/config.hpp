#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "diffuma/io.hpp"
#include "diffuma/training.hpp"

// Run configuration: INI-style `key = value` lines under [model], [data] and [train].
// '#' and ';' start comments. Unknown sections or keys, duplicates and out-of-range values are
// rejected with the offending line number.

namespace diffuma {

struct DataConfig {
  std::string train_path;
  std::string eval_path;
  std::size_t t_in = 5;
  std::size_t t_out = 5;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainSettings train;
  std::string checkpoint_dir = "checkpoints";
  std::uint64_t checkpoint_every = 100;
  std::uint64_t steps_per_epoch = 50;  // eval reports map step counts to "epochs" with this
  std::string text;                    // verbatim source, echoed into checkpoints

  /// Propagates data geometry into the model and validates everything jointly.
  void finalize() {
    model.mamba.t_in = data.t_in;
    model.mamba.t_out = data.t_out;
    model.finalize();
    (void)model.diffusion.schedule();  // throws on an invalid beta range
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct ConfigLine {
  std::size_t number;
  std::string key;
  std::string value;
};

inline std::uint64_t parse_uint(const ConfigLine& l, std::uint64_t lo, std::uint64_t hi) {
  std::uint64_t v = 0;
  const auto* end = l.value.data() + l.value.size();
  auto [p, ec] = std::from_chars(l.value.data(), end, v);
  if (ec != std::errc{} || p != end)
    throw ConfigError("line " + std::to_string(l.number) + ": '" + l.key + "' expects an integer, got '" + l.value + "'");
  if (v < lo || v > hi) {
    throw ConfigError("line " + std::to_string(l.number) + ": '" + l.key + "' = " + l.value + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return v;
}

inline double parse_real(const ConfigLine& l, double lo, double hi) {
  double v = 0;
  try {
    std::size_t used = 0;
    v = std::stod(l.value, &used);
    if (used != l.value.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(l.number) + ": '" + l.key + "' expects a number, got '" + l.value + "'");
  }
  if (!(v >= lo && v <= hi)) {
    std::ostringstream os;
    os << "line " << l.number << ": '" << l.key << "' = " << l.value << " outside [" << lo << ", " << hi << "]";
    throw ConfigError(os.str());
  }
  return v;
}

inline bool parse_bool(const ConfigLine& l) {
  if (l.value == "true" || l.value == "1") return true;
  if (l.value == "false" || l.value == "0") return false;
  throw ConfigError("line " + std::to_string(l.number) + ": '" + l.key + "' expects true or false");
}

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text) {
  using detail::ConfigLine;
  RunConfig cfg;
  cfg.text = std::string(text);
  auto& m = cfg.model.mamba;
  auto& d = cfg.model.diffusion;
  auto& t = cfg.train;

  using Setter = std::function<void(const ConfigLine&)>;
  auto size = [](std::size_t& dst, std::uint64_t lo, std::uint64_t hi) -> Setter {
    return [&dst, lo, hi](const ConfigLine& l) { dst = static_cast<std::size_t>(detail::parse_uint(l, lo, hi)); };
  };
  auto u64 = [](std::uint64_t& dst, std::uint64_t lo, std::uint64_t hi) -> Setter {
    return [&dst, lo, hi](const ConfigLine& l) { dst = detail::parse_uint(l, lo, hi); };
  };
  auto real = [](double& dst, double lo, double hi) -> Setter {
    return [&dst, lo, hi](const ConfigLine& l) { dst = detail::parse_real(l, lo, hi); };
  };
  auto flag = [](bool& dst) -> Setter { return [&dst](const ConfigLine& l) { dst = detail::parse_bool(l); }; };
  auto str = [](std::string& dst) -> Setter { return [&dst](const ConfigLine& l) { dst = l.value; }; };

  const std::map<std::string, std::map<std::string, Setter>> table{
      {"model",
       {{"channels", size(m.channels, 1, 16)},
        {"height", size(m.height, 4, 4096)},
        {"width", size(m.width, 4, 4096)},
        {"d_model", size(m.d_model, 1, 4096)},
        {"d_state", size(m.d_state, 1, 1024)},
        {"n_layers", size(m.n_layers, 1, 64)},
        {"conv_kernel", size(m.conv_kernel, 1, 31)},
        {"enc_channels1", size(m.enc_channels1, 1, 1024)},
        {"enc_channels2", size(m.enc_channels2, 1, 1024)},
        {"residual", flag(m.residual)},
        {"pre_norm", flag(m.pre_norm)},
        {"n_dit_blocks", size(d.n_blocks, 0, 64)},
        {"patch_size", size(d.patch, 1, 64)},
        {"dit_dim", size(d.dim, 1, 4096)},
        {"n_heads", size(d.n_heads, 1, 64)},
        {"mlp_ratio", size(d.mlp_ratio, 1, 16)},
        {"d_cond", size(d.d_cond, 2, 4096)},
        {"t_diff", size(d.t_diff, 1, 100000)},
        {"beta_start", real(d.beta_start, 0.0, 0.999)},
        {"beta_end", real(d.beta_end, 0.0, 0.999)},
        {"lambda", real(t.lambda, 0.0, 1e6)}}},
      {"data",
       {{"train", str(cfg.data.train_path)},
        {"eval", str(cfg.data.eval_path)},
        {"t_in", size(cfg.data.t_in, 1, 4096)},
        {"t_out", size(cfg.data.t_out, 1, 4096)}}},
      {"train",
       {{"lr", real(t.lr, 1e-8, 1.0)},
        {"batch", size(t.batch, 1, 4096)},
        {"steps", u64(t.steps, 1, 100000000)},
        {"seed", u64(t.seed, 0, ~0ULL)},
        {"warmup", u64(t.warmup, 0, 100000000)},
        {"clip_norm", real(t.clip_norm, 0.0, 1e6)},
        {"disable_diffusion", flag(t.paths.disable_diffusion)},
        {"zero_context", flag(t.paths.zero_context)},
        {"checkpoint_dir", str(cfg.checkpoint_dir)},
        {"checkpoint_every", u64(cfg.checkpoint_every, 1, 100000000)},
        {"steps_per_epoch", u64(cfg.steps_per_epoch, 1, 100000000)}}},
  };

  std::string section;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t number = 0;
  while (std::getline(in, raw)) {
    ++number;
    std::string line = raw;
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.resize(c);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(number) + ": malformed section header");
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      if (!table.contains(section)) throw ConfigError("line " + std::to_string(number) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    ConfigLine l{number, detail::trim(std::string_view(line).substr(0, eq)), detail::trim(std::string_view(line).substr(eq + 1))};
    if (section.empty()) throw ConfigError("line " + std::to_string(number) + ": key '" + l.key + "' outside any section");
    const auto& keys = table.at(section);
    const auto it = keys.find(l.key);
    if (it == keys.end()) throw ConfigError("line " + std::to_string(number) + ": unknown key '" + l.key + "' in [" + section + "]");
    if (!seen.insert(section + "." + l.key).second)
      throw ConfigError("line " + std::to_string(number) + ": duplicate key '" + l.key + "' in [" + section + "]");
    it->second(l);
  }
  cfg.finalize();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace diffuma
