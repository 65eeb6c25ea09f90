#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "revamp/common.hpp"
#include "revamp/ei/initiator.hpp"
#include "revamp/relenc/relative.hpp"
#include "revamp/sr/model.hpp"

namespace revamp::harness {

// Every knob of the two-phase pipeline in one flat bag, loadable from a
// `key = value` text file. The POI count is not part of the config; it comes
// from the corpus at train time.
struct RunConfig {
  std::size_t dim = 64;        // shared embedding width
  std::size_t window = 200;    // sequence length N
  std::size_t blocks = 2;
  std::size_t heads = 1;
  std::size_t clip_app = 64;
  std::size_t clip_poi = 64;
  std::size_t clip_time = 64;
  double gamma = 0.5;          // EI channel mix
  double kappa = 0.5;          // category loss weight
  double lambda = 0.002;       // weight decay
  double ei_lr = 1e-3;
  double sr_lr = 1e-3;
  std::size_t batch = 128;     // EI check-ins / SR windows per step
  std::size_t ei_epochs = 50;
  std::size_t sr_epochs = 200;
  double dropout = 0.2;
  double ei_early_stop = 1e-5;
  std::uint64_t seed = 1;
  relenc::TimeMode time_mode = relenc::TimeMode::kClippedQuotient;
  bool use_app = true;
  bool use_poi = true;
  bool use_time = true;
  bool use_abs = true;
  std::size_t eval_negatives = 100;
  std::size_t threads = 0;     // evaluation fan-out; 0 = hardware count
  std::size_t pretrained_dim = 768;
  std::string pretrained_path; // empty = deterministic fallback vectors

  void validate() const {
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("config: gamma must be in [0, 1]");
    if (kappa < 0.0 || kappa > 1.0) throw ConfigError("config: kappa must be in [0, 1]");
    if (lambda < 0.0) throw ConfigError("config: lambda must be non-negative");
    if (dim == 0) throw ConfigError("config: dim must be positive");
    if (window == 0) throw ConfigError("config: window must be positive");
    if (blocks == 0) throw ConfigError("config: blocks must be positive");
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("config: dim must divide across heads");
    if (ei_lr <= 0.0 || sr_lr <= 0.0) throw ConfigError("config: learning rates must be positive");
    if (batch == 0) throw ConfigError("config: batch must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0, 1)");
    if (eval_negatives == 0) throw ConfigError("config: eval_negatives must be positive");
    if (pretrained_dim == 0) throw ConfigError("config: pretrained_dim must be positive");
  }

  // Dataset profiles fix the window length; everything else keeps defaults.
  void apply_profile(const std::string& name) {
    if (name == "shanghai") {
      window = 200;
    } else if (name == "talkingdata") {
      window = 100;
    } else {
      throw ConfigError("config: unknown profile '" + name + "'");
    }
  }

  ei::EiConfig ei_config() const {
    ei::EiConfig c;
    c.dim = dim;
    c.gamma = gamma;
    c.lr = ei_lr;
    c.epochs = ei_epochs;
    c.batch_size = batch;
    c.seed = seed;
    c.early_stop_rel = ei_early_stop;
    return c;
  }

  sr::SrConfig sr_config(std::size_t num_pois) const {
    sr::SrConfig c;
    c.dim = dim;
    c.window = window;
    c.blocks = blocks;
    c.heads = heads;
    c.num_pois = num_pois;
    c.clip_app = clip_app;
    c.clip_poi = clip_poi;
    c.clip_time = clip_time;
    c.time_mode = time_mode;
    c.use_app = use_app;
    c.use_poi = use_poi;
    c.use_time = use_time;
    c.use_abs = use_abs;
    c.dropout = dropout;
    c.kappa = kappa;
    c.lambda = lambda;
    c.seed = seed;
    return c;
  }

  relenc::RelConfig rel_config() const {
    relenc::RelConfig c;
    c.clip_app = clip_app;
    c.clip_poi = clip_poi;
    c.clip_time = clip_time;
    c.time_mode = time_mode;
    c.use_app = use_app;
    c.use_poi = use_poi;
    c.use_time = use_time;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

}  // namespace detail

// One `key = value` assignment. Profile assignments apply immediately, so a
// later explicit `window =` still wins.
inline void set_config_key(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_u64;
  if (key == "profile") {
    c.apply_profile(value);
  } else if (key == "dim") {
    c.dim = parse_u64(value, key);
  } else if (key == "window") {
    c.window = parse_u64(value, key);
  } else if (key == "blocks") {
    c.blocks = parse_u64(value, key);
  } else if (key == "heads") {
    c.heads = parse_u64(value, key);
  } else if (key == "clip_app") {
    c.clip_app = parse_u64(value, key);
  } else if (key == "clip_poi") {
    c.clip_poi = parse_u64(value, key);
  } else if (key == "clip_time") {
    c.clip_time = parse_u64(value, key);
  } else if (key == "gamma") {
    c.gamma = parse_double(value, key);
  } else if (key == "kappa") {
    c.kappa = parse_double(value, key);
  } else if (key == "lambda") {
    c.lambda = parse_double(value, key);
  } else if (key == "ei_lr") {
    c.ei_lr = parse_double(value, key);
  } else if (key == "sr_lr") {
    c.sr_lr = parse_double(value, key);
  } else if (key == "batch") {
    c.batch = parse_u64(value, key);
  } else if (key == "ei_epochs") {
    c.ei_epochs = parse_u64(value, key);
  } else if (key == "sr_epochs") {
    c.sr_epochs = parse_u64(value, key);
  } else if (key == "dropout") {
    c.dropout = parse_double(value, key);
  } else if (key == "ei_early_stop") {
    c.ei_early_stop = parse_double(value, key);
  } else if (key == "seed") {
    c.seed = parse_u64(value, key);
  } else if (key == "time_mode") {
    if (value == "clipped_quotient")
      c.time_mode = relenc::TimeMode::kClippedQuotient;
    else if (value == "literal")
      c.time_mode = relenc::TimeMode::kLiteral;
    else
      throw ConfigError("config: time_mode must be 'clipped_quotient' or 'literal', got '" +
                        value + "'");
  } else if (key == "use_app") {
    c.use_app = parse_bool(value, key);
  } else if (key == "use_poi") {
    c.use_poi = parse_bool(value, key);
  } else if (key == "use_time") {
    c.use_time = parse_bool(value, key);
  } else if (key == "use_abs") {
    c.use_abs = parse_bool(value, key);
  } else if (key == "eval_negatives") {
    c.eval_negatives = parse_u64(value, key);
  } else if (key == "threads") {
    c.threads = parse_u64(value, key);
  } else if (key == "pretrained_dim") {
    c.pretrained_dim = parse_u64(value, key);
  } else if (key == "pretrained_path") {
    c.pretrained_path = value;
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

// REVAMP_SEED beats whatever the file said; useful for sweep scripts.
inline void apply_env_overrides(RunConfig& c) {
  if (const char* env = std::getenv("REVAMP_SEED")) {
    std::string v = detail::trim(env);
    if (v.empty()) return;
    c.seed = detail::parse_u64(v, "REVAMP_SEED");
  }
}

inline RunConfig parse_run_config(std::istream& in, const std::string& origin) {
  RunConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + origin + " line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: " + origin + " line " + std::to_string(line_no) + ": empty key");
    set_config_key(c, key, value);
  }
  return c;
}

// Defaults, then the file (if given), then environment overrides.
inline RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    c = parse_run_config(in, path);
  }
  apply_env_overrides(c);
  c.validate();
  return c;
}

}  // namespace revamp::harness
