#pragma once

// Flat `key = value` experiment configuration. Lines starting with '#'
// are comments, unknown keys are errors. Agent- and environment-specific
// presets fill every key that was not set explicitly.

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aexp/errors.hpp"
#include "aexp/numfmt.hpp"

namespace aexp {

struct ExperimentConfig {
  std::string env = "bimodal";
  std::string agent = "ae";
  std::uint64_t seed = 0;
  std::uint64_t seed_first = 0;  // sweep range (inclusive)
  std::uint64_t seed_last = 9;
  long total_steps = 20000;
  long eval_period = 200;
  int eval_episodes = 10;
  long warmup = 1000;
  int batch_size = 32;
  long buffer_size = 1000000;
  int hidden = 200;
  double gamma = 0.99;
  double tau = 0.01;
  // actor / schedule
  std::string schedule = "constant";
  double actor_lr = 1e-3;
  double expert_lr = 1e-2;
  double slow_rate = 1.0;
  int components = 2;
  int n_samples = 30;
  double rho = 0.2;
  bool refine = false;
  int refine_steps = 10;
  double ascent_lr = -1.0;  // < 0: 0.01 * action box width
  int max_ascent = 0;       // ascent steps from the mode for greedy / bootstrap actions
  double w_max = 1e6;
  bool actor_adam = true;
  // exploration
  std::string exploration = "policy";
  double ou_mu = 0.0;
  double ou_theta = 0.15;
  double ou_sigma = 0.2;
  // baselines
  double naf_scale = 1.0;
  int qtopt_iters = 2;
  int qtopt_samples = 64;
  int qtopt_elite = 6;
  int n_baseline = 30;
  double grid_step = 0.001;
  // harness
  double stop_return = 0.0;  // with stop_early: end the run at the first eval >= this
  bool stop_early = false;
  std::string out_dir = "runs";
  bool write_plot = true;
  bool write_snapshot = true;

  std::set<std::string> explicit_keys;
};

namespace detail {

struct ConfigKey {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

template <class T>
ConfigKey int_key(std::string name, T ExperimentConfig::*field) {
  return {name,
          [name, field](ExperimentConfig& c, const std::string& v) {
            try {
              c.*field = static_cast<T>(parse_int(v));
            } catch (const ConfigError&) {
              throw ConfigError("config: " + name + " expects an integer, got '" + v + "'");
            }
          },
          [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

inline ConfigKey real_key(std::string name, double ExperimentConfig::*field) {
  return {name,
          [name, field](ExperimentConfig& c, const std::string& v) {
            try {
              c.*field = parse_double(v);
            } catch (const ConfigError&) {
              throw ConfigError("config: " + name + " expects a number, got '" + v + "'");
            }
          },
          [field](const ExperimentConfig& c) { return format_double(c.*field); }};
}

inline ConfigKey bool_key(std::string name, bool ExperimentConfig::*field) {
  return {name, [name, field](ExperimentConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
          [field](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

inline ConfigKey text_key(std::string name, std::string ExperimentConfig::*field) {
  return {name, [field](ExperimentConfig& c, const std::string& v) { c.*field = v; },
          [field](const ExperimentConfig& c) { return c.*field; }};
}

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  static const std::vector<ConfigKey> keys = {
      text_key("env", &C::env),
      text_key("agent", &C::agent),
      int_key("seed", &C::seed),
      {"seeds",
       [](C& c, const std::string& v) {
         const auto dots = v.find("..");
         try {
           if (dots == std::string::npos) {
             c.seed_first = c.seed_last = static_cast<std::uint64_t>(parse_int(v));
           } else {
             c.seed_first = static_cast<std::uint64_t>(parse_int(v.substr(0, dots)));
             c.seed_last = static_cast<std::uint64_t>(parse_int(v.substr(dots + 2)));
           }
         } catch (const ConfigError&) {
           throw ConfigError("config: seeds expects 'a..b', got '" + v + "'");
         }
         if (c.seed_last < c.seed_first) throw ConfigError("config: seeds range is empty: " + v);
       },
       [](const C& c) { return std::to_string(c.seed_first) + ".." + std::to_string(c.seed_last); }},
      int_key("total_steps", &C::total_steps),
      int_key("eval_period", &C::eval_period),
      int_key("eval_episodes", &C::eval_episodes),
      int_key("warmup", &C::warmup),
      int_key("batch_size", &C::batch_size),
      int_key("buffer_size", &C::buffer_size),
      int_key("hidden", &C::hidden),
      real_key("gamma", &C::gamma),
      real_key("tau", &C::tau),
      text_key("schedule", &C::schedule),
      real_key("actor_lr", &C::actor_lr),
      real_key("expert_lr", &C::expert_lr),
      real_key("slow_rate", &C::slow_rate),
      int_key("components", &C::components),
      int_key("n_samples", &C::n_samples),
      real_key("rho", &C::rho),
      bool_key("refine", &C::refine),
      int_key("refine_steps", &C::refine_steps),
      real_key("ascent_lr", &C::ascent_lr),
      int_key("max_ascent", &C::max_ascent),
      real_key("w_max", &C::w_max),
      bool_key("actor_adam", &C::actor_adam),
      text_key("exploration", &C::exploration),
      real_key("ou_mu", &C::ou_mu),
      real_key("ou_theta", &C::ou_theta),
      real_key("ou_sigma", &C::ou_sigma),
      real_key("naf_scale", &C::naf_scale),
      int_key("qtopt_iters", &C::qtopt_iters),
      int_key("qtopt_samples", &C::qtopt_samples),
      int_key("qtopt_elite", &C::qtopt_elite),
      int_key("n_baseline", &C::n_baseline),
      real_key("grid_step", &C::grid_step),
      real_key("stop_return", &C::stop_return),
      bool_key("stop_early", &C::stop_early),
      text_key("out_dir", &C::out_dir),
      bool_key("write_plot", &C::write_plot),
      bool_key("write_snapshot", &C::write_snapshot),
  };
  return keys;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void set_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name != key) continue;
    k.set(c, value);
    c.explicit_keys.insert(key);
    return;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string get_key(const ExperimentConfig& c, const std::string& key) {
  for (const auto& k : detail::config_keys())
    if (k.name == key) return k.get(c);
  throw ConfigError("config: unknown key '" + key + "'");
}

// "key=value" from the command line.
inline void apply_override(ExperimentConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + kv);
  set_key(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

inline void parse_config_text(ExperimentConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_key(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  ExperimentConfig c;
  parse_config_text(c, ss.str());
  return c;
}

// Best rates per (agent, env); only keys the user did not set are touched.
inline void apply_presets(ExperimentConfig& c) {
  auto preset = [&](const std::string& key, const std::string& value) {
    if (!c.explicit_keys.count(key)) {
      set_key(c, key, value);
      c.explicit_keys.erase(key);
    }
  };
  const bool pend = c.env == "pendulum";
  preset("eval_period", pend ? "1000" : "200");
  preset("total_steps", pend ? "150000" : "20000");
  if (c.agent == "ae") {
    preset("actor_lr", "1e-3");
    preset("expert_lr", "1e-2");
    preset("n_samples", "30");
    preset("rho", "0.2");
    preset("refine", "false");
  } else if (c.agent == "ae-plus") {
    preset("actor_lr", "1e-3");
    preset("expert_lr", "1e-2");
    preset("n_samples", "10");
    preset("rho", "0.6");
    preset("refine", "true");
  } else if (c.agent == "qtopt") {
    preset("expert_lr", pend ? "1e-2" : "1e-3");
  } else if (c.agent == "naf") {
    // NAF explores with its own Gaussian from the first step.
    preset("warmup", "0");
    preset("expert_lr", pend ? "1e-3" : "1e-2");
    preset("naf_scale", pend ? "1.0" : "0.1");
  } else if (c.agent == "actor-critic") {
    preset("actor_lr", "1e-3");
    preset("expert_lr", "1e-2");
  } else if (c.agent == "optimal-q") {
    preset("expert_lr", "1e-2");
    preset("exploration", "ou");
  }
}

inline void validate(const ExperimentConfig& c) {
  static const std::set<std::string> agents = {"ae", "ae-plus", "qtopt", "naf", "actor-critic", "optimal-q"};
  if (c.env != "bimodal" && c.env != "pendulum") throw ConfigError("unknown environment: " + c.env);
  if (!agents.count(c.agent)) throw ConfigError("unknown agent: " + c.agent);
  if (c.exploration != "policy" && c.exploration != "ou")
    throw ConfigError("exploration must be 'policy' or 'ou', got " + c.exploration);
  if (c.schedule != "constant" && c.schedule != "theory")
    throw ConfigError("schedule must be 'constant' or 'theory', got " + c.schedule);
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  positive(c.total_steps >= 0, "total_steps must be >= 0");
  positive(c.eval_period >= 1, "eval_period must be >= 1");
  positive(c.eval_episodes >= 1, "eval_episodes must be >= 1");
  positive(c.warmup >= 0, "warmup must be >= 0");
  positive(c.batch_size >= 1, "batch_size must be >= 1");
  positive(c.buffer_size >= 1, "buffer_size must be >= 1");
  positive(c.hidden >= 1, "hidden must be >= 1");
  positive(c.gamma >= 0.0 && c.gamma < 1.0, "gamma must be in [0,1)");
  positive(c.tau >= 0.0 && c.tau <= 1.0, "tau must be in [0,1]");
  positive(c.actor_lr > 0.0 && c.expert_lr > 0.0, "learning rates must be positive");
  positive(c.slow_rate > 0.0 && c.slow_rate <= 1.0, "slow_rate must be in (0,1]");
  positive(c.components >= 1, "components must be >= 1");
  positive(c.n_samples >= 1, "n_samples must be >= 1");
  positive(c.rho > 0.0 && c.rho <= 1.0, "rho must be in (0,1]");
  positive(c.refine_steps >= 0 && c.max_ascent >= 0, "ascent step counts must be >= 0");
  positive(c.w_max > 0.0, "w_max must be positive");
  positive(c.naf_scale >= 0.0, "naf_scale must be >= 0");
  positive(c.qtopt_iters >= 1 && c.qtopt_samples >= 1 && c.qtopt_elite >= 1, "qtopt counts must be positive");
  positive(c.n_baseline >= 1, "n_baseline must be >= 1");
  positive(c.grid_step > 0.0, "grid_step must be positive");
}

inline ExperimentConfig resolve(ExperimentConfig c) {
  apply_presets(c);
  validate(c);
  return c;
}

// Resolved configuration, one `key = value` per line in declaration order.
inline std::string echo_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

}  // namespace aexp
