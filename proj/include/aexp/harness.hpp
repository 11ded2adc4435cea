#pragma once

// Training and offline evaluation loops, run artifacts and snapshots.
//
// All randomness in a run comes from named streams of the run seed:
//   env reset, behaviour policy, replay sampling, learner updates, eval.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aexp/agents.hpp"
#include "aexp/config.hpp"
#include "aexp/env.hpp"
#include "aexp/errors.hpp"
#include "aexp/numfmt.hpp"
#include "aexp/replay.hpp"
#include "aexp/rng.hpp"

namespace aexp {

struct EvalRow {
  long step = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double sd_return = 0.0;
};

struct EvalResult {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> returns;
};

/// Mean undiscounted return of the greedy policy on a private copy of env.
inline EvalResult evaluate(const Agent& agent, const Environment& proto, int episodes, Rng& rng) {
  require(episodes >= 1, "evaluate: episodes must be >= 1");
  auto env = proto.clone();
  EvalResult res;
  for (int ep = 0; ep < episodes; ++ep) {
    Vec obs = env->reset(rng);
    double total = 0.0;
    for (int t = 0; t < env->spec().max_steps; ++t) {
      const auto r = env->step(agent.greedy(obs, rng));
      total += r.reward;
      obs = r.obs;
      if (r.done) break;
    }
    res.returns.push_back(total);
  }
  const double n = static_cast<double>(episodes);
  for (double x : res.returns) res.mean += x / n;
  double ss = 0.0;
  for (double x : res.returns) ss += (x - res.mean) * (x - res.mean);
  res.sd = episodes > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return res;
}

inline Vec uniform_action(const ActionBox& box, Rng& rng) {
  Vec a(box.dim());
  for (int j = 0; j < box.dim(); ++j) a(j) = uniform(rng, box.low(j), box.high(j));
  return a;
}

struct RunResult {
  ExperimentConfig config;
  std::vector<EvalRow> rows;
  std::unique_ptr<Agent> agent;
  long steps_done = 0;
  double max_abs_actor_weight = 0.0;  // largest seen at any evaluation
};

using EvalCallback = std::function<void(const EvalRow&)>;

namespace detail {

inline bool all_networks_finite(const Agent& agent) {
  for (const auto* n : agent.networks())
    if (!nn::all_finite(*n)) return false;
  return true;
}

}  // namespace detail

/// Runs one seed of an experiment. The config must already be resolved.
inline RunResult train(const ExperimentConfig& config, const EvalCallback& on_eval = {}) {
  validate(config);
  const std::uint64_t seed = config.seed;
  auto env = make_environment(config.env);
  const EnvSpec& spec = env->spec();

  RunResult run;
  run.config = config;
  run.agent = make_agent(config, spec, seed);
  Agent& agent = *run.agent;
  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_size));

  Rng env_rng = named_stream(seed, "env");
  Rng act_rng = named_stream(seed, "policy");
  Rng buf_rng = named_stream(seed, "buffer");
  Rng upd_rng = named_stream(seed, "update");

  auto eval_now = [&](long step) {
    if (!detail::all_networks_finite(agent))
      throw NumericError("train: non-finite network parameters at step " + std::to_string(step));
    Rng eval_rng = named_stream(seed, "eval", static_cast<std::uint64_t>(step));
    const auto res = evaluate(agent, *env, config.eval_episodes, eval_rng);
    if (!std::isfinite(res.mean)) throw NumericError("train: non-finite evaluation return at step " + std::to_string(step));
    EvalRow row{step, seed, res.mean, res.sd};
    run.rows.push_back(row);
    run.max_abs_actor_weight = std::max(run.max_abs_actor_weight, agent.max_abs_actor_weight());
    if (on_eval) on_eval(row);
    return row;
  };

  const auto first = eval_now(0);
  if (config.stop_early && first.mean_return >= config.stop_return) return run;
  Vec obs = env->reset(env_rng);
  agent.begin_episode();
  for (long step = 1; step <= config.total_steps; ++step) {
    const Vec action = step <= config.warmup ? uniform_action(spec.box, act_rng) : agent.act(obs, act_rng);
    const auto r = env->step(action);
    buffer.push({obs, action, r.reward, r.obs, r.terminal});
    if (r.done) {
      obs = env->reset(env_rng);
      agent.begin_episode();
    } else {
      obs = r.obs;
    }
    if (step > config.warmup) agent.update(buffer.sample_batch(static_cast<std::size_t>(config.batch_size), buf_rng), upd_rng);
    run.steps_done = step;
    if (step % config.eval_period == 0) {
      const auto row = eval_now(step);
      if (config.stop_early && row.mean_return >= config.stop_return) break;
    }
  }
  return run;
}

// ---- artifacts ----------------------------------------------------------------

inline std::string curve_csv(const std::vector<EvalRow>& rows) {
  std::string out = "step,seed,mean_return,sd_return\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + std::to_string(r.seed) + "," + format_double(r.mean_return) + "," +
           format_double(r.sd_return) + "\n";
  return out;
}

inline std::vector<EvalRow> parse_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,seed,mean_return,sd_return") throw IoError("curve.csv: bad header");
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw IoError("curve.csv: expected 4 columns: " + line);
    try {
      rows.push_back({static_cast<long>(parse_int(cells[0])), static_cast<std::uint64_t>(parse_int(cells[1])),
                      parse_double(cells[2]), parse_double(cells[3])});
    } catch (const ConfigError& e) {
      throw IoError(std::string("curve.csv: ") + e.what());
    }
  }
  return rows;
}

// Standalone SVG line plot, one polyline per seed.
inline std::string curve_svg(const std::vector<EvalRow>& rows, const std::string& title) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 30, B = 40;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!rows.empty()) {
    x0 = x1 = static_cast<double>(rows[0].step);
    y0 = y1 = rows[0].mean_return;
    for (const auto& r : rows) {
      x0 = std::min(x0, static_cast<double>(r.step));
      x1 = std::max(x1, static_cast<double>(r.step));
      y0 = std::min(y0, r.mean_return);
      y1 = std::max(y1, r.mean_return);
    }
  }
  if (x1 - x0 <= 0) x1 = x0 + 1;
  if (y1 - y0 <= 0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::vector<std::uint64_t> seeds;
  for (const auto& r : rows)
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << L << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << L << "\" y=\"" << H - 10 << "\" font-size=\"11\">" << format_double(x0) << "</text>\n";
  s << "<text x=\"" << W - R - 60 << "\" y=\"" << H - 10 << "\" font-size=\"11\">" << format_double(x1)
    << " steps</text>\n";
  s << "<text x=\"4\" y=\"" << T + 4 << "\" font-size=\"11\">" << format_double(y1) << "</text>\n";
  s << "<text x=\"4\" y=\"" << H - B << "\" font-size=\"11\">" << format_double(y0) << "</text>\n";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    s << "<polyline data-seed=\"" << seeds[i] << "\" fill=\"none\" stroke=\"" << colors[i % 10]
      << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& r : rows) {
      if (r.seed != seeds[i]) continue;
      s << (first ? "" : " ") << px(static_cast<double>(r.step)) << "," << py(r.mean_return);
      first = false;
    }
    s << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// ---- snapshots ----------------------------------------------------------------
//
//   aexp-snapshot 1
//   config <line count>
//   <resolved config, key = value>
//   networks
//   <networks of the agent, in its declared order>

inline void write_snapshot(std::ostream& os, const ExperimentConfig& c, const Agent& agent) {
  const std::string echo = echo_config(c);
  os << "aexp-snapshot 1\nconfig " << std::count(echo.begin(), echo.end(), '\n') << "\n" << echo << "networks\n";
  agent.save(os);
}

struct Snapshot {
  ExperimentConfig config;
  std::unique_ptr<Agent> agent;
};

inline Snapshot read_snapshot(std::istream& is) {
  std::string magic, word;
  int version = 0;
  std::size_t lines = 0;
  if (!(is >> magic >> version) || magic != "aexp-snapshot" || version != 1) throw IoError("snapshot: bad header");
  if (!(is >> word >> lines) || word != "config") throw IoError("snapshot: missing config block");
  std::string line;
  std::getline(is, line);
  std::string text;
  for (std::size_t i = 0; i < lines; ++i) {
    if (!std::getline(is, line)) throw IoError("snapshot: truncated config block");
    text += line + "\n";
  }
  if (!(is >> word) || word != "networks") throw IoError("snapshot: missing networks block");
  Snapshot s;
  try {
    parse_config_text(s.config, text);
    validate(s.config);
  } catch (const ConfigError& e) {
    throw IoError(std::string("snapshot: ") + e.what());
  }
  auto env = make_environment(s.config.env);
  s.agent = make_agent(s.config, env->spec(), s.config.seed);
  s.agent->load(is);
  return s;
}

inline Snapshot load_snapshot(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot read snapshot " + p.string());
  return read_snapshot(f);
}

inline std::filesystem::path run_dir(const ExperimentConfig& c) {
  return std::filesystem::path(c.out_dir) / (c.agent + "-" + c.env + "-seed" + std::to_string(c.seed));
}

/// Writes curve.csv, config.echo and (optionally) curve.svg and snapshot.txt.
inline void emit_results(const RunResult& run, const std::filesystem::path& dir) {
  if (run.rows.empty()) throw ContractError("emit_results: no evaluation rows");
  ensure_dir(dir);
  write_text(dir / "curve.csv", curve_csv(run.rows));
  write_text(dir / "config.echo", echo_config(run.config));
  if (run.config.write_plot)
    write_text(dir / "curve.svg", curve_svg(run.rows, run.config.agent + " on " + run.config.env));
  if (run.config.write_snapshot && run.agent) {
    std::ostringstream os;
    write_snapshot(os, run.config, *run.agent);
    write_text(dir / "snapshot.txt", os.str());
  }
}

struct SweepResult {
  std::vector<EvalRow> rows;  // by seed, then step
  std::vector<RunResult> runs;
};

/// One run per seed in [seed_first, seed_last] on a pool of worker threads.
/// Every run writes its own directory; the combined curve goes to out_dir.
inline SweepResult sweep(const ExperimentConfig& base, unsigned workers = 0, bool emit = true,
                         const EvalCallback& on_eval = {}) {
  validate(base);
  const std::uint64_t n = base.seed_last - base.seed_first + 1;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::uint64_t>(workers, n));

  SweepResult out;
  out.runs.resize(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::uint64_t> next{0};
  std::mutex cb_mutex;
  auto worker = [&] {
    for (std::uint64_t i = next++; i < n; i = next++) {
      try {
        ExperimentConfig c = base;
        c.seed = base.seed_first + i;
        EvalCallback cb;
        if (on_eval)
          cb = [&](const EvalRow& r) {
            std::lock_guard lock(cb_mutex);
            on_eval(r);
          };
        out.runs[i] = train(c, cb);
        if (emit) emit_results(out.runs[i], run_dir(c));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (const auto& r : out.runs) out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  if (emit) {
    ensure_dir(base.out_dir);
    write_text(std::filesystem::path(base.out_dir) / "curve.csv", curve_csv(out.rows));
    write_text(std::filesystem::path(base.out_dir) / "config.echo", echo_config(base));
    if (base.write_plot)
      write_text(std::filesystem::path(base.out_dir) / "curve.svg",
                 curve_svg(out.rows, base.agent + " on " + base.env));
  }
  return out;
}

}  // namespace aexp
