// Command-line front end: train, eval, sweep, verify-theory.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "aexp/config.hpp"
#include "aexp/harness.hpp"
#include "aexp/theory.hpp"

namespace {

using namespace aexp;

ExperimentConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig c = path.empty() ? ExperimentConfig{} : load_config(path);
  for (const auto& kv : overrides) apply_override(c, kv);
  return resolve(c);
}

void print_row(const EvalRow& r) {
  std::cout << "seed " << r.seed << " step " << r.step << " return " << format_double(r.mean_return) << " sd "
            << format_double(r.sd_return) << std::endl;
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, const std::string& seed,
              bool quiet) {
  ExperimentConfig c = build_config(config, overrides);
  if (!seed.empty()) {
    set_key(c, "seed", seed);
    c = resolve(c);
  }
  auto run = train(c, quiet ? EvalCallback{} : EvalCallback(print_row));
  const auto dir = run_dir(c);
  emit_results(run, dir);
  std::cout << "wrote " << dir.string() << " (final return " << format_double(run.rows.back().mean_return)
            << ", skipped updates " << run.agent->skipped_updates() << ")" << std::endl;
  return 0;
}

int cmd_eval(const std::string& snapshot, const std::string& env_name, int episodes, std::uint64_t seed) {
  auto snap = load_snapshot(snapshot);
  auto env = make_environment(env_name.empty() ? snap.config.env : env_name);
  auto trained = make_environment(snap.config.env);
  if (env->spec().state_dim != trained->spec().state_dim || env->spec().action_dim != trained->spec().action_dim)
    throw ConfigError("eval: snapshot was trained on " + snap.config.env + ", incompatible with " + env_name);
  Rng rng = named_stream(seed, "eval-cli");
  const auto res = evaluate(*snap.agent, *env, episodes, rng);
  std::cout << "mean_return " << format_double(res.mean) << "\nsd_return " << format_double(res.sd) << "\n";
  for (std::size_t i = 0; i < res.returns.size(); ++i)
    std::cout << "episode " << i << " " << format_double(res.returns[i]) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config, const std::vector<std::string>& overrides, const std::string& seeds,
              unsigned workers, bool quiet) {
  ExperimentConfig c = build_config(config, overrides);
  if (!seeds.empty()) {
    set_key(c, "seeds", seeds);
    c = resolve(c);
  }
  auto res = sweep(c, workers, true, quiet ? EvalCallback{} : EvalCallback(print_row));
  for (const auto& run : res.runs)
    std::cout << "seed " << run.config.seed << " final " << format_double(run.rows.back().mean_return) << "\n";
  std::cout << "wrote " << c.out_dir << "/curve.csv" << std::endl;
  return 0;
}

int cmd_theory(const std::vector<std::string>& suites, const std::string& out) {
  const auto& names = suites.empty() ? theory::suite_names() : suites;
  ensure_dir(out);
  std::string summary;
  bool ok = true;
  for (const auto& name : names) {
    const auto rep = theory::run_suite(name);
    write_text(std::filesystem::path(out) / (rep.check + ".csv"), rep.csv());
    summary += rep.summary();
    std::cout << rep.summary() << std::flush;
    ok = ok && rep.passed;
  }
  write_text(std::filesystem::path(out) / "summary.txt", summary);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Actor-Expert experiments"};
  app.require_subcommand(1);

  std::string config, seed, snapshot, env_name, seeds, theory_out = "theory";
  std::vector<std::string> overrides, suites;
  int episodes = 10;
  std::uint64_t eval_seed = 0;
  unsigned workers = 0;
  bool quiet = false;

  auto* train_cmd = app.add_subcommand("train", "train one seed");
  train_cmd->add_option("--config", config, "config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seed, "run seed");
  train_cmd->add_option("--override", overrides, "key=value, repeatable");
  train_cmd->add_flag("--quiet", quiet, "no per-evaluation output");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a snapshot greedily");
  eval_cmd->add_option("--snapshot", snapshot, "snapshot.txt from a run")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--env", env_name, "environment (defaults to the training one)");
  eval_cmd->add_option("--episodes", episodes, "episodes")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "train a range of seeds");
  sweep_cmd->add_option("--config", config, "config file")->check(CLI::ExistingFile);
  sweep_cmd->add_option("--seeds", seeds, "inclusive range a..b");
  sweep_cmd->add_option("--override", overrides, "key=value, repeatable");
  sweep_cmd->add_option("--workers", workers, "worker threads (default: hardware threads)");
  sweep_cmd->add_flag("--quiet", quiet, "no per-evaluation output");

  auto* theory_cmd = app.add_subcommand("verify-theory", "run the theory checks");
  theory_cmd->add_option("--suite", suites, "quantile|pinball|minimizer|concentration|tracking|timescale");
  theory_cmd->add_option("--out", theory_out, "report directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(config, overrides, seed, quiet);
    if (*eval_cmd) return cmd_eval(snapshot, env_name, episodes, eval_seed);
    if (*sweep_cmd) return cmd_sweep(config, overrides, seeds, workers, quiet);
    if (*theory_cmd) return cmd_theory(suites, theory_out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
