// Command-line front end for backward-trace experiments: run configs,
// ablation suites, plot-ready aggregation, and self-verification.
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "recall/harness.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  recall::harness::ExperimentConfig cfg = recall::harness::load_config(config_path);
  std::printf("experiment %s: method=%s env=%s seeds=%zu hash=%s\n",
              cfg.experiment.c_str(), cfg.method.c_str(), cfg.env.kind.c_str(),
              cfg.seeds.size(), recall::harness::config_hash(cfg).c_str());
  int aborted = recall::harness::run_experiment(cfg);
  if (aborted > 0) {
    std::fprintf(stderr, "%d run(s) aborted; partial metrics kept in %s\n", aborted,
                 cfg.out_dir.c_str());
    return 1;
  }
  std::printf("all %zu run(s) finished; artifacts in %s\n", cfg.seeds.size(),
              cfg.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recall_rl: backward-trace augmented actor-critic experiments"};
  app.require_subcommand(1);

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "train every seed of a JSON experiment config");
  run->add_option("--config", config_path, "path to the experiment JSON")->required();

  std::string suite;
  int env_size = 11;
  long steps = 0;
  int n_seeds = 5;
  std::string out_dir = "results";
  CLI::App* ablate = app.add_subcommand("ablate", "run a predefined comparison grid");
  ablate->add_option("--suite", suite,
                     "trace_length | update_ratio | random_backward | per_compare")
      ->required();
  ablate->add_option("--env-size", env_size, "four-room grid side (odd, >= 7)");
  ablate->add_option("--steps", steps, "env-step budget per run (0 = per-size default)");
  ablate->add_option("--seeds", n_seeds, "seeds 0..N-1 per variant");
  ablate->add_option("--out", out_dir, "output directory");

  std::string plot_dir;
  CLI::App* plot = app.add_subcommand("plot-data", "aggregate run CSVs into curve bands and heatmaps");
  plot->add_option("--dir", plot_dir, "directory holding <group>_seed<k>.csv files")->required();

  std::string verify_name;
  CLI::App* verify = app.add_subcommand("verify", "run an exact self-check suite");
  verify->add_option("--suite", verify_name, "elbo | boltzmann | gradients")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path);
    if (*ablate)
      return recall::harness::ablate(suite, env_size, steps, n_seeds, out_dir);
    if (*plot) return recall::harness::plot_data(plot_dir);
    if (*verify) return recall::harness::verify_suite(verify_name);
  } catch (const recall::harness::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
