#ifndef RECALL_HARNESS_HPP
#define RECALL_HARNESS_HPP

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "recall/env.hpp"
#include "recall/orchestrator.hpp"

namespace recall::harness {

// Schema violations carry the offending field so the CLI can name it.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnvSpec {
  std::string kind = "four_room";  // or "point_mass"
  int size = 11;                   // four_room grid side
  double slip = 0.0;
  int max_steps = -1;              // <= 0: the env's own default
  double noise_std = 0.0;          // point_mass only
};

struct ExperimentConfig {
  std::string experiment = "run";
  EnvSpec env;
  std::string method = "baseline_ac";  // recall_traces | per | random_backtrack
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  orchestrator::LoopConfig loop;
  std::string out_dir = "results";

  void validate() const;  // throws ConfigError
};

// JSON <-> config. Unknown keys anywhere are rejected with the field name.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_json(const ExperimentConfig& cfg);  // canonical form

// FNV-1a over the canonical JSON; recorded in summaries for replay checks.
std::string config_hash(const ExperimentConfig& cfg);

std::unique_ptr<Env> make_env(const EnvSpec& spec);

// Prioritized-replay settings follow the grid size (bigger mazes need the
// sharper alpha); entropy is disabled for this method.
orchestrator::PerConfig per_config_for(const EnvSpec& spec);

// Default per-size env-step budget used when a config or suite does not pin
// one explicitly.
long default_budget(const EnvSpec& spec);

// ---------------------------------------------------------------------------
// Curve summaries

// Piecewise-constant integral of episode return over env steps, normalized
// by the budget (an aborted run scores only what it banked).
double auc_return(const std::vector<orchestrator::EpisodeRow>& rows, long budget);

// First env-step count at which the trailing `window`-episode mean return
// reaches `threshold`; `budget` when it never does.
long steps_to_threshold(const std::vector<orchestrator::EpisodeRow>& rows,
                        long budget, double threshold = 0.9, int window = 10);

double final_return(const std::vector<orchestrator::EpisodeRow>& rows,
                    int window = 10);

// ---------------------------------------------------------------------------
// Artifacts

std::string rows_to_csv(const std::vector<orchestrator::EpisodeRow>& rows);
std::vector<orchestrator::EpisodeRow> rows_from_csv(const std::string& text);

std::string visits_to_csv(const orchestrator::RunMetrics& m);
std::string visits_to_pgm(const std::vector<long>& visitation, int rows, int cols);

// Write-then-rename so an interrupted run never leaves a truncated file
// under the final name.
void write_file_atomic(const std::string& path, const std::string& content);

struct RunArtifacts {
  std::string csv_path;
  std::string visits_path;
  std::string summary_path;
  orchestrator::RunMetrics metrics;
};

// One (method, seed) run: trains, then writes curve CSV, visitation CSV, and
// summary JSON under cfg.out_dir.
RunArtifacts execute_run(const ExperimentConfig& cfg, std::uint64_t seed);

// All seeds of the config, honoring the RECALL_RL_THREADS cap. Returns the
// number of aborted runs (0 = clean).
int run_experiment(const ExperimentConfig& cfg);

int thread_cap();

// ---------------------------------------------------------------------------
// Plot-ready data

struct BandPoint {
  int episode = 0;
  double env_steps_mean = 0.0;
  double return_mean = 0.0;    // across seeds, of trailing-window means
  double return_stderr = 0.0;  // 0 when only one seed
  int n_seeds = 0;
};

// Trailing-window smoothing per seed, then mean +/- stderr across seeds,
// aligned by episode index up to the shortest run.
std::vector<BandPoint> aggregate_curves(
    const std::vector<std::vector<orchestrator::EpisodeRow>>& runs, int window = 10);

std::string band_to_csv(const std::vector<BandPoint>& band);

// Scans `dir` for `<group>_seed<k>.csv` metric files, writes per-group
// `<group>_curve.csv` bands and a PGM next to every `*_visits.csv`.
// Returns 0 on success, nonzero when nothing usable is found.
int plot_data(const std::string& dir);

// ---------------------------------------------------------------------------
// Suites

// Predefined comparison grids: trace_length {1,3,5,10}, update_ratio
// {5,2,1,1/2,1/5}, random_backward {learned, random}, per_compare
// {recall, per, baseline}. `steps` <= 0 picks the per-size default.
// Writes per-run artifacts plus <suite>_summary.json into out_dir.
int ablate(const std::string& suite, int env_size, long steps, int n_seeds,
           const std::string& out_dir);

// Identity/oracle suites: "elbo", "boltzmann", "gradients". Prints one
// [PASS]/[FAIL] line per check; returns 0 when everything passes.
int verify_suite(const std::string& name);

}  // namespace recall::harness

#endif
