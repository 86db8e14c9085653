#include "recall/harness.hpp"

#include <atomic>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "recall/agent.hpp"
#include "recall/backtrack.hpp"
#include "recall/boltzmann.hpp"
#include "recall/buffer.hpp"
#include "recall/fdcheck.hpp"
#include "recall/util.hpp"

namespace recall::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using orchestrator::EpisodeRow;

// ---------------------------------------------------------------------------
// Config schema

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& scope) {
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError("unknown field \"" + scope + item.key() + "\"");
    }
  }
}

template <typename T>
void read_field(const json& obj, const std::string& scope, const char* name,
                T& out) {
  if (!obj.contains(name)) return;
  try {
    obj.at(name).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError("field \"" + scope + name + "\" has the wrong type");
  }
}

bool safe_id(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') {
      return false;
    }
  }
  return true;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!safe_id(experiment)) {
    throw ConfigError("field \"experiment\" must be a nonempty [A-Za-z0-9_-] id");
  }
  static const std::set<std::string> kMethods{"baseline_ac", "recall_traces",
                                              "per", "random_backtrack"};
  if (!kMethods.count(method)) {
    throw ConfigError("field \"method\" must be one of baseline_ac, "
                      "recall_traces, per, random_backtrack");
  }
  if (env.kind != "four_room" && env.kind != "point_mass") {
    throw ConfigError("field \"env.kind\" must be four_room or point_mass");
  }
  if (seeds.empty()) throw ConfigError("field \"seeds\" must be nonempty");
  if (out_dir.empty()) throw ConfigError("field \"out_dir\" must be nonempty");
  try {
    loop.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("field \"loop\": ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  check_keys(j, {"experiment", "env", "method", "seeds", "loop", "out_dir"}, "");

  ExperimentConfig cfg;
  read_field(j, "", "experiment", cfg.experiment);
  read_field(j, "", "method", cfg.method);
  read_field(j, "", "out_dir", cfg.out_dir);
  read_field(j, "", "seeds", cfg.seeds);

  if (j.contains("env")) {
    const json& e = j.at("env");
    if (!e.is_object()) throw ConfigError("field \"env\" must be an object");
    check_keys(e, {"kind", "size", "slip", "max_steps", "noise_std"}, "env.");
    read_field(e, "env.", "kind", cfg.env.kind);
    read_field(e, "env.", "size", cfg.env.size);
    read_field(e, "env.", "slip", cfg.env.slip);
    read_field(e, "env.", "max_steps", cfg.env.max_steps);
    read_field(e, "env.", "noise_std", cfg.env.noise_std);
  }
  if (j.contains("loop")) {
    const json& l = j.at("loop");
    if (!l.is_object()) throw ConfigError("field \"loop\" must be an object");
    check_keys(l,
               {"n_traces", "trace_length", "rl_steps_per_cycle",
                "backward_steps_per_cycle", "imitation_updates_per_cycle",
                "curriculum_pct", "env_to_trace_ratio", "total_env_steps",
                "imitation_lr", "seed_temperature"},
               "loop.");
    read_field(l, "loop.", "n_traces", cfg.loop.n_traces);
    read_field(l, "loop.", "trace_length", cfg.loop.trace_length);
    read_field(l, "loop.", "rl_steps_per_cycle", cfg.loop.rl_steps_per_cycle);
    read_field(l, "loop.", "backward_steps_per_cycle",
               cfg.loop.backward_steps_per_cycle);
    read_field(l, "loop.", "imitation_updates_per_cycle",
               cfg.loop.imitation_updates_per_cycle);
    read_field(l, "loop.", "curriculum_pct", cfg.loop.curriculum_pct);
    read_field(l, "loop.", "env_to_trace_ratio", cfg.loop.env_to_trace_ratio);
    read_field(l, "loop.", "total_env_steps", cfg.loop.total_env_steps);
    read_field(l, "loop.", "imitation_lr", cfg.loop.imitation_lr);
    read_field(l, "loop.", "seed_temperature", cfg.loop.seed_temperature);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_json(const ExperimentConfig& cfg) {
  json j;  // map-backed: keys come out sorted, so the dump is canonical
  j["experiment"] = cfg.experiment;
  j["env"] = {{"kind", cfg.env.kind},
              {"size", cfg.env.size},
              {"slip", cfg.env.slip},
              {"max_steps", cfg.env.max_steps},
              {"noise_std", cfg.env.noise_std}};
  j["method"] = cfg.method;
  j["seeds"] = cfg.seeds;
  j["loop"] = {{"n_traces", cfg.loop.n_traces},
               {"trace_length", cfg.loop.trace_length},
               {"rl_steps_per_cycle", cfg.loop.rl_steps_per_cycle},
               {"backward_steps_per_cycle", cfg.loop.backward_steps_per_cycle},
               {"imitation_updates_per_cycle", cfg.loop.imitation_updates_per_cycle},
               {"curriculum_pct", cfg.loop.curriculum_pct},
               {"env_to_trace_ratio", cfg.loop.env_to_trace_ratio},
               {"total_env_steps", cfg.loop.total_env_steps},
               {"imitation_lr", cfg.loop.imitation_lr},
               {"seed_temperature", cfg.loop.seed_temperature}};
  j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::string text = config_json(cfg);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::unique_ptr<Env> make_env(const EnvSpec& spec) {
  if (spec.kind == "four_room") {
    return std::make_unique<FourRoomEnv>(spec.size, spec.slip, spec.max_steps);
  }
  if (spec.kind == "point_mass") {
    PointMassEnv::Params p;
    p.noise_std = spec.noise_std;
    if (spec.max_steps > 0) p.max_steps = spec.max_steps;
    return std::make_unique<PointMassEnv>(p);
  }
  throw ConfigError("field \"env.kind\" must be four_room or point_mass");
}

orchestrator::PerConfig per_config_for(const EnvSpec& spec) {
  orchestrator::PerConfig per;
  per.per_beta = 0.1;
  per.episodes_per_update = 3;
  per.capacity = 100000;
  if (spec.kind == "four_room" && spec.size >= 15) {
    per.batch_size = 1000;
    per.per_alpha = 0.95;
  } else if (spec.kind == "four_room" && spec.size >= 13) {
    per.batch_size = 2000;
    per.per_alpha = 0.8;
  } else {
    per.batch_size = 200;
    per.per_alpha = 0.8;
  }
  return per;
}

long default_budget(const EnvSpec& spec) {
  if (spec.kind != "four_room") return 30000;
  if (spec.size <= 11) return 60000;
  if (spec.size <= 13) return 100000;
  if (spec.size <= 15) return 150000;
  return 300000;
}

// ---------------------------------------------------------------------------
// Curve summaries

double auc_return(const std::vector<EpisodeRow>& rows, long budget) {
  if (budget <= 0) throw std::invalid_argument("auc_return: budget must be positive");
  double area = 0.0;
  long prev = 0;
  for (const EpisodeRow& r : rows) {
    area += r.ret * double(r.env_steps - prev);
    prev = r.env_steps;
  }
  return area / double(budget);
}

namespace {
double trailing_mean(const std::vector<EpisodeRow>& rows, std::size_t i, int window) {
  std::size_t lo = i + 1 >= std::size_t(window) ? i + 1 - std::size_t(window) : 0;
  double total = 0.0;
  for (std::size_t k = lo; k <= i; ++k) total += rows[k].ret;
  return total / double(i - lo + 1);
}
}  // namespace

long steps_to_threshold(const std::vector<EpisodeRow>& rows, long budget,
                        double threshold, int window) {
  if (window <= 0) throw std::invalid_argument("steps_to_threshold: bad window");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (trailing_mean(rows, i, window) >= threshold) return rows[i].env_steps;
  }
  return budget;
}

double final_return(const std::vector<EpisodeRow>& rows, int window) {
  if (rows.empty()) return 0.0;
  return trailing_mean(rows, rows.size() - 1, window);
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string rows_to_csv(const std::vector<EpisodeRow>& rows) {
  std::string out =
      "env_steps,episode,return,policy_loss,value_loss,backward_loss,"
      "imitation_loss,distinct_states\n";
  for (const EpisodeRow& r : rows) {
    out += std::to_string(r.env_steps) + "," + std::to_string(r.episode) + "," +
           fmt(r.ret) + "," + fmt(r.policy_loss) + "," + fmt(r.value_loss) + "," +
           fmt(r.backward_loss) + "," + fmt(r.imitation_loss) + "," +
           std::to_string(r.distinct_states) + "\n";
  }
  return out;
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

std::vector<EpisodeRow> rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("env_steps,", 0) != 0) {
    throw std::runtime_error("rows_from_csv: missing header");
  }
  std::vector<EpisodeRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 8) throw std::runtime_error("rows_from_csv: bad row: " + line);
    EpisodeRow r;
    r.env_steps = std::stol(f[0]);
    r.episode = std::stoi(f[1]);
    r.ret = std::stod(f[2]);
    r.policy_loss = std::stod(f[3]);
    r.value_loss = std::stod(f[4]);
    r.backward_loss = std::stod(f[5]);
    r.imitation_loss = std::stod(f[6]);
    r.distinct_states = std::stol(f[7]);
    rows.push_back(r);
  }
  return rows;
}

std::string visits_to_csv(const orchestrator::RunMetrics& m) {
  std::string out;
  for (int r = 0; r < m.visit_rows; ++r) {
    for (int c = 0; c < m.visit_cols; ++c) {
      if (c) out += ",";
      out += std::to_string(m.visitation[std::size_t(r) * m.visit_cols + c]);
    }
    out += "\n";
  }
  return out;
}

std::string visits_to_pgm(const std::vector<long>& visitation, int rows, int cols) {
  if (rows <= 0 || cols <= 0 ||
      visitation.size() != std::size_t(rows) * std::size_t(cols)) {
    throw std::invalid_argument("visits_to_pgm: bad grid shape");
  }
  long max_count = 0;
  for (long v : visitation) max_count = std::max(max_count, v);
  std::string out = "P2\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      long v = visitation[std::size_t(r) * cols + c];
      int gray = max_count > 0 ? int(std::lround(double(v) * 255.0 / double(max_count))) : 0;
      if (c) out += " ";
      out += std::to_string(gray);
    }
    out += "\n";
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out << content;
    out.flush();
    if (!out.good()) throw std::runtime_error("short write: " + tmp);
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Runs

RunArtifacts execute_run(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::unique_ptr<Env> env = make_env(cfg.env);

  agent::AcConfig ac;
  if (cfg.method == "per") ac.entropy_coef = 0.0;
  agent::PolicyCritic pc(*env, ac, derive_seed(seed, "agent-init"));

  orchestrator::RunMetrics m;
  if (cfg.method == "per") {
    m = orchestrator::run_per_training(*env, pc, per_config_for(cfg.env),
                                       cfg.loop, seed);
  } else if (cfg.method == "baseline_ac") {
    buffer::ReplayBuffer buf(100000, 10, 10.0);
    m = orchestrator::run_training(*env, pc, nullptr, buf, cfg.loop, seed);
  } else {
    buffer::ReplayBuffer buf(100000, 10, 10.0);
    backtrack::BacktrackConfig bt;
    backtrack::BacktrackModel model =
        cfg.method == "recall_traces"
            ? backtrack::BacktrackModel(*env, bt, derive_seed(seed, "model-init"))
            : backtrack::BacktrackModel::random_model(
                  *env, derive_seed(seed, "model-init"));
    m = orchestrator::run_training(*env, pc, &model, buf, cfg.loop, seed);
  }

  fs::create_directories(cfg.out_dir);
  const std::string base = cfg.out_dir + "/" + cfg.experiment + "_" + cfg.method +
                           "_seed" + std::to_string(seed);

  RunArtifacts art;
  art.csv_path = base + ".csv";
  art.visits_path = base + "_visits.csv";
  art.summary_path = base + "_summary.json";
  write_file_atomic(art.csv_path, rows_to_csv(m.rows));
  write_file_atomic(art.visits_path, visits_to_csv(m));

  json s;
  s["experiment"] = cfg.experiment;
  s["method"] = cfg.method;
  s["seed"] = seed;
  s["config_hash"] = config_hash(cfg);
  s["env_kind"] = cfg.env.kind;
  s["env_size"] = cfg.env.size;
  s["budget"] = cfg.loop.total_env_steps;
  s["env_steps_taken"] = m.env_steps_taken;
  s["episodes"] = m.rows.size();
  s["aborted"] = m.aborted;
  s["abort_reason"] = m.abort_reason;
  s["auc"] = auc_return(m.rows, cfg.loop.total_env_steps);
  s["steps_to_threshold"] = steps_to_threshold(m.rows, cfg.loop.total_env_steps);
  s["final_return"] = final_return(m.rows);
  s["distinct_states"] = m.rows.empty() ? 0L : m.rows.back().distinct_states;
  write_file_atomic(art.summary_path, s.dump(2) + "\n");

  art.metrics = std::move(m);
  return art;
}

int thread_cap() {
  const char* raw = std::getenv("RECALL_RL_THREADS");
  if (!raw) return 1;
  char* end = nullptr;
  long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v < 1) return 1;
  return int(std::min(v, 64L));
}

namespace {
void parallel_runs(int n, const std::function<void(int)>& fn) {
  int cap = std::min(thread_cap(), n);
  if (cap <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(cap));
  for (int t = 0; t < cap; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) fn(i);
    });
  }
  for (std::thread& th : pool) th.join();
}
}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const int n = int(cfg.seeds.size());
  std::vector<int> failed(std::size_t(n), 0);
  parallel_runs(n, [&](int i) {
    try {
      RunArtifacts art = execute_run(cfg, cfg.seeds[std::size_t(i)]);
      if (art.metrics.aborted) {
        failed[std::size_t(i)] = 1;
        std::fprintf(stderr, "seed %llu aborted: %s\n",
                     static_cast<unsigned long long>(cfg.seeds[std::size_t(i)]),
                     art.metrics.abort_reason.c_str());
      }
    } catch (const std::exception& e) {
      failed[std::size_t(i)] = 1;
      std::fprintf(stderr, "seed %llu failed: %s\n",
                   static_cast<unsigned long long>(cfg.seeds[std::size_t(i)]),
                   e.what());
    }
  });
  int bad = 0;
  for (int f : failed) bad += f;
  return bad;
}

// ---------------------------------------------------------------------------
// Plot-ready data

std::vector<BandPoint> aggregate_curves(
    const std::vector<std::vector<EpisodeRow>>& runs, int window) {
  if (window <= 0) throw std::invalid_argument("aggregate_curves: bad window");
  std::size_t n_ep = SIZE_MAX;
  for (const auto& rows : runs) n_ep = std::min(n_ep, rows.size());
  std::vector<BandPoint> band;
  if (runs.empty() || n_ep == 0 || n_ep == SIZE_MAX) return band;

  for (std::size_t i = 0; i < n_ep; ++i) {
    BandPoint pt;
    pt.episode = int(i) + 1;
    pt.n_seeds = int(runs.size());
    std::vector<double> vals;
    vals.reserve(runs.size());
    for (const auto& rows : runs) {
      vals.push_back(trailing_mean(rows, i, window));
      pt.env_steps_mean += double(rows[i].env_steps);
    }
    pt.env_steps_mean /= double(runs.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    pt.return_mean = mean;
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      pt.return_stderr = std::sqrt(ss / double(vals.size() - 1)) /
                         std::sqrt(double(vals.size()));
    }
    band.push_back(pt);
  }
  return band;
}

std::string band_to_csv(const std::vector<BandPoint>& band) {
  std::string out = "episode,env_steps_mean,return_mean,return_stderr,n_seeds\n";
  for (const BandPoint& p : band) {
    out += std::to_string(p.episode) + "," + fmt(p.env_steps_mean) + "," +
           fmt(p.return_mean) + "," + fmt(p.return_stderr) + "," +
           std::to_string(p.n_seeds) + "\n";
  }
  return out;
}

namespace {
std::vector<std::vector<long>> parse_visits_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<long>> grid;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<long> row;
    for (const std::string& cell : split_csv_line(line)) row.push_back(std::stol(cell));
    if (!grid.empty() && row.size() != grid[0].size()) {
      throw std::runtime_error("visits grid is ragged");
    }
    grid.push_back(std::move(row));
  }
  return grid;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}
}  // namespace

int plot_data(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    std::fprintf(stderr, "plot-data: no such directory: %s\n", dir.c_str());
    return 1;
  }
  static const std::regex kSeedFile("(.+)_seed([0-9]+)\\.csv");
  std::map<std::string, std::map<long, std::string>> groups;  // group -> seed -> path
  std::vector<std::string> visit_files;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name.size() > 11 && name.rfind("_visits.csv") == name.size() - 11) {
      visit_files.push_back(entry.path().string());
      continue;
    }
    std::smatch m;
    if (std::regex_match(name, m, kSeedFile)) {
      groups[m[1].str()][std::stol(m[2].str())] = entry.path().string();
    }
  }
  if (groups.empty() && visit_files.empty()) {
    std::fprintf(stderr, "plot-data: no metric files in %s\n", dir.c_str());
    return 1;
  }

  for (const auto& [group, by_seed] : groups) {
    std::vector<std::vector<EpisodeRow>> runs;
    for (const auto& [seed, path] : by_seed) {
      runs.push_back(rows_from_csv(read_file(path)));
    }
    write_file_atomic(dir + "/" + group + "_curve.csv",
                      band_to_csv(aggregate_curves(runs)));
  }
  std::sort(visit_files.begin(), visit_files.end());
  for (const std::string& path : visit_files) {
    std::vector<std::vector<long>> grid = parse_visits_csv(read_file(path));
    if (grid.empty()) continue;
    std::vector<long> flat;
    for (const auto& row : grid) flat.insert(flat.end(), row.begin(), row.end());
    std::string out_path = path.substr(0, path.size() - 4) + ".pgm";
    write_file_atomic(out_path,
                      visits_to_pgm(flat, int(grid.size()), int(grid[0].size())));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Ablation suites

namespace {
double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Variant {
  std::string label;
  std::function<void(ExperimentConfig&)> mutate;
};
}  // namespace

int ablate(const std::string& suite, int env_size, long steps, int n_seeds,
           const std::string& out_dir) {
  std::vector<Variant> variants;
  if (suite == "trace_length") {
    for (int len : {1, 3, 5, 10}) {
      variants.push_back({"len" + std::to_string(len), [len](ExperimentConfig& c) {
                            c.method = "recall_traces";
                            c.loop.trace_length = len;
                          }});
    }
  } else if (suite == "update_ratio") {
    const std::pair<const char*, double> ratios[] = {
        {"5to1", 5.0}, {"2to1", 2.0}, {"1to1", 1.0}, {"1to2", 0.5}, {"1to5", 0.2}};
    for (const auto& [label, ratio] : ratios) {
      double r = ratio;
      variants.push_back({label, [r](ExperimentConfig& c) {
                            c.method = "recall_traces";
                            c.loop.env_to_trace_ratio = r;
                          }});
    }
  } else if (suite == "random_backward") {
    variants.push_back({"learned", [](ExperimentConfig& c) { c.method = "recall_traces"; }});
    variants.push_back({"random", [](ExperimentConfig& c) { c.method = "random_backtrack"; }});
  } else if (suite == "per_compare") {
    variants.push_back({"recall", [](ExperimentConfig& c) { c.method = "recall_traces"; }});
    variants.push_back({"per", [](ExperimentConfig& c) { c.method = "per"; }});
    variants.push_back({"baseline", [](ExperimentConfig& c) { c.method = "baseline_ac"; }});
  } else {
    std::fprintf(stderr, "ablate: unknown suite \"%s\"\n", suite.c_str());
    return 2;
  }
  if (n_seeds <= 0 || env_size < 7) {
    std::fprintf(stderr, "ablate: bad env size or seed count\n");
    return 2;
  }

  ExperimentConfig base;
  base.env.kind = "four_room";
  base.env.size = env_size;
  base.out_dir = out_dir;
  base.loop.total_env_steps = steps > 0 ? steps : default_budget(base.env);
  base.seeds.clear();
  for (int s = 0; s < n_seeds; ++s) base.seeds.push_back(std::uint64_t(s));

  struct Row {
    std::string variant;
    std::uint64_t seed;
    double auc, final_ret;
    long steps_to_thr, distinct;
    bool aborted;
  };
  std::vector<std::pair<ExperimentConfig, std::uint64_t>> jobs;
  for (const Variant& v : variants) {
    ExperimentConfig cfg = base;
    cfg.experiment = suite + "_" + v.label;
    v.mutate(cfg);
    cfg.validate();
    for (std::uint64_t seed : cfg.seeds) jobs.emplace_back(cfg, seed);
  }

  std::vector<Row> rows(jobs.size());
  std::atomic<int> hard_failures{0};
  parallel_runs(int(jobs.size()), [&](int i) {
    const auto& [cfg, seed] = jobs[std::size_t(i)];
    Row row;
    row.variant = cfg.experiment;
    row.seed = seed;
    try {
      RunArtifacts art = execute_run(cfg, seed);
      row.auc = auc_return(art.metrics.rows, cfg.loop.total_env_steps);
      row.steps_to_thr =
          steps_to_threshold(art.metrics.rows, cfg.loop.total_env_steps);
      row.final_ret = final_return(art.metrics.rows);
      row.distinct = art.metrics.rows.empty()
                         ? 0
                         : art.metrics.rows.back().distinct_states;
      row.aborted = art.metrics.aborted;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "ablate: %s seed %llu failed: %s\n",
                   row.variant.c_str(), static_cast<unsigned long long>(seed),
                   e.what());
      row = Row{row.variant, seed, 0.0, 0.0, 0, 0, true};
      ++hard_failures;
    }
    rows[std::size_t(i)] = std::move(row);
  });

  json runs = json::array();
  std::map<std::string, std::vector<const Row*>> by_variant;
  for (const Row& r : rows) {
    runs.push_back({{"variant", r.variant},
                    {"seed", r.seed},
                    {"auc", r.auc},
                    {"steps_to_threshold", r.steps_to_thr},
                    {"final_return", r.final_ret},
                    {"distinct_states", r.distinct},
                    {"aborted", r.aborted}});
    by_variant[r.variant].push_back(&r);
  }
  json medians = json::array();
  for (const auto& [variant, group] : by_variant) {
    std::vector<double> auc, stt, dis, fin;
    for (const Row* r : group) {
      auc.push_back(r->auc);
      stt.push_back(double(r->steps_to_thr));
      dis.push_back(double(r->distinct));
      fin.push_back(r->final_ret);
    }
    medians.push_back({{"variant", variant},
                       {"median_auc", median_of(auc)},
                       {"median_steps_to_threshold", median_of(stt)},
                       {"median_distinct_states", median_of(dis)},
                       {"median_final_return", median_of(fin)}});
  }
  json summary;
  summary["suite"] = suite;
  summary["env_size"] = env_size;
  summary["budget"] = base.loop.total_env_steps;
  summary["n_seeds"] = n_seeds;
  summary["runs"] = runs;
  summary["medians"] = medians;
  fs::create_directories(out_dir);
  write_file_atomic(out_dir + "/" + suite + "_summary.json", summary.dump(2) + "\n");
  return hard_failures > 0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Verification suites

namespace {
bool report(const char* name, bool ok, const std::string& detail = "") {
  std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", name,
              detail.empty() ? "" : " — ", detail.c_str());
  return ok;
}

bool verify_elbo_suite() {
  ChainMDP chain = make_verification_chain();
  std::vector policy(4, std::vector<double>(2, 0.5));
  const double gamma = 1.0, L = 0.5;
  bool ok = true;

  orchestrator::TrajDist post = orchestrator::exact_posterior(chain, policy, gamma, L);
  orchestrator::ElboReport at_post = orchestrator::verify_elbo(chain, policy, gamma, post, L);
  ok &= report("exact posterior: KL = 0 and ELBO = log p",
               std::abs(at_post.kl) <= 1e-12 &&
                   std::abs(at_post.elbo - at_post.log_p) <= 1e-9,
               "kl=" + std::to_string(at_post.kl));

  Rng rng(41);
  std::exponential_distribution<double> expo(1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    orchestrator::TrajDist q;
    double total = 0.0;
    for (const auto& kv : post) total += (q[kv.first] = expo(rng));
    for (auto& [traj, w] : q) w /= total;
    orchestrator::ElboReport r = orchestrator::verify_elbo(chain, policy, gamma, q, L);
    worst = std::max(worst, std::abs(r.elbo + r.kl - r.log_p));
  }
  ok &= report("20 random q: |ELBO + KL - log p| <= 1e-9", worst <= 1e-9,
               "worst=" + std::to_string(worst));

  Rng sample_rng(17);
  std::vector<ChainTrajectory> samples =
      orchestrator::rejection_sample(chain, policy, gamma, L, 400, 200000, sample_rng);
  orchestrator::TabularBackwardQ q(4, 2, 6);
  orchestrator::LogProbFn fn = [&q](const ChainTrajectory& t) { return q.log_prob(t); };
  double before = orchestrator::reverse_kl_check(post, fn);
  for (int step = 0; step < 200; ++step) q.mle_step(samples, 0.3);
  double after = orchestrator::reverse_kl_check(post, fn);
  ok &= report("reverse KL halves under MLE on accepted rollouts",
               std::isfinite(after) && after <= 0.5 * before,
               "before=" + std::to_string(before) + " after=" + std::to_string(after));
  return ok;
}

bool verify_boltzmann_suite() {
  bool ok = true;
  {
    Rng rng(101);
    std::uniform_int_distribution<int> n_ctx(1, 4), n_act(2, 5);
    std::uniform_real_distribution<double> log_temp(std::log(0.05), std::log(20.0));
    std::normal_distribution<double> logit(0.0, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      boltzmann::BoltzmannTask task = boltzmann::BoltzmannTask::random(n_ctx(rng), n_act(rng), rng);
      task.temperature = std::exp(log_temp(rng));
      boltzmann::SoftPolicy pi(task.n_contexts(), task.n_actions());
      for (int s = 0; s < task.n_contexts(); ++s) {
        std::vector<double> row(std::size_t(task.n_actions()));
        for (double& v : row) v = logit(rng);
        pi.set_logits(s, row);
      }
      boltzmann::FreeEnergyReport rep = boltzmann::free_energy_decomposition(task, pi);
      double rhs = -rep.j_r / task.temperature - rep.entropy + rep.log_z_term;
      worst = std::max(worst, std::abs(rep.kl - rhs));
    }
    ok &= report("free-energy identity on 100 random instances (1e-9)",
                 worst <= 1e-9, "worst=" + std::to_string(worst));
  }
  {
    boltzmann::BoltzmannTask task;
    task.context_probs = {1.0};
    task.rewards = {{0.0, 1.0, 2.0}};
    task.temperature = 1e9;
    boltzmann::TargetDist hot = boltzmann::boltzmann_target(task, 0);
    bool uniform = true;
    for (double p : hot.probs) uniform &= std::abs(p - 1.0 / 3.0) <= 1e-6;
    task.temperature = 1e-6;
    boltzmann::TargetDist cold = boltzmann::boltzmann_target(task, 0);
    ok &= report("temperature limits: uniform at T=1e9, greedy at T=1e-6",
                 uniform && cold.probs[2] > 0.999999);
  }
  {
    std::vector<double> diffs;
    for (int seed = 0; seed < 5; ++seed) {
      Rng rng(100 + std::uint64_t(seed));
      boltzmann::BoltzmannTask task = boltzmann::BoltzmannTask::random(3, 4, rng);
      boltzmann::SoftPolicy annealed(3, 4);
      boltzmann::anneal_train(task, annealed,
                              boltzmann::temperature_schedule(600, 1.0, 0.99, 0.05), 0.5);
      boltzmann::SoftPolicy fixed(3, 4);
      boltzmann::anneal_train(task, fixed, std::vector<double>(600, 1.0), 0.5);
      diffs.push_back(boltzmann::expected_reward(task, annealed) -
                      boltzmann::expected_reward(task, fixed));
    }
    std::sort(diffs.begin(), diffs.end());
    ok &= report("annealed J_r >= fixed-T J_r (median of 5 paired seeds)",
                 diffs[2] >= 0.0, "median_diff=" + std::to_string(diffs[2]));
  }
  return ok;
}

bool verify_gradient_suite() {
  bool ok = true;
  int f1 = fdcheck::nn_gradient_failures(20, 1e-4);
  ok &= report("network gradients vs central differences (20 instances)",
               f1 == 0, "failures=" + std::to_string(f1));
  int f2 = fdcheck::agent_gradient_failures(20, 1e-4);
  ok &= report("agent update gradients vs central differences (20 instances)",
               f2 == 0, "failures=" + std::to_string(f2));
  int f3 = fdcheck::backtrack_gradient_failures(20, 1e-4);
  ok &= report("backward-model gradients vs central differences (20 instances)",
               f3 == 0, "failures=" + std::to_string(f3));
  return ok;
}
}  // namespace

int verify_suite(const std::string& name) {
  bool ok;
  if (name == "elbo") {
    ok = verify_elbo_suite();
  } else if (name == "boltzmann") {
    ok = verify_boltzmann_suite();
  } else if (name == "gradients") {
    ok = verify_gradient_suite();
  } else {
    std::fprintf(stderr, "verify: unknown suite \"%s\"\n", name.c_str());
    return 2;
  }
  return ok ? 0 : 1;
}

}  // namespace recall::harness
