#pragma once

// Experiment orchestration: JSON configs, the learning-rate grid, seed fan-out
// over a worker pool, learning-curve aggregation and CSV / SVG emission.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "gammalab/actor_critic.hpp"
#include "gammalab/env_suite.hpp"

namespace gammalab::lab {

namespace fs = std::filesystem;
using nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class AllRunsFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Metric { Raw, Discounted };

struct ExperimentConfig {
  std::string name = "experiment";
  std::string env = "lineworld";
  int t_max = 100;
  env::EnvOptions env_options{};
  double flip_gamma = 0.0;  // > 0 wraps the environment with flipped rewards
  agent::AgentConfig agent{};
  long total_steps = 200000;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::uint64_t> grid_seeds{100, 101, 102};
  double base_lr = 3e-4;
  std::vector<double> lr_multipliers{0.125, 0.25, 0.5, 1.0, 2.0};
  std::vector<double> betas{1.0, 3.0};
  Metric metric = Metric::Raw;
  int selection_window = 100;  // episodes averaged for grid scores
  int smoothing_window = 10;   // episodes averaged per point of a learning curve
  std::string output_dir;      // relative to the output root; empty disables files

  void validate() const {
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j)
        if (seeds[i] == seeds[j]) throw ConfigError("seeds must be distinct");
    if (lr_multipliers.empty() || betas.empty()) throw ConfigError("learning-rate grid must be nonempty");
    if (total_steps < agent.rollout) throw ConfigError("total_steps must cover at least one rollout");
    if (selection_window < 1 || smoothing_window < 1) throw ConfigError("windows must be positive");
    if (flip_gamma < 0.0 || flip_gamma >= 1.0) throw ConfigError("flip_gamma must be 0 (off) or in (0, 1)");
    try {
      agent.validate();
    } catch (const agent::InvalidConfig& e) {
      throw ConfigError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void reject_unknown(const json& doc, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& item : doc.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <class T>
void read(const json& doc, const char* key, T& out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline std::string metric_name(Metric m) { return m == Metric::Raw ? "raw" : "discounted"; }

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  const auto& a = c.agent;
  const auto& lw = c.env_options.lineworld;
  return {
      {"name", c.name},
      {"env", c.env},
      {"t_max", c.t_max},
      {"env_options",
       {{"lineworld",
         {{"goal", lw.goal},
          {"dt", lw.dt},
          {"max_accel", lw.max_accel},
          {"max_speed", lw.max_speed},
          {"goal_tolerance", lw.goal_tolerance},
          {"terminate_at_goal", lw.terminate_at_goal},
          {"velocity_noise", lw.velocity_noise}}},
        {"noisy_velocity_std", c.env_options.noisy_velocity_std},
        {"chain_length", c.env_options.chain_length},
        {"grid_slip", c.env_options.grid_slip}}},
      {"flip_gamma", c.flip_gamma},
      {"agent",
       {{"algorithm", agent::to_string(a.algorithm)},
        {"gamma_actor", a.gamma_actor},
        {"gamma_critic", a.gamma_critic},
        {"horizon", a.horizon},
        {"parameterization", a.parameterization == agent::FhtdParameterization::Full ? "full" : "exact-h"},
        {"full_heads", a.full_heads},
        {"extra_transitions", a.extra_transitions},
        {"clip", a.clip},
        {"kl_target", a.kl_target},
        {"rollout", a.rollout},
        {"opt_iters", a.opt_iters},
        {"minibatch", a.minibatch},
        {"actor_lr", a.actor_lr},
        {"critic_lr", a.critic_lr},
        {"hidden", a.hidden},
        {"train_actor", a.train_actor},
        {"metric_gamma", a.metric_gamma}}},
      {"total_steps", c.total_steps},
      {"seeds", c.seeds},
      {"grid_seeds", c.grid_seeds},
      {"base_lr", c.base_lr},
      {"lr_multipliers", c.lr_multipliers},
      {"betas", c.betas},
      {"metric", detail::metric_name(c.metric)},
      {"selection_window", c.selection_window},
      {"smoothing_window", c.smoothing_window},
      {"output_dir", c.output_dir},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected at every level.
inline ExperimentConfig config_from_json(const json& doc) {
  using detail::read;
  detail::reject_unknown(doc,
                         {"name", "env", "t_max", "env_options", "flip_gamma", "agent", "total_steps", "seeds",
                          "grid_seeds", "base_lr", "lr_multipliers", "betas", "metric", "selection_window",
                          "smoothing_window", "output_dir"},
                         "config");
  ExperimentConfig c;
  read(doc, "name", c.name);
  read(doc, "env", c.env);
  read(doc, "t_max", c.t_max);
  read(doc, "flip_gamma", c.flip_gamma);
  read(doc, "total_steps", c.total_steps);
  read(doc, "seeds", c.seeds);
  read(doc, "grid_seeds", c.grid_seeds);
  read(doc, "base_lr", c.base_lr);
  read(doc, "lr_multipliers", c.lr_multipliers);
  read(doc, "betas", c.betas);
  read(doc, "selection_window", c.selection_window);
  read(doc, "smoothing_window", c.smoothing_window);
  read(doc, "output_dir", c.output_dir);
  if (doc.contains("metric")) {
    const auto m = doc.at("metric").get<std::string>();
    if (m == "raw")
      c.metric = Metric::Raw;
    else if (m == "discounted")
      c.metric = Metric::Discounted;
    else
      throw ConfigError("metric must be 'raw' or 'discounted'");
  }
  if (doc.contains("env_options")) {
    const auto& eo = doc.at("env_options");
    detail::reject_unknown(eo, {"lineworld", "noisy_velocity_std", "chain_length", "grid_slip"}, "env_options");
    read(eo, "noisy_velocity_std", c.env_options.noisy_velocity_std);
    read(eo, "chain_length", c.env_options.chain_length);
    read(eo, "grid_slip", c.env_options.grid_slip);
    if (eo.contains("lineworld")) {
      const auto& lw = eo.at("lineworld");
      detail::reject_unknown(
          lw, {"goal", "dt", "max_accel", "max_speed", "goal_tolerance", "terminate_at_goal", "velocity_noise"},
          "env_options.lineworld");
      auto& p = c.env_options.lineworld;
      read(lw, "goal", p.goal);
      read(lw, "dt", p.dt);
      read(lw, "max_accel", p.max_accel);
      read(lw, "max_speed", p.max_speed);
      read(lw, "goal_tolerance", p.goal_tolerance);
      read(lw, "terminate_at_goal", p.terminate_at_goal);
      read(lw, "velocity_noise", p.velocity_noise);
    }
  }
  if (doc.contains("agent")) {
    const auto& ad = doc.at("agent");
    detail::reject_unknown(ad,
                           {"algorithm", "gamma_actor", "gamma_critic", "horizon", "parameterization", "full_heads",
                            "extra_transitions", "clip", "kl_target", "rollout", "opt_iters", "minibatch",
                            "actor_lr", "critic_lr", "hidden", "train_actor", "metric_gamma"},
                           "agent");
    auto& a = c.agent;
    if (ad.contains("algorithm")) {
      try {
        a.algorithm = agent::algorithm_from_string(ad.at("algorithm").get<std::string>());
      } catch (const agent::InvalidConfig& e) {
        throw ConfigError(e.what());
      }
    }
    if (ad.contains("parameterization")) {
      const auto p = ad.at("parameterization").get<std::string>();
      if (p == "exact-h")
        a.parameterization = agent::FhtdParameterization::ExactH;
      else if (p == "full")
        a.parameterization = agent::FhtdParameterization::Full;
      else
        throw ConfigError("parameterization must be 'exact-h' or 'full'");
    }
    read(ad, "gamma_actor", a.gamma_actor);
    read(ad, "gamma_critic", a.gamma_critic);
    read(ad, "horizon", a.horizon);
    read(ad, "full_heads", a.full_heads);
    read(ad, "extra_transitions", a.extra_transitions);
    read(ad, "clip", a.clip);
    read(ad, "kl_target", a.kl_target);
    read(ad, "rollout", a.rollout);
    read(ad, "opt_iters", a.opt_iters);
    read(ad, "minibatch", a.minibatch);
    read(ad, "actor_lr", a.actor_lr);
    read(ad, "critic_lr", a.critic_lr);
    read(ad, "hidden", a.hidden);
    read(ad, "train_actor", a.train_actor);
    read(ad, "metric_gamma", a.metric_gamma);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Files

/// Root for experiment output: $GAMMALAB_OUTPUT, or ./runs.
inline fs::path output_root() {
  const char* env = std::getenv("GAMMALAB_OUTPUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

/// Writes via a temporary sibling and rename so readers never see partial files.
inline void atomic_write(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  std::uint64_t seed = 0;
  double actor_lr = 0.0;
  double critic_lr = 0.0;
  bool failed = false;
  std::string error;
  std::vector<agent::EpisodeRecord> episodes;
};

/// Independent streams for the environment and the agent from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

inline std::unique_ptr<env::Env> build_env(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto e = env::make_env(cfg.env, cfg.t_max, derive_seed(seed, 1), cfg.env_options);
  if (cfg.flip_gamma > 0.0) e = env::flip_wrap(std::move(e), cfg.flip_gamma);
  return e;
}

inline RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, double actor_lr, double critic_lr) {
  RunResult out;
  out.seed = seed;
  out.actor_lr = actor_lr;
  out.critic_lr = critic_lr;
  agent::AgentConfig ac = cfg.agent;
  ac.actor_lr = actor_lr;
  ac.critic_lr = critic_lr;
  try {
    agent::Agent a(ac, build_env(cfg, seed), derive_seed(seed, 2));
    a.train(cfg.total_steps);
    out.episodes = a.episodes();
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

inline double episode_value(const agent::EpisodeRecord& ep, Metric m) {
  return m == Metric::Raw ? ep.return_raw : ep.return_discounted;
}

/// Mean metric over the last `window` episodes; -inf for failed or empty runs.
inline double final_score(const RunResult& r, Metric m, int window) {
  if (r.failed || r.episodes.empty()) return -std::numeric_limits<double>::infinity();
  const std::size_t n = std::min<std::size_t>(window, r.episodes.size());
  double sum = 0.0;
  for (std::size_t i = r.episodes.size() - n; i < r.episodes.size(); ++i) sum += episode_value(r.episodes[i], m);
  return sum / static_cast<double>(n);
}

/// Runs f(i) for i in [0, n) on up to `workers` threads.
template <class F>
void parallel_for(std::size_t n, int workers, F&& f) {
  const std::size_t w = std::clamp<std::size_t>(workers < 1 ? 1 : static_cast<std::size_t>(workers), 1, std::max<std::size_t>(n, 1));
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < w; ++k)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& t : pool) t.join();
}

inline std::string run_csv(const RunResult& r) {
  std::string s = "env_steps,episode_return_raw,episode_return_discounted,episode_len,kl_stop_epoch,actor_loss,critic_loss\n";
  for (const auto& ep : r.episodes) {
    s += std::to_string(ep.env_steps) + ',' + fmt(ep.return_raw) + ',' + fmt(ep.return_discounted) + ',' +
         std::to_string(ep.length) + ',' + std::to_string(ep.kl_stop_epoch) + ',' + fmt(ep.actor_loss) + ',' +
         fmt(ep.critic_loss) + '\n';
  }
  return s;
}

inline std::vector<agent::EpisodeRecord> read_run_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<agent::EpisodeRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    agent::EpisodeRecord ep;
    char* p = line.data();
    ep.env_steps = std::strtol(p, &p, 10);
    ep.return_raw = std::strtod(p + 1, &p);
    ep.return_discounted = std::strtod(p + 1, &p);
    ep.length = static_cast<int>(std::strtol(p + 1, &p, 10));
    ep.kl_stop_epoch = static_cast<int>(std::strtol(p + 1, &p, 10));
    ep.actor_loss = std::strtod(p + 1, &p);
    ep.critic_loss = std::strtod(p + 1, &p);
    out.push_back(ep);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridCell {
  double alpha = 0.0;  // actor learning rate
  double beta = 0.0;   // critic / actor learning-rate ratio
  double score = -std::numeric_limits<double>::infinity();
  int failed_runs = 0;
};

struct GridResult {
  std::vector<GridCell> cells;
  GridCell selected;
};

/// Better cell: higher score, then smaller alpha, then smaller beta.
inline bool grid_prefers(const GridCell& a, const GridCell& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.alpha != b.alpha) return a.alpha < b.alpha;
  return a.beta < b.beta;
}

inline GridResult select_cell(std::vector<GridCell> cells) {
  GridResult out;
  out.cells = std::move(cells);
  bool any = false;
  for (const auto& c : out.cells) {
    if (!std::isfinite(c.score)) continue;
    if (!any || grid_prefers(c, out.selected)) out.selected = c;
    any = true;
  }
  if (!any) throw AllRunsFailed("every grid cell failed");
  return out;
}

/// Each (alpha, beta) cell trained on every grid seed; score is the seed-mean
/// of the last-`selection_window`-episode return (-inf if any seed failed).
inline GridResult run_grid(const ExperimentConfig& cfg, int workers = 1) {
  cfg.validate();
  struct Job {
    std::size_t cell;
    std::uint64_t seed;
  };
  std::vector<GridCell> cells;
  for (double m : cfg.lr_multipliers)
    for (double b : cfg.betas) cells.push_back({m * cfg.base_lr, b});
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (auto s : cfg.grid_seeds) jobs.push_back({c, s});
  std::vector<double> scores(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const auto& cell = cells[jobs[i].cell];
    scores[i] = final_score(run_single(cfg, jobs[i].seed, cell.alpha, cell.alpha * cell.beta), cfg.metric,
                            cfg.selection_window);
  });
  for (auto& c : cells) c.score = 0.0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& c = cells[jobs[i].cell];
    if (!std::isfinite(scores[i])) ++c.failed_runs;
    c.score += scores[i] / static_cast<double>(cfg.grid_seeds.size());
  }
  for (auto& c : cells)
    if (c.failed_runs > 0) c.score = -std::numeric_limits<double>::infinity();
  return select_cell(std::move(cells));
}

inline std::string grid_csv(const GridResult& g) {
  std::string s = "alpha,beta,score,failed_runs,selected\n";
  for (const auto& c : g.cells)
    s += fmt(c.alpha) + ',' + fmt(c.beta) + ',' + fmt(c.score) + ',' + std::to_string(c.failed_runs) + ',' +
         (c.alpha == g.selected.alpha && c.beta == g.selected.beta ? "1" : "0") + '\n';
  return s;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateCurve {
  std::string label;
  std::vector<double> x;  // env steps
  std::vector<double> mean;
  std::vector<double> stderr_;
  std::vector<int> runs;  // runs contributing at each x
};

/// Per-episode curve of one run: (env steps, mean of the last `window` episodes).
inline std::vector<std::pair<double, double>> smoothed_curve(const RunResult& r, Metric m, int window) {
  std::vector<std::pair<double, double>> out;
  double sum = 0.0;
  for (std::size_t i = 0; i < r.episodes.size(); ++i) {
    sum += episode_value(r.episodes[i], m);
    if (i >= static_cast<std::size_t>(window)) sum -= episode_value(r.episodes[i - window], m);
    const auto n = std::min<std::size_t>(i + 1, window);
    out.emplace_back(static_cast<double>(r.episodes[i].env_steps), sum / static_cast<double>(n));
  }
  return out;
}

/// Mean and standard error (sample std / sqrt(n), 0 for a single run) across
/// runs on the union of their x grids; each run contributes its latest value
/// at or before x.
inline AggregateCurve aggregate(const std::vector<RunResult>& runs, Metric m, int window, std::string label) {
  AggregateCurve out;
  out.label = std::move(label);
  std::vector<std::vector<std::pair<double, double>>> curves;
  for (const auto& r : runs)
    if (!r.failed) curves.push_back(smoothed_curve(r, m, window));
  std::vector<double> grid;
  for (const auto& c : curves)
    for (const auto& p : c) grid.push_back(p.first);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<std::size_t> cursor(curves.size(), 0);
  for (double x : grid) {
    std::vector<double> vals;
    for (std::size_t k = 0; k < curves.size(); ++k) {
      auto& at = cursor[k];
      while (at < curves[k].size() && curves[k][at].first <= x) ++at;
      if (at > 0) vals.push_back(curves[k][at - 1].second);
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double se = 0.0;
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      se = std::sqrt(ss / static_cast<double>(vals.size() - 1)) / std::sqrt(static_cast<double>(vals.size()));
    }
    out.x.push_back(x);
    out.mean.push_back(mean);
    out.stderr_.push_back(se);
    out.runs.push_back(static_cast<int>(vals.size()));
  }
  return out;
}

inline std::string aggregate_csv(const AggregateCurve& c) {
  std::string s = "x,mean,stderr,runs\n";
  for (std::size_t i = 0; i < c.x.size(); ++i)
    s += fmt(c.x[i]) + ',' + fmt(c.mean[i]) + ',' + fmt(c.stderr_[i]) + ',' + std::to_string(c.runs[i]) + '\n';
  return s;
}

struct FinalResult {
  AggregateCurve curve;
  std::vector<RunResult> runs;
  std::vector<std::uint64_t> failed_seeds;
};

/// Trains every configured seed at the given learning rates. With a non-empty
/// output_dir, writes run_<seed>.csv per surviving run and aggregate.csv.
inline FinalResult run_final(const ExperimentConfig& cfg, double actor_lr, double critic_lr, int workers = 1,
                             const fs::path& root = output_root()) {
  cfg.validate();
  FinalResult out;
  out.runs.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), workers,
               [&](std::size_t i) { out.runs[i] = run_single(cfg, cfg.seeds[i], actor_lr, critic_lr); });
  for (const auto& r : out.runs)
    if (r.failed) out.failed_seeds.push_back(r.seed);
  if (out.failed_seeds.size() == out.runs.size())
    throw AllRunsFailed("all " + std::to_string(out.runs.size()) + " runs failed; first error: " + out.runs[0].error);
  out.curve = aggregate(out.runs, cfg.metric, cfg.smoothing_window, cfg.name);
  if (!cfg.output_dir.empty()) {
    const fs::path dir = root / cfg.output_dir;
    for (const auto& r : out.runs)
      if (!r.failed) atomic_write(dir / ("run_" + std::to_string(r.seed) + ".csv"), run_csv(r));
    atomic_write(dir / "aggregate.csv", aggregate_csv(out.curve));
    json failures = json::array();
    for (const auto& r : out.runs)
      if (r.failed) failures.push_back({{"seed", r.seed}, {"error", r.error}});
    json summary = {{"config", to_json(cfg)},
                    {"actor_lr", actor_lr},
                    {"critic_lr", critic_lr},
                    {"failed", failures},
                    {"final_mean", out.curve.mean.empty() ? 0.0 : out.curve.mean.back()},
                    {"final_stderr", out.curve.stderr_.empty() ? 0.0 : out.curve.stderr_.back()}};
    atomic_write(dir / "summary.json", summary.dump(2) + '\n');
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plot data

struct PlotRow {
  std::string label;
  double x = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline std::string plot_csv(const std::vector<AggregateCurve>& curves) {
  std::string s = "curve_label,x,mean,stderr\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.x.size(); ++i)
      s += c.label + ',' + fmt(c.x[i]) + ',' + fmt(c.mean[i]) + ',' + fmt(c.stderr_[i]) + '\n';
  return s;
}

inline std::vector<PlotRow> read_plot_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<PlotRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    PlotRow row;
    row.label = line.substr(0, comma);
    char* p = line.data() + comma + 1;
    row.x = std::strtod(p, &p);
    row.mean = std::strtod(p + 1, &p);
    row.stderr_ = std::strtod(p + 1, &p);
    out.push_back(row);
  }
  return out;
}

/// Line chart with +/- one standard error bands.
inline std::string plot_svg(const std::vector<AggregateCurve>& curves, const std::string& title = "") {
  const double w = 640, h = 400, left = 70, right = 150, top = 30, bottom = 40;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      x0 = std::min(x0, c.x[i]);
      x1 = std::max(x1, c.x[i]);
      y0 = std::min(y0, c.mean[i] - c.stderr_[i]);
      y1 = std::max(y1, c.mean[i] + c.stderr_[i]);
    }
  if (!(x1 > x0)) x0 = 0, x1 = 1;
  if (!(y1 > y0)) y0 -= 1, y1 += 1;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
  auto py = [&](double y) { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << left << "\" y=\"" << h - 10 << "\" font-size=\"11\">" << fmt(x0) << "</text>\n";
  s << "<text x=\"" << w - right << "\" y=\"" << h - 10 << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(x1)
    << "</text>\n";
  s << "<text x=\"5\" y=\"" << py(y1) + 4 << "\" font-size=\"11\">" << fmt(y1).substr(0, 8) << "</text>\n";
  s << "<text x=\"5\" y=\"" << py(y0) << "\" font-size=\"11\">" << fmt(y0).substr(0, 8) << "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    const char* colour = palette[k % 6];
    std::ostringstream band, line;
    for (std::size_t i = 0; i < c.x.size(); ++i) band << px(c.x[i]) << ',' << py(c.mean[i] + c.stderr_[i]) << ' ';
    for (std::size_t i = c.x.size(); i-- > 0;) band << px(c.x[i]) << ',' << py(c.mean[i] - c.stderr_[i]) << ' ';
    for (std::size_t i = 0; i < c.x.size(); ++i) line << px(c.x[i]) << ',' << py(c.mean[i]) << ' ';
    s << "<polygon points=\"" << band.str() << "\" fill=\"" << colour << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    s << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << colour << "\"/>\n";
    s << "<text x=\"" << w - right + 8 << "\" y=\"" << top + 16 * (k + 1) << "\" font-size=\"12\" fill=\"" << colour
      << "\">" << c.label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

/// Long-format CSV at `csv_path`; an SVG chart too when `svg_path` is non-empty.
inline void emit_plots(const std::vector<AggregateCurve>& curves, const fs::path& csv_path,
                       const fs::path& svg_path = {}) {
  atomic_write(csv_path, plot_csv(curves));
  if (!svg_path.empty()) atomic_write(svg_path, plot_svg(curves, csv_path.stem().string()));
}

}  // namespace gammalab::lab
