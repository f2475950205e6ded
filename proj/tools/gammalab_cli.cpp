// gammalab command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "gammalab/exact_mdp.hpp"
#include "gammalab/mdp_json.hpp"
#include "gammalab/repr_lab.hpp"
#include "gammalab/runlab.hpp"

using namespace gammalab;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
};

lab::ExperimentConfig load(const Common& c) {
  auto cfg = c.config.empty() ? lab::config_from_json(lab::json::object()) : lab::load_config(c.config);
  if (c.seed_set) {
    // Keep the seed counts, shift the ranges.
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) cfg.seeds[i] = c.seed + i;
    for (std::size_t i = 0; i < cfg.grid_seeds.size(); ++i) cfg.grid_seeds[i] = c.seed + 1000 + i;
  }
  if (cfg.output_dir.empty()) cfg.output_dir = cfg.name;
  return cfg;
}

void report(const lab::FinalResult& r) {
  const auto& c = r.curve;
  std::printf("%s: final mean %.6g +/- %.3g (runs %d", c.label.c_str(), c.mean.back(), c.stderr_.back(),
              c.runs.back());
  if (!r.failed_seeds.empty()) std::printf(", failed %zu", r.failed_seeds.size());
  std::printf(")\n");
  for (const auto& run : r.runs)
    if (run.failed) std::fprintf(stderr, "seed %llu failed: %s\n", static_cast<unsigned long long>(run.seed), run.error.c_str());
}

void print_grid(const lab::GridResult& g) {
  std::printf("%-12s %-6s %-14s %s\n", "alpha", "beta", "score", "failed");
  for (const auto& c : g.cells) std::printf("%-12.4g %-6g %-14.6g %d\n", c.alpha, c.beta, c.score, c.failed_runs);
  std::printf("selected alpha=%g beta=%g\n", g.selected.alpha, g.selected.beta);
}

lab::FinalResult tuned_final(lab::ExperimentConfig cfg, bool grid, int workers) {
  double alpha = cfg.agent.actor_lr, critic = cfg.agent.critic_lr;
  if (grid) {
    const auto g = lab::run_grid(cfg, workers);
    lab::atomic_write(lab::output_root() / cfg.output_dir / "grid.csv", lab::grid_csv(g));
    print_grid(g);
    alpha = g.selected.alpha;
    critic = g.selected.alpha * g.selected.beta;
  }
  return lab::run_final(cfg, alpha, critic, workers);
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gammalab: discounting experiments for policy-gradient methods"};
  app.require_subcommand(1);
  Common common;
  auto* seed_opt = app.add_option("--seed", common.seed, "Base seed")->capture_default_str();
  app.add_option("--workers", common.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  auto* run = app.add_subcommand("run", "Train every seed of one config at its configured learning rates");
  run->add_option("config", common.config, "Experiment JSON")->check(CLI::ExistingFile);

  bool grid_final = false;
  auto* grid = app.add_subcommand("grid", "Learning-rate grid search");
  grid->add_option("config", common.config, "Experiment JSON")->check(CLI::ExistingFile);
  grid->add_flag("--final", grid_final, "Train all seeds at the selected cell afterwards");

  std::string horizons, sweep_gammas;
  bool sweep_grid = false, svg = true;
  auto* sweep = app.add_subcommand("sweep", "FHTD horizon sweep or critic-discount sweep");
  sweep->add_option("config", common.config, "Experiment JSON")->check(CLI::ExistingFile);
  auto* h_opt = sweep->add_option("--horizons", horizons, "Comma-separated FHTD horizons");
  auto* g_opt = sweep->add_option("--gammas", sweep_gammas, "Comma-separated critic discounts");
  h_opt->excludes(g_opt);
  sweep->add_flag("--grid", sweep_grid, "Grid-search learning rates per variant");
  sweep->add_option("--svg", svg, "Also write an SVG chart")->capture_default_str();

  std::string repr_gammas = "0.9,0.95,0.99,1", repr_alphas = "0,0.2,0.4,0.6,0.8", repr_out;
  int repr_trials = 1000;
  bool normalized = true;
  auto* repr = app.add_subcommand("repr-sweep", "Representation error of aliased features vs discount");
  repr->add_option("--gammas", repr_gammas)->capture_default_str();
  repr->add_option("--alphas", repr_alphas)->capture_default_str();
  repr->add_option("--trials", repr_trials)->check(CLI::PositiveNumber)->capture_default_str();
  repr->add_option("--normalized", normalized)->capture_default_str();
  repr->add_option("--out", repr_out, "CSV path (default: stdout)");

  long draws = 10000;
  std::string mdp_file, verify_gammas = "0.5,0.9,0.99,1";
  auto* verify = app.add_subcommand("verify", "Fuzz the performance-improvement bounds; optionally solve an MDP file");
  verify->add_option("--draws", draws)->check(CLI::PositiveNumber)->capture_default_str();
  verify->add_option("--gammas", verify_gammas)->capture_default_str();
  verify->add_option("--mdp", mdp_file, "MDP JSON to solve under the uniform policy")->check(CLI::ExistingFile);

  double flip_gamma = 0.0;
  auto* flip = app.add_subcommand("flip-t0", "Print t0 = min{t : gamma^t < 0.05}");
  flip->add_option("--gamma", flip_gamma)->required();

  CLI11_PARSE(app, argc, argv);
  common.seed_set = seed_opt->count() > 0;

  try {
    if (*flip) {
      std::printf("%d\n", env::flip_t0(flip_gamma));
    } else if (*run) {
      const auto cfg = load(common);
      report(lab::run_final(cfg, cfg.agent.actor_lr, cfg.agent.critic_lr, common.workers));
      std::printf("output: %s\n", (lab::output_root() / cfg.output_dir).c_str());
    } else if (*grid) {
      const auto cfg = load(common);
      if (grid_final) {
        report(tuned_final(cfg, true, common.workers));
      } else {
        const auto g = lab::run_grid(cfg, common.workers);
        lab::atomic_write(lab::output_root() / cfg.output_dir / "grid.csv", lab::grid_csv(g));
        print_grid(g);
      }
    } else if (*sweep) {
      const auto base = load(common);
      std::vector<lab::AggregateCurve> curves;
      const bool by_h = !horizons.empty();
      if (!by_h && sweep_gammas.empty()) throw lab::ConfigError("sweep needs --horizons or --gammas");
      for (double v : parse_list(by_h ? horizons : sweep_gammas)) {
        auto cfg = base;
        std::ostringstream label;
        if (by_h) {
          cfg.agent.algorithm = agent::Algorithm::PpoFhtd;
          cfg.agent.horizon = static_cast<int>(v);
          label << "H=" << cfg.agent.horizon;
        } else {
          cfg.agent.gamma_critic = v;
          label << "gamma_C=" << v;
        }
        cfg.name = label.str();
        cfg.output_dir = base.output_dir + "/" + (by_h ? "h" : "g") + lab::fmt(v);
        cfg.validate();
        const auto r = tuned_final(cfg, sweep_grid, common.workers);
        report(r);
        curves.push_back(r.curve);
      }
      const auto dir = lab::output_root() / base.output_dir;
      lab::emit_plots(curves, dir / "sweep.csv", svg ? dir / "sweep.svg" : lab::fs::path{});
      std::printf("output: %s\n", dir.c_str());
    } else if (*repr) {
      repr::SweepOptions opt;
      opt.normalized = normalized;
      const auto rows = repr::nre_sweep(parse_list(repr_gammas), parse_list(repr_alphas), repr_trials, common.seed, opt);
      std::string csv = "gamma,alpha,mean_nre,std_nre,trials,seed\n";
      for (const auto& r : rows)
        csv += lab::fmt(r.gamma) + ',' + lab::fmt(r.alpha) + ',' + lab::fmt(r.mean_nre) + ',' + lab::fmt(r.std_nre) +
               ',' + std::to_string(r.trials) + ',' + std::to_string(r.seed) + '\n';
      if (repr_out.empty())
        std::cout << csv;
      else
        lab::atomic_write(repr_out, csv);
    } else if (*verify) {
      const auto gammas = parse_list(verify_gammas);
      int status = 0;
      if (!mdp_file.empty()) {
        const auto m = mdp::load_mdp(mdp_file);
        const auto pi = mdp::TabularPolicy::uniform(m.n_states, m.n_actions);
        for (double g : gammas) {
          const auto rep = mdp::solve_values(m, pi, g);
          std::printf("gamma=%g J=%.12g T_max=%g bellman_residual=%.3g\n", g, rep.j, rep.t_max,
                      mdp::bellman_residual(m, pi, rep));
        }
      }
      const auto f = mdp::fuzz_lemma(draws, common.seed, gammas);
      std::printf("lemma fuzz: %ld draws, %ld violations, min lhs-rhs %.6g\n", f.draws, f.violations, f.worst_gap);
      if (f.violations > 0) status = 1;
      return status;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
