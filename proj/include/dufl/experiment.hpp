#pragma once

// End-to-end scenarios: sample a client population, run the strategy
// decision phase (BO over the mean-field game), then train, compare against
// baselines, or sweep the time sensitivity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dufl/bayesopt.hpp"
#include "dufl/client_planner.hpp"
#include "dufl/fl_simulator.hpp"
#include "dufl/meanfield_solver.hpp"
#include "dufl/server_objective.hpp"
#include "dufl/strategy.hpp"

namespace dufl {

/// alpha_k ~ U(alpha_lo, alpha_hi), beta_k ~ U(beta_lo, beta_hi), D_k(0) fixed.
struct ProfileDistribution {
  double alpha_lo = 1e-4;
  double alpha_hi = 1e-3;
  double beta_lo = 5e-6;
  double beta_hi = 5e-5;
  double initial_volume = 1000.0;

  void validate() const {
    detail::require(alpha_lo > 0.0 && alpha_hi >= alpha_lo, "alpha bounds must be positive and ordered");
    detail::require(beta_lo > 0.0 && beta_hi >= beta_lo, "beta bounds must be positive and ordered");
    detail::require(detail::is_nonnegative(initial_volume), "initial volume must be nonnegative");
  }
};

struct BaselineConfig {
  int random_draws = 200;
  std::vector<double> payment_offsets{-30.0, -15.0, 0.0, 15.0, 30.0};
  std::vector<double> conservation_offsets{-0.3, -0.15, 0.0, 0.15, 0.3};
};

/// Concrete stream schedules as functions of sigma (see stream_for_sensitivity).
struct StreamSchedule {
  double drift_per_sigma = 0.04;
  double coverage_per_sigma = 0.5;
};

struct ExperimentConfig {
  std::string scenario = "desk";
  std::uint64_t seed = 42;
  std::string output_dir = "out";
  ServerParams server;
  BoConfig bo;
  FixedPointConfig fixed_point;
  StreamConfig stream;
  StreamSchedule schedule;
  TrainConfig train;
  ProfileDistribution profiles;
  BaselineConfig baselines;
  std::vector<double> sigma_grid{0.42, 0.5, 0.75, 1.0, 1.25};
  int grid_payment_points = 101;
  int grid_conservation_points = 101;
  double cease_threshold = 0.5;  // max Delta below this counts as no collection

  void validate() const {
    server.validate();
    bo.validate();
    fixed_point.validate();
    stream.validate();
    profiles.validate();
    detail::require(train.epochs >= 0 && train.batch_size >= 1 && train.learning_rate > 0.0 && train.test_size >= 1,
                    "training needs epochs >= 0, batch >= 1, positive rate and a test set");
    detail::require(baselines.random_draws >= 0, "random draw count must be nonnegative");
    detail::require(grid_payment_points >= 2 && grid_conservation_points >= 2, "grid needs two points per axis");
    for (double s : sigma_grid) detail::require(detail::is_nonnegative(s), "sigma grid values must be nonnegative");
    detail::require(detail::is_nonnegative(cease_threshold), "cease threshold must be nonnegative");
  }
};

/// Propagates the scenario seed to every seeded component.
inline void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.bo.seed = seed;
  cfg.stream.seed = seed;
  cfg.train.seed = seed;
}

inline void apply_population_size(ExperimentConfig& cfg, std::size_t clients, std::size_t horizon,
                                  double initial_volume) {
  cfg.server.num_clients = clients;
  cfg.server.horizon = horizon;
  cfg.profiles.initial_volume = initial_volume;
  cfg.fixed_point.tolerance = std::max(1e-6 * static_cast<double>(clients) * initial_volume, 1e-9);
  cfg.stream.ramp_rounds = static_cast<int>(std::max<std::size_t>(horizon, 1));
}

/// N=15, T=100, D0=1000.
inline ExperimentConfig paper_preset() {
  ExperimentConfig cfg;
  cfg.scenario = "paper";
  apply_population_size(cfg, 15, 100, 1000.0);
  apply_seed(cfg, 42);
  return cfg;
}

/// N=5, T=30, D0=200.
inline ExperimentConfig desk_preset() {
  ExperimentConfig cfg;
  cfg.scenario = "desk";
  apply_population_size(cfg, 5, 30, 200.0);
  apply_seed(cfg, 42);
  return cfg;
}

inline std::vector<ClientProfile> sample_profiles(const ProfileDistribution& dist, std::size_t count,
                                                  std::uint64_t seed) {
  dist.validate();
  std::mt19937_64 rng(seed);
  std::vector<ClientProfile> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double alpha = std::uniform_real_distribution<double>(dist.alpha_lo, dist.alpha_hi)(rng);
    const double beta = std::uniform_real_distribution<double>(dist.beta_lo, dist.beta_hi)(rng);
    out.push_back({alpha, beta, dist.initial_volume});
  }
  return out;
}

struct StrategyPhase {
  BoResult search;
  EquilibriumReport equilibrium;  // at search.best_strategy
  double cost = 0.0;
  bool converged = false;
};

/// Stage I search followed by the equilibrium at the chosen strategy.
/// With gamma = 1 the cost is gamma R T alone, so the lower payment bound is
/// optimal and the search is skipped; theta is then irrelevant and set to its
/// upper bound.
inline StrategyPhase solve_strategy(const ExperimentConfig& cfg, std::span<const ClientProfile> profiles) {
  cfg.validate();
  StrategyPhase out;
  if (cfg.server.tradeoff >= 1.0) {
    const ServerStrategy s{cfg.bo.payment_min, cfg.bo.conservation_max};
    out.equilibrium = solve_mean_field(s, profiles, cfg.server.horizon, cfg.fixed_point);
    const double cost = server_cost(s, out.equilibrium.plans, cfg.server);
    out.search.best_strategy = s;
    out.search.best_cost = cost;
    out.search.best_converged = out.equilibrium.converged;
    out.search.trace.push_back({0, s, cost, cost, 0.0, out.equilibrium.converged, true});
  } else {
    out.search = optimize_server(profiles, cfg.server, cfg.bo, cfg.fixed_point);
    out.equilibrium = solve_mean_field(out.search.best_strategy, profiles, cfg.server.horizon, cfg.fixed_point);
  }
  out.cost = server_cost(out.search.best_strategy, out.equilibrium.plans, cfg.server);
  out.converged = out.equilibrium.converged;
  return out;
}

inline double total_collection(const ClientPlan& plan) {
  double s = 0.0;
  for (double d : plan.increments) s += d;
  return s;
}

inline double max_collection(std::span<const ClientPlan> plans) {
  double m = 0.0;
  for (const auto& p : plans)
    for (double d : p.increments) m = std::max(m, d);
  return m;
}

/// Random schedule over rounds 0..T-2 with the same total as `total`:
/// uniform weights, normalized.
inline std::vector<double> random_matched_increments(double total, std::size_t horizon, std::mt19937_64& rng) {
  std::vector<double> out(horizon, 0.0);
  if (horizon < 2 || total <= 0.0) return out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double sum = 0.0;
  for (std::size_t t = 0; t + 1 < horizon; ++t) sum += out[t] = unit(rng);
  for (std::size_t t = 0; t + 1 < horizon; ++t) out[t] *= total / sum;
  return out;
}

struct ClientComparison {
  std::size_t client = 0;
  double optimal_utility = 0.0;
  double zero_utility = 0.0;
  double random_best_utility = -std::numeric_limits<double>::infinity();
  double random_mean_utility = 0.0;
  double optimal_collection = 0.0;
  double random_max_volume_error = 0.0;  // relative |total - optimal| across draws
};

struct AblationRow {
  ServerStrategy strategy;
  double payment_offset = 0.0;
  double conservation_offset = 0.0;
  double cost = 0.0;
  bool converged = false;
};

struct BaselineReport {
  std::vector<ClientComparison> clients;
  double optimal_cost = 0.0;
  double zero_cost = 0.0;
  double random_cost = 0.0;  // cost of the first random draw for every client
  std::vector<AblationRow> ablations;
};

inline std::mt19937_64 baseline_rng(std::uint64_t seed, std::size_t client) {
  return detail::seeded_rng(seed, client, 0, 0xBA5E);
}

/// Zero, volume-matched random and fixed-(R, theta) ablation baselines around
/// the equilibrium in `phase`. Utilities are scored against the equilibrium
/// mean field.
inline BaselineReport run_baselines(const ExperimentConfig& cfg, std::span<const ClientProfile> profiles,
                                    const StrategyPhase& phase) {
  const ServerStrategy& best = phase.search.best_strategy;
  const MeanField& field = phase.equilibrium.field;
  const std::size_t horizon = field.horizon();
  BaselineReport report;
  report.optimal_cost = server_cost(best, phase.equilibrium.plans, cfg.server);

  std::vector<ClientPlan> zero_plans, random_plans;
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    const ClientPlan& opt = phase.equilibrium.plans[k];
    // Score against the final field so every row uses the same phi.
    const ClientPlan optimal = evaluate_plan(profiles[k], best, field, opt.increments);
    ClientComparison row;
    row.client = k;
    row.optimal_utility = optimal.utility;
    row.optimal_collection = total_collection(optimal);
    zero_plans.push_back(evaluate_plan(profiles[k], best, field, std::vector<double>(horizon, 0.0)));
    row.zero_utility = zero_plans.back().utility;

    auto rng = baseline_rng(cfg.seed, k);
    double sum = 0.0;
    for (int draw = 0; draw < cfg.baselines.random_draws; ++draw) {
      auto plan = evaluate_plan(profiles[k], best, field,
                                random_matched_increments(row.optimal_collection, horizon, rng));
      const double total = total_collection(plan);
      if (row.optimal_collection > 0.0) {
        row.random_max_volume_error =
            std::max(row.random_max_volume_error, std::abs(total - row.optimal_collection) / row.optimal_collection);
      }
      row.random_best_utility = std::max(row.random_best_utility, plan.utility);
      sum += plan.utility;
      if (draw == 0) random_plans.push_back(std::move(plan));
    }
    row.random_mean_utility = cfg.baselines.random_draws > 0 ? sum / cfg.baselines.random_draws : 0.0;
    report.clients.push_back(row);
  }
  report.zero_cost = server_cost(best, zero_plans, cfg.server);
  if (random_plans.size() == profiles.size()) report.random_cost = server_cost(best, random_plans, cfg.server);

  for (double dr : cfg.baselines.payment_offsets) {
    for (double dt : cfg.baselines.conservation_offsets) {
      AblationRow row;
      row.payment_offset = dr;
      row.conservation_offset = dt;
      row.strategy = {std::clamp(best.payment + dr, cfg.bo.payment_min, cfg.bo.payment_max),
                      std::clamp(best.conservation + dt, cfg.bo.conservation_min, cfg.bo.conservation_max)};
      const auto eq = solve_mean_field(row.strategy, profiles, cfg.server.horizon, cfg.fixed_point);
      row.cost = server_cost(row.strategy, eq.plans, cfg.server);
      row.converged = eq.converged;
      report.ablations.push_back(row);
    }
  }
  return report;
}

struct SweepRow {
  double sigma = 0.0;
  ServerStrategy strategy;
  double cost = 0.0;
  double total_collection = 0.0;
  double max_collection = 0.0;
  bool ceased = false;
  bool converged = false;
};

/// Best (R, theta) per sigma on a shared population.
inline std::vector<SweepRow> run_sigma_sweep(const ExperimentConfig& cfg, std::span<const ClientProfile> profiles,
                                             std::span<const double> sigma_grid) {
  std::vector<SweepRow> rows;
  for (double sigma : sigma_grid) {
    ExperimentConfig point = cfg;
    point.server.time_sensitivity = sigma;
    const StrategyPhase phase = solve_strategy(point, profiles);
    SweepRow row;
    row.sigma = sigma;
    row.strategy = phase.search.best_strategy;
    row.cost = phase.cost;
    for (const auto& p : phase.equilibrium.plans) row.total_collection += total_collection(p);
    row.max_collection = max_collection(phase.equilibrium.plans);
    row.ceased = row.max_collection < cfg.cease_threshold;
    row.converged = phase.converged;
    rows.push_back(row);
  }
  return rows;
}

struct GridPoint {
  ServerStrategy strategy;
  double cost = 0.0;
  bool converged = false;
};

struct GridResult {
  std::vector<GridPoint> points;
  GridPoint best;
};

/// Dense evaluation of the true cost over an evenly spaced (R, theta) lattice.
inline GridResult grid_search(std::span<const ClientProfile> profiles, const ServerParams& params,
                              const BoConfig& bounds, const FixedPointConfig& fp_cfg, int payment_points,
                              int conservation_points) {
  detail::require(payment_points >= 2 && conservation_points >= 2, "grid needs two points per axis");
  GridResult out;
  out.best.cost = std::numeric_limits<double>::infinity();
  for (int i = 0; i < payment_points; ++i) {
    const double r =
        bounds.payment_min + (bounds.payment_max - bounds.payment_min) * i / static_cast<double>(payment_points - 1);
    for (int j = 0; j < conservation_points; ++j) {
      const double th = bounds.conservation_min + (bounds.conservation_max - bounds.conservation_min) * j /
                                                      static_cast<double>(conservation_points - 1);
      const ServerStrategy s{r, th};
      const auto eq = solve_mean_field(s, profiles, params.horizon, fp_cfg);
      GridPoint p{s, server_cost(s, eq.plans, params), eq.converged};
      if (p.cost < out.best.cost) out.best = p;
      out.points.push_back(p);
    }
  }
  return out;
}

inline StreamConfig scenario_stream(const ExperimentConfig& cfg) {
  return stream_for_sensitivity(cfg.stream, cfg.server.time_sensitivity, cfg.schedule.drift_per_sigma,
                                cfg.schedule.coverage_per_sigma);
}

/// Plans for the no-update baseline: keep the initial buffer, never collect.
inline std::vector<ClientPlan> static_plans(std::span<const ClientProfile> profiles, const MeanField& field,
                                            double payment) {
  std::vector<ClientPlan> out;
  for (const auto& p : profiles) {
    out.push_back(evaluate_plan(p, {payment, 1.0}, field, std::vector<double>(field.horizon(), 0.0)));
  }
  return out;
}

struct TrainingComparison {
  TrainingResult optimal;
  TrainingResult no_update;
};

inline TrainingComparison train_against_static(const ExperimentConfig& cfg, std::span<const ClientProfile> profiles,
                                               const StrategyPhase& phase) {
  const StreamConfig stream = scenario_stream(cfg);
  TrainingComparison out;
  out.optimal = run_training(phase.search.best_strategy, phase.equilibrium.plans, stream, cfg.train);
  const ServerStrategy fixed{phase.search.best_strategy.payment, 1.0};
  const auto plans = static_plans(profiles, phase.equilibrium.field, fixed.payment);
  out.no_update = run_training(fixed, plans, stream, cfg.train);
  return out;
}

}  // namespace dufl
