#pragma once

// Stage I: the server searches (R, theta) with a GP surrogate and expected
// improvement. Every true evaluation solves the client mean-field game for the
// candidate strategy and scores the resulting plans with the server cost.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "dufl/gaussian_process.hpp"
#include "dufl/meanfield_solver.hpp"
#include "dufl/server_objective.hpp"
#include "dufl/strategy.hpp"

namespace dufl {

struct BoConfig {
  int initial_design_size = 8;     // p
  int candidate_pool_size = 1024;  // q
  int budget = 30;                 // M, total true evaluations
  double payment_min = 0.0;
  double payment_max = 500.0;
  double conservation_min = 0.0;
  double conservation_max = 1.0;
  std::uint64_t seed = 42;

  void validate() const {
    detail::require(initial_design_size >= 2, "initial design needs at least two points");
    detail::require(budget >= initial_design_size, "budget must cover the initial design");
    detail::require(candidate_pool_size >= 1, "candidate pool must be nonempty");
    detail::require(payment_min >= 0.0 && payment_max > payment_min, "payment bounds must be ordered and nonnegative");
    detail::require(conservation_min >= 0.0 && conservation_max <= 1.0 && conservation_max > conservation_min,
                    "conservation bounds must be an ordered subinterval of [0, 1]");
  }
};

struct Evaluation {
  double cost = 0.0;
  bool converged = true;
};

struct BoTraceRecord {
  int iteration = 0;
  ServerStrategy strategy;
  double cost = 0.0;
  double incumbent = 0.0;
  double acquisition = 0.0;  // EI of the chosen point; 0 for the initial design
  bool converged = true;
  bool initial_design = false;
};

struct BoResult {
  ServerStrategy best_strategy;
  double best_cost = 0.0;
  bool best_converged = true;
  std::vector<BoTraceRecord> trace;
};

/// Radical inverse of `index` in `base`.
inline double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base), f = inv, out = 0.0;
  while (index > 0) {
    out += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return out;
}

/// Halton points in [0,1]^2 (bases 2 and 3) under a seeded random shift mod 1.
inline std::vector<Eigen::Vector2d> shifted_halton(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double shift_a = unit(rng), shift_b = unit(rng);
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(count);
  for (int i = 1; i <= count; ++i) {
    pts.emplace_back(std::fmod(radical_inverse(i, 2) + shift_a, 1.0), std::fmod(radical_inverse(i, 3) + shift_b, 1.0));
  }
  return pts;
}

template <class Objective>
BoResult bayes_minimize(Objective&& objective, const BoConfig& cfg) {
  cfg.validate();
  const double r_span = cfg.payment_max - cfg.payment_min;
  const double t_span = cfg.conservation_max - cfg.conservation_min;
  auto to_strategy = [&](const Eigen::Vector2d& u) {
    return ServerStrategy{cfg.payment_min + r_span * u(0), cfg.conservation_min + t_span * u(1)};
  };

  BoResult result;
  std::vector<Observation> observations;
  double incumbent = std::numeric_limits<double>::infinity();

  auto record = [&](const Eigen::Vector2d& u, double acquisition, bool initial) {
    const ServerStrategy s = to_strategy(u);
    const Evaluation e = objective(s);
    observations.push_back({u, e.cost});
    if (e.cost < incumbent || result.trace.empty()) {
      incumbent = e.cost;
      result.best_strategy = s;
      result.best_cost = e.cost;
      result.best_converged = e.converged;
    }
    result.trace.push_back({static_cast<int>(result.trace.size()), s, e.cost, incumbent, acquisition, e.converged,
                            initial});
  };

  for (const auto& u : shifted_halton(cfg.initial_design_size, cfg.seed)) record(u, 0.0, true);

  for (int it = cfg.initial_design_size; it < cfg.budget; ++it) {
    const GpState gp = gp_fit(observations);

    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(it)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::Vector2d chosen;
    double chosen_ei = -1.0, chosen_mean = std::numeric_limits<double>::infinity();
    for (int c = 0; c < cfg.candidate_pool_size; ++c) {
      const double a = unit(rng);
      const double b = unit(rng);
      const Eigen::Vector2d u(a, b);
      const auto pred = gp.predict(u);
      const double ei = expected_improvement(pred.mean, pred.stddev, incumbent);
      if (ei > chosen_ei || (ei == chosen_ei && pred.mean < chosen_mean)) {
        chosen = u;
        chosen_ei = ei;
        chosen_mean = pred.mean;
      }
    }
    record(chosen, chosen_ei, false);
  }
  return result;
}

/// Full Stage I search: each query solves the mean-field game then scores it.
inline BoResult optimize_server(std::span<const ClientProfile> profiles, const ServerParams& params,
                                const BoConfig& cfg, const FixedPointConfig& fp_cfg) {
  params.validate();
  detail::require(profiles.size() == params.num_clients, "need one profile per client");
  auto objective = [&](const ServerStrategy& s) {
    const auto eq = solve_mean_field(s, profiles, params.horizon, fp_cfg);
    return Evaluation{server_cost(s, eq.plans, params), eq.converged};
  };
  return bayes_minimize(objective, cfg);
}

}  // namespace dufl
