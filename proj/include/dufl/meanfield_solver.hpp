#pragma once

// Outer fixed point of the strategy decision phase: every client best-responds
// to phi, then phi is moved toward sum_k D_k until it stops changing.
//
// In the interior of the horizon the map phi -> sum_k D_k behaves like K/phi,
// whose slope at the fixed point is -1, so plain replacement settles into a
// period-two cycle. The default relaxation therefore estimates the slope of
// every round from the last two iterates and takes the secant step
// omega_t = 1 / (1 - slope_t), clipped to [damping, 1].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "dufl/client_planner.hpp"
#include "dufl/common.hpp"
#include "dufl/strategy.hpp"

namespace dufl {

enum class Relaxation {
  fixed,   // phi += damping * (sum_k D_k - phi) every iteration
  secant,  // per-round secant step, first iteration is plain replacement
};

struct FixedPointConfig {
  double tolerance = 1e-2;
  int max_iterations = 20;
  double damping = 0.5;
  Relaxation relaxation = Relaxation::secant;

  void validate() const {
    detail::require(std::isfinite(tolerance) && tolerance > 0.0, "fixed-point tolerance must be positive");
    detail::require(max_iterations >= 1, "fixed-point iteration cap must be at least 1");
    detail::require(damping > 0.0 && damping <= 1.0, "damping must lie in (0, 1]");
  }
};

/// Tolerance 1e-6 * N * mean(D0) with the default iteration cap of 20.
inline FixedPointConfig default_fixed_point_config(std::span<const ClientProfile> profiles) {
  FixedPointConfig cfg;
  double total = 0.0;
  for (const auto& p : profiles) total += p.initial_volume;
  cfg.tolerance = std::max(1e-6 * total, 1e-9);
  return cfg;
}

struct EquilibriumReport {
  MeanField initial_field;
  MeanField field;
  std::vector<ClientPlan> plans;  // best responses computed in the final iteration
  int iterations_used = 0;
  std::vector<double> residual_history;
  bool converged = false;
  bool fell_back_to_damping = false;
};

inline MeanField initialize_field(std::span<const ClientProfile> profiles, std::size_t horizon) {
  double total = 0.0;
  for (const auto& p : profiles) total += p.initial_volume;
  const double floor = static_cast<double>(std::max<std::size_t>(profiles.size(), 1)) * kVolumeEpsilon;
  return MeanField{std::vector<double>(horizon, std::max(total, floor))};
}

inline EquilibriumReport solve_mean_field(const ServerStrategy& strategy, std::span<const ClientProfile> profiles,
                                          std::size_t horizon, const FixedPointConfig& cfg) {
  strategy.validate();
  cfg.validate();
  detail::require(!profiles.empty(), "need at least one client");
  detail::require(horizon >= 1, "horizon must be at least one round");

  const double floor = static_cast<double>(profiles.size()) * kVolumeEpsilon;
  EquilibriumReport report;
  report.initial_field = initialize_field(profiles, horizon);
  std::vector<double> phi = report.initial_field.phi;

  std::vector<double> prev_phi, prev_sum;
  std::vector<double> omega(horizon, cfg.relaxation == Relaxation::secant ? 1.0 : cfg.damping);
  Relaxation mode = cfg.relaxation;
  std::vector<ClientPlan> plans(profiles.size());

  for (int j = 1; j <= cfg.max_iterations; ++j) {
    const MeanField field{phi};
    for (std::size_t k = 0; k < profiles.size(); ++k) {
      plans[k] = solve_plan(profiles[k], strategy, field, plans[k].increments);
    }
    std::vector<double> sum(horizon, 0.0);
    for (const auto& p : plans)
      for (std::size_t t = 0; t < horizon; ++t) sum[t] += p.volumes[t];

    if (mode == Relaxation::secant && !prev_phi.empty()) {
      for (std::size_t t = 0; t < horizon; ++t) {
        const double step = phi[t] - prev_phi[t];
        if (std::abs(step) <= 1e-12 * std::max(std::abs(phi[t]), 1.0)) continue;
        const double slope = std::clamp((sum[t] - prev_sum[t]) / step, -1.0, 0.0);
        omega[t] = std::max(cfg.damping, 1.0 / (1.0 - slope));
      }
    }
    prev_phi = phi;
    prev_sum = sum;

    double residual = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      const double next = std::max(phi[t] + omega[t] * (sum[t] - phi[t]), floor);
      residual = std::max(residual, std::abs(next - phi[t]));
      phi[t] = next;
    }
    report.residual_history.push_back(residual);
    report.iterations_used = j;
    if (residual <= cfg.tolerance) {
      report.converged = true;
      break;
    }

    // Two successive increases: drop to plain damping.
    const auto& h = report.residual_history;
    if (mode == Relaxation::secant && h.size() >= 3 && h[h.size() - 1] > h[h.size() - 2] &&
        h[h.size() - 2] > h[h.size() - 3]) {
      mode = Relaxation::fixed;
      std::fill(omega.begin(), omega.end(), cfg.damping);
      report.fell_back_to_damping = true;
    }
  }

  report.field = MeanField{std::move(phi)};
  report.plans = std::move(plans);
  return report;
}

}  // namespace dufl
