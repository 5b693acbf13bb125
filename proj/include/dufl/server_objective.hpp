#pragma once

// Stage I objective: payment plus the controllable part of the convergence
// bound (data-volume term and staleness term), and the full bound itself.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dufl/client_planner.hpp"
#include "dufl/common.hpp"
#include "dufl/strategy.hpp"

namespace dufl {

struct ServerParams {
  double tradeoff = 1e-4;         // gamma
  double kappa1 = 1.0;
  double kappa2 = 1.0;
  double kappa3 = 1e-2;
  double noise_scale = 1.35;      // psi
  double time_sensitivity = 0.75; // sigma
  std::size_t num_clients = 15;
  std::size_t horizon = 100;

  void validate() const {
    detail::require(detail::is_unit_interval(tradeoff), "tradeoff must lie in [0, 1]");
    detail::require(std::isfinite(kappa1) && kappa1 > 0.0, "kappa1 must be positive");
    detail::require(detail::is_nonnegative(kappa2), "kappa2 must be nonnegative");
    detail::require(detail::is_nonnegative(kappa3), "kappa3 must be nonnegative");
    detail::require(detail::is_nonnegative(noise_scale), "noise scale must be nonnegative");
    detail::require(detail::is_nonnegative(time_sensitivity), "time sensitivity must be nonnegative");
    detail::require(num_clients >= 1, "need at least one client");
  }
};

/// Learning constants behind the bound (Lipschitz, smoothness, strong
/// convexity, step size) plus the uncontrollable terms.
struct ConvergenceParams {
  double lipschitz = 1.0;
  double smoothness = 1.0;
  double strong_convexity = 1.0;
  double learning_rate = 0.5;
  double initial_gap = 0.0;
  std::vector<double> omega;  // per-round loss shift; empty means zeros

  void validate() const {
    detail::require(lipschitz > 0.0 && smoothness > 0.0 && strong_convexity > 0.0,
                    "lipschitz, smoothness and strong convexity constants must be positive");
    detail::require(learning_rate > 0.0, "learning rate must be positive");
    detail::require(learning_rate <= 1.0 / (2.0 * smoothness) * (1.0 + 1e-12),
                    "learning rate must not exceed 1 / (2 * smoothness)");
  }
};

struct Kappas {
  double kappa1 = 1.0;
  double kappa2 = 0.0;
  double kappa3 = 0.0;
};

inline Kappas kappa_from_constants(const ConvergenceParams& conv) {
  const double mu = conv.strong_convexity;
  const double beta = conv.smoothness;
  const double eta = conv.learning_rate;
  return {1.0 + 4.0 * mu * beta * eta * eta - 2.0 * mu * eta, 2.0 * beta * eta * eta, beta * eta * eta};
}

/// Per-round pieces of the server cost; `volume_terms[t]` and
/// `staleness_terms[t]` are the undiscounted bracket entries.
struct CostBreakdown {
  double total = 0.0;
  double payment_part = 0.0;
  double accuracy_part = 0.0;  // already multiplied by (1 - gamma)
  std::vector<double> volume_terms;
  std::vector<double> staleness_terms;
  std::vector<double> total_volume;
  bool degenerate_volume = false;
};

namespace detail {

inline std::size_t common_horizon(std::span<const ClientPlan> plans) {
  if (plans.empty()) return 0;
  const std::size_t horizon = plans.front().horizon();
  for (const auto& p : plans) {
    require(p.horizon() == horizon && p.staleness.size() == horizon, "plans must share a horizon");
  }
  return horizon;
}

// Fills the bracketed per-round terms kappa2 N psi^2 / D(t) and
// kappa3 sum_k (D_k/D) S_k sigma^2.
inline void accuracy_terms(const ServerParams& params, std::span<const ClientPlan> plans,
                           CostBreakdown& out) {
  const std::size_t horizon = common_horizon(plans);
  const double n = static_cast<double>(params.num_clients);
  const double sigma2 = params.time_sensitivity * params.time_sensitivity;
  out.volume_terms.assign(horizon, 0.0);
  out.staleness_terms.assign(horizon, 0.0);
  out.total_volume.assign(horizon, 0.0);
  for (std::size_t t = 0; t < horizon; ++t) {
    double total = 0.0;
    for (const auto& p : plans) total += p.volumes[t];
    out.total_volume[t] = total;
    if (total <= kVolumeEpsilon) out.degenerate_volume = true;
    const double denom = std::max(total, kVolumeEpsilon);
    double weighted = 0.0;
    for (const auto& p : plans) weighted += p.volumes[t] / denom * p.staleness[t];
    out.volume_terms[t] = params.kappa2 * n * params.noise_scale * params.noise_scale / denom;
    out.staleness_terms[t] = params.kappa3 * weighted * sigma2;
  }
}

}  // namespace detail

inline CostBreakdown server_cost_breakdown(const ServerStrategy& strategy, std::span<const ClientPlan> plans,
                                           const ServerParams& params) {
  strategy.validate();
  params.validate();
  detail::require(plans.size() == params.num_clients, "need one plan per client");
  CostBreakdown out;
  detail::accuracy_terms(params, plans, out);
  const std::size_t horizon = out.volume_terms.size();
  double discount = 1.0;  // kappa1^(T-1-t), accumulated backwards
  for (std::size_t t = horizon; t-- > 0;) {
    out.accuracy_part += discount * (out.volume_terms[t] + out.staleness_terms[t]);
    discount *= params.kappa1;
  }
  out.accuracy_part *= 1.0 - params.tradeoff;
  out.payment_part = params.tradeoff * strategy.payment * static_cast<double>(horizon);
  out.total = out.payment_part + out.accuracy_part;
  return out;
}

inline double server_cost(const ServerStrategy& strategy, std::span<const ClientPlan> plans,
                          const ServerParams& params) {
  return server_cost_breakdown(strategy, plans, params).total;
}

/// kappa1^T * gap + sum_t kappa1^(T-1-t) [volume + staleness + Omega_t].
inline double convergence_bound(const ServerParams& params, const ConvergenceParams& conv,
                                std::span<const ClientPlan> plans) {
  params.validate();
  conv.validate();
  CostBreakdown terms;
  detail::accuracy_terms(params, plans, terms);
  const std::size_t horizon = terms.volume_terms.size();
  detail::require(conv.omega.empty() || conv.omega.size() == horizon, "omega must cover every round");

  double sum = 0.0;
  double discount = 1.0;
  for (std::size_t t = horizon; t-- > 0;) {
    const double omega = conv.omega.empty() ? 0.0 : conv.omega[t];
    sum += discount * (terms.volume_terms[t] + terms.staleness_terms[t] + omega);
    discount *= params.kappa1;
  }
  return discount * conv.initial_gap + sum;
}

}  // namespace dufl
