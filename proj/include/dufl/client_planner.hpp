#pragma once

// Stage II: a client's best response to an announced (R, theta) under a
// mean-field estimate phi(t) of the total buffered volume.
//
// The client maximizes
//
//   U = sum_t [ R D(t)/phi(t) - alpha Delta(t)^2 - beta D(t)^2 ]
//
// subject to D(t+1) = theta D(t) + Delta(t), Delta(t) >= 0. Writing the
// volumes as D = d0 + A Delta turns this into a strictly concave QP whose
// KKT conditions are exactly
//
//   Delta(t) = [ lambda(t+1) / (2 alpha) ]^+,   Delta(T-1) = 0,
//   lambda(t) = theta lambda(t+1) + R/phi(t) - 2 beta D(t),
//   lambda(T-1) = R/phi(T-1) - 2 beta D(T-1),
//
// so the active-set solution below is the closed-form strategy with the
// forward state and backward costate resolved simultaneously.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dufl/buffer_dynamics.hpp"
#include "dufl/common.hpp"
#include "dufl/detail/nonneg_qp.hpp"
#include "dufl/strategy.hpp"

namespace dufl {

struct ClientProfile {
  double collect_cost = 1e-3;    // alpha_k
  double train_cost = 1e-5;      // beta_k
  double initial_volume = 0.0;   // D_k(0)

  void validate() const {
    detail::require(std::isfinite(collect_cost) && collect_cost > 0.0, "collect cost must be positive");
    detail::require(std::isfinite(train_cost) && train_cost > 0.0, "train cost must be positive");
    detail::require(detail::is_nonnegative(initial_volume), "initial volume must be nonnegative");
  }
};

/// Estimate phi(t) of sum_i D_i(t), one entry per round.
struct MeanField {
  std::vector<double> phi;

  std::size_t horizon() const noexcept { return phi.size(); }
};

struct ClientPlan {
  std::vector<double> increments;  // Delta(0..T-1), last entry 0
  std::vector<double> volumes;     // D(0..T-1)
  std::vector<double> costates;    // lambda(0..T-1)
  std::vector<double> staleness;   // S(0..T-1)
  double utility = 0.0;

  std::size_t horizon() const noexcept { return volumes.size(); }
};

struct SweepOptions {
  double tolerance = 1e-8;
  int max_iterations = 10'000;
  double damping = 0.5;
};

namespace detail {

inline void check_field(const MeanField& field) {
  require(!field.phi.empty(), "mean field must cover at least one round");
  for (double p : field.phi) require(std::isfinite(p) && p > 0.0, "mean field entries must be positive");
}

inline std::vector<double> costates_for(const ClientProfile& profile, const ServerStrategy& strategy,
                                        const MeanField& field, std::span<const double> volumes) {
  const std::size_t horizon = volumes.size();
  std::vector<double> lambda(horizon);
  double next = 0.0;
  for (std::size_t t = horizon; t-- > 0;) {
    const double local = strategy.payment / field.phi[t] - 2.0 * profile.train_cost * volumes[t];
    lambda[t] = (t + 1 == horizon) ? local : strategy.conservation * next + local;
    next = lambda[t];
  }
  return lambda;
}

inline ClientPlan assemble_plan(const ClientProfile& profile, const ServerStrategy& strategy,
                                const MeanField& field, std::vector<double> increments);

}  // namespace detail

/// sum_t [ D(t) R / phi(t) - alpha Delta(t)^2 - beta D(t)^2 ].
inline double client_utility(const ClientPlan& plan, const ClientProfile& profile,
                             const ServerStrategy& strategy, const MeanField& field) {
  detail::require(plan.volumes.size() == field.phi.size() && plan.increments.size() == field.phi.size(),
                  "plan and mean field must have the same horizon");
  double total = 0.0;
  for (std::size_t t = 0; t < field.phi.size(); ++t) {
    const double d = plan.volumes[t];
    const double delta = plan.increments[t];
    total += d / field.phi[t] * strategy.payment - profile.collect_cost * delta * delta -
             profile.train_cost * d * d;
  }
  return total;
}

/// Rolls an arbitrary increment schedule into a full plan (volumes, costates,
/// staleness, utility). Used for baselines as well as the optimal plan.
inline ClientPlan evaluate_plan(const ClientProfile& profile, const ServerStrategy& strategy,
                                const MeanField& field, std::vector<double> increments) {
  profile.validate();
  strategy.validate();
  detail::check_field(field);
  detail::require(increments.size() == field.phi.size(), "increment schedule must match the horizon");
  return detail::assemble_plan(profile, strategy, field, std::move(increments));
}

inline ClientPlan detail::assemble_plan(const ClientProfile& profile, const ServerStrategy& strategy,
                                        const MeanField& field, std::vector<double> increments) {
  const std::size_t horizon = field.phi.size();
  auto buffer = roll_buffer(profile.initial_volume, strategy.conservation,
                            std::span<const double>(increments).first(horizon - 1));
  ClientPlan plan;
  plan.staleness = staleness_recursive(buffer).values;
  plan.increments = std::move(increments);
  plan.volumes = std::move(buffer.volumes);
  plan.costates = costates_for(profile, strategy, field, plan.volumes);
  plan.utility = client_utility(plan, profile, strategy, field);
  return plan;
}

/// Best response of one client. `warm_start` may carry the increments of a
/// nearby previous solve (same horizon) to speed up the active-set search.
inline ClientPlan solve_plan(const ClientProfile& profile, const ServerStrategy& strategy,
                             const MeanField& field, std::span<const double> warm_start = {}) {
  profile.validate();
  strategy.validate();
  detail::check_field(field);

  const std::size_t horizon = field.phi.size();
  const int n = static_cast<int>(horizon) - 1;
  const double theta = strategy.conservation;
  const double alpha = profile.collect_cost;
  const double beta = profile.train_cost;

  // Gram matrix of the increment-to-volume map:
  // (A'A)(s, s') = theta^|s-s'| * sum_{m=0}^{T-2-max(s,s')} theta^(2m).
  std::vector<double> pow_theta(horizon + 1, 1.0);
  for (std::size_t i = 1; i < pow_theta.size(); ++i) pow_theta[i] = pow_theta[i - 1] * theta;
  std::vector<double> geometric(horizon + 1, 0.0);  // geometric[k] = sum_{m<k} theta^(2m)
  for (std::size_t k = 1; k < geometric.size(); ++k)
    geometric[k] = geometric[k - 1] * theta * theta + 1.0;

  Eigen::MatrixXd hessian(n, n);
  for (int s = 0; s < n; ++s) {
    for (int u = s; u < n; ++u) {
      const double g = pow_theta[u - s] * geometric[horizon - 1 - u];
      hessian(s, u) = hessian(u, s) = 2.0 * beta * g;
    }
    hessian(s, s) += 2.0 * alpha;
  }

  // Linear term: sum_{t>s} theta^(t-1-s) (R/phi(t) - 2 beta theta^t D(0)).
  Eigen::VectorXd linear(n);
  double acc = 0.0;
  for (int s = n - 1; s >= 0; --s) {
    const int t = s + 1;
    const double free_decay = pow_theta[t] * profile.initial_volume;
    acc = (strategy.payment / field.phi[t] - 2.0 * beta * free_decay) + theta * acc;
    linear(s) = acc;
  }

  std::vector<double> increments(horizon, 0.0);
  if (n > 0) {
    std::span<const double> warm;
    if (warm_start.size() == horizon) warm = warm_start.first(n);
    const auto result = detail::NonnegQp(hessian, linear).solve(warm);
    for (int s = 0; s < n; ++s) increments[s] = std::max(result.x(s), 0.0);
  }
  return detail::assemble_plan(profile, strategy, field, std::move(increments));
}

/// Damped forward-backward sweep on the clamped closed form. Kept as an
/// independent route to solve_plan; it only converges when the coupling
/// beta/alpha is weak relative to the horizon.
inline ClientPlan solve_plan_sweep(const ClientProfile& profile, const ServerStrategy& strategy,
                                   const MeanField& field, const SweepOptions& options = {}) {
  profile.validate();
  strategy.validate();
  detail::check_field(field);

  const std::size_t horizon = field.phi.size();
  std::vector<double> increments(horizon, 0.0);
  double change = 0.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    const auto buffer = roll_buffer(profile.initial_volume, strategy.conservation,
                                    std::span<const double>(increments).first(horizon - 1));
    const auto lambda = detail::costates_for(profile, strategy, field, buffer.volumes);
    change = 0.0;
    for (std::size_t t = 0; t + 1 < horizon; ++t) {
      const double target = std::max(lambda[t + 1] / (2.0 * profile.collect_cost), 0.0);
      const double updated = (1.0 - options.damping) * increments[t] + options.damping * target;
      change = std::max(change, std::abs(updated - increments[t]));
      increments[t] = updated;
    }
    if (!std::isfinite(change)) break;
    if (change <= options.tolerance) return detail::assemble_plan(profile, strategy, field, std::move(increments));
  }
  throw NonConvergenceError("forward-backward sweep did not converge", change);
}

/// Exact payment share D_k R / sum_i D_i; zero when every buffer is empty.
inline double exact_payment_share(std::span<const double> volumes, std::size_t k, double payment) {
  detail::require(k < volumes.size(), "client index out of range");
  double total = 0.0;
  for (double v : volumes) total += v;
  if (total <= 0.0) return 0.0;
  return volumes[k] * payment / total;
}

}  // namespace dufl
