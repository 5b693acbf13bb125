#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dufl/experiment.hpp"
#include "dufl/meanfield_solver.hpp"

using namespace dufl;

namespace {

std::vector<double> column_sums(const EquilibriumReport& r) {
  std::vector<double> s(r.field.horizon(), 0.0);
  for (const auto& p : r.plans)
    for (std::size_t t = 0; t < s.size(); ++t) s[t] += p.volumes[t];
  return s;
}

}  // namespace

TEST(InitializeField, ConstantTotalVolume) {
  const std::vector<ClientProfile> fifteen(15, ClientProfile{1e-3, 1e-5, 1000.0});
  for (double v : initialize_field(fifteen, 7).phi) EXPECT_DOUBLE_EQ(v, 15000.0);

  const std::vector<ClientProfile> empty{ClientProfile{1e-3, 1e-5, 0.0}};
  for (double v : initialize_field(empty, 3).phi) EXPECT_DOUBLE_EQ(v, kVolumeEpsilon);

  const std::vector<ClientProfile> mixed{{1e-3, 1e-5, 100.0}, {1e-3, 1e-5, 200.0}, {1e-3, 1e-5, 300.0}};
  for (double v : initialize_field(mixed, 4).phi) EXPECT_DOUBLE_EQ(v, 600.0);
}

TEST(SolveMeanField, ZeroPaymentIsPureDecay) {
  const std::vector<ClientProfile> profiles{{1e-3, 1e-5, 100.0}, {5e-4, 2e-5, 250.0}};
  const auto r = solve_mean_field({0.0, 0.8}, profiles, 10, FixedPointConfig{});
  EXPECT_TRUE(r.converged);
  ASSERT_GE(r.residual_history.size(), 1u);
  for (std::size_t t = 0; t < 10; ++t) EXPECT_NEAR(r.field.phi[t], 350.0 * std::pow(0.8, t), 1e-9);
}

TEST(SolveMeanField, IdenticalClientsShareTheField) {
  const std::vector<ClientProfile> profiles(4, ClientProfile{3e-4, 2e-5, 500.0});
  FixedPointConfig cfg = default_fixed_point_config(profiles);
  const auto r = solve_mean_field({80.0, 0.5}, profiles, 20, cfg);
  ASSERT_TRUE(r.converged);
  for (std::size_t t = 0; t < 20; ++t) EXPECT_NEAR(r.field.phi[t], 4.0 * r.plans[0].volumes[t], 2.0 * cfg.tolerance);
}

TEST(SolveMeanField, SelfConsistentAtConvergence) {
  const auto profiles = sample_profiles(ProfileDistribution{}, 8, 5);
  const FixedPointConfig cfg = default_fixed_point_config(profiles);
  const auto r = solve_mean_field({60.0, 0.5}, profiles, 40, cfg);
  ASSERT_TRUE(r.converged);
  EXPECT_LE(r.residual_history.back(), cfg.tolerance);
  const auto sums = column_sums(r);
  for (std::size_t t = 0; t < sums.size(); ++t) EXPECT_LE(std::abs(r.field.phi[t] - sums[t]), cfg.tolerance);
}

TEST(SolveMeanField, PlainDampingAlsoConverges) {
  const auto profiles = sample_profiles(ProfileDistribution{}, 6, 9);
  FixedPointConfig cfg = default_fixed_point_config(profiles);
  cfg.relaxation = Relaxation::fixed;
  cfg.max_iterations = 80;
  const auto r = solve_mean_field({100.0, 0.4}, profiles, 30, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_FALSE(r.fell_back_to_damping);
}

TEST(SolveMeanField, PlainReplacementOscillates) {
  // Undamped updates cycle instead of settling.
  const auto profiles = sample_profiles(ProfileDistribution{}, 6, 9);
  FixedPointConfig cfg = default_fixed_point_config(profiles);
  cfg.relaxation = Relaxation::fixed;
  cfg.damping = 1.0;
  const auto r = solve_mean_field({100.0, 0.4}, profiles, 30, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations_used, cfg.max_iterations);
}

TEST(SolveMeanField, ReportsNonConvergenceWithoutThrowing) {
  const auto profiles = sample_profiles(ProfileDistribution{}, 5, 1);
  FixedPointConfig cfg = default_fixed_point_config(profiles);
  cfg.max_iterations = 2;
  const auto r = solve_mean_field({200.0, 0.3}, profiles, 30, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.residual_history.size(), 2u);
  EXPECT_EQ(r.plans.size(), profiles.size());
}

TEST(SolveMeanField, Deterministic) {
  const auto profiles = sample_profiles(ProfileDistribution{}, 7, 4);
  const auto cfg = default_fixed_point_config(profiles);
  const auto a = solve_mean_field({90.0, 0.45}, profiles, 35, cfg);
  const auto b = solve_mean_field({90.0, 0.45}, profiles, 35, cfg);
  EXPECT_EQ(a.field.phi, b.field.phi);
  EXPECT_EQ(a.residual_history, b.residual_history);
  for (std::size_t k = 0; k < a.plans.size(); ++k) EXPECT_EQ(a.plans[k].increments, b.plans[k].increments);
}

TEST(SolveMeanField, ZeroPaymentScalesLinearly) {
  std::vector<ClientProfile> small{{1e-3, 1e-5, 120.0}, {2e-4, 4e-5, 75.0}};
  auto large = small;
  for (auto& p : large) p.initial_volume *= 2.0;
  const auto a = solve_mean_field({0.0, 0.6}, small, 12, FixedPointConfig{});
  const auto b = solve_mean_field({0.0, 0.6}, large, 12, FixedPointConfig{});
  for (std::size_t t = 0; t < 12; ++t) EXPECT_EQ(b.field.phi[t], 2.0 * a.field.phi[t]);
}

TEST(SolveMeanField, ConvergesQuicklyOnDeskPreset) {
  const auto cfg = desk_preset();
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  for (const ServerStrategy s : {ServerStrategy{60.0, 0.5}, ServerStrategy{500.0, 0.0}, ServerStrategy{5.0, 1.0}}) {
    const auto r = solve_mean_field(s, profiles, cfg.server.horizon, cfg.fixed_point);
    EXPECT_TRUE(r.converged) << s.payment << "," << s.conservation;
    EXPECT_LE(r.iterations_used, 20);
  }
}

TEST(SolveMeanField, RejectsBadConfig) {
  const std::vector<ClientProfile> one{{1e-3, 1e-5, 10.0}};
  EXPECT_THROW(solve_mean_field({1.0, 0.5}, one, 5, FixedPointConfig{0.0, 20, 0.5}), std::invalid_argument);
  EXPECT_THROW(solve_mean_field({1.0, 0.5}, one, 5, FixedPointConfig{1e-3, 0, 0.5}), std::invalid_argument);
  EXPECT_THROW(solve_mean_field({1.0, 0.5}, one, 5, FixedPointConfig{1e-3, 20, 0.0}), std::invalid_argument);
  EXPECT_THROW(solve_mean_field({1.0, 0.5}, {}, 5, FixedPointConfig{}), std::invalid_argument);
  EXPECT_THROW(solve_mean_field({1.0, 0.5}, one, 0, FixedPointConfig{}), std::invalid_argument);
}
