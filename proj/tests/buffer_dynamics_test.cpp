#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "dufl/buffer_dynamics.hpp"

using namespace dufl;

namespace {

std::vector<double> vec(std::initializer_list<double> xs) { return std::vector<double>(xs); }

// Unrolled volume D(t) = theta^t D0 + sum_{tau<t} theta^(t-1-tau) Delta(tau).
double unrolled_volume(double d0, double theta, const std::vector<double>& inc, std::size_t t) {
  double v = std::pow(theta, static_cast<double>(t)) * d0;
  for (std::size_t tau = 0; tau < t; ++tau) v += std::pow(theta, static_cast<double>(t - 1 - tau)) * inc[tau];
  return v;
}

}  // namespace

TEST(RollBuffer, ReplacesHalfWithFresh) {
  const auto b = roll_buffer(100.0, 0.5, vec({50.0}));
  EXPECT_EQ(b.volumes, vec({100.0, 100.0}));
}

TEST(RollBuffer, FullRetentionKeepsVolume) {
  const auto b = roll_buffer(1000.0, 1.0, vec({0.0, 0.0, 0.0}));
  EXPECT_EQ(b.volumes, vec({1000.0, 1000.0, 1000.0, 1000.0}));
}

TEST(RollBuffer, HandRecursion) {
  const auto b = roll_buffer(100.0, 0.3, vec({10.0, 20.0}));
  ASSERT_EQ(b.volumes.size(), 3u);
  EXPECT_NEAR(b.volumes[1], 40.0, 1e-12);
  EXPECT_NEAR(b.volumes[2], 32.0, 1e-12);
}

TEST(RollBuffer, MatchesUnrolledForm) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double theta = u(rng), d0 = 1000.0 * u(rng);
    std::vector<double> inc(30);
    for (auto& d : inc) d = 100.0 * u(rng);
    const auto b = roll_buffer(d0, theta, inc);
    for (std::size_t t = 0; t < b.volumes.size(); ++t) {
      EXPECT_NEAR(b.volumes[t], unrolled_volume(d0, theta, inc, t), 1e-9 * std::max(1.0, b.volumes[t]));
    }
  }
}

TEST(RollBuffer, RejectsInvalidInputs) {
  EXPECT_THROW(roll_buffer(100.0, 1.5, vec({})), std::invalid_argument);
  EXPECT_THROW(roll_buffer(100.0, -0.1, vec({})), std::invalid_argument);
  EXPECT_THROW(roll_buffer(-1.0, 0.5, vec({})), std::invalid_argument);
  EXPECT_THROW(roll_buffer(100.0, 0.5, vec({1.0, -2.0})), std::invalid_argument);
}

TEST(Staleness, HalfRetentionExample) {
  const auto b = roll_buffer(100.0, 0.5, vec({50.0}));
  const auto rec = staleness_recursive(b).values;
  const auto closed = staleness_closed_form(b).values;
  EXPECT_NEAR(rec[0], 1.0, 1e-15);
  EXPECT_NEAR(rec[1], 1.5, 1e-15);
  EXPECT_NEAR(closed[1], 1.5, 1e-15);
}

TEST(Staleness, ZeroRetentionIsAlwaysFresh) {
  const auto b = roll_buffer(50.0, 0.0, vec({10.0, 3.0, 7.0, 1.0}));
  for (double s : staleness_recursive(b).values) EXPECT_DOUBLE_EQ(s, 1.0);
  for (double s : staleness_closed_form(b).values) EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(Staleness, ConstantBufferAgesLinearly) {
  const auto b = roll_buffer(37.0, 1.0, std::vector<double>(9, 0.0));
  const auto rec = staleness_recursive(b).values;
  const auto closed = staleness_closed_form(b).values;
  for (std::size_t t = 0; t < rec.size(); ++t) {
    EXPECT_NEAR(rec[t], t + 1.0, 1e-12);
    EXPECT_NEAR(closed[t], t + 1.0, 1e-12);
  }
}

TEST(Staleness, EmptyBufferCountsAsFresh) {
  const auto b = roll_buffer(0.0, 0.5, vec({0.0, 4.0}));
  EXPECT_EQ(staleness_recursive(b).values, vec({1.0, 1.0, 1.0}));
  EXPECT_EQ(staleness_closed_form(b).values, vec({1.0, 1.0, 1.0}));
}

TEST(Staleness, RecursionMatchesClosedFormOnRandomTrajectories) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double theta = u(rng);
    const double d0 = 1.0 + 999.0 * u(rng);
    std::vector<double> inc(1 + static_cast<int>(49 * u(rng)));
    for (auto& d : inc) d = 100.0 * u(rng);
    const auto b = roll_buffer(d0, theta, inc);
    const auto rec = staleness_recursive(b).values;
    const auto closed = staleness_closed_form(b).values;
    for (std::size_t t = 0; t < rec.size(); ++t) {
      if (b.volumes[t] >= 1.0) worst = std::max(worst, std::abs(rec[t] - closed[t]));
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Staleness, NondecreasingInTheta) {
  const std::vector<double> inc{5.0, 40.0, 0.0, 12.0, 30.0, 1.0, 0.0, 8.0};
  std::vector<double> prev;
  for (int i = 0; i <= 20; ++i) {
    const auto s = staleness_closed_form(roll_buffer(80.0, i / 20.0, inc)).values;
    if (!prev.empty()) {
      for (std::size_t t = 0; t < s.size(); ++t) EXPECT_GE(s[t], prev[t] - 1e-12) << "theta step " << i << " t " << t;
    }
    prev = s;
  }
}

TEST(Staleness, NeverBelowOneForNonemptyBuffers) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> inc(20);
    for (auto& d : inc) d = u(rng) < 0.3 ? 0.0 : 50.0 * u(rng);
    const auto b = roll_buffer(10.0 * u(rng), u(rng), inc);
    const auto s = staleness_recursive(b).values;
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (b.volumes[t] > kVolumeEpsilon) {
        EXPECT_GE(s[t], 1.0 - 1e-12);
      }
    }
  }
}
