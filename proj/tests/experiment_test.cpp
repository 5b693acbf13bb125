#include <gtest/gtest.h>

#include <charconv>
#include <random>
#include <string>
#include <vector>

#include "dufl/experiment.hpp"
#include "dufl/io.hpp"

using namespace dufl;

namespace {

// Desk preset shrunk so a full strategy phase takes milliseconds.
ExperimentConfig quick_config() {
  ExperimentConfig cfg = desk_preset();
  apply_population_size(cfg, 3, 12, 200.0);
  cfg.bo.budget = 12;
  cfg.baselines.random_draws = 50;
  return cfg;
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Profiles, SampledInOrderFromUniforms) {
  const ProfileDistribution dist;
  const auto p = sample_profiles(dist, 4, 99);
  std::mt19937_64 rng(99);
  for (const auto& c : p) {
    EXPECT_EQ(c.collect_cost, std::uniform_real_distribution<double>(1e-4, 1e-3)(rng));
    EXPECT_EQ(c.train_cost, std::uniform_real_distribution<double>(5e-6, 5e-5)(rng));
    EXPECT_EQ(c.initial_volume, 1000.0);
  }
}

TEST(Profiles, RejectsUnorderedBounds) {
  ProfileDistribution dist;
  dist.alpha_hi = 1e-5;
  EXPECT_THROW(sample_profiles(dist, 2, 1), std::invalid_argument);
}

TEST(Presets, PopulationSizes) {
  const auto paper = paper_preset();
  EXPECT_EQ(paper.server.num_clients, 15u);
  EXPECT_EQ(paper.server.horizon, 100u);
  EXPECT_EQ(paper.profiles.initial_volume, 1000.0);
  EXPECT_NEAR(paper.fixed_point.tolerance, 1e-6 * 15 * 1000, 1e-15);
  EXPECT_EQ(paper.fixed_point.max_iterations, 20);
  EXPECT_EQ(paper.bo.budget, 30);
  EXPECT_EQ(paper.train.epochs, 20);
  EXPECT_EQ(paper.train.batch_size, 64);
  EXPECT_EQ(paper.train.learning_rate, 1e-2);
  const auto desk = desk_preset();
  EXPECT_EQ(desk.server.num_clients, 5u);
  EXPECT_EQ(desk.server.horizon, 30u);
  EXPECT_EQ(desk.profiles.initial_volume, 200.0);
  EXPECT_NO_THROW(validate_config(desk));
  EXPECT_NO_THROW(validate_config(paper));
}

TEST(Config, OverlayChangesOnlyNamedFields) {
  const auto cfg = parse_config(R"({"preset":"paper","seed":7,"server":{"time_sensitivity":1.25},"bo":{"budget":12}})");
  EXPECT_EQ(cfg.scenario, "paper");
  EXPECT_EQ(cfg.server.time_sensitivity, 1.25);
  EXPECT_EQ(cfg.server.num_clients, 15u);
  EXPECT_EQ(cfg.bo.budget, 12);
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.bo.seed, 7u);
  EXPECT_EQ(cfg.train.seed, 7u);
  EXPECT_EQ(cfg.stream.seed, 7u);
}

TEST(Config, DerivedDefaultsFollowPopulation) {
  const auto cfg = parse_config(R"({"server":{"num_clients":8,"horizon":40},"profiles":{"initial_volume":500}})");
  EXPECT_NEAR(cfg.fixed_point.tolerance, 1e-6 * 8 * 500, 1e-15);
  EXPECT_EQ(cfg.stream.ramp_rounds, 40);
  const auto pinned = parse_config(R"({"server":{"num_clients":8},"fixed_point":{"tolerance":0.5}})");
  EXPECT_EQ(pinned.fixed_point.tolerance, 0.5);
}

TEST(Config, RoundTripsThroughJson) {
  auto cfg = paper_preset();
  cfg.server.time_sensitivity = 0.42;
  cfg.fixed_point.relaxation = Relaxation::fixed;
  cfg.sigma_grid = {0.1, 0.2};
  const auto back = parse_config(to_json(cfg).dump());
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, DiagnosticsNameTheField) {
  EXPECT_NE(error_of(R"({"server":{"gama":1}})").find("server.gama"), std::string::npos);
  EXPECT_NE(error_of(R"({"colour":1})").find("'colour'"), std::string::npos);
  EXPECT_NE(error_of(R"({"bo":{"budget":"thirty"}})").find("bo.budget"), std::string::npos);
  EXPECT_NE(error_of(R"({"bo":{"budget":2.5}})").find("bo.budget"), std::string::npos);
  EXPECT_NE(error_of(R"({"sweep":{"sigma_grid":[0.1,"x"]}})").find("sweep.sigma_grid[1]"), std::string::npos);
  EXPECT_NE(error_of(R"({"server":{"tradeoff":2}})").find("'server'"), std::string::npos);
  EXPECT_NE(error_of(R"({"fixed_point":{"relaxation":"anderson"}})").find("fixed_point.relaxation"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"preset":"huge"})").find("huge"), std::string::npos);
  EXPECT_NE(error_of(R"({"server":3})").find("'server'"), std::string::npos);
}

TEST(Config, SyntaxErrorsReportLineAndColumn) {
  const std::string msg = error_of("{\n  \"seed\": 3,\n  \"bo\": {\"budget\": }\n}");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column 20"), std::string::npos) << msg;
}

TEST(Config, HashIgnoresOutputDirectory) {
  auto a = desk_preset(), b = desk_preset();
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.server.kappa3 = 0.02;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Csv, HeaderHashSeedAndQuoting) {
  const auto cfg = desk_preset();
  CsvWriter w(cfg, {"name", "value"});
  w.row() << "plain" << 0.1;
  w.row() << "with,comma \"quoted\"" << 3;
  const std::string h = config_hash(cfg);
  EXPECT_EQ(w.str(), "config_hash,seed,name,value\r\n" + h + ",42,plain,0.1\r\n" + h +
                         ",42,\"with,comma \"\"quoted\"\"\",3\r\n");
}

TEST(Csv, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 63.18, 1e-300, -2.5e17}) {
    const std::string s = format_double(v);
    double back = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    EXPECT_EQ(back, v);
  }
}

TEST(RandomBaseline, MatchesTotalAndSkipsLastRound) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto inc = random_matched_increments(1234.5, 17, rng);
    double s = 0.0;
    for (double x : inc) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1234.5, 1e-9);
    EXPECT_EQ(inc.back(), 0.0);
  }
}

TEST(Scenario, BaselinesNeverBeatTheOptimalPlan) {
  const auto cfg = quick_config();
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  const auto phase = solve_strategy(cfg, profiles);
  ASSERT_TRUE(phase.converged);
  const auto rep = run_baselines(cfg, profiles, phase);
  ASSERT_EQ(rep.clients.size(), profiles.size());
  for (const auto& c : rep.clients) {
    EXPECT_GT(c.optimal_collection, 0.0);
    EXPECT_LE(c.zero_utility, c.optimal_utility);
    EXPECT_LE(c.random_best_utility, c.optimal_utility);
    EXPECT_LE(c.random_max_volume_error, 0.01);
  }
  EXPECT_EQ(rep.ablations.size(), cfg.baselines.payment_offsets.size() * cfg.baselines.conservation_offsets.size());
}

TEST(Scenario, ChosenThetaBeatsWideThetaAblations) {
  auto cfg = quick_config();
  cfg.bo.budget = 30;
  cfg.baselines.payment_offsets = {0.0};
  cfg.baselines.conservation_offsets = {-0.3, 0.0, 0.3};
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  const auto phase = solve_strategy(cfg, profiles);
  const auto rep = run_baselines(cfg, profiles, phase);
  ASSERT_EQ(rep.ablations.size(), 3u);
  EXPECT_LE(rep.ablations[1].cost, rep.ablations[0].cost);
  EXPECT_LE(rep.ablations[1].cost, rep.ablations[2].cost);
  EXPECT_NEAR(rep.ablations[1].cost, phase.cost, 1e-9 * phase.cost);
}

TEST(Scenario, PaymentOnlyObjectivePaysNothing) {
  auto cfg = quick_config();
  cfg.server.tradeoff = 1.0;
  cfg.train.epochs = 1;
  cfg.train.test_size = 200;
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  const auto phase = solve_strategy(cfg, profiles);
  EXPECT_EQ(phase.search.best_strategy.payment, cfg.bo.payment_min);
  EXPECT_EQ(phase.cost, 0.0);

  const ServerStrategy unpaid{0.0, phase.search.best_strategy.conservation};
  const auto baseline = solve_mean_field(unpaid, profiles, cfg.server.horizon, cfg.fixed_point);
  const auto stream = scenario_stream(cfg);
  const auto a = run_training(phase.search.best_strategy, phase.equilibrium.plans, stream, cfg.train);
  const auto b = run_training(unpaid, baseline.plans, stream, cfg.train);
  for (std::size_t t = 0; t < a.rounds.size(); ++t) EXPECT_EQ(a.rounds[t].accuracy, b.rounds[t].accuracy);
}

TEST(Scenario, ExpensivePaymentsStopCollectionWithoutStaleness) {
  // Without staleness pressure and with costly payments, the unpaid
  // no-collection plan beats every paid strategy on a grid.
  auto cfg = quick_config();
  cfg.server.time_sensitivity = 0.0;
  cfg.server.tradeoff = 0.5;
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  const ServerStrategy idle{0.0, 1.0};
  const auto idle_eq = solve_mean_field(idle, profiles, cfg.server.horizon, cfg.fixed_point);
  EXPECT_LT(max_collection(idle_eq.plans), cfg.cease_threshold);
  const double idle_cost = server_cost(idle, idle_eq.plans, cfg.server);
  for (double r : {0.5, 1.0, 5.0, 20.0, 60.0, 200.0, 500.0}) {
    for (double th : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const ServerStrategy s{r, th};
      const auto eq = solve_mean_field(s, profiles, cfg.server.horizon, cfg.fixed_point);
      EXPECT_LT(idle_cost, server_cost(s, eq.plans, cfg.server)) << r << "," << th;
    }
  }
}

TEST(Scenario, GridOracleCoversLattice) {
  auto cfg = quick_config();
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  const auto g = grid_search(profiles, cfg.server, cfg.bo, cfg.fixed_point, 6, 5);
  ASSERT_EQ(g.points.size(), 30u);
  EXPECT_EQ(g.points.front().strategy, (ServerStrategy{0.0, 0.0}));
  EXPECT_EQ(g.points.back().strategy, (ServerStrategy{500.0, 1.0}));
  for (const auto& p : g.points) EXPECT_GE(p.cost, g.best.cost);
}

TEST(Scenario, CsvOutputsAreReproducible) {
  auto cfg = quick_config();
  cfg.train.epochs = 2;
  cfg.train.test_size = 200;
  auto run = [&] {
    const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
    const auto phase = solve_strategy(cfg, profiles);
    const auto rep = run_baselines(cfg, profiles, phase);
    const auto cmp = train_against_static(cfg, profiles, phase);
    auto tw = training_csv(cfg);
    append_training_rows(tw, "dufl", cmp.optimal);
    append_training_rows(tw, "no_update", cmp.no_update);
    return profiles_csv(cfg, profiles).str() + bo_trace_csv(cfg, phase.search).str() +
           mean_field_csv(cfg, phase.equilibrium).str() + plans_csv(cfg, phase.equilibrium.plans).str() +
           baselines_csv(cfg, rep).str() + tw.str();
  };
  EXPECT_EQ(run(), run());
}

TEST(Scenario, ShippedConfigsLoad) {
  for (const char* name : {"desk.json", "paper.json", "sigma_sweep.json", "tiny_grid.json"}) {
    EXPECT_NO_THROW(load_config(std::string(DUFL_CONFIG_DIR) + "/" + name)) << name;
  }
}
