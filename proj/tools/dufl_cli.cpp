// dufl_cli: batch driver for strategy decision, training, baselines, sigma
// sweeps and the dense grid oracle.
//
// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 non-convergence.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dufl/experiment.hpp"
#include "dufl/io.hpp"

namespace fs = std::filesystem;
using namespace dufl;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNonConvergence = 3;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string preset = "desk";
};

ExperimentConfig resolve(const GlobalOptions& opt) {
  ExperimentConfig cfg = opt.config_path.empty() ? preset_by_name(opt.preset) : load_config(opt.config_path, opt.preset);
  if (opt.seed) apply_seed(cfg, *opt.seed);
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  validate_config(cfg);
  return cfg;
}

// Writes each artifact as soon as it exists so a later failure keeps them.
class Outputs {
 public:
  Outputs(const ExperimentConfig& cfg, std::string command) : cfg_(cfg), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(cfg.output_dir);
    record_["command"] = std::move(command);
    record_["config"] = to_json(cfg);
    record_["config_hash"] = config_hash(cfg);
    record_["seed"] = cfg.seed;
  }

  void csv(const std::string& name, const CsvWriter& w) {
    w.save((fs::path(cfg_.output_dir) / (name + ".csv")).string());
    record_["outputs"].push_back(name + ".csv");
  }

  Json& record() { return record_; }

  void flush() {
    record_["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream f(fs::path(cfg_.output_dir) / "run_record.json");
    f << record_.dump(2) << '\n';
  }

 private:
  const ExperimentConfig& cfg_;
  std::chrono::steady_clock::time_point start_;
  Json record_;
};

Json summarize(const StrategyPhase& phase) {
  const auto& eq = phase.equilibrium;
  Json j;
  j["payment"] = phase.search.best_strategy.payment;
  j["conservation"] = phase.search.best_strategy.conservation;
  j["cost"] = phase.cost;
  j["converged"] = phase.converged;
  j["iterations"] = eq.iterations_used;
  j["residuals"] = eq.residual_history;
  j["fell_back_to_damping"] = eq.fell_back_to_damping;
  j["evaluations"] = phase.search.trace.size();
  return j;
}

Json summarize(const TrainingResult& r) {
  Json j;
  j["final_accuracy"] = r.final_accuracy();
  j["skipped_client_rounds"] = r.skipped_clients;
  Json acc = Json::array();
  for (const auto& m : r.rounds) acc.push_back(m.accuracy);
  j["accuracy"] = acc;
  return j;
}

StrategyPhase strategy_phase(const ExperimentConfig& cfg, const std::vector<ClientProfile>& profiles, Outputs& out) {
  out.csv("profiles", profiles_csv(cfg, profiles));
  StrategyPhase phase = solve_strategy(cfg, profiles);
  out.csv("bo_trace", bo_trace_csv(cfg, phase.search));
  out.csv("mean_field", mean_field_csv(cfg, phase.equilibrium));
  out.csv("plans", plans_csv(cfg, phase.equilibrium.plans));
  out.record()["equilibrium"] = summarize(phase);
  std::cout << "strategy R=" << format_double(phase.search.best_strategy.payment)
            << " theta=" << format_double(phase.search.best_strategy.conservation)
            << " cost=" << format_double(phase.cost) << " converged=" << (phase.converged ? "true" : "false") << '\n';
  return phase;
}

int run_solve(const ExperimentConfig& cfg, bool train, bool baselines) {
  Outputs out(cfg, train ? "train" : baselines ? "baselines" : "solve");
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  const StrategyPhase phase = strategy_phase(cfg, profiles, out);
  bool converged = phase.converged;
  out.flush();

  if (baselines) {
    const BaselineReport rep = run_baselines(cfg, profiles, phase);
    out.csv("baselines", baselines_csv(cfg, rep));
    for (const auto& a : rep.ablations) converged = converged && a.converged;
    out.record()["baselines"] = {{"optimal_cost", rep.optimal_cost},
                                 {"zero_cost", rep.zero_cost},
                                 {"random_cost", rep.random_cost}};
    out.flush();
  }
  if (train || baselines) {
    const TrainingComparison cmp = train_against_static(cfg, profiles, phase);
    CsvWriter w = training_csv(cfg);
    append_training_rows(w, "dufl", cmp.optimal);
    append_training_rows(w, "no_update", cmp.no_update);
    out.csv("training_metrics", w);
    out.record()["training"] = {{"dufl", summarize(cmp.optimal)}, {"no_update", summarize(cmp.no_update)}};
    std::cout << "final accuracy dufl=" << format_double(cmp.optimal.final_accuracy())
              << " no_update=" << format_double(cmp.no_update.final_accuracy()) << '\n';
  }
  out.record()["converged"] = converged;
  out.flush();
  return converged ? 0 : kExitNonConvergence;
}

int run_sweep(const ExperimentConfig& cfg) {
  Outputs out(cfg, "sweep");
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  out.csv("profiles", profiles_csv(cfg, profiles));
  const auto rows = run_sigma_sweep(cfg, profiles, cfg.sigma_grid);
  out.csv("sweep", sweep_csv(cfg, rows));
  bool converged = true;
  Json table = Json::array();
  for (const auto& r : rows) {
    converged = converged && r.converged;
    table.push_back({{"sigma", r.sigma},
                     {"payment", r.strategy.payment},
                     {"conservation", r.strategy.conservation},
                     {"ceased", r.ceased}});
    std::cout << "sigma=" << format_double(r.sigma) << " R=" << format_double(r.strategy.payment)
              << " theta=" << format_double(r.strategy.conservation) << (r.ceased ? " ceased" : "") << '\n';
  }
  out.record()["sweep"] = table;
  out.record()["converged"] = converged;
  out.flush();
  return converged ? 0 : kExitNonConvergence;
}

int run_grid(const ExperimentConfig& cfg) {
  Outputs out(cfg, "grid");
  const auto profiles = sample_profiles(cfg.profiles, cfg.server.num_clients, cfg.seed);
  out.csv("profiles", profiles_csv(cfg, profiles));
  const GridResult grid = grid_search(profiles, cfg.server, cfg.bo, cfg.fixed_point, cfg.grid_payment_points,
                                      cfg.grid_conservation_points);
  out.csv("grid", grid_csv(cfg, grid));
  bool converged = true;
  for (const auto& p : grid.points) converged = converged && p.converged;
  out.record()["grid_best"] = {{"payment", grid.best.strategy.payment},
                               {"conservation", grid.best.strategy.conservation},
                               {"cost", grid.best.cost}};
  out.record()["converged"] = converged;
  out.flush();
  std::cout << "grid best R=" << format_double(grid.best.strategy.payment)
            << " theta=" << format_double(grid.best.strategy.conservation)
            << " cost=" << format_double(grid.best.cost) << '\n';
  return converged ? 0 : kExitNonConvergence;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-update federated learning mechanism: strategy search, training and sweeps"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOptions opt;
  std::uint64_t seed = 0;
  app.add_option("--config", opt.config_path, "JSON config overlaying the preset")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Scenario seed (profiles, search, stream, training)");
  app.add_option("--out", opt.out, "Output directory");
  app.add_option("--preset", opt.preset, "Base configuration")->check(CLI::IsMember({"desk", "paper"}));

  auto* solve = app.add_subcommand("solve", "Strategy decision phase only");
  auto* train = app.add_subcommand("train", "Strategy decision followed by federated training");
  auto* baselines = app.add_subcommand("baselines", "Zero, random and ablation baselines plus training comparison");
  auto* sweep = app.add_subcommand("sweep", "Best strategy across a sigma grid");
  auto* grid = app.add_subcommand("grid", "Dense (R, theta) grid of the true server cost");

  std::vector<double> sigma_override;
  sweep->add_option("--sigma", sigma_override, "Sigma grid (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version requests exit 0; malformed invocations are config errors.
    const int code = app.exit(e);
    return e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success) ? code : 2;
  }
  if (seed_opt->count() > 0) opt.seed = seed;

  try {
    ExperimentConfig cfg = resolve(opt);
    if (!sigma_override.empty()) cfg.sigma_grid = sigma_override;
    if (*solve) return run_solve(cfg, false, false);
    if (*train) return run_solve(cfg, true, false);
    if (*baselines) return run_solve(cfg, false, true);
    if (*sweep) return run_sweep(cfg);
    if (*grid) return run_grid(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NonConvergenceError& e) {
    std::cerr << "non-convergence: " << e.what() << '\n';
    return kExitNonConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
