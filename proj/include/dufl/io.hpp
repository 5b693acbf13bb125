#pragma once

// Config files (JSON) and machine-readable outputs (CSV, JSON run record).
//
// A config file overlays a preset: only the keys it names change. Unknown
// keys and wrongly typed values are rejected with the dotted path of the
// offending field; syntax errors report line and column.

#include <cassert>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "dufl/experiment.hpp"

namespace dufl {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline Json to_json(const ExperimentConfig& cfg) {
  Json j;
  j["scenario"] = cfg.scenario;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["server"] = {{"tradeoff", cfg.server.tradeoff},
                 {"kappa1", cfg.server.kappa1},
                 {"kappa2", cfg.server.kappa2},
                 {"kappa3", cfg.server.kappa3},
                 {"noise_scale", cfg.server.noise_scale},
                 {"time_sensitivity", cfg.server.time_sensitivity},
                 {"num_clients", cfg.server.num_clients},
                 {"horizon", cfg.server.horizon}};
  j["bo"] = {{"initial_design_size", cfg.bo.initial_design_size},
             {"candidate_pool_size", cfg.bo.candidate_pool_size},
             {"budget", cfg.bo.budget},
             {"payment_min", cfg.bo.payment_min},
             {"payment_max", cfg.bo.payment_max},
             {"conservation_min", cfg.bo.conservation_min},
             {"conservation_max", cfg.bo.conservation_max}};
  j["fixed_point"] = {{"tolerance", cfg.fixed_point.tolerance},
                      {"max_iterations", cfg.fixed_point.max_iterations},
                      {"damping", cfg.fixed_point.damping},
                      {"relaxation", cfg.fixed_point.relaxation == Relaxation::secant ? "secant" : "fixed"}};
  j["stream"] = {{"feature_dim", cfg.stream.feature_dim},
                 {"num_classes", cfg.stream.num_classes},
                 {"class_radius", cfg.stream.class_radius},
                 {"class_spread", cfg.stream.class_spread},
                 {"aging_noise", cfg.stream.aging_noise},
                 {"ramp_rounds", cfg.stream.ramp_rounds},
                 {"drift_per_sigma", cfg.schedule.drift_per_sigma},
                 {"coverage_per_sigma", cfg.schedule.coverage_per_sigma}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"l2", cfg.train.l2},
                {"test_size", cfg.train.test_size}};
  j["profiles"] = {{"alpha_lo", cfg.profiles.alpha_lo},
                   {"alpha_hi", cfg.profiles.alpha_hi},
                   {"beta_lo", cfg.profiles.beta_lo},
                   {"beta_hi", cfg.profiles.beta_hi},
                   {"initial_volume", cfg.profiles.initial_volume}};
  j["baselines"] = {{"random_draws", cfg.baselines.random_draws},
                    {"payment_offsets", cfg.baselines.payment_offsets},
                    {"conservation_offsets", cfg.baselines.conservation_offsets}};
  j["sweep"] = {{"sigma_grid", cfg.sigma_grid}, {"cease_threshold", cfg.cease_threshold}};
  j["grid"] = {{"payment_points", cfg.grid_payment_points},
               {"conservation_points", cfg.grid_conservation_points}};
  return j;
}

/// FNV-1a over the canonical JSON of the config, output directory excluded.
inline std::string config_hash(const ExperimentConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("output_dir");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  const auto res = std::to_chars(buf, buf + 16, h, 16);
  std::string hex(buf, res.ptr);
  return std::string(16 - hex.size(), '0') + hex;
}

namespace detail {

class Overlay {
 public:
  Overlay(const Json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + "expected an object");
  }

  /// Rejects keys outside `known`.
  void only(std::initializer_list<std::string_view> known) const {
    for (const auto& [key, _] : node_.items()) {
      bool ok = false;
      for (auto k : known) ok = ok || k == key;
      if (!ok) throw ConfigError("unknown field '" + join(key) + "'");
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  Overlay child(const std::string& key) const { return Overlay(node_.at(key), join(key)); }

  void number(const std::string& key, double& out) const {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_number()) throw ConfigError("field '" + join(key) + "' must be a number");
    out = v.get<double>();
  }

  template <class Int>
  void integer(const std::string& key, Int& out) const {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_number_integer()) throw ConfigError("field '" + join(key) + "' must be an integer");
    if (v.is_number_unsigned() || v.get<long long>() >= 0) {
      out = static_cast<Int>(v.get<std::uint64_t>());
    } else if constexpr (std::is_signed_v<Int>) {
      out = static_cast<Int>(v.get<long long>());
    } else {
      throw ConfigError("field '" + join(key) + "' must be nonnegative");
    }
  }

  void string(const std::string& key, std::string& out) const {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_string()) throw ConfigError("field '" + join(key) + "' must be a string");
    out = v.get<std::string>();
  }

  void numbers(const std::string& key, std::vector<double>& out) const {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_array()) throw ConfigError("field '" + join(key) + "' must be an array of numbers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError("field '" + join(key) + "[" + std::to_string(i) + "]' must be a number");
      out.push_back(v[i].get<double>());
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config: " : "field '" + path_ + "': "; }

  const Json& node_;
  std::string path_;
};

inline std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte > 0 ? byte - 1 : 0, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Validates one section, prefixing the failure with its path.
inline void validate_section(const std::string& path, const std::function<void()>& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("field '" + path + "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

/// Overlays `root` onto `base`. Derived defaults (fixed-point tolerance,
/// class ramp) follow the population size unless set explicitly.
inline ExperimentConfig overlay_config(ExperimentConfig cfg, const Json& root) {
  const detail::Overlay top(root, "");
  top.only({"preset", "scenario", "seed", "output_dir", "server", "bo", "fixed_point", "stream", "train", "profiles",
            "baselines", "sweep", "grid"});
  top.string("scenario", cfg.scenario);
  top.string("output_dir", cfg.output_dir);
  std::uint64_t seed = cfg.seed;
  top.integer("seed", seed);

  bool tolerance_set = false, ramp_set = false;
  if (top.has("server")) {
    const auto s = top.child("server");
    s.only({"tradeoff", "kappa1", "kappa2", "kappa3", "noise_scale", "time_sensitivity", "num_clients", "horizon"});
    s.number("tradeoff", cfg.server.tradeoff);
    s.number("kappa1", cfg.server.kappa1);
    s.number("kappa2", cfg.server.kappa2);
    s.number("kappa3", cfg.server.kappa3);
    s.number("noise_scale", cfg.server.noise_scale);
    s.number("time_sensitivity", cfg.server.time_sensitivity);
    s.integer("num_clients", cfg.server.num_clients);
    s.integer("horizon", cfg.server.horizon);
  }
  if (top.has("bo")) {
    const auto s = top.child("bo");
    s.only({"initial_design_size", "candidate_pool_size", "budget", "payment_min", "payment_max", "conservation_min",
            "conservation_max"});
    s.integer("initial_design_size", cfg.bo.initial_design_size);
    s.integer("candidate_pool_size", cfg.bo.candidate_pool_size);
    s.integer("budget", cfg.bo.budget);
    s.number("payment_min", cfg.bo.payment_min);
    s.number("payment_max", cfg.bo.payment_max);
    s.number("conservation_min", cfg.bo.conservation_min);
    s.number("conservation_max", cfg.bo.conservation_max);
  }
  if (top.has("fixed_point")) {
    const auto s = top.child("fixed_point");
    s.only({"tolerance", "max_iterations", "damping", "relaxation"});
    tolerance_set = s.has("tolerance");
    s.number("tolerance", cfg.fixed_point.tolerance);
    s.integer("max_iterations", cfg.fixed_point.max_iterations);
    s.number("damping", cfg.fixed_point.damping);
    std::string mode = cfg.fixed_point.relaxation == Relaxation::secant ? "secant" : "fixed";
    s.string("relaxation", mode);
    if (mode == "secant") {
      cfg.fixed_point.relaxation = Relaxation::secant;
    } else if (mode == "fixed") {
      cfg.fixed_point.relaxation = Relaxation::fixed;
    } else {
      throw ConfigError("field 'fixed_point.relaxation' must be \"secant\" or \"fixed\"");
    }
  }
  if (top.has("stream")) {
    const auto s = top.child("stream");
    s.only({"feature_dim", "num_classes", "class_radius", "class_spread", "aging_noise", "ramp_rounds",
            "drift_per_sigma", "coverage_per_sigma"});
    s.integer("feature_dim", cfg.stream.feature_dim);
    s.integer("num_classes", cfg.stream.num_classes);
    s.number("class_radius", cfg.stream.class_radius);
    s.number("class_spread", cfg.stream.class_spread);
    s.number("aging_noise", cfg.stream.aging_noise);
    ramp_set = s.has("ramp_rounds");
    s.integer("ramp_rounds", cfg.stream.ramp_rounds);
    s.number("drift_per_sigma", cfg.schedule.drift_per_sigma);
    s.number("coverage_per_sigma", cfg.schedule.coverage_per_sigma);
  }
  if (top.has("train")) {
    const auto s = top.child("train");
    s.only({"epochs", "batch_size", "learning_rate", "l2", "test_size"});
    s.integer("epochs", cfg.train.epochs);
    s.integer("batch_size", cfg.train.batch_size);
    s.number("learning_rate", cfg.train.learning_rate);
    s.number("l2", cfg.train.l2);
    s.integer("test_size", cfg.train.test_size);
  }
  if (top.has("profiles")) {
    const auto s = top.child("profiles");
    s.only({"alpha_lo", "alpha_hi", "beta_lo", "beta_hi", "initial_volume"});
    s.number("alpha_lo", cfg.profiles.alpha_lo);
    s.number("alpha_hi", cfg.profiles.alpha_hi);
    s.number("beta_lo", cfg.profiles.beta_lo);
    s.number("beta_hi", cfg.profiles.beta_hi);
    s.number("initial_volume", cfg.profiles.initial_volume);
  }
  if (top.has("baselines")) {
    const auto s = top.child("baselines");
    s.only({"random_draws", "payment_offsets", "conservation_offsets"});
    s.integer("random_draws", cfg.baselines.random_draws);
    s.numbers("payment_offsets", cfg.baselines.payment_offsets);
    s.numbers("conservation_offsets", cfg.baselines.conservation_offsets);
  }
  if (top.has("sweep")) {
    const auto s = top.child("sweep");
    s.only({"sigma_grid", "cease_threshold"});
    s.numbers("sigma_grid", cfg.sigma_grid);
    s.number("cease_threshold", cfg.cease_threshold);
  }
  if (top.has("grid")) {
    const auto s = top.child("grid");
    s.only({"payment_points", "conservation_points"});
    s.integer("payment_points", cfg.grid_payment_points);
    s.integer("conservation_points", cfg.grid_conservation_points);
  }

  if (!tolerance_set) {
    cfg.fixed_point.tolerance = std::max(
        1e-6 * static_cast<double>(cfg.server.num_clients) * cfg.profiles.initial_volume, 1e-9);
  }
  if (!ramp_set) cfg.stream.ramp_rounds = static_cast<int>(std::max<std::size_t>(cfg.server.horizon, 1));
  apply_seed(cfg, seed);
  return cfg;
}

inline void validate_config(const ExperimentConfig& cfg) {
  detail::validate_section("server", [&] { cfg.server.validate(); });
  detail::validate_section("bo", [&] { cfg.bo.validate(); });
  detail::validate_section("fixed_point", [&] { cfg.fixed_point.validate(); });
  detail::validate_section("stream", [&] { cfg.stream.validate(); });
  detail::validate_section("profiles", [&] { cfg.profiles.validate(); });
  detail::validate_section("config", [&] { cfg.validate(); });
}

/// Parses JSON text onto a preset. The file may name its own base with
/// "preset"; `fallback_preset` applies otherwise.
inline ExperimentConfig parse_config(std::string_view text, const std::string& fallback_preset = "desk") {
  Json root;
  try {
    root = Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte);
    std::string msg = e.what();
    const auto colon = msg.find(": ", msg.find("parse error"));
    throw ConfigError("syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                      (colon == std::string::npos ? "" : ": " + msg.substr(colon + 2)));
  }
  if (!root.is_object()) throw ConfigError("config: expected an object at the top level");
  std::string preset = fallback_preset;
  if (root.contains("preset")) {
    if (!root["preset"].is_string()) throw ConfigError("field 'preset' must be a string");
    preset = root["preset"].get<std::string>();
  }
  ExperimentConfig cfg = overlay_config(preset_by_name(preset), root);
  validate_config(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& fallback_preset = "desk") {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), fallback_preset);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// RFC-4180 CSV whose rows all start with the config hash and seed.
class CsvWriter {
 public:
  CsvWriter(const ExperimentConfig& cfg, std::vector<std::string> columns)
      : hash_(config_hash(cfg)), seed_(std::to_string(cfg.seed)) {
    std::vector<std::string> header{"config_hash", "seed"};
    header.insert(header.end(), columns.begin(), columns.end());
    width_ = columns.size();
    emit(header);
  }

  class Row {
   public:
    explicit Row(CsvWriter& w) : w_(w) {}
    Row& operator<<(double v) { return push(format_double(v)); }
    Row& operator<<(int v) { return push(std::to_string(v)); }
    Row& operator<<(long v) { return push(std::to_string(v)); }
    Row& operator<<(long long v) { return push(std::to_string(v)); }
    Row& operator<<(unsigned long v) { return push(std::to_string(v)); }
    Row& operator<<(unsigned long long v) { return push(std::to_string(v)); }
    Row& operator<<(bool v) { return push(v ? "true" : "false"); }
    Row& operator<<(const char* v) { return push(v); }
    Row& operator<<(const std::string& v) { return push(v); }
    ~Row() { w_.finish(cells_); }

   private:
    Row& push(std::string s) {
      cells_.push_back(std::move(s));
      return *this;
    }
    CsvWriter& w_;
    std::vector<std::string> cells_;
  };

  Row row() { return Row(*this); }

  const std::string& str() const noexcept { return out_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << out_;
  }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }

  void finish(const std::vector<std::string>& cells) {
    assert(cells.size() == width_ && "CSV row width does not match its header");
    std::vector<std::string> full{hash_, seed_};
    full.insert(full.end(), cells.begin(), cells.end());
    emit(full);
  }

  void emit(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ += ',';
      out_ += quote(cells[i]);
    }
    out_ += "\r\n";
  }

  std::string hash_, seed_;
  std::size_t width_ = 0;
  std::string out_;
};

inline CsvWriter profiles_csv(const ExperimentConfig& cfg, std::span<const ClientProfile> profiles) {
  CsvWriter w(cfg, {"client", "collect_cost", "train_cost", "initial_volume"});
  for (std::size_t k = 0; k < profiles.size(); ++k)
    w.row() << k << profiles[k].collect_cost << profiles[k].train_cost << profiles[k].initial_volume;
  return w;
}

inline CsvWriter bo_trace_csv(const ExperimentConfig& cfg, const BoResult& bo) {
  CsvWriter w(cfg, {"iteration", "payment", "conservation", "cost", "incumbent", "acquisition", "converged",
                    "initial_design"});
  for (const auto& r : bo.trace)
    w.row() << r.iteration << r.strategy.payment << r.strategy.conservation << r.cost << r.incumbent << r.acquisition
            << r.converged << r.initial_design;
  return w;
}

inline CsvWriter mean_field_csv(const ExperimentConfig& cfg, const EquilibriumReport& eq) {
  CsvWriter w(cfg, {"kind", "index", "value"});
  for (std::size_t j = 0; j < eq.residual_history.size(); ++j) w.row() << "residual" << j + 1 << eq.residual_history[j];
  for (std::size_t t = 0; t < eq.initial_field.phi.size(); ++t) w.row() << "phi0" << t << eq.initial_field.phi[t];
  for (std::size_t t = 0; t < eq.field.phi.size(); ++t) w.row() << "phi" << t << eq.field.phi[t];
  return w;
}

inline CsvWriter plans_csv(const ExperimentConfig& cfg, std::span<const ClientPlan> plans) {
  CsvWriter w(cfg, {"client", "round", "increment", "volume", "costate", "staleness"});
  for (std::size_t k = 0; k < plans.size(); ++k)
    for (std::size_t t = 0; t < plans[k].horizon(); ++t)
      w.row() << k << t << plans[k].increments[t] << plans[k].volumes[t] << plans[k].costates[t]
              << plans[k].staleness[t];
  return w;
}

inline void append_training_rows(CsvWriter& w, const std::string& run, const TrainingResult& result) {
  for (const auto& r : result.rounds) {
    for (std::size_t k = 0; k < r.volumes.size(); ++k)
      w.row() << run << r.round << r.accuracy << r.loss << k << r.volumes[k] << r.collected[k] << r.payments[k]
              << r.staleness[k];
  }
}

inline CsvWriter training_csv(const ExperimentConfig& cfg) {
  return CsvWriter(cfg, {"run", "round", "accuracy", "loss", "client", "volume", "collected", "payment", "staleness"});
}

inline CsvWriter baselines_csv(const ExperimentConfig& cfg, const BaselineReport& rep) {
  CsvWriter w(cfg, {"kind", "client", "payment", "conservation", "utility_optimal", "utility_zero",
                    "utility_random_best", "utility_random_mean", "volume_error", "cost"});
  for (const auto& c : rep.clients)
    w.row() << "client" << c.client << "" << "" << c.optimal_utility << c.zero_utility << c.random_best_utility
            << c.random_mean_utility << c.random_max_volume_error << "";
  w.row() << "server_optimal" << "" << "" << "" << "" << "" << "" << "" << "" << rep.optimal_cost;
  w.row() << "server_zero" << "" << "" << "" << "" << "" << "" << "" << "" << rep.zero_cost;
  w.row() << "server_random" << "" << "" << "" << "" << "" << "" << "" << "" << rep.random_cost;
  for (const auto& a : rep.ablations)
    w.row() << "ablation" << "" << a.strategy.payment << a.strategy.conservation << "" << "" << "" << "" << ""
            << a.cost;
  return w;
}

inline CsvWriter sweep_csv(const ExperimentConfig& cfg, std::span<const SweepRow> rows) {
  CsvWriter w(cfg, {"sigma", "payment", "conservation", "cost", "total_collection", "max_collection", "ceased",
                    "converged"});
  for (const auto& r : rows)
    w.row() << r.sigma << r.strategy.payment << r.strategy.conservation << r.cost << r.total_collection
            << r.max_collection << r.ceased << r.converged;
  return w;
}

inline CsvWriter grid_csv(const ExperimentConfig& cfg, const GridResult& grid) {
  CsvWriter w(cfg, {"payment", "conservation", "cost", "converged"});
  for (const auto& p : grid.points) w.row() << p.strategy.payment << p.strategy.conservation << p.cost << p.converged;
  return w;
}

}  // namespace dufl
