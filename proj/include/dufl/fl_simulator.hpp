#pragma once

// Desk-scale federated training with buffered data streams.
//
// Each client keeps a FIFO buffer. At round t it drops the oldest
// (1 - theta) fraction, appends the fresh samples its plan calls for,
// trains a multinomial logistic model on an aged copy of the buffer and
// uploads the result; the server averages the uploads by buffer size.
//
// The stream is synthetic: K Gaussian class clusters whose means rotate by
// drift_rate radians per round, with only part of the label set visible at
// round 0 and the rest phased in linearly. Aging blurs a sample by
// N(0, (aging_noise * sensitivity * age)^2) noise, redrawn every round.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dufl/client_planner.hpp"
#include "dufl/common.hpp"
#include "dufl/strategy.hpp"

namespace dufl {

struct Sample {
  Eigen::VectorXd features;
  int label = 0;
  int birth_round = 0;
};

struct ClientBuffer {
  std::deque<Sample> samples;              // ordered by birth_round
  std::optional<std::size_t> capacity;     // U, when set

  std::size_t size() const noexcept { return samples.size(); }
};

struct StreamConfig {
  int feature_dim = 10;
  int num_classes = 10;
  double class_radius = 3.0;         // distance of class means from the origin
  double class_spread = 1.0;         // within-class standard deviation
  double drift_rate = 0.0;           // radians per round
  double aging_noise = 0.1;          // blur per unit of (sensitivity * age)
  double sensitivity = 0.0;          // sigma
  double initial_class_fraction = 1.0;
  int ramp_rounds = 30;              // rounds until every class is visible
  std::uint64_t seed = 7;

  void validate() const {
    detail::require(feature_dim >= 1 && num_classes >= 2, "stream needs a feature dimension and two classes");
    detail::require(class_spread >= 0.0 && class_radius >= 0.0, "cluster geometry must be nonnegative");
    detail::require(drift_rate >= 0.0 && aging_noise >= 0.0 && sensitivity >= 0.0,
                    "drift, aging and sensitivity magnitudes must be nonnegative");
    detail::require(initial_class_fraction > 0.0 && initial_class_fraction <= 1.0,
                    "initial class fraction must lie in (0, 1]");
    detail::require(ramp_rounds >= 1, "class ramp must last at least one round");
  }
};

/// Stream whose concrete schedules (drift, class coverage) scale with the
/// time sensitivity: drift_rate = drift_per_sigma * sigma and
/// initial_class_fraction = max(1/K, 1 - coverage_per_sigma * sigma).
inline StreamConfig stream_for_sensitivity(StreamConfig base, double sigma, double drift_per_sigma,
                                           double coverage_per_sigma) {
  base.sensitivity = sigma;
  base.drift_rate = drift_per_sigma * sigma;
  base.initial_class_fraction =
      std::clamp(1.0 - coverage_per_sigma * sigma, 1.0 / static_cast<double>(base.num_classes), 1.0);
  return base;
}

namespace detail {

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

enum RngTag : std::uint64_t { kDrawTag = 1, kAgeTag = 2, kTrainTag = 3, kMeansTag = 4, kInitTag = 5 };

}  // namespace detail

class DriftingStream {
 public:
  explicit DriftingStream(StreamConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    auto rng = detail::seeded_rng(cfg_.seed, 0, 0, detail::kMeansTag);
    std::normal_distribution<double> normal(0.0, 1.0);
    base_means_.resize(cfg_.num_classes);
    for (auto& m : base_means_) {
      m.resize(cfg_.feature_dim);
      for (int i = 0; i < cfg_.feature_dim; ++i) m(i) = normal(rng);
      const double norm = m.norm();
      if (norm > 0.0) m *= cfg_.class_radius / norm;
    }
  }

  const StreamConfig& config() const noexcept { return cfg_; }

  /// Number of labels visible at round t; labels are always 0..count-1.
  int available_classes(int round) const {
    const double f0 = cfg_.initial_class_fraction;
    const double frac = std::min(1.0, f0 + (1.0 - f0) * static_cast<double>(std::max(round, 0)) / cfg_.ramp_rounds);
    const int count = static_cast<int>(std::ceil(frac * cfg_.num_classes - 1e-9));
    return std::clamp(count, 1, cfg_.num_classes);
  }

  /// Class mean rotated by drift_rate * round in each coordinate plane (0,1), (2,3), ...
  Eigen::VectorXd class_mean(int label, int round) const {
    Eigen::VectorXd m = base_means_.at(label);
    const double angle = cfg_.drift_rate * round;
    const double c = std::cos(angle), s = std::sin(angle);
    for (int i = 0; i + 1 < cfg_.feature_dim; i += 2) {
      const double a = m(i), b = m(i + 1);
      m(i) = c * a - s * b;
      m(i + 1) = s * a + c * b;
    }
    return m;
  }

 private:
  StreamConfig cfg_;
  std::vector<Eigen::VectorXd> base_means_;
};

/// Reserved client id for the held-out test stream.
inline constexpr std::uint64_t kTestStreamClient = 0xFFFF'FFFFULL;

inline std::vector<Sample> draw_fresh(const DriftingStream& stream, std::uint64_t client, int round, std::size_t count) {
  std::vector<Sample> out;
  if (count == 0) return out;
  out.reserve(count);
  auto rng = detail::seeded_rng(stream.config().seed, client, static_cast<std::uint64_t>(round), detail::kDrawTag);
  std::uniform_int_distribution<int> pick(0, stream.available_classes(round) - 1);
  std::normal_distribution<double> normal(0.0, stream.config().class_spread);
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    s.label = pick(rng);
    s.birth_round = round;
    s.features = stream.class_mean(s.label, round);
    for (int d = 0; d < s.features.size(); ++d) s.features(d) += normal(rng);
    out.push_back(std::move(s));
  }
  return out;
}

/// Drops ceil((1 - theta) * count) oldest samples, then appends `fresh`
/// (trimming the oldest again if a capacity is set).
inline ClientBuffer apply_buffer_update(ClientBuffer buffer, double theta, std::vector<Sample> fresh, int round) {
  detail::require(detail::is_unit_interval(theta), "conservation rate must lie in [0, 1]");
  const auto drop = static_cast<std::size_t>(std::ceil((1.0 - theta) * static_cast<double>(buffer.size()) - 1e-9));
  for (std::size_t i = 0; i < drop && !buffer.samples.empty(); ++i) buffer.samples.pop_front();
  for (auto& s : fresh) {
    s.birth_round = round;
    buffer.samples.push_back(std::move(s));
  }
  if (buffer.capacity) {
    while (buffer.samples.size() > *buffer.capacity) buffer.samples.pop_front();
  }
  return buffer;
}

/// Aged copy of the buffer: each sample gets fresh N(0, (aging_noise * sigma * age)^2) noise.
inline ClientBuffer age_samples(const ClientBuffer& buffer, const StreamConfig& stream, int round,
                                std::mt19937_64& rng) {
  ClientBuffer out = buffer;
  const double per_age = stream.aging_noise * stream.sensitivity;
  if (per_age <= 0.0) return out;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& s : out.samples) {
    const double std_dev = per_age * static_cast<double>(round - s.birth_round);
    if (std_dev <= 0.0) continue;
    for (int d = 0; d < s.features.size(); ++d) s.features(d) += std_dev * normal(rng);
  }
  return out;
}

struct GlobalModel {
  Eigen::MatrixXd weights;  // K x d
  Eigen::VectorXd bias;     // K
  int round = 0;

  static GlobalModel zeros(int num_classes, int feature_dim) {
    return {Eigen::MatrixXd::Zero(num_classes, feature_dim), Eigen::VectorXd::Zero(num_classes), 0};
  }
};

struct LogisticGradient {
  double loss = 0.0;
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

/// Mean cross-entropy of softmax(W x + b) plus (l2 / 2) ||W||^2, and its gradient.
template <class SampleRange>
LogisticGradient logistic_loss_and_gradient(const GlobalModel& model, const SampleRange& batch, double l2) {
  LogisticGradient g{0.0, Eigen::MatrixXd::Zero(model.weights.rows(), model.weights.cols()),
                     Eigen::VectorXd::Zero(model.bias.size())};
  std::size_t n = 0;
  for (const Sample& s : batch) {
    Eigen::VectorXd logits = model.weights * s.features + model.bias;
    const double top = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - top).exp();
    const double z = p.sum();
    p /= z;
    g.loss += -(logits(s.label) - top - std::log(z));
    p(s.label) -= 1.0;
    g.weights.noalias() += p * s.features.transpose();
    g.bias += p;
    ++n;
  }
  if (n > 0) {
    const double inv = 1.0 / static_cast<double>(n);
    g.loss *= inv;
    g.weights *= inv;
    g.bias *= inv;
  }
  g.loss += 0.5 * l2 * model.weights.squaredNorm();
  g.weights += l2 * model.weights;
  return g;
}

inline int predict_label(const GlobalModel& model, const Eigen::VectorXd& x) {
  Eigen::Index best = 0;
  (model.weights * x + model.bias).maxCoeff(&best);
  return static_cast<int>(best);
}

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-2;
  double l2 = 1e-4;
  int test_size = 2000;
  std::uint64_t seed = 42;
};

struct LocalTrainResult {
  GlobalModel model;
  bool trained = false;
};

/// Mini-batch gradient descent over a shuffled pass per epoch.
inline LocalTrainResult local_train(const GlobalModel& model, const ClientBuffer& buffer, const TrainConfig& cfg,
                                    std::mt19937_64& rng) {
  if (buffer.samples.empty()) return {model, false};
  LocalTrainResult out{model, true};
  std::vector<std::size_t> order(buffer.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Sample> batch;
  const auto b = static_cast<std::size_t>(std::max(cfg.batch_size, 1));
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += b) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + b, order.size()); ++i) batch.push_back(buffer.samples[order[i]]);
      const auto g = logistic_loss_and_gradient(out.model, batch, cfg.l2);
      out.model.weights -= cfg.learning_rate * g.weights;
      out.model.bias -= cfg.learning_rate * g.bias;
    }
  }
  return out;
}

struct AggregateResult {
  GlobalModel model;
  bool ok = true;
};

/// Volume-weighted average; keeps `previous` when every weight is zero.
inline AggregateResult aggregate(std::span<const GlobalModel> models, std::span<const double> volumes,
                                 const GlobalModel& previous) {
  detail::require(models.size() == volumes.size(), "one volume per model");
  double total = 0.0;
  for (double v : volumes) total += v;
  if (!(total > 0.0)) return {previous, false};
  GlobalModel out{Eigen::MatrixXd::Zero(previous.weights.rows(), previous.weights.cols()),
                  Eigen::VectorXd::Zero(previous.bias.size()), previous.round + 1};
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (volumes[k] <= 0.0) continue;
    const double w = volumes[k] / total;
    out.weights += w * models[k].weights;
    out.bias += w * models[k].bias;
  }
  return {out, true};
}

struct RoundMetrics {
  int round = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<std::size_t> volumes;     // realized buffer counts D_k(t)
  std::vector<std::size_t> collected;   // fresh samples entering at round t
  std::vector<double> payments;         // exact share of R
  std::vector<double> staleness;        // mean (age + 1) of buffered samples
};

struct TrainingResult {
  std::vector<RoundMetrics> rounds;
  GlobalModel final_model;
  int skipped_clients = 0;  // client-rounds with an empty buffer

  double final_accuracy() const { return rounds.empty() ? 0.0 : rounds.back().accuracy; }
};

inline double buffer_staleness(const ClientBuffer& buffer, int round) {
  if (buffer.samples.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& s : buffer.samples) sum += static_cast<double>(round - s.birth_round + 1);
  return sum / static_cast<double>(buffer.size());
}

/// Test accuracy and loss of `model` on `count` fresh samples from round `round`.
inline std::pair<double, double> evaluate_model(const GlobalModel& model, const DriftingStream& stream, int round,
                                                std::size_t count) {
  const auto test = draw_fresh(stream, kTestStreamClient, round, count);
  if (test.empty()) return {0.0, 0.0};
  std::size_t correct = 0;
  for (const auto& s : test) correct += predict_label(model, s.features) == s.label;
  const double loss = logistic_loss_and_gradient(model, test, 0.0).loss;
  return {static_cast<double>(correct) / static_cast<double>(test.size()), loss};
}

/// Executes the training phase for the finalized strategy and plans.
///
/// Round 0 trains on the initial buffers. From round 1 on, each buffer drops
/// its oldest (1 - theta) share and takes in the fresh samples collected in
/// parallel with the previous round; the count is rounded so the realized
/// buffer tracks the planned volume, carrying any rounding residue forward.
inline TrainingResult run_training(const ServerStrategy& strategy, std::span<const ClientPlan> plans,
                                   const StreamConfig& stream_cfg, const TrainConfig& cfg) {
  strategy.validate();
  detail::require(!plans.empty(), "need at least one client plan");
  const std::size_t horizon = plans.front().horizon();
  for (const auto& p : plans) detail::require(p.horizon() == horizon, "plans must share a horizon");

  const DriftingStream stream(stream_cfg);
  const std::size_t n = plans.size();
  std::vector<ClientBuffer> buffers(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto count = static_cast<std::size_t>(std::llround(plans[k].volumes.front()));
    for (auto& s : draw_fresh(stream, k, 0, count)) buffers[k].samples.push_back(std::move(s));
  }

  TrainingResult result;
  GlobalModel global = GlobalModel::zeros(stream_cfg.num_classes, stream_cfg.feature_dim);
  for (std::size_t t = 0; t < horizon; ++t) {
    const int round = static_cast<int>(t);
    RoundMetrics m;
    m.round = round;
    m.collected.assign(n, 0);
    if (t > 0) {
      for (std::size_t k = 0; k < n; ++k) {
        const auto drop = static_cast<std::size_t>(
            std::ceil((1.0 - strategy.conservation) * static_cast<double>(buffers[k].size()) - 1e-9));
        const double kept = static_cast<double>(buffers[k].size() - std::min(drop, buffers[k].size()));
        const double wanted = plans[k].increments[t - 1] > 0.0 ? plans[k].volumes[t] - kept : 0.0;
        const auto fresh_count = static_cast<std::size_t>(std::max<long long>(std::llround(wanted), 0));
        m.collected[k] = fresh_count;
        buffers[k] = apply_buffer_update(std::move(buffers[k]), strategy.conservation,
                                         draw_fresh(stream, k, round, fresh_count), round);
      }
    }

    std::vector<GlobalModel> uploads(n, global);
    std::vector<double> weights(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      auto rng = detail::seeded_rng(cfg.seed, k, static_cast<std::uint64_t>(round), detail::kTrainTag);
      const ClientBuffer aged = age_samples(buffers[k], stream_cfg, round, rng);
      auto local = local_train(global, aged, cfg, rng);
      if (!local.trained) {
        ++result.skipped_clients;
        continue;
      }
      uploads[k] = std::move(local.model);
      weights[k] = static_cast<double>(buffers[k].size());
    }
    global = aggregate(uploads, weights, global).model;
    global.round = round + 1;

    std::vector<double> volumes(n);
    for (std::size_t k = 0; k < n; ++k) {
      m.volumes.push_back(buffers[k].size());
      m.staleness.push_back(buffer_staleness(buffers[k], round));
      volumes[k] = static_cast<double>(buffers[k].size());
    }
    for (std::size_t k = 0; k < n; ++k) m.payments.push_back(exact_payment_share(volumes, k, strategy.payment));
    std::tie(m.accuracy, m.loss) = evaluate_model(global, stream, round, static_cast<std::size_t>(cfg.test_size));
    result.rounds.push_back(std::move(m));
  }
  result.final_model = std::move(global);
  return result;
}

}  // namespace dufl
