#pragma once

// Gaussian-process regression on inputs in the unit box with a squared
// exponential kernel (one length scale per dimension). Targets are
// standardized before fitting; hyperparameters are picked from a fixed grid
// by log marginal likelihood, so fitting is deterministic.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dufl/common.hpp"

namespace dufl {

struct Observation {
  Eigen::VectorXd x;  // normalized input
  double y = 0.0;     // target, in the scale the GP models
};

struct GpPrediction {
  double mean = 0.0;
  double stddev = 0.0;
};

class GpState;
inline GpState gp_fit(std::vector<Observation> observations);

inline constexpr std::array<double, 5> kLengthScaleGrid{0.05, 0.1, 0.2, 0.4, 0.8};

class GpState {
 public:
  const std::vector<Observation>& observations() const noexcept { return obs_; }
  const Eigen::VectorXd& length_scales() const noexcept { return length_scales_; }
  double signal_variance() const noexcept { return signal_variance_; }
  double noise_jitter() const noexcept { return jitter_; }
  double log_marginal_likelihood() const noexcept { return lml_; }

  GpPrediction predict(const Eigen::VectorXd& x) const {
    const int n = static_cast<int>(obs_.size());
    Eigen::VectorXd k(n);
    for (int i = 0; i < n; ++i) k(i) = kernel(x, obs_[i].x);
    const double mean = k.dot(weights_);
    const Eigen::VectorXd v = chol_.matrixL().solve(k);
    const double var = std::max(signal_variance_ - v.squaredNorm(), 0.0);
    return {y_mean_ + y_scale_ * mean, y_scale_ * std::sqrt(var)};
  }

  friend GpState gp_fit(std::vector<Observation> observations);

 private:
  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return signal_variance_ * std::exp(-0.5 * (a - b).cwiseQuotient(length_scales_).squaredNorm());
  }

  // Factorizes the kernel matrix for the current hyperparameters, escalating
  // the jitter until it is positive definite. Returns false if it never is.
  bool factorize(const Eigen::VectorXd& targets) {
    const int n = static_cast<int>(obs_.size());
    Eigen::MatrixXd gram(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) gram(i, j) = gram(j, i) = kernel(obs_[i].x, obs_[j].x);
    for (double jitter = 1e-9; jitter <= 1e-2; jitter *= 10.0) {
      Eigen::MatrixXd m = gram;
      m.diagonal().array() += jitter * signal_variance_;
      chol_.compute(m);
      if (chol_.info() == Eigen::Success) {
        jitter_ = jitter;
        weights_ = chol_.solve(targets);
        const double log_det = 2.0 * chol_.matrixLLT().diagonal().array().log().sum();
        lml_ = -0.5 * targets.dot(weights_) - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
        return true;
      }
    }
    return false;
  }

  std::vector<Observation> obs_;
  Eigen::VectorXd length_scales_;
  double signal_variance_ = 1.0;
  double jitter_ = 1e-9;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double lml_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd weights_;
};

inline GpState gp_fit(std::vector<Observation> observations) {
  detail::require(!observations.empty(), "GP needs at least one observation");
  const int n = static_cast<int>(observations.size());
  const int dim = static_cast<int>(observations.front().x.size());
  for (const auto& o : observations) {
    detail::require(o.x.size() == dim, "observations must share a dimension");
    detail::require(std::isfinite(o.y), "observation targets must be finite");
  }

  GpState gp;
  gp.obs_ = std::move(observations);
  double mean = 0.0;
  for (const auto& o : gp.obs_) mean += o.y;
  mean /= n;
  double var = 0.0;
  for (const auto& o : gp.obs_) var += (o.y - mean) * (o.y - mean);
  var /= n;
  gp.y_mean_ = mean;
  gp.y_scale_ = var > 0.0 ? std::sqrt(var) : 1.0;
  Eigen::VectorXd targets(n);
  for (int i = 0; i < n; ++i) targets(i) = (gp.obs_[i].y - mean) / gp.y_scale_;
  gp.signal_variance_ = 1.0;  // unit variance after standardization

  // Exhaustive search over the length-scale grid (|grid|^dim combinations).
  Eigen::VectorXd best_scales;
  double best_lml = -std::numeric_limits<double>::infinity();
  std::vector<int> idx(dim, 0);
  while (true) {
    gp.length_scales_.resize(dim);
    for (int d = 0; d < dim; ++d) gp.length_scales_(d) = kLengthScaleGrid[idx[d]];
    if (gp.factorize(targets) && gp.lml_ > best_lml) {
      best_lml = gp.lml_;
      best_scales = gp.length_scales_;
    }
    int d = 0;
    while (d < dim && ++idx[d] == static_cast<int>(kLengthScaleGrid.size())) idx[d++] = 0;
    if (d == dim) break;
  }
  if (best_scales.size() == 0) throw std::runtime_error("GP kernel matrix is singular at every jitter level");
  gp.length_scales_ = best_scales;
  gp.factorize(targets);
  return gp;
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// E[max(incumbent - Y, 0)] for Y ~ N(mean, stddev^2).
inline double expected_improvement(double mean, double stddev, double incumbent) {
  const double gap = incumbent - mean;
  if (!(stddev > 0.0)) return std::max(gap, 0.0);
  const double z = gap / stddev;
  return std::max(gap * normal_cdf(z) + stddev * normal_pdf(z), 0.0);
}

inline double expected_improvement(const GpState& gp, const Eigen::VectorXd& x, double incumbent) {
  const auto p = gp.predict(x);
  return expected_improvement(p.mean, p.stddev, incumbent);
}

}  // namespace dufl
