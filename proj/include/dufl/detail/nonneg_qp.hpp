#pragma once

// Dense convex QP with nonnegativity bounds:
//
//   minimize 0.5 x'Hx - q'x  subject to  x >= 0,   H symmetric positive definite.
//
// Cold start uses the Lawson-Hanson active-set scheme (finite termination).
// A warm start runs a few primal-dual active-set steps from a guessed free
// set and falls back to the cold path if they do not settle on a KKT point.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "dufl/common.hpp"

namespace dufl::detail {

struct NonnegQpResult {
  Eigen::VectorXd x;
  int iterations = 0;
};

class NonnegQp {
 public:
  NonnegQp(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& linear)
      : h_(hessian), q_(linear), n_(static_cast<int>(linear.size())) {
    scale_ = std::max(q_.cwiseAbs().maxCoeff(), 1e-300);
    tol_ = 1e-12 * scale_;
  }

  NonnegQpResult solve(std::span<const double> warm = {}) const {
    if (n_ == 0) return {Eigen::VectorXd(0), 0};
    if (static_cast<int>(warm.size()) == n_) {
      if (auto r = solve_warm(warm); r) return *r;
    }
    return solve_cold();
  }

 private:
  // Solves H_PP z_P = q_P with z = 0 off the free set P.
  Eigen::VectorXd solve_on(const std::vector<int>& free) const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n_);
    if (free.empty()) return z;
    const int m = static_cast<int>(free.size());
    Eigen::MatrixXd sub(m, m);
    Eigen::VectorXd rhs(m);
    for (int i = 0; i < m; ++i) {
      rhs(i) = q_(free[i]);
      for (int j = 0; j < m; ++j) sub(i, j) = h_(free[i], free[j]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success) throw NonConvergenceError("QP subproblem is not positive definite", 0.0);
    Eigen::VectorXd sol = llt.solve(rhs);
    for (int i = 0; i < m; ++i) z(free[i]) = sol(i);
    return z;
  }

  bool is_kkt(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd w = q_ - h_ * x;
    for (int i = 0; i < n_; ++i) {
      if (x(i) < 0.0) return false;
      if (x(i) > 0.0 && std::abs(w(i)) > 1e-9 * scale_) return false;
      if (x(i) == 0.0 && w(i) > tol_) return false;
    }
    return true;
  }

  std::optional<NonnegQpResult> solve_warm(std::span<const double> warm) const {
    std::vector<char> in_free(n_);
    for (int i = 0; i < n_; ++i) in_free[i] = warm[i] > 0.0;
    for (int it = 1; it <= 12; ++it) {
      std::vector<int> free;
      for (int i = 0; i < n_; ++i)
        if (in_free[i]) free.push_back(i);
      Eigen::VectorXd z = solve_on(free);
      const Eigen::VectorXd w = q_ - h_ * z;
      std::vector<char> next(n_);
      for (int i = 0; i < n_; ++i) next[i] = in_free[i] ? z(i) > 0.0 : w(i) > tol_;
      if (next == in_free) {
        for (int i = 0; i < n_; ++i) z(i) = std::max(z(i), 0.0);
        if (is_kkt(z)) return NonnegQpResult{std::move(z), it};
        return std::nullopt;
      }
      in_free = std::move(next);
    }
    return std::nullopt;
  }

  NonnegQpResult solve_cold() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_);
    std::vector<char> in_free(n_, 0);
    int iterations = 0;
    const int max_outer = 3 * n_ + 10;
    for (int outer = 0; outer < max_outer; ++outer) {
      const Eigen::VectorXd w = q_ - h_ * x;
      int best = -1;
      double best_w = tol_;
      for (int i = 0; i < n_; ++i) {
        if (!in_free[i] && w(i) > best_w) {
          best_w = w(i);
          best = i;
        }
      }
      if (best < 0) return {std::move(x), iterations};
      in_free[best] = 1;

      for (int inner = 0; inner <= n_; ++inner) {
        ++iterations;
        std::vector<int> free;
        for (int i = 0; i < n_; ++i)
          if (in_free[i]) free.push_back(i);
        const Eigen::VectorXd z = solve_on(free);
        bool positive = true;
        for (int i : free) positive = positive && z(i) > 0.0;
        if (positive) {
          x = z;
          break;
        }
        double step = 1.0;
        int blocking = -1;
        for (int i : free) {
          if (z(i) <= 0.0) {
            const double s = x(i) / (x(i) - z(i));
            if (s < step) {
              step = s;
              blocking = i;
            }
          }
        }
        x += step * (z - x);
        const double floor = 1e-15 * (1.0 + x.cwiseAbs().maxCoeff());
        for (int i : free) {
          if (i == blocking || x(i) <= floor) {
            x(i) = 0.0;
            in_free[i] = 0;
          }
        }
      }
    }
    throw NonConvergenceError("nonnegative QP active set did not terminate", (q_ - h_ * x).maxCoeff());
  }

  Eigen::MatrixXd h_;
  Eigen::VectorXd q_;
  int n_;
  double scale_ = 1.0;
  double tol_ = 0.0;
};

}  // namespace dufl::detail
