#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace dufl {

/// Volumes at or below this are treated as an empty buffer.
inline constexpr double kVolumeEpsilon = 1e-9;

/// Raised when an iterative solver gives up; carries the last residual.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

namespace detail {

inline void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(message);
}

inline bool is_unit_interval(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

inline bool is_nonnegative(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace detail
}  // namespace dufl
