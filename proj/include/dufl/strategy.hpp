#pragma once

#include "dufl/common.hpp"

namespace dufl {

/// What the server announces: per-round payment R and conservation rate theta.
struct ServerStrategy {
  double payment = 0.0;
  double conservation = 1.0;

  void validate() const {
    detail::require(detail::is_nonnegative(payment), "payment must be nonnegative");
    detail::require(detail::is_unit_interval(conservation), "conservation rate must lie in [0, 1]");
  }

  friend bool operator==(const ServerStrategy&, const ServerStrategy&) = default;
};

}  // namespace dufl
