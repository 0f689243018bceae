#include "spadvae/rng.hpp"

#include <cmath>
#include <numbers>

namespace spadvae {

double Rng::next_normal() noexcept {
  const double u1 = next_double();
  const double u2 = next_double();
  // 1 - u1 is in (0, 1], so the log is finite.
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace spadvae
