#include "pdqs/randomizer.hpp"

#include <cmath>
#include <stdexcept>

namespace pdqs {

PrivacyLoss epsilon_of(double q, double tau) {
  constexpr double kSlack = 1e-12;
  if (!(q >= 0.0) || q > 1.0 - tau + kSlack) {
    throw std::invalid_argument("q must lie in [0, 1 - tau]");
  }
  return PrivacyLoss{std::log((1.0 + q) / (1.0 - q))};
}

IlrResult ilr_apply(double private_value, double q, double expected_payment,
                    const DataDomain& domain, RandomStream& rng) {
  if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("q must lie in [0, 1)");
  if (!(expected_payment >= 0.0)) {
    throw std::invalid_argument("expected payment must be non-negative");
  }
  if (!domain.contains(private_value)) {
    throw std::invalid_argument("private value outside the data domain");
  }
  if (q > 0.0 && rng.bernoulli(q)) {
    return IlrResult{private_value, expected_payment / q, true};
  }
  return IlrResult{domain.sample(rng), 0.0, false};
}

}  // namespace pdqs
