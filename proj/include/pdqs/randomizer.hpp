#pragma once

#include "pdqs/core.hpp"

namespace pdqs {

/// Output of one integrated-local-randomiser run: the value the owner
/// reports, the payment she actually receives, and whether she was selected.
struct IlrResult {
  double reported_value = 0.0;
  double realized_payment = 0.0;
  bool selected = false;
};

struct PrivacyLoss {
  double epsilon = 0.0;
};

/// epsilon = ln((1+q)/(1-q)); finite because q <= 1 - tau.
/// Throws std::invalid_argument for q outside [0, 1 - tau].
PrivacyLoss epsilon_of(double q, double tau = kDefaultTau);

/// With probability q the owner reports her true value and is paid
/// expected_payment / q; otherwise she reports a uniform random domain value
/// and is paid nothing. q = 0 always takes the unselected branch.
IlrResult ilr_apply(double private_value, double q, double expected_payment,
                    const DataDomain& domain, RandomStream& rng);

}  // namespace pdqs
