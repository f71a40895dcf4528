#pragma once

#include "pdqs/gpqm.hpp"

namespace pdqs {

/// Result of the FairQuery-LDP procurement step: the k lowest bidders are
/// selected, paid a common amount, and share one randomised-response q.
struct FqSelection {
  int k = 0;
  double per_owner_payment = 0.0;
  double epsilon = 0.0;
  double q = 0.0;
};

/// Sorts bids ascending (ties by original index) and takes the largest
/// k <= n-1 with b_k/(n-k) <= beta/k; payment is min(beta/k, b_{k+1}/(n-k)),
/// epsilon = 1/(n-k), q = (e^eps - 1)/(e^eps + 1). k = 0 when no k qualifies.
FqSelection fq_select(const Market& market);

/// Selected owners run randomised response with the common q and receive the
/// fixed payment; everyone else reports a uniform random domain value for
/// nothing.
MechanismOutcome run_fq(const Market& market, const QuerySpec& query,
                        const RandomStream& rng);

}  // namespace pdqs
