#pragma once

#include "pdqs/core.hpp"
#include "pdqs/queries.hpp"

#include <vector>

namespace pdqs {

/// Per-transaction result shared by all mechanisms. The allocation and
/// expected-payment lists hold the effective values the mechanism committed
/// to: owners outside the admitted set carry q = 0 and P = 0.
struct MechanismOutcome {
  Vector allocation_q;
  Vector expected_payments_P;
  Vector realized_payments_p;
  Vector perturbed_values;
  int admitted_count = 0;
  double query_answer = 0.0;
  double total_expected_payment = 0.0;
  double total_realized_payment = 0.0;
};

struct GpqmOptions {
  int quad_nodes = 129;
  double quad_tol = 1e-6;
  /// Realized payments are P_i/q_i when selected, so the realized total can
  /// exceed the budget even though the expected total cannot. Strict mode
  /// re-runs the randomiser phase with a fresh stream until it fits.
  bool strict_budget_rerun = false;
  int max_reruns = 1000;
};

/// Greedy mechanism: sort owners by allocation probability descending (ties
/// by original index), admit while the running expected-payment sum stays
/// within the budget, run the integrated local randomiser for admitted
/// owners; everyone else contributes a uniform random domain value.
MechanismOutcome run_gpqm(const Market& market, const AllocationFunction& af,
                          const QuerySpec& query, const RandomStream& rng,
                          const GpqmOptions& options = {});

}  // namespace pdqs
