#include "pdqs/gpqm.hpp"

#include "pdqs/payments.hpp"
#include "pdqs/randomizer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pdqs {
namespace {

struct IlrPhaseResult {
  Vector perturbed;
  Vector realized;
  double total_realized = 0.0;
};

IlrPhaseResult run_ilr_phase(const Market& market, const Vector& effective_q,
                             const Vector& effective_P, const RandomStream& stream) {
  const int n = market.size();
  IlrPhaseResult out{Vector(n), Vector::Zero(n), 0.0};
  for (int i = 0; i < n; ++i) {
    RandomStream owner_rng = stream.child(static_cast<uint64_t>(i));
    const IlrResult r = ilr_apply(market.owners[static_cast<size_t>(i)].private_value,
                                  effective_q[i], effective_P[i], market.data_domain,
                                  owner_rng);
    out.perturbed[i] = r.reported_value;
    out.realized[i] = r.realized_payment;
    out.total_realized += r.realized_payment;
  }
  return out;
}

}  // namespace

MechanismOutcome run_gpqm(const Market& market, const AllocationFunction& af,
                          const QuerySpec& query, const RandomStream& rng,
                          const GpqmOptions& options) {
  market.validate();
  const int n = market.size();
  const Vector bids = market.bids();
  const std::vector<OwnerCurve> curves = af.curves(bids);

  Vector q(n), P(n);
  for (int i = 0; i < n; ++i) {
    q[i] = curves[static_cast<size_t>(i)](bids[i]);
    P[i] = expected_payment(curves[static_cast<size_t>(i)], bids[i], market.theta_hi,
                            options.quad_nodes, options.quad_tol)
               .expected_payment_P;
  }

  // Descending q, ties broken by original index.
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return q[a] > q[b]; });

  // Check-before-admit greedy walk keeps the expected total within budget.
  Vector effective_q = Vector::Zero(n);
  Vector effective_P = Vector::Zero(n);
  double total_expected = 0.0;
  int admitted = 0;
  for (int idx : order) {
    if (total_expected + P[idx] > market.budget) break;
    total_expected += P[idx];
    effective_q[idx] = q[idx];
    effective_P[idx] = P[idx];
    ++admitted;
  }

  IlrPhaseResult phase = run_ilr_phase(market, effective_q, effective_P, rng);
  if (options.strict_budget_rerun) {
    int attempt = 1;
    while (phase.total_realized > market.budget && attempt <= options.max_reruns) {
      phase = run_ilr_phase(market, effective_q, effective_P,
                            rng.child(0x5u, static_cast<uint64_t>(attempt)));
      ++attempt;
    }
  }

  MechanismOutcome outcome;
  outcome.allocation_q = effective_q;
  outcome.expected_payments_P = effective_P;
  outcome.realized_payments_p = phase.realized;
  outcome.perturbed_values = phase.perturbed;
  outcome.admitted_count = admitted;
  outcome.total_expected_payment = total_expected;
  outcome.total_realized_payment = phase.total_realized;
  outcome.query_answer =
      answer_query(query, outcome.perturbed_values, outcome.allocation_q, market.data_domain);
  return outcome;
}

}  // namespace pdqs
