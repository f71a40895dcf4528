#include "pdqs/baseline_fq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace pdqs {
namespace {

std::vector<int> ascending_bid_order(const Vector& bids) {
  std::vector<int> order(static_cast<size_t>(bids.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return bids[a] < bids[b]; });
  return order;
}

}  // namespace

FqSelection fq_select(const Market& market) {
  const int n = market.size();
  if (n < 2) throw std::invalid_argument("FairQuery requires at least two owners");
  if (!(market.budget >= 0.0)) throw std::invalid_argument("budget must be non-negative");
  const Vector bids = market.bids();
  const std::vector<int> order = ascending_bid_order(bids);

  // k capped at n-1: epsilon = 1/(n-k) and the b_{k+1} reference are
  // undefined at k = n.
  int k = 0;
  for (int cand = n - 1; cand >= 1; --cand) {
    const double b_k = bids[order[static_cast<size_t>(cand - 1)]];
    if (b_k / (n - cand) <= market.budget / cand) {
      k = cand;
      break;
    }
  }
  if (k == 0) return FqSelection{};

  const double b_next = bids[order[static_cast<size_t>(k)]];
  const double payment = std::min(market.budget / k, b_next / (n - k));
  const double eps = 1.0 / (n - k);
  const double q = (std::exp(eps) - 1.0) / (std::exp(eps) + 1.0);
  return FqSelection{k, payment, eps, q};
}

MechanismOutcome run_fq(const Market& market, const QuerySpec& query,
                        const RandomStream& rng) {
  const FqSelection sel = fq_select(market);
  const int n = market.size();
  const Vector bids = market.bids();
  const std::vector<int> order = ascending_bid_order(bids);

  std::vector<char> selected(static_cast<size_t>(n), 0);
  for (int i = 0; i < sel.k; ++i) selected[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;

  MechanismOutcome outcome;
  outcome.allocation_q = Vector::Zero(n);
  outcome.expected_payments_P = Vector::Zero(n);
  outcome.realized_payments_p = Vector::Zero(n);
  outcome.perturbed_values = Vector(n);
  for (int i = 0; i < n; ++i) {
    RandomStream owner_rng = rng.child(static_cast<uint64_t>(i));
    const double truth = market.owners[static_cast<size_t>(i)].private_value;
    if (selected[static_cast<size_t>(i)]) {
      outcome.allocation_q[i] = sel.q;
      outcome.expected_payments_P[i] = sel.per_owner_payment;
      outcome.realized_payments_p[i] = sel.per_owner_payment;
      outcome.perturbed_values[i] =
          owner_rng.bernoulli(sel.q) ? truth : market.data_domain.sample(owner_rng);
    } else {
      outcome.perturbed_values[i] = market.data_domain.sample(owner_rng);
    }
  }
  outcome.admitted_count = sel.k;
  outcome.total_expected_payment = sel.k * sel.per_owner_payment;
  outcome.total_realized_payment = outcome.total_expected_payment;
  outcome.query_answer =
      answer_query(query, outcome.perturbed_values, outcome.allocation_q, market.data_domain);
  return outcome;
}

}  // namespace pdqs
