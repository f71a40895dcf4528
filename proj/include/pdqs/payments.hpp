#pragma once

#include "pdqs/core.hpp"

namespace pdqs {

struct PaymentQuote {
  double load_w = 0.0;               // q * ln((1+q)/(1-q)) at the owner's bid
  double expected_payment_P = 0.0;   // b*w(b) + integral_b^theta_hi w(x) dx
  double quadrature_error_bound = 0.0;
};

struct UtilityPoint {
  double bid = 0.0;
  double expected_utility = 0.0;  // P(bid) - theta * w(bid)
};

struct IcIrReport {
  bool ic_holds = false;
  bool ir_holds = false;
  double worst_violation = 0.0;
};

/// Expected privacy loss w(q) = q * ln((1+q)/(1-q)).
double privacy_load_of_q(double q);
double privacy_load(const OwnerCurve& curve, double bid);
double privacy_load(const AllocationFunction& af, const Vector& bids, int i);

/// Archer-Tardos payment: starts from a composite Simpson rule with
/// `quad_nodes` nodes and one Richardson refinement for the error estimate;
/// panels whose estimate exceeds the tolerance are subdivided.
PaymentQuote expected_payment(const OwnerCurve& curve, double bid, double theta_hi,
                              int quad_nodes = 129, double tol = 1e-6);
PaymentQuote expected_payment(const AllocationFunction& af, const Vector& bids, int i,
                              double theta_hi, int quad_nodes = 129, double tol = 1e-6);

UtilityPoint expected_utility(const OwnerCurve& curve, double bid, double true_theta,
                              double theta_hi, double tol = 1e-6);
UtilityPoint expected_utility(const AllocationFunction& af, const Vector& bids, int i,
                              double true_theta, double theta_hi, double tol = 1e-6);

/// Sweeps the bid grid [theta_lo, theta_hi] treating the owner's current bid
/// as her true valuation: no grid misreport may beat truthful bidding by
/// more than 1e-9 plus the quadrature bound, and truth must give
/// non-negative utility.
IcIrReport ic_ir_check(const OwnerCurve& curve, double true_theta, double theta_lo,
                       double theta_hi, double grid_step = 0.01);
IcIrReport ic_ir_check(const AllocationFunction& af, const Vector& bids, int i,
                       double grid_step, double theta_lo, double theta_hi);

}  // namespace pdqs
