#include "pdqs/payments.hpp"

#include <cmath>
#include <stdexcept>

namespace pdqs {
namespace {

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
};

template <typename F>
double simpson(const F& f, double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

// One adaptive Simpson panel: subdivides while the Richardson estimate
// |S2 - S1| / 15 exceeds the panel tolerance.
template <typename F>
QuadResult adaptive_panel(const F& f, double a, double b, double fa, double fm,
                          double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = simpson(f, a, m, fa, flm, fm);
  const double right = simpson(f, m, b, fm, frm, fb);
  const double est = std::abs(left + right - whole) / 15.0;
  if (est <= tol || depth >= 40 || (b - a) < 1e-14) {
    return QuadResult{left + right + (left + right - whole) / 15.0, est};
  }
  const QuadResult l = adaptive_panel(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1);
  const QuadResult r = adaptive_panel(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
  return QuadResult{l.value + r.value, l.error + r.error};
}

// Composite Simpson base partition with quad_nodes nodes, each panel refined
// adaptively to the shared tolerance.
template <typename F>
QuadResult integrate(const F& f, double a, double b, int quad_nodes, double tol) {
  if (!(b > a)) return QuadResult{0.0, 0.0};
  if (quad_nodes % 2 == 0) ++quad_nodes;
  const int panels = (quad_nodes - 1) / 2;
  const double h = (b - a) / panels;
  QuadResult total;
  const double panel_tol = tol / panels;
  for (int p = 0; p < panels; ++p) {
    const double pa = a + p * h;
    const double pb = (p + 1 == panels) ? b : pa + h;
    const double pm = 0.5 * (pa + pb);
    const double fa = f(pa);
    const double fm = f(pm);
    const double fb = f(pb);
    const double whole = simpson(f, pa, pb, fa, fm, fb);
    const QuadResult r = adaptive_panel(f, pa, pb, fa, fm, fb, whole, panel_tol, 0);
    total.value += r.value;
    total.error += r.error;
  }
  return total;
}

}  // namespace

double privacy_load_of_q(double q) {
  if (!(std::isfinite(q) && q >= 0.0 && q < 1.0)) {
    throw std::invalid_argument("q must lie in [0, 1)");
  }
  if (q == 0.0) return 0.0;
  return q * std::log((1.0 + q) / (1.0 - q));
}

double privacy_load(const OwnerCurve& curve, double bid) {
  return privacy_load_of_q(curve(bid));
}

double privacy_load(const AllocationFunction& af, const Vector& bids, int i) {
  return privacy_load_of_q(eval_allocation(af, bids, i));
}

PaymentQuote expected_payment(const OwnerCurve& curve, double bid, double theta_hi,
                              int quad_nodes, double tol) {
  if (!(std::isfinite(bid) && bid >= 0.0 && bid <= theta_hi)) {
    throw std::invalid_argument("bid must lie in [0, theta_hi]");
  }
  if (quad_nodes < 3) throw std::invalid_argument("quad_nodes must be at least 3");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
  const double w = privacy_load(curve, bid);
  const auto integrand = [&](double x) { return privacy_load(curve, x); };
  QuadResult integral;
  // Steep trained sigmoids are near-steps; a step hiding inside one panel
  // can fool the Richardson estimate. Splitting at the midpoint of the
  // transition puts it on a panel boundary, where bisection homes in on it.
  const double x0 = curve.kind == OwnerCurve::Kind::Sigmoid && curve.slope > 0.0
                        ? curve.shift / curve.slope
                        : bid;
  if (x0 > bid && x0 < theta_hi) {
    const QuadResult lo = integrate(integrand, bid, x0, quad_nodes, 0.5 * tol);
    const QuadResult hi = integrate(integrand, x0, theta_hi, quad_nodes, 0.5 * tol);
    integral = QuadResult{lo.value + hi.value, lo.error + hi.error};
  } else {
    integral = integrate(integrand, bid, theta_hi, quad_nodes, tol);
  }
  return PaymentQuote{w, bid * w + integral.value, integral.error};
}

PaymentQuote expected_payment(const AllocationFunction& af, const Vector& bids, int i,
                              double theta_hi, int quad_nodes, double tol) {
  return expected_payment(af.curve(bids, i), bids[i], theta_hi, quad_nodes, tol);
}

UtilityPoint expected_utility(const OwnerCurve& curve, double bid, double true_theta,
                              double theta_hi, double tol) {
  const PaymentQuote quote = expected_payment(curve, bid, theta_hi, 129, tol);
  return UtilityPoint{bid, quote.expected_payment_P - true_theta * quote.load_w};
}

UtilityPoint expected_utility(const AllocationFunction& af, const Vector& bids, int i,
                              double true_theta, double theta_hi, double tol) {
  return expected_utility(af.curve(bids, i), bids[i], true_theta, theta_hi, tol);
}

IcIrReport ic_ir_check(const OwnerCurve& curve, double true_theta, double theta_lo,
                       double theta_hi, double grid_step) {
  if (!(grid_step > 0.0 && grid_step < theta_hi - theta_lo)) {
    throw std::invalid_argument("grid_step must lie in (0, theta_hi - theta_lo)");
  }
  constexpr double kQuadTol = 1e-9;
  const PaymentQuote truth = expected_payment(curve, true_theta, theta_hi, 129, kQuadTol);
  const double u_truth = truth.expected_payment_P - true_theta * truth.load_w;

  IcIrReport report;
  report.ir_holds = u_truth >= -1e-9;
  report.worst_violation = 0.0;
  double worst = 0.0;
  for (double b = theta_lo; b <= theta_hi + 0.5 * grid_step; b += grid_step) {
    const double bid = std::min(b, theta_hi);
    const PaymentQuote quote = expected_payment(curve, bid, theta_hi, 129, kQuadTol);
    const double u = quote.expected_payment_P - true_theta * quote.load_w;
    const double gain = u - u_truth;
    const double slack = 1e-9 + truth.quadrature_error_bound + quote.quadrature_error_bound;
    if (gain > slack) worst = std::max(worst, gain);
  }
  report.worst_violation = worst;
  report.ic_holds = worst == 0.0;
  return report;
}

IcIrReport ic_ir_check(const AllocationFunction& af, const Vector& bids, int i,
                       double grid_step, double theta_lo, double theta_hi) {
  return ic_ir_check(af.curve(bids, i), bids[i], theta_lo, theta_hi, grid_step);
}

}  // namespace pdqs
