#include "pdqs/payments.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace pdqs;

namespace {

// Independent oracle: fine midpoint rule, no shared code with the library
// quadrature.
double midpoint_integral(const std::function<double(double)>& f, double a, double b,
                         int panels = 200'000) {
  if (b <= a) return 0.0;
  const double h = (b - a) / panels;
  double s = 0.0;
  for (int i = 0; i < panels; ++i) s += f(a + (i + 0.5) * h);
  return s * h;
}

double oracle_payment(const OwnerCurve& curve, double bid, double theta_hi) {
  const double wb = privacy_load_of_q(curve(bid));
  return bid * wb + midpoint_integral(
                        [&](double x) { return privacy_load_of_q(curve(x)); }, bid, theta_hi);
}

}  // namespace

TEST_CASE("privacy load closed form") {
  CHECK(privacy_load_of_q(0.0) == doctest::Approx(0.0));
  CHECK(privacy_load_of_q(0.5) == doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-12));
  CHECK_THROWS_AS(privacy_load_of_q(1.0), std::invalid_argument);
  CHECK_THROWS_AS(privacy_load_of_q(-0.2), std::invalid_argument);
}

TEST_CASE("linear allocation worked payments") {
  const AllocationFunction af = AllocationFunction::linear();
  Vector bids(1);

  bids << 0.5;
  PaymentQuote quote = expected_payment(af, bids, 0, 1.0);
  CHECK(quote.load_w == doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-10));
  CHECK(quote.expected_payment_P == doctest::Approx(0.3627).epsilon(2e-3));

  bids << 0.2;
  quote = expected_payment(af, bids, 0, 1.0);
  CHECK(quote.expected_payment_P == doctest::Approx(0.756).epsilon(2e-3));
}

TEST_CASE("payment quadrature agrees with an independent midpoint oracle") {
  const std::vector<OwnerCurve> curves = {
      {OwnerCurve::Kind::Linear, 1.0, 0.0, 0.0, kDefaultTau},
      {OwnerCurve::Kind::Log, 2.0, 0.0, 0.0, kDefaultTau},
      {OwnerCurve::Kind::Log, 0.5, 0.0, 0.0, kDefaultTau},
      {OwnerCurve::Kind::Exp, 3.0, 0.0, 0.0, kDefaultTau},
      {OwnerCurve::Kind::Sigmoid, 0.0, 4.0, 1.5, kDefaultTau},
      {OwnerCurve::Kind::Constant, 0.4, 0.0, 0.0, kDefaultTau},
  };
  for (const auto& curve : curves) {
    for (double bid : {0.0, 0.1, 0.45, 0.9, 1.0}) {
      const PaymentQuote quote = expected_payment(curve, bid, 1.0);
      const double oracle = oracle_payment(curve, bid, 1.0);
      CAPTURE(static_cast<int>(curve.kind));
      CAPTURE(bid);
      CHECK(quote.expected_payment_P ==
            doctest::Approx(oracle).epsilon(1e-5).scale(1.0));
      CHECK(quote.quadrature_error_bound >= 0.0);
      CHECK(quote.quadrature_error_bound < 1e-4);
    }
  }
}

TEST_CASE("payment at the reserve price is the load only") {
  const OwnerCurve curve{OwnerCurve::Kind::Linear, 1.0, 0.0, 0.0, kDefaultTau};
  const PaymentQuote quote = expected_payment(curve, 1.0, 1.0);
  CHECK(quote.expected_payment_P == doctest::Approx(privacy_load_of_q(curve(1.0))).epsilon(1e-9));
}

TEST_CASE("expected utility is P - theta * w") {
  const OwnerCurve curve{OwnerCurve::Kind::Linear, 1.0, 0.0, 0.0, kDefaultTau};
  const double theta = 0.4;
  for (double bid : {0.1, 0.4, 0.8}) {
    const UtilityPoint u = expected_utility(curve, bid, theta, 1.0);
    const PaymentQuote quote = expected_payment(curve, bid, 1.0);
    CHECK(u.expected_utility ==
          doctest::Approx(quote.expected_payment_P - theta * privacy_load_of_q(curve(bid)))
              .epsilon(1e-9));
  }
}

TEST_CASE("truthful bidding maximises utility on a grid") {
  const OwnerCurve curve{OwnerCurve::Kind::Exp, 2.0, 0.0, 0.0, kDefaultTau};
  const double theta = 0.35;
  const double truthful = expected_utility(curve, theta, theta, 1.0).expected_utility;
  CHECK(truthful >= -1e-9);
  for (int g = 0; g <= 100; ++g) {
    const double bid = g / 100.0;
    CHECK(expected_utility(curve, bid, theta, 1.0).expected_utility <= truthful + 1e-6);
  }
}

TEST_CASE("ic_ir_check accepts non-increasing curves") {
  const std::vector<OwnerCurve> curves = {
      {OwnerCurve::Kind::Linear, 1.0, 0.0, 0.0, kDefaultTau},
      {OwnerCurve::Kind::Log, 4.0, 0.0, 0.0, kDefaultTau},
      {OwnerCurve::Kind::Exp, 0.7, 0.0, 0.0, kDefaultTau},
      {OwnerCurve::Kind::Sigmoid, 0.0, 2.0, 0.3, kDefaultTau},
  };
  for (const auto& curve : curves) {
    for (double theta : {0.05, 0.5, 0.95}) {
      const IcIrReport report = ic_ir_check(curve, theta, 0.0, 1.0);
      CAPTURE(static_cast<int>(curve.kind));
      CAPTURE(theta);
      CHECK(report.ic_holds);
      CHECK(report.ir_holds);
    }
  }
}

TEST_CASE("ic_ir_check flags an increasing curve") {
  const OwnerCurve bad{OwnerCurve::Kind::Increasing, 1.0, 0.0, 0.0, kDefaultTau};
  const IcIrReport report = ic_ir_check(bad, 0.7, 0.0, 1.0);
  CHECK_FALSE(report.ic_holds);
  CHECK(report.worst_violation > 0.0);
}

TEST_CASE("allocation-function payment overload matches the curve version") {
  const AllocationFunction af = AllocationFunction::log(2.0);
  Vector bids(3);
  bids << 0.3, 0.6, 0.9;
  for (int i = 0; i < 3; ++i) {
    const PaymentQuote a = expected_payment(af, bids, i, 1.0);
    const PaymentQuote b = expected_payment(af.curve(bids, i), bids[i], 1.0);
    CHECK(a.expected_payment_P == doctest::Approx(b.expected_payment_P).epsilon(1e-12));
    CHECK(privacy_load(af, bids, i) == doctest::Approx(a.load_w).epsilon(1e-12));
  }
}

TEST_CASE("payment rejects invalid input") {
  const OwnerCurve curve{OwnerCurve::Kind::Linear, 1.0, 0.0, 0.0, kDefaultTau};
  CHECK_THROWS_AS(expected_payment(curve, -0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(expected_payment(curve, 1.5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(expected_payment(curve, 0.5, 1.0, 2), std::invalid_argument);
}
