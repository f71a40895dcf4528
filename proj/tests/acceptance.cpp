// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion is property-based with fixed seeds; the heavier
// trend criteria run the full experiment harness at desk scale.

#include "pdqs/baseline_fq.hpp"
#include "pdqs/gpqm.hpp"
#include "pdqs/harness.hpp"
#include "pdqs/npqm.hpp"
#include "pdqs/payments.hpp"
#include "pdqs/queries.hpp"
#include "pdqs/randomizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

using namespace pdqs;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, double seconds,
            const std::string& detail = "") {
  std::printf("criterion %2d: %s  %-28s (%.1f s)%s%s\n", index, pass ? "PASS" : "FAIL",
              name.c_str(), seconds, detail.empty() ? "" : "  ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

int hardware_jobs() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 4 : static_cast<int>(hc);
}

// --- 1: LDP ratio ----------------------------------------------------------

void criterion_ldp_ratio() {
  Timer timer;
  bool pass = true;
  std::string detail;

  for (double q : {0.1, 0.3, 0.5, 0.9, 1.0 - 1e-6}) {
    const double pr_same = q + 0.5 * (1.0 - q);
    const double pr_other = 0.5 * (1.0 - q);
    const double ratio = pr_same / pr_other;
    const double target = (1.0 + q) / (1.0 - q);
    if (std::abs(ratio / target - 1.0) > 1e-12) {
      pass = false;
      detail = "analytic ratio mismatch";
    }
  }

  // Empirical frequencies at q = 0.5, one million draws per input.
  RandomStream rng(1001);
  const double q = 0.5;
  const int draws = 1'000'000;
  int same = 0;
  for (int i = 0; i < draws; ++i) {
    if (ilr_apply(1.0, q, 0.0, DataDomain::binary(), rng).reported_value == 1.0) ++same;
  }
  const double p = q + 0.5 * (1.0 - q);
  const double se = std::sqrt(p * (1.0 - p) / draws);
  if (std::abs(same / static_cast<double>(draws) - p) > 4.0 * se) {
    pass = false;
    detail = "empirical frequency off";
  }
  report(1, "LDP ratio", pass, timer.seconds(), detail);
}

// --- 2: payment identities -------------------------------------------------

double oracle_integral(const std::function<double(double)>& f, double a, double b,
                       int panels = 400'000) {
  if (b <= a) return 0.0;
  const double h = (b - a) / panels;
  double s = 0.0;
  for (int i = 0; i < panels; ++i) s += f(a + (i + 0.5) * h);
  return s * h;
}

void criterion_payment_identities() {
  Timer timer;
  bool pass = true;
  std::string detail;

  // Constant allocation: the integral of a constant load is theta_hi - b, so
  // P(b) = b w + (theta_hi - b) w = theta_hi * w.
  OwnerCurve constant{OwnerCurve::Kind::Constant, 0.6, 0.0, 0.0, kDefaultTau};
  const double w = privacy_load_of_q(0.6);
  for (double b : {0.0, 0.3, 0.9}) {
    if (std::abs(expected_payment(constant, b, 1.0).expected_payment_P - w) > 1e-9) {
      pass = false;
      detail = "constant-allocation identity";
    }
  }

  const OwnerCurve linear{OwnerCurve::Kind::Linear, 1.0, 0.0, 0.0, kDefaultTau};
  const auto load = [&](double x) { return privacy_load_of_q(linear(x)); };
  for (double b : {0.5, 0.2}) {
    const double got = expected_payment(linear, b, 1.0).expected_payment_P;
    const double want = b * load(b) + oracle_integral(load, b, 1.0);
    const double published = b == 0.5 ? 0.3627 : 0.756;
    if (std::abs(got - want) > 1e-6 || std::abs(got - published) > 2e-3) {
      pass = false;
      detail = "linear worked value";
    }
  }
  report(2, "payment identities", pass, timer.seconds(), detail);
}

// --- shared: small trained models ------------------------------------------

std::vector<NpqmModel> train_small_models(int count, int n, uint64_t seed_base) {
  std::vector<NpqmModel> models;
  RandomStream rng(seed_base);
  int attempts = 0;
  while (static_cast<int>(models.size()) < count && attempts < count * 4) {
    RandomStream bid_rng = rng.child(static_cast<uint64_t>(attempts));
    Vector bids(n);
    for (int i = 0; i < n; ++i) bids[i] = bid_rng.uniform(0.05, 0.95);
    TrainConfig cfg;
    cfg.episodes = 400;
    cfg.hidden = 4;
    cfg.seed = seed_base + static_cast<uint64_t>(attempts);
    const auto model = dual_ascent_train(bids, 0.25 * n, cfg);
    if (model) models.push_back(*model);
    ++attempts;
  }
  return models;
}

// --- 3: IC / IR ------------------------------------------------------------

void criterion_ic_ir() {
  Timer timer;
  bool pass = true;
  std::string detail;

  std::vector<std::pair<std::string, AllocationFunction>> allocations;
  allocations.emplace_back("linear", AllocationFunction::linear());
  for (double k : {0.5, 2.0, 8.0}) {
    allocations.emplace_back("log", AllocationFunction::log(k));
    allocations.emplace_back("exp", AllocationFunction::exp(k));
  }

  const std::vector<NpqmModel> models = train_small_models(5, 10, 3001);
  if (models.size() < 5) {
    report(3, "IC/IR", false, timer.seconds(), "could not train 5 NPQM models");
    return;
  }
  std::vector<std::shared_ptr<const NpqmModel>> keep;
  for (const NpqmModel& m : models) {
    auto shared = std::make_shared<const NpqmModel>(m);
    keep.push_back(shared);
    allocations.emplace_back("npqm", AllocationFunction::neural(shared));
  }

  RandomStream rng(3002);
  for (size_t a = 0; a < allocations.size() && pass; ++a) {
    const AllocationFunction& af = allocations[a].second;
    const int n = af.kind() == AllocationFunction::Kind::Neural ? af.net()->input_dim() : 8;
    for (int market = 0; market < 50 && pass; ++market) {
      RandomStream mrng = rng.child(a, static_cast<uint64_t>(market));
      Vector bids(n);
      for (int i = 0; i < n; ++i) bids[i] = mrng.uniform(0.01, 0.99);
      // Two random owners per market keep the runtime bounded while every
      // market contributes fresh rival-bid contexts.
      for (int pick = 0; pick < 2; ++pick) {
        const int i = static_cast<int>(mrng.uniform() * n);
        // Criterion tolerance is 1e-6 on grid misreport gains. Trained
        // models can carry near-step allocation curves whose quadrature
        // noise exceeds ic_ir_check's own 1e-9 slack, so the stricter
        // ic_holds flag is not the gate here.
        const IcIrReport rep = ic_ir_check(af, bids, i, 0.01, 0.0, 1.0);
        if (!rep.ir_holds || rep.worst_violation > 1e-6) {
          pass = false;
          detail = allocations[a].first + " violation " + std::to_string(rep.worst_violation);
          break;
        }
      }
    }
  }
  report(3, "IC/IR", pass, timer.seconds(), detail);
}

// --- 4: monotonicity -------------------------------------------------------

void criterion_monotonicity() {
  Timer timer;
  bool pass = true;
  std::string detail;
  RandomStream rng(4001);

  for (int s = 0; s < 100 && pass; ++s) {
    RandomStream srng = rng.child(static_cast<uint64_t>(s));
    AllocationFunction af = [&]() {
      switch (s % 4) {
        case 0:
          return AllocationFunction::linear();
        case 1:
          return AllocationFunction::log(srng.uniform(0.1, 10.0));
        case 2:
          return AllocationFunction::exp(srng.uniform(0.1, 10.0));
        default: {
          RandomStream init = srng.child(7);
          auto net = std::make_shared<const NpqmModel>(NpqmModel::random_init(6, 4, init));
          return AllocationFunction::neural(net);
        }
      }
    }();
    const int n = s % 4 == 3 ? 6 : 5;
    Vector bids(n);
    for (int i = 0; i < n; ++i) bids[i] = srng.uniform(0.0, 1.0);
    for (int i = 0; i < n && pass; ++i) {
      double prev = 2.0;
      for (int g = 0; g <= 100; ++g) {
        Vector b = bids;
        b[i] = g / 100.0;
        const double q = eval_allocation(af, b, i);
        if (q > prev || q < 0.0 || q > 1.0 - af.tau()) {
          pass = false;
          detail = "violation in model " + std::to_string(s);
          break;
        }
        prev = q;
      }
    }
  }
  report(4, "monotonicity", pass, timer.seconds(), detail);
}

// --- 5: gradient check -----------------------------------------------------

void criterion_gradient_check() {
  Timer timer;
  bool pass = true;
  std::string detail;
  RandomStream rng(5001);
  const int quad_nodes = 16;
  const double budget = 0.9;

  for (int s = 0; s < 20 && pass; ++s) {
    RandomStream srng = rng.child(static_cast<uint64_t>(s));
    NpqmModel model = NpqmModel::random_init(5, 3, srng);
    model.lambda = srng.uniform(0.0, 1.0);
    Vector bids(5);
    for (int i = 0; i < 5; ++i) bids[i] = srng.uniform(0.05, 0.95);

    const LagrangianGradient grad = gradients(model, bids, budget, quad_nodes);
    Vector mu = model.pack();
    const auto central_diff = [&](int p, double h) {
      Vector up = mu, down = mu;
      up[p] += h;
      down[p] -= h;
      NpqmModel m1 = model, m2 = model;
      m1.unpack(up);
      m2.unpack(down);
      return (lagrangian(m1, bids, budget, quad_nodes).L -
              lagrangian(m2, bids, budget, quad_nodes).L) /
             (2.0 * h);
    };
    for (int p = 0; p < mu.size(); ++p) {
      const double an = grad.d_mu[p];
      bool ok = false;
      // The objective is piecewise smooth (rectifiers and absolute values);
      // when the stencil straddles a crease the mismatch shrinks with the
      // step, while a wrong derivative stays wrong at every step size.
      for (double h : {1e-4, 1e-5, 1e-6}) {
        const double fd = central_diff(p, h);
        const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
        if (std::abs(fd - an) / scale <= 1e-4) {
          ok = true;
          break;
        }
      }
      if (!ok) {
        pass = false;
        detail = "model " + std::to_string(s) + " param " + std::to_string(p);
        break;
      }
    }
  }
  report(5, "gradient check", pass, timer.seconds(), detail);
}

// --- 6: budget feasibility -------------------------------------------------

void criterion_budget_feasibility() {
  Timer timer;
  bool pass = true;
  std::string detail;
  RandomStream rng(6001);

  for (int t = 0; t < 10'000 && pass; ++t) {
    RandomStream trng = rng.child(static_cast<uint64_t>(t));
    const int n = 2 + static_cast<int>(trng.uniform() * 18);
    Market market;
    market.data_domain = DataDomain::binary();
    for (int i = 0; i < n; ++i) {
      const double bid = trng.uniform(0.01, 0.99);
      market.owners.push_back(DataOwner{trng.bernoulli(0.5) ? 1.0 : 0.0, bid, bid});
    }
    market.budget = trng.uniform(0.05, 0.4) * n;

    GpqmOptions options;
    options.quad_tol = 1e-4;
    const MechanismOutcome gp = run_gpqm(market, AllocationFunction::linear(),
                                         QuerySpec::count(), trng.child(1), options);
    if (gp.total_expected_payment > market.budget) {
      pass = false;
      detail = "gpqm expected total over budget";
    }
    const MechanismOutcome fq = run_fq(market, QuerySpec::count(), trng.child(2));
    if (fq.total_realized_payment > market.budget + 1e-12 ||
        fq.total_expected_payment > market.budget + 1e-12) {
      pass = false;
      detail = "fq total over budget";
    }
  }

  // NPQM: every successful training must satisfy the constraint on its own
  // training bids.
  RandomStream nrng(6002);
  int successes = 0;
  for (int t = 0; t < 10 && pass; ++t) {
    RandomStream trng = nrng.child(static_cast<uint64_t>(t));
    Vector bids(10);
    for (int i = 0; i < 10; ++i) bids[i] = trng.uniform(0.05, 0.95);
    TrainConfig cfg;
    cfg.episodes = 300;
    cfg.hidden = 4;
    cfg.seed = 6100 + static_cast<uint64_t>(t);
    const double budget = trng.uniform(0.1, 0.5) * 10;
    const auto model = dual_ascent_train(bids, budget, cfg);
    if (!model) continue;
    ++successes;
    if (lagrangian(*model, bids, budget, cfg.quad_nodes).g > 0.0) {
      pass = false;
      detail = "trained model infeasible on training bids";
    }
  }
  if (successes == 0 && pass) {
    pass = false;
    detail = "no successful npqm training";
  }
  report(6, "budget feasibility", pass, timer.seconds(), detail);
}

// --- 7: FQ oracle equivalence ----------------------------------------------

void criterion_fq_oracle() {
  Timer timer;
  bool pass = true;
  std::string detail;
  RandomStream rng(7001);

  for (int t = 0; t < 1000 && pass; ++t) {
    RandomStream trng = rng.child(static_cast<uint64_t>(t));
    const int n = 2 + static_cast<int>(trng.uniform() * 499);
    std::vector<double> bids(static_cast<size_t>(n));
    for (double& b : bids) b = trng.uniform(0.001, 1.0);
    const double budget = trng.uniform(0.0, 0.5) * n;

    Market market;
    market.budget = budget;
    market.data_domain = DataDomain::binary();
    for (double b : bids) market.owners.push_back(DataOwner{0.0, b, b});
    const FqSelection got = fq_select(market);

    std::sort(bids.begin(), bids.end());
    FqSelection want;
    for (int k = 1; k <= n - 1; ++k) {
      if (bids[static_cast<size_t>(k - 1)] / (n - k) <= budget / k) want.k = k;
    }
    if (want.k > 0) {
      want.per_owner_payment =
          std::min(budget / want.k, bids[static_cast<size_t>(want.k)] / (n - want.k));
      want.epsilon = 1.0 / (n - want.k);
      want.q = (std::exp(want.epsilon) - 1.0) / (std::exp(want.epsilon) + 1.0);
    }
    if (got.k != want.k || std::abs(got.per_owner_payment - want.per_owner_payment) > 1e-12 ||
        std::abs(got.epsilon - want.epsilon) > 1e-12 || std::abs(got.q - want.q) > 1e-12) {
      pass = false;
      detail = "mismatch at instance " + std::to_string(t);
    }
  }
  report(7, "FQ oracle equivalence", pass, timer.seconds(), detail);
}

// --- 8: debiased-count unbiasedness ----------------------------------------

void criterion_debiased_unbiased() {
  Timer timer;
  bool pass = true;
  std::string detail;
  const int n = 1000;
  const int truth = 300;
  const int reps = 10'000;
  const DataDomain domain = DataDomain::binary();
  const QuerySpec spec = QuerySpec::count();

  for (double q : {0.2, 0.5, 0.8}) {
    RandomStream rng(8001 + static_cast<uint64_t>(q * 10));
    const Vector alloc = Vector::Constant(n, q);
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      Vector reports(n);
      for (int i = 0; i < n; ++i) {
        reports[i] = ilr_apply(i < truth ? 1.0 : 0.0, q, 0.0, domain, rng).reported_value;
      }
      const double est = answer_query(spec, reports, alloc, domain);
      sum += est;
      sum_sq += est * est;
    }
    const double mean = sum / reps;
    const double var = (sum_sq - reps * mean * mean) / (reps - 1);
    const double se = std::sqrt(var / reps);
    if (std::abs(mean - truth) > 3.0 * se) {
      pass = false;
      detail = "bias at q=" + std::to_string(q);
    }
  }
  report(8, "debiased unbiasedness", pass, timer.seconds(), detail);
}

// --- 9 & 10: trend reproduction and distribution shift ----------------------

double cell_mean(const std::vector<ExperimentRecord>& records, const std::string& mechanism,
                 double fraction) {
  double sum = 0.0;
  int count = 0;
  for (const ExperimentRecord& r : records) {
    if (r.mechanism == mechanism && std::abs(r.budget_fraction - fraction) < 1e-9) {
      sum += r.error;
      ++count;
    }
  }
  return count > 0 ? sum / count : std::nan("");
}

void criterion_trends_and_shift() {
  Timer timer;
  const Dataset data = load_dataset(DatasetSource::synthetic_binary(2000, 0.3, 90));

  ExperimentPlan plan;
  plan.mechanisms = {MechanismKind::Npqm, MechanismKind::GpqmLinear, MechanismKind::Fq};
  plan.budget_fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  plan.trials = 100;
  plan.seed = 424242;
  plan.jobs = hardware_jobs();
  // Debiased count with a participation floor of 0.3: owners below it carry
  // inverse-probability weights above ~3 and their variance swamps the trend
  // under test. With the floor, extra budget enlarges the usable owner set
  // faster than it adds variance, so error falls with budget for every
  // mechanism that buys real privacy.
  plan.query = QuerySpec::count(QuerySpec::Estimator::Debiased, 0.3);

  const ExperimentResult result = run_experiment(plan, data);
  bool pass = result.skipped.empty();
  std::string detail = pass ? "" : ("skipped cell: " + result.skipped.front().reason);

  std::map<std::string, std::map<int, double>> means;
  for (int b = 1; b <= 9; ++b) {
    for (const std::string& m : {std::string("npqm"), std::string("gpqm-linear"),
                                 std::string("fq")}) {
      means[m][b] = cell_mean(result.records, m, b / 10.0);
    }
  }

  if (pass) {
    // (a) more budget buys more accuracy for the learning/greedy mechanisms.
    if (!(means["npqm"][9] < means["npqm"][1]) ||
        !(means["gpqm-linear"][9] < means["gpqm-linear"][1])) {
      pass = false;
      detail = "no error decrease from 0.1n to 0.9n";
    }
    // (b) npqm beats the baseline from 0.3n on.
    for (int b = 3; b <= 9 && pass; ++b) {
      if (!(means["npqm"][b] <= means["fq"][b])) {
        pass = false;
        detail = "npqm above fq at 0." + std::to_string(b) + "n";
      }
    }
    // (c) greedy beats the baseline from 0.5n on.
    for (int b = 5; b <= 9 && pass; ++b) {
      if (!(means["gpqm-linear"][b] <= means["fq"][b])) {
        pass = false;
        detail = "gpqm-linear above fq at 0." + std::to_string(b) + "n";
      }
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "RAE@0.5n npqm=%.3f gpqm=%.3f fq=%.3f", means["npqm"][5],
                means["gpqm-linear"][5], means["fq"][5]);
  report(9, "trend reproduction", pass, timer.seconds(),
         detail.empty() ? std::string(buf) : detail);

  // Criterion 10: same setup at 0.5n with normal test bids versus the matched
  // uniform-bid cell above.
  Timer timer10;
  ExperimentPlan shifted = plan;
  shifted.budget_fractions = {0.5};
  shifted.mechanisms = {MechanismKind::Npqm};
  shifted.bid_model.dist = BidModel::Dist::Normal;
  shifted.bid_model.mean = 0.5;
  shifted.bid_model.stddev = 0.25;
  shifted.train_bid_model.dist = BidModel::Dist::Uniform;

  const ExperimentResult shift_result = run_experiment(shifted, data);
  bool pass10 = shift_result.skipped.empty();
  std::string detail10 = pass10 ? "" : "npqm training skipped";
  double shifted_mean = std::nan("");
  if (pass10) {
    shifted_mean = cell_mean(shift_result.records, "npqm", 0.5);
    const double matched_mean = means["npqm"][5];
    if (!(shifted_mean <= 2.0 * matched_mean)) {
      pass10 = false;
    }
    std::snprintf(buf, sizeof(buf), "shifted=%.3f matched=%.3f", shifted_mean, matched_mean);
    detail10 = buf;
  }
  report(10, "distribution shift", pass10, timer10.seconds(), detail10);
}

}  // namespace

int main() {
  criterion_ldp_ratio();
  criterion_payment_identities();
  criterion_ic_ir();
  criterion_monotonicity();
  criterion_gradient_check();
  criterion_budget_feasibility();
  criterion_fq_oracle();
  criterion_debiased_unbiased();
  criterion_trends_and_shift();

  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria FAILED\n", g_failures);
  return 1;
}
