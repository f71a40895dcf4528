// Command-line entry point wiring the library into reproducible runs.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 invariant
// violation from `check`, 4 no budget-feasible model from `train`.

#include "pdqs/baseline_fq.hpp"
#include "pdqs/harness.hpp"
#include "pdqs/npqm.hpp"
#include "pdqs/payments.hpp"
#include "pdqs/randomizer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <thread>

namespace {

using nlohmann::json;
using namespace pdqs;

uint64_t default_seed() {
  if (const char* env = std::getenv("PDQS_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return 0;
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

QuerySpec make_query(const std::string& kind, const std::string& estimator, double q_min) {
  if (kind == "median") return QuerySpec::median();
  if (kind != "count") throw CLI::ValidationError("--query must be count or median");
  if (estimator == "raw") return QuerySpec::count(QuerySpec::Estimator::Raw, q_min);
  if (estimator == "debiased") return QuerySpec::count(QuerySpec::Estimator::Debiased, q_min);
  throw CLI::ValidationError("--estimator must be raw or debiased");
}

BidModel make_bid_model(const std::string& dist, double mean, double stddev) {
  BidModel model;
  if (dist == "uniform") {
    model.dist = BidModel::Dist::Uniform;
  } else if (dist == "normal") {
    model.dist = BidModel::Dist::Normal;
  } else {
    throw CLI::ValidationError("bid distribution must be uniform or normal");
  }
  model.mean = mean;
  model.stddev = stddev;
  return model;
}

json outcome_to_json(const MechanismOutcome& o) {
  json j;
  j["allocation_q"] = std::vector<double>(o.allocation_q.begin(), o.allocation_q.end());
  j["expected_payments_P"] =
      std::vector<double>(o.expected_payments_P.begin(), o.expected_payments_P.end());
  j["realized_payments_p"] =
      std::vector<double>(o.realized_payments_p.begin(), o.realized_payments_p.end());
  j["perturbed_values"] =
      std::vector<double>(o.perturbed_values.begin(), o.perturbed_values.end());
  j["admitted_count"] = o.admitted_count;
  j["query_answer"] = o.query_answer;
  j["total_expected_payment"] = o.total_expected_payment;
  j["total_realized_payment"] = o.total_realized_payment;
  return j;
}

// -------------------------------------------------------------------------
// check: invariant suites
// -------------------------------------------------------------------------

int run_check(uint64_t seed, bool planted_violation) {
  int violations = 0;
  const auto report = [&](const std::string& name, bool ok) {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
    if (!ok) ++violations;
  };

  RandomStream rng(seed, 0xC4EC);

  // Allocation monotonicity on grids.
  {
    bool ok = true;
    std::vector<AllocationFunction> afs = {AllocationFunction::linear(),
                                           AllocationFunction::log(2.0),
                                           AllocationFunction::exp(1.5)};
    for (int trial = 0; trial < 5; ++trial) {
      RandomStream model_rng = rng.child(1, static_cast<uint64_t>(trial));
      auto model = std::make_shared<NpqmModel>(NpqmModel::random_init(8, 4, model_rng));
      afs.push_back(AllocationFunction::neural(model));
    }
    for (const auto& af : afs) {
      const int n = af.kind() == AllocationFunction::Kind::Neural ? af.net()->input_dim() : 8;
      RandomStream bid_rng = rng.child(2);
      Vector bids(n);
      for (int i = 0; i < n; ++i) bids[i] = bid_rng.uniform(0.01, 0.99);
      const OwnerCurve curve = af.curve(bids, 0);
      double prev = curve(0.0);
      for (int g = 1; g <= 100; ++g) {
        const double q = curve(g / 100.0);
        if (q > prev) ok = false;
        if (q < 0.0 || q > 1.0 - af.tau() + 1e-15) ok = false;
        prev = q;
      }
    }
    report("allocation monotonicity and clamp range", ok);
  }

  // LDP ratio identities.
  {
    bool ok = true;
    for (double q : {0.1, 0.3, 0.5, 0.9}) {
      const double eps = epsilon_of(q).epsilon;
      const double ratio = (q + 0.5 * (1.0 - q)) / (0.5 * (1.0 - q));
      if (std::abs(ratio - std::exp(eps)) > 1e-12 * std::exp(eps)) ok = false;
    }
    report("ldp ratio identity", ok);
  }

  // IC/IR on random markets.
  {
    bool ok = true;
    std::vector<AllocationFunction> afs = {AllocationFunction::linear(),
                                           AllocationFunction::log(2.0),
                                           AllocationFunction::exp(2.0)};
    RandomStream net_rng = rng.child(3);
    auto model = std::make_shared<NpqmModel>(NpqmModel::random_init(6, 4, net_rng));
    afs.push_back(AllocationFunction::neural(model));
    for (const auto& af : afs) {
      for (int m = 0; m < 5; ++m) {
        RandomStream bid_rng = rng.child(4, static_cast<uint64_t>(m));
        const int n = af.kind() == AllocationFunction::Kind::Neural ? 6 : 5;
        Vector bids(n);
        for (int i = 0; i < n; ++i) bids[i] = bid_rng.uniform(0.05, 0.95);
        const IcIrReport r = ic_ir_check(af, bids, 0, 0.01, 0.0, 1.0);
        if (!r.ic_holds || !r.ir_holds) ok = false;
      }
    }
    report("ic/ir on random markets", ok);
  }

  // Gradient vs central finite differences.
  {
    bool ok = true;
    RandomStream model_rng = rng.child(5);
    NpqmModel model = NpqmModel::random_init(5, 3, model_rng);
    model.lambda = 0.7;
    Vector bids(5);
    RandomStream bid_rng = rng.child(6);
    for (int i = 0; i < 5; ++i) bids[i] = bid_rng.uniform(0.1, 0.9);
    const double budget = 1.5;
    const LagrangianGradient grad = gradients(model, bids, budget);
    Vector mu = model.pack();
    const double step = 1e-4;
    for (int p = 0; p < model.num_params(); p += 7) {
      Vector mp = mu, mm = mu;
      mp[p] += step;
      mm[p] -= step;
      NpqmModel plus = model, minus = model;
      plus.unpack(mp);
      minus.unpack(mm);
      const double fd =
          (lagrangian(plus, bids, budget).L - lagrangian(minus, bids, budget).L) / (2 * step);
      const double scale = std::max({1.0, std::abs(fd), std::abs(grad.d_mu[p])});
      if (std::abs(fd - grad.d_mu[p]) / scale > 1e-4) ok = false;
    }
    report("lagrangian gradient vs finite differences", ok);
  }

  if (planted_violation) {
    // Deliberately increasing allocation; the IC check must flag it, and the
    // flagged violation surfaces as exit code 3.
    OwnerCurve increasing{OwnerCurve::Kind::Increasing, 0.0, 0.0, 0.0, kDefaultTau};
    const IcIrReport r = ic_ir_check(increasing, 0.5, 0.0, 1.0, 0.01);
    report(r.ic_holds ? "planted increasing allocation escaped the IC check"
                      : "planted increasing allocation violates IC",
           false);
  }

  std::cout << (violations == 0 ? "check: all invariants hold\n"
                                : "check: invariant violations detected\n");
  return violations == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Private-data query system: procurement-integrated LDP mechanisms"};
  app.require_subcommand(1);

  uint64_t seed = default_seed();
  // Global option; subcommands hand it back up via fallthrough, so
  // `pdqs run ... --seed 7` and `pdqs --seed 7 run ...` both work.
  app.add_option("--seed", seed, "master seed (fallback: PDQS_SEED)");
  app.fallthrough();

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "emit a synthetic dataset as CSV");
  std::string gen_kind = "binary", gen_out = "data.csv";
  int gen_n = 1000;
  double gen_ones = 0.3, gen_lo = 0.0, gen_hi = 1.0;
  gen->add_option("--kind", gen_kind, "binary|real")->check(CLI::IsMember({"binary", "real"}));
  gen->add_option("--n", gen_n)->required();
  gen->add_option("--ones-fraction", gen_ones);
  gen->add_option("--lo", gen_lo);
  gen->add_option("--hi", gen_hi);
  gen->add_option("--out", gen_out)->required();

  // ---- train ----
  auto* train = app.add_subcommand("train", "train an NPQM allocation model");
  int train_n = 100;
  double train_fraction = 0.5;
  std::string train_out = "model.json", train_dist = "uniform";
  TrainConfig train_cfg;
  train->add_option("--n", train_n, "number of data owners")->required();
  train->add_option("--budget-fraction", train_fraction)->required();
  train->add_option("--bid-dist", train_dist)->check(CLI::IsMember({"uniform", "normal"}));
  train->add_option("--episodes", train_cfg.episodes);
  train->add_option("--hidden", train_cfg.hidden);
  train->add_option("--lr-start", train_cfg.lr_mu_start);
  train->add_option("--lr-end", train_cfg.lr_mu_end);
  train->add_option("--lr-lambda", train_cfg.lr_lambda);
  train->add_option("--inner-steps", train_cfg.inner_steps);
  train->add_option("--quad-nodes", train_cfg.quad_nodes);
  train->add_option("--out", train_out)->required();

  // ---- run ----
  auto* run = app.add_subcommand("run", "execute one mechanism on one market");
  std::string run_mechanism, run_query = "count", run_estimator = "debiased";
  std::string run_data, run_column, run_predicate, run_model;
  int run_n = 1000;
  double run_ones = 0.3, run_fraction = 0.5, run_qmin = 0.05;
  run->add_option("--mechanism", run_mechanism)
      ->required()
      ->check(CLI::IsMember({"gpqm-linear", "gpqm-log", "gpqm-exp", "npqm", "fq"}));
  run->add_option("--budget-fraction", run_fraction)->required();
  run->add_option("--query", run_query)->check(CLI::IsMember({"count", "median"}));
  run->add_option("--estimator", run_estimator)->check(CLI::IsMember({"raw", "debiased"}));
  run->add_option("--q-min", run_qmin);
  run->add_option("--data", run_data, "CSV dataset path (else synthetic binary)");
  run->add_option("--column", run_column);
  run->add_option("--predicate", run_predicate, "column==value or column>=number");
  run->add_option("--n", run_n, "synthetic dataset size");
  run->add_option("--ones-fraction", run_ones);
  run->add_option("--model", run_model, "NPQM model file");

  // ---- experiment ----
  auto* experiment = app.add_subcommand("experiment", "run an experiment plan");
  std::string exp_config, exp_out = "records.jsonl", exp_summary;
  int exp_trials = -1;
  int exp_jobs = static_cast<int>(std::thread::hardware_concurrency());
  bool exp_seed_given = false;
  experiment->add_option("--config", exp_config, "plan JSON file")->required();
  experiment->add_option("--out", exp_out, "records output (JSON lines)");
  experiment->add_option("--summary", exp_summary, "per-cell summary CSV");
  experiment->add_option("--trials", exp_trials);
  experiment->add_option("--jobs", exp_jobs, "trial-level parallelism");
  experiment->add_flag("--redraw-bids,!--fixed-bids", "redraw bids per trial (default on)");
  auto* seed_opt = app.get_option("--seed");

  // ---- check ----
  auto* check = app.add_subcommand("check", "run the invariant suites");
  bool planted = false;
  check->add_flag("--planted-violation", planted,
                  "include a deliberately increasing allocation fixture");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Collapse the parser's per-error exit codes onto the documented 1,
    // while keeping 0 for --help and --version.
    return app.exit(e) == 0 ? 0 : 1;
  }
  exp_seed_given = seed_opt->count() > 0;

  try {
    if (gen->parsed()) {
      DatasetSource src = gen_kind == "binary"
                              ? DatasetSource::synthetic_binary(gen_n, gen_ones, seed)
                              : DatasetSource::synthetic_real(gen_n, gen_lo, gen_hi,
                                                             DatasetSource::Dist::Uniform, seed);
      const Dataset data = load_dataset(src);
      std::ofstream out(gen_out);
      if (!out) throw std::runtime_error("cannot open " + gen_out);
      out << "value\n";
      for (double v : data.values) out << v << "\n";
      std::cout << "wrote " << data.values.size() << " rows to " << gen_out << "\n";
      return 0;
    }

    if (train->parsed()) {
      train_cfg.seed = seed;
      RandomStream rng(seed, 0x7121);
      const BidModel bid_model = make_bid_model(train_dist, 0.5, 0.25);
      RandomStream bid_rng = rng.child(0);
      const Vector train_bids = generate_bids(bid_model, train_n, bid_rng);
      const double budget = train_fraction * train_n;
      const auto model = dual_ascent_train(train_bids, budget, train_cfg);
      if (!model) {
        std::cerr << "no budget-feasible allocation found (budget " << budget << ", n "
                  << train_n << "); nothing written\n";
        return 4;
      }
      save_model(*model, train_out);
      const LagrangianParts parts = lagrangian(*model, train_bids, budget);
      std::cout << "model written to " << train_out << " (phi " << parts.phi << ", g "
                << parts.g << ")\n";
      return 0;
    }

    if (run->parsed()) {
      DatasetSource src = run_data.empty()
                              ? DatasetSource::synthetic_binary(run_n, run_ones, seed)
                              : DatasetSource::csv(run_data, run_column, run_predicate);
      const Dataset data = load_dataset(src);
      const int n = static_cast<int>(data.values.size());
      const QuerySpec query = make_query(run_query, run_estimator, run_qmin);
      RandomStream rng(seed, 0x52u);
      RandomStream bid_rng = rng.child(0);
      const Vector bids = generate_bids(BidModel{}, n, bid_rng);

      Market market;
      market.owners.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        market.owners[static_cast<size_t>(i)] =
            DataOwner{data.values[static_cast<size_t>(i)], bids[i], bids[i]};
      }
      market.budget = run_fraction * n;
      market.theta_hi = 1.0;
      market.data_domain = data.domain;

      const RandomStream mech_rng = rng.child(1);
      MechanismOutcome outcome;
      const MechanismKind kind = mechanism_from_string(run_mechanism);
      switch (kind) {
        case MechanismKind::GpqmLinear:
          outcome = run_gpqm(market, AllocationFunction::linear(), query, mech_rng);
          break;
        case MechanismKind::GpqmLog: {
          RandomStream coeff_rng = rng.child(2);
          outcome = run_gpqm(market, AllocationFunction::log(std::max(coeff_rng.uniform(0.0, 10.0), 1e-9)),
                             query, mech_rng);
          break;
        }
        case MechanismKind::GpqmExp: {
          RandomStream coeff_rng = rng.child(2);
          outcome = run_gpqm(market, AllocationFunction::exp(std::max(coeff_rng.uniform(0.0, 10.0), 1e-9)),
                             query, mech_rng);
          break;
        }
        case MechanismKind::Npqm: {
          if (run_model.empty()) throw std::runtime_error("npqm requires --model");
          const NpqmModel model = load_model(run_model);
          outcome = run_npqm(market, model, query, mech_rng);
          break;
        }
        case MechanismKind::Fq:
          outcome = run_fq(market, query, mech_rng);
          break;
      }
      json j = outcome_to_json(outcome);
      j["mechanism"] = run_mechanism;
      j["seed"] = seed;
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (experiment->parsed()) {
      std::ifstream cfg_in(exp_config);
      if (!cfg_in) throw std::runtime_error("cannot open config: " + exp_config);
      json cfg;
      cfg_in >> cfg;

      ExperimentPlan plan;
      for (const auto& m : cfg.at("mechanisms")) {
        plan.mechanisms.push_back(mechanism_from_string(m.get<std::string>()));
      }
      plan.budget_fractions = cfg.at("budget_fractions").get<std::vector<double>>();
      plan.trials = cfg.value("trials", 100);
      plan.query = make_query(cfg.value("query", std::string("count")),
                              cfg.value("estimator", std::string("debiased")),
                              cfg.value("q_min", 0.05));
      plan.bid_model = make_bid_model(cfg.value("bid_dist", std::string("uniform")),
                                      cfg.value("bid_mean", 0.5), cfg.value("bid_std", 0.25));
      plan.train_bid_model =
          make_bid_model(cfg.value("train_bid_dist", cfg.value("bid_dist", std::string("uniform"))),
                         cfg.value("train_bid_mean", 0.5), cfg.value("train_bid_std", 0.25));
      plan.redraw_bids_per_trial = cfg.value("redraw_bids", true);
      plan.seed = cfg.value("seed", static_cast<uint64_t>(0));
      if (cfg.contains("train")) {
        const auto& t = cfg.at("train");
        plan.train.episodes = t.value("episodes", plan.train.episodes);
        plan.train.hidden = t.value("hidden", plan.train.hidden);
        plan.train.lr_mu_start = t.value("lr_mu_start", plan.train.lr_mu_start);
        plan.train.lr_mu_end = t.value("lr_mu_end", plan.train.lr_mu_end);
        plan.train.lr_lambda = t.value("lr_lambda", plan.train.lr_lambda);
        plan.train.quad_nodes = t.value("quad_nodes", plan.train.quad_nodes);
        plan.train.inner_steps = t.value("inner_steps", plan.train.inner_steps);
      }
      plan.jobs = cfg.value("jobs", exp_jobs);

      // Flags win over the config file.
      if (exp_seed_given) plan.seed = seed;
      if (exp_trials > 0) plan.trials = exp_trials;
      if (experiment->count("--jobs") > 0) plan.jobs = exp_jobs;
      if (experiment->count("--redraw-bids") > 0) plan.redraw_bids_per_trial = true;
      if (experiment->count("--fixed-bids") > 0) plan.redraw_bids_per_trial = false;

      DatasetSource src;
      const auto& d = cfg.at("dataset");
      const std::string kind = d.at("kind").get<std::string>();
      if (kind == "csv") {
        src = DatasetSource::csv(d.at("path").get<std::string>(),
                                 d.value("column", std::string()),
                                 d.value("predicate", std::string()));
      } else if (kind == "synthetic-binary") {
        src = DatasetSource::synthetic_binary(d.at("n").get<int>(),
                                              d.value("ones_fraction", 0.3),
                                              d.value("seed", plan.seed));
      } else if (kind == "synthetic-real") {
        src = DatasetSource::synthetic_real(d.at("n").get<int>(), d.value("lo", 0.0),
                                            d.value("hi", 1.0), DatasetSource::Dist::Uniform,
                                            d.value("seed", plan.seed));
      } else {
        throw std::runtime_error("unknown dataset kind: " + kind);
      }

      const Dataset data = load_dataset(src);
      const ExperimentResult result = run_experiment(plan, data);

      json header;
      header["config"] = cfg;
      header["config"]["resolved_seed"] = plan.seed;
      header["config"]["resolved_trials"] = plan.trials;
      header["config"]["resolved_jobs"] = plan.jobs;
      header["timestamp"] = timestamp_utc();
      write_records(result.records, exp_out, header.dump());
      if (!exp_summary.empty()) write_summary_csv(result.records, exp_summary);

      std::cout << result.records.size() << " records written to " << exp_out << "\n";
      for (const auto& s : result.skipped) {
        std::cout << "skipped cell " << s.mechanism << " @ " << s.budget_fraction << ": "
                  << s.reason << "\n";
      }
      return 0;
    }

    if (check->parsed()) {
      return run_check(seed, planted);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
