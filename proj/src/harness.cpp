#include "pdqs/harness.hpp"

#include "pdqs/baseline_fq.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pdqs {

DatasetSource DatasetSource::csv(std::string path, std::string column, std::string predicate) {
  DatasetSource src;
  src.origin = Origin::Csv;
  src.path = std::move(path);
  src.column = std::move(column);
  src.predicate = std::move(predicate);
  return src;
}

DatasetSource DatasetSource::synthetic_binary(int n, double ones_fraction, uint64_t seed) {
  DatasetSource src;
  src.origin = Origin::SyntheticBinary;
  src.n = n;
  src.ones_fraction = ones_fraction;
  src.seed = seed;
  return src;
}

DatasetSource DatasetSource::synthetic_real(int n, double lo, double hi, Dist dist,
                                            uint64_t seed) {
  DatasetSource src;
  src.origin = Origin::SyntheticReal;
  src.n = n;
  src.lo = lo;
  src.hi = hi;
  src.dist = dist;
  src.seed = seed;
  return src;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

struct Predicate {
  std::string column;
  bool equality = true;  // false -> ">=" threshold
  std::string value;
  double threshold = 0.0;
};

Predicate parse_predicate(const std::string& text, const std::string& default_column) {
  Predicate p;
  auto pos = text.find("==");
  if (pos != std::string::npos) {
    p.column = trim(text.substr(0, pos));
    p.value = trim(text.substr(pos + 2));
    p.equality = true;
  } else {
    pos = text.find(">=");
    if (pos == std::string::npos) {
      throw std::invalid_argument("predicate must use '==' or '>=': " + text);
    }
    p.column = trim(text.substr(0, pos));
    p.equality = false;
    try {
      p.threshold = std::stod(trim(text.substr(pos + 2)));
    } catch (const std::exception&) {
      throw std::invalid_argument("predicate threshold is not numeric: " + text);
    }
  }
  if (p.column.empty()) p.column = default_column;
  return p;
}

Dataset load_csv(const DatasetSource& src) {
  std::ifstream in(src.path);
  if (!in) throw std::runtime_error("cannot open dataset: " + src.path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset: " + src.path);

  const bool predicated = !src.predicate.empty();
  const Predicate pred =
      predicated ? parse_predicate(src.predicate, src.column) : Predicate{src.column, false, "", 0.0};
  const std::string wanted = predicated ? pred.column : src.column;

  const std::vector<std::string> header = split_csv_line(line);
  int col = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == wanted) col = static_cast<int>(i);
  }
  if (col < 0) throw std::runtime_error("column not found in " + src.path + ": " + wanted);

  std::vector<double> values;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (static_cast<size_t>(col) >= cells.size()) {
      throw std::runtime_error("row " + std::to_string(row) + ": missing column " + wanted);
    }
    const std::string raw = trim(cells[static_cast<size_t>(col)]);
    if (predicated && pred.equality) {
      values.push_back(raw == pred.value ? 1.0 : 0.0);
      continue;
    }
    double parsed;
    try {
      parsed = std::stod(raw);
    } catch (const std::exception&) {
      throw std::runtime_error("row " + std::to_string(row) + ": unparseable cell '" + raw + "'");
    }
    if (predicated) {
      values.push_back(parsed >= pred.threshold ? 1.0 : 0.0);
    } else {
      values.push_back(parsed);
    }
  }
  if (values.empty()) throw std::runtime_error("dataset has no rows: " + src.path);

  Dataset out;
  out.values = std::move(values);
  if (predicated) {
    out.domain = DataDomain::binary();
  } else {
    const auto [lo, hi] = std::minmax_element(out.values.begin(), out.values.end());
    out.domain = *lo < *hi ? DataDomain::real_interval(*lo, *hi)
                           : DataDomain::real_interval(*lo, *lo + 1.0);
  }
  return out;
}

}  // namespace

Dataset load_dataset(const DatasetSource& src) {
  switch (src.origin) {
    case DatasetSource::Origin::Csv:
      return load_csv(src);
    case DatasetSource::Origin::SyntheticBinary: {
      if (src.n < 1) throw std::invalid_argument("synthetic dataset needs n >= 1");
      const int ones = static_cast<int>(std::llround(src.n * src.ones_fraction));
      std::vector<double> values(static_cast<size_t>(src.n), 0.0);
      for (int i = 0; i < ones && i < src.n; ++i) values[static_cast<size_t>(i)] = 1.0;
      RandomStream rng(src.seed, 0xDA7Au);
      for (int i = src.n - 1; i > 0; --i) {
        const auto j = rng.next_u64() % static_cast<uint64_t>(i + 1);
        std::swap(values[static_cast<size_t>(i)], values[j]);
      }
      return Dataset{std::move(values), DataDomain::binary()};
    }
    case DatasetSource::Origin::SyntheticReal: {
      if (src.n < 1) throw std::invalid_argument("synthetic dataset needs n >= 1");
      const DataDomain domain = DataDomain::real_interval(src.lo, src.hi);
      RandomStream rng(src.seed, 0xDA7Bu);
      std::vector<double> values(static_cast<size_t>(src.n));
      if (src.dist == DatasetSource::Dist::Uniform) {
        for (double& v : values) v = rng.uniform(src.lo, src.hi);
      } else {
        const double mean = 0.5 * (src.lo + src.hi);
        const double sd = (src.hi - src.lo) / 6.0;
        for (double& v : values) v = std::clamp(rng.normal(mean, sd), src.lo, src.hi);
      }
      return Dataset{std::move(values), domain};
    }
  }
  throw std::logic_error("unreachable dataset origin");
}

Vector generate_bids(const BidModel& model, int n, RandomStream& rng) {
  if (n < 1) throw std::invalid_argument("need n >= 1 bids");
  Vector bids(n);
  if (model.dist == BidModel::Dist::Uniform) {
    for (int i = 0; i < n; ++i) bids[i] = std::max(rng.uniform(), 1e-12);
    return bids;
  }
  for (int i = 0; i < n; ++i) bids[i] = rng.normal(model.mean, model.stddev);
  // Min-max map into (0,1) with a small margin.
  constexpr double kMargin = 1e-3;
  const double lo = bids.minCoeff();
  const double hi = bids.maxCoeff();
  if (hi - lo < 1e-300) {
    bids.setConstant(0.5);
    return bids;
  }
  for (int i = 0; i < n; ++i) {
    bids[i] = kMargin + (1.0 - 2.0 * kMargin) * (bids[i] - lo) / (hi - lo);
  }
  return bids;
}

std::string to_string(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::GpqmLinear: return "gpqm-linear";
    case MechanismKind::GpqmLog: return "gpqm-log";
    case MechanismKind::GpqmExp: return "gpqm-exp";
    case MechanismKind::Npqm: return "npqm";
    case MechanismKind::Fq: return "fq";
  }
  throw std::logic_error("unreachable mechanism kind");
}

MechanismKind mechanism_from_string(const std::string& name) {
  if (name == "gpqm-linear") return MechanismKind::GpqmLinear;
  if (name == "gpqm-log") return MechanismKind::GpqmLog;
  if (name == "gpqm-exp") return MechanismKind::GpqmExp;
  if (name == "npqm") return MechanismKind::Npqm;
  if (name == "fq") return MechanismKind::Fq;
  throw std::invalid_argument("unknown mechanism: " + name);
}

namespace {

double ground_truth_of(const QuerySpec& query, const Dataset& data) {
  if (query.kind == QuerySpec::Kind::Count) {
    double sum = 0.0;
    for (double v : data.values) sum += v;
    return sum;
  }
  std::vector<double> sorted = data.values;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  return n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

double error_of(const QuerySpec& query, double estimate, double truth) {
  if (query.kind == QuerySpec::Kind::Count && truth != 0.0) return rae(estimate, truth);
  return ae(estimate, truth);
}

Market make_market(const Dataset& data, const Vector& bids, double budget) {
  Market market;
  market.owners.resize(data.values.size());
  for (size_t i = 0; i < data.values.size(); ++i) {
    market.owners[i].private_value = data.values[i];
    market.owners[i].bid = bids[static_cast<Eigen::Index>(i)];
    market.owners[i].valuation = market.owners[i].bid;
  }
  market.budget = budget;
  market.theta_lo = 0.0;
  market.theta_hi = 1.0;
  market.data_domain = data.domain;
  return market;
}

struct CellContext {
  const ExperimentPlan* plan = nullptr;
  const Dataset* data = nullptr;
  MechanismKind mechanism;
  double budget_fraction = 0.0;
  double budget = 0.0;
  double ground_truth = 0.0;
  RandomStream cell_stream{0};
  Vector fixed_bids;
  const NpqmModel* model = nullptr;  // NPQM only
};

ExperimentRecord run_trial(const CellContext& ctx, int trial) {
  const ExperimentPlan& plan = *ctx.plan;
  RandomStream trial_stream = ctx.cell_stream.child(10, static_cast<uint64_t>(trial));
  RandomStream bid_rng = trial_stream.child(0);
  const Vector bids = plan.redraw_bids_per_trial
                          ? generate_bids(plan.bid_model, static_cast<int>(ctx.data->values.size()),
                                          bid_rng)
                          : ctx.fixed_bids;
  const Market market = make_market(*ctx.data, bids, ctx.budget);
  const RandomStream mech_rng = trial_stream.child(1);

  MechanismOutcome outcome;
  switch (ctx.mechanism) {
    case MechanismKind::GpqmLinear:
      outcome = run_gpqm(market, AllocationFunction::linear(), plan.query, mech_rng);
      break;
    case MechanismKind::GpqmLog: {
      RandomStream coeff_rng = trial_stream.child(2);
      const double k = std::max(coeff_rng.uniform(0.0, 10.0), 1e-9);
      outcome = run_gpqm(market, AllocationFunction::log(k), plan.query, mech_rng);
      break;
    }
    case MechanismKind::GpqmExp: {
      RandomStream coeff_rng = trial_stream.child(2);
      const double k = std::max(coeff_rng.uniform(0.0, 10.0), 1e-9);
      outcome = run_gpqm(market, AllocationFunction::exp(k), plan.query, mech_rng);
      break;
    }
    case MechanismKind::Npqm:
      outcome = run_npqm(market, *ctx.model, plan.query, mech_rng);
      break;
    case MechanismKind::Fq:
      outcome = run_fq(market, plan.query, mech_rng);
      break;
  }

  ExperimentRecord record;
  record.mechanism = to_string(ctx.mechanism);
  record.budget_fraction = ctx.budget_fraction;
  record.trial = trial;
  record.estimate = outcome.query_answer;
  record.ground_truth = ctx.ground_truth;
  record.error = error_of(plan.query, outcome.query_answer, ctx.ground_truth);
  record.estimator =
      (plan.query.kind == QuerySpec::Kind::Count &&
       plan.query.estimator == QuerySpec::Estimator::Debiased)
          ? "debiased"
          : "raw";
  record.total_expected_payment = outcome.total_expected_payment;
  record.total_realized_payment = outcome.total_realized_payment;
  record.admitted_count = outcome.admitted_count;
  record.seed = trial_stream.stream_id();
  return record;
}

void run_cell_trials(const CellContext& ctx, std::vector<ExperimentRecord>& out) {
  const int trials = ctx.plan->trials;
  out.resize(static_cast<size_t>(trials));
  const int jobs = std::max(1, ctx.plan->jobs);
  if (jobs == 1 || trials == 1) {
    for (int t = 0; t < trials; ++t) out[static_cast<size_t>(t)] = run_trial(ctx, t);
    return;
  }
  std::vector<std::thread> workers;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int t = w; t < trials; t += jobs) out[static_cast<size_t>(t)] = run_trial(ctx, t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& worker : workers) worker.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, const Dataset& data) {
  if (plan.trials < 1) throw std::invalid_argument("plan needs at least one trial");
  if (plan.mechanisms.empty() || plan.budget_fractions.empty()) {
    throw std::invalid_argument("plan needs mechanisms and budgets");
  }
  const int n = static_cast<int>(data.values.size());
  const RandomStream root(plan.seed, 0xE0E0u);
  const double truth = ground_truth_of(plan.query, data);

  ExperimentResult result;
  for (size_t mi = 0; mi < plan.mechanisms.size(); ++mi) {
    for (size_t bi = 0; bi < plan.budget_fractions.size(); ++bi) {
      CellContext ctx;
      ctx.plan = &plan;
      ctx.data = &data;
      ctx.mechanism = plan.mechanisms[mi];
      ctx.budget_fraction = plan.budget_fractions[bi];
      ctx.budget = ctx.budget_fraction * 1.0 * n;  // theta_hi = 1
      ctx.ground_truth = truth;
      ctx.cell_stream = root.child(static_cast<uint64_t>(mi), static_cast<uint64_t>(bi));

      if (!plan.redraw_bids_per_trial) {
        RandomStream bid_rng = ctx.cell_stream.child(20);
        ctx.fixed_bids = generate_bids(plan.bid_model, n, bid_rng);
      }

      std::optional<NpqmModel> model;
      if (ctx.mechanism == MechanismKind::Npqm) {
        TrainConfig cfg = plan.train;
        cfg.seed = ctx.cell_stream.child(30).stream_id();
        RandomStream train_bid_rng = ctx.cell_stream.child(31);
        const Vector train_bids = generate_bids(plan.train_bid_model, n, train_bid_rng);
        model = dual_ascent_train(train_bids, ctx.budget, cfg);
        if (!model) {
          result.skipped.push_back(SkippedCell{to_string(ctx.mechanism), ctx.budget_fraction,
                                               "dual ascent returned no budget-feasible model"});
          continue;
        }
        ctx.model = &*model;
      }

      std::vector<ExperimentRecord> cell_records;
      run_cell_trials(ctx, cell_records);
      for (auto& r : cell_records) result.records.push_back(std::move(r));
    }
  }
  return result;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_records(const std::vector<ExperimentRecord>& records, const std::string& path,
                   const std::string& header_json) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open records file for writing: " + path);
  if (!header_json.empty()) out << header_json << "\n";
  for (const ExperimentRecord& r : records) {
    out << "{\"mechanism\":\"" << r.mechanism << "\""
        << ",\"budget_fraction\":" << fmt_double(r.budget_fraction)
        << ",\"trial\":" << r.trial
        << ",\"estimate\":" << fmt_double(r.estimate)
        << ",\"ground_truth\":" << fmt_double(r.ground_truth)
        << ",\"error\":" << fmt_double(r.error)
        << ",\"estimator\":\"" << r.estimator << "\""
        << ",\"total_expected_payment\":" << fmt_double(r.total_expected_payment)
        << ",\"total_realized_payment\":" << fmt_double(r.total_realized_payment)
        << ",\"admitted_count\":" << r.admitted_count
        << ",\"seed\":" << r.seed << "}\n";
  }
}

std::vector<ExperimentRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records file: " + path);
  std::vector<ExperimentRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.is_object() && j.contains("config")) continue;  // header line
      ExperimentRecord r;
      r.mechanism = j.at("mechanism").get<std::string>();
      r.budget_fraction = j.at("budget_fraction").get<double>();
      r.trial = j.at("trial").get<int>();
      r.estimate = j.at("estimate").get<double>();
      r.ground_truth = j.at("ground_truth").get<double>();
      r.error = j.at("error").get<double>();
      r.estimator = j.at("estimator").get<std::string>();
      r.total_expected_payment = j.at("total_expected_payment").get<double>();
      r.total_realized_payment = j.at("total_realized_payment").get<double>();
      r.admitted_count = j.at("admitted_count").get<int>();
      r.seed = j.at("seed").get<uint64_t>();
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("records file " + path + " line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return records;
}

void write_summary_csv(const std::vector<ExperimentRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open summary file for writing: " + path);
  out << "mechanism,budget_fraction,mean_error,ci_low,ci_high\n";

  std::vector<std::pair<std::string, double>> cells;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.mechanism, r.budget_fraction);
    if (std::find(cells.begin(), cells.end(), key) == cells.end()) cells.push_back(key);
  }
  for (const auto& [mech, fraction] : cells) {
    std::vector<double> errors;
    for (const auto& r : records) {
      if (r.mechanism == mech && r.budget_fraction == fraction) errors.push_back(r.error);
    }
    double mean, lo, hi;
    if (errors.size() >= 2) {
      const MetricsSummary s = summarize(errors);
      mean = s.mean_error;
      lo = s.ci_low;
      hi = s.ci_high;
    } else {
      mean = lo = hi = errors.front();
    }
    out << mech << ',' << fmt_double(fraction) << ',' << fmt_double(mean) << ','
        << fmt_double(lo) << ',' << fmt_double(hi) << "\n";
  }
}

}  // namespace pdqs
