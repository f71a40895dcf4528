#include "pdqs/queries.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pdqs {

QuerySpec QuerySpec::count(Estimator estimator, double q_min) {
  if (!(q_min > 0.0 && q_min < 1.0)) throw std::invalid_argument("q_min must lie in (0,1)");
  return QuerySpec{Kind::Count, estimator, q_min};
}

QuerySpec QuerySpec::median() { return QuerySpec{Kind::Median, Estimator::Raw, 0.05}; }

namespace {

double median_of(Vector values) {
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

double answer_query(const QuerySpec& spec, const Vector& perturbed_values,
                    const Vector& allocation_q, const DataDomain& domain) {
  const auto n = perturbed_values.size();
  if (n == 0 || allocation_q.size() != n) {
    throw std::invalid_argument("perturbed values and allocation lists must share length n >= 1");
  }
  if (spec.kind == QuerySpec::Kind::Median) return median_of(perturbed_values);

  if (spec.estimator == QuerySpec::Estimator::Raw) return perturbed_values.sum();

  if (domain.kind != DataDomain::Kind::Binary) {
    throw std::invalid_argument("debiased estimator requires the binary domain");
  }
  double acc = 0.0;
  int included = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = allocation_q[i];
    if (q < spec.q_min) continue;
    acc += (perturbed_values[i] - 0.5 * (1.0 - q)) / q;
    ++included;
  }
  if (included == 0) return perturbed_values.sum();
  const double scaled = static_cast<double>(n) / included * acc;
  return std::clamp(scaled, 0.0, static_cast<double>(n));
}

double rae(double estimate, double ground_truth) {
  if (ground_truth == 0.0) {
    throw std::invalid_argument("relative absolute error undefined for zero ground truth");
  }
  return std::abs(estimate - ground_truth) / std::abs(ground_truth);
}

double ae(double estimate, double ground_truth) { return std::abs(estimate - ground_truth); }

double pac_empirical(const std::vector<std::pair<double, double>>& records, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (records.empty()) throw std::invalid_argument("at least one record required");
  int failures = 0;
  for (const auto& [estimate, truth] : records) {
    if (std::abs(estimate - truth) >= alpha) ++failures;
  }
  return static_cast<double>(failures) / static_cast<double>(records.size());
}

MetricsSummary summarize(const std::vector<double>& errors) {
  const int m = static_cast<int>(errors.size());
  if (m < 2) throw std::invalid_argument("summarize requires at least two trials");
  double mean = 0.0;
  for (double e : errors) mean += e;
  mean /= m;
  double var = 0.0;
  for (double e : errors) var += (e - mean) * (e - mean);
  var /= (m - 1);
  const double sd = std::sqrt(var);
  const double half = 1.96 * sd / std::sqrt(static_cast<double>(m));
  return MetricsSummary{mean, sd, mean - half, mean + half, m};
}

}  // namespace pdqs
