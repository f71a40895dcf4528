#pragma once

#include "pdqs/core.hpp"

#include <utility>
#include <vector>

namespace pdqs {

struct QuerySpec {
  enum class Kind { Count, Median };
  enum class Estimator { Raw, Debiased };

  Kind kind = Kind::Count;
  Estimator estimator = Estimator::Raw;
  double q_min = 0.05;  // inverse-probability terms with tiny q explode the variance

  static QuerySpec count(Estimator estimator = Estimator::Debiased, double q_min = 0.05);
  static QuerySpec median();
};

struct MetricsSummary {
  double mean_error = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int trials = 0;
};

/// Raw count/median over the perturbed values, or the inverse-probability
/// debiased count (n/|I|) * sum_{i in I} (t'_i - (1-q_i)/2) / q_i with
/// I = {i : q_i >= q_min}, clipped to [0, n]. Falls back to the raw count
/// when I is empty. Debiasing is only defined for binary-domain counts.
double answer_query(const QuerySpec& spec, const Vector& perturbed_values,
                    const Vector& allocation_q, const DataDomain& domain);

double rae(double estimate, double ground_truth);  // throws on zero ground truth
double ae(double estimate, double ground_truth);

/// Empirical PAC failure probability: fraction of trials with |z - z_g| >= alpha.
double pac_empirical(const std::vector<std::pair<double, double>>& records, double alpha);

/// Mean, sample standard deviation and normal-approximation 95% interval.
MetricsSummary summarize(const std::vector<double>& errors);

}  // namespace pdqs
