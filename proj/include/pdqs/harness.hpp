#pragma once

#include "pdqs/core.hpp"
#include "pdqs/npqm.hpp"
#include "pdqs/queries.hpp"

#include <string>
#include <vector>

namespace pdqs {

struct DatasetSource {
  enum class Origin { Csv, SyntheticBinary, SyntheticReal };
  enum class Dist { Uniform, Normal };

  Origin origin = Origin::SyntheticBinary;

  // csv
  std::string path;
  std::string column;
  std::string predicate;  // "col==value" or "col>=number"; empty -> numeric column

  // synthetic
  int n = 0;
  double ones_fraction = 0.0;
  double lo = 0.0;
  double hi = 1.0;
  Dist dist = Dist::Uniform;
  uint64_t seed = 0;

  static DatasetSource csv(std::string path, std::string column, std::string predicate = "");
  static DatasetSource synthetic_binary(int n, double ones_fraction, uint64_t seed = 0);
  static DatasetSource synthetic_real(int n, double lo, double hi,
                                      Dist dist = Dist::Uniform, uint64_t seed = 0);
};

struct Dataset {
  std::vector<double> values;
  DataDomain domain;
};

/// CSV loading applies the predicate to yield {0,1} values for count
/// queries; a bare numeric column sets the domain to [min, max] of the data.
/// Parse failures report the offending row number.
Dataset load_dataset(const DatasetSource& src);

struct BidModel {
  enum class Dist { Uniform, Normal };
  Dist dist = Dist::Uniform;
  double mean = 0.5;
  double stddev = 0.25;
};

/// n bids in (0, 1); the normal variant is min-max mapped into (0,1) with a
/// 1e-3 margin.
Vector generate_bids(const BidModel& model, int n, RandomStream& rng);

enum class MechanismKind { GpqmLinear, GpqmLog, GpqmExp, Npqm, Fq };

std::string to_string(MechanismKind kind);
MechanismKind mechanism_from_string(const std::string& name);

struct ExperimentPlan {
  std::vector<MechanismKind> mechanisms;
  std::vector<double> budget_fractions;  // beta = fraction * theta_hi * n
  int trials = 100;
  QuerySpec query = QuerySpec::count();
  BidModel bid_model;
  BidModel train_bid_model;  // NPQM training bids
  bool redraw_bids_per_trial = true;
  uint64_t seed = 0;
  TrainConfig train;
  int jobs = 1;
};

struct ExperimentRecord {
  std::string mechanism;
  double budget_fraction = 0.0;
  int trial = 0;
  double estimate = 0.0;
  double ground_truth = 0.0;
  double error = 0.0;
  std::string estimator;
  double total_expected_payment = 0.0;
  double total_realized_payment = 0.0;
  int admitted_count = 0;
  uint64_t seed = 0;

  bool operator==(const ExperimentRecord&) const = default;
};

struct SkippedCell {
  std::string mechanism;
  double budget_fraction = 0.0;
  std::string reason;
};

struct ExperimentResult {
  std::vector<ExperimentRecord> records;
  std::vector<SkippedCell> skipped;
};

/// Runs every (mechanism, budget) cell for `trials` trials with derived
/// streams. Private data is fixed; bids are redrawn per trial (switchable).
/// NPQM trains once per cell before its trials; a NoAnswer training becomes
/// a skipped cell.
ExperimentResult run_experiment(const ExperimentPlan& plan, const Dataset& data);

/// JSON-lines persistence, floats at 17 significant digits so records
/// round-trip exactly. A non-empty header becomes a first line
/// {"config": <header>, ...} which read_records skips.
void write_records(const std::vector<ExperimentRecord>& records, const std::string& path,
                   const std::string& header_json = "");
std::vector<ExperimentRecord> read_records(const std::string& path);

/// Per-cell CSV: mechanism, budget_fraction, mean_error, ci_low, ci_high.
void write_summary_csv(const std::vector<ExperimentRecord>& records, const std::string& path);

}  // namespace pdqs
