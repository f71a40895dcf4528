#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

namespace pdqs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Default clamp keeping allocation probabilities strictly below 1, so the
/// privacy loss ln((1+q)/(1-q)) stays finite.
inline constexpr double kDefaultTau = 1e-6;

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

/// A reproducible random stream identified by (seed, stream_id).
/// Re-constructing a stream from the same pair replays the same draws, so
/// per-trial / per-owner streams can be derived statelessly.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed, uint64_t stream_id = 0);

  /// Derives a child stream. Distinct index tuples map to distinct stream
  /// ids via 64-bit mixing.
  RandomStream child(uint64_t a) const;
  RandomStream child(uint64_t a, uint64_t b) const;

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_; }

  uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal(double mean, double stddev);
  bool bernoulli(double p);

 private:
  uint64_t seed_;
  uint64_t stream_;
  std::mt19937_64 engine_;
};

/// Stream for (trial, owner) within one root stream.
RandomStream derive_rng(const RandomStream& root, uint64_t trial, uint64_t owner);

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct DataDomain {
  enum class Kind { Binary, RealInterval };

  Kind kind = Kind::Binary;
  double lo = 0.0;
  double hi = 1.0;

  static DataDomain binary();
  static DataDomain real_interval(double lo, double hi);  // requires lo < hi, finite

  bool contains(double value) const;
  /// Uniform draw over the domain: {0,1} for binary, [lo,hi) otherwise.
  double sample(RandomStream& rng) const;
};

/// One participant: private value, true valuation, reported bid.
struct DataOwner {
  double private_value = 0.0;
  double valuation = 0.0;
  double bid = 0.0;
};

struct Market {
  std::vector<DataOwner> owners;
  double budget = 0.0;
  double theta_lo = 0.0;
  double theta_hi = 1.0;
  DataDomain data_domain;

  int size() const { return static_cast<int>(owners.size()); }
  Vector bids() const;
  /// Throws std::invalid_argument when any invariant is violated.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Allocation functions
// ---------------------------------------------------------------------------

/// One owner's selection probability as a function of her own bid, with the
/// other bids held fixed. Every supported allocation reduces to a few
/// scalars, so payment quadrature can re-evaluate the curve cheaply.
struct OwnerCurve {
  enum class Kind { Linear, Log, Exp, Sigmoid, Constant, Increasing };

  Kind kind = Kind::Linear;
  double coeff = 1.0;   // log/exp coefficient, or the constant value
  double slope = 0.0;   // sigmoid: |w1|*|w2|
  double shift = 0.0;   // sigmoid: |w2|*c + d
  double tau = kDefaultTau;

  double operator()(double own_bid) const;
};

/// Interface the neural allocation model implements; keeps core free of the
/// npqm module.
class NeuralAllocation {
 public:
  virtual ~NeuralAllocation() = default;
  virtual int input_dim() const = 0;
  virtual double eval(const Vector& bids, int i) const = 0;
  virtual std::vector<OwnerCurve> curves(const Vector& bids) const = 0;
};

/// Non-increasing map from bids to per-owner selection probabilities, always
/// clamped into [0, 1 - tau].
class AllocationFunction {
 public:
  enum class Kind { Linear, Log, Exp, Neural };

  static AllocationFunction linear(double tau = kDefaultTau);
  static AllocationFunction log(double k_l, double tau = kDefaultTau);
  static AllocationFunction exp(double k_e, double tau = kDefaultTau);
  static AllocationFunction neural(std::shared_ptr<const NeuralAllocation> net,
                                   double tau = kDefaultTau);

  Kind kind() const { return kind_; }
  double tau() const { return tau_; }
  double coeff() const { return coeff_; }
  const NeuralAllocation* net() const { return net_.get(); }

  OwnerCurve curve(const Vector& bids, int i) const;
  /// Per-owner curves for a full bid vector; for the neural kind this is a
  /// single batched forward pass.
  std::vector<OwnerCurve> curves(const Vector& bids) const;

 private:
  AllocationFunction(Kind kind, double coeff, double tau,
                     std::shared_ptr<const NeuralAllocation> net);

  Kind kind_;
  double coeff_;
  double tau_;
  std::shared_ptr<const NeuralAllocation> net_;
};

/// q_i in [0, 1 - tau]. Throws on invalid index or non-finite bid.
double eval_allocation(const AllocationFunction& af, const Vector& bids, int i);

}  // namespace pdqs
