#include "pdqs/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pdqs {
namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double clamp_probability(double x, double tau) {
  if (std::isnan(x)) return 0.0;
  return std::clamp(x, 0.0, 1.0 - tau);
}

}  // namespace

// ---------------------------------------------------------------------------
// RandomStream
// ---------------------------------------------------------------------------

RandomStream::RandomStream(uint64_t seed, uint64_t stream_id)
    : seed_(seed),
      stream_(stream_id),
      engine_(splitmix64(seed) ^ splitmix64(splitmix64(stream_id))) {}

RandomStream RandomStream::child(uint64_t a) const {
  return RandomStream(seed_, splitmix64(stream_ + splitmix64(a + 1)));
}

RandomStream RandomStream::child(uint64_t a, uint64_t b) const {
  return child(a).child(b);
}

uint64_t RandomStream::next_u64() { return engine_(); }

double RandomStream::uniform() {
  // 53-bit mantissa; result in [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RandomStream::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

bool RandomStream::bernoulli(double p) { return uniform() < p; }

RandomStream derive_rng(const RandomStream& root, uint64_t trial, uint64_t owner) {
  return root.child(trial, owner);
}

// ---------------------------------------------------------------------------
// DataDomain / Market
// ---------------------------------------------------------------------------

DataDomain DataDomain::binary() { return DataDomain{Kind::Binary, 0.0, 1.0}; }

DataDomain DataDomain::real_interval(double lo, double hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
    throw std::invalid_argument("real-interval domain requires finite lo < hi");
  }
  return DataDomain{Kind::RealInterval, lo, hi};
}

bool DataDomain::contains(double value) const {
  if (kind == Kind::Binary) return value == 0.0 || value == 1.0;
  return value >= lo && value <= hi;
}

double DataDomain::sample(RandomStream& rng) const {
  if (kind == Kind::Binary) return rng.bernoulli(0.5) ? 1.0 : 0.0;
  return rng.uniform(lo, hi);
}

Vector Market::bids() const {
  Vector b(size());
  for (int i = 0; i < size(); ++i) b[i] = owners[static_cast<size_t>(i)].bid;
  return b;
}

void Market::validate() const {
  if (owners.empty()) throw std::invalid_argument("market has no owners");
  if (!(budget > 0.0)) throw std::invalid_argument("budget must be positive");
  if (!(theta_lo < theta_hi)) throw std::invalid_argument("theta_lo must be below theta_hi");
  for (const DataOwner& o : owners) {
    if (!(o.valuation >= theta_lo && o.valuation <= theta_hi)) {
      throw std::invalid_argument("owner valuation outside [theta_lo, theta_hi]");
    }
    if (!(o.bid >= theta_lo && o.bid <= theta_hi)) {
      throw std::invalid_argument("owner bid outside [theta_lo, theta_hi]");
    }
    if (!data_domain.contains(o.private_value)) {
      throw std::invalid_argument("owner private value outside the data domain");
    }
  }
}

// ---------------------------------------------------------------------------
// OwnerCurve / AllocationFunction
// ---------------------------------------------------------------------------

double OwnerCurve::operator()(double own_bid) const {
  switch (kind) {
    case Kind::Linear:
      return clamp_probability(1.0 - own_bid, tau);
    case Kind::Log:
      // -log(k*b) diverges to +inf as b -> 0; the clamp resolves it to 1-tau.
      if (own_bid <= 0.0) return 1.0 - tau;
      return clamp_probability(-std::log(coeff * own_bid), tau);
    case Kind::Exp:
      return clamp_probability(std::exp(-coeff * own_bid), tau);
    case Kind::Sigmoid: {
      const double z = shift - slope * own_bid;
      const double s = 1.0 / (1.0 + std::exp(-z));
      return clamp_probability(s, tau);
    }
    case Kind::Constant:
      return clamp_probability(coeff, tau);
    case Kind::Increasing:
      // Test fixture violating allocation monotonicity on purpose.
      return clamp_probability(own_bid, tau);
  }
  return 0.0;
}

AllocationFunction::AllocationFunction(Kind kind, double coeff, double tau,
                                       std::shared_ptr<const NeuralAllocation> net)
    : kind_(kind), coeff_(coeff), tau_(tau), net_(std::move(net)) {
  if (!(tau_ > 0.0 && tau_ <= 0.01)) {
    throw std::invalid_argument("clamp tau must lie in (0, 0.01]");
  }
}

AllocationFunction AllocationFunction::linear(double tau) {
  return AllocationFunction(Kind::Linear, 0.0, tau, nullptr);
}

AllocationFunction AllocationFunction::log(double k_l, double tau) {
  if (!(k_l > 0.0)) throw std::invalid_argument("log allocation requires k_l > 0");
  return AllocationFunction(Kind::Log, k_l, tau, nullptr);
}

AllocationFunction AllocationFunction::exp(double k_e, double tau) {
  if (!(k_e > 0.0)) throw std::invalid_argument("exp allocation requires k_e > 0");
  return AllocationFunction(Kind::Exp, k_e, tau, nullptr);
}

AllocationFunction AllocationFunction::neural(
    std::shared_ptr<const NeuralAllocation> net, double tau) {
  if (!net) throw std::invalid_argument("neural allocation requires a model");
  return AllocationFunction(Kind::Neural, 0.0, tau, std::move(net));
}

OwnerCurve AllocationFunction::curve(const Vector& bids, int i) const {
  if (i < 0 || i >= bids.size()) throw std::out_of_range("owner index out of range");
  if (!bids.allFinite()) throw std::invalid_argument("non-finite bid");
  switch (kind_) {
    case Kind::Linear:
      return OwnerCurve{OwnerCurve::Kind::Linear, 0.0, 0.0, 0.0, tau_};
    case Kind::Log:
      return OwnerCurve{OwnerCurve::Kind::Log, coeff_, 0.0, 0.0, tau_};
    case Kind::Exp:
      return OwnerCurve{OwnerCurve::Kind::Exp, coeff_, 0.0, 0.0, tau_};
    case Kind::Neural:
      return net_->curves(bids)[static_cast<size_t>(i)];
  }
  throw std::logic_error("unreachable allocation kind");
}

std::vector<OwnerCurve> AllocationFunction::curves(const Vector& bids) const {
  if (!bids.allFinite()) throw std::invalid_argument("non-finite bid");
  if (kind_ == Kind::Neural) return net_->curves(bids);
  std::vector<OwnerCurve> out;
  out.reserve(static_cast<size_t>(bids.size()));
  for (int i = 0; i < bids.size(); ++i) out.push_back(curve(bids, i));
  return out;
}

double eval_allocation(const AllocationFunction& af, const Vector& bids, int i) {
  return af.curve(bids, i)(bids[i]);
}

}  // namespace pdqs
