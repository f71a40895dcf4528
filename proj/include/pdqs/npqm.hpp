#pragma once

#include "pdqs/core.hpp"
#include "pdqs/gpqm.hpp"

#include <optional>
#include <string>

namespace pdqs {

/// Three-layer hypernetwork head: affine -> rectifier -> affine, producing
/// one scalar per bid vector.
struct HyperNet {
  Matrix A1;              // h x n
  Vector k1;              // h
  Eigen::RowVectorXd A3;  // 1 x h
  double k3 = 0.0;

  int hidden() const { return static_cast<int>(k1.size()); }
  int input_dim() const { return static_cast<int>(A1.cols()); }
};

/// Neural allocation function q_i(b) = sigma(|w2|(-|w1| b_i + c) + d), with
/// the head inputs masking the owner's own bid (replaced by the mean of the
/// others) so that w1, w2, c, d never depend on b_i and own-bid monotonicity
/// is exact.
class NpqmModel : public NeuralAllocation {
 public:
  HyperNet head_w1, head_w2, head_d;
  Eigen::RowVectorXd A_c;  // 1 x n
  double k_c = 0.0;

  double lambda = 0.0;
  double tau = kDefaultTau;
  double theta_hi = 1.0;
  bool trained_bf = false;

  int n() const { return static_cast<int>(A_c.size()); }
  int hidden() const { return head_w1.hidden(); }

  int input_dim() const override { return n(); }
  double eval(const Vector& bids, int i) const override;
  std::vector<OwnerCurve> curves(const Vector& bids) const override;

  /// Flat parameter order: for each of head_w1, head_w2, head_d the blocks
  /// [A1 row-major, k1, A3, k3], then [A_c, k_c].
  int num_params() const;
  Vector pack() const;
  void unpack(const Vector& params);

  /// Uniform init scaled by 1/sqrt(fan-in) per layer.
  static NpqmModel random_init(int n, int h, RandomStream& rng,
                               double tau = kDefaultTau, double theta_hi = 1.0);
};

double forward_allocation(const NpqmModel& model, const Vector& bids, int i);

struct LagrangianParts {
  double L = 0.0;
  double phi = 0.0;  // total expected purchased privacy
  double g = 0.0;    // total expected payment minus budget (fixed-node rule)
};

struct LagrangianGradient {
  LagrangianParts parts;
  Vector d_mu;           // layout matches NpqmModel::pack()
  double d_lambda = 0.0; // equals g
};

/// L = -phi + lambda * g, with the payment integral evaluated by a fixed
/// trapezoid rule so the constraint stays a fixed differentiable expression.
/// phi scores each owner at the deployed (clamped) privacy load, capped at
/// w(1 - tau). The payment side enters unclamped (pure sigmoid): w is
/// increasing in q, so the surrogate payment upper-bounds the clamped
/// deployment payment, g <= 0 certifies feasibility, and allocations pushed
/// past the clamp keep a restoring cost gradient while earning no extra phi.
LagrangianParts lagrangian(const NpqmModel& model, const Vector& bids, double budget,
                           int quad_nodes = 64);

/// Reverse accumulation through the full Lagrangian, every quadrature node
/// included. Absolute values use subgradient 0 at 0. Throws on non-finite
/// gradients.
LagrangianGradient gradients(const NpqmModel& model, const Vector& bids, double budget,
                             int quad_nodes = 64);

struct TrainConfig {
  int episodes = 5000;
  int hidden = 8;
  double lr_mu_start = 0.005;
  double lr_mu_end = 0.001;
  double lr_lambda = 0.005;
  int quad_nodes = 64;
  int inner_steps = 10;
  /// Global-norm clip on the primal gradient. The hypernet weights grow
  /// multiplicatively under the raw phi-ascent of the first episodes, before
  /// the multiplier has caught up; clipping keeps that transient bounded.
  double max_grad_norm = 10.0;
  uint64_t seed = 0;
  double tau = kDefaultTau;
  double theta_hi = 1.0;
};

/// Dual ascent (inner SGD on the weights, projected gradient ascent on the
/// multiplier). Commits an iterate only when the budget constraint holds on
/// the training bids and on a bootstrap resample of them, keeping the
/// committed model with the highest resample phi; returns it, or nullopt
/// when no such iterate was ever seen.
std::optional<NpqmModel> dual_ascent_train(const Vector& train_bids, double budget,
                                           const TrainConfig& cfg);

/// Every owner participates (no greedy cutoff): allocation from the model,
/// payments from the high-accuracy quadrature, ILR per owner, then the
/// query. Refuses models without the budget-feasibility flag.
MechanismOutcome run_npqm(const Market& market, const NpqmModel& model,
                          const QuerySpec& query, const RandomStream& rng);

/// Text model format: dimensions, clamp, multiplier, flag, and row-major
/// weight arrays with explicit shapes. Unknown versions and dimension
/// mismatches are hard errors.
void save_model(const NpqmModel& model, const std::string& path);
NpqmModel load_model(const std::string& path);

}  // namespace pdqs
