#include "pdqs/npqm.hpp"

#include "pdqs/payments.hpp"
#include "pdqs/randomizer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace pdqs {
namespace {

constexpr int kModelFormatVersion = 1;

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

struct HeadCache {
  Matrix Z1;   // h x n, pre-activations per owner
  Vector out;  // n
};

struct ForwardCache {
  Vector delta;  // per-owner masked-input correction, x_i = b + delta_i * e_i
  HeadCache w1, w2, d;
  Vector c;
};

void head_forward(const HyperNet& head, const Vector& bids, const Vector& delta,
                  HeadCache& cache) {
  const Vector base = head.A1 * bids + head.k1;
  cache.Z1 = head.A1;
  cache.Z1.array().rowwise() *= delta.transpose().array();
  cache.Z1.colwise() += base;
  const Matrix relu = cache.Z1.cwiseMax(0.0);
  cache.out = (head.A3 * relu).transpose();
  cache.out.array() += head.k3;
}

ForwardCache forward_all(const NpqmModel& model, const Vector& bids) {
  const auto n = bids.size();
  if (n != model.n()) throw std::invalid_argument("bid vector length does not match model n");
  if (!bids.allFinite()) throw std::invalid_argument("non-finite bid");

  ForwardCache cache;
  cache.delta.resize(n);
  const double sum = bids.sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double masked = n > 1 ? (sum - bids[i]) / static_cast<double>(n - 1) : 0.0;
    cache.delta[i] = masked - bids[i];
  }
  head_forward(model.head_w1, bids, cache.delta, cache.w1);
  head_forward(model.head_w2, bids, cache.delta, cache.w2);
  head_forward(model.head_d, bids, cache.delta, cache.d);
  const double c_base = (model.A_c * bids)(0);
  cache.c = cache.delta.cwiseProduct(model.A_c.transpose());
  cache.c.array() += c_base + model.k_c;
  return cache;
}

struct HeadGrad {
  Matrix dA1;
  Vector dk1;
  Eigen::RowVectorXd dA3;
  double dk3 = 0.0;
};

HeadGrad head_backward(const HyperNet& head, const Vector& bids, const Vector& delta,
                       const HeadCache& cache, const Vector& d_out) {
  HeadGrad grad;
  const Matrix relu = cache.Z1.cwiseMax(0.0);
  grad.dA3 = (relu * d_out).transpose();
  grad.dk3 = d_out.sum();
  Matrix g = (cache.Z1.array() > 0.0).cast<double>();
  g.array().colwise() *= head.A3.transpose().array();
  g.array().rowwise() *= d_out.transpose().array();
  grad.dk1 = g.rowwise().sum();
  grad.dA1 = grad.dk1 * bids.transpose();
  g.array().rowwise() *= delta.transpose().array();
  grad.dA1 += g;
  return grad;
}

void pack_head(const HyperNet& head, Vector& out, int& pos) {
  const int h = head.hidden();
  const int n = head.input_dim();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < n; ++c) out[pos++] = head.A1(r, c);
  for (int r = 0; r < h; ++r) out[pos++] = head.k1[r];
  for (int c = 0; c < h; ++c) out[pos++] = head.A3[c];
  out[pos++] = head.k3;
}

void unpack_head(HyperNet& head, const Vector& in, int& pos) {
  const int h = head.hidden();
  const int n = head.input_dim();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < n; ++c) head.A1(r, c) = in[pos++];
  for (int r = 0; r < h; ++r) head.k1[r] = in[pos++];
  for (int c = 0; c < h; ++c) head.A3[c] = in[pos++];
  head.k3 = in[pos++];
}

void pack_head_grad(const HeadGrad& grad, Vector& out, int& pos) {
  const int h = static_cast<int>(grad.dk1.size());
  const int n = static_cast<int>(grad.dA1.cols());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < n; ++c) out[pos++] = grad.dA1(r, c);
  for (int r = 0; r < h; ++r) out[pos++] = grad.dk1[r];
  for (int c = 0; c < h; ++c) out[pos++] = grad.dA3[c];
  out[pos++] = grad.dk3;
}

struct EvalWorkspace {
  Eigen::ArrayXd x, u, u_pos, e_neg, e_shift, q, eps, w, dl_du;
};

// Shared value/gradient path over the Lagrangian. The head outputs do not
// depend on the owner's own bid, so every substituted-bid evaluation is a
// scalar sigmoid curve; reverse accumulation reduces to two running sums per
// owner before the head backward pass.
LagrangianGradient evaluate(const NpqmModel& model, const Vector& bids, double budget,
                            int quad_nodes, bool want_grad) {
  if (quad_nodes < 2) throw std::invalid_argument("quad_nodes must be at least 2");
  const auto n = bids.size();
  const ForwardCache cache = forward_all(model, bids);

  LagrangianGradient result;
  Vector d_w1, d_w2, d_c, d_d;
  if (want_grad) {
    d_w1 = Vector::Zero(n);
    d_w2 = Vector::Zero(n);
    d_c = Vector::Zero(n);
    d_d = Vector::Zero(n);
  }

  EvalWorkspace ws;
  const int cols = quad_nodes + 1;
  ws.x.resize(cols);

  // phi is scored through the deployment clamp: past 1 - tau an owner
  // delivers no additional privacy, so the objective must not reward it.
  // The payment side stays unclamped; its cost keeps growing with the
  // logit, which is the restoring force that pulls saturated allocations
  // back under the clamp.
  const double w_cap = privacy_load_of_q(1.0 - model.tau);

  double phi = 0.0;
  double total_payment = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w1 = cache.w1.out[i];
    const double w2 = cache.w2.out[i];
    const double c = cache.c[i];
    const double d = cache.d.out[i];
    const double slope = std::abs(w1) * std::abs(w2);
    const double shift = std::abs(w2) * c + d;

    const double b = bids[i];
    const double span = model.theta_hi - b;
    const int nodes = span > 0.0 ? quad_nodes : 0;
    const int m = 1 + nodes;
    const double step = nodes > 0 ? span / (nodes - 1) : 0.0;

    ws.x[0] = b;
    for (int j = 0; j < nodes; ++j) ws.x[1 + j] = b + j * step;

    auto x = ws.x.head(m);
    ws.u = shift - slope * x;
    // Training surrogate: the pure (unclamped) sigmoid. w is increasing in
    // q, so the surrogate payment upper-bounds the deployed clamped payment
    // and a g <= 0 commit certifies feasibility of the clamped model, while
    // allocations pushed past the clamp keep a restoring gradient instead of
    // a dead zero subgradient.
    // eps = ln((1+q)/(1-q)) = ln(1 + 2 e^u); both q and eps come from the
    // same two max-shifted exponentials, so q -> 1 stays finite.
    ws.u_pos = ws.u.max(0.0);
    ws.e_neg = (-ws.u_pos).exp();
    ws.e_shift = (ws.u - ws.u_pos).exp();
    ws.q = ws.e_shift / (ws.e_neg + ws.e_shift);
    ws.eps = ws.u_pos + (ws.e_neg + 2.0 * ws.e_shift).log();
    ws.w = ws.q * ws.eps;

    phi += std::min(ws.w[0], w_cap);
    double pay = b * ws.w[0];
    for (int j = 0; j < nodes; ++j) {
      const double tw = (j == 0 || j == nodes - 1) ? 0.5 * step : step;
      pay += tw * ws.w[1 + j];
    }
    total_payment += pay;

    if (want_grad) {
      // dL/du at every eval point. dw/du = q(1-q) eps + 2q^2/(1+q) is the
      // product dw/dq * dq/du rearranged so q -> 1 stays finite (limit 1).
      ws.dl_du.resize(m);
      for (int k = 0; k < m; ++k) {
        const double q = ws.q[k];
        const double dw_du = q * (1.0 - q) * ws.eps[k] + 2.0 * q * q / (1.0 + q);
        double coeff;
        if (k == 0) {
          coeff = (ws.w[0] < w_cap ? -1.0 : 0.0) + model.lambda * b;
        } else {
          const int j = k - 1;
          const double tw = (j == 0 || j == nodes - 1) ? 0.5 * step : step;
          coeff = model.lambda * tw;
        }
        ws.dl_du[k] = coeff * dw_du;
      }
      const double sum_dl = ws.dl_du.sum();
      const double sum_dl_x = (ws.dl_du * x).sum();
      d_w1[i] = -std::abs(w2) * sgn(w1) * sum_dl_x;
      d_w2[i] = sgn(w2) * (-std::abs(w1) * sum_dl_x + c * sum_dl);
      d_c[i] = std::abs(w2) * sum_dl;
      d_d[i] = sum_dl;
    }
  }

  const double g = total_payment - budget;
  result.parts = LagrangianParts{-phi + model.lambda * g, phi, g};
  result.d_lambda = g;

  if (want_grad) {
    const HeadGrad g_w1 = head_backward(model.head_w1, bids, cache.delta, cache.w1, d_w1);
    const HeadGrad g_w2 = head_backward(model.head_w2, bids, cache.delta, cache.w2, d_w2);
    const HeadGrad g_d = head_backward(model.head_d, bids, cache.delta, cache.d, d_d);

    result.d_mu.resize(model.num_params());
    int pos = 0;
    pack_head_grad(g_w1, result.d_mu, pos);
    pack_head_grad(g_w2, result.d_mu, pos);
    pack_head_grad(g_d, result.d_mu, pos);
    // c head: dA_c accumulates over the masked inputs x_i = b + delta_i e_i.
    const double sum_dc = d_c.sum();
    for (Eigen::Index col = 0; col < n; ++col) {
      result.d_mu[pos++] = sum_dc * bids[col] + d_c[col] * cache.delta[col];
    }
    result.d_mu[pos++] = sum_dc;

    if (!result.d_mu.allFinite() || !std::isfinite(result.parts.L)) {
      throw std::runtime_error("non-finite gradient: training diverged");
    }
  }
  return result;
}

}  // namespace

double NpqmModel::eval(const Vector& bids, int i) const {
  if (i < 0 || i >= bids.size()) throw std::out_of_range("owner index out of range");
  return curves(bids)[static_cast<size_t>(i)](bids[i]);
}

std::vector<OwnerCurve> NpqmModel::curves(const Vector& bids) const {
  const ForwardCache cache = forward_all(*this, bids);
  std::vector<OwnerCurve> out;
  out.reserve(static_cast<size_t>(bids.size()));
  for (Eigen::Index i = 0; i < bids.size(); ++i) {
    OwnerCurve curve;
    curve.kind = OwnerCurve::Kind::Sigmoid;
    curve.slope = std::abs(cache.w1.out[i]) * std::abs(cache.w2.out[i]);
    curve.shift = std::abs(cache.w2.out[i]) * cache.c[i] + cache.d.out[i];
    curve.tau = tau;
    out.push_back(curve);
  }
  return out;
}

int NpqmModel::num_params() const {
  const int per_head = hidden() * n() + hidden() + hidden() + 1;
  return 3 * per_head + n() + 1;
}

Vector NpqmModel::pack() const {
  Vector out(num_params());
  int pos = 0;
  pack_head(head_w1, out, pos);
  pack_head(head_w2, out, pos);
  pack_head(head_d, out, pos);
  for (int c = 0; c < n(); ++c) out[pos++] = A_c[c];
  out[pos++] = k_c;
  return out;
}

void NpqmModel::unpack(const Vector& params) {
  if (params.size() != num_params()) throw std::invalid_argument("parameter vector size mismatch");
  int pos = 0;
  unpack_head(head_w1, params, pos);
  unpack_head(head_w2, params, pos);
  unpack_head(head_d, params, pos);
  for (int c = 0; c < n(); ++c) A_c[c] = params[pos++];
  k_c = params[pos++];
}

NpqmModel NpqmModel::random_init(int n, int h, RandomStream& rng, double tau,
                                 double theta_hi) {
  if (n < 1 || h < 1) throw std::invalid_argument("n and h must be positive");
  const auto init_head = [&](HyperNet& head) {
    const double a1 = 1.0 / std::sqrt(static_cast<double>(n));
    const double a3 = 1.0 / std::sqrt(static_cast<double>(h));
    head.A1.resize(h, n);
    head.k1.resize(h);
    head.A3.resize(h);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < n; ++c) head.A1(r, c) = rng.uniform(-a1, a1);
    for (int r = 0; r < h; ++r) head.k1[r] = rng.uniform(-a1, a1);
    for (int c = 0; c < h; ++c) head.A3[c] = rng.uniform(-a3, a3);
    head.k3 = rng.uniform(-a3, a3);
  };
  NpqmModel model;
  init_head(model.head_w1);
  init_head(model.head_w2);
  init_head(model.head_d);
  const double ac = 1.0 / std::sqrt(static_cast<double>(n));
  model.A_c.resize(n);
  for (int c = 0; c < n; ++c) model.A_c[c] = rng.uniform(-ac, ac);
  model.k_c = rng.uniform(-ac, ac);
  model.lambda = 0.0;
  model.tau = tau;
  model.theta_hi = theta_hi;
  model.trained_bf = false;
  return model;
}

double forward_allocation(const NpqmModel& model, const Vector& bids, int i) {
  return model.eval(bids, i);
}

LagrangianParts lagrangian(const NpqmModel& model, const Vector& bids, double budget,
                           int quad_nodes) {
  return evaluate(model, bids, budget, quad_nodes, false).parts;
}

LagrangianGradient gradients(const NpqmModel& model, const Vector& bids, double budget,
                             int quad_nodes) {
  return evaluate(model, bids, budget, quad_nodes, true);
}

std::optional<NpqmModel> dual_ascent_train(const Vector& train_bids, double budget,
                                           const TrainConfig& cfg) {
  if (cfg.episodes < 1 || cfg.hidden < 1) throw std::invalid_argument("invalid train config");
  if (!(cfg.lr_mu_start > 0.0 && cfg.lr_mu_end > 0.0 && cfg.lr_lambda > 0.0)) {
    throw std::invalid_argument("learning rates must be positive");
  }
  if (!(cfg.max_grad_norm > 0.0)) throw std::invalid_argument("max_grad_norm must be positive");
  const int n = static_cast<int>(train_bids.size());
  RandomStream rng(cfg.seed, 0x4e70u);
  NpqmModel model = NpqmModel::random_init(n, cfg.hidden, rng, cfg.tau, cfg.theta_hi);
  model.lambda = 0.0;

  // Held-out draw for the commit gate: a bootstrap resample of the training
  // bids. The heads read the whole bid vector, so long runs can razor-fit
  // the exact training draw (huge weights, allocation collapsing to zero on
  // any other vector of the same distribution); such an iterate scores phi
  // near zero on the resample and is never preferred.
  Vector holdout_bids(n);
  {
    RandomStream holdout_rng(cfg.seed, 0x401Du);
    for (int i = 0; i < n; ++i) {
      const int j = std::min(n - 1, static_cast<int>(holdout_rng.uniform() * n));
      holdout_bids[i] = train_bids[j];
    }
  }

  Vector mu = model.pack();
  Vector committed;
  bool bf = false;
  double committed_lambda = 0.0;
  double committed_phi = 0.0;

  for (int episode = 0; episode < cfg.episodes; ++episode) {
    const double frac =
        cfg.episodes > 1 ? static_cast<double>(episode) / (cfg.episodes - 1) : 0.0;
    const double lr = cfg.lr_mu_start + (cfg.lr_mu_end - cfg.lr_mu_start) * frac;

    // Commit gate: keep the feasible iterate with the best held-out phi. The
    // multiplier overshoots after long infeasible stretches, so the final
    // iterate can be a degenerate near-zero allocation; the boundary iterates
    // crossed on the way are the ones worth keeping, ranked on the resample
    // so a training-draw razor fit never wins. Every gradient call already
    // reports the parts at the current iterate, so each inner step is a
    // commit check at the cost of one extra value pass when feasible.
    const auto maybe_commit = [&](const LagrangianParts& parts) {
      if (!std::isfinite(parts.L)) throw std::runtime_error("non-finite loss: training diverged");
      if (parts.g > 0.0) return;
      const LagrangianParts held = lagrangian(model, holdout_bids, budget, cfg.quad_nodes);
      if (held.g > 0.0) return;
      if (!bf || held.phi > committed_phi) {
        committed = mu;
        committed_lambda = model.lambda;
        committed_phi = held.phi;
        bf = true;
      }
    };

    for (int s = 0; s < cfg.inner_steps; ++s) {
      LagrangianGradient grad = gradients(model, train_bids, budget, cfg.quad_nodes);
      maybe_commit(grad.parts);
      const double norm = grad.d_mu.norm();
      if (norm > cfg.max_grad_norm) grad.d_mu *= cfg.max_grad_norm / norm;
      mu -= lr * grad.d_mu;
      model.unpack(mu);
    }

    const LagrangianParts parts = lagrangian(model, train_bids, budget, cfg.quad_nodes);
    maybe_commit(parts);
    model.lambda = std::max(0.0, model.lambda + cfg.lr_lambda * parts.g);
  }

  if (!bf) return std::nullopt;
  model.unpack(committed);
  model.lambda = committed_lambda;
  model.trained_bf = true;
  return model;
}

MechanismOutcome run_npqm(const Market& market, const NpqmModel& model,
                          const QuerySpec& query, const RandomStream& rng) {
  market.validate();
  if (!model.trained_bf) throw std::invalid_argument("model has no budget-feasible training flag");
  if (market.size() != model.n()) {
    throw std::invalid_argument("market size does not match model input dimension");
  }
  const int n = market.size();
  const Vector bids = market.bids();
  const std::vector<OwnerCurve> owner_curves = model.curves(bids);

  MechanismOutcome outcome;
  outcome.allocation_q = Vector(n);
  outcome.expected_payments_P = Vector(n);
  outcome.realized_payments_p = Vector(n);
  outcome.perturbed_values = Vector(n);
  for (int i = 0; i < n; ++i) {
    const OwnerCurve& curve = owner_curves[static_cast<size_t>(i)];
    outcome.allocation_q[i] = curve(bids[i]);
    outcome.expected_payments_P[i] =
        expected_payment(curve, bids[i], market.theta_hi).expected_payment_P;
    RandomStream owner_rng = rng.child(static_cast<uint64_t>(i));
    const IlrResult r =
        ilr_apply(market.owners[static_cast<size_t>(i)].private_value, outcome.allocation_q[i],
                  outcome.expected_payments_P[i], market.data_domain, owner_rng);
    outcome.perturbed_values[i] = r.reported_value;
    outcome.realized_payments_p[i] = r.realized_payment;
  }
  outcome.admitted_count = n;
  outcome.total_expected_payment = outcome.expected_payments_P.sum();
  outcome.total_realized_payment = outcome.realized_payments_p.sum();
  outcome.query_answer =
      answer_query(query, outcome.perturbed_values, outcome.allocation_q, market.data_domain);
  return outcome;
}

namespace {

nlohmann::json head_to_json(const HyperNet& head) {
  nlohmann::json j;
  j["shape_A1"] = {head.A1.rows(), head.A1.cols()};
  std::vector<double> a1;
  a1.reserve(static_cast<size_t>(head.A1.size()));
  for (int r = 0; r < head.A1.rows(); ++r)
    for (int c = 0; c < head.A1.cols(); ++c) a1.push_back(head.A1(r, c));
  j["A1"] = a1;
  j["k1"] = std::vector<double>(head.k1.begin(), head.k1.end());
  j["A3"] = std::vector<double>(head.A3.begin(), head.A3.end());
  j["k3"] = head.k3;
  return j;
}

HyperNet head_from_json(const nlohmann::json& j, int n, int h) {
  HyperNet head;
  const auto shape = j.at("shape_A1").get<std::vector<long>>();
  if (shape.size() != 2 || shape[0] != h || shape[1] != n) {
    throw std::runtime_error("model file: head shape mismatch");
  }
  const auto a1 = j.at("A1").get<std::vector<double>>();
  const auto k1 = j.at("k1").get<std::vector<double>>();
  const auto a3 = j.at("A3").get<std::vector<double>>();
  if (a1.size() != static_cast<size_t>(h) * n || k1.size() != static_cast<size_t>(h) ||
      a3.size() != static_cast<size_t>(h)) {
    throw std::runtime_error("model file: head array size mismatch");
  }
  head.A1.resize(h, n);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < n; ++c) head.A1(r, c) = a1[static_cast<size_t>(r) * n + c];
  head.k1 = Eigen::Map<const Vector>(k1.data(), h);
  head.A3 = Eigen::Map<const Eigen::RowVectorXd>(a3.data(), h);
  head.k3 = j.at("k3").get<double>();
  return head;
}

}  // namespace

void save_model(const NpqmModel& model, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["n"] = model.n();
  j["h"] = model.hidden();
  j["tau"] = model.tau;
  j["theta_hi"] = model.theta_hi;
  j["lambda"] = model.lambda;
  j["trained_bf"] = model.trained_bf;
  j["head_w1"] = head_to_json(model.head_w1);
  j["head_w2"] = head_to_json(model.head_w2);
  j["head_d"] = head_to_json(model.head_d);
  j["A_c"] = std::vector<double>(model.A_c.begin(), model.A_c.end());
  j["k_c"] = model.k_c;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open model file for writing: " + path);
  out << j.dump(2) << "\n";
}

NpqmModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("format_version").get<int>() != kModelFormatVersion) {
    throw std::runtime_error("model file: unknown format version");
  }
  const int n = j.at("n").get<int>();
  const int h = j.at("h").get<int>();
  if (n < 1 || h < 1) throw std::runtime_error("model file: invalid dimensions");
  NpqmModel model;
  model.head_w1 = head_from_json(j.at("head_w1"), n, h);
  model.head_w2 = head_from_json(j.at("head_w2"), n, h);
  model.head_d = head_from_json(j.at("head_d"), n, h);
  const auto ac = j.at("A_c").get<std::vector<double>>();
  if (ac.size() != static_cast<size_t>(n)) throw std::runtime_error("model file: A_c size mismatch");
  model.A_c = Eigen::Map<const Eigen::RowVectorXd>(ac.data(), n);
  model.k_c = j.at("k_c").get<double>();
  model.tau = j.at("tau").get<double>();
  model.theta_hi = j.at("theta_hi").get<double>();
  model.lambda = j.at("lambda").get<double>();
  model.trained_bf = j.at("trained_bf").get<bool>();
  return model;
}

}  // namespace pdqs
