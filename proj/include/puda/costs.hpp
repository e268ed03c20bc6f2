#pragma once

#include "puda/types.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace puda {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Sparse feature vector with 0-based, strictly increasing indices.
struct SparseVector {
  std::vector<int> index;
  std::vector<double> value;

  double squared_norm() const {
    double s = 0.0;
    for (double v : value) s += v * v;
    return s;
  }
};

struct Sample {
  SparseVector x;
  int y = 1;  ///< +1 or -1
};

struct Dataset {
  std::vector<Sample> samples;
  int M = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Scales every nonzero feature vector to unit Euclidean norm.
inline void normalize_rows(Dataset& d) {
  for (auto& s : d.samples) {
    double n = std::sqrt(s.x.squared_norm());
    if (n > 0.0) {
      for (double& v : s.x.value) v /= n;
    }
  }
}

/// Gaussian features projected to the unit sphere, labels from a planted
/// hyperplane with each label flipped independently with `flip_prob`.
inline Dataset synthetic_classification(int n, int M, std::uint64_t seed, double flip_prob = 0.1) {
  if (n < 1 || M < 1) throw InvalidSizeError("synthetic_classification: n and M must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution flip(flip_prob);
  Vector planted(M);
  for (int j = 0; j < M; ++j) planted(j) = gauss(rng);

  Dataset d;
  d.M = M;
  d.samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.x.index.resize(static_cast<std::size_t>(M));
    s.x.value.resize(static_cast<std::size_t>(M));
    double dot = 0.0;
    for (int j = 0; j < M; ++j) {
      double v = gauss(rng);
      s.x.index[static_cast<std::size_t>(j)] = j;
      s.x.value[static_cast<std::size_t>(j)] = v;
      dot += v * planted(j);
    }
    s.y = dot >= 0.0 ? 1 : -1;
    if (flip(rng)) s.y = -s.y;
    d.samples.push_back(std::move(s));
  }
  normalize_rows(d);
  return d;
}

/// Shuffles with `seed` and deals the samples into K shards whose sizes
/// differ by at most one (the first |d| mod K shards get the extra sample).
inline std::vector<Dataset> partition_data(const Dataset& d, int K, std::uint64_t seed) {
  if (K < 1) throw InvalidSizeError("partition_data: K must be positive");
  if (d.size() < static_cast<std::size_t>(K)) {
    throw InvalidSizeError("partition_data: " + std::to_string(d.size()) + " samples cannot fill " +
                           std::to_string(K) + " shards");
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t base = d.size() / static_cast<std::size_t>(K);
  const std::size_t extra = d.size() % static_cast<std::size_t>(K);
  std::vector<Dataset> shards(static_cast<std::size_t>(K));
  std::size_t pos = 0;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    shards[k].M = d.M;
    std::size_t count = base + (k < extra ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) shards[k].samples.push_back(d.samples[order[pos++]]);
  }
  return shards;
}

// ---------------------------------------------------------------------------
// Per-agent costs
// ---------------------------------------------------------------------------

enum class CostFamily { Quadratic, QuadraticForm, Logistic };

/// One agent's smooth cost J_k.
class AgentCost {
 public:
  virtual ~AgentCost() = default;
  virtual double eval(const Vector& w) const = 0;
  virtual Vector grad(const Vector& w) const = 0;
  virtual int dimension() const = 0;
};

/// eta/2 ||w||^2
class ScaledNormCost final : public AgentCost {
 public:
  ScaledNormCost(double eta, int M) : eta_(eta), M_(M) {}
  double eval(const Vector& w) const override { return 0.5 * eta_ * w.squaredNorm(); }
  Vector grad(const Vector& w) const override { return eta_ * w; }
  int dimension() const override { return M_; }
  double eta() const { return eta_; }

 private:
  double eta_;
  int M_;
};

/// 1/2 w'Qw - b'w with Q symmetric positive definite.
class QuadraticFormCost final : public AgentCost {
 public:
  QuadraticFormCost(Matrix Q, Vector b) : Q_(std::move(Q)), b_(std::move(b)) {
    if (Q_.rows() != Q_.cols() || Q_.rows() != b_.size()) throw ShapeError("QuadraticFormCost: shape mismatch");
  }
  double eval(const Vector& w) const override { return 0.5 * w.dot(Q_ * w) - b_.dot(w); }
  Vector grad(const Vector& w) const override { return Q_ * w - b_; }
  int dimension() const override { return static_cast<int>(b_.size()); }
  const Matrix& Q() const { return Q_; }
  const Vector& b() const { return b_; }

 private:
  Matrix Q_;
  Vector b_;
};

/// (1/L) sum_l ln(1 + exp(-y_l x_l'w)) + lambda/2 ||w||^2
class LogisticCost final : public AgentCost {
 public:
  using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  LogisticCost(const Dataset& shard, double lambda) : lambda_(lambda), M_(shard.M) {
    if (shard.empty()) throw InvalidDataError("logistic_cost: empty shard");
    const auto L = static_cast<Eigen::Index>(shard.size());
    X_.resize(L, M_);
    y_.resize(L);
    std::vector<Eigen::Triplet<double>> trips;
    for (Eigen::Index l = 0; l < L; ++l) {
      const auto& s = shard.samples[static_cast<std::size_t>(l)];
      if (s.y != 1 && s.y != -1) throw InvalidDataError("logistic_cost: labels must be +1 or -1");
      y_(l) = s.y;
      for (std::size_t j = 0; j < s.x.index.size(); ++j) {
        if (s.x.index[j] < 0 || s.x.index[j] >= M_) throw InvalidDataError("logistic_cost: feature index out of range");
        trips.emplace_back(l, s.x.index[j], s.x.value[j]);
      }
    }
    X_.setFromTriplets(trips.begin(), trips.end());
  }

  double eval(const Vector& w) const override {
    Vector margin = y_.cwiseProduct(X_ * w);
    double loss = 0.0;
    for (Eigen::Index l = 0; l < margin.size(); ++l) loss += softplus(-margin(l));
    return loss / static_cast<double>(margin.size()) + 0.5 * lambda_ * w.squaredNorm();
  }

  Vector grad(const Vector& w) const override {
    Vector margin = y_.cwiseProduct(X_ * w);
    Vector coef(margin.size());
    for (Eigen::Index l = 0; l < margin.size(); ++l) coef(l) = -y_(l) * sigmoid(-margin(l));
    Vector g = X_.transpose() * coef;
    g /= static_cast<double>(margin.size());
    g += lambda_ * w;
    return g;
  }

  int dimension() const override { return M_; }
  double lambda() const { return lambda_; }
  const SparseRows& features() const { return X_; }
  Eigen::Index samples() const { return X_.rows(); }

  static double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
  }

  static double softplus(double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  }

 private:
  double lambda_;
  int M_;
  SparseRows X_;
  Vector y_;
};

/// The K per-agent smooth costs together with their shared constants
/// (nu: strong convexity, delta: gradient Lipschitz).
class SmoothCostSet {
 public:
  SmoothCostSet(CostFamily family, std::vector<std::shared_ptr<const AgentCost>> agents, double nu, double delta)
      : family_(family), agents_(std::move(agents)), nu_(nu), delta_(delta) {
    if (agents_.empty()) throw InvalidSizeError("SmoothCostSet: no agents");
    M_ = agents_.front()->dimension();
    for (const auto& a : agents_) {
      if (a->dimension() != M_) throw ShapeError("SmoothCostSet: agents disagree on dimension");
    }
  }

  CostFamily family() const { return family_; }
  int K() const { return static_cast<int>(agents_.size()); }
  int M() const { return M_; }
  double nu() const { return nu_; }
  double delta() const { return delta_; }
  const AgentCost& agent(int k) const { return *agents_[static_cast<std::size_t>(k)]; }

  double eval(int k, const Vector& w) const { return agent(k).eval(w); }
  Vector grad(int k, const Vector& w) const { return agent(k).grad(w); }

  /// Row k of the result is grad J_k(row k of W).
  Block grads(const Block& W) const {
    if (W.rows() != K() || W.cols() != M_) throw ShapeError("SmoothCostSet::grads: block shape mismatch");
    Block G(W.rows(), W.cols());
    for (int k = 0; k < K(); ++k) G.row(k) = agent(k).grad(W.row(k).transpose()).transpose();
    return G;
  }

  /// Gradient of the network average (1/K) sum_k J_k at a single point.
  Vector average_grad(const Vector& w) const {
    Vector g = Vector::Zero(M_);
    for (int k = 0; k < K(); ++k) g += agent(k).grad(w);
    return g / static_cast<double>(K());
  }

  double average_eval(const Vector& w) const {
    double s = 0.0;
    for (int k = 0; k < K(); ++k) s += agent(k).eval(w);
    return s / static_cast<double>(K());
  }

 private:
  CostFamily family_;
  std::vector<std::shared_ptr<const AgentCost>> agents_;
  int M_ = 0;
  double nu_;
  double delta_;
};

inline SmoothCostSet quadratic_cost(double eta, int K, int M) {
  if (!(eta > 0.0)) throw DomainError("quadratic_cost: eta must be positive");
  if (K < 1 || M < 1) throw InvalidSizeError("quadratic_cost: K and M must be positive");
  std::vector<std::shared_ptr<const AgentCost>> agents;
  auto shared = std::make_shared<const ScaledNormCost>(eta, M);
  for (int k = 0; k < K; ++k) agents.push_back(shared);
  return SmoothCostSet(CostFamily::Quadratic, std::move(agents), eta, eta);
}

namespace detail {

inline std::pair<double, double> extreme_eigenvalues(const Matrix& Q) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (Q + Q.transpose()), Eigen::EigenvaluesOnly);
  return {es.eigenvalues()(0), es.eigenvalues()(Q.rows() - 1)};
}

// Largest eigenvalue of X'X through the smaller of the two Gram matrices.
inline double gram_sigma_max(const LogisticCost::SparseRows& X) {
  Matrix dense = Matrix(X);
  Matrix gram = dense.rows() <= dense.cols() ? Matrix(dense * dense.transpose()) : Matrix(dense.transpose() * dense);
  return extreme_eigenvalues(gram).second;
}

}  // namespace detail

/// Per-agent quadratic forms; nu/delta are the extreme Hessian eigenvalues across agents.
inline SmoothCostSet quadratic_form_cost(const std::vector<Matrix>& Qs, const std::vector<Vector>& bs) {
  if (Qs.empty() || Qs.size() != bs.size()) throw InvalidSizeError("quadratic_form_cost: need one (Q,b) per agent");
  std::vector<std::shared_ptr<const AgentCost>> agents;
  double nu = INFINITY;
  double delta = 0.0;
  for (std::size_t k = 0; k < Qs.size(); ++k) {
    auto [lo, hi] = detail::extreme_eigenvalues(Qs[k]);
    if (!(lo > 0.0)) throw DomainError("quadratic_form_cost: Q_k must be positive definite");
    nu = std::min(nu, lo);
    delta = std::max(delta, hi);
    agents.push_back(std::make_shared<const QuadraticFormCost>(Qs[k], bs[k]));
  }
  return SmoothCostSet(CostFamily::QuadraticForm, std::move(agents), nu, delta);
}

/// Seeded strongly convex quadratics: Q_k = R'R/M + alpha I, b_k ~ N(0, I).
inline SmoothCostSet random_quadratic_cost(int K, int M, std::uint64_t seed, double alpha = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Matrix> Qs;
  std::vector<Vector> bs;
  for (int k = 0; k < K; ++k) {
    Matrix R(M, M);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < M; ++j) R(i, j) = gauss(rng);
    Matrix Q = R.transpose() * R / static_cast<double>(M);
    Q.diagonal().array() += alpha;
    Vector b(M);
    for (int j = 0; j < M; ++j) b(j) = gauss(rng);
    Qs.push_back(0.5 * (Q + Q.transpose()));
    bs.push_back(b);
  }
  return quadratic_form_cost(Qs, bs);
}

struct CostConstants {
  double nu;
  double delta;
};

/// Quadratic families: exact Hessian spectrum. Logistic: nu = lambda and
/// delta = lambda + max_k sigma_max(X_k'X_k)/(4 L_k).
inline CostConstants estimate_constants(const SmoothCostSet& costs) {
  switch (costs.family()) {
    case CostFamily::Quadratic: {
      auto* q = dynamic_cast<const ScaledNormCost*>(&costs.agent(0));
      if (!q) throw UnsupportedError("estimate_constants: inconsistent quadratic family");
      return {q->eta(), q->eta()};
    }
    case CostFamily::QuadraticForm: {
      double nu = INFINITY;
      double delta = 0.0;
      for (int k = 0; k < costs.K(); ++k) {
        auto* q = dynamic_cast<const QuadraticFormCost*>(&costs.agent(k));
        if (!q) throw UnsupportedError("estimate_constants: inconsistent quadratic-form family");
        auto [lo, hi] = detail::extreme_eigenvalues(q->Q());
        nu = std::min(nu, lo);
        delta = std::max(delta, hi);
      }
      return {nu, delta};
    }
    case CostFamily::Logistic: {
      double lambda = 0.0;
      double curvature = 0.0;
      for (int k = 0; k < costs.K(); ++k) {
        auto* c = dynamic_cast<const LogisticCost*>(&costs.agent(k));
        if (!c) throw UnsupportedError("estimate_constants: inconsistent logistic family");
        lambda = c->lambda();
        curvature = std::max(curvature, detail::gram_sigma_max(c->features()) / (4.0 * static_cast<double>(c->samples())));
      }
      return {lambda, lambda + curvature};
    }
  }
  throw UnsupportedError("estimate_constants: unsupported cost family");
}

inline SmoothCostSet logistic_cost(const std::vector<Dataset>& shards, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("logistic_cost: lambda must be positive");
  if (shards.empty()) throw InvalidSizeError("logistic_cost: no shards");
  std::vector<std::shared_ptr<const AgentCost>> agents;
  for (const auto& shard : shards) {
    if (shard.empty()) throw InvalidDataError("logistic_cost: empty shard");
    agents.push_back(std::make_shared<const LogisticCost>(shard, lambda));
  }
  SmoothCostSet provisional(CostFamily::Logistic, agents, lambda, lambda);
  auto constants = estimate_constants(provisional);
  return SmoothCostSet(CostFamily::Logistic, std::move(agents), constants.nu, constants.delta);
}

}  // namespace puda
