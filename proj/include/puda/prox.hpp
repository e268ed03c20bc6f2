#pragma once

#include "puda/types.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace puda {

/// prox_{mu R}(x) = argmin_z R(z) + ||z - x||^2 / (2 mu), together with
/// pointwise evaluation of R.
class ProxOperator {
 public:
  using ApplyFn = std::function<Vector(const Vector&, double)>;
  using ValueFn = std::function<double(const Vector&)>;

  /// The zero regularizer (identity prox).
  ProxOperator() = default;

  ProxOperator(std::string descriptor, ApplyFn apply, ValueFn value)
      : descriptor_(std::move(descriptor)), apply_(std::move(apply)), value_(std::move(value)) {}

  Vector apply(const Vector& x, double mu) const {
    if (!(mu > 0.0)) throw DomainError("prox: mu must be positive");
    return apply_ ? apply_(x, mu) : x;
  }
  Vector operator()(const Vector& x, double mu) const { return apply(x, mu); }

  double value(const Vector& x) const { return value_ ? value_(x) : 0.0; }

  bool is_identity() const { return !apply_; }
  const std::string& descriptor() const { return descriptor_; }

 private:
  std::string descriptor_ = "zero";
  ApplyFn apply_;
  ValueFn value_;
};

/// Componentwise sgn(x) max(|x| - kappa, 0).
inline Vector prox_l1(const Vector& x, double kappa) {
  if (!(kappa >= 0.0)) throw DomainError("prox_l1: kappa must be non-negative");
  Vector out(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double mag = std::abs(x(j)) - kappa;
    out(j) = mag > 0.0 ? std::copysign(mag, x(j)) : 0.0;
  }
  return out;
}

inline ProxOperator zero_prox() { return ProxOperator(); }

/// R = rho ||.||_1
inline ProxOperator l1_prox(double rho) {
  if (!(rho > 0.0)) throw DomainError("l1_prox: rho must be positive");
  return ProxOperator(
      "l1(" + std::to_string(rho) + ")", [rho](const Vector& x, double mu) { return prox_l1(x, mu * rho); },
      [rho](const Vector& x) { return rho * x.lpNorm<1>(); });
}

// ---------------------------------------------------------------------------
// Counterexample regularizers R1(w) = ||D1 w - b1||_1, R2(w) = ||D2 w||_1
// ---------------------------------------------------------------------------

/// A matrix row with at most two nonzeros.
struct RowPair {
  int col_a = 0;
  double val_a = 0.0;
  int col_b = -1;  ///< -1 when the row has a single nonzero
  double val_b = 0.0;
};

class SparsePairMatrix {
 public:
  SparsePairMatrix() = default;
  SparsePairMatrix(std::vector<RowPair> rows, int cols) : rows_(std::move(rows)), cols_(cols) {}

  int rows() const { return static_cast<int>(rows_.size()); }
  int cols() const { return cols_; }
  const RowPair& row(int r) const { return rows_[static_cast<std::size_t>(r)]; }

  Vector multiply(const Vector& x) const {
    if (x.size() != cols_) throw ShapeError("SparsePairMatrix: dimension mismatch");
    Vector y(rows());
    for (int r = 0; r < rows(); ++r) {
      const auto& p = rows_[static_cast<std::size_t>(r)];
      y(r) = p.val_a * x(p.col_a) + (p.col_b >= 0 ? p.val_b * x(p.col_b) : 0.0);
    }
    return y;
  }

  Vector multiply_transpose(const Vector& u) const {
    if (u.size() != rows()) throw ShapeError("SparsePairMatrix: dimension mismatch");
    Vector x = Vector::Zero(cols_);
    for (int r = 0; r < rows(); ++r) {
      const auto& p = rows_[static_cast<std::size_t>(r)];
      x(p.col_a) += p.val_a * u(r);
      if (p.col_b >= 0) x(p.col_b) += p.val_b * u(r);
    }
    return x;
  }

  Matrix dense() const {
    Matrix D = Matrix::Zero(rows(), cols_);
    for (int r = 0; r < rows(); ++r) {
      const auto& p = rows_[static_cast<std::size_t>(r)];
      D(r, p.col_a) = p.val_a;
      if (p.col_b >= 0) D(r, p.col_b) = p.val_b;
    }
    return D;
  }

 private:
  std::vector<RowPair> rows_;
  int cols_ = 0;
};

struct CounterexamplePair {
  SparsePairMatrix D1;
  SparsePairMatrix D2;
  Vector b1;  ///< first standard basis vector of length M/2
  int M = 0;
};

/// D1 = [sqrt2 e_1'; rows pairing (2,3), (4,5), ...], D2 pairs (1,2), (3,4), ...
/// (1-based columns), both (M/2) x M.
inline CounterexamplePair build_counterexample(int M) {
  if (M < 2 || M % 2 != 0) throw InvalidSizeError("build_counterexample: M must be even and at least 2");
  const int half = M / 2;
  std::vector<RowPair> r1;
  std::vector<RowPair> r2;
  r1.push_back({0, std::sqrt(2.0), -1, 0.0});
  for (int r = 1; r < half; ++r) r1.push_back({2 * r - 1, 1.0, 2 * r, -1.0});
  for (int r = 0; r < half; ++r) r2.push_back({2 * r, 1.0, 2 * r + 1, -1.0});
  CounterexamplePair pair;
  pair.D1 = SparsePairMatrix(std::move(r1), M);
  pair.D2 = SparsePairMatrix(std::move(r2), M);
  pair.b1 = Vector::Zero(half);
  pair.b1(0) = 1.0;
  pair.M = M;
  return pair;
}

enum class CounterexampleTerm { R1, R2 };

inline double counterexample_value(CounterexampleTerm which, const CounterexamplePair& pair, const Vector& w) {
  if (which == CounterexampleTerm::R1) return (pair.D1.multiply(w) - pair.b1).lpNorm<1>();
  return pair.D2.multiply(w).lpNorm<1>();
}

/// Closed form for g(Dw - b) with DD' = 2I:
///   w + 1/(2 mu) D'[prox_{2 mu^2 g}(mu D w - mu b) - mu D w + mu b].
inline Vector prox_counterexample(CounterexampleTerm which, const CounterexamplePair& pair, const Vector& x, double mu) {
  if (x.size() != pair.M) throw ShapeError("prox_counterexample: dimension mismatch");
  if (!(mu > 0.0)) throw DomainError("prox_counterexample: mu must be positive");
  const SparsePairMatrix& D = which == CounterexampleTerm::R1 ? pair.D1 : pair.D2;
  Vector shifted = mu * D.multiply(x);
  if (which == CounterexampleTerm::R1) shifted -= mu * pair.b1;
  Vector inner = prox_l1(shifted, 2.0 * mu * mu) - shifted;
  return x + D.multiply_transpose(inner) / (2.0 * mu);
}

/// R = weight * R_which.
inline ProxOperator counterexample_prox(CounterexampleTerm which, std::shared_ptr<const CounterexamplePair> pair,
                                        double weight = 1.0) {
  if (!(weight > 0.0)) throw DomainError("counterexample_prox: weight must be positive");
  std::string name = which == CounterexampleTerm::R1 ? "R1" : "R2";
  return ProxOperator(
      name,
      [which, pair, weight](const Vector& x, double mu) { return prox_counterexample(which, *pair, x, mu * weight); },
      [which, pair, weight](const Vector& x) { return weight * counterexample_value(which, *pair, x); });
}

// ---------------------------------------------------------------------------
// Anchored chain total variation: R1 + R2 = |sqrt2 w_1 - 1| + sum_j |w_j - w_{j+1}|
// ---------------------------------------------------------------------------

/// Exact argmin_z 1/2 ||z - x||^2 + anchor_weight |z_0 - anchor| + link_weight sum_j |z_j - z_{j+1}|
/// by dynamic programming over the chain. The derivative of each partial
/// cost is kept as a nondecreasing piecewise-affine function (knots may
/// carry jumps); eliminating a node clamps it to [-link, link].
inline Vector prox_anchored_chain(const Vector& x, double anchor_weight, double anchor, double link_weight) {
  const auto M = x.size();
  if (M == 0) return x;
  if (!(anchor_weight >= 0.0) || !(link_weight >= 0.0)) throw DomainError("prox_anchored_chain: negative weight");

  struct Knot {
    double pos;
    double da;
    double db;
  };
  std::deque<Knot> knots;
  double aL = 1.0;
  double bL = -x(0) - anchor_weight;
  double aR = 1.0;
  double bR = -x(0) + anchor_weight;
  if (anchor_weight > 0.0) knots.push_back({anchor, 0.0, 2.0 * anchor_weight});

  std::vector<double> lo(static_cast<std::size_t>(M), 0.0);
  std::vector<double> hi(static_cast<std::size_t>(M), 0.0);
  const double t_lo = -link_weight;
  const double t_hi = link_weight;

  for (Eigen::Index j = 0; j + 1 < M; ++j) {
    {  // left clamp at -link_weight
      double a = aL;
      double b = bL;
      double cut = 0.0;
      while (true) {
        if (knots.empty()) {
          cut = (t_lo - b) / a;
          break;
        }
        const Knot k = knots.front();
        if (a * k.pos + b >= t_lo) {
          cut = (t_lo - b) / a;
          break;
        }
        a += k.da;
        b += k.db;
        knots.pop_front();
        if (a * k.pos + b >= t_lo) {
          cut = k.pos;
          break;
        }
      }
      lo[static_cast<std::size_t>(j)] = cut;
      knots.push_front({cut, a, b - t_lo});
      aL = 0.0;
      bL = t_lo;
    }
    {  // right clamp at +link_weight
      double a = aR;
      double b = bR;
      double cut = 0.0;
      while (true) {
        if (knots.empty()) {
          cut = (t_hi - b) / a;
          break;
        }
        const Knot k = knots.back();
        if (a * k.pos + b <= t_hi) {
          cut = (t_hi - b) / a;
          break;
        }
        a -= k.da;
        b -= k.db;
        knots.pop_back();
        if (a * k.pos + b <= t_hi) {
          cut = k.pos;
          break;
        }
      }
      hi[static_cast<std::size_t>(j)] = cut;
      knots.push_back({cut, -a, t_hi - b});
      aR = 0.0;
      bR = t_hi;
    }
    aL += 1.0;
    bL -= x(j + 1);
    aR += 1.0;
    bR -= x(j + 1);
  }

  // Root of the last partial derivative.
  double a = aL;
  double b = bL;
  double root = 0.0;
  while (true) {
    if (knots.empty()) {
      root = -b / a;
      break;
    }
    const Knot k = knots.front();
    if (a * k.pos + b >= 0.0) {
      root = -b / a;
      break;
    }
    a += k.da;
    b += k.db;
    knots.pop_front();
    if (a * k.pos + b >= 0.0) {
      root = k.pos;
      break;
    }
  }

  Vector z(M);
  z(M - 1) = root;
  for (Eigen::Index j = M - 2; j >= 0; --j) {
    z(j) = std::clamp(z(j + 1), lo[static_cast<std::size_t>(j)], hi[static_cast<std::size_t>(j)]);
  }
  return z;
}

/// R = weight (R1 + R2), the common regularizer equivalent to giving agent 1
/// R1 and agent 2 R2 when weight = 1/2.
inline ProxOperator counterexample_sum_prox(std::shared_ptr<const CounterexamplePair> pair, double weight) {
  if (!(weight > 0.0)) throw DomainError("counterexample_sum_prox: weight must be positive");
  const double sqrt2 = std::sqrt(2.0);
  return ProxOperator(
      "R1+R2",
      [weight, sqrt2](const Vector& x, double mu) {
        return prox_anchored_chain(x, mu * weight * sqrt2, 1.0 / sqrt2, mu * weight);
      },
      [pair, weight](const Vector& x) {
        return weight * (counterexample_value(CounterexampleTerm::R1, *pair, x) +
                         counterexample_value(CounterexampleTerm::R2, *pair, x));
      });
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

struct BruteForceResult {
  Vector z;
  double residual = 0.0;
};

namespace detail {

// Unit directions: coordinates, coordinate pairs (+/-), and contiguous
// blocks of ones. These span the kink subspaces of separable and chain-type
// l1 terms in small dimension.
inline std::vector<Vector> probe_directions(Eigen::Index M) {
  std::vector<Vector> dirs;
  auto add = [&](Vector d) {
    d.normalize();
    dirs.push_back(d);
    dirs.push_back(-d);
  };
  for (Eigen::Index i = 0; i < M; ++i) add(Vector::Unit(M, i));
  for (Eigen::Index i = 0; i < M; ++i) {
    for (Eigen::Index j = i + 1; j < M; ++j) {
      add(Vector::Unit(M, i) + Vector::Unit(M, j));
      add(Vector::Unit(M, i) - Vector::Unit(M, j));
    }
  }
  for (Eigen::Index a = 0; a < M; ++a) {
    for (Eigen::Index b = a + 2; b < M; ++b) {
      Vector d = Vector::Zero(M);
      d.segment(a, b - a + 1).setOnes();
      add(d);
    }
  }
  return dirs;
}

}  // namespace detail

/// Minimizes R(z) + ||z - x||^2/(2 mu) for small M using only pointwise
/// evaluations of R: projected subgradient descent (finite-difference
/// subgradients, weighted averaging) followed by a compass-search polish.
/// The residual is the steepest finite-difference descent slope over the
/// probe directions; above 1e-4 the oracle reports failure.
inline BruteForceResult brute_force_prox(const std::function<double(const Vector&)>& R, const Vector& x, double mu,
                                         int iters = 20000) {
  const auto M = x.size();
  if (M < 1 || M > 8) throw InvalidSizeError("brute_force_prox: supports 1 <= M <= 8");
  if (!(mu > 0.0)) throw DomainError("brute_force_prox: mu must be positive");
  auto F = [&](const Vector& z) { return R(z) + (z - x).squaredNorm() / (2.0 * mu); };
  const double radius = 1e3 * (1.0 + x.cwiseAbs().maxCoeff());

  Vector z = x;
  Vector avg = x;
  double weight_sum = 0.0;
  for (int t = 0; t < iters; ++t) {
    Vector g = (z - x) / mu;
    for (Eigen::Index j = 0; j < M; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(z(j)));
      Vector zp = z;
      Vector zm = z;
      zp(j) += h;
      zm(j) -= h;
      g(j) += (R(zp) - R(zm)) / (2.0 * h);
    }
    z -= (2.0 * mu / (t + 2.0)) * g;
    z = z.array().max(x.array() - radius).min(x.array() + radius).matrix();  // projection onto the search box
    const double w = t + 1.0;
    weight_sum += w;
    avg += (w / weight_sum) * (z - avg);
  }

  const auto dirs = detail::probe_directions(M);
  Vector best = avg;
  double fbest = F(best);
  for (double step = 1e-2 * (1.0 + best.cwiseAbs().maxCoeff()); step > 1e-14; step *= 0.5) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (const auto& d : dirs) {
        Vector cand = best + step * d;
        double fc = F(cand);
        if (fc < fbest) {
          best = std::move(cand);
          fbest = fc;
          moved = true;
        }
      }
    }
  }

  double residual = 0.0;
  const double h = 1e-7;
  for (const auto& d : dirs) {
    double slope = (F(best + h * d) - fbest) / h;
    if (!std::isfinite(slope)) slope = -INFINITY;
    residual = std::max(residual, -slope);
  }
  if (!best.allFinite() || !std::isfinite(fbest)) {
    throw OracleFailureError("brute_force_prox: search ended at a non-finite point");
  }
  if (!(residual <= 1e-4)) {
    throw OracleFailureError("brute_force_prox: optimality residual " + std::to_string(residual) + " above 1e-4");
  }
  return {best, residual};
}

}  // namespace puda
