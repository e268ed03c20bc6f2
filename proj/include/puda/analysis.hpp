#pragma once

#include "puda/costs.hpp"
#include "puda/netgraph.hpp"
#include "puda/prox.hpp"
#include "puda/state.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

namespace puda {

// ---------------------------------------------------------------------------
// Theoretical rates
// ---------------------------------------------------------------------------

/// Thm1: the adapt-then-combine family (A_bar general). Thm4: A_bar = I.
enum class RateTheorem { Thm1, Thm4 };

struct RateReport {
  RateTheorem theorem = RateTheorem::Thm1;
  double gamma = 1.0;
  double gamma_primal = 1.0;
  double gamma_dual = 1.0;
  double mu_bound = 0.0;
  bool feasible = false;
};

/// gamma = max(gamma_primal, 1 - sigma_min(B^2)) with
///   Thm1: gamma_primal = 1 - mu nu (2 - sigma_max(C) - mu delta),     mu < (2 - sigma_max(C))/delta
///   Thm4: gamma_primal = 1 - mu nu (2 - mu delta/(1 - sigma_max(C))), mu < 2(1 - sigma_max(C))/delta
inline RateReport theoretical_rate(RateTheorem theorem, double mu, double nu, double delta, double sigma_max_C,
                                   double sigma_min_Bsq) {
  if (!(mu > 0.0)) throw DomainError("theoretical_rate: mu must be positive");
  if (!(nu > 0.0 && nu <= delta)) throw DomainError("theoretical_rate: need 0 < nu <= delta");
  if (!(sigma_min_Bsq > 0.0 && sigma_min_Bsq <= 1.0)) throw DomainError("theoretical_rate: sigma_min(B^2) outside (0,1]");
  const double c_cap = theorem == RateTheorem::Thm1 ? 2.0 : 1.0;
  if (!(sigma_max_C >= 0.0 && sigma_max_C < c_cap)) throw DomainError("theoretical_rate: sigma_max(C) out of range");

  RateReport r;
  r.theorem = theorem;
  if (theorem == RateTheorem::Thm1) {
    r.mu_bound = (2.0 - sigma_max_C) / delta;
    r.gamma_primal = 1.0 - mu * nu * (2.0 - sigma_max_C - mu * delta);
  } else {
    r.mu_bound = 2.0 * (1.0 - sigma_max_C) / delta;
    r.gamma_primal = 1.0 - mu * nu * (2.0 - mu * delta / (1.0 - sigma_max_C));
  }
  r.gamma_dual = 1.0 - sigma_min_Bsq;
  r.gamma = std::max(r.gamma_primal, r.gamma_dual);
  r.feasible = mu < r.mu_bound;
  return r;
}

/// Rate for a validated triple; non-ATC rows use Thm4.
inline RateReport theoretical_rate(const ConsensusTriple& t, const SpectralReport& spectral, double mu, double nu,
                                   double delta) {
  auto theorem = is_non_atc(t.algorithm_id) ? RateTheorem::Thm4 : RateTheorem::Thm1;
  return theoretical_rate(theorem, mu, nu, delta, std::max(0.0, spectral.sigma_max_C), spectral.sigma_min_Bsq);
}

// ---------------------------------------------------------------------------
// Fixed-point residuals
// ---------------------------------------------------------------------------

struct Residuals {
  double r_primal = 0.0;
  double r_dual = 0.0;
  double r_prox = 0.0;
};

inline Block apply_rowwise(const ProxOperator& prox, const Block& X, double mu) {
  if (prox.is_identity()) return X;
  Block out(X.rows(), X.cols());
  for (Eigen::Index k = 0; k < X.rows(); ++k) out.row(k) = prox.apply(X.row(k).transpose(), mu).transpose();
  return out;
}

/// Residuals of z = w - mu grad(w) - s, B^2 z = 0, w = prox(A_bar z), each
/// as a Frobenius norm divided by sqrt(KM).
inline Residuals fixed_point_residuals(const BlockIterate& state, const SmoothCostSet& costs, const ProxOperator& prox,
                                       const ConsensusTriple& t, double mu) {
  const double scale = std::sqrt(static_cast<double>(state.W.size()));
  Block G = costs.grads(state.W);
  Residuals r;
  r.r_primal = (state.Z - (state.W - mu * G - state.S)).norm() / scale;
  r.r_dual = Block(t.B_sq * state.Z).norm() / scale;
  r.r_prox = (state.W - apply_rowwise(prox, Block(t.A_bar * state.Z), mu)).norm() / scale;
  return r;
}

// ---------------------------------------------------------------------------
// Centralized reference
// ---------------------------------------------------------------------------

struct ReferenceSolution {
  Vector w;
  double mapping_norm = 0.0;
  long iterations = 0;
  bool converged = false;
};

/// Proximal gradient on (1/K) sum_k J_k + R with step 1/delta until the
/// prox-gradient mapping norm delta ||w - w+|| drops to `tol`. Stops early
/// (flagged, with a warning) at the iteration cap or when the mapping norm
/// stagnates at rounding level.
inline ReferenceSolution centralized_reference(const SmoothCostSet& costs, const ProxOperator& prox, double tol = 1e-14,
                                               long max_iter = 1000000, std::ostream* warn = &std::cerr) {
  if (!(tol > 0.0)) throw DomainError("centralized_reference: tol must be positive");
  const double step = 1.0 / costs.delta();
  ReferenceSolution out;
  out.w = Vector::Zero(costs.M());
  double best = std::numeric_limits<double>::infinity();
  long since_best = 0;
  for (long it = 0; it < max_iter; ++it) {
    Vector next = prox.apply(out.w - step * costs.average_grad(out.w), step);
    out.mapping_norm = (out.w - next).norm() / step;
    out.w = std::move(next);
    out.iterations = it + 1;
    if (out.mapping_norm <= tol) {
      out.converged = true;
      return out;
    }
    if (out.mapping_norm < 0.5 * best) {
      best = out.mapping_norm;
      since_best = 0;
    } else if (++since_best > 20000) {
      break;
    }
  }
  if (warn) {
    *warn << "warning: centralized reference stopped at mapping norm " << out.mapping_norm << " after "
          << out.iterations << " iterations (tol " << tol << ")\n";
  }
  return out;
}

/// The centralized proximal-gradient sequence w_{i} = prox_{mu R}(w_{i-1} - mu avg_grad(w_{i-1})).
inline std::vector<Vector> centralized_trajectory(const SmoothCostSet& costs, const ProxOperator& prox,
                                                  const Vector& w0, double mu, long iters) {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(iters));
  Vector w = w0;
  for (long i = 0; i < iters; ++i) {
    w = prox.apply(w - mu * costs.average_grad(w), mu);
    out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decay classification
// ---------------------------------------------------------------------------

enum class DecayClass { Linear, Sublinear, Inconclusive };

inline std::string to_string(DecayClass c) {
  switch (c) {
    case DecayClass::Linear: return "linear";
    case DecayClass::Sublinear: return "sublinear";
    case DecayClass::Inconclusive: return "inconclusive";
  }
  return "unknown";
}

struct FitVerdict {
  DecayClass classification = DecayClass::Inconclusive;
  std::vector<double> geometric_ratio_windows;  ///< per-iteration ratio, one per window
  double loglog_slope = 0.0;
  double semilog_slope = 0.0;
  double loglog_residual = 0.0;   ///< RMS residual of log e ~ a + b log i
  double semilog_residual = 0.0;  ///< RMS residual of log e ~ a + b i
  bool truncated = false;         ///< tail cut at the first error at or below the floor
  std::size_t tail_rows = 0;
};

struct DecayOptions {
  double tail_fraction = 0.5;
  int n_windows = 5;
  /// Errors at or below this are treated as having hit the precision floor.
  double floor = 1e-20;
  /// Linear: every window ratio at most 1 - linear_margin.
  double linear_margin = 1e-4;
  /// Sublinear: final window ratio at least this.
  double sublinear_final_ratio = 0.999;
  /// Allowed decrease between consecutive window ratios for an upward drift.
  double drift_slack = 1e-6;
};

namespace detail {

struct LineFit {
  double slope = 0.0;
  double rms = 0.0;
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - (my + f.slope * (x[i] - mx));
    ss += r * r;
  }
  f.rms = std::sqrt(ss / n);
  return f;
}

}  // namespace detail

/// Per-iteration geometric ratio exp(d log e / d iter) over `n_windows`
/// consecutive windows of rows[begin, end).
inline std::vector<double> geometric_ratios(const std::vector<RunRow>& rows, std::size_t begin, std::size_t end,
                                            int n_windows) {
  std::vector<double> out;
  if (end <= begin + 1 || n_windows < 1) return out;
  const std::size_t span = end - 1 - begin;
  for (int w = 0; w < n_windows; ++w) {
    std::size_t a = begin + span * static_cast<std::size_t>(w) / static_cast<std::size_t>(n_windows);
    std::size_t b = begin + span * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(n_windows);
    if (b <= a) continue;
    double di = static_cast<double>(rows[b].iter - rows[a].iter);
    out.push_back(std::exp((std::log(rows[b].rel_sq_error) - std::log(rows[a].rel_sq_error)) / di));
  }
  return out;
}

/// Ratio of consecutive fixed-length windows of iterations, starting after
/// `burn_in` iterations and stopping at the first error below `floor`.
inline std::vector<double> windowed_ratios(const std::vector<RunRow>& rows, long burn_in, long window, double floor) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start < rows.size() && rows[start].iter < burn_in) ++start;
  for (std::size_t a = start; a < rows.size(); ) {
    std::size_t b = a;
    while (b < rows.size() && rows[b].iter - rows[a].iter < window) ++b;
    if (b >= rows.size() || rows[b].rel_sq_error <= floor || rows[a].rel_sq_error <= floor) break;
    double di = static_cast<double>(rows[b].iter - rows[a].iter);
    out.push_back(std::exp((std::log(rows[b].rel_sq_error) - std::log(rows[a].rel_sq_error)) / di));
    a = b;
  }
  return out;
}

/// Linear when window ratios stay below 1 and a straight line in (i, log e)
/// fits better than one in (log i, log e); sublinear when the ratios drift
/// up toward 1 and the log-log line fits better; inconclusive otherwise.
inline FitVerdict classify_decay(const RunRecord& record, const DecayOptions& opt = {}) {
  const auto& rows = record.rows;
  if (rows.size() < 100) throw InvalidSizeError("classify_decay: need at least 100 rows");
  if (!(opt.tail_fraction > 0.0 && opt.tail_fraction <= 1.0)) throw DomainError("classify_decay: bad tail_fraction");

  FitVerdict v;
  std::size_t usable = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!(rows[i].rel_sq_error > opt.floor) || !std::isfinite(rows[i].rel_sq_error)) {
      usable = i;
      v.truncated = true;
      break;
    }
  }
  std::size_t begin = usable - static_cast<std::size_t>(opt.tail_fraction * static_cast<double>(usable));
  // log i needs i >= 1
  while (begin < usable && rows[begin].iter < 1) ++begin;
  v.tail_rows = usable > begin ? usable - begin : 0;
  if (v.tail_rows < static_cast<std::size_t>(2 * opt.n_windows + 1)) return v;

  std::vector<double> it;
  std::vector<double> logi;
  std::vector<double> loge;
  for (std::size_t i = begin; i < usable; ++i) {
    it.push_back(static_cast<double>(rows[i].iter));
    logi.push_back(std::log(static_cast<double>(rows[i].iter)));
    loge.push_back(std::log(rows[i].rel_sq_error));
  }
  auto semilog = detail::least_squares(it, loge);
  auto loglog = detail::least_squares(logi, loge);
  v.semilog_slope = semilog.slope;
  v.semilog_residual = semilog.rms;
  v.loglog_slope = loglog.slope;
  v.loglog_residual = loglog.rms;
  v.geometric_ratio_windows = geometric_ratios(rows, begin, usable, opt.n_windows);

  const auto& r = v.geometric_ratio_windows;
  if (r.empty()) return v;
  bool all_contracting = std::all_of(r.begin(), r.end(), [&](double x) { return x <= 1.0 - opt.linear_margin; });
  bool drifting_up = true;
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (r[i] < r[i - 1] - opt.drift_slack) drifting_up = false;
  }
  bool near_one = r.back() >= opt.sublinear_final_ratio;

  if (all_contracting && semilog.rms <= loglog.rms) {
    v.classification = DecayClass::Linear;
  } else if (drifting_up && near_one && loglog.rms < semilog.rms) {
    v.classification = DecayClass::Sublinear;
  }
  return v;
}

}  // namespace puda
