#pragma once

#include "puda/analysis.hpp"
#include "puda/costs.hpp"
#include "puda/netgraph.hpp"
#include "puda/prox.hpp"
#include "puda/state.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace puda {

namespace detail {

inline Block checked_grads(const SmoothCostSet& costs, const Block& W, long iter) {
  Block G = costs.grads(W);
  if (!G.allFinite()) throw DivergenceError("non-finite gradient at iteration " + std::to_string(iter), iter);
  return G;
}

inline void advance(BlockIterate& s, Block W_new, Block G) {
  s.W_prev = std::move(s.W);
  s.G_prev = std::move(G);
  s.W = std::move(W_new);
  ++s.iter;
}

inline void check_shapes(const BlockIterate& s, const SmoothCostSet& costs) {
  if (s.W.rows() != costs.K() || s.W.cols() != costs.M()) throw ShapeError("iterate shape does not match costs");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// General recursion
// ---------------------------------------------------------------------------

/// One step of the proximal primal-dual recursion in dual-surrogate form:
///   Z <- (I - C) W - mu grad(W) - S
///   S <- S + B^2 Z
///   W <- prox_{mu R}(A_bar Z), row by row
/// With the identity prox this is the smooth recursion.
inline BlockIterate puda_step(BlockIterate s, const ConsensusTriple& t, const SmoothCostSet& costs,
                              const ProxOperator& prox, double mu) {
  detail::check_shapes(s, costs);
  Block G = detail::checked_grads(costs, s.W, s.iter);
  s.Z = s.W - t.C * s.W - mu * G - s.S;
  s.S += t.B_sq * s.Z;
  s.X = t.A_bar * s.Z;
  Block W_new = apply_rowwise(prox, s.X, mu);
  detail::advance(s, std::move(W_new), std::move(G));
  return s;
}

// ---------------------------------------------------------------------------
// Agent-level listings
// ---------------------------------------------------------------------------

enum class AgentVariant { ProxED, ProxATC1, ProxATC2 };

inline std::string to_string(AgentVariant v) {
  switch (v) {
    case AgentVariant::ProxED: return "ProxED";
    case AgentVariant::ProxATC1: return "ProxATC1";
    case AgentVariant::ProxATC2: return "ProxATC2";
  }
  return "unknown";
}

inline int comm_rounds_per_iter(AgentVariant v) { return v == AgentVariant::ProxED ? 1 : 2; }

/// Per-agent updates with the neighbour sums written as products with A.
///
/// ProxED (A_bar = (I + A)/2):
///   psi = w - mu grad(w);  z = x + psi - psi_prev;  x = A_bar z;  w = prox(x)
/// ProxATC1:
///   psi = w - mu grad(w);  z = 2x - A(x - psi + psi_prev);  x = A z;  w = prox(x)
/// ProxATC2:
///   psi = 2x - mu(grad(w) - grad(w_prev));  z = psi - A(x - w + w_prev);  x = A z;  w = prox(x)
///
/// x, psi, w_{-2} and grad(w_{-2}) all start at zero. For ProxED the state's
/// S is kept equal to psi - x, which is the dual surrogate of the equivalent
/// primal-dual recursion.
inline BlockIterate agent_form_step(AgentVariant variant, BlockIterate s, const SmoothCostSet& costs,
                                    const ProxOperator& prox, const Matrix& A, double mu) {
  detail::check_shapes(s, costs);
  if (A.rows() != s.K() || A.cols() != s.K()) throw ShapeError("agent_form_step: combination matrix shape");
  Block G = detail::checked_grads(costs, s.W, s.iter);
  switch (variant) {
    case AgentVariant::ProxED: {
      Matrix A_bar = shift_positive(A);
      Block psi = s.W - mu * G;
      s.Z = s.X + psi - s.Psi_prev;
      s.X = A_bar * s.Z;
      s.S = psi - s.X;
      s.Psi_prev = std::move(psi);
      break;
    }
    case AgentVariant::ProxATC1: {
      Block psi = s.W - mu * G;
      s.Z = 2.0 * s.X - A * (s.X - psi + s.Psi_prev);
      s.X = A * s.Z;
      s.Psi_prev = std::move(psi);
      break;
    }
    case AgentVariant::ProxATC2: {
      Block psi = 2.0 * s.X - mu * (G - s.G_prev);
      s.Z = psi - A * (s.X - s.W + s.W_prev);
      s.X = A * s.Z;
      s.Psi_prev = std::move(psi);
      break;
    }
  }
  Block W_new = apply_rowwise(prox, s.X, mu);
  detail::advance(s, std::move(W_new), std::move(G));
  return s;
}

// ---------------------------------------------------------------------------
// Smooth two-step recursions
// ---------------------------------------------------------------------------

enum class EliminatedVariant { ExactDiffusion, AugDGM, ATCTracking, NonATC, DIGing, EXTRA, DLM };

inline std::string to_string(EliminatedVariant v) {
  switch (v) {
    case EliminatedVariant::ExactDiffusion: return "ExactDiffusion";
    case EliminatedVariant::AugDGM: return "AugDGM";
    case EliminatedVariant::ATCTracking: return "ATCTracking";
    case EliminatedVariant::NonATC: return "NonATC";
    case EliminatedVariant::DIGing: return "DIGing";
    case EliminatedVariant::EXTRA: return "EXTRA";
    case EliminatedVariant::DLM: return "DLM";
  }
  return "unknown";
}

/// Eliminated: the w-only two-step recursion. TwoVariable: the
/// gradient-tracking (AugDGM, ATCTracking, DIGing) or primal-dual (DLM) form.
enum class StepForm { Eliminated, TwoVariable };

namespace detail {

inline const Matrix& network_of(const ConsensusTriple& t, const char* who) {
  if (!t.network) throw DomainError(std::string(who) + " needs the network combination matrix");
  return *t.network;
}

}  // namespace detail

/// Two-step recursions obtained by eliminating the dual variable:
///   ExactDiffusion  w = A_bar(2w1 - w2 - mu dG)                 (also NIDS via its A_bar)
///   AugDGM          w = A(2w1 - A w2 - mu A dG)
///   ATCTracking     w = A(2w1 - A w2 - mu dG)
///   NonATC          w = (2I - C - B^2) w1 - (I - C) w2 - mu dG
///   DIGing          w = 2A w1 - A^2 w2 - mu dG
///   EXTRA           w = (I + A)/2 (2w1 - w2) - mu dG
///   DLM             w = (I - mu c L)(2w1 - w2) - mu dG
/// with w1 = w_{i-1}, w2 = w_{i-2}, dG = grad(w1) - grad(w2). Iteration 0 is
/// the primal-dual step with y_{-1} = 0. The tracking forms start from
/// x_0 chosen so that w_1 agrees with the eliminated recursion; this keeps
/// sum_k x_{k,0} equal to sum_k grad J_k(w_{k,0}).
inline BlockIterate eliminated_step(EliminatedVariant variant, BlockIterate s, const SmoothCostSet& costs,
                                    const ConsensusTriple& t, double mu, StepForm form = StepForm::Eliminated) {
  detail::check_shapes(s, costs);
  const auto K = s.K();
  if (t.A_bar.rows() != K) throw ShapeError("eliminated_step: triple shape");
  const Matrix I = Matrix::Identity(K, K);
  Block G = detail::checked_grads(costs, s.W, s.iter);
  Block W_new;

  if (form == StepForm::TwoVariable) {
    switch (variant) {
      case EliminatedVariant::AugDGM:
      case EliminatedVariant::ATCTracking:
      case EliminatedVariant::DIGing: {
        const Matrix& A = detail::network_of(t, "tracking form");
        if (s.iter == 0) {
          W_new = t.A_bar * Block(s.W - t.C * s.W - mu * G);
          break;
        }
        if (s.iter == 1) {
          Block dG = G - s.G_prev;
          if (variant == EliminatedVariant::AugDGM) {
            s.X = A * dG + (A * s.W_prev - s.W) / mu;
          } else if (variant == EliminatedVariant::ATCTracking) {
            s.X = dG + (A * s.W_prev - s.W) / mu;
          } else {
            s.X = dG + (A * A * s.W_prev - A * s.W) / mu;
          }
        } else if (variant == EliminatedVariant::AugDGM) {
          s.X = A * Block(s.X + G - s.G_prev);
        } else {
          s.X = A * s.X + G - s.G_prev;
        }
        if (variant == EliminatedVariant::DIGing) {
          W_new = A * s.W - mu * s.X;
        } else {
          W_new = A * Block(s.W - mu * s.X);
        }
        break;
      }
      case EliminatedVariant::DLM: {
        Matrix cL = t.C / mu;
        W_new = s.W - mu * (G + cL * s.W + s.S);
        s.S += cL * W_new;
        break;
      }
      default:
        throw UnsupportedError("eliminated_step: no two-variable form for " + to_string(variant));
    }
    detail::advance(s, std::move(W_new), std::move(G));
    return s;
  }

  if (s.iter == 0) {
    W_new = t.A_bar * Block(s.W - t.C * s.W - mu * G);
    detail::advance(s, std::move(W_new), std::move(G));
    return s;
  }

  Block dG = G - s.G_prev;
  switch (variant) {
    case EliminatedVariant::ExactDiffusion:
      W_new = t.A_bar * Block(2.0 * s.W - s.W_prev - mu * dG);
      break;
    case EliminatedVariant::AugDGM: {
      const Matrix& A = detail::network_of(t, "AugDGM");
      W_new = A * Block(2.0 * s.W - A * s.W_prev - mu * (A * dG));
      break;
    }
    case EliminatedVariant::ATCTracking: {
      const Matrix& A = detail::network_of(t, "ATCTracking");
      W_new = A * Block(2.0 * s.W - A * s.W_prev - mu * dG);
      break;
    }
    case EliminatedVariant::NonATC:
      W_new = (2.0 * I - t.C - t.B_sq) * s.W - (I - t.C) * s.W_prev - mu * dG;
      break;
    case EliminatedVariant::DIGing: {
      const Matrix& A = detail::network_of(t, "DIGing");
      W_new = 2.0 * (A * s.W) - (A * A) * s.W_prev - mu * dG;
      break;
    }
    case EliminatedVariant::EXTRA: {
      const Matrix& A = detail::network_of(t, "EXTRA");
      W_new = shift_positive(A) * Block(2.0 * s.W - s.W_prev) - mu * dG;
      break;
    }
    case EliminatedVariant::DLM:
      W_new = (I - t.C) * Block(2.0 * s.W - s.W_prev) - mu * dG;
      break;
  }
  detail::advance(s, std::move(W_new), std::move(G));
  return s;
}

// ---------------------------------------------------------------------------
// Agent-specific regularizers
// ---------------------------------------------------------------------------

enum class SeparateVariant { PGEXTRA, DLADMM };

inline std::string to_string(SeparateVariant v) { return v == SeparateVariant::PGEXTRA ? "PGEXTRA" : "DLADMM"; }

struct SeparateOperands {
  Matrix A;          ///< PG-EXTRA combination matrix
  double c = 0.0;    ///< DL-ADMM penalty
  Matrix laplacian;  ///< DL-ADMM graph Laplacian
};

/// PG-EXTRA (W~ = (I + A)/2):
///   x_0 = A w_{-1} - mu grad(w_{-1})
///   x_i = A w_{i-1} + x_{i-1} - W~ w_{i-2} - mu(grad(w_{i-1}) - grad(w_{i-2}))
///   w_i = prox_{mu R_k}(x_i) for each agent k
/// DL-ADMM:
///   w_i = prox_{mu R_k}(w_{i-1} - mu(grad(w_{i-1}) + c L w_{i-1} + y_{i-1})),  y_i = y_{i-1} + c L w_i
inline BlockIterate separate_prox_step(SeparateVariant variant, BlockIterate s, const SmoothCostSet& costs,
                                       const std::vector<ProxOperator>& agent_prox, const SeparateOperands& ops,
                                       double mu) {
  detail::check_shapes(s, costs);
  if (agent_prox.size() != static_cast<std::size_t>(s.K())) {
    throw ShapeError("separate_prox_step: need one prox operator per agent");
  }
  Block G = detail::checked_grads(costs, s.W, s.iter);
  Block pre;
  if (variant == SeparateVariant::PGEXTRA) {
    if (ops.A.rows() != s.K()) throw ShapeError("separate_prox_step: combination matrix shape");
    if (s.iter == 0) {
      pre = ops.A * s.W - mu * G;
    } else {
      pre = ops.A * s.W + s.X - shift_positive(ops.A) * s.W_prev - mu * (G - s.G_prev);
    }
    s.X = pre;
  } else {
    if (ops.laplacian.rows() != s.K()) throw ShapeError("separate_prox_step: Laplacian shape");
    pre = s.W - mu * (G + ops.c * (ops.laplacian * s.W) + s.S);
  }
  Block W_new(pre.rows(), pre.cols());
  for (Eigen::Index k = 0; k < pre.rows(); ++k) {
    W_new.row(k) = agent_prox[static_cast<std::size_t>(k)].apply(pre.row(k).transpose(), mu).transpose();
  }
  if (variant == SeparateVariant::DLADMM) s.S += ops.c * (ops.laplacian * W_new);
  detail::advance(s, std::move(W_new), std::move(G));
  return s;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

enum class Family { PudaGeneral, ProxED, ProxATC1, ProxATC2, EliminatedUDA, NonATC, PGEXTRA, DLADMM };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::PudaGeneral: return "PUDA";
    case Family::ProxED: return "ProxED";
    case Family::ProxATC1: return "ProxATC1";
    case Family::ProxATC2: return "ProxATC2";
    case Family::EliminatedUDA: return "EliminatedUDA";
    case Family::NonATC: return "NonATC";
    case Family::PGEXTRA: return "PGEXTRA";
    case Family::DLADMM: return "DLADMM";
  }
  return "unknown";
}

struct AlgorithmSpec {
  std::string name;
  Family family = Family::PudaGeneral;
  ConsensusTriple triple;  ///< PudaGeneral, EliminatedUDA, NonATC
  Matrix A;                ///< agent forms and PG-EXTRA
  SeparateOperands separate;
  EliminatedVariant variant = EliminatedVariant::ExactDiffusion;
  StepForm form = StepForm::Eliminated;
  double mu = 0.0;
  ProxOperator prox;                    ///< common regularizer
  std::vector<ProxOperator> agent_prox;  ///< PG-EXTRA / DL-ADMM
  int comm_rounds_per_iter = 1;
  std::optional<Block> init;  ///< w_{-1}; zeros when absent
};

struct RunOptions {
  bool record_residuals = true;
  double divergence_threshold = 1e12;
  std::uint64_t seed = 0;
};

inline double rel_sq_error(const Block& W, const Vector& w_star) {
  double denom = w_star.squaredNorm();
  double num = (W.rowwise() - w_star.transpose()).squaredNorm();
  return denom > 0.0 ? num / denom : num;
}

inline BlockIterate step(const AlgorithmSpec& spec, BlockIterate s, const SmoothCostSet& costs) {
  switch (spec.family) {
    case Family::PudaGeneral: return puda_step(std::move(s), spec.triple, costs, spec.prox, spec.mu);
    case Family::ProxED: return agent_form_step(AgentVariant::ProxED, std::move(s), costs, spec.prox, spec.A, spec.mu);
    case Family::ProxATC1:
      return agent_form_step(AgentVariant::ProxATC1, std::move(s), costs, spec.prox, spec.A, spec.mu);
    case Family::ProxATC2:
      return agent_form_step(AgentVariant::ProxATC2, std::move(s), costs, spec.prox, spec.A, spec.mu);
    case Family::EliminatedUDA:
      return eliminated_step(spec.variant, std::move(s), costs, spec.triple, spec.mu, spec.form);
    case Family::NonATC:
      return eliminated_step(EliminatedVariant::NonATC, std::move(s), costs, spec.triple, spec.mu);
    case Family::PGEXTRA:
      return separate_prox_step(SeparateVariant::PGEXTRA, std::move(s), costs, spec.agent_prox, spec.separate, spec.mu);
    case Family::DLADMM:
      return separate_prox_step(SeparateVariant::DLADMM, std::move(s), costs, spec.agent_prox, spec.separate, spec.mu);
  }
  throw UnsupportedError("unknown family");
}

/// Runs `iters` steps from w_{-1} and records a row every `record_every`
/// steps (row 0 is the initial point). Residual columns are filled for the
/// general recursion and ProxED, whose state carries the primal-dual
/// variables directly.
inline RunRecord run(const AlgorithmSpec& spec, const SmoothCostSet& costs, const Vector& w_star, long iters,
                     long record_every = 1, const RunOptions& opt = {}) {
  if (iters < 1) throw InvalidSizeError("run: iters must be at least 1");
  if (record_every < 1) throw InvalidSizeError("run: record_every must be at least 1");
  if (!(spec.mu > 0.0)) throw DomainError("run: mu must be positive");
  if (spec.comm_rounds_per_iter < 1 || spec.comm_rounds_per_iter > 2) {
    throw DomainError("run: comm_rounds_per_iter must be 1 or 2");
  }
  if (w_star.size() != costs.M()) throw ShapeError("run: reference dimension mismatch");

  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.algorithm = spec.name.empty() ? to_string(spec.family) : spec.name;
  rec.seed = opt.seed;
  BlockIterate s = BlockIterate::initial(spec.init ? *spec.init : Block::Zero(costs.K(), costs.M()));

  std::optional<ConsensusTriple> residual_triple;
  if (opt.record_residuals) {
    if (spec.family == Family::PudaGeneral) residual_triple = spec.triple;
    if (spec.family == Family::ProxED) residual_triple = table1_matrices(AlgorithmId::ExactDiffusion, spec.A);
  }

  auto record = [&](const BlockIterate& st) {
    RunRow row;
    row.iter = st.iter;
    row.comm_rounds = st.iter * spec.comm_rounds_per_iter;
    row.rel_sq_error = rel_sq_error(st.W, w_star);
    if (residual_triple && st.iter > 0) {
      auto r = fixed_point_residuals(st, costs, spec.prox, *residual_triple, spec.mu);
      row.r_primal = r.r_primal;
      row.r_dual = r.r_dual;
      row.r_prox = r.r_prox;
    }
    rec.rows.push_back(row);
    return row.rel_sq_error;
  };

  record(s);
  try {
    for (long i = 1; i <= iters; ++i) {
      s = step(spec, std::move(s), costs);
      double err = i % record_every == 0 ? record(s) : rel_sq_error(s.W, w_star);
      if (!std::isfinite(err) || err > opt.divergence_threshold) {
        rec.diverged = true;
        rec.message = "relative squared error " + std::to_string(err) + " at iteration " + std::to_string(i);
        break;
      }
    }
  } catch (const DivergenceError& e) {
    rec.diverged = true;
    rec.message = e.what();
  }
  rec.final_state = std::move(s);
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace puda
