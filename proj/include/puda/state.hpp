#pragma once

#include "puda/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace puda {

/// Per-agent buffers of one synchronous network iteration. Before step i,
/// W holds w_{i-1} and W_prev holds w_{i-2}; `iter` counts completed steps.
struct BlockIterate {
  Block W;         ///< current iterates
  Block W_prev;    ///< previous iterates
  Block S;         ///< dual surrogate s = B y (or the DLM/DL-ADMM dual)
  Block Z;         ///< primal-descent output
  Block X;         ///< combination / tracking buffer
  Block Psi_prev;  ///< cached adapt step psi_{i-1}
  Block G_prev;    ///< gradients at W_prev
  long iter = 0;

  /// w_{-1} = W0; every other buffer (including y_{-1}) starts at zero.
  static BlockIterate initial(const Block& W0) {
    BlockIterate s;
    s.W = W0;
    s.W_prev = Block::Zero(W0.rows(), W0.cols());
    s.S = s.W_prev;
    s.Z = s.W_prev;
    s.X = s.W_prev;
    s.Psi_prev = s.W_prev;
    s.G_prev = s.W_prev;
    return s;
  }

  Eigen::Index K() const { return W.rows(); }
  Eigen::Index M() const { return W.cols(); }
};

struct RunRow {
  long iter = 0;
  long comm_rounds = 0;
  double rel_sq_error = 0.0;
  std::optional<double> r_primal;
  std::optional<double> r_dual;
  std::optional<double> r_prox;
};

struct RunRecord {
  std::string algorithm;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;
  bool diverged = false;
  std::string message;
  std::vector<RunRow> rows;
  BlockIterate final_state;
};

}  // namespace puda
