#pragma once

#include "puda/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace puda {

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

enum class GraphKind { Ring, Grid, Complete, RandomConnected };

inline std::string to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::Ring: return "ring";
    case GraphKind::Grid: return "grid";
    case GraphKind::Complete: return "complete";
    case GraphKind::RandomConnected: return "random_connected";
  }
  return "unknown";
}

inline GraphKind parse_graph_kind(const std::string& name) {
  if (name == "ring") return GraphKind::Ring;
  if (name == "grid") return GraphKind::Grid;
  if (name == "complete") return GraphKind::Complete;
  if (name == "random_connected") return GraphKind::RandomConnected;
  throw UnsupportedError("unknown graph kind '" + name + "'");
}

/// Undirected simple graph over agents 0..K-1. Edges are stored once with
/// s < k, sorted lexicographically.
struct Graph {
  int K = 0;
  std::vector<std::pair<int, int>> edges;
  std::uint64_t seed = 0;

  std::vector<int> degrees() const {
    std::vector<int> d(static_cast<std::size_t>(K), 0);
    for (auto [s, k] : edges) {
      ++d[static_cast<std::size_t>(s)];
      ++d[static_cast<std::size_t>(k)];
    }
    return d;
  }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(K));
    for (auto [s, k] : edges) {
      adj[static_cast<std::size_t>(s)].push_back(k);
      adj[static_cast<std::size_t>(k)].push_back(s);
    }
    return adj;
  }

  bool has_edge(int s, int k) const {
    if (s > k) std::swap(s, k);
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(s, k));
  }
};

namespace detail {

inline void normalize_edges(Graph& g) {
  for (auto& e : g.edges) {
    if (e.first > e.second) std::swap(e.first, e.second);
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
}

// Decodes a uniformly random Pruefer sequence into a labelled spanning tree.
inline std::vector<std::pair<int, int>> random_spanning_tree(int K, std::mt19937_64& rng) {
  std::vector<std::pair<int, int>> tree;
  if (K == 2) {
    tree.emplace_back(0, 1);
    return tree;
  }
  std::uniform_int_distribution<int> pick(0, K - 1);
  std::vector<int> code(static_cast<std::size_t>(K - 2));
  for (auto& c : code) c = pick(rng);

  std::vector<int> degree(static_cast<std::size_t>(K), 1);
  for (int c : code) ++degree[static_cast<std::size_t>(c)];

  std::priority_queue<int, std::vector<int>, std::greater<>> leaves;
  for (int v = 0; v < K; ++v) {
    if (degree[static_cast<std::size_t>(v)] == 1) leaves.push(v);
  }
  for (int c : code) {
    int leaf = leaves.top();
    leaves.pop();
    tree.emplace_back(leaf, c);
    if (--degree[static_cast<std::size_t>(c)] == 1) leaves.push(c);
  }
  int u = leaves.top();
  leaves.pop();
  int v = leaves.top();
  tree.emplace_back(u, v);
  return tree;
}

}  // namespace detail

/// True when every agent is reachable from agent 0.
inline bool is_connected(const Graph& g) {
  if (g.K <= 0) return false;
  auto adj = g.adjacency();
  std::vector<char> seen(static_cast<std::size_t>(g.K), 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  int count = 1;
  while (!frontier.empty()) {
    int v = frontier.front();
    frontier.pop();
    for (int u : adj[static_cast<std::size_t>(v)]) {
      if (!seen[static_cast<std::size_t>(u)]) {
        seen[static_cast<std::size_t>(u)] = 1;
        ++count;
        frontier.push(u);
      }
    }
  }
  return count == g.K;
}

/// Builds a connected graph. `random_connected` draws a uniform random
/// spanning tree and then adds each remaining pair independently with
/// probability `extra_edge_prob`.
inline Graph build_graph(GraphKind kind, int K, std::uint64_t seed = 0, double extra_edge_prob = 0.0) {
  if (K < 2) throw InvalidSizeError("graph needs at least 2 agents, got " + std::to_string(K));
  if (!(extra_edge_prob >= 0.0 && extra_edge_prob <= 1.0)) {
    throw DomainError("extra_edge_prob must lie in [0,1]");
  }
  Graph g;
  g.K = K;
  g.seed = seed;
  switch (kind) {
    case GraphKind::Ring:
      for (int k = 0; k + 1 < K; ++k) g.edges.emplace_back(k, k + 1);
      if (K > 2) g.edges.emplace_back(0, K - 1);
      break;
    case GraphKind::Complete:
      for (int s = 0; s < K; ++s)
        for (int k = s + 1; k < K; ++k) g.edges.emplace_back(s, k);
      break;
    case GraphKind::Grid: {
      int rows = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(K)))));
      int cols = (K + rows - 1) / rows;
      for (int v = 0; v < K; ++v) {
        int c = v % cols;
        if (c + 1 < cols && v + 1 < K) g.edges.emplace_back(v, v + 1);
        if (v + cols < K) g.edges.emplace_back(v, v + cols);
      }
      break;
    }
    case GraphKind::RandomConnected: {
      std::mt19937_64 rng(seed);
      g.edges = detail::random_spanning_tree(K, rng);
      detail::normalize_edges(g);
      std::bernoulli_distribution coin(extra_edge_prob);
      std::vector<std::pair<int, int>> extra;
      for (int s = 0; s < K; ++s) {
        for (int k = s + 1; k < K; ++k) {
          bool draw = coin(rng);
          if (draw && !g.has_edge(s, k)) extra.emplace_back(s, k);
        }
      }
      g.edges.insert(g.edges.end(), extra.begin(), extra.end());
      break;
    }
  }
  detail::normalize_edges(g);
  return g;
}

/// Edge-list text: a `K <count>` header followed by one 1-indexed `s k` pair per line.
inline void write_edge_list(std::ostream& out, const Graph& g) {
  out << "K " << g.K << '\n';
  for (auto [s, k] : g.edges) out << (s + 1) << ' ' << (k + 1) << '\n';
}

inline Graph read_edge_list(std::istream& in) {
  Graph g;
  std::string line;
  long lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    if (!header) {
      std::string tag;
      if (!(ss >> tag >> g.K) || tag != "K") {
        throw ParseError("edge list: expected header 'K <count>' on line " + std::to_string(lineno), lineno);
      }
      if (g.K < 2) throw InvalidSizeError("edge list: K must be at least 2");
      header = true;
      continue;
    }
    int s = 0;
    int k = 0;
    if (!(ss >> s >> k) || s < 1 || k < 1 || s > g.K || k > g.K || s == k) {
      throw ParseError("edge list: malformed edge on line " + std::to_string(lineno), lineno);
    }
    g.edges.emplace_back(s - 1, k - 1);
  }
  if (!header) throw ParseError("edge list: missing header", lineno);
  detail::normalize_edges(g);
  return g;
}

// ---------------------------------------------------------------------------
// Combination matrices
// ---------------------------------------------------------------------------

/// Metropolis rule: a_sk = 1/(1+max(d_s,d_k)) on edges, diagonal fills rows to 1.
inline Matrix metropolis_matrix(const Graph& g) {
  if (!is_connected(g)) throw InvalidDataError("metropolis_matrix: graph is not connected");
  auto d = g.degrees();
  Matrix A = Matrix::Zero(g.K, g.K);
  for (auto [s, k] : g.edges) {
    double w = 1.0 / (1.0 + std::max(d[static_cast<std::size_t>(s)], d[static_cast<std::size_t>(k)]));
    A(s, k) = w;
    A(k, s) = w;
  }
  for (int k = 0; k < g.K; ++k) {
    double off = 0.0;
    for (int s = 0; s < g.K; ++s) {
      if (s != k) off += A(s, k);
    }
    A(k, k) = 1.0 - off;
  }
  return A;
}

/// A <- (I + A)/2, mapping the spectrum from [-1,1] into [0,1].
inline Matrix shift_positive(const Matrix& A) {
  Matrix out = 0.5 * A;
  out.diagonal().array() += 0.5;
  return out;
}

/// Graph Laplacian D - Adj.
inline Matrix laplacian_matrix(const Graph& g) {
  Matrix L = Matrix::Zero(g.K, g.K);
  for (auto [s, k] : g.edges) {
    L(s, k) -= 1.0;
    L(k, s) -= 1.0;
    L(s, s) += 1.0;
    L(k, k) += 1.0;
  }
  return L;
}

// ---------------------------------------------------------------------------
// Consensus triples
// ---------------------------------------------------------------------------

enum class AlgorithmId { ExactDiffusion, NIDS, AugDGM, ATCTracking, DIGing, EXTRA, DLM, Custom };

inline std::string to_string(AlgorithmId id) {
  switch (id) {
    case AlgorithmId::ExactDiffusion: return "ExactDiffusion";
    case AlgorithmId::NIDS: return "NIDS";
    case AlgorithmId::AugDGM: return "AugDGM";
    case AlgorithmId::ATCTracking: return "ATCTracking";
    case AlgorithmId::DIGing: return "DIGing";
    case AlgorithmId::EXTRA: return "EXTRA";
    case AlgorithmId::DLM: return "DLM";
    case AlgorithmId::Custom: return "Custom";
  }
  return "unknown";
}

inline AlgorithmId parse_algorithm_id(const std::string& name) {
  for (auto id : {AlgorithmId::ExactDiffusion, AlgorithmId::NIDS, AlgorithmId::AugDGM, AlgorithmId::ATCTracking,
                  AlgorithmId::DIGing, AlgorithmId::EXTRA, AlgorithmId::DLM}) {
    if (to_string(id) == name) return id;
  }
  throw UnsupportedError("unsupported algorithm '" + name + "'");
}

/// True for the rows of the table with A_bar = I (not adapt-then-combine).
inline bool is_non_atc(AlgorithmId id) {
  return id == AlgorithmId::DIGing || id == AlgorithmId::EXTRA || id == AlgorithmId::DLM;
}

/// Combination rounds needed per iteration by each table row.
inline int comm_rounds_per_iter(AlgorithmId id) {
  switch (id) {
    case AlgorithmId::AugDGM:
    case AlgorithmId::ATCTracking:
    case AlgorithmId::DIGing:
      return 2;
    default:
      return 1;
  }
}

/// (A_bar, B^2, C) parameterizing the primal-dual recursion. All K x K;
/// applied blockwise to K x M stacks.
struct ConsensusTriple {
  Matrix A_bar;
  Matrix B_sq;
  Matrix C;
  AlgorithmId algorithm_id = AlgorithmId::Custom;
  /// Network combination matrix the triple was derived from (Laplacian for DLM).
  std::optional<Matrix> network;
};

inline ConsensusTriple table1_matrices(AlgorithmId id, const Matrix& A, double c = 0.0, double mu = 0.0,
                                       const std::optional<Matrix>& L = std::nullopt) {
  const auto K = A.rows();
  if (A.cols() != K) throw ShapeError("table1_matrices: combination matrix must be square");
  const Matrix I = Matrix::Identity(K, K);
  const Matrix IminusA = I - A;
  ConsensusTriple t;
  t.algorithm_id = id;
  t.network = A;
  switch (id) {
    case AlgorithmId::ExactDiffusion:
      t.A_bar = 0.5 * (I + A);
      t.B_sq = 0.5 * IminusA;
      t.C = Matrix::Zero(K, K);
      break;
    case AlgorithmId::NIDS:
      if (!(c > 0.0)) throw DomainError("NIDS requires c > 0");
      t.A_bar = I - c * IminusA;
      t.B_sq = c * IminusA;
      t.C = Matrix::Zero(K, K);
      break;
    case AlgorithmId::AugDGM:
      t.A_bar = A * A;
      t.B_sq = IminusA * IminusA;
      t.C = Matrix::Zero(K, K);
      break;
    case AlgorithmId::ATCTracking:
      t.A_bar = A;
      t.B_sq = IminusA * IminusA;
      t.C = IminusA;
      break;
    case AlgorithmId::DIGing:
      t.A_bar = I;
      t.B_sq = IminusA * IminusA;
      t.C = I - A * A;
      break;
    case AlgorithmId::EXTRA:
      t.A_bar = I;
      t.B_sq = 0.5 * IminusA;
      t.C = 0.5 * IminusA;
      break;
    case AlgorithmId::DLM:
      if (!(c > 0.0)) throw DomainError("DLM requires c > 0");
      if (!(mu > 0.0)) throw DomainError("DLM requires mu > 0");
      if (!L) throw DomainError("DLM requires the graph Laplacian");
      if (L->rows() != K || L->cols() != K) throw ShapeError("DLM: Laplacian shape mismatch");
      t.A_bar = I;
      t.B_sq = c * mu * *L;
      t.C = c * mu * *L;
      t.network = *L;
      break;
    case AlgorithmId::Custom:
      throw UnsupportedError("table1_matrices: Custom has no table row");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Spectral checks
// ---------------------------------------------------------------------------

inline constexpr double kPsdTolerance = 1e-10;
inline constexpr double kNullspaceRelTolerance = 1e-10;
inline constexpr double kStrictMargin = 1e-10;

struct ConditionCheck {
  std::string name;
  bool ok = false;
  double value = 0.0;  ///< the eigenvalue or norm the condition was decided on
};

struct SpectralReport {
  double sigma_max_C = 0.0;
  double sigma_max_Bsq = 0.0;
  double sigma_min_Bsq = 0.0;  ///< smallest nonzero eigenvalue of B^2 (0 if none)
  std::optional<double> lambda2_A;
  Vector eig_C;    ///< ascending
  Vector eig_Bsq;  ///< ascending
  int nullity_Bsq = 0;
  int nullity_C = 0;
  bool assumption2_ok = false;
  bool assumption4_ok = false;
  std::vector<ConditionCheck> checks;
};

namespace detail {

inline bool is_symmetric(const Matrix& M) {
  if (M.rows() != M.cols()) return false;
  double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  return (M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

inline Vector sym_eigenvalues(const Matrix& M) {
  Matrix S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues();  // ascending
}

inline double null_threshold(const Vector& eig) {
  double top = eig.size() ? eig.cwiseAbs().maxCoeff() : 0.0;
  return kNullspaceRelTolerance * std::max(1.0, top);
}

inline int nullity(const Vector& eig) {
  double thr = null_threshold(eig);
  int n = 0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (std::abs(eig(i)) <= thr) ++n;
  }
  return n;
}

}  // namespace detail

/// Smallest eigenvalue of B^2 treated as nonzero (|l| > 1e-10 max(1, sigma_max)).
inline double smallest_nonzero_eigenvalue(const Vector& eig) {
  double thr = detail::null_threshold(eig);
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (std::abs(eig(i)) > thr) return eig(i);
  }
  return 0.0;
}

/// Second-largest eigenvalue of a symmetric matrix.
inline double second_largest_eigenvalue(const Matrix& A) {
  Vector e = detail::sym_eigenvalues(A);
  if (e.size() < 2) return e.size() ? e(0) : 0.0;
  return e(e.size() - 2);
}

/// Checks the ATC conditions (A_bar^2 <= I - B^2, 0 <= C < 2I) and the
/// non-ATC conditions (0 <= B^2 <= C < I), both together with the consensus
/// nullspace conditions null(B^2) = span(1) and C = 0 or null(C) = span(1).
inline SpectralReport validate_assumptions(const ConsensusTriple& t, double psd_tol = kPsdTolerance) {
  const auto K = t.A_bar.rows();
  for (const Matrix* m : {&t.A_bar, &t.B_sq, &t.C}) {
    if (m->rows() != K || m->cols() != K) throw ShapeError("validate_assumptions: matrices must be K x K");
    if (!detail::is_symmetric(*m)) throw MalformedMatrixError("validate_assumptions: matrix is not symmetric");
  }
  SpectralReport r;
  r.eig_C = detail::sym_eigenvalues(t.C);
  r.eig_Bsq = detail::sym_eigenvalues(t.B_sq);
  r.sigma_max_C = r.eig_C(K - 1);
  r.sigma_max_Bsq = r.eig_Bsq(K - 1);
  r.sigma_min_Bsq = smallest_nonzero_eigenvalue(r.eig_Bsq);
  r.nullity_Bsq = detail::nullity(r.eig_Bsq);
  r.nullity_C = detail::nullity(r.eig_C);
  if (t.network && t.algorithm_id != AlgorithmId::DLM) r.lambda2_A = second_largest_eigenvalue(*t.network);

  const Vector ones = Vector::Ones(K);
  const double one_scale = std::sqrt(static_cast<double>(K));
  auto push = [&](std::string name, bool ok, double value) {
    r.checks.push_back({std::move(name), ok, value});
    return ok;
  };

  double bsq_ones = (t.B_sq * ones).norm() / one_scale;
  double c_ones = (t.C * ones).norm() / one_scale;
  bool c_zero = t.C.cwiseAbs().maxCoeff() == 0.0;
  bool consensus_B = push("B_sq * 1 = 0", bsq_ones <= detail::null_threshold(r.eig_Bsq), bsq_ones) &
                     push("nullity(B_sq) = 1", r.nullity_Bsq == 1, r.nullity_Bsq);
  bool consensus_C = c_zero || (push("C * 1 = 0", c_ones <= detail::null_threshold(r.eig_C), c_ones) &
                                push("nullity(C) = 1", r.nullity_C == 1, r.nullity_C));

  Matrix gap2 = Matrix::Identity(K, K) - t.B_sq - t.A_bar * t.A_bar;
  double gap2_min = detail::sym_eigenvalues(gap2)(0);
  bool a2_psd = push("I - B_sq - A_bar^2 >= 0", gap2_min >= -psd_tol, gap2_min);
  bool c_psd = push("C >= 0", r.eig_C(0) >= -psd_tol, r.eig_C(0));
  bool c_lt2 = push("C < 2I", r.sigma_max_C <= 2.0 - kStrictMargin, r.sigma_max_C);
  r.assumption2_ok = consensus_B && consensus_C && a2_psd && c_psd && c_lt2;

  double gap4_min = detail::sym_eigenvalues(t.C - t.B_sq)(0);
  bool b_psd = push("B_sq >= 0", r.eig_Bsq(0) >= -psd_tol, r.eig_Bsq(0));
  bool cb_psd = push("C - B_sq >= 0", gap4_min >= -psd_tol, gap4_min);
  bool c_lt1 = push("C < I", r.sigma_max_C <= 1.0 - kStrictMargin, r.sigma_max_C);
  bool null_match = push("nullity(C) = 1", r.nullity_C == 1 && c_ones <= detail::null_threshold(r.eig_C), r.nullity_C);
  r.assumption4_ok = consensus_B && null_match && b_psd && cb_psd && c_psd && c_lt1;
  return r;
}

}  // namespace puda
