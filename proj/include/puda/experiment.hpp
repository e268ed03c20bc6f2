#pragma once

#include "puda/analysis.hpp"
#include "puda/costs.hpp"
#include "puda/engine.hpp"
#include "puda/libsvm.hpp"
#include "puda/netgraph.hpp"
#include "puda/prox.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace puda {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ProblemKind { LassoQuadratic, LogisticL1, Counterexample };

inline std::string to_string(ProblemKind p) {
  switch (p) {
    case ProblemKind::LassoQuadratic: return "lasso_quadratic";
    case ProblemKind::LogisticL1: return "logistic_l1";
    case ProblemKind::Counterexample: return "counterexample";
  }
  return "unknown";
}

inline ProblemKind parse_problem_kind(const std::string& s) {
  if (s == "lasso_quadratic") return ProblemKind::LassoQuadratic;
  if (s == "logistic_l1") return ProblemKind::LogisticL1;
  if (s == "counterexample") return ProblemKind::Counterexample;
  throw ConfigError("unknown problem '" + s + "' (expected lasso_quadratic, logistic_l1 or counterexample)");
}

struct GraphConfig {
  GraphKind kind = GraphKind::RandomConnected;
  int K = 20;
  std::uint64_t seed = 0;
  double extra_edge_prob = 0.2;
};

struct DataConfig {
  std::string source = "synthetic";  ///< synthetic | libsvm
  int n = 0;                         ///< synthetic sample count; 0 = 30 per agent
  double flip_prob = 0.1;
  std::optional<std::uint64_t> seed;  ///< defaults to the experiment seed
  std::string path;                   ///< libsvm
  bool normalize = true;
  double label_positive = 1.0;
  double label_negative = -1.0;
};

struct AlgorithmEntry {
  std::string name;
  std::optional<double> mu;  ///< empty = auto
  std::optional<double> c;   ///< falls back to the experiment-level c
};

struct ExperimentConfig {
  ProblemKind problem = ProblemKind::LassoQuadratic;
  GraphConfig graph;
  std::vector<AlgorithmEntry> algorithms;
  double lambda = 1e-4;
  double rho = 2e-3;
  double eta = 1.0;
  double c = 0.5;
  int M = 10;
  long iters = 5000;
  long record_every = 1;
  std::string output_dir = "out";
  DataConfig data;
  std::uint64_t seed = 0;
  std::string init = "zero";  ///< zero | random
  bool shift_positive_atc = true;
  double reference_tol = 1e-14;
};

inline const std::vector<std::string>& known_algorithm_names() {
  static const std::vector<std::string> names = {
      "ProxED",       "ProxATC1",         "ProxATC2",    "PUDA-ExactDiffusion", "PUDA-NIDS", "PUDA-AugDGM",
      "PUDA-ATCTracking", "PUDA-DIGing", "PUDA-EXTRA", "PUDA-DLM",            "PGEXTRA",   "DLADMM"};
  return names;
}

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  std::vector<std::string> unknown;
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown key(s) in " + where + ":";
    for (const auto& k : unknown) msg += " '" + k + "'";
    throw ConfigError(msg);
  }
}

template <class T>
T get_as(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
void maybe(const json& obj, const std::string& key, T& out, const std::string& where) {
  if (obj.contains(key)) out = get_as<T>(obj, key, where);
}

inline void require_positive(double v, const std::string& what) {
  if (!(v > 0.0)) throw ConfigError(what + " must be positive");
}

}  // namespace detail

/// Checks ranges and cross-parameter consistency.
inline void validate_config(const ExperimentConfig& cfg) {
  detail::require_positive(cfg.lambda, "lambda");
  if (!(cfg.rho >= 0.0)) throw ConfigError("rho must be non-negative");
  detail::require_positive(cfg.eta, "eta");
  detail::require_positive(cfg.c, "c");
  detail::require_positive(cfg.reference_tol, "reference_tol");
  if (cfg.M < 1) throw ConfigError("M must be at least 1");
  if (cfg.iters < 1) throw ConfigError("iters must be at least 1");
  if (cfg.record_every < 1) throw ConfigError("record_every must be at least 1");
  if (cfg.graph.K < 2) throw ConfigError("graph.K must be at least 2");
  if (!(cfg.graph.extra_edge_prob >= 0.0 && cfg.graph.extra_edge_prob <= 1.0)) {
    throw ConfigError("graph.extra_edge_prob must be in [0, 1]");
  }
  if (cfg.init != "zero" && cfg.init != "random") throw ConfigError("init must be 'zero' or 'random'");
  if (cfg.algorithms.empty()) throw ConfigError("algorithms must list at least one algorithm");
  std::set<std::string> seen;
  for (const auto& a : cfg.algorithms) {
    const auto& names = known_algorithm_names();
    if (std::find(names.begin(), names.end(), a.name) == names.end()) {
      throw ConfigError("unknown algorithm '" + a.name + "'");
    }
    if (!seen.insert(a.name).second) throw ConfigError("algorithm '" + a.name + "' listed twice");
    if (a.mu) detail::require_positive(*a.mu, "algorithms[" + a.name + "].mu");
    if (a.c) detail::require_positive(*a.c, "algorithms[" + a.name + "].c");
  }
  if (cfg.problem == ProblemKind::Counterexample) {
    if (cfg.graph.K != 2) throw ConfigError("counterexample requires graph.K = 2");
    if (cfg.M < 2 || cfg.M % 2 != 0) throw ConfigError("counterexample requires an even M >= 2");
  }
  if (cfg.problem == ProblemKind::LogisticL1) {
    if (cfg.data.source != "synthetic" && cfg.data.source != "libsvm") {
      throw ConfigError("data.source must be 'synthetic' or 'libsvm'");
    }
    if (cfg.data.source == "libsvm" && cfg.data.path.empty()) throw ConfigError("data.path is required for libsvm");
    if (!(cfg.data.flip_prob >= 0.0 && cfg.data.flip_prob <= 1.0)) throw ConfigError("data.flip_prob must be in [0, 1]");
    if (cfg.data.n < 0) throw ConfigError("data.n must be non-negative");
  }
}

/// Parses a JSON document. Unknown keys and missing `problem`/`algorithms`
/// are errors; everything else takes a problem-dependent default.
inline ExperimentConfig parse_config_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"problem", "graph", "algorithms", "lambda", "rho", "eta", "c", "M", "iters", "record_every",
                          "output_dir", "data", "seed", "init", "shift_positive_atc", "reference_tol"},
                         "config");
  for (const char* req : {"problem", "algorithms"}) {
    if (!j.contains(req)) throw ConfigError(std::string("missing required key '") + req + "'");
  }

  ExperimentConfig cfg;
  cfg.problem = parse_problem_kind(detail::get_as<std::string>(j, "problem", "config"));
  if (cfg.problem == ProblemKind::Counterexample) {
    cfg.graph = {GraphKind::Complete, 2, 0, 0.0};
    cfg.M = 2000;
    cfg.iters = 20000;
    cfg.c = 50.0;
  } else if (cfg.problem == ProblemKind::LogisticL1) {
    cfg.M = 20;
  }

  if (j.contains("graph")) {
    const json& g = j.at("graph");
    if (!g.is_object()) throw ConfigError("graph must be an object");
    detail::reject_unknown(g, {"kind", "K", "seed", "extra_edge_prob"}, "graph");
    if (g.contains("kind")) {
      try {
        cfg.graph.kind = parse_graph_kind(detail::get_as<std::string>(g, "kind", "graph"));
      } catch (const UnsupportedError& e) {
        throw ConfigError(e.what());
      }
    }
    detail::maybe(g, "K", cfg.graph.K, "graph");
    detail::maybe(g, "seed", cfg.graph.seed, "graph");
    detail::maybe(g, "extra_edge_prob", cfg.graph.extra_edge_prob, "graph");
  }

  const json& algs = j.at("algorithms");
  if (!algs.is_array()) throw ConfigError("algorithms must be an array");
  for (const auto& a : algs) {
    AlgorithmEntry e;
    if (a.is_string()) {
      e.name = a.get<std::string>();
    } else if (a.is_object()) {
      detail::reject_unknown(a, {"name", "mu", "c"}, "algorithms[]");
      if (!a.contains("name")) throw ConfigError("algorithms[] entry without 'name'");
      e.name = detail::get_as<std::string>(a, "name", "algorithms[]");
      if (a.contains("mu")) {
        const json& mu = a.at("mu");
        if (mu.is_string()) {
          if (mu.get<std::string>() != "auto") throw ConfigError("mu must be a number or \"auto\"");
        } else if (mu.is_number()) {
          e.mu = mu.get<double>();
        } else {
          throw ConfigError("mu must be a number or \"auto\"");
        }
      }
      if (a.contains("c")) e.c = detail::get_as<double>(a, "c", "algorithms[]");
    } else {
      throw ConfigError("algorithms[] entries must be names or objects");
    }
    cfg.algorithms.push_back(e);
  }

  detail::maybe(j, "lambda", cfg.lambda, "config");
  detail::maybe(j, "rho", cfg.rho, "config");
  detail::maybe(j, "eta", cfg.eta, "config");
  detail::maybe(j, "c", cfg.c, "config");
  detail::maybe(j, "M", cfg.M, "config");
  detail::maybe(j, "iters", cfg.iters, "config");
  detail::maybe(j, "record_every", cfg.record_every, "config");
  detail::maybe(j, "output_dir", cfg.output_dir, "config");
  detail::maybe(j, "seed", cfg.seed, "config");
  detail::maybe(j, "init", cfg.init, "config");
  detail::maybe(j, "shift_positive_atc", cfg.shift_positive_atc, "config");
  detail::maybe(j, "reference_tol", cfg.reference_tol, "config");

  if (j.contains("data")) {
    const json& d = j.at("data");
    if (!d.is_object()) throw ConfigError("data must be an object");
    detail::reject_unknown(d, {"source", "n", "flip_prob", "seed", "path", "normalize", "labels"}, "data");
    detail::maybe(d, "source", cfg.data.source, "data");
    detail::maybe(d, "n", cfg.data.n, "data");
    detail::maybe(d, "flip_prob", cfg.data.flip_prob, "data");
    if (d.contains("seed")) cfg.data.seed = detail::get_as<std::uint64_t>(d, "seed", "data");
    detail::maybe(d, "path", cfg.data.path, "data");
    detail::maybe(d, "normalize", cfg.data.normalize, "data");
    if (d.contains("labels")) {
      auto labels = detail::get_as<std::vector<double>>(d, "labels", "data");
      if (labels.size() != 2) throw ConfigError("data.labels must be [positive, negative]");
      cfg.data.label_positive = labels[0];
      cfg.data.label_negative = labels[1];
    }
  }

  validate_config(cfg);
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config_json(j);
}

inline json to_json(const ExperimentConfig& cfg) {
  json algs = json::array();
  for (const auto& a : cfg.algorithms) {
    json e = {{"name", a.name}};
    e["mu"] = a.mu ? json(*a.mu) : json("auto");
    if (a.c) e["c"] = *a.c;
    algs.push_back(e);
  }
  json data = {{"source", cfg.data.source},
               {"n", cfg.data.n},
               {"flip_prob", cfg.data.flip_prob},
               {"seed", cfg.data.seed.value_or(cfg.seed)},
               {"path", cfg.data.path},
               {"normalize", cfg.data.normalize},
               {"labels", {cfg.data.label_positive, cfg.data.label_negative}}};
  return {{"problem", to_string(cfg.problem)},
          {"graph",
           {{"kind", to_string(cfg.graph.kind)},
            {"K", cfg.graph.K},
            {"seed", cfg.graph.seed},
            {"extra_edge_prob", cfg.graph.extra_edge_prob}}},
          {"algorithms", algs},
          {"lambda", cfg.lambda},
          {"rho", cfg.rho},
          {"eta", cfg.eta},
          {"c", cfg.c},
          {"M", cfg.M},
          {"iters", cfg.iters},
          {"record_every", cfg.record_every},
          {"output_dir", cfg.output_dir},
          {"data", data},
          {"seed", cfg.seed},
          {"init", cfg.init},
          {"shift_positive_atc", cfg.shift_positive_atc},
          {"reference_tol", cfg.reference_tol}};
}

/// K = 2 complete graph (A = 11'/2), M = 2000, eta = 1, mu = 0.005, 20000
/// iterations; PG-EXTRA and DL-ADMM with agent-specific R1/R2 and Prox-ED with
/// the equivalent common regularizer.
inline ExperimentConfig counterexample_preset(int M = 2000, long iters = 20000, const std::string& output_dir = "out") {
  ExperimentConfig cfg;
  cfg.problem = ProblemKind::Counterexample;
  cfg.graph = {GraphKind::Complete, 2, 0, 0.0};
  cfg.M = M;
  cfg.iters = iters;
  cfg.eta = 1.0;
  cfg.c = 50.0;
  cfg.output_dir = output_dir;
  cfg.algorithms = {{"PGEXTRA", 0.005, std::nullopt}, {"DLADMM", 0.005, std::nullopt}, {"ProxED", 0.005, std::nullopt}};
  validate_config(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

struct Problem {
  Graph graph;
  Matrix A;
  Matrix L;
  std::shared_ptr<const SmoothCostSet> costs;
  ProxOperator common_prox;
  std::vector<ProxOperator> agent_prox;
  Vector w_star;
  ReferenceSolution reference;
};

inline Problem build_problem(const ExperimentConfig& cfg, std::ostream* warn = &std::cerr) {
  Problem p;
  p.graph = build_graph(cfg.graph.kind, cfg.graph.K, cfg.graph.seed, cfg.graph.extra_edge_prob);
  p.A = metropolis_matrix(p.graph);
  p.L = laplacian_matrix(p.graph);
  const int K = cfg.graph.K;

  switch (cfg.problem) {
    case ProblemKind::LassoQuadratic: {
      p.costs = std::make_shared<const SmoothCostSet>(random_quadratic_cost(K, cfg.M, cfg.seed));
      p.common_prox = cfg.rho > 0.0 ? l1_prox(cfg.rho) : zero_prox();
      p.agent_prox.assign(static_cast<std::size_t>(K), p.common_prox);
      break;
    }
    case ProblemKind::LogisticL1: {
      Dataset d;
      const std::uint64_t data_seed = cfg.data.seed.value_or(cfg.seed);
      if (cfg.data.source == "libsvm") {
        d = read_libsvm(cfg.data.path, cfg.data.normalize, {cfg.data.label_positive, cfg.data.label_negative});
      } else {
        const int n = cfg.data.n > 0 ? cfg.data.n : 30 * K;
        d = synthetic_classification(n, cfg.M, data_seed, cfg.data.flip_prob);
      }
      if (d.size() < static_cast<std::size_t>(K)) throw ConfigError("dataset has fewer samples than agents");
      p.costs = std::make_shared<const SmoothCostSet>(logistic_cost(partition_data(d, K, data_seed), cfg.lambda));
      p.common_prox = cfg.rho > 0.0 ? l1_prox(cfg.rho) : zero_prox();
      p.agent_prox.assign(static_cast<std::size_t>(K), p.common_prox);
      break;
    }
    case ProblemKind::Counterexample: {
      auto pair = std::make_shared<const CounterexamplePair>(build_counterexample(cfg.M));
      p.costs = std::make_shared<const SmoothCostSet>(quadratic_cost(cfg.eta, K, cfg.M));
      p.agent_prox = {counterexample_prox(CounterexampleTerm::R1, pair), counterexample_prox(CounterexampleTerm::R2, pair)};
      p.common_prox = counterexample_sum_prox(pair, 0.5);
      // argmin (eta/2)|w|^2 + R(w) is prox_{R/eta}(0).
      p.w_star = p.common_prox.apply(Vector::Zero(cfg.M), 1.0 / cfg.eta);
      p.reference.w = p.w_star;
      p.reference.converged = true;
      return p;
    }
  }
  p.reference = centralized_reference(*p.costs, p.common_prox, cfg.reference_tol, 1000000, warn);
  p.w_star = p.reference.w;
  return p;
}

// ---------------------------------------------------------------------------
// Algorithm resolution
// ---------------------------------------------------------------------------

struct ResolvedAlgorithm {
  AlgorithmSpec spec;
  RateTheorem theorem = RateTheorem::Thm1;
  std::optional<ConsensusTriple> rate_triple;  ///< triple whose rate bounds this algorithm
  std::optional<SpectralReport> spectral;
  std::optional<RateReport> rate;
  std::string note;  ///< why no rate is reported, when applicable
  double c = 0.0;
};

namespace detail {

inline bool needs_nonnegative_A(const std::string& name) {
  return name == "ProxATC1" || name == "ProxATC2" || name == "PUDA-AugDGM" || name == "PUDA-ATCTracking" ||
         name == "PUDA-DIGing";
}

inline AlgorithmId rate_row(const std::string& name) {
  if (name == "ProxED") return AlgorithmId::ExactDiffusion;
  if (name == "ProxATC1") return AlgorithmId::AugDGM;
  if (name == "ProxATC2") return AlgorithmId::ATCTracking;
  if (name == "PGEXTRA") return AlgorithmId::EXTRA;
  if (name == "DLADMM") return AlgorithmId::DLM;
  return parse_algorithm_id(name.substr(5));  // PUDA-<row>
}

}  // namespace detail

/// Builds the engine spec, resolves "auto" step-sizes to 0.9 x the step-size
/// bound of the governing theorem, and evaluates the theoretical rate.
inline ResolvedAlgorithm resolve_algorithm(const AlgorithmEntry& entry, const ExperimentConfig& cfg, const Problem& p) {
  ResolvedAlgorithm r;
  const std::string& name = entry.name;
  const double nu = p.costs->nu();
  const double delta = p.costs->delta();
  const Matrix A = cfg.shift_positive_atc && detail::needs_nonnegative_A(name) ? shift_positive(p.A) : p.A;
  const AlgorithmId row = detail::rate_row(name);
  r.c = entry.c.value_or(cfg.c);
  r.theorem = is_non_atc(row) ? RateTheorem::Thm4 : RateTheorem::Thm1;

  double mu = 0.0;
  if (row == AlgorithmId::DLM) {
    // C = c mu L depends on mu; the bound mu < 2(1 - c mu lambda_max(L))/delta solves to mu < 2/(delta + 2 c lambda_max(L)).
    const double lmax = detail::sym_eigenvalues(p.L).maxCoeff();
    mu = entry.mu.value_or(0.9 * 2.0 / (delta + 2.0 * r.c * lmax));
    r.rate_triple = table1_matrices(AlgorithmId::DLM, A, r.c, mu, p.L);
  } else {
    r.rate_triple = table1_matrices(row, A, r.c);
    if (entry.mu) {
      mu = *entry.mu;
    } else {
      const double sC = std::max(0.0, detail::sym_eigenvalues(r.rate_triple->C).maxCoeff());
      const double bound = r.theorem == RateTheorem::Thm1 ? (2.0 - sC) / delta : 2.0 * (1.0 - sC) / delta;
      if (!(bound > 0.0)) throw ConfigError("no positive step-size bound for " + name + "; give mu explicitly");
      mu = 0.9 * bound;
    }
  }

  try {
    r.spectral = validate_assumptions(*r.rate_triple);
    const bool ok = r.theorem == RateTheorem::Thm1 ? r.spectral->assumption2_ok : r.spectral->assumption4_ok;
    if (ok) {
      r.rate = theoretical_rate(*r.rate_triple, *r.spectral, mu, nu, delta);
    } else {
      r.note = "matrix assumption fails; no rate guarantee";
    }
  } catch (const DomainError& e) {
    r.note = e.what();
  }

  AlgorithmSpec& s = r.spec;
  s.name = name;
  s.mu = mu;
  s.prox = p.common_prox;
  s.comm_rounds_per_iter = comm_rounds_per_iter(row);
  if (name == "ProxED") {
    s.family = Family::ProxED;
    s.A = A;
    s.comm_rounds_per_iter = 1;
  } else if (name == "ProxATC1" || name == "ProxATC2") {
    s.family = name == "ProxATC1" ? Family::ProxATC1 : Family::ProxATC2;
    s.A = A;
    s.comm_rounds_per_iter = 2;
  } else if (name == "PGEXTRA" || name == "DLADMM") {
    s.family = name == "PGEXTRA" ? Family::PGEXTRA : Family::DLADMM;
    s.agent_prox = p.agent_prox;
    s.separate = {A, r.c, p.L};
    s.comm_rounds_per_iter = 1;
  } else {
    s.family = Family::PudaGeneral;
    s.triple = *r.rate_triple;
  }
  if (cfg.init == "random") {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Block W0(p.costs->K(), p.costs->M());
    for (Eigen::Index k = 0; k < W0.rows(); ++k)
      for (Eigen::Index j = 0; j < W0.cols(); ++j) W0(k, j) = gauss(rng);
    s.init = W0;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Running and output
// ---------------------------------------------------------------------------

struct AlgorithmResult {
  ResolvedAlgorithm resolved;
  RunRecord record;
  std::optional<FitVerdict> verdict;
  std::string verdict_label;  ///< linear | sublinear | inconclusive | diverged | too-short
  double empirical_ratio = NAN;
  double final_error = NAN;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<AlgorithmResult> algorithms;
  Vector w_star;
  bool any_diverged() const {
    for (const auto& a : algorithms)
      if (a.record.diverged) return true;
    return false;
  }
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline AlgorithmResult run_algorithm(const ResolvedAlgorithm& resolved, const ExperimentConfig& cfg, const Problem& p) {
  AlgorithmResult out;
  out.resolved = resolved;
  RunOptions opt;
  opt.seed = cfg.seed;
  out.record = run(resolved.spec, *p.costs, p.w_star, cfg.iters, cfg.record_every, opt);
  if (!out.record.rows.empty()) out.final_error = out.record.rows.back().rel_sq_error;
  if (out.record.diverged) {
    out.verdict_label = "diverged";
  } else if (out.record.rows.size() < 100) {
    out.verdict_label = "too-short";
  } else {
    out.verdict = classify_decay(out.record);
    out.verdict_label = to_string(out.verdict->classification);
    if (!out.verdict->geometric_ratio_windows.empty()) {
      out.empirical_ratio = out.verdict->geometric_ratio_windows.back();
    }
  }
  return out;
}

inline void write_trajectory_csv(std::ostream& out, const RunRecord& rec) {
  out << "iter,comm_rounds,rel_sq_error,r_primal,r_dual,r_prox\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  for (const auto& row : rec.rows) {
    out << row.iter << ',' << row.comm_rounds << ',' << format_number(row.rel_sq_error) << ',' << opt(row.r_primal)
        << ',' << opt(row.r_dual) << ',' << opt(row.r_prox) << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, const std::vector<AlgorithmResult>& results) {
  out << "algorithm,mu,gamma,empirical_ratio,final_error,comm_rounds,verdict\n";
  for (const auto& r : results) {
    const long rounds = r.record.rows.empty() ? 0 : r.record.rows.back().comm_rounds;
    out << r.record.algorithm << ',' << format_number(r.resolved.spec.mu) << ','
        << (r.resolved.rate ? format_number(r.resolved.rate->gamma) : std::string("nan")) << ','
        << format_number(r.empirical_ratio) << ',' << format_number(r.final_error) << ',' << rounds << ','
        << r.verdict_label << '\n';
  }
}

/// Long format: one row per (algorithm, recorded iteration), for plotting
/// against either iterations or communication rounds.
inline void write_plot_csv(std::ostream& out, const std::vector<AlgorithmResult>& results) {
  out << "algorithm,iter,comm_rounds,rel_sq_error\n";
  for (const auto& r : results) {
    for (const auto& row : r.record.rows) {
      out << r.record.algorithm << ',' << row.iter << ',' << row.comm_rounds << ',' << format_number(row.rel_sq_error)
          << '\n';
    }
  }
}

inline json rate_json(const ResolvedAlgorithm& r) {
  json j = {{"algorithm", r.spec.name},
            {"theorem", r.theorem == RateTheorem::Thm1 ? "Thm1" : "Thm4"},
            {"mu", r.spec.mu},
            {"c", r.c},
            {"comm_rounds_per_iter", r.spec.comm_rounds_per_iter}};
  if (r.rate) {
    j["gamma"] = r.rate->gamma;
    j["gamma_primal"] = r.rate->gamma_primal;
    j["gamma_dual"] = r.rate->gamma_dual;
    j["mu_bound"] = r.rate->mu_bound;
    j["feasible"] = r.rate->feasible;
  } else {
    j["gamma"] = nullptr;
    j["note"] = r.note;
  }
  return j;
}

inline json spectral_json(const SpectralReport& s) {
  json checks = json::array();
  for (const auto& c : s.checks) checks.push_back({{"name", c.name}, {"ok", c.ok}, {"value", c.value}});
  return {{"sigma_max_C", s.sigma_max_C},     {"sigma_max_Bsq", s.sigma_max_Bsq}, {"sigma_min_Bsq", s.sigma_min_Bsq},
          {"lambda2_A", s.lambda2_A ? json(*s.lambda2_A) : json(nullptr)},         {"assumption2_ok", s.assumption2_ok}, {"assumption4_ok", s.assumption4_ok},
          {"checks", checks}};
}

/// Builds the problem, runs every algorithm (divergence is recorded, the rest
/// still run) and, when `write` is set, writes per-algorithm CSV + sidecar,
/// summary.csv and plot.csv into cfg.output_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write = true, std::ostream* log = &std::cerr) {
  validate_config(cfg);
  Problem p = build_problem(cfg, log);
  ExperimentResult result;
  result.config = cfg;
  result.w_star = p.w_star;
  for (const auto& entry : cfg.algorithms) {
    ResolvedAlgorithm resolved = resolve_algorithm(entry, cfg, p);
    result.algorithms.push_back(run_algorithm(resolved, cfg, p));
    if (log) {
      const auto& r = result.algorithms.back();
      *log << r.record.algorithm << ": mu=" << format_number(resolved.spec.mu)
           << " final_error=" << format_number(r.final_error) << " verdict=" << r.verdict_label << '\n';
    }
  }
  if (!write) return result;

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const json resolved_cfg = to_json(cfg);
  for (const auto& r : result.algorithms) {
    const fs::path base = fs::path(cfg.output_dir) / r.record.algorithm;
    std::ofstream csv(base.string() + ".csv");
    write_trajectory_csv(csv, r.record);
    json meta = {{"config", resolved_cfg},
                 {"rate", rate_json(r.resolved)},
                 {"diverged", r.record.diverged},
                 {"message", r.record.message},
                 {"verdict", r.verdict_label},
                 {"wall_time_s", r.record.wall_time_s},
                 {"nu", p.costs->nu()},
                 {"delta", p.costs->delta()},
                 {"reference_mapping_norm", p.reference.mapping_norm},
                 {"reference_converged", p.reference.converged}};
    if (r.resolved.spectral) meta["spectral"] = spectral_json(*r.resolved.spectral);
    std::ofstream(base.string() + ".meta.json") << meta.dump(2) << '\n';
  }
  std::ofstream summary(fs::path(cfg.output_dir) / "summary.csv");
  write_summary_csv(summary, result.algorithms);
  std::ofstream plot(fs::path(cfg.output_dir) / "plot.csv");
  write_plot_csv(plot, result.algorithms);
  return result;
}

}  // namespace puda
