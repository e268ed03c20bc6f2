#include "puda/engine.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace puda;

namespace {

struct Net {
  Graph graph;
  Matrix A;
  Matrix L;
};

Net random_net(int K, std::uint64_t seed) {
  Net n;
  n.graph = build_graph(GraphKind::RandomConnected, K, seed, 0.3);
  n.A = metropolis_matrix(n.graph);
  n.L = laplacian_matrix(n.graph);
  return n;
}

double max_abs(const Block& X) { return X.cwiseAbs().maxCoeff(); }

// Textbook exact diffusion with R = 0:
//   psi_i = w_{i-1} - mu grad(w_{i-1}),  phi_i = psi_i + w_{i-1} - psi_{i-1},  w_i = A_bar phi_i
// with phi_0 = psi_0.
std::vector<Block> reference_exact_diffusion(const SmoothCostSet& costs, const Matrix& A, double mu, Block W,
                                             int iters) {
  const Matrix A_bar = 0.5 * (Matrix::Identity(A.rows(), A.cols()) + A);
  std::vector<Block> out;
  Block psi_prev;
  for (int i = 0; i < iters; ++i) {
    Block psi = W - mu * costs.grads(W);
    Block phi = i == 0 ? psi : Block(psi + W - psi_prev);
    W = A_bar * phi;
    psi_prev = psi;
    out.push_back(W);
  }
  return out;
}

// Textbook EXTRA from given w_0, w_1:  w_{i+1} = (I+A) w_i - W~ w_{i-1} - mu(g_i - g_{i-1}).
std::vector<Block> reference_extra(const SmoothCostSet& costs, const Matrix& A, double mu, Block W0, Block W1,
                                   int iters) {
  const Matrix I = Matrix::Identity(A.rows(), A.cols());
  const Matrix Wt = 0.5 * (I + A);
  std::vector<Block> out;
  for (int i = 0; i < iters; ++i) {
    Block W2 = (I + A) * W1 - Wt * W0 - mu * (costs.grads(W1) - costs.grads(W0));
    W0 = W1;
    W1 = W2;
    out.push_back(W1);
  }
  return out;
}

AlgorithmSpec puda_spec(const ConsensusTriple& t, const ProxOperator& prox, double mu) {
  AlgorithmSpec s;
  s.family = Family::PudaGeneral;
  s.triple = t;
  s.prox = prox;
  s.mu = mu;
  return s;
}

}  // namespace

// --- puda_step --------------------------------------------------------------------

TEST(PudaStep, SingleAgentIsProximalGradient) {
  auto costs = random_quadratic_cost(1, 3, 2);
  Matrix A = Matrix::Ones(1, 1);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, A);
  auto prox = l1_prox(0.1);
  const double mu = 0.5 / costs.delta();
  BlockIterate s = BlockIterate::initial(Block::Constant(1, 3, 1.0));
  Vector w = Vector::Ones(3);
  for (int i = 0; i < 30; ++i) {
    s = puda_step(std::move(s), t, costs, prox, mu);
    w = prox_l1(w - mu * costs.grad(0, w), mu * 0.1);
    EXPECT_LE((s.W.row(0).transpose() - w).norm(), 1e-14) << i;
  }
  EXPECT_EQ(max_abs(s.S), 0.0);
}

TEST(PudaStep, FixedPointIsStationary) {
  auto net = random_net(5, 3);
  auto costs = random_quadratic_cost(5, 3, 4);
  auto prox = l1_prox(0.05);
  const double mu = 0.5 / costs.delta();
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, net.A);
  auto ref = centralized_reference(costs, prox, 1e-14, 1000000, nullptr);
  auto rec = run(puda_spec(t, prox, mu), costs, ref.w, 3000, 1000);
  BlockIterate next = puda_step(rec.final_state, t, costs, prox, mu);
  EXPECT_LE(max_abs(next.W - rec.final_state.W), 1e-12);
  EXPECT_LE(max_abs(next.S - rec.final_state.S), 1e-12);
  // consensus on the centralized minimizer
  for (int k = 0; k < 5; ++k) EXPECT_LE((rec.final_state.W.row(k).transpose() - ref.w).norm(), 1e-8);
}

TEST(PudaStep, DualSurrogateStaysInRangeOfBsq) {
  // Columns of S stay orthogonal to the consensus direction: 1'S = 0.
  auto net = random_net(7, 5);
  auto costs = random_quadratic_cost(7, 4, 6);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, net.A);
  BlockIterate s = BlockIterate::initial(Block::Random(7, 4));
  for (int i = 0; i < 100; ++i) {
    s = puda_step(std::move(s), t, costs, l1_prox(0.01), 0.3 / costs.delta());
    EXPECT_LE(s.S.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PudaStep, CompleteGraphMatchesCentralized) {
  const int K = 6;
  auto costs = random_quadratic_cost(K, 3, 8);
  Matrix A = Matrix::Constant(K, K, 1.0 / K);
  auto prox = l1_prox(0.05);
  const double mu = 0.8 / costs.delta();
  Vector w0{{0.4, -0.2, 1.0}};
  auto central = centralized_trajectory(costs, prox, w0, mu, 60);
  // Exact averaging in A_bar is what collapses the network; ED's (I + A)/2 does not.
  ConsensusTriple averaging;
  averaging.A_bar = A;
  averaging.B_sq = Matrix::Identity(K, K) - A;
  averaging.C = Matrix::Zero(K, K);
  for (auto t : {averaging, table1_matrices(AlgorithmId::AugDGM, A), table1_matrices(AlgorithmId::ATCTracking, A)}) {
    const auto id = t.algorithm_id;
    BlockIterate s = BlockIterate::initial(w0.transpose().replicate(K, 1));
    for (int i = 0; i < 60; ++i) {
      s = puda_step(std::move(s), t, costs, prox, mu);
      for (int k = 0; k < K; ++k) EXPECT_LE((s.W.row(k).transpose() - central[i]).norm(), 1e-12) << to_string(id);
    }
  }
}

TEST(PudaStep, ShapeMismatchRejected) {
  auto costs = random_quadratic_cost(3, 2, 1);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, Matrix::Constant(3, 3, 1.0 / 3));
  EXPECT_THROW(puda_step(BlockIterate::initial(Block::Zero(3, 4)), t, costs, zero_prox(), 0.1), ShapeError);
}

TEST(PudaStep, NonFiniteGradientRaisesDivergence) {
  auto costs = random_quadratic_cost(2, 2, 1);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, Matrix::Constant(2, 2, 0.5));
  Block W = Block::Zero(2, 2);
  W(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(puda_step(BlockIterate::initial(W), t, costs, zero_prox(), 0.1), DivergenceError);
}

// --- agent-level forms ---------------------------------------------------------------

TEST(AgentForm, ProxEDWithoutRegularizerIsExactDiffusion) {
  auto net = random_net(6, 9);
  auto costs = random_quadratic_cost(6, 3, 10);
  const double mu = 0.7 / costs.delta();
  Block W0 = Block::Random(6, 3);
  auto ref = reference_exact_diffusion(costs, net.A, mu, W0, 200);
  BlockIterate s = BlockIterate::initial(W0);
  for (int i = 0; i < 200; ++i) {
    s = agent_form_step(AgentVariant::ProxED, std::move(s), costs, zero_prox(), net.A, mu);
    EXPECT_LE(max_abs(s.W - ref[static_cast<std::size_t>(i)]), 1e-12) << i;
  }
}

TEST(AgentForm, MatchesGeneralRecursion) {
  auto net = random_net(6, 12);
  auto costs = random_quadratic_cost(6, 4, 13);
  auto prox = l1_prox(0.05);
  const double mu = 0.5 / costs.delta();
  const Matrix As = shift_positive(net.A);
  struct Case {
    AgentVariant v;
    AlgorithmId id;
  };
  for (Case c : {Case{AgentVariant::ProxED, AlgorithmId::ExactDiffusion}, Case{AgentVariant::ProxATC1, AlgorithmId::AugDGM},
                 Case{AgentVariant::ProxATC2, AlgorithmId::ATCTracking}}) {
    const Matrix& A = c.v == AgentVariant::ProxED ? net.A : As;
    auto t = table1_matrices(c.id, A);
    Block W0 = Block::Random(6, 4);
    BlockIterate a = BlockIterate::initial(W0), b = BlockIterate::initial(W0);
    for (int i = 0; i < 150; ++i) {
      a = agent_form_step(c.v, std::move(a), costs, prox, A, mu);
      b = puda_step(std::move(b), t, costs, prox, mu);
      ASSERT_LE(max_abs(a.W - b.W), 1e-11) << to_string(c.v) << " iteration " << i;
    }
  }
}

TEST(AgentForm, CommunicationAccounting) {
  EXPECT_EQ(comm_rounds_per_iter(AgentVariant::ProxED), 1);
  EXPECT_EQ(comm_rounds_per_iter(AgentVariant::ProxATC1), 2);
  EXPECT_EQ(comm_rounds_per_iter(AgentVariant::ProxATC2), 2);
}

// --- eliminated and two-variable forms --------------------------------------------------------

TEST(Eliminated, MatchesGeneralRecursionWithoutRegularizer) {
  auto net = random_net(6, 14);
  auto costs = random_quadratic_cost(6, 3, 15);
  const double mu = 0.4 / costs.delta();
  const Matrix As = shift_positive(net.A);
  struct Case {
    EliminatedVariant v;
    AlgorithmId id;
    bool shifted;
  };
  for (Case c : {Case{EliminatedVariant::ExactDiffusion, AlgorithmId::ExactDiffusion, false},
                 Case{EliminatedVariant::AugDGM, AlgorithmId::AugDGM, true},
                 Case{EliminatedVariant::ATCTracking, AlgorithmId::ATCTracking, true},
                 Case{EliminatedVariant::DIGing, AlgorithmId::DIGing, true},
                 Case{EliminatedVariant::EXTRA, AlgorithmId::EXTRA, false},
                 Case{EliminatedVariant::DLM, AlgorithmId::DLM, false}}) {
    const Matrix& A = c.shifted ? As : net.A;
    auto t = table1_matrices(c.id, A, 0.3, mu, net.L);
    Block W0 = Block::Random(6, 3);
    BlockIterate e = BlockIterate::initial(W0), g = BlockIterate::initial(W0);
    std::optional<BlockIterate> tv;
    if (c.v != EliminatedVariant::ExactDiffusion && c.v != EliminatedVariant::EXTRA) tv = BlockIterate::initial(W0);
    for (int i = 0; i < 150; ++i) {
      e = eliminated_step(c.v, std::move(e), costs, t, mu);
      g = puda_step(std::move(g), t, costs, zero_prox(), mu);
      ASSERT_LE(max_abs(e.W - g.W), 1e-10) << to_string(c.v) << " iteration " << i;
      if (tv) {
        *tv = eliminated_step(c.v, std::move(*tv), costs, t, mu, StepForm::TwoVariable);
        ASSERT_LE(max_abs(tv->W - g.W), 1e-10) << to_string(c.v) << " two-variable, iteration " << i;
      }
    }
  }
}

TEST(Eliminated, GenericNonATCMatchesEXTRAAndDIGing) {
  auto net = random_net(5, 16);
  auto costs = random_quadratic_cost(5, 3, 17);
  const double mu = 0.3 / costs.delta();
  for (auto [v, id] : {std::pair{EliminatedVariant::EXTRA, AlgorithmId::EXTRA},
                       std::pair{EliminatedVariant::DIGing, AlgorithmId::DIGing}}) {
    auto t = table1_matrices(id, net.A);
    Block W0 = Block::Random(5, 3);
    BlockIterate a = BlockIterate::initial(W0), b = BlockIterate::initial(W0);
    for (int i = 0; i < 100; ++i) {
      a = eliminated_step(v, std::move(a), costs, t, mu);
      b = eliminated_step(EliminatedVariant::NonATC, std::move(b), costs, t, mu);
      ASSERT_LE(max_abs(a.W - b.W), 1e-11) << to_string(v) << " iteration " << i;
    }
  }
}

TEST(Eliminated, EXTRAMatchesTextbookRecursion) {
  auto net = random_net(5, 18);
  auto costs = random_quadratic_cost(5, 3, 19);
  const double mu = 0.3 / costs.delta();
  auto t = table1_matrices(AlgorithmId::EXTRA, net.A);
  Block W0 = Block::Random(5, 3);
  BlockIterate s = BlockIterate::initial(W0);
  s = eliminated_step(EliminatedVariant::EXTRA, std::move(s), costs, t, mu);
  // Iteration 0 with a zero dual combines with W~ = (I + A)/2 rather than A.
  const Matrix Wt = 0.5 * (Matrix::Identity(5, 5) + net.A);
  ASSERT_LE(max_abs(s.W - (Wt * W0 - mu * costs.grads(W0))), 1e-14);
  auto ref = reference_extra(costs, net.A, mu, W0, s.W, 100);
  for (int i = 0; i < 100; ++i) {
    s = eliminated_step(EliminatedVariant::EXTRA, std::move(s), costs, t, mu);
    ASSERT_LE(max_abs(s.W - ref[static_cast<std::size_t>(i)]), 1e-11) << i;
  }
}

TEST(Eliminated, TwoVariableUnsupportedVariants) {
  auto costs = random_quadratic_cost(2, 2, 1);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, Matrix::Constant(2, 2, 0.5));
  EXPECT_THROW(eliminated_step(EliminatedVariant::ExactDiffusion, BlockIterate::initial(Block::Zero(2, 2)), costs, t,
                               0.1, StepForm::TwoVariable),
               UnsupportedError);
}

// --- agent-specific regularizers ----------------------------------------------------------------

TEST(Separate, PGEXTRAWithoutRegularizerFollowsEXTRA) {
  auto net = random_net(5, 20);
  auto costs = random_quadratic_cost(5, 3, 21);
  const double mu = 0.3 / costs.delta();
  std::vector<ProxOperator> none(5, zero_prox());
  SeparateOperands ops{net.A, 0.0, Matrix()};
  BlockIterate s = BlockIterate::initial(Block::Random(5, 3));
  Block W0 = s.W;
  s = separate_prox_step(SeparateVariant::PGEXTRA, std::move(s), costs, none, ops, mu);
  ASSERT_LE(max_abs(s.W - (net.A * W0 - mu * costs.grads(W0))), 1e-14);
  auto ref = reference_extra(costs, net.A, mu, W0, s.W, 150);
  for (int i = 0; i < 150; ++i) {
    s = separate_prox_step(SeparateVariant::PGEXTRA, std::move(s), costs, none, ops, mu);
    ASSERT_LE(max_abs(s.W - ref[static_cast<std::size_t>(i)]), 1e-11) << i;
  }
}

TEST(Separate, DLADMMWithoutRegularizerIsDLM) {
  auto net = random_net(5, 22);
  auto costs = random_quadratic_cost(5, 3, 23);
  const double c = 0.4, mu = 0.2 / costs.delta();
  auto t = table1_matrices(AlgorithmId::DLM, net.A, c, mu, net.L);
  std::vector<ProxOperator> none(5, zero_prox());
  SeparateOperands ops{Matrix(), c, net.L};
  Block W0 = Block::Random(5, 3);
  BlockIterate a = BlockIterate::initial(W0), b = BlockIterate::initial(W0);
  for (int i = 0; i < 150; ++i) {
    a = separate_prox_step(SeparateVariant::DLADMM, std::move(a), costs, none, ops, mu);
    b = eliminated_step(EliminatedVariant::DLM, std::move(b), costs, t, mu, StepForm::TwoVariable);
    ASSERT_LE(max_abs(a.W - b.W), 1e-12) << i;
  }
}

TEST(Separate, CounterexampleMethodsCoincideOnTwoAgents) {
  // K = 2 complete: L = 2(I - A), so c mu L = (I - A)/2 when c mu = 1/4 and both
  // methods run the same recursion.
  auto pair = std::make_shared<const CounterexamplePair>(build_counterexample(20));
  std::vector<ProxOperator> agent = {counterexample_prox(CounterexampleTerm::R1, pair),
                                     counterexample_prox(CounterexampleTerm::R2, pair)};
  auto costs = quadratic_cost(1.0, 2, 20);
  auto g = build_graph(GraphKind::Complete, 2);
  Matrix A = metropolis_matrix(g), L = laplacian_matrix(g);
  ASSERT_LE((L - 2.0 * (Matrix::Identity(2, 2) - A)).cwiseAbs().maxCoeff(), 1e-15);
  const double mu = 0.005, c = 50.0;
  SeparateOperands ops{A, c, L};
  BlockIterate a = BlockIterate::initial(Block::Zero(2, 20)), b = a;
  for (int i = 0; i < 300; ++i) {
    a = separate_prox_step(SeparateVariant::PGEXTRA, std::move(a), costs, agent, ops, mu);
    b = separate_prox_step(SeparateVariant::DLADMM, std::move(b), costs, agent, ops, mu);
    ASSERT_LE(max_abs(a.W - b.W), 1e-12) << i;
  }
}

TEST(Separate, NeedsOneProxPerAgent) {
  auto costs = random_quadratic_cost(3, 2, 1);
  SeparateOperands ops{Matrix::Constant(3, 3, 1.0 / 3), 0.0, Matrix()};
  std::vector<ProxOperator> two(2, zero_prox());
  EXPECT_THROW(separate_prox_step(SeparateVariant::PGEXTRA, BlockIterate::initial(Block::Zero(3, 2)), costs, two, ops,
                                  0.1),
               ShapeError);
}

// --- run ---------------------------------------------------------------------------------------------

TEST(Run, RecordsEveryRowAndCommunication) {
  auto net = random_net(4, 24);
  auto costs = random_quadratic_cost(4, 2, 25);
  AlgorithmSpec spec;
  spec.family = Family::ProxATC1;
  spec.A = shift_positive(net.A);
  spec.prox = l1_prox(0.01);
  spec.mu = 0.3 / costs.delta();
  spec.comm_rounds_per_iter = 2;
  auto rec = run(spec, costs, Vector::Zero(2), 100, 10);
  ASSERT_EQ(rec.rows.size(), 11u);
  EXPECT_EQ(rec.rows.back().iter, 100);
  EXPECT_EQ(rec.rows.back().comm_rounds, 200);
  EXPECT_FALSE(rec.rows.back().r_primal.has_value());  // agent ATC forms carry no dual state

  spec.family = Family::ProxED;
  spec.A = net.A;
  spec.comm_rounds_per_iter = 1;
  rec = run(spec, costs, Vector::Zero(2), 100, 10);
  EXPECT_EQ(rec.rows.back().comm_rounds, 100);
  EXPECT_FALSE(rec.rows.front().r_primal.has_value());
  EXPECT_TRUE(rec.rows.back().r_primal.has_value());
}

TEST(Run, ProxEDSolvesScalarLasso) {
  // min (1/K) sum_k (w - a_k)^2 / 2 + rho |w| over a ring.
  const int K = 8;
  std::vector<Matrix> Qs(K, Matrix::Ones(1, 1));
  std::vector<Vector> bs;
  double mean = 0.0;
  for (int k = 0; k < K; ++k) {
    double a = 1.0 + 0.25 * k;
    mean += a / K;
    bs.push_back(Vector{{a}});
  }
  auto costs = quadratic_form_cost(Qs, bs);
  const double rho = 0.5;
  Vector w_star{{mean - rho}};
  AlgorithmSpec spec;
  spec.family = Family::ProxED;
  spec.A = metropolis_matrix(build_graph(GraphKind::Ring, K));
  spec.prox = l1_prox(rho);
  spec.mu = 0.9;
  auto rec = run(spec, costs, w_star, 400);
  EXPECT_LE(rec.rows.back().rel_sq_error, 1e-10);
  EXPECT_FALSE(rec.diverged);
}

TEST(Run, FlagsDivergence) {
  auto net = random_net(4, 26);
  auto costs = random_quadratic_cost(4, 2, 27);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, net.A);
  auto rec = run(puda_spec(t, zero_prox(), 5.0 / costs.delta()), costs, Vector::Ones(2), 2000);
  EXPECT_TRUE(rec.diverged);
  EXPECT_FALSE(rec.message.empty());
  EXPECT_LT(rec.rows.size(), 2001u);
}

TEST(Run, ArgumentErrors) {
  auto costs = random_quadratic_cost(2, 2, 1);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, Matrix::Constant(2, 2, 0.5));
  EXPECT_THROW(run(puda_spec(t, zero_prox(), 0.1), costs, Vector::Zero(2), 0), InvalidSizeError);
  EXPECT_THROW(run(puda_spec(t, zero_prox(), 0.0), costs, Vector::Zero(2), 10), DomainError);
  EXPECT_THROW(run(puda_spec(t, zero_prox(), 0.1), costs, Vector::Zero(3), 10), ShapeError);
  EXPECT_THROW(run(puda_spec(t, zero_prox(), 0.1), costs, Vector::Zero(2), 10, 0), InvalidSizeError);
}

TEST(Run, Deterministic) {
  auto net = random_net(5, 28);
  auto costs = random_quadratic_cost(5, 3, 29);
  auto t = table1_matrices(AlgorithmId::ExactDiffusion, net.A);
  auto spec = puda_spec(t, l1_prox(0.02), 0.5 / costs.delta());
  spec.init = Block::Random(5, 3);
  auto a = run(spec, costs, Vector::Ones(3), 300);
  auto b = run(spec, costs, Vector::Ones(3), 300);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].rel_sq_error, b.rows[i].rel_sq_error);
}

TEST(Run, RelativeErrorFallsBackToAbsolute) {
  Block W = Block::Ones(2, 2);
  EXPECT_DOUBLE_EQ(rel_sq_error(W, Vector::Zero(2)), 4.0);
  EXPECT_DOUBLE_EQ(rel_sq_error(W, Vector::Ones(2)), 0.0);
  EXPECT_DOUBLE_EQ(rel_sq_error(Block::Zero(2, 2), Vector::Ones(2)), 2.0);  // summed over agents
}
