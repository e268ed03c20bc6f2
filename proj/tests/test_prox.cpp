#include "puda/prox.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace puda;

namespace {

Vector random_vector(Eigen::Index M, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(M);
  for (Eigen::Index j = 0; j < M; ++j) v(j) = g(rng);
  return v;
}

// 0 in mu dR(z) + (z - x) for R = ||D z - b||_1 when D has disjoint row
// supports: (x - z)/mu must equal D' s with s_r = sign(D z - b)_r or in [-1, 1].
void expect_pair_optimality(const SparsePairMatrix& D, const Vector& b, const Vector& x, const Vector& z, double mu) {
  Vector g = (x - z) / mu;
  Vector r = D.multiply(z) - b;
  std::vector<bool> covered(static_cast<std::size_t>(x.size()), false);
  for (int i = 0; i < D.rows(); ++i) {
    const RowPair& row = D.row(i);
    double s = g(row.col_a) / row.val_a;
    covered[static_cast<std::size_t>(row.col_a)] = true;
    if (row.col_b >= 0) {
      EXPECT_NEAR(g(row.col_b), s * row.val_b, 1e-9) << "row " << i;
      covered[static_cast<std::size_t>(row.col_b)] = true;
    }
    if (std::abs(r(i)) > 1e-9) {
      EXPECT_NEAR(s, r(i) > 0 ? 1.0 : -1.0, 1e-9) << "row " << i;
    } else {
      EXPECT_LE(std::abs(s), 1.0 + 1e-9) << "row " << i;
    }
  }
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (!covered[static_cast<std::size_t>(j)]) {
      EXPECT_NEAR(g(j), 0.0, 1e-12);
    }
  }
}

}  // namespace

// --- prox_l1 ------------------------------------------------------------------

TEST(ProxL1, ClosedFormExamples) {
  EXPECT_EQ(prox_l1(Vector{{3.0}}, 1.0)(0), 2.0);
  EXPECT_EQ(prox_l1(Vector{{-0.5}}, 1.0)(0), 0.0);
  EXPECT_EQ(prox_l1(Vector{{-3.0}}, 1.0)(0), -2.0);
}

TEST(ProxL1, MatchesGridMinimization) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-4.0, 4.0), uk(0.1, 2.0);
  const double h = 1e-4;
  for (int n = 0; n < 40; ++n) {
    double x = ux(rng), k = uk(rng);
    double best = 0.0, fbest = INFINITY;
    for (double z = -6.0; z <= 6.0; z += h) {
      double f = std::abs(z) + (z - x) * (z - x) / (2.0 * k);
      if (f < fbest) {
        fbest = f;
        best = z;
      }
    }
    EXPECT_NEAR(prox_l1(Vector{{x}}, k)(0), best, h);
  }
}

TEST(ProxL1, OperatorScalesWithMu) {
  auto p = l1_prox(0.5);
  EXPECT_TRUE(p.apply(Vector{{3.0, -0.2}}, 2.0).isApprox(Vector{{2.0, 0.0}}));
  EXPECT_DOUBLE_EQ(p.value(Vector{{3.0, -1.0}}), 2.0);
  EXPECT_THROW(p.apply(Vector{{1.0}}, 0.0), DomainError);
  EXPECT_THROW(l1_prox(-1.0), DomainError);
}

TEST(ZeroProx, IdentityForAllMu) {
  auto p = zero_prox();
  EXPECT_TRUE(p.is_identity());
  Vector x{{1.5, -2.0, 0.25}};
  for (double mu : {1e-6, 0.3, 1.0, 1e6}) EXPECT_EQ((p.apply(x, mu) - x).norm(), 0.0);
  EXPECT_EQ(p.descriptor(), "zero");
}

// --- build_counterexample -------------------------------------------------------

TEST(Counterexample, SmallMatrices) {
  const double r2 = std::sqrt(2.0);
  auto p2 = build_counterexample(2);
  EXPECT_TRUE(p2.D1.dense().isApprox(Matrix{{r2, 0.0}}, 0.0));
  EXPECT_TRUE(p2.D2.dense().isApprox(Matrix{{1.0, -1.0}}, 0.0));
  auto p4 = build_counterexample(4);
  EXPECT_TRUE(p4.D1.dense().isApprox(Matrix{{r2, 0, 0, 0}, {0, 1, -1, 0}}, 0.0));
  EXPECT_TRUE(p4.D2.dense().isApprox(Matrix{{1, -1, 0, 0}, {0, 0, 1, -1}}, 0.0));
  EXPECT_EQ(p4.b1, (Vector{{1.0, 0.0}}));
}

TEST(Counterexample, RowOrthogonality) {
  for (int M : {2, 4, 6, 10, 2000}) {
    auto p = build_counterexample(M);
    for (const SparsePairMatrix* D : {&p.D1, &p.D2}) {
      Matrix Dd = D->dense();
      EXPECT_LE((Dd * Dd.transpose() - 2.0 * Matrix::Identity(M / 2, M / 2)).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(Counterexample, SparseProductsMatchDense) {
  std::mt19937_64 rng(4);
  auto p = build_counterexample(12);
  Vector x = random_vector(12, rng);
  Vector u = random_vector(6, rng);
  for (const SparsePairMatrix* D : {&p.D1, &p.D2}) {
    EXPECT_LE((D->multiply(x) - D->dense() * x).norm(), 1e-14);
    EXPECT_LE((D->multiply_transpose(u) - D->dense().transpose() * u).norm(), 1e-14);
  }
}

TEST(Counterexample, OddDimensionRejected) {
  EXPECT_THROW(build_counterexample(3), InvalidSizeError);
  EXPECT_THROW(build_counterexample(0), InvalidSizeError);
}

TEST(Counterexample, Values) {
  auto p = build_counterexample(4);
  Vector w{{1.0, 2.0, -1.0, 0.5}};
  EXPECT_NEAR(counterexample_value(CounterexampleTerm::R1, p, w), std::abs(std::sqrt(2.0) - 1.0) + 3.0, 1e-15);
  EXPECT_NEAR(counterexample_value(CounterexampleTerm::R2, p, w), 1.0 + 1.5, 1e-15);
}

// --- prox_counterexample ----------------------------------------------------------

TEST(ProxCounterexample, HandDerivedExamples) {
  auto p = build_counterexample(2);
  EXPECT_LE((prox_counterexample(CounterexampleTerm::R2, p, Vector{{1.0, 0.0}}, 1.0) - Vector{{0.5, 0.5}}).norm(), 1e-10);
  EXPECT_LE((prox_counterexample(CounterexampleTerm::R2, p, Vector{{5.0, 0.0}}, 1.0) - Vector{{4.0, 1.0}}).norm(), 1e-10);
  EXPECT_LE((prox_counterexample(CounterexampleTerm::R1, p, Vector{{0.0, 0.0}}, 1.0) - Vector{{std::sqrt(2.0) / 2, 0.0}})
                .norm(),
            1e-10);
}

TEST(ProxCounterexample, SubgradientOptimality) {
  std::mt19937_64 rng(6);
  for (int M : {2, 4, 8, 30}) {
    auto p = build_counterexample(M);
    for (int n = 0; n < 40; ++n) {
      Vector x = random_vector(M, rng, 2.0);
      double mu = 0.05 + std::abs(random_vector(1, rng)(0));
      expect_pair_optimality(p.D1, p.b1, x, prox_counterexample(CounterexampleTerm::R1, p, x, mu), mu);
      expect_pair_optimality(p.D2, Vector::Zero(M / 2), x, prox_counterexample(CounterexampleTerm::R2, p, x, mu), mu);
    }
  }
}

TEST(ProxCounterexample, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  for (int M : {2, 4, 6}) {
    auto p = build_counterexample(M);
    for (int n = 0; n < 50; ++n) {
      auto which = n % 2 ? CounterexampleTerm::R2 : CounterexampleTerm::R1;
      Vector x = random_vector(M, rng, 2.0);
      double mu = 0.2 + std::abs(random_vector(1, rng)(0));
      auto bf = brute_force_prox([&](const Vector& z) { return counterexample_value(which, p, z); }, x, mu);
      EXPECT_LE((prox_counterexample(which, p, x, mu) - bf.z).cwiseAbs().maxCoeff(), 1e-3) << "M=" << M << " n=" << n;
    }
  }
}

TEST(ProxCounterexample, ShapeAndDomainErrors) {
  auto p = build_counterexample(4);
  EXPECT_THROW(prox_counterexample(CounterexampleTerm::R1, p, Vector::Zero(3), 1.0), ShapeError);
  EXPECT_THROW(prox_counterexample(CounterexampleTerm::R2, p, Vector::Zero(4), 0.0), DomainError);
}

// --- summed regularizer -------------------------------------------------------------

TEST(ChainProx, MatchesBruteForce) {
  std::mt19937_64 rng(8);
  for (int M : {2, 4, 6, 8}) {
    auto pair = std::make_shared<const CounterexamplePair>(build_counterexample(M));
    for (double weight : {0.5, 1.0}) {
      auto op = counterexample_sum_prox(pair, weight);
      for (int n = 0; n < 20; ++n) {
        Vector x = random_vector(M, rng, 1.5);
        double mu = 0.1 + std::abs(random_vector(1, rng)(0));
        auto R = [&](const Vector& z) {
          return weight * (counterexample_value(CounterexampleTerm::R1, *pair, z) +
                           counterexample_value(CounterexampleTerm::R2, *pair, z));
        };
        auto bf = brute_force_prox(R, x, mu);
        EXPECT_LE((op.apply(x, mu) - bf.z).cwiseAbs().maxCoeff(), 1e-3) << "M=" << M << " n=" << n;
      }
    }
  }
}

TEST(ChainProx, ObjectiveNotBeatenByPerturbations) {
  // Exactness at larger M: no small coordinate or block move lowers the objective.
  std::mt19937_64 rng(9);
  auto pair = std::make_shared<const CounterexamplePair>(build_counterexample(40));
  auto op = counterexample_sum_prox(pair, 0.5);
  auto F = [&](const Vector& z, const Vector& x, double mu) {
    return 0.5 * (counterexample_value(CounterexampleTerm::R1, *pair, z) +
                  counterexample_value(CounterexampleTerm::R2, *pair, z)) +
           (z - x).squaredNorm() / (2.0 * mu);
  };
  for (int n = 0; n < 10; ++n) {
    Vector x = random_vector(40, rng, 0.3);
    const double mu = 0.4;
    Vector z = op.apply(x, mu);
    const double f0 = F(z, x, mu);
    for (int a = 0; a < 40; ++a) {
      for (int b = a; b < 40; ++b) {
        for (double h : {1e-5, -1e-5}) {
          Vector zp = z;
          zp.segment(a, b - a + 1).array() += h;
          EXPECT_GE(F(zp, x, mu), f0 - 1e-13);
        }
      }
    }
  }
}

TEST(ChainProx, ZeroLinkIsAnchorOnly) {
  Vector x{{0.0, 3.0}};
  Vector z = prox_anchored_chain(x, 1.0, 0.5, 0.0);
  EXPECT_NEAR(z(0), 0.5, 1e-15);  // |z-0.5| + (z-0)^2/2 has its kink-minimum at 0.5
  EXPECT_EQ(z(1), 3.0);
}

// --- nonexpansiveness -----------------------------------------------------------------

TEST(ProxOperators, Nonexpansive) {
  std::mt19937_64 rng(10);
  auto pair = std::make_shared<const CounterexamplePair>(build_counterexample(8));
  std::vector<ProxOperator> ops = {zero_prox(), l1_prox(0.3), counterexample_prox(CounterexampleTerm::R1, pair),
                                   counterexample_prox(CounterexampleTerm::R2, pair, 2.0),
                                   counterexample_sum_prox(pair, 0.5)};
  for (const auto& op : ops) {
    for (int n = 0; n < 1000; ++n) {
      Vector x = random_vector(8, rng, 2.0), y = random_vector(8, rng, 2.0);
      double mu = 0.01 + std::abs(random_vector(1, rng)(0));
      EXPECT_LE((op.apply(x, mu) - op.apply(y, mu)).norm(), (x - y).norm() + 1e-12) << op.descriptor();
    }
  }
}

// --- brute_force_prox ---------------------------------------------------------------------

TEST(BruteForce, KnownAnswers) {
  auto abs1 = [](const Vector& z) { return std::abs(z(0)); };
  EXPECT_NEAR(brute_force_prox(abs1, Vector{{3.0}}, 1.0).z(0), 2.0, 1e-6);
  Vector x{{0.3, -1.2, 2.0}};
  auto zero = [](const Vector&) { return 0.0; };
  EXPECT_LE((brute_force_prox(zero, x, 0.7).z - x).norm(), 1e-8);
}

TEST(BruteForce, ReportsResidual) {
  auto abs1 = [](const Vector& z) { return z.lpNorm<1>(); };
  auto r = brute_force_prox(abs1, Vector{{3.0, 0.2}}, 1.0);
  EXPECT_LE(r.residual, 1e-4);
}

TEST(BruteForce, FailsLoudlyOnNonFiniteObjective) {
  auto R = [](const Vector& z) { return z(0) > 0.0 ? std::nan("") : 0.0; };
  EXPECT_THROW(brute_force_prox(R, Vector{{1.0, 0.5}}, 1.0, 50), OracleFailureError);
}

TEST(BruteForce, RejectsLargeDimension) {
  auto zero = [](const Vector&) { return 0.0; };
  EXPECT_THROW(brute_force_prox(zero, Vector::Zero(9), 1.0), InvalidSizeError);
}
