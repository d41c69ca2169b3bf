#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "ccodec/errors.hpp"
#include "ccodec/latent_control.hpp"
#include "fixtures.hpp"

using namespace ccodec;

namespace {

ShapTable make_table(const Matrix& values, double sigma = 1.0) {
  ShapTable t;
  t.bins = static_cast<int>(values.cols());
  t.min_count = 1;
  t.sigma = Vector::Constant(values.rows(), sigma);
  t.value = values;
  t.counts = Eigen::MatrixXi::Ones(values.rows(), values.cols());
  return t;
}

// Every final cell reachable by some bin assignment, by enumeration.
std::set<long> exhaustive_cells(const ShapTable& t, double res) {
  std::set<long> cells;
  std::vector<int> k(static_cast<std::size_t>(t.dims()), 0);
  while (true) {
    bool ok = true;
    long j = 0;
    for (int i = 0; i < t.dims(); ++i) {
      if (!t.populated(i, k[i])) ok = false;
      j += std::lround(t.value(i, k[i]) / res);
    }
    if (ok) cells.insert(j);
    int i = 0;
    while (i < t.dims() && ++k[i] == t.bins) k[i++] = 0;
    if (i == t.dims()) break;
  }
  return cells;
}

double sphere(const Vector& z) { return z.squaredNorm(); }

PopulationFitness rows_of(std::function<double(const Vector&)> f) {
  return [f](const Matrix& pop) {
    Vector out(pop.rows());
    for (Eigen::Index r = 0; r < pop.rows(); ++r) out(r) = f(pop.row(r).transpose());
    return out;
  };
}

Vector run_cma(const std::function<double(const Vector&)>& f, int d, int generations, std::uint64_t seed,
               double* best = nullptr) {
  const CmaParams p = CmaParams::defaults(d);
  CmaState s = CmaState::initial(Vector::Zero(d), 1.0);
  std::mt19937_64 rng(seed);
  double b = std::numeric_limits<double>::infinity();
  for (int g = 0; g < generations; ++g) b = std::min(b, cmaes_step(s, rows_of(f), p, rng).best_fitness);
  if (best) *best = b;
  return s.mean;
}

}  // namespace

TEST(Dp, TwoDimensionExample) {
  Matrix v(2, 3);
  v << 2.0, 0.0, -2.0,  //
      1.0, 0.0, -1.0;
  const DpTable dp = dp_build(make_table(v), {1.0, std::nullopt});
  EXPECT_TRUE(dp.reachable(0, 0));
  ASSERT_TRUE(dp.reachable(2, 3));
  EXPECT_EQ(dp.backtrack(3), (std::vector<int>{0, 0}));  // bin -1 on both dimensions
  const DpGeneration g = dp_generate(dp, 0.0, 3.0);
  EXPECT_EQ(g.cell, 3);
  EXPECT_DOUBLE_EQ(g.predicted, 3.0);
  EXPECT_FALSE(g.clamped);
  EXPECT_EQ(exhaustive_cells(make_table(v), 1.0), (std::set<long>{-3, -2, -1, 0, 1, 2, 3}));
}

TEST(Dp, TargetAtBaseChoosesCentreBins) {
  std::mt19937_64 rng(1);
  Matrix v = fixtures::random_matrix(5, 7, rng, -1.0, 1.0);
  v.col(3).setZero();
  ShapTable t = make_table(v, 2.0);
  t.base_value = 4.0;
  const DpGeneration g = dp_generate(dp_build(t), 4.0, 4.0);
  EXPECT_EQ(g.bins, std::vector<int>(5, 3));
  EXPECT_TRUE(g.z.isZero(1e-15));
  EXPECT_DOUBLE_EQ(g.predicted, 4.0);
}

TEST(Dp, BacktrackingIsSound) {
  std::mt19937_64 rng(2);
  const ShapTable t = make_table(fixtures::random_matrix(6, 9, rng, -3.0, 3.0));
  const DpTable dp = dp_build(t);
  int checked = 0;
  for (long j = dp.lo; j <= dp.hi; ++j) {
    if (!dp.reachable(dp.dims, j)) continue;
    const auto bins = dp.backtrack(j);
    long cells = 0;
    double raw = 0.0;
    for (int i = 0; i < t.dims(); ++i) {
      cells += std::lround(t.value(i, bins[i]) / dp.resolution);
      raw += t.value(i, bins[i]);
    }
    EXPECT_EQ(cells, j);
    EXPECT_NEAR(raw, dp.cell(dp.dims, j).sum, 1e-12);
    EXPECT_LE(std::abs(raw - j * dp.resolution), 0.5 * t.dims() * dp.resolution + 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Dp, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 1 + trial % 4;
    const int bins = 2 + trial % 6;
    ShapTable t = make_table(fixtures::random_matrix(d, bins, rng, -2.0, 2.0));
    for (int i = 0; i < d; ++i) {
      if (bins > 2 && trial % 3 == 0) t.counts(i, trial % bins) = 0;  // some empty cells
    }
    const double res = trial % 2 ? 0.05 : 0.31;
    const DpTable dp = dp_build(t, {res, std::nullopt});
    std::set<long> cells;
    for (long j = dp.lo; j <= dp.hi; ++j) {
      if (dp.reachable(dp.dims, j)) cells.insert(j);
    }
    EXPECT_EQ(cells, exhaustive_cells(t, res)) << "trial " << trial;
  }
}

TEST(Dp, ClampsToExtremeCell) {
  Matrix v(2, 3);
  v << 2.0, 0.0, -2.0,  //
      1.0, 0.0, -1.0;
  const DpTable dp = dp_build(make_table(v), {1.0, std::nullopt});
  const DpGeneration g = dp_generate(dp, 0.5, 100.0);
  EXPECT_TRUE(g.clamped);
  EXPECT_EQ(g.cell, 3);
  EXPECT_DOUBLE_EQ(g.gap, 100.0 - 3.5);
  const DpGeneration low = dp_generate(dp, 0.0, -9.0);
  EXPECT_TRUE(low.clamped);
  EXPECT_EQ(low.cell, -3);
}

TEST(Dp, NarrowBoundsWidenOnceThenOverflow) {
  Matrix v(2, 3);
  v << 2.0, 0.0, -2.0,  //
      1.0, 0.0, -1.0;
  const DpTable widened = dp_build(make_table(v), {1.0, std::pair{-1.0, 1.0}});
  EXPECT_TRUE(widened.reachable(2, 3));
  EXPECT_TRUE(widened.reachable(2, -3));
  EXPECT_THROW(dp_build(make_table(v), {1.0, std::pair{1.0, 2.0}}), GridOverflow);
}

TEST(Dp, EmptyDimensionIsAnError) {
  ShapTable t = make_table(Matrix::Ones(2, 3));
  t.counts.row(1).setZero();
  EXPECT_THROW(dp_build(t), EmptyTable);
}

// ---------------------------------------------------------------------------

TEST(Cma, ParameterValidation) {
  EXPECT_THROW(CmaParams::with(3, 2, 3, Vector::Constant(3, 1.0 / 3.0)), ConfigError);
  EXPECT_THROW(CmaParams::with(3, 4, 2, (Vector(2) << 1.5, -0.5).finished()), ConfigError);
  EXPECT_THROW(CmaParams::with(3, 4, 2, (Vector(2) << 0.5, 0.6).finished()), ConfigError);
  const CmaParams p = CmaParams::defaults(5);
  EXPECT_EQ(p.lambda, 8);
  EXPECT_EQ(p.mu, 4);
  EXPECT_NEAR(p.weights.sum(), 1.0, 1e-12);
  EXPECT_TRUE((p.weights.head(3).array() > p.weights.tail(3).array()).all());
}

TEST(Cma, SingleEliteMeanIsBestPoint) {
  const CmaParams p = CmaParams::with(3, 6, 1, Vector::Ones(1));
  CmaState s = CmaState::initial(Vector::Constant(3, 2.0), 0.7);
  std::mt19937_64 rng(4);
  for (int g = 0; g < 5; ++g) {
    const CmaStep step = cmaes_step(s, rows_of(sphere), p, rng);
    EXPECT_TRUE(s.mean.isApprox(step.best, 1e-14));
    EXPECT_EQ(step.best_fitness, sphere(step.best));
  }
}

TEST(Cma, SphereConvergesWithinBudget) {
  double best = 0.0;
  run_cma(sphere, 5, 300, 5, &best);
  EXPECT_LT(best, 1e-6);
}

TEST(Cma, TranslatingTheOptimumTranslatesTheMean) {
  const Vector shift = (Vector(5) << 0.5, -0.25, 0.75, 0.1, -0.6).finished();
  const Vector m0 = run_cma(sphere, 5, 300, 6);
  const Vector m1 = run_cma([&](const Vector& z) { return (z - shift).squaredNorm(); }, 5, 300, 6);
  EXPECT_LT((m1 - m0 - shift).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Cma, CovarianceStaysPositiveDefinite) {
  const int d = 6;
  const CmaParams p = CmaParams::defaults(d);
  CmaState s = CmaState::initial(Vector::Zero(d), 1.0);
  std::mt19937_64 rng(7);
  auto smooth = [](const Vector& z) {
    double f = 0.0;
    for (Eigen::Index i = 0; i + 1 < z.size(); ++i) f += std::sin(z(i)) * z(i + 1) + 0.1 * z(i) * z(i);
    return f + std::cos(z.sum());
  };
  for (int g = 0; g < 100; ++g) {
    cmaes_step(s, rows_of(smooth), p, rng);
    EXPECT_LT((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.cov);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
    EXPECT_GT(s.sigma, 0.0);
  }
  EXPECT_EQ(s.generation, 100);
}

TEST(Cma, DegenerateCovarianceIsRegularizedAndFlagged) {
  const CmaParams p = CmaParams::defaults(3);
  CmaState s = CmaState::initial(Vector::Zero(3), 1.0);
  s.cov(2, 2) = 0.0;
  std::mt19937_64 rng(8);
  const CmaStep step = cmaes_step(s, rows_of(sphere), p, rng);
  EXPECT_TRUE(step.regularized);
  EXPECT_EQ(s.regularizations, 1);
}

TEST(Cma, ObjectiveFitnesses) {
  DecodedGraph dg;
  dg.edge_probs = Matrix::Constant(3, 3, 0.5);
  dg.node_scores = Matrix::Zero(3, kNumClasses);
  Adjacency target(3);
  EXPECT_NEAR(full_adjacency_fitness(dg, target), std::log(2.0), 1e-12);
  dg.edge_probs = Matrix::Constant(3, 3, 0.9);
  dg.edge_probs.diagonal().setZero();
  // decode thresholds to the complete graph: in/out degree 2 per node
  EXPECT_DOUBLE_EQ(degree_stats_fitness(dg, target, 0.5), 12.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) target.set(i, j, i != j);
  }
  EXPECT_DOUBLE_EQ(degree_stats_fitness(dg, target, 0.5), 0.0);
}

TEST(Cma, GenerateKeepsBestSoFar) {
  const VaeModel model(fixtures::mini_config());
  std::mt19937_64 rng(9);
  const Matrix z0 = fixtures::random_matrix(1, 4, rng);
  const SubgraphSample target = discretize(model.decode_batch(z0)[0], 0.5);
  CmaConfig cfg;
  cfg.generations = 25;
  cfg.seed = 3;
  for (CmaObjective o : {CmaObjective::kFullAdjacency, CmaObjective::kDegreeStats}) {
    const CmaReport r = cmaes_generate(model, target, o, cfg);
    ASSERT_EQ(r.best_fitness_trace.size(), 25U);
    for (std::size_t g = 1; g < r.best_fitness_trace.size(); ++g) {
      EXPECT_LE(r.best_fitness_trace[g], r.best_fitness_trace[g - 1]);
    }
    EXPECT_EQ(r.z_star.size(), 4);
    const auto j = r.to_json();
    for (const char* key : {"objective", "generations", "best_fitness_trace", "final_auc", "final_acc", "z_star",
                            "zero_baseline_acc"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
  }
}

TEST(Cma, EmptyTargetReportsSentinelAuc) {
  const VaeModel model(fixtures::mini_config());
  SubgraphSample target = discretize(model.decode_batch(Matrix::Zero(1, 4))[0], 0.5);
  target.adjacency = Adjacency(target.node_count());
  CmaConfig cfg;
  cfg.generations = 5;
  const CmaReport r = cmaes_generate(model, target, CmaObjective::kFullAdjacency, cfg);
  EXPECT_FALSE(r.final_auc);
  EXPECT_TRUE(r.to_json().at("final_auc").is_null());
  EXPECT_DOUBLE_EQ(r.zero_baseline_acc, 1.0);
}
