#include <gtest/gtest.h>

#include <random>

#include "ccodec/errors.hpp"
#include "ccodec/graph_stats.hpp"
#include "oracles.hpp"

using namespace ccodec;

namespace {

Adjacency from_edges(int n, std::initializer_list<std::pair<int, int>> edges) {
  Adjacency a(n);
  for (auto [i, j] : edges) a.set(i, j);
  return a;
}

Adjacency permuted(const Adjacency& a, const std::vector<int>& perm) {
  Adjacency b(a.size());
  for (int i = 0; i < a.size(); ++i)
    for (int j = 0; j < a.size(); ++j)
      if (a(i, j)) b.set(perm[i], perm[j]);
  return b;
}

}  // namespace

TEST(EdgeCount, Basics) {
  EXPECT_EQ(edge_count(Adjacency(100)), 0);
  EXPECT_EQ(edge_count(from_edges(3, {{0, 1}, {1, 0}, {0, 2}, {2, 0}, {1, 2}, {2, 1}})), 6);
  std::mt19937_64 rng(3);
  const Adjacency a = oracle::random_graph(100, 0.05, rng);
  int recount = 0;
  for (int j = 99; j >= 0; --j)
    for (int i = 99; i >= 0; --i) recount += a(i, j);
  EXPECT_EQ(edge_count(a), recount);
}

TEST(Reciprocity, Examples) {
  EXPECT_DOUBLE_EQ(*reciprocity(from_edges(3, {{0, 1}, {1, 0}, {0, 2}})), 1000.0);
  EXPECT_DOUBLE_EQ(*reciprocity(from_edges(3, {{0, 1}, {1, 2}})), 0.0);
  EXPECT_FALSE(reciprocity(from_edges(3, {{0, 1}, {1, 0}})).has_value());
  EXPECT_FALSE(reciprocity(Adjacency(5)).has_value());
}

TEST(Betweenness, PathOfThree) {
  const Adjacency a = from_edges(3, {{0, 1}, {1, 2}});
  const auto cb = betweenness(a);
  EXPECT_DOUBLE_EQ(cb[1], 1.0);
  EXPECT_DOUBLE_EQ(total_betweenness(a), 50.0);
  EXPECT_DOUBLE_EQ(total_betweenness(Adjacency(10)), 0.0);
  EXPECT_DOUBLE_EQ(total_betweenness(from_edges(2, {{0, 1}})), 0.0);
}

TEST(Betweenness, MatchesOraclesOnSmallAndMediumGraphs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const Adjacency a = oracle::random_graph(2 + trial % 4, 0.4, rng);
    const auto ours = betweenness(a);
    const auto ref = oracle::betweenness_by_paths(a);
    for (std::size_t v = 0; v < ours.size(); ++v) EXPECT_NEAR(ours[v], ref[v], 1e-12);
  }
  for (int trial = 0; trial < 5; ++trial) {
    const Adjacency a = oracle::random_graph(20, 0.15, rng);
    const auto ours = betweenness(a);
    const auto ref = oracle::betweenness_by_counting(a);
    for (std::size_t v = 0; v < ours.size(); ++v) EXPECT_TRUE(oracle::close(ours[v], ref[v], 1e-9));
  }
}

TEST(NonNeuronal, Scaling) {
  std::vector<int> labels(100, 4);
  EXPECT_DOUBLE_EQ(non_neuronal_count(labels), 10000.0);
  std::fill(labels.begin(), labels.end(), 1);
  EXPECT_DOUBLE_EQ(non_neuronal_count(labels), 0.0);
  std::fill(labels.begin() + 81, labels.end(), 4);
  EXPECT_DOUBLE_EQ(non_neuronal_count(labels), 1900.0);
}

TEST(FeatureVector, AllPaddingAndSmallGraph) {
  const auto empty = pad_subgraph({}, {});
  const auto f = feature_vector(empty);
  EXPECT_EQ(f.edge_count, 0.0);
  EXPECT_FALSE(f.reciprocity_scaled.has_value());
  EXPECT_EQ(f.betweenness_scaled, 0.0);
  EXPECT_EQ(f.non_neuronal_scaled, 10000.0);

  const auto s = pad_subgraph({0, 1, 2}, {{0, 1}, {1, 0}, {0, 2}});
  const auto g = feature_vector(s);
  EXPECT_EQ(g.edge_count, 3.0);
  EXPECT_DOUBLE_EQ(*g.reciprocity_scaled, 1000.0);
  EXPECT_EQ(g.non_neuronal_scaled, 9700.0);
  // Only 1 -> 0 -> 2 routes through a middle node.
  const double expected = oracle::total_betweenness(oracle::betweenness_by_counting(s.adjacency));
  EXPECT_NEAR(g.betweenness_scaled, expected, 1e-12);
  EXPECT_NEAR(g.betweenness_scaled, 100.0 / (99.0 * 98.0), 1e-15);
}

TEST(Degrees, Histograms) {
  const Adjacency zero(7);
  for (auto mode : {DegreeMode::kIn, DegreeMode::kOut, DegreeMode::kTotal})
    EXPECT_EQ(degree_histogram(zero, mode)[0], 7);
  const Adjacency k3 = from_edges(3, {{0, 1}, {1, 0}, {0, 2}, {2, 0}, {1, 2}, {2, 1}});
  EXPECT_EQ(degree_histogram(k3, DegreeMode::kOut)[2], 3);
  std::mt19937_64 rng(5);
  const Adjacency a = oracle::random_graph(30, 0.1, rng);
  const auto in = degrees(a, DegreeMode::kIn);
  const auto out = degrees(a, DegreeMode::kOut);
  const auto tot = degrees(a, DegreeMode::kTotal);
  for (int i = 0; i < 30; ++i) EXPECT_EQ(tot[i], in[i] + out[i]);
}

TEST(Clustering, TriangleStarRandom) {
  for (double c : clustering_values(from_edges(3, {{0, 1}, {1, 2}, {2, 0}}))) EXPECT_DOUBLE_EQ(c, 1.0);
  EXPECT_DOUBLE_EQ(clustering_values(from_edges(4, {{0, 1}, {0, 2}, {3, 0}}))[0], 0.0);
  std::mt19937_64 rng(8);
  const Adjacency a = oracle::random_graph(15, 0.2, rng);
  const auto ours = clustering_values(a);
  const auto ref = oracle::clustering(a);
  for (int i = 0; i < 15; ++i) EXPECT_NEAR(ours[i], ref[i], 1e-12);
}

TEST(Orbits, DegreeTriangleAndRandom) {
  const auto tri = orbit_counts(from_edges(3, {{0, 1}, {1, 2}, {2, 0}}));
  for (const auto& o : tri) {
    EXPECT_EQ(o[0], 2);
    EXPECT_EQ(o[3], 1);
  }
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 4; ++trial) {
    const Adjacency a = oracle::random_graph(12, 0.15 + 0.05 * trial, rng);
    const auto ours = orbit_counts(a);
    const auto ref = oracle::orbit_counts(a);
    const auto deg = degrees(a.symmetrized(), DegreeMode::kOut);
    for (int i = 0; i < 12; ++i) {
      EXPECT_EQ(ours[i], ref[i]) << "node " << i;
      EXPECT_EQ(ours[i][0], deg[i]);
    }
  }
}

TEST(Statistics, PermutationCovariance) {
  std::mt19937_64 rng(2);
  const Adjacency a = oracle::random_graph(14, 0.2, rng);
  std::vector<int> perm(14);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Adjacency b = permuted(a, perm);
  EXPECT_EQ(edge_count(a), edge_count(b));
  EXPECT_EQ(reciprocity(a), reciprocity(b));
  EXPECT_NEAR(total_betweenness(a), total_betweenness(b), 1e-9);
  const auto ca = clustering_values(a), cb = clustering_values(b);
  const auto oa = orbit_counts(a), ob = orbit_counts(b);
  const auto ba = betweenness(a), bb = betweenness(b);
  for (int i = 0; i < 14; ++i) {
    EXPECT_DOUBLE_EQ(ca[i], cb[perm[i]]);
    EXPECT_EQ(oa[i], ob[perm[i]]);
    EXPECT_NEAR(ba[i], bb[perm[i]], 1e-9);
  }
}

TEST(Mmd, IdenticalSetsClosedFormAndSymmetry) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::vector<Eigen::VectorXd> x;
  for (int i = 0; i < 6; ++i) x.push_back(Eigen::VectorXd::NullaryExpr(4, [&] { return n01(rng); }));
  EXPECT_LT(std::abs(mmd(x, x, 1.3, MmdEstimator::kBiased)), 1e-12);

  const double a = 0.7, sigma = 0.9;
  std::vector<Eigen::VectorXd> zeros(2, Eigen::VectorXd::Zero(1)), as(2, Eigen::VectorXd::Constant(1, a));
  EXPECT_NEAR(mmd(zeros, as, sigma, MmdEstimator::kBiased),
              2.0 - 2.0 * std::exp(-a * a / (2 * sigma * sigma)), 1e-12);

  std::vector<Eigen::VectorXd> y;
  for (int i = 0; i < 5; ++i) y.push_back(Eigen::VectorXd::NullaryExpr(3, [&] { return n01(rng) + 0.5; }));
  for (auto est : {MmdEstimator::kBiased, MmdEstimator::kUnbiased}) {
    EXPECT_NEAR(mmd(x, y, 1.1, est), mmd(y, x, 1.1, est), 1e-14);
    auto xr = x;
    std::reverse(xr.begin(), xr.end());
    EXPECT_NEAR(mmd(x, y, 1.1, est), mmd(xr, y, 1.1, est), 1e-14);
  }
  EXPECT_THROW(mmd({x[0]}, y, 1.0, MmdEstimator::kUnbiased), InsufficientSamples);
}

TEST(Mmd, GenerationReport) {
  std::mt19937_64 rng(9);
  std::vector<SubgraphSample> ref;
  for (int k = 0; k < 4; ++k) {
    std::vector<int> labels(90, 1);
    std::vector<std::pair<int, int>> edges;
    std::bernoulli_distribution coin(0.08);
    for (int i = 0; i < 90; ++i)
      for (int j = 0; j < 90; ++j)
        if (i != j && coin(rng)) edges.emplace_back(i, j);
    ref.push_back(pad_subgraph(labels, edges));
  }
  MmdOptions biased{MmdEstimator::kBiased};
  const auto self = generation_mmd_report(ref, ref, biased);
  EXPECT_LT(std::abs(self.deg_mmd), 1e-12);
  EXPECT_LT(std::abs(self.clus_mmd), 1e-12);
  EXPECT_LT(std::abs(self.orbit_mmd), 1e-12);

  std::vector<SubgraphSample> empty(3, pad_subgraph({}, {}));
  const auto r = generation_mmd_report(empty, ref, biased);
  EXPECT_GT(r.deg_mmd, 0.0);
  EXPECT_GT(r.clus_mmd, 0.0);
  EXPECT_GT(r.orbit_mmd, 0.0);
}
