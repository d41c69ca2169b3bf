#pragma once

// Exact graph statistics on binary adjacency matrices and the MMD-based
// generation metrics built on them.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ccodec/data_ingest.hpp"
#include "ccodec/graph.hpp"

namespace ccodec {

inline constexpr int kNumOrbits = 15;
inline constexpr double kReciprocityScale = 1000.0;
inline constexpr double kBetweennessScale = 100.0;
inline constexpr double kNonNeuronalScale = 100.0;

int edge_count(const Adjacency& a);

// 1000 * (unordered reciprocal pairs) / (ordered one-way edges); nullopt when
// the graph has no one-way edge.
std::optional<double> reciprocity(const Adjacency& a);

// Raw directed betweenness per node (sum over s != v != t of sigma_st(v) / sigma_st).
std::vector<double> betweenness(const Adjacency& a);
// Sum over nodes of betweenness / ((n-1)(n-2)), times 100. Zero for n < 3.
double total_betweenness(const Adjacency& a);

double non_neuronal_count(std::span<const int> labels);

struct FeatureVector {
  double edge_count = 0.0;
  std::optional<double> reciprocity_scaled;
  double betweenness_scaled = 0.0;
  double non_neuronal_scaled = 0.0;
};

FeatureVector feature_vector(const SubgraphSample& sample);

enum class DegreeMode { kIn, kOut, kTotal };

std::vector<int> degrees(const Adjacency& a, DegreeMode mode);
// Node counts per degree value; length n for in/out, 2n - 1 for total.
std::vector<int> degree_histogram(const Adjacency& a, DegreeMode mode);

// Local clustering on A | A^T; zero for nodes of degree < 2.
std::vector<double> clustering_values(const Adjacency& a);

// Per-node counts over the 15 orbits of connected graphlets with 2-4 nodes,
// on A | A^T. Orbit numbering: 0 edge; 1,2 path end/middle; 3 triangle;
// 4,5 4-path end/inner; 6,7 star leaf/centre; 8 4-cycle; 9,10,11 paw
// pendant/degree-2/degree-3; 12,13 diamond degree-2/degree-3; 14 K4.
using OrbitVector = std::array<std::int64_t, kNumOrbits>;
std::vector<OrbitVector> orbit_counts(const Adjacency& a);

// ---- MMD -------------------------------------------------------------------

enum class MmdEstimator { kBiased, kUnbiased };

// Squared MMD under k(x, y) = exp(-|x - y|^2 / (2 bandwidth^2)). Vectors of
// unequal length are zero-padded. With `normalize`, each vector is divided by
// its sum first (histograms become distributions). Raises InsufficientSamples.
double mmd(const std::vector<Eigen::VectorXd>& set_a, const std::vector<Eigen::VectorXd>& set_b,
           double bandwidth, MmdEstimator estimator = MmdEstimator::kUnbiased,
           bool normalize = false);

// Median pairwise distance within `set` (after optional normalization);
// 1 when there are no pairs or the median is zero.
double median_bandwidth(const std::vector<Eigen::VectorXd>& set, bool normalize = false);

struct GraphDescriptor {
  Eigen::VectorXd degree_histogram;      // total degree on the directed graph
  Eigen::VectorXd clustering_histogram;  // 100 bins over [0, 1]
  Eigen::VectorXd mean_orbit_counts;     // 15 entries
};

// `exclude_isolated` drops degree-0 nodes from the per-node statistics.
GraphDescriptor describe(const SubgraphSample& sample, bool exclude_isolated = false);

struct MmdOptions {
  MmdEstimator estimator = MmdEstimator::kUnbiased;
  bool exclude_isolated = false;
  // Non-positive: median heuristic on the reference descriptors.
  double bandwidth = 0.0;
};

struct GenerationReport {
  double deg_mmd = 0.0;
  double clus_mmd = 0.0;
  double orbit_mmd = 0.0;
  double deg_bandwidth = 0.0;
  double clus_bandwidth = 0.0;
  double orbit_bandwidth = 0.0;
};

GenerationReport generation_mmd_report(const std::vector<SubgraphSample>& generated,
                                       const std::vector<SubgraphSample>& reference,
                                       const MmdOptions& options = {});

}  // namespace ccodec
