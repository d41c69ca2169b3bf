#pragma once

// Controlled generation in latent space: a knapsack-style dynamic program
// over binned Shapley contributions, and CMA-ES search against a target graph.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccodec/explain.hpp"
#include "ccodec/vae_model.hpp"

namespace ccodec {

// ---- dynamic program ------------------------------------------------------

// Contributions are quantized to the grid (round(shap / resolution) cells
// each), so cell j holds paths whose quantized sum is exactly j.
struct DpCell {
  int bin = -1;      // chosen bin for this dimension; -1 = unreachable
  int prev = 0;      // predecessor cell index in the previous layer
  double sum = 0.0;  // unquantized contribution sum of the stored path
};

struct DpTable {
  int dims = 0;
  double resolution = 1.0;
  long lo = 0;  // integer cell range [lo, hi], cell j covers j * resolution
  long hi = 0;
  std::vector<std::vector<DpCell>> layers;  // (dims + 1) x (hi - lo + 1)
  ShapTable table;

  [[nodiscard]] bool reachable(int layer, long j) const;
  [[nodiscard]] const DpCell& cell(int layer, long j) const { return layers[layer][j - lo]; }
  // Bin per dimension along the stored path ending at (dims, j).
  [[nodiscard]] std::vector<int> backtrack(long j) const;
};

struct DpOptions {
  std::optional<double> resolution;  // default: (r - l) / 2000
  // Explicit contribution bounds [l, r]; default spans every reachable sum.
  std::optional<std::pair<double, double>> bounds;
};

// Raises EmptyTable when a dimension has no populated bin, GridOverflow when
// explicit bounds are too narrow even after one widening by their own span
// on each side.
DpTable dp_build(const ShapTable& table, const DpOptions& options = {});

struct DpGeneration {
  Vector z;
  std::vector<int> bins;
  long target_cell = 0;
  long cell = 0;
  double contribution = 0.0;  // sum of binned Shapley values along the path
  double predicted = 0.0;     // base_value + contribution
  double gap = 0.0;           // target - predicted
  bool clamped = false;       // target lay outside the reachable range
};

// Raises NoReachableCell when the final layer is empty.
DpGeneration dp_generate(const DpTable& dp, double base_value, double target);

// ---- CMA-ES ---------------------------------------------------------------

struct CmaParams {
  int dims = 0;
  int lambda = 0;
  int mu = 0;
  Vector weights;
  double mu_eff = 0.0;
  double c_sigma = 0.0;
  double d_sigma = 0.0;
  double c_c = 0.0;
  double c_1 = 0.0;
  double c_mu = 0.0;
  double chi_n = 0.0;

  // lambda = 4 + floor(3 ln d), mu = lambda / 2, log-rank weights.
  static CmaParams defaults(int dims);
  // Raises ConfigError unless lambda >= mu >= 1 and weights are
  // nonnegative with sum 1.
  static CmaParams with(int dims, int lambda, int mu, const Vector& weights);
};

struct CmaState {
  Vector mean;
  Matrix cov;
  double sigma = 1.0;
  Vector p_c;
  Vector p_sigma;
  int generation = 0;
  int regularizations = 0;  // times the covariance was lifted off singularity

  static CmaState initial(const Vector& mean, double sigma);
};

// Returns one fitness per row of the population (lambda x d).
using PopulationFitness = std::function<Vector(const Matrix& population)>;

struct CmaStep {
  Vector best;
  double best_fitness = 0.0;
  bool regularized = false;
};

// One generation: sample, rank (minimization), recombine, update paths,
// covariance (rank-one + rank-mu) and step size.
CmaStep cmaes_step(CmaState& state, const PopulationFitness& fitness, const CmaParams& params,
                   std::mt19937_64& rng);

enum class CmaObjective { kFullAdjacency, kDegreeStats };
const char* objective_name(CmaObjective o);

struct CmaConfig {
  int generations = 300;
  double sigma0 = 1.0;
  std::uint64_t seed = 0;
  double kappa = 0.5;
  std::optional<int> lambda;  // default from CmaParams::defaults
};
void to_json(nlohmann::json& j, const CmaConfig& c);
void from_json(const nlohmann::json& j, CmaConfig& c);

struct CmaReport {
  CmaObjective objective = CmaObjective::kFullAdjacency;
  int generations = 0;
  std::vector<double> best_fitness_trace;  // best-so-far after each generation
  std::optional<double> final_auc;         // nullopt when the target has one class
  double final_acc = 0.0;
  double zero_baseline_acc = 0.0;
  Vector z_star;
  int regularizations = 0;

  [[nodiscard]] nlohmann::json to_json() const;
};

// Mean BCE of the decoded probabilities against the target adjacency.
double full_adjacency_fitness(const DecodedGraph& dg, const Adjacency& target);
// L1 distance between sorted in- and out-degree sequences of the thresholded decode and the target.
double degree_stats_fitness(const DecodedGraph& dg, const Adjacency& target, double kappa);

CmaReport cmaes_generate(const VaeModel& model, const SubgraphSample& target, CmaObjective objective,
                         const CmaConfig& cfg = {});

}  // namespace ccodec
