#pragma once

// Connectome ingestion (CSV or synthetic) and extraction of padded,
// fixed-size subgraph samples by adaptive cylindrical sampling.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccodec/graph.hpp"

namespace ccodec {

enum class NtLabel : int { kGaba = 0, kGlut = 1, kAch = 2, kSer = 3 };

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"GABA", "GLUT", "ACH",
                                                                          "SER", "NonNeuronal"};

// Case-insensitive; throws UnknownLabel.
NtLabel parse_nt_label(std::string_view text);

struct Position {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct NeuronRecord {
  std::int64_t id = 0;
  Position position;
  NtLabel nt_label = NtLabel::kGaba;
};

struct ConnectomeTable {
  std::vector<NeuronRecord> neurons;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;  // (pre_id, post_id)

  [[nodiscard]] std::array<std::size_t, 4> label_counts() const;
};

// Raises MalformedRow / UnknownLabel / DanglingEdge. Self-loops are dropped
// and repeated synapses between one ordered pair collapse to a single edge.
ConnectomeTable load_connectome(const std::filesystem::path& neuron_file,
                                const std::filesystem::path& edge_file);
void write_connectome(const ConnectomeTable& table, const std::filesystem::path& neuron_file,
                      const std::filesystem::path& edge_file);

struct BoundingBox {
  Position min{0.0, 0.0, 0.0};
  Position max{1000.0, 1000.0, 1000.0};
};

struct SynthParams {
  std::size_t n_neurons = 10000;
  BoundingBox box;
  std::array<double, 4> label_mix{0.25, 0.25, 0.25, 0.25};
  double edge_prob_scale = 0.1;
  double length_scale = 100.0;
  std::uint64_t seed = 0;
};

// Positions uniform in the box, labels i.i.d. from `label_mix`, directed
// edge (i, j) kept with probability edge_prob_scale * exp(-|p_i - p_j| / length_scale).
// Neurons are emitted ordered by (label, y) and numbered 1..n in that order.
// Raises InvalidMix.
ConnectomeTable synth_connectome(const SynthParams& params);

struct CylinderOrigin {
  double center_x = 0.0;
  double center_z = 0.0;
  double radius = 0.0;
};

struct SubgraphSample {
  std::vector<int> labels;  // codes 0..4, 4 = NonNeuronal padding
  Adjacency adjacency;
  std::optional<CylinderOrigin> origin;

  [[nodiscard]] int node_count() const { return static_cast<int>(labels.size()); }
  [[nodiscard]] int real_count() const;
};

// Places real nodes at 0..k-1 in the given order, fills the tail with isolated
// NonNeuronal nodes up to kSampleNodes. `real_edges` index into real_labels.
// Raises TooManyNodes, UnknownLabel (label outside 0..3), DanglingEdge.
SubgraphSample pad_subgraph(const std::vector<int>& real_labels,
                            const std::vector<std::pair<int, int>>& real_edges);

struct SamplingConfig {
  int min_neurons = 81;
  int max_neurons = kSampleNodes;
  int max_iterations = 64;
  double relative_tolerance = 1e-6;  // of the XZ box diagonal
  int retry_budget = 1000;
};

// Holds the spatial index and adjacency lists for repeated cylinder draws.
class CylinderSampler {
 public:
  explicit CylinderSampler(const ConnectomeTable& table, SamplingConfig config = {});

  // Uniform centre over the XZ bounding box, retried up to the budget.
  // Raises ExhaustedRetries.
  SubgraphSample draw(std::mt19937_64& rng) const;
  // Raises UnsatisfiableCenter when no radius encloses an admissible count.
  SubgraphSample sample_at(double center_x, double center_z) const;

  [[nodiscard]] double xz_diagonal() const { return diagonal_; }
  [[nodiscard]] const SamplingConfig& config() const { return config_; }
  // Number of neurons with XZ distance <= radius from the centre.
  [[nodiscard]] int count_within(double center_x, double center_z, double radius) const;

 private:
  [[nodiscard]] std::optional<SubgraphSample> try_center(double cx, double cz) const;

  SamplingConfig config_;
  std::vector<double> xs_;
  std::vector<double> zs_;
  std::vector<int> labels_;
  std::vector<std::vector<int>> out_edges_;  // neuron index -> neuron indices
  double min_x_ = 0.0, max_x_ = 0.0, min_z_ = 0.0, max_z_ = 0.0;
  double diagonal_ = 0.0;
};

SubgraphSample sample_cylinder(const ConnectomeTable& table, std::mt19937_64& rng,
                               const SamplingConfig& config = {});

struct Dataset {
  std::vector<SubgraphSample> train;
  std::vector<SubgraphSample> test;
  std::vector<SubgraphSample> validation;
  std::uint64_t split_seed = 0;
};

// Split sizes: test = validation = round(n / 10), train = the rest.
struct SplitSizes {
  std::size_t train, test, validation;
};
SplitSizes split_sizes(std::size_t n_samples);

// Each draw uses an independent sub-seed derived from (seed, draw index).
Dataset build_dataset(const ConnectomeTable& table, std::size_t n_samples, std::uint64_t seed,
                      const SamplingConfig& config = {});

// ---- persistence -----------------------------------------------------------

nlohmann::json sample_to_json(const SubgraphSample& sample);
SubgraphSample sample_from_json(const nlohmann::json& j);
void save_split(const std::vector<SubgraphSample>& samples, const std::filesystem::path& path);
std::vector<SubgraphSample> load_split(const std::filesystem::path& path);

}  // namespace ccodec
