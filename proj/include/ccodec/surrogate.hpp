#pragma once

// Differentiable stand-ins for the four graph statistics, evaluated on the
// decoder's continuous outputs and fitted to exact statistics of the
// thresholded decodes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccodec/graph_stats.hpp"
#include "ccodec/nn/layers.hpp"
#include "ccodec/vae_model.hpp"

namespace ccodec {

enum class Feature { kEdgeCount = 0, kReciprocity = 1, kBetweenness = 2, kNonNeuronal = 3 };
inline constexpr std::array<Feature, 4> kFeatures = {Feature::kEdgeCount, Feature::kReciprocity,
                                                     Feature::kBetweenness, Feature::kNonNeuronal};
const char* feature_name(Feature f);
// Exact value of `f` in a feature vector; nullopt for undefined reciprocity.
std::optional<double> feature_value(const FeatureVector& v, Feature f);

struct SurrogateConfig {
  int n_nodes = kSampleNodes;
  int n_classes = kNumClasses;
  int row_width = 32;
  int hidden = 256;
  double ratio_guard = 1e-3;
  double reciprocity_threshold = 0.5;  // the decoder's kappa
  std::uint64_t init_seed = 11;
};
void to_json(nlohmann::json& j, const SurrogateConfig& c);
void from_json(const nlohmann::json& j, SurrogateConfig& c);

// max(A - t, 0) and max((A + A^T) / 2 - t, 0) applied per stacked block. At t = 0.5 the
// second is max((A + A^T - 1) / 2, 0).
Matrix reciprocity_numerator_input(const Matrix& a, double t = 0.5);
Matrix reciprocity_denominator_input(const Matrix& a, double t = 0.5);
// Per node: sum over the four neuron classes t of max(X_NN - X_t, 0).
Matrix non_neuronal_margins(const Matrix& node_scores);

// Row-wise Linear (N -> w), LeakyReLU, flatten, MLP (N*w -> hidden -> 1).
struct CountCore {
  nn::Linear rows;
  nn::Linear fc1;
  nn::Linear fc2;

  CountCore() = default;
  CountCore(const std::string& name, int n_nodes, int row_width, int hidden, std::mt19937_64& rng);
  Var forward(Tape& tape, Var a, double slope);
  [[nodiscard]] Var forward(Tape& tape, Var a, double slope) const;
  void collect(std::vector<nn::Parameter*>& out);
};

class SurrogateSet {
 public:
  explicit SurrogateSet(const SurrogateConfig& config = {});

  [[nodiscard]] const SurrogateConfig& config() const { return config_; }

  // `edge_probs` is (B*N) x N with entries in [0, 1]; `node_scores` is
  // (B*N) x F_X. Returns B x 1 predictions in the statistic's own units.
  Var predict(Tape& tape, Feature f, Var edge_probs, Var node_scores);
  [[nodiscard]] Var predict(Tape& tape, Feature f, Var edge_probs, Var node_scores) const;

  [[nodiscard]] double predict(Feature f, const DecodedGraph& dg) const;
  [[nodiscard]] std::array<double, 4> predict_all(const DecodedGraph& dg) const;
  // True when the reciprocity denominator core output falls inside the guard.
  [[nodiscard]] bool reciprocity_degenerate(const DecodedGraph& dg) const;

  std::vector<nn::Parameter*> parameters(Feature f);
  std::vector<nn::Parameter*> parameters();
  [[nodiscard]] std::vector<const nn::Parameter*> parameters() const;

  // Output affine maps: offset + scale * net for the count-style heads,
  // scale * ratio for reciprocity (offset unused).
  void set_output_scaling(Feature f, double offset, double scale);

  // Identity of the core reused for both reciprocity inputs.
  [[nodiscard]] const CountCore& reciprocity_core() const { return reciprocity_; }

  void save(const std::filesystem::path& path, const nlohmann::json& metadata = {}) const;
  static SurrogateSet load(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

 private:
  template <typename Self>
  static Var predict_impl(Self& self, Tape& tape, Feature f, Var edge_probs, Var node_scores);

  SurrogateConfig config_;
  CountCore edge_count_;
  CountCore betweenness_;
  CountCore reciprocity_;
  nn::Linear nn_fc1_;
  nn::Linear nn_fc2_;
  // Per-feature output scaling, 1 x 2 (offset, scale); stored as parameters
  // so checkpoints carry them, but always frozen.
  std::array<nn::Parameter, 4> scaling_;
};

struct SurrogateTrainConfig {
  int n_latent = 1000;
  double holdout_fraction = 0.2;
  int epochs = 150;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 3;
  double kappa = 0.5;
  int min_reciprocity_pairs = 20;
};
void to_json(nlohmann::json& j, const SurrogateTrainConfig& c);
void from_json(const nlohmann::json& j, SurrogateTrainConfig& c);

struct PearsonReport {
  std::optional<double> edge_count_r;
  std::optional<double> reciprocity_r;
  std::optional<double> betweenness_r;
  std::optional<double> non_neuronal_r;
  std::size_t n_pairs = 0;                  // held-out latent draws
  std::size_t n_excluded_reciprocity = 0;   // undefined reciprocity, all draws
  std::size_t n_degenerate_denominator = 0; // held-out draws inside the ratio guard

  [[nodiscard]] std::optional<double> r(Feature f) const;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct DecodedDraws {
  Matrix z;  // count x d
  std::vector<DecodedGraph> decodes;
  std::vector<FeatureVector> truth;  // statistics of the thresholded decodes
};

DecodedDraws draw_decodes(const VaeModel& model, int count, std::uint64_t seed, double kappa);

// Raises InsufficientValidPairs when too few draws have defined reciprocity.
PearsonReport train_surrogates(const VaeModel& model, SurrogateSet& set, const SurrogateTrainConfig& cfg);
// Same, on pre-drawn decodes (the first (1 - holdout) share trains).
PearsonReport train_surrogates(const DecodedDraws& draws, SurrogateSet& set, const SurrogateTrainConfig& cfg);

}  // namespace ccodec
