#pragma once

// Losses and the alternating "1+2n" schedule: one edge-only pretraining
// phase, then n rounds of compression training (edge modules frozen)
// followed by full fine-tuning.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccodec/data_ingest.hpp"
#include "ccodec/vae_model.hpp"

namespace ccodec {

// ---- losses on plain matrices ---------------------------------------------

// sum_j 1/2 (mu_j^2 + sigma_j^2 - 1 - ln sigma_j^2)
double kl_divergence(const LatentDistribution& dist);

// Mean binary cross-entropy over all entries of A' (probabilities).
double loss_edge(const Matrix& a, const Matrix& a_prime);

struct CdLoss {
  double recon = 0.0;  // mean squared error over all entries
  double kl = 0.0;
};
CdLoss loss_cd(const Matrix& x_onehot, const Matrix& x_prime, const LatentDistribution& dist);

struct LossWeights {
  double edge = 1.0;
  double node = 1.0;
  double kl = 1.0;
};
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

// Weighted sum of mean BCE, softmax cross-entropy of X' rows against the
// argmax labels of `x_onehot`, and KL.
double loss_full(const Matrix& a, const Matrix& a_prime, const Matrix& x_onehot, const Matrix& x_prime,
                 const LatentDistribution& dist, const LossWeights& weights);

// ---- schedule ---------------------------------------------------------------

enum class Phase { kPretrainEdge, kTrainCd, kFinetuneFull };

const char* phase_name(Phase p);
std::vector<Phase> schedule(int n);

struct TrainConfig {
  int n = 1;
  int epochs_pretrain = 200;
  int epochs_cd = 100;
  int epochs_full = 100;
  double lr_pretrain = 1e-3;
  double lr_cd = 1e-3;
  double lr_full = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  LossWeights weights;
  // Fraction of each compression / full phase over which the KL weight
  // ramps linearly from 0 to its configured value.
  double kl_warmup_fraction = 0.2;
  // Node term of the full loss: softmax cross-entropy (true) or MSE.
  bool full_node_cross_entropy = true;
  // After training, replace the model threshold with calibrate_kappa on the
  // training split.
  bool calibrate_kappa = false;

  void validate() const;
};
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct HistoryRow {
  std::string phase;
  int epoch = 0;
  double loss_total = 0.0;
  double loss_edge = 0.0;
  double loss_node = 0.0;
  double loss_kl = 0.0;
  std::optional<double> val_edge_auc;
  double val_node_acc = 0.0;
};

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path);

struct TrainOptions {
  // When set, the model is checkpointed here after every phase as
  // phase_<k>.ckpt, and NonFiniteLoss diagnostics are written alongside.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Number of schedule phases already completed (resuming from a phase
  // checkpoint); those phases are skipped.
  int completed_phases = 0;
  std::vector<HistoryRow> prior_history;
  bool verbose = false;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  int phases_run = 0;
};

struct PhaseLoss {
  Var total;
  double edge = 0.0;
  double node = 0.0;
  double kl = 0.0;
};

// Differentiable batch loss of one phase. `eps` (B x d) is the
// reparameterization noise; unused while pretraining.
PhaseLoss phase_loss(VaeModel& model, Tape& tape, const GraphBatch& batch, Phase phase, const TrainConfig& cfg,
                     double kl_scale, const Matrix& eps);

// Raises NonFiniteLoss.
TrainResult train_1_2n(const std::vector<SubgraphSample>& train,
                       const std::vector<SubgraphSample>& validation, VaeModel& model,
                       const TrainConfig& cfg, const TrainOptions& options = {});

// ---- reconstruction evaluation -------------------------------------------

struct ReconstructionMetrics {
  std::optional<double> edge_auc;  // rank-based, off-diagonal entries pooled over samples
  double edge_acc = 0.0;           // at kappa, off-diagonal
  double zero_baseline_acc = 0.0;  // accuracy of predicting no edges
  double node_acc = 0.0;
  double node_f1 = 0.0;            // macro over all classes
  std::size_t n_samples = 0;
};

// Encodes with eps = 0 and decodes. With `edge_bypass`, edge probabilities
// come straight from the encoder's edge embedding (the pretraining path).
DecodedGraph reconstruct(const VaeModel& model, const SubgraphSample& sample, bool edge_bypass = false);

ReconstructionMetrics evaluate_reconstruction(const VaeModel& model,
                                              const std::vector<SubgraphSample>& samples,
                                              bool edge_bypass = false);

// Threshold at which the pooled off-diagonal reconstruction probabilities
// give as many edges as the samples hold, clamped into (0, 1).
double calibrate_kappa(const VaeModel& model, const std::vector<SubgraphSample>& samples);

// Edge metrics of probabilities `a_prime` against binary `a`, diagonal excluded.
struct EdgeScores {
  std::optional<double> auc;
  double accuracy = 0.0;
  double zero_baseline_accuracy = 0.0;
};
EdgeScores edge_scores(const std::vector<const Matrix*>& a_prime, const std::vector<const Adjacency*>& a,
                       double kappa);

}  // namespace ccodec
