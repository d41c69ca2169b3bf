#pragma once

// Graph variational autoencoder: multi-head graph attention over the
// adjacency matrix, a flattened joint embedding compressed to a Gaussian
// latent, and a decoder producing edge probabilities and node-class scores.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccodec/data_ingest.hpp"
#include "ccodec/nn/layers.hpp"
#include "ccodec/nn/tape.hpp"

namespace ccodec {

using nn::Matrix;
using nn::Tape;
using nn::Var;
using nn::Vector;

struct ModelConfig {
  int n_nodes = kSampleNodes;
  int n_classes = kNumClasses;
  int latent_dim = 32;
  int gat_heads = 4;
  int gat_head_dim = 16;
  int edge_embed_dim = 64;
  int encoder_hidden = 512;
  int decoder_hidden = 512;
  int edge_decoder_hidden = 128;
  double kappa = 0.5;
  double leaky_slope = 0.2;
  std::uint64_t init_seed = 1;

  // Raises ConfigError on a violated invariant.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LatentDistribution {
  Vector mu;
  Vector sigma;
};

struct DecodedGraph {
  Matrix edge_probs;   // N x N, entries in (0, 1)
  Matrix node_scores;  // N x F_X raw scores
};

// z = mu + eps * sigma
Vector reparameterize(const LatentDistribution& dist, const Vector& eps);

// Threshold at kappa (>=), zero the diagonal, argmax labels with the lowest
// index winning ties. Padding nodes are not forced to be isolated.
SubgraphSample discretize(const DecodedGraph& dg, double kappa);

Matrix one_hot(std::span<const int> labels, int n_classes);
Matrix adjacency_matrix(const Adjacency& a);

// One attention head: projection W (in x out) plus the two halves of the
// attention vector.
struct GatHead {
  nn::Parameter weight;
  nn::Parameter attn_src;
  nn::Parameter attn_dst;

  GatHead() = default;
  GatHead(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);
  void collect(std::vector<nn::Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&attn_src);
    out.push_back(&attn_dst);
  }
};

// LeakyReLU(sum_j alpha_ij W h_j) over neighbourhoods given by `masks`
// (one N x N matrix per graph, H stacked row-wise).
Var gat_layer(Tape& tape, Var h, GatHead& head, std::span<const Matrix> masks, double slope,
              std::vector<Matrix>* attention_out = nullptr);
Var gat_layer(Tape& tape, Var h, const GatHead& head, std::span<const Matrix> masks, double slope,
              std::vector<Matrix>* attention_out = nullptr);

// A | I per graph: every node attends at least to itself.
Matrix attention_mask(const Matrix& adjacency);

// Several samples stacked row-wise for one forward pass.
struct GraphBatch {
  int size = 0;
  int n_nodes = 0;
  Matrix adjacency;  // (B*N) x N
  Matrix onehot;     // (B*N) x F_X
  std::vector<Matrix> masks;
  std::vector<int> labels;  // B*N
};

GraphBatch make_batch(const std::vector<SubgraphSample>& samples, std::span<const std::size_t> indices,
                      int n_classes = kNumClasses);

struct EncoderPass {
  Var edge_embedding;  // H' : (B*N) x F_H'
  Var mu;              // B x d
  Var logvar;          // B x d
};

struct DecoderPass {
  Var edge_embedding;  // H-hat : (B*N) x F_H'
  Var node_scores;     // X' : (B*N) x F_X
};

class VaeModel {
 public:
  explicit VaeModel(const ModelConfig& config);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  // Raises ConfigError outside (0, 1).
  void set_kappa(double kappa);

  // ---- differentiable passes (non-const: gradients reach parameters) ----
  Var edge_embedding(Tape& tape, const GraphBatch& batch);
  EncoderPass encode(Tape& tape, const GraphBatch& batch);
  DecoderPass decode(Tape& tape, Var z);
  // Row-wise edge decoder; returns logits, (B*N) x N.
  Var edge_logits(Tape& tape, Var edge_embedding);

  // ---- same passes with frozen (constant) parameters ----
  [[nodiscard]] Var edge_embedding(Tape& tape, const GraphBatch& batch) const;
  [[nodiscard]] EncoderPass encode(Tape& tape, const GraphBatch& batch) const;
  [[nodiscard]] DecoderPass decode(Tape& tape, Var z) const;
  [[nodiscard]] Var edge_logits(Tape& tape, Var edge_embedding) const;

  // ---- inference ----
  [[nodiscard]] LatentDistribution encode(const SubgraphSample& sample) const;
  [[nodiscard]] DecodedGraph decode(const Vector& z) const;
  // One decode per row of z (B x d).
  [[nodiscard]] std::vector<DecodedGraph> decode_batch(const Matrix& z) const;

  // GAT heads, head merge and edge decoder: the modules frozen during
  // compression training.
  std::vector<nn::Parameter*> edge_parameters();
  // Flatten/compress MLP, latent heads and decompress MLP.
  std::vector<nn::Parameter*> cd_parameters();
  std::vector<nn::Parameter*> parameters();
  [[nodiscard]] std::vector<const nn::Parameter*> parameters() const;

  // Archive: magic, header length, JSON header (config, manifest of
  // name/shape/dtype/offset, free-form metadata), raw little-endian doubles.
  void save(const std::filesystem::path& path, const nlohmann::json& metadata = {}) const;
  static VaeModel load(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

 private:
  template <typename Self>
  static Var edge_embedding_impl(Self& self, Tape& tape, const GraphBatch& batch);
  template <typename Self>
  static EncoderPass encode_impl(Self& self, Tape& tape, const GraphBatch& batch);
  template <typename Self>
  static DecoderPass decode_impl(Self& self, Tape& tape, Var z);
  template <typename Self>
  static Var edge_logits_impl(Self& self, Tape& tape, Var h);

  ModelConfig config_;
  std::vector<GatHead> heads_;
  nn::Linear merge_;
  nn::Linear enc1_, enc2_;
  nn::Linear fc_mu_, fc_logvar_;
  nn::Linear dec1_, dec2_;
  nn::Linear edge1_, edge2_;
};

}  // namespace ccodec
