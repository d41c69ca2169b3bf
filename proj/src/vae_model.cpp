#include "ccodec/vae_model.hpp"

#include <algorithm>
#include <cmath>

#include "ccodec/errors.hpp"
#include "ccodec/nn/archive.hpp"

namespace ccodec {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (n_nodes < 1) fail("n_nodes must be >= 1");
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (latent_dim < 1) fail("latent_dim must be >= 1");
  if (gat_heads < 1) fail("gat_heads must be >= 1");
  if (gat_head_dim < 1 || edge_embed_dim < 1) fail("embedding widths must be >= 1");
  if (encoder_hidden < 1 || decoder_hidden < 1 || edge_decoder_hidden < 1)
    fail("hidden sizes must be >= 1");
  if (!(kappa > 0.0 && kappa < 1.0)) fail("kappa must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_nodes", c.n_nodes},
       {"n_classes", c.n_classes},
       {"latent_dim", c.latent_dim},
       {"gat_heads", c.gat_heads},
       {"gat_head_dim", c.gat_head_dim},
       {"edge_embed_dim", c.edge_embed_dim},
       {"encoder_hidden", c.encoder_hidden},
       {"decoder_hidden", c.decoder_hidden},
       {"edge_decoder_hidden", c.edge_decoder_hidden},
       {"kappa", c.kappa},
       {"leaky_slope", c.leaky_slope},
       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_nodes = j.value("n_nodes", d.n_nodes);
  c.n_classes = j.value("n_classes", d.n_classes);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.gat_heads = j.value("gat_heads", d.gat_heads);
  c.gat_head_dim = j.value("gat_head_dim", d.gat_head_dim);
  c.edge_embed_dim = j.value("edge_embed_dim", d.edge_embed_dim);
  c.encoder_hidden = j.value("encoder_hidden", d.encoder_hidden);
  c.decoder_hidden = j.value("decoder_hidden", d.decoder_hidden);
  c.edge_decoder_hidden = j.value("edge_decoder_hidden", d.edge_decoder_hidden);
  c.kappa = j.value("kappa", d.kappa);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.init_seed = j.value("init_seed", d.init_seed);
}

Vector reparameterize(const LatentDistribution& dist, const Vector& eps) {
  if (eps.size() != dist.mu.size()) throw ShapeMismatch("reparameterize: eps has the wrong length");
  return dist.mu + eps.cwiseProduct(dist.sigma);
}

void VaeModel::set_kappa(double kappa) {
  ModelConfig c = config_;
  c.kappa = kappa;
  c.validate();
  config_ = c;
}

SubgraphSample discretize(const DecodedGraph& dg, double kappa) {
  const auto n = static_cast<int>(dg.edge_probs.rows());
  SubgraphSample s;
  s.adjacency = Adjacency(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && dg.edge_probs(i, j) >= kappa) s.adjacency.set(i, j);
  s.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < dg.node_scores.cols(); ++c)
      if (dg.node_scores(i, c) > dg.node_scores(i, best)) best = c;
    s.labels[i] = static_cast<int>(best);
  }
  return s;
}

Matrix one_hot(std::span<const int> labels, int n_classes) {
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw UnknownLabel("label out of range");
    x(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return x;
}

Matrix adjacency_matrix(const Adjacency& a) {
  const int n = a.size();
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = a(i, j) ? 1.0 : 0.0;
  return m;
}

Matrix attention_mask(const Matrix& adjacency) {
  Matrix mask = adjacency;
  mask.diagonal().setOnes();
  return mask;
}

GatHead::GatHead(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
  weight.name = name + ".weight";
  weight.value.resize(in, out);
  attn_src.name = name + ".attn_src";
  attn_src.value.resize(1, out);
  attn_dst.name = name + ".attn_dst";
  attn_dst.value.resize(1, out);
  nn::init_uniform_fan_in(weight, in, rng);
  nn::init_uniform_fan_in(attn_src, 2 * out, rng);
  nn::init_uniform_fan_in(attn_dst, 2 * out, rng);
}

namespace {

template <typename Head>
Var gat_layer_impl(Tape& tape, Var h, Head& head, std::span<const Matrix> masks, double slope,
                   std::vector<Matrix>* attention_out) {
  if (h.cols() != head.weight.value.rows()) {
    throw ShapeMismatch("gat_layer: input width " + std::to_string(h.cols()) +
                        " does not match projection rows " +
                        std::to_string(head.weight.value.rows()));
  }
  Var wh = nn::matmul(h, tape.parameter(head.weight));
  Var agg = nn::graph_attention(wh, tape.parameter(head.attn_src), tape.parameter(head.attn_dst),
                                masks, slope, attention_out);
  return nn::leaky_relu(agg, slope);
}

}  // namespace

Var gat_layer(Tape& tape, Var h, GatHead& head, std::span<const Matrix> masks, double slope,
              std::vector<Matrix>* attention_out) {
  return gat_layer_impl(tape, h, head, masks, slope, attention_out);
}

Var gat_layer(Tape& tape, Var h, const GatHead& head, std::span<const Matrix> masks, double slope,
              std::vector<Matrix>* attention_out) {
  return gat_layer_impl(tape, h, head, masks, slope, attention_out);
}

GraphBatch make_batch(const std::vector<SubgraphSample>& samples,
                      std::span<const std::size_t> indices, int n_classes) {
  GraphBatch b;
  b.size = static_cast<int>(indices.size());
  if (b.size == 0) throw ShapeMismatch("make_batch: empty batch");
  b.n_nodes = samples[indices[0]].node_count();
  const Eigen::Index n = b.n_nodes;
  b.adjacency.resize(b.size * n, n);
  b.onehot.resize(b.size * n, n_classes);
  b.masks.reserve(indices.size());
  b.labels.reserve(static_cast<std::size_t>(b.size * n));
  for (int g = 0; g < b.size; ++g) {
    const SubgraphSample& s = samples[indices[g]];
    if (s.node_count() != b.n_nodes) throw ShapeMismatch("make_batch: samples differ in size");
    Matrix a = adjacency_matrix(s.adjacency);
    b.adjacency.middleRows(g * n, n) = a;
    b.onehot.middleRows(g * n, n) = one_hot(s.labels, n_classes);
    b.masks.push_back(attention_mask(a));
    b.labels.insert(b.labels.end(), s.labels.begin(), s.labels.end());
  }
  return b;
}

// ---------------------------------------------------------------------------

VaeModel::VaeModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const int n = config_.n_nodes;
  for (int k = 0; k < config_.gat_heads; ++k) {
    heads_.emplace_back("gat." + std::to_string(k), n, config_.gat_head_dim, rng);
  }
  merge_ = nn::Linear("gat.merge", config_.gat_heads * config_.gat_head_dim, config_.edge_embed_dim, rng);
  const int joint = n * (config_.edge_embed_dim + config_.n_classes);
  enc1_ = nn::Linear("encoder.fc1", joint, config_.encoder_hidden, rng);
  enc2_ = nn::Linear("encoder.fc2", config_.encoder_hidden, config_.encoder_hidden, rng);
  fc_mu_ = nn::Linear("latent.mu", config_.encoder_hidden, config_.latent_dim, rng);
  fc_logvar_ = nn::Linear("latent.logvar", config_.encoder_hidden, config_.latent_dim, rng);
  dec1_ = nn::Linear("decoder.fc1", config_.latent_dim, config_.decoder_hidden, rng);
  dec2_ = nn::Linear("decoder.fc2", config_.decoder_hidden, joint, rng);
  edge1_ = nn::Linear("edge_decoder.fc1", config_.edge_embed_dim, config_.edge_decoder_hidden, rng);
  edge2_ = nn::Linear("edge_decoder.fc2", config_.edge_decoder_hidden, n, rng);
}

template <typename Self>
Var VaeModel::edge_embedding_impl(Self& self, Tape& tape, const GraphBatch& batch) {
  if (batch.n_nodes != self.config_.n_nodes) throw ShapeMismatch("batch node count differs from model");
  const double slope = self.config_.leaky_slope;
  Var h = tape.constant(batch.adjacency);
  std::vector<Var> outs;
  outs.reserve(self.heads_.size());
  for (auto& head : self.heads_) outs.push_back(gat_layer(tape, h, head, batch.masks, slope));
  return self.merge_.forward(tape, nn::concat_cols(outs));
}

template <typename Self>
EncoderPass VaeModel::encode_impl(Self& self, Tape& tape, const GraphBatch& batch) {
  const ModelConfig& c = self.config_;
  const double slope = c.leaky_slope;
  EncoderPass out;
  out.edge_embedding = edge_embedding_impl(self, tape, batch);
  const std::array<Var, 2> parts{out.edge_embedding, tape.constant(batch.onehot)};
  Var joint = nn::concat_cols(parts);
  Var flat = nn::reshape(joint, batch.size, static_cast<Eigen::Index>(c.n_nodes) * (c.edge_embed_dim + c.n_classes));
  Var hidden = nn::leaky_relu(self.enc1_.forward(tape, flat), slope);
  Var latent = nn::leaky_relu(self.enc2_.forward(tape, hidden), slope);
  out.mu = self.fc_mu_.forward(tape, latent);
  out.logvar = self.fc_logvar_.forward(tape, latent);
  return out;
}

template <typename Self>
DecoderPass VaeModel::decode_impl(Self& self, Tape& tape, Var z) {
  const ModelConfig& c = self.config_;
  if (z.cols() != c.latent_dim) throw ShapeMismatch("decode: z has the wrong width");
  Var hidden = nn::leaky_relu(self.dec1_.forward(tape, z), c.leaky_slope);
  Var joint = self.dec2_.forward(tape, hidden);
  Var rows = nn::reshape(joint, z.rows() * c.n_nodes, c.edge_embed_dim + c.n_classes);
  return {nn::slice_cols(rows, 0, c.edge_embed_dim),
          nn::slice_cols(rows, c.edge_embed_dim, c.n_classes)};
}

template <typename Self>
Var VaeModel::edge_logits_impl(Self& self, Tape& tape, Var h) {
  Var hidden = nn::leaky_relu(self.edge1_.forward(tape, h), self.config_.leaky_slope);
  return self.edge2_.forward(tape, hidden);
}

Var VaeModel::edge_embedding(Tape& tape, const GraphBatch& batch) { return edge_embedding_impl(*this, tape, batch); }
EncoderPass VaeModel::encode(Tape& tape, const GraphBatch& batch) { return encode_impl(*this, tape, batch); }
DecoderPass VaeModel::decode(Tape& tape, Var z) { return decode_impl(*this, tape, z); }
Var VaeModel::edge_logits(Tape& tape, Var h) { return edge_logits_impl(*this, tape, h); }

Var VaeModel::edge_embedding(Tape& tape, const GraphBatch& batch) const {
  return edge_embedding_impl(*this, tape, batch);
}
EncoderPass VaeModel::encode(Tape& tape, const GraphBatch& batch) const {
  return encode_impl(*this, tape, batch);
}
DecoderPass VaeModel::decode(Tape& tape, Var z) const { return decode_impl(*this, tape, z); }
Var VaeModel::edge_logits(Tape& tape, Var h) const { return edge_logits_impl(*this, tape, h); }

LatentDistribution VaeModel::encode(const SubgraphSample& sample) const {
  const std::vector<SubgraphSample> one{sample};
  const std::array<std::size_t, 1> idx{0};
  Tape tape;
  const EncoderPass pass = encode(tape, make_batch(one, idx, config_.n_classes));
  LatentDistribution dist;
  dist.mu = pass.mu.value().row(0).transpose();
  dist.sigma = (0.5 * pass.logvar.value().row(0).transpose().array()).exp().matrix();
  return dist;
}

DecodedGraph VaeModel::decode(const Vector& z) const {
  Matrix row = z.transpose();
  return decode_batch(row).front();
}

std::vector<DecodedGraph> VaeModel::decode_batch(const Matrix& z) const {
  constexpr Eigen::Index kChunk = 64;
  const Eigen::Index n = config_.n_nodes;
  std::vector<DecodedGraph> out;
  out.reserve(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index start = 0; start < z.rows(); start += kChunk) {
    const Eigen::Index count = std::min(kChunk, z.rows() - start);
    Tape tape;
    const DecoderPass pass = decode(tape, tape.constant(z.middleRows(start, count)));
    const Matrix probs = nn::sigmoid(edge_logits(tape, pass.edge_embedding).value());
    const Matrix& scores = pass.node_scores.value();
    for (Eigen::Index g = 0; g < count; ++g) {
      out.push_back({probs.middleRows(g * n, n), scores.middleRows(g * n, n)});
    }
  }
  return out;
}

std::vector<nn::Parameter*> VaeModel::edge_parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& h : heads_) h.collect(out);
  merge_.collect(out);
  edge1_.collect(out);
  edge2_.collect(out);
  return out;
}

std::vector<nn::Parameter*> VaeModel::cd_parameters() {
  std::vector<nn::Parameter*> out;
  for (nn::Linear* l : {&enc1_, &enc2_, &fc_mu_, &fc_logvar_, &dec1_, &dec2_}) l->collect(out);
  return out;
}

std::vector<nn::Parameter*> VaeModel::parameters() {
  auto out = edge_parameters();
  auto cd = cd_parameters();
  out.insert(out.end(), cd.begin(), cd.end());
  return out;
}

std::vector<const nn::Parameter*> VaeModel::parameters() const {
  auto mutable_params = const_cast<VaeModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void VaeModel::save(const std::filesystem::path& path, const nlohmann::json& metadata) const {
  nlohmann::json header;
  header["kind"] = "graph_vae";
  header["config"] = config_;
  header["metadata"] = metadata;
  nn::save_archive(path, std::move(header), parameters());
}

VaeModel VaeModel::load(const std::filesystem::path& path, nlohmann::json* metadata) {
  const nn::Archive archive = nn::load_archive(path);
  if (archive.header.value("kind", "") != "graph_vae") {
    throw CheckpointError(path.string() + " does not hold a graph VAE");
  }
  VaeModel model(archive.header.at("config").get<ModelConfig>());
  nn::restore_parameters(archive, model.parameters());
  if (metadata) *metadata = archive.header.value("metadata", nlohmann::json::object());
  return model;
}

}  // namespace ccodec
