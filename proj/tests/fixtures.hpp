#pragma once

// Small models and random graphs shared by the tests.

#include <random>
#include <vector>

#include "ccodec/data_ingest.hpp"
#include "ccodec/vae_model.hpp"

namespace fixtures {

inline ccodec::ModelConfig mini_config(int n_nodes = 6, int latent = 4) {
  ccodec::ModelConfig c;
  c.n_nodes = n_nodes;
  c.latent_dim = latent;
  c.gat_heads = 2;
  c.gat_head_dim = 3;
  c.edge_embed_dim = 5;
  c.encoder_hidden = 7;
  c.decoder_hidden = 8;
  c.edge_decoder_hidden = 6;
  c.init_seed = 17;
  return c;
}

// Random labelled directed graph on n nodes; the last `padding` nodes are
// isolated NonNeuronal padding.
inline ccodec::SubgraphSample random_sample(int n, double p, int padding, std::mt19937_64& rng) {
  ccodec::SubgraphSample s;
  s.adjacency = ccodec::Adjacency(n);
  std::uniform_int_distribution<int> label(0, ccodec::kNonNeuronal - 1);
  std::bernoulli_distribution edge(p);
  for (int i = 0; i < n; ++i) s.labels.push_back(i < n - padding ? label(rng) : ccodec::kNonNeuronal);
  for (int i = 0; i < n - padding; ++i) {
    for (int j = 0; j < n - padding; ++j) {
      if (i != j && edge(rng)) s.adjacency.set(i, j, true);
    }
  }
  return s;
}

inline std::vector<ccodec::SubgraphSample> random_samples(int count, int n, double p, int padding,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ccodec::SubgraphSample> out;
  for (int i = 0; i < count; ++i) out.push_back(random_sample(n, p, padding, rng));
  return out;
}

inline ccodec::nn::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0,
                                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ccodec::nn::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace fixtures
