#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ccodec/errors.hpp"
#include "ccodec/surrogate.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace ccodec;

namespace {

SurrogateConfig small_config(int n = 6) {
  SurrogateConfig c;
  c.n_nodes = n;
  c.row_width = 4;
  c.hidden = 12;
  c.init_seed = 3;
  return c;
}

// Random decodes with graph-level density drawn per sample, so the
// statistics vary across draws.
DecodedDraws synthetic_draws(int count, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> density(0.05, 0.6), u(0.0, 1.0);
  DecodedDraws d;
  d.z = Matrix::Zero(count, 2);
  for (int k = 0; k < count; ++k) {
    const double p = density(rng);
    DecodedGraph g;
    g.edge_probs.resize(n, n);
    for (Eigen::Index i = 0; i < g.edge_probs.size(); ++i) {
      g.edge_probs.data()[i] = std::clamp(u(rng) * 2.0 * p, 0.0, 1.0);
    }
    g.node_scores = fixtures::random_matrix(n, kNumClasses, rng, -1.0, 1.0);
    const double pad = u(rng);
    for (int i = 0; i < n; ++i) g.node_scores(i, kNonNeuronal) = i >= n * (1.0 - 0.5 * pad) ? 3.0 : -3.0;
    d.truth.push_back(feature_vector(discretize(g, 0.5)));
    d.decodes.push_back(std::move(g));
  }
  return d;
}

}  // namespace

TEST(Surrogate, ReciprocityInputs) {
  Matrix a(4, 2);  // two stacked 2x2 blocks
  a << 0.2, 0.9, 0.7, 0.6,   // block 0
      0.5, 1.0, 0.0, 0.3;    // block 1
  const Matrix num = reciprocity_numerator_input(a);
  EXPECT_DOUBLE_EQ(num(0, 1), 0.4);
  EXPECT_DOUBLE_EQ(num(0, 0), 0.0);
  const Matrix den = reciprocity_denominator_input(a);
  // block 0: (0,1) -> max((0.9 + 0.7 - 1)/2, 0) = 0.3
  EXPECT_NEAR(den(0, 1), 0.3, 1e-15);
  EXPECT_NEAR(den(1, 0), 0.3, 1e-15);
  EXPECT_NEAR(den(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(den(1, 1), 0.1, 1e-15);
  // block 1 uses only its own entries.
  EXPECT_NEAR(den(2, 0), 0.0, 1e-15);
  EXPECT_NEAR(den(2, 1), 0.0, 1e-15);

  const Matrix num3 = reciprocity_numerator_input(a, 0.3);
  EXPECT_NEAR(num3(1, 1), 0.3, 1e-15);
  EXPECT_EQ(num3(0, 0), 0.0);
  const Matrix den3 = reciprocity_denominator_input(a, 0.3);
  EXPECT_NEAR(den3(0, 1), 0.5, 1e-15);
  EXPECT_NEAR(den3(2, 1), 0.2, 1e-15);
  EXPECT_NEAR(den3(3, 0), 0.2, 1e-15);
}

TEST(Surrogate, ReciprocityThresholdIsValidated) {
  nlohmann::json j = SurrogateConfig{};
  j["reciprocity_threshold"] = 1.0;
  EXPECT_THROW((void)j.get<SurrogateConfig>(), ConfigError);
  j["reciprocity_threshold"] = 0.3;
  EXPECT_EQ(j.get<SurrogateConfig>().reciprocity_threshold, 0.3);
}

TEST(Surrogate, NonNeuronalMargins) {
  Matrix x(2, 5);
  x << 0.1, 0.5, -1.0, 0.0, 0.3,   // margins 0.2, 0, 1.3, 0.3
      2.0, 2.0, 2.0, 2.0, 1.0;     // all negative
  const Matrix m = non_neuronal_margins(x);
  EXPECT_NEAR(m(0, 0), 1.8, 1e-15);
  EXPECT_EQ(m(1, 0), 0.0);
}

TEST(Surrogate, OneValuePerStackedGraph) {
  const SurrogateSet set(small_config());
  std::mt19937_64 rng(1);
  const Matrix e = fixtures::random_matrix(12, 6, rng, 0.0, 1.0);
  const Matrix x = fixtures::random_matrix(12, 5, rng);
  Tape tape;
  const Matrix out =
      set.predict(tape, Feature::kReciprocity, tape.constant(e), tape.constant(x)).value();
  EXPECT_EQ(out.rows(), 2);
  EXPECT_EQ(out.cols(), 1);
}

TEST(Surrogate, InputGradients) {
  const SurrogateSet set(small_config());
  std::mt19937_64 rng(2);
  const Matrix e = fixtures::random_matrix(12, 6, rng, 0.02, 0.98);
  const Matrix x = fixtures::random_matrix(12, 5, rng, -2.0, 2.0);
  for (Feature f : kFeatures) {
    const auto re = gradcheck::check_input(
        [&](Tape& t, Var v) { return nn::sum(set.predict(t, f, v, t.constant(x))); }, e);
    const auto rx = gradcheck::check_input(
        [&](Tape& t, Var v) { return nn::sum(set.predict(t, f, t.constant(e), v)); }, x);
    EXPECT_LT(re.max_rel_error, 1e-4) << feature_name(f) << " edges: " << re.worst;
    EXPECT_LT(rx.max_rel_error, 1e-4) << feature_name(f) << " nodes: " << rx.worst;
  }
}

TEST(Surrogate, ParameterGradients) {
  SurrogateSet set(small_config());
  std::mt19937_64 rng(3);
  const Matrix e = fixtures::random_matrix(12, 6, rng, 0.0, 1.0);
  const Matrix x = fixtures::random_matrix(12, 5, rng);
  const Matrix target = fixtures::random_matrix(2, 1, rng);
  for (Feature f : kFeatures) {
    const auto r = gradcheck::check_parameters(
        [&](Tape& t) { return nn::mse(set.predict(t, f, t.constant(e), t.constant(x)), target); },
        set.parameters(f));
    EXPECT_LT(r.max_rel_error, 1e-3) << feature_name(f) << ": " << r.worst;
  }
}

TEST(Surrogate, ComposedWithDecoderGradient) {
  const VaeModel model(fixtures::mini_config());
  const SurrogateSet set(small_config());
  std::mt19937_64 rng(4);
  const Matrix z0 = fixtures::random_matrix(2, 4, rng);
  for (Feature f : kFeatures) {
    const auto r = gradcheck::check_input(
        [&](Tape& t, Var z) {
          const DecoderPass dec = model.decode(t, z);
          Var probs = nn::sigmoid(model.edge_logits(t, dec.edge_embedding));
          return nn::sum(set.predict(t, f, probs, dec.node_scores));
        },
        z0);
    EXPECT_LT(r.max_rel_error, 1e-3) << feature_name(f) << ": " << r.worst;
  }
}

TEST(Surrogate, ReciprocityUsesOneSharedCore) {
  SurrogateSet set(small_config());
  const auto params = set.parameters(Feature::kReciprocity);
  EXPECT_EQ(params.size(), 6U);  // rows, fc1, fc2 (weight + bias each)
  std::vector<nn::Parameter*> core;
  const_cast<CountCore&>(set.reciprocity_core()).collect(core);
  EXPECT_EQ(core, params);
}

TEST(Surrogate, SaveLoadRoundTrip) {
  SurrogateSet set(small_config());
  set.set_output_scaling(Feature::kEdgeCount, 3.0, 2.0);
  const auto path = std::filesystem::temp_directory_path() / "ccodec_surrogate.ckpt";
  set.save(path, {{"k", 1}});
  nlohmann::json meta;
  const SurrogateSet loaded = SurrogateSet::load(path, &meta);
  EXPECT_EQ(meta.at("k"), 1);
  std::mt19937_64 rng(5);
  DecodedGraph g{fixtures::random_matrix(6, 6, rng, 0.0, 1.0), fixtures::random_matrix(6, 5, rng)};
  EXPECT_EQ(set.predict_all(g), loaded.predict_all(g));
  std::filesystem::remove(path);
}

TEST(Surrogate, TooFewReciprocityPairsIsAnError) {
  DecodedDraws d = synthetic_draws(30, 6, 6);
  for (auto& t : d.truth) t.reciprocity_scaled.reset();
  SurrogateSet set(small_config());
  SurrogateTrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_surrogates(d, set, cfg), InsufficientValidPairs);
}

TEST(Surrogate, LearnsEdgeCountOnVaryingDensities) {
  const DecodedDraws d = synthetic_draws(300, 6, 7);
  SurrogateSet set(small_config());
  SurrogateTrainConfig cfg;
  cfg.epochs = 60;
  cfg.min_reciprocity_pairs = 5;
  const PearsonReport r = train_surrogates(d, set, cfg);
  EXPECT_EQ(r.n_pairs, 60U);
  ASSERT_TRUE(r.edge_count_r);
  EXPECT_GT(*r.edge_count_r, 0.9);
  ASSERT_TRUE(r.non_neuronal_r);
  EXPECT_GT(*r.non_neuronal_r, 0.8);
  const auto j = r.to_json();
  for (const char* key : {"edge_count_r", "reciprocity_r", "betweenness_r", "non_neuronal_r", "n_pairs",
                          "n_excluded_reciprocity"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}
