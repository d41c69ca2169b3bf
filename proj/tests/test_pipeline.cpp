#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ccodec/errors.hpp"
#include "ccodec/metrics.hpp"
#include "ccodec/pipeline.hpp"

using namespace ccodec;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 5;
  c.n_samples = 20;
  c.data.synth.n_neurons = 1500;
  c.data.synth.edge_prob_scale = 1.0;
  c.data.synth.length_scale = 30.0;
  c.model.latent_dim = 4;
  c.model.gat_heads = 2;
  c.model.gat_head_dim = 4;
  c.model.edge_embed_dim = 8;
  c.model.encoder_hidden = 32;
  c.model.decoder_hidden = 32;
  c.model.edge_decoder_hidden = 16;
  c.train.epochs_pretrain = 2;
  c.train.epochs_cd = 2;
  c.train.epochs_full = 2;
  c.train.batch_size = 8;
  c.surrogate.row_width = 4;
  c.surrogate.hidden = 16;
  c.surrogate_train.n_latent = 60;
  c.surrogate_train.epochs = 3;
  c.surrogate_train.min_reciprocity_pairs = 1;
  c.explain.n_samples = 20;
  c.explain.n_background = 10;
  c.explain.n_permutations = 8;
  c.explain.sweep_points = 5;
  c.explain.top_k = 2;
  c.cmaes.search.generations = 5;
  c.cmaes.n_targets = 2;
  c.eval.n_gen = 4;
  c.grid.kind = "n";
  c.grid.n_values = {0, 1};
  return c;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("ccodec_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  CommandContext context(const RunConfig& c, std::string split = "test") {
    const fs::path cfg = root_.parent_path() / (root_.filename().string() + ".json");
    std::ofstream(cfg) << nlohmann::json(c).dump();
    CommandContext ctx = make_context(cfg, std::nullopt, root_, std::nullopt, std::move(split));
    fs::remove(cfg);
    return ctx;
  }

  fs::path root_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(RunConfigTest, JsonRoundTrip) {
  RunConfig c = tiny_config();
  c.dp.resolution = 0.25;
  c.dp.feature = Feature::kBetweenness;
  c.eval.estimator = MmdEstimator::kBiased;
  c.data.synth.label_mix = {0.15, 0.12, 0.70, 0.03};
  const nlohmann::json j = c;
  const RunConfig back = nlohmann::json::parse(j.dump()).get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.dp.feature, Feature::kBetweenness);
  EXPECT_EQ(*back.dp.resolution, 0.25);
}

TEST(RunConfigTest, RejectsInvalidDocuments) {
  EXPECT_THROW(nlohmann::json({{"sede", 1}}).get<RunConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"eval", {{"estimator", "fast"}}}}).get<RunConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"dp", {{"feature", "density"}}}}).get<RunConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"grid", {{"kind", "all"}}}}).get<RunConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"train", {{"epoch", 3}}}}).get<RunConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"cmaes", {{"search", {{"gens", 3}}}}}}).get<RunConfig>(), ConfigError);
  try {
    load_run_config("/nonexistent/run.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.json"), std::string::npos);
  }
}

TEST(RunConfigTest, SeedsDeriveFromMasterSeed) {
  RunConfig a = tiny_config();
  RunConfig b = tiny_config();
  b.seed = 6;
  const RunConfig ra = a.resolved(), rb = b.resolved();
  EXPECT_NE(ra.train.seed, rb.train.seed);
  EXPECT_NE(ra.model.init_seed, ra.train.seed);
  EXPECT_NE(config_hash(ra), config_hash(rb));
  EXPECT_EQ(config_hash(ra), config_hash(a.resolved()));
}

TEST(RunConfigTest, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(RunConfigTest, OutputRootPrecedence) {
  RunConfig c;
  c.out = "from_config";
  unsetenv("CONNECTOME_CODEC_OUT");
  EXPECT_EQ(resolve_out(c, std::nullopt), fs::path("from_config"));
  setenv("CONNECTOME_CODEC_OUT", "from_env", 1);
  EXPECT_EQ(resolve_out(c, std::nullopt), fs::path("from_env"));
  EXPECT_EQ(resolve_out(c, fs::path("from_flag")), fs::path("from_flag"));
  unsetenv("CONNECTOME_CODEC_OUT");
}

TEST(RunConfigTest, UnknownSplitIsRejected) {
  EXPECT_THROW(make_context(std::nullopt, std::nullopt, fs::path("x"), std::nullopt, "holdout"), ConfigError);
}

TEST_F(PipelineTest, SampleSplitsAndManifestAreDeterministic) {
  RunConfig c = tiny_config();
  c.n_samples = 500;
  const auto ctx = context(c);
  const nlohmann::json r = cmd_sample(ctx);
  EXPECT_EQ(r["manifest"]["counts"]["train"], 400);
  EXPECT_EQ(r["manifest"]["counts"]["test"], 50);
  EXPECT_EQ(r["manifest"]["counts"]["val"], 50);
  EXPECT_EQ(load_split(ctx.paths.split("train")).size(), 400U);
  const std::string first = slurp(ctx.paths.manifest());
  cmd_sample(ctx);
  EXPECT_EQ(slurp(ctx.paths.manifest()), first);
  EXPECT_EQ(r["manifest_hash"], hex64(fnv1a64(first)));
}

TEST_F(PipelineTest, MissingInputFileNamesThePath) {
  RunConfig c = tiny_config();
  c.data.synthetic = false;
  c.data.neuron_file = root_ / "absent_neurons.csv";
  c.data.edge_file = root_ / "absent_edges.csv";
  try {
    cmd_sample(context(c));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("absent_neurons.csv"), std::string::npos) << e.what();
  }
}

TEST_F(PipelineTest, TrainResumeAndReproducibleReports) {
  const RunConfig c = tiny_config();
  const auto ctx = context(c);
  cmd_sample(ctx);
  const nlohmann::json trained = cmd_train(ctx);
  EXPECT_EQ(trained["phases_run"], 3);
  EXPECT_TRUE(fs::exists(ctx.paths.final_model()));
  const auto full_history = read_history_csv(ctx.paths.history());
  EXPECT_EQ(full_history.size(), 6U);

  const nlohmann::json first = cmd_eval_recon(ctx);
  EXPECT_EQ(cmd_eval_recon(ctx), first);
  EXPECT_EQ(first["split"], "test");
  EXPECT_EQ(first["reconstruction"]["diagonal_excluded"], true);
  EXPECT_FALSE(first["config_hash"].get<std::string>().empty());
  EXPECT_FALSE(first["manifest_hash"].is_null());

  CommandContext resume = ctx;
  resume.checkpoint = ctx.paths.model_dir() / "phase_1.ckpt";
  const nlohmann::json resumed = cmd_train(resume);
  EXPECT_EQ(resumed["resumed_from_phase"], 1);
  EXPECT_EQ(resumed["phases_run"], 2);
  const auto history = read_history_csv(ctx.paths.history());
  ASSERT_EQ(history.size(), 7U);
  EXPECT_EQ(history[0].phase, full_history[0].phase);
  EXPECT_EQ(history[2].phase, "resume");
}

TEST_F(PipelineTest, UntrainedModelIsAtChance) {
  RunConfig c = tiny_config();
  c.n_samples = 100;
  const auto ctx = context(c, "train");
  cmd_sample(ctx);
  fs::create_directories(ctx.paths.model_dir());
  VaeModel(ctx.config.model).save(ctx.paths.final_model());
  const auto auc = cmd_eval_recon(ctx)["reconstruction"]["edge_auc"].get<double>();
  EXPECT_NEAR(auc, 0.5, 0.05);
}

TEST(ReconstructionMetricsTest, PerfectReconstructionScoresOne) {
  Adjacency a(4);
  a.set(0, 1);
  a.set(2, 3);
  a.set(3, 0);
  Matrix probs = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) probs(i, j) = a(i, j) ? 1.0 : 0.0;
  }
  const EdgeScores s = edge_scores({&probs}, {&a}, 0.5);
  EXPECT_DOUBLE_EQ(*s.auc, 1.0);
  EXPECT_DOUBLE_EQ(s.accuracy, 1.0);
  const std::vector<int> labels{0, 1, 2, 3, 4, 4};
  EXPECT_DOUBLE_EQ(accuracy(labels, labels), 1.0);
  EXPECT_DOUBLE_EQ(macro_f1(labels, labels, kNumClasses), 1.0);
}

TEST_F(PipelineTest, GenerationSelfComparisonIsZero) {
  const RunConfig c = tiny_config();
  const auto ctx = context(c);
  cmd_sample(ctx);
  const auto test = load_split(ctx.paths.split("train"));
  MmdOptions opt;
  opt.estimator = MmdEstimator::kBiased;
  const GenerationReport r = generation_mmd_report(test, test, opt);
  EXPECT_LT(std::abs(r.deg_mmd), 1e-12);
  EXPECT_LT(std::abs(r.clus_mmd), 1e-12);
  EXPECT_LT(std::abs(r.orbit_mmd), 1e-12);
}

TEST_F(PipelineTest, DownstreamCommandsEmitTheirArtifacts) {
  const RunConfig c = tiny_config();
  const auto ctx = context(c);
  cmd_sample(ctx);
  cmd_train(ctx);
  const nlohmann::json gen = cmd_eval_gen(ctx);
  EXPECT_EQ(gen["n_generated"], 4);
  EXPECT_TRUE(gen["generation"].contains("bandwidths"));
  cmd_surrogate_train(ctx);
  const nlohmann::json ex = cmd_explain(ctx);
  for (Feature f : kFeatures) {
    const std::string name = feature_name(f);
    EXPECT_TRUE(fs::exists(ctx.paths.explain_dir() / ("shap_" + name + ".csv"))) << name;
    EXPECT_TRUE(fs::exists(ctx.paths.shap_table(f))) << name;
    EXPECT_LT(ex["features"][name]["max_efficiency_gap"].get<double>(), 1e-6);
  }
  const nlohmann::json dp = cmd_dp_generate(ctx);
  EXPECT_EQ(dp["rows"].size(), 10U);
  EXPECT_TRUE(dp.contains("spearman_rho"));
  const nlohmann::json cma = cmd_cmaes_generate(ctx);
  EXPECT_EQ(cma["rows"].size(), 4U);  // two targets, two objectives
  for (const auto& row : cma["rows"]) EXPECT_TRUE(row.contains("zero_baseline_acc"));
  EXPECT_TRUE(fs::exists(ctx.paths.report("cmaes-generate")));
}

TEST_F(PipelineTest, ScheduleGridWritesOneHistoryPerSetting) {
  const RunConfig c = tiny_config();
  const auto ctx = context(c);
  cmd_sample(ctx);
  const nlohmann::json r = cmd_grid(ctx);
  ASSERT_EQ(r["n_grid"].size(), 2U);
  EXPECT_TRUE(fs::exists(ctx.paths.root / "grid" / "n_0" / "history.csv"));
  EXPECT_TRUE(fs::exists(ctx.paths.root / "grid" / "n_1" / "history.csv"));
  EXPECT_TRUE(r["node_f1_n1_at_least_n0"].is_boolean());
  std::ifstream csv(ctx.paths.root / "grid" / "grid_n.csv");
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 3);
}
