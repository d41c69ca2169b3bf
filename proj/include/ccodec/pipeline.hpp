#pragma once

// Run configuration, output layout and the command implementations behind
// the connectome-codec CLI. Every command writes a JSON report under the
// output root and returns it.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ccodec/data_ingest.hpp"
#include "ccodec/graph_stats.hpp"
#include "ccodec/latent_control.hpp"
#include "ccodec/surrogate.hpp"
#include "ccodec/training.hpp"
#include "ccodec/vae_model.hpp"

namespace ccodec {

void to_json(nlohmann::json& j, const SynthParams& p);
void from_json(const nlohmann::json& j, SynthParams& p);
void to_json(nlohmann::json& j, const SamplingConfig& c);
void from_json(const nlohmann::json& j, SamplingConfig& c);

struct DataSource {
  bool synthetic = true;
  std::filesystem::path neuron_file;
  std::filesystem::path edge_file;
  SynthParams synth;
};

struct ExplainConfig {
  int n_samples = 200;
  int n_background = 100;
  int n_permutations = 256;
  int bins = 11;
  int min_count = 1;
  int sweep_points = 13;
  int top_k = 6;
};

struct DpConfig {
  Feature feature = Feature::kEdgeCount;
  int n_targets = 10;
  std::optional<double> resolution;
};

struct CmaRunConfig {
  CmaConfig search;
  int n_targets = 10;  // taken from the head of the test split
};

struct EvalConfig {
  int n_gen = 50;
  MmdEstimator estimator = MmdEstimator::kUnbiased;
  bool exclude_isolated = false;
};

struct GridConfig {
  std::string kind = "both";  // "n", "latent" or "both"
  std::vector<int> n_values{0, 1, 2, 3, 4};
  std::vector<int> latent_dims{4, 5, 6, 8, 16, 32};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";
  DataSource data;
  std::size_t n_samples = 500;
  SamplingConfig sampling;
  ModelConfig model;
  TrainConfig train;
  SurrogateConfig surrogate;
  SurrogateTrainConfig surrogate_train;
  ExplainConfig explain;
  DpConfig dp;
  CmaRunConfig cmaes;
  EvalConfig eval;
  GridConfig grid;

  // Copy with every component seed derived from `seed`.
  [[nodiscard]] RunConfig resolved() const;
};
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Raises ConfigError with the path on unreadable or invalid JSON.
RunConfig load_run_config(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t h);
// Hash of the canonical JSON dump of the resolved config.
std::string config_hash(const RunConfig& c);

// Output root: explicit flag, else CONNECTOME_CODEC_OUT, else config.out.
std::filesystem::path resolve_out(const RunConfig& c, const std::optional<std::filesystem::path>& flag);

struct RunPaths {
  std::filesystem::path root;

  [[nodiscard]] std::filesystem::path data() const { return root / "data"; }
  [[nodiscard]] std::filesystem::path manifest() const { return data() / "manifest.json"; }
  [[nodiscard]] std::filesystem::path split(std::string_view name) const;
  [[nodiscard]] std::filesystem::path model_dir() const { return root / "model"; }
  [[nodiscard]] std::filesystem::path final_model() const { return model_dir() / "final.ckpt"; }
  [[nodiscard]] std::filesystem::path history() const { return root / "history.csv"; }
  [[nodiscard]] std::filesystem::path surrogates() const { return root / "surrogates.ckpt"; }
  [[nodiscard]] std::filesystem::path explain_dir() const { return root / "explain"; }
  [[nodiscard]] std::filesystem::path shap_table(Feature f) const;
  [[nodiscard]] std::filesystem::path report(std::string_view command) const;
};

struct CommandContext {
  RunConfig config;  // resolved
  RunPaths paths;
  std::optional<std::filesystem::path> checkpoint;
  std::string split = "test";
};

// Loads or defaults the config, applies --seed, resolves seeds and the
// output root.
CommandContext make_context(const std::optional<std::filesystem::path>& config_path,
                            std::optional<std::uint64_t> seed, const std::optional<std::filesystem::path>& out,
                            std::optional<std::filesystem::path> checkpoint, std::string split);

nlohmann::json cmd_sample(const CommandContext& ctx);
nlohmann::json cmd_train(const CommandContext& ctx);
nlohmann::json cmd_eval_recon(const CommandContext& ctx);
nlohmann::json cmd_eval_gen(const CommandContext& ctx);
nlohmann::json cmd_surrogate_train(const CommandContext& ctx);
nlohmann::json cmd_explain(const CommandContext& ctx);
nlohmann::json cmd_dp_generate(const CommandContext& ctx);
nlohmann::json cmd_cmaes_generate(const CommandContext& ctx);
nlohmann::json cmd_grid(const CommandContext& ctx);

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path);
nlohmann::json reconstruction_json(const ReconstructionMetrics& m);
nlohmann::json generation_json(const GenerationReport& r);
// Inverse of feature_name; raises ConfigError.
Feature parse_feature(std::string_view name);

}  // namespace ccodec
