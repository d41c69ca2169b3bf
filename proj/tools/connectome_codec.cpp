#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ccodec/errors.hpp"
#include "ccodec/pipeline.hpp"

namespace fs = std::filesystem;
using Command = std::function<nlohmann::json(const ccodec::CommandContext&)>;

int main(int argc, char** argv) {
  CLI::App app{"Compress connectome subgraphs into latent codes, explain and steer them."};
  app.require_subcommand(1);

  std::optional<std::string> config, out, checkpoint;
  std::optional<std::uint64_t> seed;
  std::string split = "test";

  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"sample", {"Build the dataset splits and manifest", ccodec::cmd_sample}},
      {"train", {"Run the 1+2n training schedule", ccodec::cmd_train}},
      {"eval-recon", {"Reconstruction metrics on a split", ccodec::cmd_eval_recon}},
      {"eval-gen", {"Generation MMD against a split", ccodec::cmd_eval_gen}},
      {"surrogate-train", {"Fit the four statistic surrogates", ccodec::cmd_surrogate_train}},
      {"explain", {"Shapley attribution, tables and sweeps", ccodec::cmd_explain}},
      {"dp-generate", {"Controlled generation by dynamic program", ccodec::cmd_dp_generate}},
      {"cmaes-generate", {"Latent search against target graphs", ccodec::cmd_cmaes_generate}},
      {"grid", {"Schedule (n) and latent-size sweeps", ccodec::cmd_grid}},
  };
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", out, "Output root (overrides CONNECTOME_CODEC_OUT)");
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint (train: resume from it)");
    sub->add_option("--split", split, "Dataset split")->check(CLI::IsMember({"train", "test", "val"}));
  }
  CLI11_PARSE(app, argc, argv);

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    auto path = [](const std::optional<std::string>& s) -> std::optional<fs::path> {
      return s ? std::optional<fs::path>(*s) : std::nullopt;
    };
    const ccodec::CommandContext ctx = ccodec::make_context(path(config), seed, path(out), path(checkpoint), split);
    const nlohmann::json report = commands.at(name).second(ctx);
    std::cout << report.dump(2) << '\n';
  } catch (const ccodec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
