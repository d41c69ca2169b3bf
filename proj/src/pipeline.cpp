#include "ccodec/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "ccodec/errors.hpp"
#include "ccodec/explain.hpp"
#include "ccodec/metrics.hpp"
#include "ccodec/random.hpp"

namespace ccodec {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json position_json(const Position& p) { return json::array({p.x, p.y, p.z}); }

Position position_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("box corners need three coordinates");
  return {v[0], v[1], v[2]};
}

const char* estimator_name(MmdEstimator e) { return e == MmdEstimator::kBiased ? "biased" : "unbiased"; }

MmdEstimator parse_estimator(const std::string& s) {
  if (s == "biased") return MmdEstimator::kBiased;
  if (s == "unbiased") return MmdEstimator::kUnbiased;
  throw ConfigError("unknown MMD estimator '" + s + "'");
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

json report_header(const CommandContext& ctx, const char* command) {
  json h{{"command", command}, {"config_hash", config_hash(ctx.config)}, {"manifest_hash", nullptr}};
  if (fs::exists(ctx.paths.manifest())) h["manifest_hash"] = file_hash(ctx.paths.manifest());
  return h;
}

json finish(const CommandContext& ctx, const char* command, json report) {
  write_json(ctx.paths.report(command), report);
  return report;
}

fs::path model_path(const CommandContext& ctx) { return ctx.checkpoint.value_or(ctx.paths.final_model()); }

Matrix normal_rows(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix z(rows, cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n01(rng);
  return z;
}

std::ofstream open_csv(const fs::path& path, const std::string& header) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(10) << header << '\n';
  return out;
}

// Trains a fresh model and scores it on the test split.
json grid_point(const ModelConfig& mc, const TrainConfig& tc, const Dataset& data, const fs::path& dir) {
  VaeModel model(mc);
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  fs::create_directories(dir);
  const TrainResult r = train_1_2n(data.train, data.validation, model, tc, opt);
  write_history_csv(r.history, dir / "history.csv");
  const ReconstructionMetrics m = evaluate_reconstruction(model, data.test);
  json row = reconstruction_json(m);
  row["n"] = tc.n;
  row["latent_dim"] = mc.latent_dim;
  row["phases_run"] = r.phases_run;
  return row;
}

Dataset load_dataset(const RunPaths& paths) {
  Dataset d;
  d.train = load_split(paths.split("train"));
  d.validation = load_split(paths.split("val"));
  d.test = load_split(paths.split("test"));
  return d;
}

}  // namespace

// ---- JSON ------------------------------------------------------------------

void to_json(json& j, const SynthParams& p) {
  j = json{{"n_neurons", p.n_neurons},
           {"box", {{"min", position_json(p.box.min)}, {"max", position_json(p.box.max)}}},
           {"label_mix", p.label_mix},
           {"edge_prob_scale", p.edge_prob_scale},
           {"length_scale", p.length_scale},
           {"seed", p.seed}};
}

void from_json(const json& j, SynthParams& p) {
  reject_unknown(j, {"n_neurons", "box", "label_mix", "edge_prob_scale", "length_scale", "seed"}, "synthetic");
  const SynthParams d;
  p.n_neurons = j.value("n_neurons", d.n_neurons);
  p.box = d.box;
  if (j.contains("box")) {
    p.box.min = position_from(j.at("box").at("min"));
    p.box.max = position_from(j.at("box").at("max"));
  }
  p.label_mix = j.value("label_mix", d.label_mix);
  p.edge_prob_scale = j.value("edge_prob_scale", d.edge_prob_scale);
  p.length_scale = j.value("length_scale", d.length_scale);
  p.seed = j.value("seed", d.seed);
}

void to_json(json& j, const SamplingConfig& c) {
  j = json{{"min_neurons", c.min_neurons},
           {"max_neurons", c.max_neurons},
           {"max_iterations", c.max_iterations},
           {"relative_tolerance", c.relative_tolerance},
           {"retry_budget", c.retry_budget}};
}

void from_json(const json& j, SamplingConfig& c) {
  const SamplingConfig d;
  c.min_neurons = j.value("min_neurons", d.min_neurons);
  c.max_neurons = j.value("max_neurons", d.max_neurons);
  c.max_iterations = j.value("max_iterations", d.max_iterations);
  c.relative_tolerance = j.value("relative_tolerance", d.relative_tolerance);
  c.retry_budget = j.value("retry_budget", d.retry_budget);
}

Feature parse_feature(std::string_view name) {
  for (Feature f : kFeatures) {
    if (name == feature_name(f)) return f;
  }
  throw ConfigError("unknown feature '" + std::string(name) + "'");
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"seed", c.seed},
           {"out", c.out.string()},
           {"n_samples", c.n_samples},
           {"data",
            {{"source", c.data.synthetic ? "synthetic" : "files"},
             {"neuron_file", c.data.neuron_file.string()},
             {"edge_file", c.data.edge_file.string()},
             {"synthetic", c.data.synth}}},
           {"sampling", c.sampling},
           {"model", c.model},
           {"train", c.train},
           {"surrogate", c.surrogate},
           {"surrogate_train", c.surrogate_train},
           {"explain",
            {{"n_samples", c.explain.n_samples},
             {"n_background", c.explain.n_background},
             {"n_permutations", c.explain.n_permutations},
             {"bins", c.explain.bins},
             {"min_count", c.explain.min_count},
             {"sweep_points", c.explain.sweep_points},
             {"top_k", c.explain.top_k}}},
           {"dp",
            {{"feature", feature_name(c.dp.feature)},
             {"n_targets", c.dp.n_targets},
             {"resolution", opt_json(c.dp.resolution)}}},
           {"cmaes", {{"search", c.cmaes.search}, {"n_targets", c.cmaes.n_targets}}},
           {"eval",
            {{"n_gen", c.eval.n_gen},
             {"estimator", estimator_name(c.eval.estimator)},
             {"exclude_isolated", c.eval.exclude_isolated}}},
           {"grid", {{"kind", c.grid.kind}, {"n_values", c.grid.n_values}, {"latent_dims", c.grid.latent_dims}}}};
}

// Every key of `given` must appear in `reference`, recursively through objects.
void reject_unknown_like(const json& given, const json& reference, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    if (!reference.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    if (value.is_object() && reference.at(key).is_object()) reject_unknown_like(value, reference.at(key), where + "." + key);
  }
}

void from_json(const json& j, RunConfig& c) {
  const RunConfig d;
  reject_unknown_like(j, json(d), "run config");
  c.seed = j.value("seed", d.seed);
  c.out = j.value("out", d.out.string());
  c.n_samples = j.value("n_samples", d.n_samples);
  c.data = d.data;
  if (j.contains("data")) {
    const json& s = j.at("data");
    const std::string source = s.value("source", "synthetic");
    if (source != "synthetic" && source != "files") throw ConfigError("data.source must be synthetic or files");
    c.data.synthetic = source == "synthetic";
    c.data.neuron_file = s.value("neuron_file", "");
    c.data.edge_file = s.value("edge_file", "");
    if (s.contains("synthetic")) c.data.synth = s.at("synthetic").get<SynthParams>();
  }
  c.sampling = j.value("sampling", d.sampling);
  c.model = j.value("model", d.model);
  c.train = j.value("train", d.train);
  c.surrogate = j.value("surrogate", d.surrogate);
  c.surrogate_train = j.value("surrogate_train", d.surrogate_train);
  c.explain = d.explain;
  if (j.contains("explain")) {
    const json& e = j.at("explain");
    c.explain.n_samples = e.value("n_samples", d.explain.n_samples);
    c.explain.n_background = e.value("n_background", d.explain.n_background);
    c.explain.n_permutations = e.value("n_permutations", d.explain.n_permutations);
    c.explain.bins = e.value("bins", d.explain.bins);
    c.explain.min_count = e.value("min_count", d.explain.min_count);
    c.explain.sweep_points = e.value("sweep_points", d.explain.sweep_points);
    c.explain.top_k = e.value("top_k", d.explain.top_k);
  }
  c.dp = d.dp;
  if (j.contains("dp")) {
    const json& p = j.at("dp");
    c.dp.feature = parse_feature(p.value("feature", std::string(feature_name(d.dp.feature))));
    c.dp.n_targets = p.value("n_targets", d.dp.n_targets);
    if (p.contains("resolution") && !p.at("resolution").is_null()) c.dp.resolution = p.at("resolution").get<double>();
  }
  c.cmaes = d.cmaes;
  if (j.contains("cmaes")) {
    const json& m = j.at("cmaes");
    c.cmaes.search = m.value("search", d.cmaes.search);
    c.cmaes.n_targets = m.value("n_targets", d.cmaes.n_targets);
  }
  c.eval = d.eval;
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    c.eval.n_gen = e.value("n_gen", d.eval.n_gen);
    c.eval.estimator = parse_estimator(e.value("estimator", std::string(estimator_name(d.eval.estimator))));
    c.eval.exclude_isolated = e.value("exclude_isolated", d.eval.exclude_isolated);
  }
  c.grid = d.grid;
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    c.grid.kind = g.value("kind", d.grid.kind);
    if (c.grid.kind != "n" && c.grid.kind != "latent" && c.grid.kind != "both") {
      throw ConfigError("grid.kind must be n, latent or both");
    }
    c.grid.n_values = g.value("n_values", d.grid.n_values);
    c.grid.latent_dims = g.value("latent_dims", d.grid.latent_dims);
  }
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.data.synth.seed = derive_seed(seed, 1);
  r.model.init_seed = derive_seed(seed, 3);
  r.train.seed = derive_seed(seed, 4);
  r.surrogate.init_seed = derive_seed(seed, 5);
  r.surrogate_train.seed = derive_seed(seed, 6);
  r.cmaes.search.seed = derive_seed(seed, 7);
  return r;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in).get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(json(c).dump())); }

fs::path resolve_out(const RunConfig& c, const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("CONNECTOME_CODEC_OUT"); env && *env) return env;
  return c.out;
}

fs::path RunPaths::split(std::string_view name) const {
  if (name != "train" && name != "test" && name != "val") {
    throw ConfigError("split must be train, test or val, not '" + std::string(name) + "'");
  }
  return data() / (std::string(name) + ".json");
}

fs::path RunPaths::shap_table(Feature f) const {
  return explain_dir() / (std::string("shap_table_") + feature_name(f) + ".json");
}

fs::path RunPaths::report(std::string_view command) const {
  return root / "reports" / (std::string(command) + ".json");
}

CommandContext make_context(const std::optional<fs::path>& config_path, std::optional<std::uint64_t> seed,
                            const std::optional<fs::path>& out, std::optional<fs::path> checkpoint,
                            std::string split) {
  RunConfig cfg = config_path ? load_run_config(*config_path) : RunConfig{};
  if (seed) cfg.seed = *seed;
  cfg.out = resolve_out(cfg, out);
  CommandContext ctx;
  ctx.config = cfg.resolved();
  ctx.paths.root = ctx.config.out;
  ctx.checkpoint = std::move(checkpoint);
  ctx.split = std::move(split);
  static_cast<void>(ctx.paths.split(ctx.split));  // validates the name
  return ctx;
}

json reconstruction_json(const ReconstructionMetrics& m) {
  return json{{"edge_auc", opt_json(m.edge_auc)}, {"edge_acc", m.edge_acc},
              {"zero_baseline_acc", m.zero_baseline_acc}, {"node_acc", m.node_acc},
              {"node_f1", m.node_f1},   {"n_samples", m.n_samples},
              {"diagonal_excluded", true}};
}

json generation_json(const GenerationReport& r) {
  return json{{"deg_mmd", r.deg_mmd},
              {"clus_mmd", r.clus_mmd},
              {"orbit_mmd", r.orbit_mmd},
              {"bandwidths", {{"deg", r.deg_bandwidth}, {"clus", r.clus_bandwidth}, {"orbit", r.orbit_bandwidth}}}};
}

std::vector<HistoryRow> read_history_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open history " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw MalformedRow("history row has " + std::to_string(f.size()) + " fields: " + line);
    HistoryRow r;
    r.phase = f[0];
    r.epoch = std::stoi(f[1]);
    r.loss_total = std::stod(f[2]);
    r.loss_edge = std::stod(f[3]);
    r.loss_node = std::stod(f[4]);
    r.loss_kl = std::stod(f[5]);
    if (f[6] != "nan") r.val_edge_auc = std::stod(f[6]);
    r.val_node_acc = std::stod(f[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- commands ----------------------------------------------------------------

json cmd_sample(const CommandContext& ctx) {
  const RunConfig& c = ctx.config;
  const ConnectomeTable table =
      c.data.synthetic ? synth_connectome(c.data.synth) : load_connectome(c.data.neuron_file, c.data.edge_file);
  const std::uint64_t split_seed = derive_seed(c.seed, 2);
  const Dataset ds = build_dataset(table, c.n_samples, split_seed, c.sampling);
  fs::create_directories(ctx.paths.data());
  save_split(ds.train, ctx.paths.split("train"));
  save_split(ds.test, ctx.paths.split("test"));
  save_split(ds.validation, ctx.paths.split("val"));
  json manifest{{"source", c.data.synthetic ? "synthetic" : "files"},
                {"n_neurons", table.neurons.size()},
                {"n_edges", table.edges.size()},
                {"n_samples", c.n_samples},
                {"split_seed", split_seed},
                {"config_hash", config_hash(c)},
                {"counts", {{"train", ds.train.size()}, {"test", ds.test.size()}, {"val", ds.validation.size()}}},
                {"files", json::object()}};
  for (const char* name : {"train", "test", "val"}) {
    manifest["files"][name] = {{"path", std::string(name) + ".json"}, {"fnv1a64", file_hash(ctx.paths.split(name))}};
  }
  write_json(ctx.paths.manifest(), manifest);
  json report = report_header(ctx, "sample");
  report["manifest"] = manifest;
  return finish(ctx, "sample", report);
}

json cmd_train(const CommandContext& ctx) {
  const Dataset data = load_dataset(ctx.paths);
  TrainOptions opt;
  opt.checkpoint_dir = ctx.paths.model_dir();
  fs::create_directories(ctx.paths.model_dir());
  std::optional<VaeModel> model;
  if (ctx.checkpoint) {
    json meta;
    model.emplace(VaeModel::load(*ctx.checkpoint, &meta));
    if (!meta.contains("completed_phases")) {
      throw ConfigError("checkpoint " + ctx.checkpoint->string() + " carries no completed_phases marker");
    }
    opt.completed_phases = meta.at("completed_phases").get<int>();
    if (fs::exists(ctx.paths.history())) {
      // Keep the rows of completed phases only; a partial phase is rerun.
      int phases = 0;
      std::string last;
      for (const HistoryRow& r : read_history_csv(ctx.paths.history())) {
        if (r.phase != "resume" && r.phase != last) ++phases;
        if (r.phase != "resume") last = r.phase;
        if (phases > opt.completed_phases) break;
        opt.prior_history.push_back(r);
      }
    }
  } else {
    model.emplace(ctx.config.model);
  }
  const TrainResult result = train_1_2n(data.train, data.validation, *model, ctx.config.train, opt);
  write_history_csv(result.history, ctx.paths.history());
  if (ctx.config.train.calibrate_kappa) model->set_kappa(calibrate_kappa(*model, data.train));
  json report = report_header(ctx, "train");
  model->save(ctx.paths.final_model(), {{"completed_phases", static_cast<int>(schedule(ctx.config.train.n).size())},
                                        {"config_hash", report["config_hash"]},
                                        {"manifest_hash", report["manifest_hash"]}});
  report["phases_run"] = result.phases_run;
  report["resumed_from_phase"] = opt.completed_phases;
  report["history_rows"] = result.history.size();
  report["kappa"] = model->config().kappa;
  report["validation"] = reconstruction_json(evaluate_reconstruction(*model, data.validation));
  report["validation"]["split"] = "val";
  report["checkpoint"] = ctx.paths.final_model().string();
  return finish(ctx, "train", report);
}

json cmd_eval_recon(const CommandContext& ctx) {
  const VaeModel model = VaeModel::load(model_path(ctx));
  const auto samples = load_split(ctx.paths.split(ctx.split));
  json report = report_header(ctx, "eval-recon");
  report["split"] = ctx.split;
  report["kappa"] = model.config().kappa;
  report["reconstruction"] = reconstruction_json(evaluate_reconstruction(model, samples));
  return finish(ctx, ("eval-recon-" + ctx.split).c_str(), report);
}

json cmd_eval_gen(const CommandContext& ctx) {
  const VaeModel model = VaeModel::load(model_path(ctx));
  const auto reference = load_split(ctx.paths.split(ctx.split));
  const Matrix z = normal_rows(ctx.config.eval.n_gen, model.config().latent_dim, derive_seed(ctx.config.seed, 10));
  std::vector<SubgraphSample> generated;
  for (const DecodedGraph& dg : model.decode_batch(z)) generated.push_back(discretize(dg, model.config().kappa));
  MmdOptions opt;
  opt.estimator = ctx.config.eval.estimator;
  opt.exclude_isolated = ctx.config.eval.exclude_isolated;
  json report = report_header(ctx, "eval-gen");
  report["split"] = ctx.split;
  report["n_generated"] = generated.size();
  report["n_reference"] = reference.size();
  report["estimator"] = estimator_name(opt.estimator);
  report["generation"] = generation_json(generation_mmd_report(generated, reference, opt));
  return finish(ctx, "eval-gen", report);
}

json cmd_surrogate_train(const CommandContext& ctx) {
  const VaeModel model = VaeModel::load(model_path(ctx));
  SurrogateConfig sc = ctx.config.surrogate;
  sc.n_nodes = model.config().n_nodes;
  sc.n_classes = model.config().n_classes;
  sc.reciprocity_threshold = model.config().kappa;
  SurrogateSet set(sc);
  SurrogateTrainConfig tc = ctx.config.surrogate_train;
  tc.kappa = model.config().kappa;
  const PearsonReport pr = train_surrogates(model, set, tc);
  json report = report_header(ctx, "surrogate-train");
  set.save(ctx.paths.surrogates(), {{"config_hash", report["config_hash"]}});
  report["pearson"] = pr.to_json();
  return finish(ctx, "surrogate-train", report);
}

json cmd_explain(const CommandContext& ctx) {
  const ExplainConfig& ec = ctx.config.explain;
  const VaeModel model = VaeModel::load(model_path(ctx));
  const SurrogateSet set = SurrogateSet::load(ctx.paths.surrogates());
  const int d = model.config().latent_dim;
  const Matrix samples = normal_rows(ec.n_samples, d, derive_seed(ctx.config.seed, 8));
  const Matrix background = normal_rows(ec.n_background, d, derive_seed(ctx.config.seed, 9));
  ShapOptions so;
  so.n_permutations = ec.n_permutations;
  so.seed = derive_seed(ctx.config.seed, 11);
  const auto shap = shap_values(surrogate_composite(model, set), samples, background, so);

  json report = report_header(ctx, "explain");
  report["mode"] = d <= kExactShapMaxDim ? "exact" : "sampled";
  report["n_samples"] = ec.n_samples;
  report["n_background"] = ec.n_background;
  report["features"] = json::object();
  const int k = std::min(ec.top_k, d / 2);
  for (std::size_t fi = 0; fi < kFeatures.size(); ++fi) {
    const Feature f = kFeatures[fi];
    const std::string name = feature_name(f);
    write_shap_csv(shap[fi], samples, ctx.paths.explain_dir() / ("shap_" + name + ".csv"));
    const ShapTable table = build_shap_table(shap[fi], samples, ec.bins, ec.min_count);
    write_json(ctx.paths.shap_table(f), json(table));

    const Vector importance = shap[fi].phi.cwiseAbs().colwise().mean().transpose();
    std::vector<int> order(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return importance(a) > importance(b); });

    std::ofstream csv = open_csv(ctx.paths.explain_dir() / ("sweep_" + name + ".csv"), "dim,z,value");
    std::vector<double> ranges(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      const auto grid = sweep_grid(table.sigma(i) > 0.0 ? table.sigma(i) : 1.0, ec.sweep_points);
      const auto curve = dimension_sweep(model, f, i, grid, model.config().kappa);
      for (const SweepPoint& p : curve) {
        csv << i << ',' << p.z << ',';
        if (p.value) csv << *p.value;
        csv << '\n';
      }
      ranges[i] = sweep_range(curve);
    }
    double top = 0.0, bottom = 0.0;
    for (int r = 0; r < k; ++r) {
      top += ranges[order[r]] / k;
      bottom += ranges[order[d - 1 - r]] / k;
    }
    report["features"][name] = {
        {"base_value", shap[fi].base_value},
        {"max_efficiency_gap", shap[fi].max_efficiency_gap()},
        {"mean_abs_phi", std::vector<double>(importance.data(), importance.data() + d)},
        {"ranked_dims", order},
        {"sweep_range", ranges},
        {"top_k", k},
        {"top_k_mean_range", top},
        {"bottom_k_mean_range", bottom},
        {"top_dims_dominate_sweeps", top > bottom}};
  }
  return finish(ctx, "explain", report);
}

json cmd_dp_generate(const CommandContext& ctx) {
  const DpConfig& dc = ctx.config.dp;
  const VaeModel model = VaeModel::load(model_path(ctx));
  const SurrogateSet set = SurrogateSet::load(ctx.paths.surrogates());
  const ShapTable table = read_json(ctx.paths.shap_table(dc.feature)).get<ShapTable>();
  if (table.dims() != model.config().latent_dim) throw ShapeMismatch("ShapTable and model latent sizes differ");
  DpOptions opt;
  opt.resolution = dc.resolution;
  const DpTable dp = dp_build(table, opt);
  long lo = dp.hi, hi = dp.lo;
  for (long j = dp.lo; j <= dp.hi; ++j) {
    if (!dp.reachable(dp.dims, j)) continue;
    lo = std::min(lo, j);
    hi = std::max(hi, j);
  }

  json report = report_header(ctx, "dp-generate");
  report["feature"] = feature_name(dc.feature);
  report["resolution"] = dp.resolution;
  report["reachable"] = {table.base_value + lo * dp.resolution, table.base_value + hi * dp.resolution};
  report["rows"] = json::array();
  std::ofstream csv = open_csv(ctx.paths.root / "dp_targets.csv", "target,predicted,surrogate,achieved,clamped");
  std::vector<double> targets, achieved;
  for (int t = 0; t < dc.n_targets; ++t) {
    const double frac = (t + 0.5) / dc.n_targets;
    const double target = table.base_value + (lo + frac * static_cast<double>(hi - lo)) * dp.resolution;
    const DpGeneration g = dp_generate(dp, table.base_value, target);
    const DecodedGraph dg = model.decode_batch(g.z.transpose())[0];
    const auto truth = feature_value(feature_vector(discretize(dg, model.config().kappa)), dc.feature);
    const double surrogate = set.predict(dc.feature, dg);
    report["rows"].push_back({{"target", target},
                              {"predicted", g.predicted},
                              {"surrogate", surrogate},
                              {"achieved", opt_json(truth)},
                              {"gap", g.gap},
                              {"clamped", g.clamped},
                              {"z", std::vector<double>(g.z.data(), g.z.data() + g.z.size())}});
    csv << target << ',' << g.predicted << ',' << surrogate << ',';
    if (truth) csv << *truth;
    csv << ',' << (g.clamped ? 1 : 0) << '\n';
    if (truth) {
      targets.push_back(target);
      achieved.push_back(*truth);
    }
  }
  report["spearman_rho"] = opt_json(spearman(targets, achieved));
  return finish(ctx, "dp-generate", report);
}

json cmd_cmaes_generate(const CommandContext& ctx) {
  const VaeModel model = VaeModel::load(model_path(ctx));
  const auto targets = load_split(ctx.paths.split(ctx.split));
  const int count = std::min<int>(ctx.config.cmaes.n_targets, static_cast<int>(targets.size()));
  json report = report_header(ctx, "cmaes-generate");
  report["split"] = ctx.split;
  report["rows"] = json::array();
  std::ofstream trace = open_csv(ctx.paths.root / "cmaes_trace.csv", "target,objective,generation,best_fitness");
  int compared = 0, full_wins = 0;
  for (int t = 0; t < count; ++t) {
    CmaConfig cfg = ctx.config.cmaes.search;
    cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t));
    cfg.kappa = model.config().kappa;
    std::optional<double> auc[2];
    int oi = 0;
    for (CmaObjective o : {CmaObjective::kFullAdjacency, CmaObjective::kDegreeStats}) {
      const CmaReport r = cmaes_generate(model, targets[t], o, cfg);
      json row = r.to_json();
      row["target"] = t;
      row.erase("best_fitness_trace");
      report["rows"].push_back(row);
      for (std::size_t g = 0; g < r.best_fitness_trace.size(); ++g) {
        trace << t << ',' << objective_name(o) << ',' << g << ',' << r.best_fitness_trace[g] << '\n';
      }
      auc[oi++] = r.final_auc;
    }
    if (auc[0] && auc[1]) {
      ++compared;
      if (*auc[0] >= *auc[1]) ++full_wins;
    }
  }
  report["paired_targets"] = compared;
  report["full_adjacency_auc_at_least_degree_stats"] = full_wins;
  return finish(ctx, "cmaes-generate", report);
}

json cmd_grid(const CommandContext& ctx) {
  const Dataset data = load_dataset(ctx.paths);
  const GridConfig& gc = ctx.config.grid;
  json report = report_header(ctx, "grid");
  const fs::path dir = ctx.paths.root / "grid";
  const std::string header = "n,latent_dim,edge_auc,edge_acc,node_acc,node_f1";
  auto csv_row = [](std::ofstream& out, const json& row) {
    out << row["n"] << ',' << row["latent_dim"] << ',';
    if (!row["edge_auc"].is_null()) out << row["edge_auc"].get<double>();
    out << ',' << row["edge_acc"].get<double>() << ',' << row["node_acc"].get<double>() << ','
        << row["node_f1"].get<double>() << '\n';
  };
  if (gc.kind == "n" || gc.kind == "both") {
    std::ofstream csv = open_csv(dir / "grid_n.csv", header);
    report["n_grid"] = json::array();
    std::optional<double> f1_0, f1_1;
    for (int n : gc.n_values) {
      TrainConfig tc = ctx.config.train;
      tc.n = n;
      const json row = grid_point(ctx.config.model, tc, data, dir / ("n_" + std::to_string(n)));
      csv_row(csv, row);
      report["n_grid"].push_back(row);
      if (n == 0) f1_0 = row["node_f1"].get<double>();
      if (n == 1) f1_1 = row["node_f1"].get<double>();
    }
    report["node_f1_n1_at_least_n0"] = f1_0 && f1_1 ? json(*f1_1 >= *f1_0) : json(nullptr);
  }
  if (gc.kind == "latent" || gc.kind == "both") {
    std::ofstream csv = open_csv(dir / "grid_latent.csv", header);
    report["latent_grid"] = json::array();
    for (int d : gc.latent_dims) {
      ModelConfig mc = ctx.config.model;
      mc.latent_dim = d;
      const json row = grid_point(mc, ctx.config.train, data, dir / ("d_" + std::to_string(d)));
      csv_row(csv, row);
      report["latent_grid"].push_back(row);
    }
  }
  return finish(ctx, "grid", report);
}

}  // namespace ccodec
