#include "ccodec/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccodec/errors.hpp"
#include "ccodec/metrics.hpp"
#include "ccodec/nn/archive.hpp"
#include "ccodec/random.hpp"

namespace ccodec {

const char* feature_name(Feature f) {
  switch (f) {
    case Feature::kEdgeCount:
      return "edge_count";
    case Feature::kReciprocity:
      return "reciprocity";
    case Feature::kBetweenness:
      return "betweenness";
    case Feature::kNonNeuronal:
      return "non_neuronal";
  }
  return "?";
}

std::optional<double> feature_value(const FeatureVector& v, Feature f) {
  switch (f) {
    case Feature::kEdgeCount:
      return v.edge_count;
    case Feature::kReciprocity:
      return v.reciprocity_scaled;
    case Feature::kBetweenness:
      return v.betweenness_scaled;
    case Feature::kNonNeuronal:
      return v.non_neuronal_scaled;
  }
  return std::nullopt;
}

void to_json(nlohmann::json& j, const SurrogateConfig& c) {
  j = {{"n_nodes", c.n_nodes},     {"n_classes", c.n_classes},     {"row_width", c.row_width},
       {"hidden", c.hidden},       {"ratio_guard", c.ratio_guard}, {"init_seed", c.init_seed},
       {"reciprocity_threshold", c.reciprocity_threshold}};
}

void from_json(const nlohmann::json& j, SurrogateConfig& c) {
  SurrogateConfig d;
  c.n_nodes = j.value("n_nodes", d.n_nodes);
  c.n_classes = j.value("n_classes", d.n_classes);
  c.row_width = j.value("row_width", d.row_width);
  c.hidden = j.value("hidden", d.hidden);
  c.ratio_guard = j.value("ratio_guard", d.ratio_guard);
  c.init_seed = j.value("init_seed", d.init_seed);
  c.reciprocity_threshold = j.value("reciprocity_threshold", d.reciprocity_threshold);
  if (!(c.reciprocity_threshold > 0.0 && c.reciprocity_threshold < 1.0))
    throw ConfigError("surrogate.reciprocity_threshold must lie in (0, 1)");
}

Matrix reciprocity_numerator_input(const Matrix& a, double t) { return (a.array() - t).max(0.0).matrix(); }

Matrix reciprocity_denominator_input(const Matrix& a, double t) {
  const Eigen::Index n = a.cols();
  Matrix out(a.rows(), n);
  for (Eigen::Index b = 0; b < a.rows() / n; ++b) {
    const auto blk = a.middleRows(b * n, n);
    out.middleRows(b * n, n) = ((blk + blk.transpose()).array() * 0.5 - t).max(0.0).matrix();
  }
  return out;
}

Matrix non_neuronal_margins(const Matrix& node_scores) {
  Matrix out = Matrix::Zero(node_scores.rows(), 1);
  for (Eigen::Index i = 0; i < node_scores.rows(); ++i)
    for (int t = 0; t < kNonNeuronal; ++t) out(i, 0) += std::max(node_scores(i, kNonNeuronal) - node_scores(i, t), 0.0);
  return out;
}

// ---------------------------------------------------------------------------

CountCore::CountCore(const std::string& name, int n_nodes, int row_width, int hidden, std::mt19937_64& rng)
    : rows(name + ".rows", n_nodes, row_width, rng),
      fc1(name + ".fc1", static_cast<Eigen::Index>(n_nodes) * row_width, hidden, rng),
      fc2(name + ".fc2", hidden, 1, rng) {}

namespace {

template <typename Core>
Var count_core_forward(Core& core, Tape& tape, Var a, double slope) {
  const Eigen::Index n = core.rows.in_features();
  if (a.cols() != n || a.rows() % n != 0) throw ShapeMismatch("surrogate input must be (B*N) x N");
  Var r = nn::leaky_relu(core.rows.forward(tape, a), slope);
  Var flat = nn::reshape(r, a.rows() / n, n * core.rows.out_features());
  return core.fc2.forward(tape, nn::leaky_relu(core.fc1.forward(tape, flat), slope));
}

// num / (den + copysign(eps, den)), elementwise over B x 1 columns.
Var guarded_ratio(Var num, Var den, double eps) {
  const Matrix& n = num.value();
  const Matrix& d = den.value();
  Matrix g = d.unaryExpr([eps](double v) { return v + std::copysign(eps, v); });
  Matrix out = n.cwiseQuotient(g);
  return num.tape()->record(std::move(out), {num, den},
                            [num, den, g](Tape& t, const Matrix& grad, const Matrix& value) {
                              if (t.needs_grad(num)) t.grad_ref(num) += grad.cwiseQuotient(g);
                              if (t.needs_grad(den))
                                t.grad_ref(den) -= grad.cwiseProduct(value).cwiseQuotient(g);
                            });
}

constexpr double kSlope = 0.2;

}  // namespace

Var CountCore::forward(Tape& tape, Var a, double slope) { return count_core_forward(*this, tape, a, slope); }
Var CountCore::forward(Tape& tape, Var a, double slope) const {
  return count_core_forward(*this, tape, a, slope);
}

void CountCore::collect(std::vector<nn::Parameter*>& out) {
  rows.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

SurrogateSet::SurrogateSet(const SurrogateConfig& config) : config_(config) {
  std::mt19937_64 rng(config_.init_seed);
  edge_count_ = CountCore("surrogate.edge_count", config_.n_nodes, config_.row_width, config_.hidden, rng);
  betweenness_ = CountCore("surrogate.betweenness", config_.n_nodes, config_.row_width, config_.hidden, rng);
  reciprocity_ = CountCore("surrogate.reciprocity", config_.n_nodes, config_.row_width, config_.hidden, rng);
  nn_fc1_ = nn::Linear("surrogate.non_neuronal.fc1", config_.n_nodes, config_.hidden, rng);
  nn_fc2_ = nn::Linear("surrogate.non_neuronal.fc2", config_.hidden, 1, rng);
  for (Feature f : kFeatures) {
    nn::Parameter& p = scaling_[static_cast<int>(f)];
    p.name = std::string("surrogate.") + feature_name(f) + ".output_scaling";
    p.value.resize(1, 2);
    p.value << 0.0, 1.0;
    p.frozen = true;
  }
}

template <typename Self>
Var SurrogateSet::predict_impl(Self& self, Tape& tape, Feature f, Var edge_probs, Var node_scores) {
  const Matrix& sc = self.scaling_[static_cast<int>(f)].value;
  const double offset = sc(0, 0);
  const double scale = sc(0, 1);
  switch (f) {
    case Feature::kEdgeCount:
      return nn::add_scalar(nn::scale(self.edge_count_.forward(tape, edge_probs, kSlope), scale), offset);
    case Feature::kBetweenness:
      return nn::add_scalar(nn::scale(self.betweenness_.forward(tape, edge_probs, kSlope), scale), offset);
    case Feature::kReciprocity: {
      const double t = self.config_.reciprocity_threshold;
      Var a_two = nn::relu(nn::add_scalar(edge_probs, -t));
      Var a_one = nn::relu(nn::add_scalar(nn::scale(nn::add(edge_probs, nn::transpose_blocks(edge_probs)), 0.5), -t));
      Var c_two = self.reciprocity_.forward(tape, a_two, kSlope);
      Var c_one = self.reciprocity_.forward(tape, a_one, kSlope);
      return nn::scale(guarded_ratio(c_two, c_one, self.config_.ratio_guard), scale);
    }
    case Feature::kNonNeuronal: {
      const Eigen::Index n = self.config_.n_nodes;
      Var target = nn::slice_cols(node_scores, kNonNeuronal, 1);
      Var margins;
      for (int t = 0; t < kNonNeuronal; ++t) {
        Var m = nn::relu(nn::sub(target, nn::slice_cols(node_scores, t, 1)));
        margins = t == 0 ? m : nn::add(margins, m);
      }
      Var per_graph = nn::reshape(margins, node_scores.rows() / n, n);
      Var out = self.nn_fc2_.forward(tape, nn::leaky_relu(self.nn_fc1_.forward(tape, per_graph), kSlope));
      return nn::add_scalar(nn::scale(out, scale), offset);
    }
  }
  throw ShapeMismatch("unknown feature");
}

Var SurrogateSet::predict(Tape& tape, Feature f, Var edge_probs, Var node_scores) {
  return predict_impl(*this, tape, f, edge_probs, node_scores);
}
Var SurrogateSet::predict(Tape& tape, Feature f, Var edge_probs, Var node_scores) const {
  return predict_impl(*this, tape, f, edge_probs, node_scores);
}

double SurrogateSet::predict(Feature f, const DecodedGraph& dg) const {
  Tape tape;
  return predict(tape, f, tape.constant(dg.edge_probs), tape.constant(dg.node_scores)).scalar();
}

std::array<double, 4> SurrogateSet::predict_all(const DecodedGraph& dg) const {
  std::array<double, 4> out{};
  for (Feature f : kFeatures) out[static_cast<int>(f)] = predict(f, dg);
  return out;
}

bool SurrogateSet::reciprocity_degenerate(const DecodedGraph& dg) const {
  Tape tape;
  Var c_one = reciprocity_.forward(tape, tape.constant(reciprocity_denominator_input(dg.edge_probs, config_.reciprocity_threshold)), kSlope);
  return std::abs(c_one.scalar()) < config_.ratio_guard;
}

std::vector<nn::Parameter*> SurrogateSet::parameters(Feature f) {
  std::vector<nn::Parameter*> out;
  switch (f) {
    case Feature::kEdgeCount:
      edge_count_.collect(out);
      break;
    case Feature::kBetweenness:
      betweenness_.collect(out);
      break;
    case Feature::kReciprocity:
      reciprocity_.collect(out);
      break;
    case Feature::kNonNeuronal:
      nn_fc1_.collect(out);
      nn_fc2_.collect(out);
      break;
  }
  return out;
}

std::vector<nn::Parameter*> SurrogateSet::parameters() {
  std::vector<nn::Parameter*> out;
  for (Feature f : kFeatures) {
    auto p = parameters(f);
    out.insert(out.end(), p.begin(), p.end());
    out.push_back(&scaling_[static_cast<int>(f)]);
  }
  return out;
}

std::vector<const nn::Parameter*> SurrogateSet::parameters() const {
  auto p = const_cast<SurrogateSet*>(this)->parameters();
  return {p.begin(), p.end()};
}

void SurrogateSet::set_output_scaling(Feature f, double offset, double scale) {
  scaling_[static_cast<int>(f)].value << offset, scale;
}

void SurrogateSet::save(const std::filesystem::path& path, const nlohmann::json& metadata) const {
  nlohmann::json header;
  header["kind"] = "surrogate_set";
  header["config"] = config_;
  header["metadata"] = metadata;
  nn::save_archive(path, std::move(header), parameters());
}

SurrogateSet SurrogateSet::load(const std::filesystem::path& path, nlohmann::json* metadata) {
  const nn::Archive archive = nn::load_archive(path);
  if (archive.header.value("kind", "") != "surrogate_set") {
    throw CheckpointError(path.string() + " does not hold surrogate predictors");
  }
  SurrogateSet set(archive.header.at("config").get<SurrogateConfig>());
  nn::restore_parameters(archive, set.parameters());
  for (auto& p : set.scaling_) p.frozen = true;
  if (metadata) *metadata = archive.header.value("metadata", nlohmann::json::object());
  return set;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const SurrogateTrainConfig& c) {
  j = {{"n_latent", c.n_latent},     {"holdout_fraction", c.holdout_fraction},
       {"epochs", c.epochs},         {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate}, {"seed", c.seed},
       {"kappa", c.kappa},           {"min_reciprocity_pairs", c.min_reciprocity_pairs}};
}

void from_json(const nlohmann::json& j, SurrogateTrainConfig& c) {
  SurrogateTrainConfig d;
  c.n_latent = j.value("n_latent", d.n_latent);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.seed = j.value("seed", d.seed);
  c.kappa = j.value("kappa", d.kappa);
  c.min_reciprocity_pairs = j.value("min_reciprocity_pairs", d.min_reciprocity_pairs);
}

std::optional<double> PearsonReport::r(Feature f) const {
  switch (f) {
    case Feature::kEdgeCount:
      return edge_count_r;
    case Feature::kReciprocity:
      return reciprocity_r;
    case Feature::kBetweenness:
      return betweenness_r;
    case Feature::kNonNeuronal:
      return non_neuronal_r;
  }
  return std::nullopt;
}

nlohmann::json PearsonReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"edge_count_r", opt(edge_count_r)},
          {"reciprocity_r", opt(reciprocity_r)},
          {"betweenness_r", opt(betweenness_r)},
          {"non_neuronal_r", opt(non_neuronal_r)},
          {"n_pairs", n_pairs},
          {"n_excluded_reciprocity", n_excluded_reciprocity},
          {"n_degenerate_denominator", n_degenerate_denominator}};
}

DecodedDraws draw_decodes(const VaeModel& model, int count, std::uint64_t seed, double kappa) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  DecodedDraws d;
  d.z.resize(count, model.config().latent_dim);
  for (Eigen::Index i = 0; i < d.z.size(); ++i) d.z.data()[i] = n01(rng);
  d.decodes = model.decode_batch(d.z);
  d.truth.reserve(d.decodes.size());
  for (const auto& dg : d.decodes) d.truth.push_back(feature_vector(discretize(dg, kappa)));
  return d;
}

namespace {

struct Stacked {
  Matrix edges;
  Matrix nodes;
};

Stacked stack(const std::vector<DecodedGraph>& decodes, const std::vector<std::size_t>& idx) {
  const Eigen::Index n = decodes[idx[0]].edge_probs.rows();
  const Eigen::Index f = decodes[idx[0]].node_scores.cols();
  Stacked s{Matrix(idx.size() * n, n), Matrix(idx.size() * n, f)};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    s.edges.middleRows(static_cast<Eigen::Index>(k) * n, n) = decodes[idx[k]].edge_probs;
    s.nodes.middleRows(static_cast<Eigen::Index>(k) * n, n) = decodes[idx[k]].node_scores;
  }
  return s;
}

std::vector<double> predict_many(const SurrogateSet& set, Feature f, const std::vector<DecodedGraph>& decodes,
                                 const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += 64) {
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + 64)));
    const Stacked s = stack(decodes, chunk);
    Tape tape;
    const Matrix v = set.predict(tape, f, tape.constant(s.edges), tape.constant(s.nodes)).value();
    for (Eigen::Index i = 0; i < v.rows(); ++i) out.push_back(v(i, 0));
  }
  return out;
}

}  // namespace

PearsonReport train_surrogates(const VaeModel& model, SurrogateSet& set, const SurrogateTrainConfig& cfg) {
  return train_surrogates(draw_decodes(model, cfg.n_latent, cfg.seed, cfg.kappa), set, cfg);
}

PearsonReport train_surrogates(const DecodedDraws& draws, SurrogateSet& set, const SurrogateTrainConfig& cfg) {
  const std::size_t total = draws.decodes.size();
  const auto n_hold = static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(total)));
  const std::size_t n_train = total - n_hold;
  if (n_train == 0 || n_hold < 2) throw InsufficientSamples("surrogate training needs train and held-out draws");

  PearsonReport report;
  report.n_pairs = n_hold;
  for (const auto& t : draws.truth) report.n_excluded_reciprocity += t.reciprocity_scaled ? 0 : 1;

  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5u));
  for (Feature f : kFeatures) {
    std::vector<std::size_t> train_idx, hold_idx;
    for (std::size_t i = 0; i < total; ++i) {
      if (!feature_value(draws.truth[i], f)) continue;
      (i < n_train ? train_idx : hold_idx).push_back(i);
    }
    if (f == Feature::kReciprocity &&
        static_cast<int>(train_idx.size()) < cfg.min_reciprocity_pairs) {
      throw InsufficientValidPairs("only " + std::to_string(train_idx.size()) +
                                   " training draws have defined reciprocity (need " +
                                   std::to_string(cfg.min_reciprocity_pairs) + ")");
    }
    if (train_idx.empty()) continue;

    std::vector<double> y(total, 0.0);
    double mean = 0.0, sq = 0.0;
    for (auto i : train_idx) {
      y[i] = *feature_value(draws.truth[i], f);
      mean += y[i];
    }
    for (auto i : hold_idx) y[i] = *feature_value(draws.truth[i], f);
    mean /= static_cast<double>(train_idx.size());
    for (auto i : train_idx) sq += (y[i] - mean) * (y[i] - mean);
    double sd = std::sqrt(sq / static_cast<double>(train_idx.size()));
    if (!(sd > 0.0)) sd = 1.0;
    if (f == Feature::kReciprocity) {
      set.set_output_scaling(f, 0.0, mean > 0.0 ? mean : 1.0);
    } else {
      set.set_output_scaling(f, mean, sd);
    }

    auto params = set.parameters(f);
    nn::Adam opt(cfg.learning_rate);
    std::vector<std::size_t> order = train_idx;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::vector<std::size_t> idx(
            order.begin() + static_cast<std::ptrdiff_t>(start),
            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
        const Stacked s = stack(draws.decodes, idx);
        Matrix target(static_cast<Eigen::Index>(idx.size()), 1);
        for (std::size_t k = 0; k < idx.size(); ++k) target(static_cast<Eigen::Index>(k), 0) = y[idx[k]];
        nn::zero_grads(params);
        Tape tape;
        Var pred = set.predict(tape, f, tape.constant(s.edges), tape.constant(s.nodes));
        Var loss = nn::scale(nn::mse(pred, target), 1.0 / (sd * sd));
        if (!std::isfinite(loss.scalar())) {
          throw NonFiniteLoss(std::string("surrogate ") + feature_name(f) + " loss became non-finite");
        }
        tape.backward(loss);
        opt.step(params);
      }
    }

    if (hold_idx.size() >= 2) {
      const auto pred = predict_many(set, f, draws.decodes, hold_idx);
      std::vector<double> truth;
      for (auto i : hold_idx) truth.push_back(y[i]);
      const auto r = pearson(pred, truth);
      switch (f) {
        case Feature::kEdgeCount:
          report.edge_count_r = r;
          break;
        case Feature::kReciprocity:
          report.reciprocity_r = r;
          break;
        case Feature::kBetweenness:
          report.betweenness_r = r;
          break;
        case Feature::kNonNeuronal:
          report.non_neuronal_r = r;
          break;
      }
    }
  }
  for (std::size_t i = n_train; i < total; ++i) {
    report.n_degenerate_denominator += set.reciprocity_degenerate(draws.decodes[i]) ? 1 : 0;
  }
  return report;
}

}  // namespace ccodec
