#include "ccodec/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "ccodec/errors.hpp"
#include "ccodec/metrics.hpp"
#include "ccodec/random.hpp"

namespace ccodec {

double kl_divergence(const LatentDistribution& dist) {
  double kl = 0.0;
  for (Eigen::Index j = 0; j < dist.mu.size(); ++j) {
    const double s2 = dist.sigma(j) * dist.sigma(j);
    kl += 0.5 * (dist.mu(j) * dist.mu(j) + s2 - 1.0 - std::log(s2));
  }
  return kl;
}

double loss_edge(const Matrix& a, const Matrix& a_prime) {
  if (a.rows() != a_prime.rows() || a.cols() != a_prime.cols()) throw ShapeMismatch("loss_edge: shape mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double p = a_prime.data()[i];
    const double t = a.data()[i];
    total -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
  }
  return total / static_cast<double>(a.size());
}

CdLoss loss_cd(const Matrix& x_onehot, const Matrix& x_prime, const LatentDistribution& dist) {
  if (x_onehot.rows() != x_prime.rows() || x_onehot.cols() != x_prime.cols())
    throw ShapeMismatch("loss_cd: shape mismatch");
  return {(x_prime - x_onehot).squaredNorm() / static_cast<double>(x_onehot.size()), kl_divergence(dist)};
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"edge", w.edge}, {"node", w.node}, {"kl", w.kl}};
}
void from_json(const nlohmann::json& j, LossWeights& w) {
  w.edge = j.value("edge", 1.0);
  w.node = j.value("node", 1.0);
  w.kl = j.value("kl", 1.0);
}

double loss_full(const Matrix& a, const Matrix& a_prime, const Matrix& x_onehot, const Matrix& x_prime,
                 const LatentDistribution& dist, const LossWeights& weights) {
  if (x_onehot.rows() != x_prime.rows() || x_onehot.cols() != x_prime.cols())
    throw ShapeMismatch("loss_full: node shape mismatch");
  double ce = 0.0;
  for (Eigen::Index i = 0; i < x_prime.rows(); ++i) {
    Eigen::Index label = 0;
    x_onehot.row(i).maxCoeff(&label);
    const double m = x_prime.row(i).maxCoeff();
    const double lse = m + std::log((x_prime.row(i).array() - m).exp().sum());
    ce += lse - x_prime(i, label);
  }
  ce /= static_cast<double>(x_prime.rows());
  return weights.edge * loss_edge(a, a_prime) + weights.node * ce + weights.kl * kl_divergence(dist);
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kPretrainEdge:
      return "pretrain_edge";
    case Phase::kTrainCd:
      return "train_cd";
    case Phase::kFinetuneFull:
      return "finetune_full";
  }
  return "?";
}

std::vector<Phase> schedule(int n) {
  std::vector<Phase> s{Phase::kPretrainEdge};
  for (int i = 0; i < n; ++i) {
    s.push_back(Phase::kTrainCd);
    s.push_back(Phase::kFinetuneFull);
  }
  return s;
}

void TrainConfig::validate() const {
  if (n < 0) throw ConfigError("train config: n must be >= 0");
  if (epochs_pretrain < 1 || epochs_cd < 1 || epochs_full < 1)
    throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(lr_pretrain > 0 && lr_cd > 0 && lr_full > 0)) throw ConfigError("train config: learning rates must be positive");
  if (kl_warmup_fraction < 0.0 || kl_warmup_fraction > 1.0)
    throw ConfigError("train config: kl_warmup_fraction must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"n", c.n},
       {"epochs_pretrain", c.epochs_pretrain},
       {"epochs_cd", c.epochs_cd},
       {"epochs_full", c.epochs_full},
       {"lr_pretrain", c.lr_pretrain},
       {"lr_cd", c.lr_cd},
       {"lr_full", c.lr_full},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"weights", c.weights},
       {"kl_warmup_fraction", c.kl_warmup_fraction},
       {"full_node_cross_entropy", c.full_node_cross_entropy},
       {"calibrate_kappa", c.calibrate_kappa}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.n = j.value("n", d.n);
  c.epochs_pretrain = j.value("epochs_pretrain", d.epochs_pretrain);
  c.epochs_cd = j.value("epochs_cd", d.epochs_cd);
  c.epochs_full = j.value("epochs_full", d.epochs_full);
  c.lr_pretrain = j.value("lr_pretrain", d.lr_pretrain);
  c.lr_cd = j.value("lr_cd", d.lr_cd);
  c.lr_full = j.value("lr_full", d.lr_full);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.weights = j.value("weights", d.weights);
  c.kl_warmup_fraction = j.value("kl_warmup_fraction", d.kl_warmup_fraction);
  c.full_node_cross_entropy = j.value("full_node_cross_entropy", d.full_node_cross_entropy);
  c.calibrate_kappa = j.value("calibrate_kappa", d.calibrate_kappa);
}

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "phase,epoch,loss_total,loss_edge,loss_node,loss_kl,val_edge_auc,val_node_acc\n";
  out << std::setprecision(10);
  for (const auto& r : history) {
    out << r.phase << ',' << r.epoch << ',' << r.loss_total << ',' << r.loss_edge << ',' << r.loss_node
        << ',' << r.loss_kl << ',';
    if (r.val_edge_auc) {
      out << *r.val_edge_auc;
    } else {
      out << "nan";
    }
    out << ',' << r.val_node_acc << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

Matrix draw_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix eps(rows, cols);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n01(rng);
  return eps;
}

void dump_nonfinite(const TrainOptions& options, Phase phase, int epoch, const std::vector<std::size_t>& idx,
                    const PhaseLoss& loss) {
  std::ostringstream msg;
  msg << "non-finite loss in " << phase_name(phase) << " epoch " << epoch << " (edge " << loss.edge
      << ", node " << loss.node << ", kl " << loss.kl << "); batch sample indices:";
  for (auto i : idx) msg << ' ' << i;
  if (options.checkpoint_dir) {
    std::filesystem::create_directories(*options.checkpoint_dir);
    const auto path = *options.checkpoint_dir / "nonfinite_batch.json";
    std::ofstream(path) << nlohmann::json{{"phase", phase_name(phase)},
                                          {"epoch", epoch},
                                          {"batch_indices", idx},
                                          {"loss_edge", loss.edge},
                                          {"loss_node", loss.node},
                                          {"loss_kl", loss.kl}}
                               .dump(2);
    msg << " (written to " << path.string() << ")";
  }
  throw NonFiniteLoss(msg.str());
}

}  // namespace

PhaseLoss phase_loss(VaeModel& model, Tape& tape, const GraphBatch& batch, Phase phase, const TrainConfig& cfg,
                     double kl_scale, const Matrix& eps) {
  const LossWeights& w = cfg.weights;
  PhaseLoss out;
  if (phase == Phase::kPretrainEdge) {
    Var logits = model.edge_logits(tape, model.edge_embedding(tape, batch));
    Var edge = nn::bce_with_logits(logits, batch.adjacency);
    out.edge = edge.scalar();
    out.total = nn::scale(edge, w.edge);
    return out;
  }
  const EncoderPass enc = model.encode(tape, batch);
  if (eps.rows() != enc.mu.rows() || eps.cols() != enc.mu.cols()) throw ShapeMismatch("noise shape != latent shape");
  Var sigma = nn::exp(nn::scale(enc.logvar, 0.5));
  const Var z = nn::add(enc.mu, nn::mul(tape.constant(eps), sigma));
  const DecoderPass dec = model.decode(tape, z);
  Var kl = nn::kl_standard_normal(enc.mu, enc.logvar);
  out.kl = kl.scalar();
  if (phase == Phase::kTrainCd) {
    Var node = nn::mse(dec.node_scores, batch.onehot);
    out.node = node.scalar();
    out.total = nn::add(nn::scale(node, w.node), nn::scale(kl, w.kl * kl_scale));
    return out;
  }
  Var edge = nn::bce_with_logits(model.edge_logits(tape, dec.edge_embedding), batch.adjacency);
  Var node = cfg.full_node_cross_entropy ? nn::softmax_cross_entropy(dec.node_scores, batch.labels)
                                         : nn::mse(dec.node_scores, batch.onehot);
  out.edge = edge.scalar();
  out.node = node.scalar();
  out.total = nn::add(nn::add(nn::scale(edge, w.edge), nn::scale(node, w.node)),
                      nn::scale(kl, w.kl * kl_scale));
  return out;
}

TrainResult train_1_2n(const std::vector<SubgraphSample>& train,
                       const std::vector<SubgraphSample>& validation, VaeModel& model,
                       const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (train.empty()) throw InsufficientSamples("training set is empty");
  TrainResult result;
  result.history = options.prior_history;
  if (options.completed_phases > 0) {
    HistoryRow marker;
    marker.phase = "resume";
    marker.epoch = options.completed_phases;
    result.history.push_back(marker);
  }

  const auto phases = schedule(cfg.n);
  auto edge_params = model.edge_parameters();
  auto cd_params = model.cd_parameters();
  auto all_params = model.parameters();

  for (int k = 0; k < static_cast<int>(phases.size()); ++k) {
    if (k < options.completed_phases) continue;
    const Phase phase = phases[k];
    int epochs = cfg.epochs_full;
    double lr = cfg.lr_full;
    nn::set_frozen(all_params, false);
    std::vector<nn::Parameter*> trainable = all_params;
    if (phase == Phase::kPretrainEdge) {
      epochs = cfg.epochs_pretrain;
      lr = cfg.lr_pretrain;
      nn::set_frozen(cd_params, true);
      trainable = edge_params;
    } else if (phase == Phase::kTrainCd) {
      epochs = cfg.epochs_cd;
      lr = cfg.lr_cd;
      nn::set_frozen(edge_params, true);
      trainable = cd_params;
    }
    nn::Adam optimizer(lr);
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const double warmup_epochs = cfg.kl_warmup_fraction * epochs;

    for (int epoch = 0; epoch < epochs; ++epoch) {
      const double kl_scale =
          (phase == Phase::kPretrainEdge || warmup_epochs <= 0.0) ? 1.0 : std::min(1.0, epoch / warmup_epochs);
      std::shuffle(order.begin(), order.end(), rng);
      HistoryRow row;
      row.phase = phase_name(phase);
      row.epoch = epoch;
      double weight_sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(start + count));
        const GraphBatch batch = make_batch(train, idx, model.config().n_classes);
        nn::zero_grads(trainable);
        Tape tape;
        const Matrix eps = phase == Phase::kPretrainEdge
                               ? Matrix()
                               : draw_noise(static_cast<Eigen::Index>(count), model.config().latent_dim, rng);
        const PhaseLoss loss = phase_loss(model, tape, batch, phase, cfg, kl_scale, eps);
        if (!std::isfinite(loss.total.scalar())) dump_nonfinite(options, phase, epoch, idx, loss);
        tape.backward(loss.total);
        optimizer.step(trainable);
        const double wgt = static_cast<double>(count);
        row.loss_total += wgt * loss.total.scalar();
        row.loss_edge += wgt * loss.edge;
        row.loss_node += wgt * loss.node;
        row.loss_kl += wgt * loss.kl;
        weight_sum += wgt;
      }
      row.loss_total /= weight_sum;
      row.loss_edge /= weight_sum;
      row.loss_node /= weight_sum;
      row.loss_kl /= weight_sum;
      if (!validation.empty()) {
        const auto m = evaluate_reconstruction(model, validation, phase == Phase::kPretrainEdge);
        row.val_edge_auc = m.edge_auc;
        row.val_node_acc = m.node_acc;
      }
      if (options.verbose) {
        std::cerr << row.phase << " epoch " << epoch << " loss " << row.loss_total << " (edge "
                  << row.loss_edge << " node " << row.loss_node << " kl " << row.loss_kl << ") val auc "
                  << row.val_edge_auc.value_or(std::nan("")) << " node acc " << row.val_node_acc << '\n';
      }
      result.history.push_back(row);
    }
    nn::set_frozen(all_params, false);
    ++result.phases_run;
    if (options.checkpoint_dir) {
      model.save(*options.checkpoint_dir / ("phase_" + std::to_string(k + 1) + ".ckpt"),
                 {{"completed_phases", k + 1}, {"train_config", cfg}, {"phase", phase_name(phase)}});
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

DecodedGraph reconstruct(const VaeModel& model, const SubgraphSample& sample, bool edge_bypass) {
  const LatentDistribution dist = model.encode(sample);
  DecodedGraph dg = model.decode(dist.mu);
  if (edge_bypass) {
    const std::vector<SubgraphSample> one{sample};
    const std::array<std::size_t, 1> idx{0};
    Tape tape;
    const GraphBatch batch = make_batch(one, idx, model.config().n_classes);
    dg.edge_probs = nn::sigmoid(model.edge_logits(tape, model.edge_embedding(tape, batch)).value());
  }
  return dg;
}

EdgeScores edge_scores(const std::vector<const Matrix*>& a_prime, const std::vector<const Adjacency*>& a,
                       double kappa) {
  if (a_prime.size() != a.size()) throw ShapeMismatch("edge_scores: list lengths differ");
  std::vector<double> scores;
  std::vector<int> truth;
  std::size_t correct = 0, zeros = 0;
  for (std::size_t g = 0; g < a.size(); ++g) {
    const int n = a[g]->size();
    if (a_prime[g]->rows() != n || a_prime[g]->cols() != n) throw ShapeMismatch("edge_scores: shape mismatch");
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double p = (*a_prime[g])(i, j);
        const int t = (*a[g])(i, j) ? 1 : 0;
        scores.push_back(p);
        truth.push_back(t);
        correct += ((p >= kappa ? 1 : 0) == t) ? 1 : 0;
        zeros += t == 0 ? 1 : 0;
      }
    }
  }
  EdgeScores s;
  s.auc = roc_auc(scores, truth);
  const double total = static_cast<double>(truth.size());
  s.accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
  s.zero_baseline_accuracy = total > 0 ? static_cast<double>(zeros) / total : 0.0;
  return s;
}

double calibrate_kappa(const VaeModel& model, const std::vector<SubgraphSample>& samples) {
  std::vector<double> probs;
  std::size_t edges = 0;
  for (const SubgraphSample& s : samples) {
    const DecodedGraph dg = reconstruct(model, s);
    const int n = s.adjacency.size();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        probs.push_back(dg.edge_probs(i, j));
        edges += s.adjacency(i, j) ? 1 : 0;
      }
    }
  }
  if (probs.empty()) throw InsufficientSamples("kappa calibration needs at least one sample");
  double kappa = 1.0;
  if (edges > 0) {
    std::nth_element(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(edges - 1), probs.end(),
                     std::greater<>());
    kappa = probs[edges - 1];
  }
  return std::clamp(kappa, 1e-6, 1.0 - 1e-6);
}

ReconstructionMetrics evaluate_reconstruction(const VaeModel& model,
                                              const std::vector<SubgraphSample>& samples,
                                              bool edge_bypass) {
  ReconstructionMetrics m;
  m.n_samples = samples.size();
  if (samples.empty()) return m;
  const ModelConfig& c = model.config();
  std::vector<Matrix> probs;
  std::vector<int> predicted, truth;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, samples.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const GraphBatch batch = make_batch(samples, idx, c.n_classes);
    Tape tape;
    const EncoderPass enc = model.encode(tape, batch);
    const DecoderPass dec = model.decode(tape, enc.mu);
    const Var edge_in = edge_bypass ? enc.edge_embedding : dec.edge_embedding;
    const Matrix p = nn::sigmoid(model.edge_logits(tape, edge_in).value());
    const Matrix& scores = dec.node_scores.value();
    for (std::size_t g = 0; g < count; ++g) {
      const auto n = static_cast<Eigen::Index>(c.n_nodes);
      probs.push_back(p.middleRows(static_cast<Eigen::Index>(g) * n, n));
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < scores.cols(); ++k)
          if (scores(static_cast<Eigen::Index>(g) * n + i, k) > scores(static_cast<Eigen::Index>(g) * n + i, best)) best = k;
        predicted.push_back(static_cast<int>(best));
      }
      const auto& labels = samples[start + g].labels;
      truth.insert(truth.end(), labels.begin(), labels.end());
    }
  }
  std::vector<const Matrix*> pp;
  std::vector<const Adjacency*> aa;
  for (std::size_t g = 0; g < samples.size(); ++g) {
    pp.push_back(&probs[g]);
    aa.push_back(&samples[g].adjacency);
  }
  const EdgeScores e = edge_scores(pp, aa, c.kappa);
  m.edge_auc = e.auc;
  m.edge_acc = e.accuracy;
  m.zero_baseline_acc = e.zero_baseline_accuracy;
  m.node_acc = accuracy(predicted, truth);
  m.node_f1 = macro_f1(predicted, truth, c.n_classes);
  return m;
}

}  // namespace ccodec
