#include "ccodec/latent_control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "ccodec/errors.hpp"
#include "ccodec/random.hpp"
#include "ccodec/training.hpp"

namespace ccodec {

bool DpTable::reachable(int layer, long j) const {
  if (layer < 0 || layer > dims || j < lo || j > hi) return false;
  return cell(layer, j).bin >= 0;
}

std::vector<int> DpTable::backtrack(long j) const {
  if (!reachable(dims, j)) throw NoReachableCell("cell " + std::to_string(j) + " is not reachable");
  std::vector<int> bins(static_cast<std::size_t>(dims));
  for (int i = dims; i >= 1; --i) {
    const DpCell& c = cell(i, j);
    bins[i - 1] = c.bin;
    j = c.prev;
  }
  return bins;
}

namespace {

// Bin visiting order 0, -1, +1, -2, +2, ... around the centre bin, so the
// first writer of a cell prefers latent values near zero.
std::vector<int> center_out(int bins) {
  std::vector<int> order;
  const int c = bins / 2;
  order.push_back(c);
  for (int off = 1; static_cast<int>(order.size()) < bins; ++off) {
    if (c - off >= 0) order.push_back(c - off);
    if (c + off < bins) order.push_back(c + off);
  }
  return order;
}

struct GridOverflowSignal {};

DpTable run_dp(const ShapTable& t, double resolution, long lo, long hi) {
  DpTable dp;
  dp.dims = t.dims();
  dp.resolution = resolution;
  dp.lo = lo;
  dp.hi = hi;
  dp.table = t;
  const auto width = static_cast<std::size_t>(hi - lo + 1);
  dp.layers.assign(static_cast<std::size_t>(dp.dims) + 1, std::vector<DpCell>(width));
  if (lo > 0 || hi < 0) throw GridOverflowSignal{};
  dp.layers[0][static_cast<std::size_t>(-lo)] = {0, 0, 0.0};
  const auto order = center_out(t.bins);
  for (int i = 1; i <= dp.dims; ++i) {
    const auto& prev = dp.layers[i - 1];
    auto& cur = dp.layers[i];
    for (int k : order) {
      if (!t.populated(i - 1, k)) continue;
      const double c = t.value(i - 1, k);
      for (long j = lo; j <= hi; ++j) {
        const DpCell& p = prev[static_cast<std::size_t>(j - lo)];
        if (p.bin < 0) continue;
        const double s = p.sum + c;
        const long nj = j + std::lround(c / resolution);
        if (nj < lo || nj > hi) throw GridOverflowSignal{};
        DpCell& dst = cur[static_cast<std::size_t>(nj - lo)];
        if (dst.bin >= 0) continue;
        dst = {k, static_cast<int>(j), s};
      }
    }
  }
  return dp;
}

}  // namespace

DpTable dp_build(const ShapTable& table, const DpOptions& options) {
  // l, r bound the full sums; prefix_lo, prefix_hi bound every partial sum.
  double l = 0.0, r = 0.0, prefix_lo = 0.0, prefix_hi = 0.0;
  for (int i = 0; i < table.dims(); ++i) {
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (int k = 0; k < table.bins; ++k) {
      if (!table.populated(i, k)) continue;
      mn = std::min(mn, table.value(i, k));
      mx = std::max(mx, table.value(i, k));
    }
    if (!std::isfinite(mn)) throw EmptyTable("dimension " + std::to_string(i) + " has no populated bin");
    l += mn;
    r += mx;
    prefix_lo = std::min(prefix_lo, l);
    prefix_hi = std::max(prefix_hi, r);
  }
  double res = options.resolution.value_or((r - l) / 2000.0);
  if (!(res > 0.0)) res = 1.0;
  // Every quantized path sum lies within d/2 cells of its exact sum.
  const long slack = table.dims() / 2 + 1;
  const long auto_lo = static_cast<long>(std::floor(prefix_lo / res)) - slack;
  const long auto_hi = static_cast<long>(std::ceil(prefix_hi / res)) + slack;
  if (!options.bounds) {
    try {
      return run_dp(table, res, auto_lo, auto_hi);
    } catch (const GridOverflowSignal&) {
      throw GridOverflow("contributions exceed the automatic DP grid");
    }
  }
  const auto [bl, br] = *options.bounds;
  const auto lo = static_cast<long>(std::floor(bl / res));
  const auto hi = static_cast<long>(std::ceil(br / res));
  try {
    return run_dp(table, res, lo, hi);
  } catch (const GridOverflowSignal&) {
  }
  try {
    // One widening: extend each side by the requested span.
    const long span = hi - lo + 1;
    return run_dp(table, res, lo - span, hi + span);
  } catch (const GridOverflowSignal&) {
    throw GridOverflow("contributions exceed the DP grid even after widening");
  }
}

DpGeneration dp_generate(const DpTable& dp, double base_value, double target) {
  const long want = std::lround((target - base_value) / dp.resolution);
  std::optional<long> best, min_j, max_j;
  for (long j = dp.lo; j <= dp.hi; ++j) {
    if (!dp.reachable(dp.dims, j)) continue;
    if (!min_j) min_j = j;
    max_j = j;
    if (!best || std::abs(j - want) < std::abs(*best - want)) best = j;
  }
  if (!best) throw NoReachableCell("no reachable cell in the final DP layer");
  DpGeneration g;
  g.target_cell = want;
  g.cell = *best;
  g.bins = dp.backtrack(*best);
  g.z.resize(dp.dims);
  for (int i = 0; i < dp.dims; ++i) g.z(i) = dp.table.bin_center(i, g.bins[i]);
  g.contribution = dp.cell(dp.dims, *best).sum;
  g.predicted = base_value + g.contribution;
  g.gap = target - g.predicted;
  g.clamped = want < *min_j || want > *max_j;
  return g;
}

// ---------------------------------------------------------------------------

CmaParams CmaParams::defaults(int dims) {
  const int lambda = 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dims))));
  const int mu = lambda / 2;
  Vector w(mu);
  for (int i = 0; i < mu; ++i) w(i) = std::log(mu + 0.5) - std::log(i + 1.0);
  return with(dims, lambda, mu, w / w.sum());
}

CmaParams CmaParams::with(int dims, int lambda, int mu, const Vector& weights) {
  if (dims < 1) throw ConfigError("CMA-ES needs at least one dimension");
  if (mu < 1 || lambda < mu) throw ConfigError("CMA-ES requires lambda >= mu >= 1");
  if (weights.size() != mu || (weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
    throw ConfigError("CMA-ES weights must be mu nonnegative values summing to 1");
  }
  CmaParams p;
  p.dims = dims;
  p.lambda = lambda;
  p.mu = mu;
  p.weights = weights;
  const double n = dims;
  p.mu_eff = 1.0 / weights.squaredNorm();
  p.c_sigma = (p.mu_eff + 2.0) / (n + p.mu_eff + 5.0);
  p.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((p.mu_eff - 1.0) / (n + 1.0)) - 1.0) + p.c_sigma;
  p.c_c = (4.0 + p.mu_eff / n) / (n + 4.0 + 2.0 * p.mu_eff / n);
  p.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + p.mu_eff);
  p.c_mu = std::min(1.0 - p.c_1, 2.0 * (p.mu_eff - 2.0 + 1.0 / p.mu_eff) / ((n + 2.0) * (n + 2.0) + p.mu_eff));
  p.c_mu = std::max(0.0, p.c_mu);
  p.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  return p;
}

CmaState CmaState::initial(const Vector& mean, double sigma) {
  CmaState s;
  s.mean = mean;
  s.cov = Matrix::Identity(mean.size(), mean.size());
  s.sigma = sigma;
  s.p_c = Vector::Zero(mean.size());
  s.p_sigma = Vector::Zero(mean.size());
  return s;
}

CmaStep cmaes_step(CmaState& state, const PopulationFitness& fitness, const CmaParams& params,
                   std::mt19937_64& rng) {
  const Eigen::Index n = state.mean.size();
  if (n != params.dims) throw ShapeMismatch("CMA-ES state and parameters differ in dimension");
  CmaStep step;

  state.cov = 0.5 * (state.cov + state.cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(state.cov);
  if (eig.eigenvalues().minCoeff() < 1e-14) {
    const double lift = 1e-14 - eig.eigenvalues().minCoeff() + 1e-12;
    state.cov += lift * Matrix::Identity(n, n);
    eig.compute(state.cov);
    ++state.regularizations;
    step.regularized = true;
  }
  const Eigen::MatrixXd basis = eig.eigenvectors();
  const Vector scales = eig.eigenvalues().cwiseSqrt();

  Matrix y(params.lambda, n);
  for (int k = 0; k < params.lambda; ++k) {
    const Vector z = standard_normal_vector(n, rng);
    y.row(k) = (basis * scales.cwiseProduct(z)).transpose();
  }
  Matrix x = y * state.sigma;
  x.rowwise() += state.mean.transpose();
  const Vector f = fitness(x);
  if (f.size() != params.lambda) throw ShapeMismatch("fitness returned the wrong number of values");

  std::vector<int> rank(static_cast<std::size_t>(params.lambda));
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&f](int a, int b) { return f(a) < f(b); });
  step.best = x.row(rank[0]).transpose();
  step.best_fitness = f(rank[0]);

  Vector y_w = Vector::Zero(n);
  for (int i = 0; i < params.mu; ++i) y_w += params.weights(i) * y.row(rank[i]).transpose();
  state.mean += state.sigma * y_w;

  const Vector inv_sqrt_y = basis * (basis.transpose() * y_w).cwiseQuotient(scales);
  state.p_sigma = (1.0 - params.c_sigma) * state.p_sigma +
                  std::sqrt(params.c_sigma * (2.0 - params.c_sigma) * params.mu_eff) * inv_sqrt_y;
  const double norm_ps = state.p_sigma.norm();
  const double decay = 1.0 - std::pow(1.0 - params.c_sigma, 2.0 * (state.generation + 1));
  const bool h_sigma = norm_ps / std::sqrt(decay) < (1.4 + 2.0 / (n + 1.0)) * params.chi_n;
  state.p_c = (1.0 - params.c_c) * state.p_c +
              (h_sigma ? std::sqrt(params.c_c * (2.0 - params.c_c) * params.mu_eff) : 0.0) * y_w;

  Matrix rank_mu = Matrix::Zero(n, n);
  for (int i = 0; i < params.mu; ++i) {
    const Vector yi = y.row(rank[i]).transpose();
    rank_mu += params.weights(i) * yi * yi.transpose();
  }
  const double correction = h_sigma ? 0.0 : params.c_c * (2.0 - params.c_c);
  state.cov = (1.0 - params.c_1 - params.c_mu) * state.cov +
              params.c_1 * (state.p_c * state.p_c.transpose() + correction * state.cov) + params.c_mu * rank_mu;
  state.cov = 0.5 * (state.cov + state.cov.transpose());
  state.sigma *= std::exp((params.c_sigma / params.d_sigma) * (norm_ps / params.chi_n - 1.0));
  ++state.generation;
  return step;
}

const char* objective_name(CmaObjective o) {
  return o == CmaObjective::kFullAdjacency ? "full_adjacency" : "degree_stats";
}

void to_json(nlohmann::json& j, const CmaConfig& c) {
  j = {{"generations", c.generations}, {"sigma0", c.sigma0}, {"seed", c.seed}, {"kappa", c.kappa}};
  j["lambda"] = c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, CmaConfig& c) {
  CmaConfig d;
  c.generations = j.value("generations", d.generations);
  c.sigma0 = j.value("sigma0", d.sigma0);
  c.seed = j.value("seed", d.seed);
  c.kappa = j.value("kappa", d.kappa);
  if (j.contains("lambda") && !j["lambda"].is_null()) c.lambda = j["lambda"].get<int>();
}

nlohmann::json CmaReport::to_json() const {
  return {{"objective", objective_name(objective)},
          {"generations", generations},
          {"best_fitness_trace", best_fitness_trace},
          {"final_auc", final_auc ? nlohmann::json(*final_auc) : nlohmann::json(nullptr)},
          {"final_acc", final_acc},
          {"zero_baseline_acc", zero_baseline_acc},
          {"z_star", std::vector<double>(z_star.data(), z_star.data() + z_star.size())},
          {"covariance_regularizations", regularizations}};
}

double full_adjacency_fitness(const DecodedGraph& dg, const Adjacency& target) {
  return loss_edge(adjacency_matrix(target), dg.edge_probs);
}

double degree_stats_fitness(const DecodedGraph& dg, const Adjacency& target, double kappa) {
  const SubgraphSample s = discretize(dg, kappa);
  double total = 0.0;
  for (DegreeMode mode : {DegreeMode::kIn, DegreeMode::kOut}) {
    auto a = degrees(s.adjacency, mode);
    auto b = degrees(target, mode);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(static_cast<double>(a[i]) - b[i]);
  }
  return total;
}

CmaReport cmaes_generate(const VaeModel& model, const SubgraphSample& target, CmaObjective objective,
                         const CmaConfig& cfg) {
  const int d = model.config().latent_dim;
  CmaParams params = CmaParams::defaults(d);
  if (cfg.lambda) {
    const int mu = *cfg.lambda / 2;
    Vector w(mu);
    for (int i = 0; i < mu; ++i) w(i) = std::log(mu + 0.5) - std::log(i + 1.0);
    params = CmaParams::with(d, *cfg.lambda, mu, w / w.sum());
  }
  CmaState state = CmaState::initial(Vector::Zero(d), cfg.sigma0);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0xc4a));

  const PopulationFitness fitness = [&](const Matrix& pop) {
    const auto decodes = model.decode_batch(pop);
    Vector f(pop.rows());
    for (Eigen::Index k = 0; k < pop.rows(); ++k) {
      f(k) = objective == CmaObjective::kFullAdjacency ? full_adjacency_fitness(decodes[k], target.adjacency)
                                                       : degree_stats_fitness(decodes[k], target.adjacency, cfg.kappa);
    }
    return f;
  };

  CmaReport report;
  report.objective = objective;
  double best = std::numeric_limits<double>::infinity();
  Vector best_z = Vector::Zero(d);
  for (int g = 0; g < cfg.generations; ++g) {
    const CmaStep s = cmaes_step(state, fitness, params, rng);
    if (s.best_fitness < best) {
      best = s.best_fitness;
      best_z = s.best;
    }
    report.best_fitness_trace.push_back(best);
  }
  report.generations = cfg.generations;
  report.z_star = best_z;
  report.regularizations = state.regularizations;

  const DecodedGraph dg = model.decode(best_z);
  const EdgeScores scores = edge_scores({&dg.edge_probs}, {&target.adjacency}, cfg.kappa);
  report.final_auc = scores.auc;
  report.final_acc = scores.accuracy;
  report.zero_baseline_acc = scores.zero_baseline_accuracy;
  return report;
}

}  // namespace ccodec
