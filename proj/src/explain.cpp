#include "ccodec/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ccodec/errors.hpp"
#include "ccodec/graph_stats.hpp"
#include "ccodec/random.hpp"

namespace ccodec {

double ShapMatrix::max_efficiency_gap() const {
  double worst = 0.0;
  for (Eigen::Index s = 0; s < phi.rows(); ++s) {
    worst = std::max(worst, std::abs(phi.row(s).sum() - (fx(s) - base_value)));
  }
  return worst;
}

namespace {

std::vector<double> shapley_weights(int d) {
  // w(s) = s! (d - s - 1)! / d!
  std::vector<double> w(static_cast<std::size_t>(d));
  for (int s = 0; s < d; ++s) {
    w[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(d - s) - std::lgamma(d + 1.0));
  }
  return w;
}

void exact_sample(const BatchFunction& g, const Vector& x, const Matrix& background, std::vector<ShapMatrix>& out,
                  Eigen::Index row) {
  const auto d = static_cast<int>(x.size());
  const Eigen::Index n_bg = background.rows();
  const std::size_t n_masks = std::size_t{1} << d;
  Matrix points(static_cast<Eigen::Index>(n_masks) * n_bg, d);
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    for (Eigen::Index b = 0; b < n_bg; ++b) {
      auto r = points.row(static_cast<Eigen::Index>(mask) * n_bg + b);
      for (int j = 0; j < d; ++j) r(j) = (mask >> j) & 1U ? x(j) : background(b, j);
    }
  }
  const Matrix values = g(points);
  const Eigen::Index k_out = values.cols();
  Matrix v(static_cast<Eigen::Index>(n_masks), k_out);  // coalition values, background-averaged
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    v.row(static_cast<Eigen::Index>(mask)) =
        values.middleRows(static_cast<Eigen::Index>(mask) * n_bg, n_bg).colwise().mean();
  }
  const auto w = shapley_weights(d);
  for (int j = 0; j < d; ++j) {
    Vector acc = Vector::Zero(k_out);
    for (std::size_t mask = 0; mask < n_masks; ++mask) {
      if ((mask >> j) & 1U) continue;
      const int s = std::popcount(static_cast<unsigned>(mask));
      acc += w[s] * (v.row(static_cast<Eigen::Index>(mask | (std::size_t{1} << j))) -
                     v.row(static_cast<Eigen::Index>(mask)))
                        .transpose();
    }
    for (Eigen::Index k = 0; k < k_out; ++k) out[k].phi(row, j) = acc(k);
  }
  for (Eigen::Index k = 0; k < k_out; ++k) out[k].fx(row) = v(static_cast<Eigen::Index>(n_masks - 1), k);
}

void sampled_sample(const BatchFunction& g, const Vector& x, const Matrix& background, int n_perm,
                    std::mt19937_64& rng, Eigen::Index bg_offset, std::vector<ShapMatrix>& out, Eigen::Index row,
                    const Vector& bg_mean_values) {
  const auto d = static_cast<int>(x.size());
  const Eigen::Index n_bg = background.rows();
  std::vector<std::vector<int>> perms;
  std::vector<Eigen::Index> bg_of;
  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  for (int p = 0; p < n_perm / 2; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    perms.push_back(order);
    perms.emplace_back(order.rbegin(), order.rend());
    const Eigen::Index b = (bg_offset + p) % n_bg;
    bg_of.push_back(b);
    bg_of.push_back(b);
  }
  // Each background point's chains are averaged, then backgrounds are
  // averaged uniformly over those used.
  std::vector<int> uses(static_cast<std::size_t>(n_bg), 0);
  for (auto b : bg_of) ++uses[b];
  const auto n_used = static_cast<double>(std::count_if(uses.begin(), uses.end(), [](int u) { return u > 0; }));

  Matrix points(static_cast<Eigen::Index>(perms.size()) * (d + 1), d);
  for (std::size_t p = 0; p < perms.size(); ++p) {
    Vector cur = background.row(bg_of[p]).transpose();
    const Eigen::Index base = static_cast<Eigen::Index>(p) * (d + 1);
    points.row(base) = cur.transpose();
    for (int k = 0; k < d; ++k) {
      cur(perms[p][k]) = x(perms[p][k]);
      points.row(base + k + 1) = cur.transpose();
    }
  }
  const Matrix values = g(points);
  const Eigen::Index k_out = values.cols();
  Matrix phi = Matrix::Zero(k_out, d);
  for (std::size_t p = 0; p < perms.size(); ++p) {
    const double w = 1.0 / (n_used * uses[bg_of[p]]);
    const Eigen::Index base = static_cast<Eigen::Index>(p) * (d + 1);
    for (int k = 0; k < d; ++k) {
      phi.col(perms[p][k]) += w * (values.row(base + k + 1) - values.row(base + k)).transpose();
    }
  }
  const Vector fx = values.row(d).transpose();  // last row of the first chain is x itself
  for (Eigen::Index k = 0; k < k_out; ++k) {
    // Spread any residual (backgrounds not all used) in proportion to |phi_j|;
    // dimensions with zero attribution keep it.
    const double residual = (fx(k) - bg_mean_values(k)) - phi.row(k).sum();
    const double mass = phi.row(k).cwiseAbs().sum();
    if (mass > 0.0) {
      phi.row(k) += residual * phi.row(k).cwiseAbs() / mass;
    } else {
      phi.row(k).array() += residual / d;
    }
    out[k].phi.row(row) = phi.row(k);
    out[k].fx(row) = fx(k);
  }
}

}  // namespace

std::vector<ShapMatrix> shap_values(const BatchFunction& g, const Matrix& samples, const Matrix& background,
                                    const ShapOptions& options) {
  if (background.rows() == 0) throw ShapeMismatch("Shapley background set is empty");
  if (samples.cols() != background.cols()) throw ShapeMismatch("samples and background differ in dimension");
  const auto d = static_cast<int>(samples.cols());
  if (d == 0) throw ShapeMismatch("zero-dimensional inputs");
  bool exact = options.mode == ShapMode::kExact || (options.mode == ShapMode::kAuto && d <= kExactShapMaxDim);
  if (exact && d > 20) throw ShapeMismatch("exact Shapley enumeration is limited to 20 dimensions");

  const Matrix bg_values = g(background);
  const Vector bg_mean = bg_values.colwise().mean().transpose();
  std::vector<ShapMatrix> out(static_cast<std::size_t>(bg_values.cols()));
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].phi = Matrix::Zero(samples.rows(), d);
    out[k].fx = Vector::Zero(samples.rows());
    out[k].base_value = bg_mean(static_cast<Eigen::Index>(k));
  }
  const int n_perm = std::max(2, options.n_permutations + (options.n_permutations % 2));
  std::mt19937_64 rng(derive_seed(options.seed, 0x5a4a9));
  for (Eigen::Index s = 0; s < samples.rows(); ++s) {
    const Vector x = samples.row(s).transpose();
    if (exact) {
      exact_sample(g, x, background, out, s);
    } else {
      sampled_sample(g, x, background, n_perm, rng, s * (n_perm / 2), out, s, bg_mean);
    }
  }
  return out;
}

BatchFunction surrogate_composite(const VaeModel& model, const SurrogateSet& surrogates) {
  return [&model, &surrogates](const Matrix& z) {
    Matrix out(z.rows(), static_cast<Eigen::Index>(kFeatures.size()));
    const Eigen::Index n = model.config().n_nodes;
    constexpr Eigen::Index kChunk = 64;
    for (Eigen::Index start = 0; start < z.rows(); start += kChunk) {
      const Eigen::Index len = std::min(kChunk, z.rows() - start);
      const auto decodes = model.decode_batch(z.middleRows(start, len));
      Matrix edges(len * n, n);
      Matrix nodes(len * n, model.config().n_classes);
      for (Eigen::Index b = 0; b < len; ++b) {
        edges.middleRows(b * n, n) = decodes[b].edge_probs;
        nodes.middleRows(b * n, n) = decodes[b].node_scores;
      }
      Tape tape;
      const Var e = tape.constant(std::move(edges));
      const Var x = tape.constant(std::move(nodes));
      for (Feature f : kFeatures) {
        out.block(start, static_cast<int>(f), len, 1) = surrogates.predict(tape, f, e, x).value();
      }
    }
    return out;
  };
}

// ---------------------------------------------------------------------------

int ShapTable::bin_of(int dim, double z) const {
  const double s = sigma(dim);
  if (!(s > 0.0)) return bins / 2;
  const double width = 2.0 * s / bins;
  const auto k = static_cast<int>(std::floor((z + s) / width));
  return std::clamp(k, 0, bins - 1);
}

double ShapTable::bin_center(int dim, int bin) const {
  const double s = sigma(dim);
  if (!(s > 0.0)) return 0.0;
  const double width = 2.0 * s / bins;
  return -s + (bin + 0.5) * width;
}

ShapTable build_shap_table(const ShapMatrix& shap, const Matrix& z_samples, int bins, int min_count) {
  if (shap.phi.rows() != z_samples.rows() || shap.phi.cols() != z_samples.cols()) {
    throw ShapeMismatch("Shapley rows do not align with latent samples");
  }
  if (bins < 1 || min_count < 1) throw ShapeMismatch("bins and min_count must be positive");
  const Eigen::Index d = z_samples.cols();
  ShapTable t;
  t.bins = bins;
  t.min_count = min_count;
  t.base_value = shap.base_value;
  t.sigma.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double mean = z_samples.col(i).mean();
    const double var = z_samples.rows() ? (z_samples.col(i).array() - mean).square().mean() : 0.0;
    const bool constant = z_samples.rows() == 0 || z_samples.col(i).maxCoeff() == z_samples.col(i).minCoeff();
    t.sigma(i) = constant ? 0.0 : std::sqrt(var);
  }
  t.value = Matrix::Zero(d, bins);
  t.counts = Eigen::MatrixXi::Zero(d, bins);
  for (Eigen::Index s = 0; s < z_samples.rows(); ++s) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const int k = t.bin_of(static_cast<int>(i), z_samples(s, i));
      t.value(i, k) += shap.phi(s, i);
      ++t.counts(i, k);
    }
  }
  bool any = false;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (int k = 0; k < bins; ++k) {
      if (t.counts(i, k) >= min_count) {
        t.value(i, k) /= t.counts(i, k);
        any = true;
      } else {
        t.value(i, k) = 0.0;
      }
    }
  }
  if (!any) throw EmptyTable("no ShapTable cell reaches min_count = " + std::to_string(min_count));
  return t;
}

void to_json(nlohmann::json& j, const ShapTable& t) {
  j = nlohmann::json::object();
  j["bins"] = t.bins;
  j["min_count"] = t.min_count;
  j["base_value"] = t.base_value;
  j["sigma"] = std::vector<double>(t.sigma.data(), t.sigma.data() + t.sigma.size());
  auto& rows = j["cells"] = nlohmann::json::array();
  for (int i = 0; i < t.dims(); ++i) {
    nlohmann::json values = nlohmann::json::array(), counts = nlohmann::json::array();
    for (int k = 0; k < t.bins; ++k) {
      values.push_back(t.populated(i, k) ? nlohmann::json(t.value(i, k)) : nlohmann::json(nullptr));
      counts.push_back(t.counts(i, k));
    }
    rows.push_back({{"dim", i}, {"shap", values}, {"count", counts}});
  }
}

void from_json(const nlohmann::json& j, ShapTable& t) {
  t.bins = j.at("bins").get<int>();
  t.min_count = j.at("min_count").get<int>();
  t.base_value = j.at("base_value").get<double>();
  const auto sigma = j.at("sigma").get<std::vector<double>>();
  const auto d = static_cast<Eigen::Index>(sigma.size());
  t.sigma = Eigen::Map<const Vector>(sigma.data(), d);
  t.value = Matrix::Zero(d, t.bins);
  t.counts = Eigen::MatrixXi::Zero(d, t.bins);
  const auto& cells = j.at("cells");
  if (static_cast<Eigen::Index>(cells.size()) != d) throw ShapeMismatch("ShapTable cells do not match sigma");
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto& shap = cells[i].at("shap");
    const auto& count = cells[i].at("count");
    if (static_cast<int>(shap.size()) != t.bins || static_cast<int>(count.size()) != t.bins) {
      throw ShapeMismatch("ShapTable row has the wrong number of bins");
    }
    for (int k = 0; k < t.bins; ++k) {
      t.counts(i, k) = count[k].get<int>();
      if (!shap[k].is_null()) t.value(i, k) = shap[k].get<double>();
    }
  }
}

void write_shap_csv(const ShapMatrix& shap, const Matrix& z_samples, const std::filesystem::path& path) {
  if (shap.phi.rows() != z_samples.rows() || shap.phi.cols() != z_samples.cols()) {
    throw ShapeMismatch("Shapley rows do not align with latent samples");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "sample_id,dim,z_value,phi\n";
  for (Eigen::Index s = 0; s < shap.phi.rows(); ++s) {
    for (Eigen::Index i = 0; i < shap.phi.cols(); ++i) {
      out << s << ',' << i << ',' << z_samples(s, i) << ',' << shap.phi(s, i) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<SweepPoint> dimension_sweep(const VaeModel& model, Feature feature, int dim,
                                        std::span<const double> grid, double kappa) {
  const int d = model.config().latent_dim;
  if (dim < 0 || dim >= d) throw ShapeMismatch("sweep dimension out of range");
  Matrix z = Matrix::Zero(static_cast<Eigen::Index>(grid.size()), d);
  for (std::size_t g = 0; g < grid.size(); ++g) z(static_cast<Eigen::Index>(g), dim) = grid[g];
  const auto decodes = model.decode_batch(z);
  std::vector<SweepPoint> curve;
  curve.reserve(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    curve.push_back({grid[g], feature_value(feature_vector(discretize(decodes[g], kappa)), feature)});
  }
  return curve;
}

std::vector<double> sweep_grid(double sigma, int points) {
  std::vector<double> grid;
  if (points <= 0) return grid;
  if (points == 1) return {0.0};
  for (int i = 0; i < points; ++i) grid.push_back(-3.0 * sigma + 6.0 * sigma * i / (points - 1));
  return grid;
}

double sweep_range(const std::vector<SweepPoint>& curve) {
  double lo = 0.0, hi = 0.0;
  int n = 0;
  for (const auto& p : curve) {
    if (!p.value) continue;
    lo = n ? std::min(lo, *p.value) : *p.value;
    hi = n ? std::max(hi, *p.value) : *p.value;
    ++n;
  }
  return n >= 2 ? hi - lo : 0.0;
}

}  // namespace ccodec
