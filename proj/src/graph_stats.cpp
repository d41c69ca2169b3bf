#include "ccodec/graph_stats.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stack>

#include "ccodec/errors.hpp"

namespace ccodec {

int edge_count(const Adjacency& a) {
  const int n = a.size();
  int count = 0;
  for (int i = 0; i < n; ++i) {
    const std::uint8_t* row = a.row(i);
    for (int j = 0; j < n; ++j) count += row[j];
  }
  return count;
}

std::optional<double> reciprocity(const Adjacency& a) {
  const int n = a.size();
  long mutual = 0;
  long one_way = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j || !a(i, j)) continue;
      if (a(j, i)) {
        if (i < j) ++mutual;
      } else {
        ++one_way;
      }
    }
  }
  if (one_way == 0) return std::nullopt;
  return kReciprocityScale * static_cast<double>(mutual) / static_cast<double>(one_way);
}

std::vector<double> betweenness(const Adjacency& a) {
  const int n = a.size();
  std::vector<std::vector<int>> out(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && a(i, j)) out[i].push_back(j);

  std::vector<double> cb(n, 0.0);
  std::vector<double> sigma(n), delta(n);
  std::vector<int> dist(n);
  std::vector<std::vector<int>> preds(n);
  std::vector<int> order;
  order.reserve(n);
  for (int s = 0; s < n; ++s) {
    std::fill(sigma.begin(), sigma.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
    std::fill(dist.begin(), dist.end(), -1);
    for (auto& p : preds) p.clear();
    order.clear();

    sigma[s] = 1.0;
    dist[s] = 0;
    std::queue<int> q;
    q.push(s);
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      order.push_back(v);
      for (int w : out[v]) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          q.push(w);
        }
        if (dist[w] == dist[v] + 1) {
          sigma[w] += sigma[v];
          preds[w].push_back(v);
        }
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int w = *it;
      for (int v : preds[w]) delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
      if (w != s) cb[w] += delta[w];
    }
  }
  return cb;
}

double total_betweenness(const Adjacency& a) {
  const int n = a.size();
  if (n < 3) return 0.0;
  const auto cb = betweenness(a);
  const double norm = static_cast<double>(n - 1) * static_cast<double>(n - 2);
  double total = 0.0;
  for (double v : cb) total += v / norm;
  return kBetweennessScale * total;
}

double non_neuronal_count(std::span<const int> labels) {
  return kNonNeuronalScale *
         static_cast<double>(std::count(labels.begin(), labels.end(), kNonNeuronal));
}

FeatureVector feature_vector(const SubgraphSample& sample) {
  FeatureVector f;
  f.edge_count = edge_count(sample.adjacency);
  f.reciprocity_scaled = reciprocity(sample.adjacency);
  f.betweenness_scaled = total_betweenness(sample.adjacency);
  f.non_neuronal_scaled = non_neuronal_count(sample.labels);
  return f;
}

std::vector<int> degrees(const Adjacency& a, DegreeMode mode) {
  const int n = a.size();
  std::vector<int> deg(n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!a(i, j)) continue;
      if (mode != DegreeMode::kIn) ++deg[i];
      if (mode != DegreeMode::kOut) ++deg[j];
    }
  }
  return deg;
}

std::vector<int> degree_histogram(const Adjacency& a, DegreeMode mode) {
  const int n = a.size();
  std::vector<int> hist(mode == DegreeMode::kTotal ? std::max(2 * n - 1, 1) : std::max(n, 1), 0);
  for (int k : degrees(a, mode)) ++hist[k];
  return hist;
}

namespace {

std::vector<std::vector<int>> neighbor_lists(const Adjacency& sym) {
  const int n = sym.size();
  std::vector<std::vector<int>> nb(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && sym(i, j)) nb[i].push_back(j);
  return nb;
}

// Assigns orbits to the members of one connected induced subgraph on 3 or 4
// nodes, classified by its edge count and degree sequence.
void record_graphlet(const Adjacency& sym, std::span<const int> nodes,
                     std::vector<OrbitVector>& orbits) {
  const int k = static_cast<int>(nodes.size());
  std::array<int, 4> deg{};
  int edges = 0;
  for (int x = 0; x < k; ++x) {
    for (int y = x + 1; y < k; ++y) {
      if (sym(nodes[x], nodes[y])) {
        ++deg[x];
        ++deg[y];
        ++edges;
      }
    }
  }
  for (int x = 0; x < k; ++x) {
    int orbit = -1;
    if (k == 3) {
      orbit = edges == 3 ? 3 : (deg[x] == 2 ? 2 : 1);
    } else {
      const int maxdeg = *std::max_element(deg.begin(), deg.begin() + 4);
      switch (edges) {
        case 3:
          if (maxdeg == 3) {
            orbit = deg[x] == 3 ? 7 : 6;
          } else {
            orbit = deg[x] == 1 ? 4 : 5;
          }
          break;
        case 4:
          if (maxdeg == 2) {
            orbit = 8;
          } else {
            orbit = deg[x] == 1 ? 9 : (deg[x] == 2 ? 10 : 11);
          }
          break;
        case 5:
          orbit = deg[x] == 2 ? 12 : 13;
          break;
        case 6:
          orbit = 14;
          break;
        default:
          break;
      }
    }
    if (orbit >= 0) ++orbits[nodes[x]][orbit];
  }
}

// Enumerates every connected induced subgraph of size 3..4 exactly once
// (ESU extension: each set is grown from its smallest vertex, adding only
// exclusive neighbours larger than that root).
class GraphletEnumerator {
 public:
  GraphletEnumerator(const Adjacency& sym, std::vector<OrbitVector>& orbits)
      : sym_(sym), nb_(neighbor_lists(sym)), orbits_(orbits) {}

  void run() {
    const int n = sym_.size();
    for (int v = 0; v < n; ++v) {
      std::vector<int> ext;
      for (int u : nb_[v])
        if (u > v) ext.push_back(u);
      sub_.assign(1, v);
      extend(ext, v);
    }
  }

 private:
  bool in_closed_neighborhood(int u) const {
    for (int s : sub_)
      if (s == u || sym_(s, u)) return true;
    return false;
  }

  void extend(std::vector<int> ext, int root) {
    if (sub_.size() >= 3) record_graphlet(sym_, sub_, orbits_);
    if (sub_.size() == 4) return;
    while (!ext.empty()) {
      const int w = ext.back();
      ext.pop_back();
      std::vector<int> next = ext;
      for (int u : nb_[w]) {
        if (u > root && !in_closed_neighborhood(u) &&
            std::find(next.begin(), next.end(), u) == next.end()) {
          next.push_back(u);
        }
      }
      sub_.push_back(w);
      extend(std::move(next), root);
      sub_.pop_back();
    }
  }

  const Adjacency& sym_;
  std::vector<std::vector<int>> nb_;
  std::vector<OrbitVector>& orbits_;
  std::vector<int> sub_;
};

}  // namespace

std::vector<double> clustering_values(const Adjacency& a) {
  const Adjacency sym = a.symmetrized();
  const auto nb = neighbor_lists(sym);
  const int n = sym.size();
  std::vector<double> c(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto& ni = nb[i];
    const auto k = static_cast<double>(ni.size());
    if (ni.size() < 2) continue;
    long links = 0;
    for (std::size_t x = 0; x < ni.size(); ++x)
      for (std::size_t y = x + 1; y < ni.size(); ++y) links += sym(ni[x], ni[y]);
    c[i] = 2.0 * static_cast<double>(links) / (k * (k - 1.0));
  }
  return c;
}

std::vector<OrbitVector> orbit_counts(const Adjacency& a) {
  const Adjacency sym = a.symmetrized();
  const int n = sym.size();
  std::vector<OrbitVector> orbits(n, OrbitVector{});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && sym(i, j)) ++orbits[i][0];
  GraphletEnumerator(sym, orbits).run();
  return orbits;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Eigen::VectorXd> prepare(const std::vector<Eigen::VectorXd>& set, Eigen::Index dim,
                                     bool normalize) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(set.size());
  for (const auto& v : set) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(dim);
    p.head(v.size()) = v;
    if (normalize) {
      const double s = p.sum();
      if (s > 0.0) p /= s;
    }
    out.push_back(std::move(p));
  }
  return out;
}

Eigen::Index max_dim(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b) {
  Eigen::Index d = 0;
  for (const auto& v : a) d = std::max(d, v.size());
  for (const auto& v : b) d = std::max(d, v.size());
  return d;
}

double kernel_mean(const std::vector<Eigen::VectorXd>& x, const std::vector<Eigen::VectorXd>& y,
                   double gamma, bool same, bool exclude_diagonal) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (same && exclude_diagonal && i == j) continue;
      total += std::exp(-gamma * (x[i] - y[j]).squaredNorm());
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

double mmd(const std::vector<Eigen::VectorXd>& set_a, const std::vector<Eigen::VectorXd>& set_b,
           double bandwidth, MmdEstimator estimator, bool normalize) {
  const std::size_t need = estimator == MmdEstimator::kUnbiased ? 2 : 1;
  if (set_a.size() < need || set_b.size() < need) {
    throw InsufficientSamples("MMD needs at least " + std::to_string(need) +
                              " samples per set, got " + std::to_string(set_a.size()) + " and " +
                              std::to_string(set_b.size()));
  }
  if (!(bandwidth > 0.0)) throw InsufficientSamples("MMD bandwidth must be positive");
  const Eigen::Index dim = max_dim(set_a, set_b);
  const auto x = prepare(set_a, dim, normalize);
  const auto y = prepare(set_b, dim, normalize);
  const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
  const bool unbiased = estimator == MmdEstimator::kUnbiased;
  return kernel_mean(x, x, gamma, true, unbiased) + kernel_mean(y, y, gamma, true, unbiased) -
         2.0 * kernel_mean(x, y, gamma, false, false);
}

double median_bandwidth(const std::vector<Eigen::VectorXd>& set, bool normalize) {
  const auto x = prepare(set, max_dim(set, {}), normalize);
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) d.push_back((x[i] - x[j]).norm());
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double median = *mid;
  if (d.size() % 2 == 0) median = 0.5 * (median + *std::max_element(d.begin(), mid));
  return median > 0.0 ? median : 1.0;
}

GraphDescriptor describe(const SubgraphSample& sample, bool exclude_isolated) {
  const Adjacency& a = sample.adjacency;
  const int n = a.size();
  const auto total = degrees(a, DegreeMode::kTotal);
  std::vector<bool> keep(n, true);
  if (exclude_isolated)
    for (int i = 0; i < n; ++i) keep[i] = total[i] > 0;

  GraphDescriptor d;
  d.degree_histogram = Eigen::VectorXd::Zero(std::max(2 * n - 1, 1));
  for (int i = 0; i < n; ++i)
    if (keep[i]) d.degree_histogram(total[i]) += 1.0;

  constexpr int kBins = 100;
  d.clustering_histogram = Eigen::VectorXd::Zero(kBins);
  const auto c = clustering_values(a);
  for (int i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    const int bin = std::min(kBins - 1, static_cast<int>(c[i] * kBins));
    d.clustering_histogram(bin) += 1.0;
  }

  d.mean_orbit_counts = Eigen::VectorXd::Zero(kNumOrbits);
  const auto orbits = orbit_counts(a);
  int kept = 0;
  for (int i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    ++kept;
    for (int o = 0; o < kNumOrbits; ++o) d.mean_orbit_counts(o) += static_cast<double>(orbits[i][o]);
  }
  if (kept > 0) d.mean_orbit_counts /= kept;
  return d;
}

GenerationReport generation_mmd_report(const std::vector<SubgraphSample>& generated,
                                       const std::vector<SubgraphSample>& reference,
                                       const MmdOptions& options) {
  if (generated.empty() || reference.empty()) {
    throw InsufficientSamples("generation report needs nonempty generated and reference sets");
  }
  std::vector<Eigen::VectorXd> gd, gc, go, rd, rc, ro;
  for (const auto& s : generated) {
    auto d = describe(s, options.exclude_isolated);
    gd.push_back(std::move(d.degree_histogram));
    gc.push_back(std::move(d.clustering_histogram));
    go.push_back(std::move(d.mean_orbit_counts));
  }
  for (const auto& s : reference) {
    auto d = describe(s, options.exclude_isolated);
    rd.push_back(std::move(d.degree_histogram));
    rc.push_back(std::move(d.clustering_histogram));
    ro.push_back(std::move(d.mean_orbit_counts));
  }
  GenerationReport r;
  const bool fixed = options.bandwidth > 0.0;
  r.deg_bandwidth = fixed ? options.bandwidth : median_bandwidth(rd, true);
  r.clus_bandwidth = fixed ? options.bandwidth : median_bandwidth(rc, true);
  r.orbit_bandwidth = fixed ? options.bandwidth : median_bandwidth(ro, false);
  r.deg_mmd = mmd(gd, rd, r.deg_bandwidth, options.estimator, true);
  r.clus_mmd = mmd(gc, rc, r.clus_bandwidth, options.estimator, true);
  r.orbit_mmd = mmd(go, ro, r.orbit_bandwidth, options.estimator, false);
  return r;
}

}  // namespace ccodec
