#include "ccodec/data_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ccodec/errors.hpp"
#include "ccodec/random.hpp"

namespace ccodec {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

template <typename T>
T parse_number(std::string_view field, const std::filesystem::path& file, std::size_t line) {
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw MalformedRow(where(file, line) + ": cannot parse '" + std::string(field) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) {
      throw MalformedRow(where(file, line) + ": non-finite coordinate");
    }
  }
  return value;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MalformedRow("cannot open " + path.string());
  return in;
}

void expect_header(std::ifstream& in, const std::filesystem::path& file,
                   const std::vector<std::string>& expected) {
  std::string line;
  if (!std::getline(in, line)) throw MalformedRow(where(file, 1) + ": missing header");
  const auto fields = split_csv(line);
  bool ok = fields.size() == expected.size();
  for (std::size_t i = 0; ok && i < fields.size(); ++i) ok = lower(fields[i]) == expected[i];
  if (!ok) throw MalformedRow(where(file, 1) + ": unexpected header '" + line + "'");
}

}  // namespace

NtLabel parse_nt_label(std::string_view text) {
  const std::string l = lower(trim(text));
  if (l == "gaba") return NtLabel::kGaba;
  if (l == "glut") return NtLabel::kGlut;
  if (l == "ach") return NtLabel::kAch;
  if (l == "ser") return NtLabel::kSer;
  throw UnknownLabel("unknown neurotransmitter label '" + std::string(text) + "'");
}

std::array<std::size_t, 4> ConnectomeTable::label_counts() const {
  std::array<std::size_t, 4> counts{};
  for (const auto& n : neurons) ++counts[static_cast<int>(n.nt_label)];
  return counts;
}

ConnectomeTable load_connectome(const std::filesystem::path& neuron_file,
                                const std::filesystem::path& edge_file) {
  ConnectomeTable table;
  std::unordered_map<std::int64_t, std::size_t> index;

  {
    std::ifstream in = open_input(neuron_file);
    expect_header(in, neuron_file, {"id", "x", "y", "z", "nt_label"});
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 5) {
        throw MalformedRow(where(neuron_file, lineno) + ": expected 5 columns, got " +
                           std::to_string(f.size()));
      }
      NeuronRecord rec;
      rec.id = parse_number<std::int64_t>(f[0], neuron_file, lineno);
      rec.position = {parse_number<double>(f[1], neuron_file, lineno),
                      parse_number<double>(f[2], neuron_file, lineno),
                      parse_number<double>(f[3], neuron_file, lineno)};
      try {
        rec.nt_label = parse_nt_label(f[4]);
      } catch (const UnknownLabel& e) {
        throw UnknownLabel(where(neuron_file, lineno) + ": " + e.what());
      }
      if (!index.emplace(rec.id, table.neurons.size()).second) {
        throw MalformedRow(where(neuron_file, lineno) + ": duplicate neuron id " +
                           std::to_string(rec.id));
      }
      table.neurons.push_back(rec);
    }
  }

  {
    std::ifstream in = open_input(edge_file);
    expect_header(in, edge_file, {"pre_id", "post_id"});
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 2) {
        throw MalformedRow(where(edge_file, lineno) + ": expected 2 columns, got " +
                           std::to_string(f.size()));
      }
      const auto pre = parse_number<std::int64_t>(f[0], edge_file, lineno);
      const auto post = parse_number<std::int64_t>(f[1], edge_file, lineno);
      for (auto id : {pre, post}) {
        if (!index.contains(id)) {
          throw DanglingEdge(where(edge_file, lineno) + ": unknown neuron id " + std::to_string(id));
        }
      }
      if (pre == post) continue;
      if (seen.emplace(pre, post).second) table.edges.emplace_back(pre, post);
    }
  }
  return table;
}

void write_connectome(const ConnectomeTable& table, const std::filesystem::path& neuron_file,
                      const std::filesystem::path& edge_file) {
  std::ofstream neurons(neuron_file);
  neurons << "id,x,y,z,nt_label\n" << std::setprecision(17);
  for (const auto& n : table.neurons) {
    neurons << n.id << ',' << n.position.x << ',' << n.position.y << ',' << n.position.z << ','
            << kClassNames[static_cast<int>(n.nt_label)] << '\n';
  }
  std::ofstream edges(edge_file);
  edges << "pre_id,post_id\n";
  for (const auto& [pre, post] : table.edges) edges << pre << ',' << post << '\n';
  if (!neurons || !edges) throw Error("failed writing connectome files");
}

ConnectomeTable synth_connectome(const SynthParams& params) {
  const double mix_total =
      std::accumulate(params.label_mix.begin(), params.label_mix.end(), 0.0);
  if (std::abs(mix_total - 1.0) > 1e-9 ||
      std::any_of(params.label_mix.begin(), params.label_mix.end(), [](double p) { return p < 0; })) {
    throw InvalidMix("label proportions must be nonnegative and sum to 1");
  }
  if (params.n_neurons < 1) throw InvalidMix("n_neurons must be >= 1");

  std::mt19937_64 rng(params.seed);
  const BoundingBox& b = params.box;
  std::uniform_real_distribution<double> ux(b.min.x, b.max.x);
  std::uniform_real_distribution<double> uy(b.min.y, b.max.y);
  std::uniform_real_distribution<double> uz(b.min.z, b.max.z);
  std::discrete_distribution<int> label_dist(params.label_mix.begin(), params.label_mix.end());

  std::vector<NeuronRecord> neurons(params.n_neurons);
  for (auto& n : neurons) {
    n.position = {ux(rng), uy(rng), uz(rng)};
    n.nt_label = static_cast<NtLabel>(label_dist(rng));
  }
  std::stable_sort(neurons.begin(), neurons.end(), [](const NeuronRecord& a, const NeuronRecord& c) {
    if (a.nt_label != c.nt_label) return a.nt_label < c.nt_label;
    return a.position.y < c.position.y;
  });
  for (std::size_t i = 0; i < neurons.size(); ++i) neurons[i].id = static_cast<std::int64_t>(i + 1);

  ConnectomeTable table;
  table.neurons = std::move(neurons);
  if (params.edge_prob_scale <= 0.0) return table;

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto& ns = table.neurons;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    for (std::size_t j = 0; j < ns.size(); ++j) {
      if (i == j) continue;
      const double dx = ns[i].position.x - ns[j].position.x;
      const double dy = ns[i].position.y - ns[j].position.y;
      const double dz = ns[i].position.z - ns[j].position.z;
      const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      const double p = params.edge_prob_scale * std::exp(-dist / params.length_scale);
      if (u01(rng) < p) table.edges.emplace_back(ns[i].id, ns[j].id);
    }
  }
  return table;
}

int SubgraphSample::real_count() const {
  return static_cast<int>(std::count_if(labels.begin(), labels.end(),
                                        [](int l) { return l != kNonNeuronal; }));
}

SubgraphSample pad_subgraph(const std::vector<int>& real_labels,
                            const std::vector<std::pair<int, int>>& real_edges) {
  const int k = static_cast<int>(real_labels.size());
  if (k > kSampleNodes) {
    throw TooManyNodes(std::to_string(k) + " real nodes exceed the " +
                       std::to_string(kSampleNodes) + "-node sample size");
  }
  SubgraphSample s;
  s.labels.assign(kSampleNodes, kNonNeuronal);
  for (int i = 0; i < k; ++i) {
    if (real_labels[i] < 0 || real_labels[i] >= kNonNeuronal) {
      throw UnknownLabel("real node label must be in 0..3, got " + std::to_string(real_labels[i]));
    }
    s.labels[i] = real_labels[i];
  }
  s.adjacency = Adjacency(kSampleNodes);
  for (const auto& [i, j] : real_edges) {
    if (i < 0 || j < 0 || i >= k || j >= k) {
      throw DanglingEdge("edge (" + std::to_string(i) + "," + std::to_string(j) +
                         ") references a node outside the real set");
    }
    if (i != j) s.adjacency.set(i, j);
  }
  return s;
}

// ---------------------------------------------------------------------------

CylinderSampler::CylinderSampler(const ConnectomeTable& table, SamplingConfig config)
    : config_(config) {
  const std::size_t n = table.neurons.size();
  xs_.reserve(n);
  zs_.reserve(n);
  labels_.reserve(n);
  std::unordered_map<std::int64_t, int> index;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = table.neurons[i];
    xs_.push_back(rec.position.x);
    zs_.push_back(rec.position.z);
    labels_.push_back(static_cast<int>(rec.nt_label));
    index.emplace(rec.id, static_cast<int>(i));
  }
  out_edges_.resize(n);
  for (const auto& [pre, post] : table.edges) {
    const auto a = index.find(pre);
    const auto b = index.find(post);
    if (a == index.end() || b == index.end()) throw DanglingEdge("edge references unknown neuron");
    if (a->second != b->second) out_edges_[a->second].push_back(b->second);
  }
  if (n > 0) {
    const auto [mnx, mxx] = std::minmax_element(xs_.begin(), xs_.end());
    const auto [mnz, mxz] = std::minmax_element(zs_.begin(), zs_.end());
    min_x_ = *mnx;
    max_x_ = *mxx;
    min_z_ = *mnz;
    max_z_ = *mxz;
  }
  diagonal_ = std::hypot(max_x_ - min_x_, max_z_ - min_z_);
}

int CylinderSampler::count_within(double cx, double cz, double radius) const {
  const double r2 = radius * radius;
  int count = 0;
  for (std::size_t i = 0; i < xs_.size(); ++i) {
    const double dx = xs_[i] - cx;
    const double dz = zs_[i] - cz;
    if (dx * dx + dz * dz <= r2) ++count;
  }
  return count;
}

std::optional<SubgraphSample> CylinderSampler::try_center(double cx, double cz) const {
  const std::size_t n = xs_.size();
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs_[i] - cx;
    const double dz = zs_[i] - cz;
    d2[i] = dx * dx + dz * dz;
  }
  std::vector<double> sorted = d2;
  std::sort(sorted.begin(), sorted.end());
  const auto count = [&](double r) {
    return static_cast<int>(std::upper_bound(sorted.begin(), sorted.end(), r * r) - sorted.begin());
  };
  const auto admissible = [&](int c) { return c >= config_.min_neurons && c <= config_.max_neurons; };

  // The full diagonal encloses every neuron, so it is checked first; the
  // bisection then shrinks the radius until the count becomes admissible.
  double lo = 0.0;
  double hi = diagonal_;
  std::optional<double> radius;
  if (admissible(count(hi))) {
    radius = hi;
  } else if (count(hi) > config_.max_neurons) {
    const double tol = config_.relative_tolerance * diagonal_;
    for (int it = 0; it < config_.max_iterations && hi - lo >= tol; ++it) {
      const double mid = 0.5 * (lo + hi);
      const int c = count(mid);
      if (admissible(c)) {
        radius = mid;
        break;
      }
      if (c < config_.min_neurons) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
  }
  if (!radius) return std::nullopt;

  const double r2 = *radius * *radius;
  std::vector<int> local(n, -1);
  std::vector<int> members;
  for (std::size_t i = 0; i < n; ++i) {
    if (d2[i] <= r2) {
      local[i] = static_cast<int>(members.size());
      members.push_back(static_cast<int>(i));
    }
  }
  std::vector<int> labels;
  labels.reserve(members.size());
  std::vector<std::pair<int, int>> edges;
  for (std::size_t a = 0; a < members.size(); ++a) {
    labels.push_back(labels_[members[a]]);
    for (int target : out_edges_[members[a]]) {
      if (local[target] >= 0) edges.emplace_back(static_cast<int>(a), local[target]);
    }
  }
  SubgraphSample s = pad_subgraph(labels, edges);
  s.origin = CylinderOrigin{cx, cz, *radius};
  return s;
}

SubgraphSample CylinderSampler::sample_at(double center_x, double center_z) const {
  auto s = try_center(center_x, center_z);
  if (!s) {
    std::ostringstream os;
    os << "no radius encloses " << config_.min_neurons << ".." << config_.max_neurons
       << " neurons around (" << center_x << ", " << center_z << ")";
    throw UnsatisfiableCenter(os.str());
  }
  return std::move(*s);
}

SubgraphSample CylinderSampler::draw(std::mt19937_64& rng) const {
  if (xs_.empty()) throw ExhaustedRetries("connectome table is empty");
  if (static_cast<int>(xs_.size()) < config_.min_neurons) {
    throw ExhaustedRetries("table holds " + std::to_string(xs_.size()) +
                           " neurons, fewer than the minimum sample size " +
                           std::to_string(config_.min_neurons));
  }
  std::uniform_real_distribution<double> ux(min_x_, max_x_);
  std::uniform_real_distribution<double> uz(min_z_, max_z_);
  for (int attempt = 0; attempt < config_.retry_budget; ++attempt) {
    const double cx = ux(rng);
    const double cz = uz(rng);
    if (auto s = try_center(cx, cz)) return std::move(*s);
  }
  throw ExhaustedRetries("no admissible cylinder after " + std::to_string(config_.retry_budget) +
                         " centres; the table is too sparse or clumped");
}

SubgraphSample sample_cylinder(const ConnectomeTable& table, std::mt19937_64& rng,
                               const SamplingConfig& config) {
  return CylinderSampler(table, config).draw(rng);
}

SplitSizes split_sizes(std::size_t n_samples) {
  const auto tenth = static_cast<std::size_t>(std::llround(static_cast<double>(n_samples) / 10.0));
  const std::size_t held = std::min(n_samples, 2 * tenth);
  return {n_samples - held, held / 2, held - held / 2};
}

Dataset build_dataset(const ConnectomeTable& table, std::size_t n_samples, std::uint64_t seed,
                      const SamplingConfig& config) {
  const CylinderSampler sampler(table, config);
  std::vector<SubgraphSample> samples;
  samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    samples.push_back(sampler.draw(rng));
  }
  std::mt19937_64 shuffle_rng(derive_seed(seed, 0xda7a5e7ULL));
  std::shuffle(samples.begin(), samples.end(), shuffle_rng);

  const SplitSizes sizes = split_sizes(n_samples);
  Dataset ds;
  ds.split_seed = seed;
  auto it = std::make_move_iterator(samples.begin());
  ds.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes.train));
  it += static_cast<std::ptrdiff_t>(sizes.train);
  ds.test.assign(it, it + static_cast<std::ptrdiff_t>(sizes.test));
  it += static_cast<std::ptrdiff_t>(sizes.test);
  ds.validation.assign(it, it + static_cast<std::ptrdiff_t>(sizes.validation));
  return ds;
}

// ---------------------------------------------------------------------------

nlohmann::json sample_to_json(const SubgraphSample& sample) {
  nlohmann::json j;
  j["labels"] = sample.labels;
  std::vector<std::string> rows;
  const int n = sample.adjacency.size();
  rows.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::string row(static_cast<std::size_t>(n), '0');
    for (int c = 0; c < n; ++c)
      if (sample.adjacency(i, c)) row[static_cast<std::size_t>(c)] = '1';
    rows.push_back(std::move(row));
  }
  j["adjacency_rows"] = std::move(rows);
  if (sample.origin) {
    j["origin"] = {{"center_x", sample.origin->center_x},
                   {"center_z", sample.origin->center_z},
                   {"radius", sample.origin->radius}};
  } else {
    j["origin"] = nlohmann::json::object();
  }
  return j;
}

SubgraphSample sample_from_json(const nlohmann::json& j) {
  SubgraphSample s;
  s.labels = j.at("labels").get<std::vector<int>>();
  const auto rows = j.at("adjacency_rows").get<std::vector<std::string>>();
  const int n = static_cast<int>(rows.size());
  if (n != static_cast<int>(s.labels.size())) {
    throw MalformedRow("sample has " + std::to_string(s.labels.size()) + " labels but " +
                       std::to_string(n) + " adjacency rows");
  }
  s.adjacency = Adjacency(n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != n) throw MalformedRow("adjacency row has wrong length");
    for (int c = 0; c < n; ++c) {
      const char ch = rows[i][static_cast<std::size_t>(c)];
      if (ch != '0' && ch != '1') throw MalformedRow("adjacency rows must contain only 0/1");
      if (ch == '1') s.adjacency.set(i, c);
    }
  }
  if (j.contains("origin") && j["origin"].contains("radius")) {
    const auto& o = j["origin"];
    s.origin = CylinderOrigin{o.at("center_x").get<double>(), o.at("center_z").get<double>(),
                              o.at("radius").get<double>()};
  }
  return s;
}

void save_split(const std::vector<SubgraphSample>& samples, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : samples) arr.push_back(sample_to_json(s));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << arr.dump(1) << '\n';
}

std::vector<SubgraphSample> load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset split " + path.string());
  const nlohmann::json arr = nlohmann::json::parse(in);
  std::vector<SubgraphSample> out;
  out.reserve(arr.size());
  for (const auto& j : arr) out.push_back(sample_from_json(j));
  return out;
}

}  // namespace ccodec
