#pragma once

// Shapley attribution of latent dimensions, the binned per-dimension
// contribution table consumed by the dynamic program, and one-dimensional
// latent sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ccodec/surrogate.hpp"
#include "ccodec/vae_model.hpp"

namespace ccodec {

// Evaluates a model at every row of `z` (B x d); returns B x K outputs.
using BatchFunction = std::function<Matrix(const Matrix& z)>;

enum class ShapMode { kAuto, kExact, kSampled };

struct ShapOptions {
  ShapMode mode = ShapMode::kAuto;  // auto: exact when d <= kExactShapMaxDim
  int n_permutations = 256;         // rounded up to even (antithetic pairs)
  std::uint64_t seed = 0;
};
inline constexpr int kExactShapMaxDim = 10;

struct ShapMatrix {
  Matrix phi;          // n_samples x d
  Vector fx;           // model output per sample
  double base_value = 0.0;  // mean model output over the background

  // max over samples of |sum_j phi_j - (f(x) - base)|
  [[nodiscard]] double max_efficiency_gap() const;
};

// One ShapMatrix per model output column. Raises ShapeMismatch when the
// background is empty or dimensions disagree.
std::vector<ShapMatrix> shap_values(const BatchFunction& g, const Matrix& samples, const Matrix& background,
                                    const ShapOptions& options = {});

// z -> decode -> the four surrogates, columns ordered as kFeatures.
BatchFunction surrogate_composite(const VaeModel& model, const SurrogateSet& surrogates);

struct ShapTable {
  int bins = 11;
  int min_count = 1;
  double base_value = 0.0;
  Vector sigma;             // per-dimension standard deviation of z
  Matrix value;             // d x bins, mean phi per cell (0 where empty)
  Eigen::MatrixXi counts;   // d x bins

  [[nodiscard]] int dims() const { return static_cast<int>(sigma.size()); }
  [[nodiscard]] bool populated(int dim, int bin) const { return counts(dim, bin) >= min_count; }
  // Equal-width bins over [-sigma_i, sigma_i]; values outside fall in the end bins.
  [[nodiscard]] int bin_of(int dim, double z) const;
  [[nodiscard]] double bin_center(int dim, int bin) const;
};

// Raises EmptyTable when no cell reaches `min_count`, ShapeMismatch on
// misaligned inputs.
ShapTable build_shap_table(const ShapMatrix& shap, const Matrix& z_samples, int bins = 11, int min_count = 1);

void to_json(nlohmann::json& j, const ShapTable& t);
void from_json(const nlohmann::json& j, ShapTable& t);

// Rows (sample_id, dim, z_value, phi).
void write_shap_csv(const ShapMatrix& shap, const Matrix& z_samples, const std::filesystem::path& path);

struct SweepPoint {
  double z = 0.0;
  std::optional<double> value;  // nullopt where the statistic is undefined
};

// z = 0 except z[dim] = grid value; decode, threshold, exact statistic.
std::vector<SweepPoint> dimension_sweep(const VaeModel& model, Feature feature, int dim,
                                        std::span<const double> grid, double kappa = 0.5);
// `points` values evenly spaced over [-3 sigma, 3 sigma].
std::vector<double> sweep_grid(double sigma, int points);
// max - min over defined values, 0 when fewer than two.
double sweep_range(const std::vector<SweepPoint>& curve);

}  // namespace ccodec
