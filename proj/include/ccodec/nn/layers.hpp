#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccodec/nn/tape.hpp"

namespace ccodec::nn {

// Fills `p` with U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform_fan_in(Parameter& p, Eigen::Index fan_in, std::mt19937_64& rng);

// Affine map x W + b applied row-wise; W is in x out, b is 1 x out.
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(std::string name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);

  [[nodiscard]] Var forward(Tape& tape, Var x);
  // Same map with the weights entering as constants.
  [[nodiscard]] Var forward(Tape& tape, Var x) const;
  // Tape-free evaluation for inference paths.
  [[nodiscard]] Matrix apply(const Matrix& x) const;

  [[nodiscard]] Eigen::Index in_features() const { return weight.value.rows(); }
  [[nodiscard]] Eigen::Index out_features() const { return weight.value.cols(); }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

Matrix leaky_relu(const Matrix& x, double slope = 0.2);
Matrix sigmoid(const Matrix& x);

void set_frozen(const std::vector<Parameter*>& params, bool frozen);
void zero_grads(const std::vector<Parameter*>& params);
std::size_t parameter_count(const std::vector<Parameter*>& params);

// Adaptive-moment first-order optimizer. Frozen parameters are skipped
// entirely: neither their values nor their moment estimates change.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params);
  void set_learning_rate(double lr) { lr_ = lr; }
  [[nodiscard]] long steps() const { return t_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::unordered_map<const Parameter*, Moments> state_;
};

}  // namespace ccodec::nn
