#include "ccodec/nn/layers.hpp"

#include <cmath>

namespace ccodec::nn {

void init_uniform_fan_in(Parameter& p, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
  p.zero_grad();
}

Linear::Linear(std::string name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
  weight.name = name + ".weight";
  weight.value.resize(in, out);
  bias.name = name + ".bias";
  bias.value.resize(1, out);
  init_uniform_fan_in(weight, in, rng);
  init_uniform_fan_in(bias, in, rng);
}

Var Linear::forward(Tape& tape, Var x) {
  return add_row(matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

Var Linear::forward(Tape& tape, Var x) const {
  return add_row(matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

Matrix Linear::apply(const Matrix& x) const {
  Matrix out;
  out.noalias() = x * weight.value;
  out.rowwise() += bias.value.row(0);
  return out;
}

Matrix leaky_relu(const Matrix& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
}

void set_frozen(const std::vector<Parameter*>& params, bool frozen) {
  for (Parameter* p : params) p->frozen = frozen;
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

std::size_t parameter_count(const std::vector<Parameter*>& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Adam::step(const std::vector<Parameter*>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (p->frozen) continue;
    if (p->grad.size() != p->value.size()) continue;  // never received a gradient
    auto [it, inserted] = state_.try_emplace(p);
    Moments& s = it->second;
    if (inserted) {
      s.m.setZero(p->value.rows(), p->value.cols());
      s.v.setZero(p->value.rows(), p->value.cols());
    }
    s.m = beta1_ * s.m + (1.0 - beta1_) * p->grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * p->grad.cwiseAbs2();
    p->value.array() -=
        lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  }
}

}  // namespace ccodec::nn
