#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; backward()
// replays the recorded closures in reverse order. Gradients flow only into
// leaves that request them (unfrozen parameters and `input` leaves).

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ccodec::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// A named trainable tensor. `grad` accumulates across backward passes until
// the optimizer consumes it.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool frozen = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] const Matrix& value() const;
  // Gradient of the last backward() root w.r.t. this node. Zero-sized when
  // no gradient reached it.
  [[nodiscard]] const Matrix& grad() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the gradient and the value of the node being differentiated.
  using Backward = std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf with no gradient.
  Var constant(Matrix value);
  // Leaf whose gradient is kept (read it back with Var::grad()).
  Var input(Matrix value);
  // Leaf bound to a parameter; gradients accumulate into `p.grad` unless the
  // parameter is frozen.
  Var parameter(Parameter& p);
  // Read-only view of a parameter: a constant leaf, never accumulates.
  Var parameter(const Parameter& p);

  // Records an op node. `backward` is dropped when no parent needs gradients.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

  // Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(Var root);

  [[nodiscard]] const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.external ? *n.external : n.value;
  }
  [[nodiscard]] bool needs_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Accumulator for a node's gradient, zero-initialised on first access.
  Matrix& grad_ref(Var v);
  [[nodiscard]] const Matrix& grad(Var v) const { return nodes_[v.id()].grad; }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    // Parameters are referenced rather than copied; they must outlive the tape.
    const Matrix* external = nullptr;
  };
  std::deque<Node> nodes_;
};

// ---- elementwise / linear algebra ----------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var div(Var a, Var b);  // elementwise a / b
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// Adds a 1 x C row vector to every row of a.
Var add_row(Var a, Var row);
Var transpose(Var a);
// Transposes each consecutive square block of a (B*N) x N stack.
Var transpose_blocks(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// ---- shape ---------------------------------------------------------------

// Row-major reinterpretation; rows*cols must be preserved.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);

// ---- reductions ----------------------------------------------------------

Var sum(Var a);
Var mean(Var a);
// Per-row sums, shape R x 1.
Var row_sum(Var a);

// ---- graph attention -----------------------------------------------------

// Single-head graph attention over a stack of graphs sharing node count N.
// `wh` holds the projected features W h for all graphs stacked row-wise
// ((G*N) x F). For graph g, node i attends over j with mask(g)(i, j) != 0:
//   e_ij = LeakyReLU(src . wh_i + dst . wh_j, slope)
//   alpha_i = softmax_j(e_ij) restricted to the mask
//   out_i = sum_j alpha_ij wh_j
// `src` and `dst` are the two halves of the attention vector (1 x F each).
// The optional `attention_out` receives the alpha matrices for inspection.
Var graph_attention(Var wh, Var src, Var dst, std::span<const Matrix> masks, double slope = 0.2,
                    std::vector<Matrix>* attention_out = nullptr);

// ---- losses (all return 1x1) ----------------------------------------------

// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets,
// computed in the numerically stable logit form.
Var bce_with_logits(Var logits, const Matrix& target);
// Mean squared error over all entries.
Var mse(Var pred, const Matrix& target);
// Mean over rows of softmax cross-entropy against integer class indices.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// KL(N(mu, exp(logvar)) || N(0, I)) summed over columns, averaged over rows.
Var kl_standard_normal(Var mu, Var logvar);

}  // namespace ccodec::nn
