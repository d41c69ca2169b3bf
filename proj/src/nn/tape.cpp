#include "ccodec/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "ccodec/errors.hpp"

namespace ccodec::nn {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
     << b.cols();
  throw ShapeMismatch(os.str());
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }
const Matrix& Var::grad() const { return tape_->grad(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Parameter& p) {
  nodes_.push_back(Node{Matrix(), Matrix(), false, nullptr, &p.value});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(Parameter& p) {
  Node node{Matrix(), Matrix(), !p.frozen, nullptr, &p.value};
  if (!p.frozen) {
    Parameter* target = &p;
    node.backward = [target](Tape&, const Matrix& g, const Matrix&) {
      if (target->grad.rows() != g.rows() || target->grad.cols() != g.cols()) target->zero_grad();
      target->grad += g;
    };
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  const bool any =
      std::any_of(parents.begin(), parents.end(), [this](Var p) { return needs_grad(p); });
  Node node;
  node.value = std::move(value);
  node.requires_grad = any;
  if (any) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Matrix& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) {
    const Matrix& val = n.external ? *n.external : n.value;
    n.grad.setZero(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw ShapeMismatch("backward: root must be a scalar");
  grad_ref(root)(0, 0) += 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad, n.external ? *n.external : n.value);
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  Matrix out;
  out.noalias() = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) t.grad_ref(a).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  return a.tape()->record(a.value() + b.value(), {a, b},
                          [a, b](Tape& t, const Matrix& g, const Matrix&) {
                            if (t.needs_grad(a)) t.grad_ref(a) += g;
                            if (t.needs_grad(b)) t.grad_ref(b) += g;
                          });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  return a.tape()->record(a.value() - b.value(), {a, b},
                          [a, b](Tape& t, const Matrix& g, const Matrix&) {
                            if (t.needs_grad(a)) t.grad_ref(a) += g;
                            if (t.needs_grad(b)) t.grad_ref(b) -= g;
                          });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [a, b](Tape& t, const Matrix& g, const Matrix&) {
                            if (t.needs_grad(a)) t.grad_ref(a) += g.cwiseProduct(t.value(b));
                            if (t.needs_grad(b)) t.grad_ref(b) += g.cwiseProduct(t.value(a));
                          });
}

Var div(Var a, Var b) {
  require_same_shape("div", a.value(), b.value());
  return a.tape()->record(a.value().cwiseQuotient(b.value()), {a, b},
                          [a, b](Tape& t, const Matrix& g, const Matrix& out) {
                            if (t.needs_grad(a)) t.grad_ref(a) += g.cwiseQuotient(t.value(b));
                            if (t.needs_grad(b))
                              t.grad_ref(b) -= g.cwiseProduct(out).cwiseQuotient(t.value(b));
                          });
}

Var scale(Var a, double c) {
  return a.tape()->record(a.value() * c, {a}, [a, c](Tape& t, const Matrix& g, const Matrix&) {
    t.grad_ref(a) += c * g;
  });
}

Var add_scalar(Var a, double c) {
  return a.tape()->record(a.value().array() + c, {a},
                          [a](Tape& t, const Matrix& g, const Matrix&) { t.grad_ref(a) += g; });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.value(), row.value());
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->record(std::move(out), {a, row},
                          [a, row](Tape& t, const Matrix& g, const Matrix&) {
                            if (t.needs_grad(a)) t.grad_ref(a) += g;
                            if (t.needs_grad(row)) t.grad_ref(row) += g.colwise().sum();
                          });
}

Var transpose(Var a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [a](Tape& t, const Matrix& g, const Matrix&) {
                            t.grad_ref(a) += g.transpose();
                          });
}

Var transpose_blocks(Var a) {
  const Eigen::Index n = a.cols();
  if (n == 0 || a.rows() % n != 0) throw ShapeMismatch("transpose_blocks: rows are not a multiple of cols");
  const Eigen::Index blocks = a.rows() / n;
  Matrix out(a.rows(), n);
  for (Eigen::Index b = 0; b < blocks; ++b) out.middleRows(b * n, n) = a.value().middleRows(b * n, n).transpose();
  return a.tape()->record(std::move(out), {a}, [a, n, blocks](Tape& t, const Matrix& g, const Matrix&) {
    Matrix& ga = t.grad_ref(a);
    for (Eigen::Index b = 0; b < blocks; ++b) ga.middleRows(b * n, n) += g.middleRows(b * n, n).transpose();
  });
}

Var leaky_relu(Var a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return a.tape()->record(std::move(out), {a}, [a, slope](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& x = t.value(a);
    t.grad_ref(a) += g.binaryExpr(x, [slope](double gv, double xv) {
      return xv > 0.0 ? gv : slope * gv;
    });
  });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& s) {
    t.grad_ref(a) += g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
  });
}

Var exp(Var a) {
  return a.tape()->record(a.value().array().exp().matrix(), {a},
                          [a](Tape& t, const Matrix& g, const Matrix& out) {
                            t.grad_ref(a) += g.cwiseProduct(out);
                          });
}

// ---------------------------------------------------------------------------

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& v = a.value();
  if (rows * cols != v.size()) {
    throw ShapeMismatch("reshape: element count changes");
  }
  Matrix out = Eigen::Map<const Matrix>(v.data(), rows, cols);
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    Matrix& ga = t.grad_ref(a);
    ga += Eigen::Map<const Matrix>(g.data(), ga.rows(), ga.cols());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> captured(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts,
                                 [captured](Tape& t, const Matrix& g, const Matrix&) {
                                   Eigen::Index c = 0;
                                   for (const Var& p : captured) {
                                     const Eigen::Index w = t.value(p).cols();
                                     if (t.needs_grad(p)) t.grad_ref(p) += g.middleCols(c, w);
                                     c += w;
                                   }
                                 });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> captured(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts,
                                 [captured](Tape& t, const Matrix& g, const Matrix&) {
                                   Eigen::Index r = 0;
                                   for (const Var& p : captured) {
                                     const Eigen::Index h = t.value(p).rows();
                                     if (t.needs_grad(p)) t.grad_ref(p) += g.middleRows(r, h);
                                     r += h;
                                   }
                                 });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeMismatch("slice_cols: range out of bounds");
  }
  return a.tape()->record(a.value().middleCols(start, count), {a},
                          [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
                            t.grad_ref(a).middleCols(start, count) += g;
                          });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeMismatch("slice_rows: range out of bounds");
  }
  return a.tape()->record(a.value().middleRows(start, count), {a},
                          [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
                            t.grad_ref(a).middleRows(start, count) += g;
                          });
}

// ---------------------------------------------------------------------------

Var sum(Var a) {
  return a.tape()->record(scalar_matrix(a.value().sum()), {a},
                          [a](Tape& t, const Matrix& g, const Matrix&) {
                            t.grad_ref(a).array() += g(0, 0);
                          });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape()->record(scalar_matrix(a.value().sum() / n), {a},
                          [a, n](Tape& t, const Matrix& g, const Matrix&) {
                            t.grad_ref(a).array() += g(0, 0) / n;
                          });
}

Var row_sum(Var a) {
  return a.tape()->record(a.value().rowwise().sum(), {a},
                          [a](Tape& t, const Matrix& g, const Matrix&) {
                            Matrix& ga = t.grad_ref(a);
                            ga.colwise() += g.col(0);
                          });
}

// ---------------------------------------------------------------------------

Var graph_attention(Var wh, Var src, Var dst, std::span<const Matrix> masks, double slope,
                    std::vector<Matrix>* attention_out) {
  if (masks.empty()) throw ShapeMismatch("graph_attention: no graphs");
  const Matrix& features = wh.value();
  const Eigen::Index n = masks[0].rows();
  const Eigen::Index f = features.cols();
  const auto graphs = static_cast<Eigen::Index>(masks.size());
  if (features.rows() != graphs * n) {
    throw ShapeMismatch("graph_attention: feature rows do not match graphs x nodes");
  }
  if (src.rows() != 1 || src.cols() != f || dst.rows() != 1 || dst.cols() != f) {
    throw ShapeMismatch("graph_attention: attention vector width differs from feature width");
  }

  const Vector s = features * src.value().row(0).transpose();
  const Vector d = features * dst.value().row(0).transpose();

  // Per-graph attention matrices and pre-activation logits, kept for backward.
  auto alphas = std::make_shared<std::vector<Matrix>>(masks.size());
  auto logits = std::make_shared<std::vector<Matrix>>(masks.size());
  Matrix out(graphs * n, f);

  for (Eigen::Index g = 0; g < graphs; ++g) {
    const Matrix& mask = masks[g];
    if (mask.rows() != n || mask.cols() != n) shape_error("graph_attention mask", mask, masks[0]);
    Matrix pre(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) pre(i, j) = s(g * n + i) + d(g * n + j);
    }
    Matrix alpha = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (mask(i, j) == 0.0) continue;
        const double e = pre(i, j) > 0.0 ? pre(i, j) : slope * pre(i, j);
        alpha(i, j) = e;
        row_max = std::max(row_max, e);
      }
      if (!std::isfinite(row_max)) continue;  // empty neighbourhood: zero output row
      double total = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (mask(i, j) == 0.0) continue;
        alpha(i, j) = std::exp(alpha(i, j) - row_max);
        total += alpha(i, j);
      }
      alpha.row(i) /= total;
    }
    out.middleRows(g * n, n).noalias() = alpha * features.middleRows(g * n, n);
    (*logits)[g] = std::move(pre);
    (*alphas)[g] = std::move(alpha);
  }
  if (attention_out) *attention_out = *alphas;

  return wh.tape()->record(
      std::move(out), {wh, src, dst},
      [wh, src, dst, alphas, logits, n, slope](Tape& t, const Matrix& grad, const Matrix&) {
        const Matrix& features = t.value(wh);
        const auto graphs = static_cast<Eigen::Index>(alphas->size());
        const bool need_wh = t.needs_grad(wh);
        const bool need_src = t.needs_grad(src);
        const bool need_dst = t.needs_grad(dst);
        for (Eigen::Index g = 0; g < graphs; ++g) {
          const Matrix& alpha = (*alphas)[g];
          const Matrix& pre = (*logits)[g];
          const auto gout = grad.middleRows(g * n, n);
          const auto fg = features.middleRows(g * n, n);
          if (need_wh) t.grad_ref(wh).middleRows(g * n, n).noalias() += alpha.transpose() * gout;
          if (!need_wh && !need_src && !need_dst) continue;

          Matrix dalpha;
          dalpha.noalias() = gout * fg.transpose();
          // softmax backward, then LeakyReLU backward
          const Vector inner = alpha.cwiseProduct(dalpha).rowwise().sum();
          Matrix dpre(n, n);
          for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
              const double de = alpha(i, j) * (dalpha(i, j) - inner(i));
              dpre(i, j) = pre(i, j) > 0.0 ? de : slope * de;
            }
          }
          const Vector ds = dpre.rowwise().sum();
          const Vector dd = dpre.colwise().sum().transpose();
          if (need_wh) {
            auto gw = t.grad_ref(wh).middleRows(g * n, n);
            gw.noalias() += ds * t.value(src);
            gw.noalias() += dd * t.value(dst);
          }
          if (need_src) t.grad_ref(src).noalias() += ds.transpose() * fg;
          if (need_dst) t.grad_ref(dst).noalias() += dd.transpose() * fg;
        }
      });
}

// ---------------------------------------------------------------------------

Var bce_with_logits(Var logits, const Matrix& target) {
  const Matrix& x = logits.value();
  require_same_shape("bce_with_logits", x, target);
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xv = x.data()[i];
    const double yv = target.data()[i];
    total += std::max(xv, 0.0) - xv * yv + std::log1p(std::exp(-std::abs(xv)));
  }
  return logits.tape()->record(
      scalar_matrix(total / n), {logits}, [logits, target, n](Tape& t, const Matrix& g, const Matrix&) {
        const Matrix& x = t.value(logits);
        const Matrix sig = x.unaryExpr([](double v) {
          return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
        t.grad_ref(logits) += (g(0, 0) / n) * (sig - target);
      });
}

Var mse(Var pred, const Matrix& target) {
  require_same_shape("mse", pred.value(), target);
  const double n = static_cast<double>(target.size());
  Matrix diff = pred.value() - target;
  const double loss = diff.squaredNorm() / n;
  return pred.tape()->record(scalar_matrix(loss), {pred},
                             [pred, diff = std::move(diff), n](Tape& t, const Matrix& g, const Matrix&) {
                               t.grad_ref(pred) += (2.0 * g(0, 0) / n) * diff;
                             });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) {
    throw ShapeMismatch("softmax_cross_entropy: label count differs from rows");
  }
  const double rows = static_cast<double>(x.rows());
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= x.cols()) throw ShapeMismatch("softmax_cross_entropy: label out of range");
    const double m = x.row(i).maxCoeff();
    const auto shifted = (x.row(i).array() - m).exp();
    const double z = shifted.sum();
    probs.row(i) = shifted / z;
    total += std::log(z) + m - x(i, label);
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return logits.tape()->record(
      scalar_matrix(total / rows), {logits},
      [logits, probs = std::move(probs), owned = std::move(owned), rows](Tape& t, const Matrix& g,
                                                                        const Matrix&) {
        Matrix d = probs;
        for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, owned[i]) -= 1.0;
        t.grad_ref(logits) += (g(0, 0) / rows) * d;
      });
}

Var kl_standard_normal(Var mu, Var logvar) {
  require_same_shape("kl_standard_normal", mu.value(), logvar.value());
  const Matrix& m = mu.value();
  const Matrix& lv = logvar.value();
  const double rows = static_cast<double>(m.rows());
  const double total =
      0.5 * (m.array().square() + lv.array().exp() - 1.0 - lv.array()).sum() / rows;
  return mu.tape()->record(scalar_matrix(total), {mu, logvar},
                           [mu, logvar, rows](Tape& t, const Matrix& g, const Matrix&) {
                             const double c = g(0, 0) / rows;
                             if (t.needs_grad(mu)) t.grad_ref(mu) += c * t.value(mu);
                             if (t.needs_grad(logvar)) {
                               t.grad_ref(logvar).array() +=
                                   0.5 * c * (t.value(logvar).array().exp() - 1.0);
                             }
                           });
}

}  // namespace ccodec::nn
