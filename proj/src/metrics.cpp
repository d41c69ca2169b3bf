#include "ccodec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccodec/errors.hpp"

namespace ccodec {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeMismatch("roc_auc: length mismatch");
  const auto ranks = average_ranks(scores);
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeMismatch("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double macro_f1(std::span<const int> predicted, std::span<const int> truth, int n_classes) {
  if (predicted.size() != truth.size()) throw ShapeMismatch("macro_f1: length mismatch");
  std::vector<double> tp(n_classes, 0.0), fp(n_classes, 0.0), fn(n_classes, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] == truth[i]) {
      tp[truth[i]] += 1.0;
    } else {
      fp[predicted[i]] += 1.0;
      fn[truth[i]] += 1.0;
    }
  }
  // Every class counts; an absent class scores 0.
  double total = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    total += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return n_classes > 0 ? total / n_classes : 0.0;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeMismatch("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

}  // namespace ccodec
