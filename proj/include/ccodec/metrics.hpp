#pragma once

// Scoring helpers shared by evaluation, surrogate reports and latent search.

#include <optional>
#include <span>
#include <vector>

namespace ccodec {

// Rank-based ROC AUC (ties count one half). nullopt when either class is
// absent from `labels`.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

// Fraction of positions where prediction equals truth.
double accuracy(std::span<const int> predicted, std::span<const int> truth);

// Unweighted mean of per-class F1 over all `n_classes`; a class with no true
// or predicted members scores 0.
double macro_f1(std::span<const int> predicted, std::span<const int> truth, int n_classes);

// nullopt when either input has zero variance or fewer than two points.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

// Average ranks (1-based), ties share their mean rank.
std::vector<double> average_ranks(std::span<const double> x);

}  // namespace ccodec
