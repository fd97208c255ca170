#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "dcsim/errors.hpp"

namespace dcsim {

namespace detail {

inline void check_scored(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("metrics: scores and labels differ in length");
  if (scores.empty()) throw UndefinedMetric("metrics: empty input");
  for (int l : labels)
    if (l != 0 && l != 1) throw InvalidArgument("metrics: labels must be 0 or 1");
}

// Indices sorted by descending score; equal scores are adjacent.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace detail

// P(score of random positive > score of random negative), ties count 1/2.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scored(scores, labels);
  const auto idx = detail::descending_order(scores);
  double pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw UndefinedMetric("roc_auc: both classes are required");

  // Walk groups of tied scores from the top; each negative in a group beats
  // nothing above it and ties with the positives inside it.
  double wins = 0.0;
  double pos_above = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? gp : gn) += 1;
      ++j;
    }
    wins += gn * (pos_above + 0.5 * gp);
    pos_above += gp;
    i = j;
  }
  return wins / (pos * neg);
}

// Average precision: sum over distinct thresholds of
// (recall increment) x (precision at that threshold).
inline double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scored(scores, labels);
  const auto idx = detail::descending_order(scores);
  double pos = 0;
  for (int l : labels) pos += l;
  if (pos == 0) throw UndefinedMetric("pr_auc: no positive labels");

  double tp = 0, seen = 0, ap = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double gp = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      gp += labels[idx[j]];
      ++j;
    }
    seen += static_cast<double>(j - i);
    tp += gp;
    if (gp > 0) ap += (gp / pos) * (tp / seen);
    i = j;
  }
  return ap;
}

struct MeanStderr {
  double mean = 0.0;
  double std_error = 0.0;
};

// Standard error uses the n-1 sample standard deviation; 0 for one value.
inline MeanStderr mean_stderr(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean_stderr: no values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

}  // namespace dcsim
