#include "rapt/metrics.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace rapt {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: single-class input");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks for ties, then Mann-Whitney U.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

TprResult tpr_at_episodic_fpr(const std::vector<double>& nominal_scores,
                              const std::vector<double>& anomalous_scores, double fpr_budget) {
  if (nominal_scores.empty()) {
    throw std::invalid_argument("tpr_at_episodic_fpr: empty nominal set");
  }
  std::vector<double> sorted = nominal_scores;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();
  const std::size_t allowed = static_cast<std::size_t>(
      fpr_budget * static_cast<double>(n) + 1e-12);
  // Smallest threshold with #{nominal > thr} <= allowed is the (allowed+1)-th
  // largest nominal score; if every nominal may exceed, anything flags.
  double threshold;
  if (allowed >= n) {
    threshold = -std::numeric_limits<double>::infinity();
  } else {
    threshold = sorted[allowed];
  }
  std::size_t hits = 0;
  for (double s : anomalous_scores) {
    if (s > threshold) ++hits;
  }
  const double tpr = anomalous_scores.empty()
                         ? 0.0
                         : static_cast<double>(hits) / static_cast<double>(anomalous_scores.size());
  return {tpr, threshold};
}

}  // namespace rapt
