#pragma once

#include <cstddef>
#include <vector>

namespace rapt {

/// Probability that a random positive outscores a random negative; ties count
/// 0.5. Rank-statistic implementation. Throws if either class is absent.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct TprResult {
  double tpr = 0.0;
  double threshold = 0.0;
};

/// threshold = smallest value such that the fraction of nominal scores
/// strictly above it is <= fpr_budget; tpr = fraction of anomalous scores
/// strictly above that threshold.
TprResult tpr_at_episodic_fpr(const std::vector<double>& nominal_scores,
                              const std::vector<double>& anomalous_scores,
                              double fpr_budget = 0.005);

}  // namespace rapt
