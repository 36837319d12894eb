#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rapt/model.hpp"
#include "rapt/tensor.hpp"
#include "rapt/trajectory.hpp"

namespace rapt {

/// Spatio-temporal attribution of the final-step NLL over an H-step window.
struct SaliencyMap {
  std::size_t window_start = 0;  // absolute index of the first window step
  std::size_t window_end = 0;    // absolute index one past the last step
  std::size_t h = 0;             // window length
  std::size_t d_obs = 0;
  std::vector<double> attributions;  // h x d_obs, row-major, signed
  std::vector<std::pair<std::size_t, double>> top_k;  // (dimension, aggregate)
  double completeness_gap = 0.0;
  std::string baseline_kind;
  double f_input = 0.0;     // objective at the input trajectory
  double f_baseline = 0.0;  // objective at the baseline trajectory

  double at(std::size_t t, std::size_t i) const { return attributions[t * d_obs + i]; }
};

/// Objective evaluated along the integration path: returns F(X) and, when
/// grad_out is non-null, fills dF/dX (same shape as X).
using PathObjective = std::function<double(const Tensor& x, Tensor* grad_out)>;

/// Reference trajectory the path integral starts from.
///  - kReconstruction: the model's own teacher-forced expectation of the
///    window from h_pre; (X - baseline) is then the residual field, which
///    concentrates attribution on the dimensions that actually deviate.
///  - kTrainMean: the all-zeros trajectory in normalized space (the nominal
///    per-dimension mean in raw space).
enum class BaselineKind { kReconstruction, kTrainMean };

std::string to_string(BaselineKind k);

struct IgOptions {
  std::size_t steps = 32;  // path sample count m
  std::size_t top_k = 5;
  BaselineKind baseline = BaselineKind::kReconstruction;
};

/// Core path integral (midpoint Riemann rule, alpha_j = (j-1/2)/m):
///   A = (X - baseline) .* (1/m) * sum_j grad F(baseline + alpha_j (X - baseline))
struct IgCoreResult {
  Tensor attributions;  // same shape as X
  double f_input = 0.0;
  double f_baseline = 0.0;
  double completeness_gap = 0.0;
};
IgCoreResult integrated_gradients(const PathObjective& objective, const Tensor& input,
                                  const Tensor& baseline, std::size_t m);

/// BPTT-IG over a raw trajectory window. F = mean final-step NLL conditioned
/// on h_pre; the baseline is the all-zeros trajectory in normalized space
/// (the nominal per-dimension mean), with the same h_pre.
SaliencyMap integrated_gradients_time(const RaptModel& model, const TrajectoryLog& window,
                                      const Tensor& h_pre, const IgOptions& opts = {},
                                      std::size_t window_start = 0);

/// Per-dimension aggregate = max |attribution| over the window; descending,
/// ties broken by lower dimension index.
std::vector<std::pair<std::size_t, double>> top_k_features(const SaliencyMap& map, std::size_t k);

/// Writes <prefix>.csv (rows = time, columns = top-K dims) and a
/// self-contained <prefix>.svg heatmap.
void emit_heatmap(const SaliencyMap& map, const std::string& path_prefix);

}  // namespace rapt
