#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rapt/model.hpp"
#include "rapt/trajectory.hpp"

namespace rapt {

struct GateConfig {
  double k_local = 5.0;
  double k_global = 3.0;
  double delta = 0.05;          // range-gate margin fraction
  std::size_t warmup_steps = 10;  // learned gates suppressed while settling
};

/// Deployment-time contract produced by calibrate(); all vectors are d_obs
/// wide. Box bounds are raw (unnormalized) and unexpanded; the delta margin
/// is applied at evaluation time.
struct CalibrationProfile {
  std::vector<double> tau_max;  // per-dimension max NLL over calibration
  std::vector<double> sigma;    // per-dimension population std of NLL
  double tau_global = 0.0;
  double sigma_global = 0.0;
  double k_local = 5.0;
  double k_global = 3.0;
  std::vector<double> box_min;
  std::vector<double> box_max;
  double delta = 0.05;
  std::size_t calibration_steps = 0;
  std::size_t warmup_steps = 10;
  std::size_t d_obs = 0;
  std::string objective = "reconstruction";

  /// Effective one-sided expansion of the raw box on dimension i; degenerate
  /// (constant) dimensions get an absolute floor.
  double box_expansion(std::size_t i) const;
  void validate() const;
};

/// Per-dimension threshold statistics over a scored calibration stream.
struct ThresholdStats {
  std::vector<double> tau_max;
  std::vector<double> sigma;
  double tau_global = 0.0;
  double sigma_global = 0.0;
};

ThresholdStats compute_threshold_stats(const std::vector<std::vector<double>>& nll_steps);

struct GateHit {
  bool fired = false;
  std::ptrdiff_t dim = -1;     // argmax dimension (gate 1)
  double margin = 0.0;         // raw margin at the argmax dimension
  double norm_margin = 0.0;    // margin / (k*sigma + eps)
};

struct RangeHit {
  bool fired = false;
  std::vector<std::size_t> dims;  // violated dimensions
  double norm_margin = 0.0;       // worst violation / expansion
  bool sentinel = false;          // non-finite observation
};

struct AnomalyVerdict {
  std::size_t t = 0;
  GateHit gate1;
  GateHit gate2;
  RangeHit gate3;
  bool anomaly = false;
  bool warmup = false;  // learned gates suppressed at this step
  std::vector<double> nll_per_dim;
  double nll_mean = 0.0;
  double latency_micros = 0.0;
};

/// Pure gate evaluation; `suppress_learned` disables gates 1-2 (warm-up).
void evaluate_gates(const CalibrationProfile& profile, const double* nll, double nll_mean,
                    bool have_nll, const double* raw_obs, bool obs_finite, bool suppress_learned,
                    AnomalyVerdict& out);

/// Per-stream mutable state; hidden is zero-initialized at stream start.
struct StreamState {
  std::vector<float> hidden;
  std::size_t step = 0;
  bool has_prediction = false;      // dynamics objective: pending prediction
  std::vector<float> pred_mu;
  std::vector<float> pred_logvar;
  FlatNet<float>::Scratch scratch;
  std::vector<float> input_buf, mu_buf, logvar_buf, target_buf, nll_buf;
  std::vector<double> sanitized_obs;
};

struct EpisodeVerdict {
  bool flagged = false;
  std::ptrdiff_t first_detection = -1;
  // Continuous episode scores: max over steps of the normalized gate margins.
  double hybrid_score = 0.0;
  double model_score = 0.0;   // gates 1-2 only
  double gate1_score = 0.0;   // max aggregation
  double gate2_score = 0.0;   // mean aggregation
  double gate3_score = 0.0;   // range only
  std::vector<AnomalyVerdict> steps;
};

/// Deployment engine: f32 forward-only scoring plus the three gates.
class Detector {
 public:
  explicit Detector(const RaptModel& model);

  StreamState make_stream() const;

  /// Scores one observation, evaluates the gates and advances the hidden
  /// state exactly once. Non-finite observations fire the range gate with a
  /// sentinel record and are sanitized before reaching the network.
  AnomalyVerdict detect(const CalibrationProfile& profile, StreamState& state,
                        std::span<const double> obs, std::span<const double> act = {}) const;

  EpisodeVerdict detect_episode(const CalibrationProfile& profile,
                                const TrajectoryLog& log) const;

  /// Raw NLL stream for a whole log (same stepping as detect); row t carries
  /// the per-dimension NLL scored at step t (empty at steps with no
  /// prediction yet under the dynamics objective).
  std::vector<std::vector<double>> score(const TrajectoryLog& log) const;

  CalibrationProfile calibrate(const TrajectoryLog& nominal_run,
                               const GateConfig& gc = {}) const;

  std::size_t d_obs() const { return net_.d_obs; }
  Objective objective() const { return objective_; }

 private:
  FlatNet<float> net_;
  Objective objective_;
  std::vector<double> train_obs_min_, train_obs_max_;
};

}  // namespace rapt
