#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rapt/rng.hpp"
#include "rapt/trajectory.hpp"

namespace rapt {

/// Synthetic multi-joint world: phase-coupled sinusoidal joint positions,
/// exact finite-difference velocities, and a linearly mixed base block. The
/// observation layout is [positions | velocities | base], 3*d_joints wide.
struct WorldConfig {
  std::size_t d_joints = 8;
  std::size_t episode_len = 500;
  double dt = 0.02;
  std::size_t n_freqs = 3;
  double freq_lo = 0.4;  // Hz
  double freq_hi = 1.1;
  double process_noise = 0.01;  // added to joint positions
  double sensor_noise = 0.01;   // added to the base block
  std::uint64_t seed = 7;

  std::size_t d_obs() const { return 3 * d_joints; }
  void validate() const;
};

enum class FaultKind {
  kSensorFreeze,
  kSensorBias,
  kNoiseBurst,
  kDropout,
  kTimeDelay,
  kGainChange,
  kDynamicsShift,
  kImpulsePush,
};

std::string to_string(FaultKind k);
FaultKind fault_kind_from_string(const std::string& s);

struct FaultSpec {
  FaultKind kind = FaultKind::kSensorFreeze;
  std::size_t onset = 0;
  std::size_t duration = 0;
  double magnitude = 1.0;
  std::vector<std::size_t> channels;

  void validate(std::size_t episode_len, std::size_t d_obs) const;
};

struct FaultResult {
  TrajectoryLog log;
  std::vector<std::uint8_t> step_labels;  // 1 within [onset, onset+duration)
};

class World {
 public:
  explicit World(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }

  /// Deterministic nominal episode for an index (any index is valid).
  TrajectoryLog episode(std::size_t index) const;

  /// Nominal episode regenerated with all base frequencies scaled by
  /// freq_scale from `onset` onward, phase-continuous, same noise draws.
  TrajectoryLog episode_shifted(std::size_t index, std::size_t onset, double freq_scale) const;

  /// Dominant base period in steps (largest-amplitude frequency).
  double dominant_period_steps() const;

 private:
  WorldConfig cfg_;
  std::vector<double> freqs_;             // Hz
  std::vector<double> amps_;              // d_joints x n_freqs
  std::vector<double> phases_;            // d_joints x n_freqs
  std::vector<double> base_mix_;          // d_joints x (2*d_joints)
  TrajectoryLog compose(std::size_t index, std::size_t shift_onset, double freq_scale) const;
};

std::vector<TrajectoryLog> generate_nominal(const WorldConfig& cfg, std::size_t n_episodes);

/// Sensor-level faults on a recorded log. DynamicsShift needs generator
/// context; use the World overload for it.
FaultResult inject_fault(const TrajectoryLog& log, const FaultSpec& spec, std::uint64_t seed);

/// All fault kinds, including physics-level regeneration.
FaultResult inject_fault(const World& world, std::size_t episode_index, const FaultSpec& spec,
                         std::uint64_t seed);

/// Channel-class template used to build concrete fault specs per episode.
struct FaultTemplate {
  FaultKind kind = FaultKind::kSensorFreeze;
  double magnitude = 1.0;
  std::size_t duration = 100;
  enum class ChannelClass { kPos, kVel, kBase, kAny } channel_class = ChannelClass::kAny;
  std::size_t n_channels = 1;
};

/// One representative template per fault kind, spanning sensor, physics and
/// software/communication classes.
std::vector<FaultTemplate> default_fault_suite();

FaultSpec instantiate_fault(const FaultTemplate& tmpl, const WorldConfig& cfg, Rng& rng);

struct MethodMetrics {
  bool defined = false;    // false when there were no faulted episodes
  double auroc = 0.0;
  double tpr = 0.0;        // at the episodic FPR budget
  double threshold = 0.0;  // swept threshold achieving the budget
};

struct EvalReport {
  double fpr_budget = 0.005;
  std::map<std::string, MethodMetrics> methods;  // hybrid / model_only / gate1_max / ...
  std::map<std::string, double> per_fault_tpr;   // hybrid, at the swept threshold
  std::map<std::string, double> per_fault_auroc;
  // Native binary-gate operating point (episode flagged iff any step fired).
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double native_fpr = 0.0;
  // First-detection delay (steps past onset) over native true positives.
  double delay_mean = 0.0;
  double delay_median = 0.0;
  std::size_t delay_count = 0;
  std::size_t n_nominal = 0;
  std::size_t n_faulted = 0;
};

}  // namespace rapt
