#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rapt/model.hpp"
#include "rapt/rng.hpp"
#include "rapt/trajectory.hpp"

namespace rapt {

struct OneCycleConfig {
  double warmup_fraction = 0.3;
  double initial_div = 25.0;
  double final_div = 1e4;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double peak_lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t unroll = 50;  // T
  OneCycleConfig schedule;
  std::uint64_t seed = 0;
  double grad_clip_norm = 1.0;
  std::size_t windows_per_epoch = 4096;
  double holdout_fraction = 0.1;

  void validate() const;
};

struct TrainReport {
  std::vector<double> train_nll;    // per-epoch mean over optimizer steps
  std::vector<double> holdout_nll;  // per-epoch mean over held-out windows
  std::vector<double> lr_trace;     // lr at each optimizer step
  double wall_seconds = 0.0;
};

/// Cosine warmup from peak/initial_div to peak over the warmup span, then
/// cosine anneal to peak/final_div at the last step.
double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak_lr,
                    const OneCycleConfig& cfg);

/// Decoupled-weight-decay Adam; beta1=0.9, beta2=0.999, eps=1e-8.
class AdamW {
 public:
  explicit AdamW(double weight_decay) : weight_decay_(weight_decay) {}

  /// Applies one update in place using each parameter's accumulated gradient.
  void step(ParamSet& params, double lr);

  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  std::map<std::string, Moments> state_;
  double weight_decay_;
  std::size_t t_ = 0;
};

struct Window {
  std::size_t trajectory = 0;
  std::size_t start = 0;
};

/// Uniformly random contiguous windows, resampled each epoch, never crossing
/// trajectory boundaries. Deterministic given seed.
class WindowSampler {
 public:
  WindowSampler(const std::vector<TrajectoryLog>& dataset, std::size_t window_len,
                std::uint64_t seed);

  /// One epoch's worth of windows (count windows, shuffled).
  std::vector<Window> sample_epoch(std::size_t count);

  std::size_t window_len() const { return window_len_; }
  std::size_t total_start_positions() const { return total_starts_; }

 private:
  const std::vector<TrajectoryLog>* dataset_;
  std::size_t window_len_;
  std::vector<std::size_t> starts_per_traj_;  // valid start count per trajectory
  std::vector<std::size_t> cum_starts_;
  std::size_t total_starts_ = 0;
  Rng rng_;
};

/// Abort diagnostic carried by the NaN guard.
struct TrainAbort : std::runtime_error {
  std::size_t step_index;
  std::string parameter;
  TrainAbort(std::size_t step, std::string param, const std::string& what)
      : std::runtime_error(what), step_index(step), parameter(std::move(param)) {}
};

/// Global gradient-norm clip; returns the pre-clip norm.
double clip_grad_norm(ParamSet& params, double max_norm);

/// End-to-end training: window sampling, denoising corruption, unrolled NLL,
/// AdamW under the one-cycle schedule. Mutates the model in place.
TrainReport train(RaptModel& model, const std::vector<TrajectoryLog>& dataset,
                  const TrainConfig& cfg);

}  // namespace rapt
