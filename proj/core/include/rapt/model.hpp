#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rapt/autodiff.hpp"
#include "rapt/tensor.hpp"
#include "rapt/trajectory.hpp"

namespace rapt {

enum class Objective { kReconstruction, kDynamics };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct ModelConfig {
  std::size_t d_obs = 0;
  std::size_t d_act = 0;
  std::size_t d_model = 256;
  std::size_t n_blocks = 4;
  std::size_t d_latent = 192;
  Objective objective = Objective::kReconstruction;
  bool condition_on_actions = false;
  double noise_sigma = 0.01;
  double logvar_lo = -10.0;
  double logvar_hi = 10.0;

  std::size_t input_dim() const { return d_obs + (condition_on_actions ? d_act : 0); }
  std::size_t norm_dim() const { return d_obs + d_act; }
  void validate() const;
};

/// Full learnable state: encoder + GRU bridge + bottleneck + Gaussian decoder,
/// plus the dataset statistics the deployment contract depends on.
struct RaptModel {
  ModelConfig config;
  ParamSet params;
  Tensor norm_mean;  // [d_obs + d_act]
  Tensor norm_std;   // [d_obs + d_act], strictly positive
  Tensor obs_min;    // [d_obs] raw training-set bounds (range-gate calibration input)
  Tensor obs_max;    // [d_obs]
};

RaptModel init_model(const ModelConfig& config, std::uint64_t seed);
std::size_t expected_param_count(const ModelConfig& config);

/// Fit normalization statistics and raw bounds over a nominal dataset.
void fit_normalization(RaptModel& model, const std::vector<TrajectoryLog>& dataset);

void normalize_obs(const RaptModel& model, const double* raw, double* out);
void normalize_act(const RaptModel& model, const double* raw, double* out);
void denormalize_obs(const RaptModel& model, const double* normed, double* out);

struct StepOutput {
  Tensor mu;           // [d_obs]
  Tensor logvar;       // [d_obs], clamped
  Tensor nll_per_dim;  // [d_obs]
  double nll_mean = 0.0;
  Tensor hidden;       // [d_model]
};

/// Graph-building view over a model's parameters. One instance can emit many
/// unrolled step graphs; parameters are shared leaves so gradients accumulate.
class GraphModel {
 public:
  explicit GraphModel(const RaptModel& model);

  struct Step {
    NodePtr mu;
    NodePtr logvar;
    NodePtr hidden;
  };

  /// input must already be normalized (and action-concatenated if configured).
  NodePtr encode(const NodePtr& input) const;
  Step step(const NodePtr& input, const NodePtr& h_prev) const;
  NodePtr nll(const NodePtr& target, const Step& s) const;

  const ModelConfig& config() const { return *config_; }

 private:
  const ModelConfig* config_;
  NodePtr enc_w_, enc_b_;
  struct BlockNodes {
    NodePtr w, b, gamma, beta;
  };
  std::vector<BlockNodes> blocks_;
  gru::Weights gru_;
  NodePtr lat_w_, lat_b_, lat_gamma_, lat_beta_;
  NodePtr fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

/// Flat forward-only network; no graph allocation. Real = double for exact
/// parity with training values, float for the deployment path.
template <typename Real>
struct FlatNet {
  std::size_t in_dim = 0, d_obs = 0, d_model = 0, n_blocks = 0, d_latent = 0;
  Real logvar_lo = 0, logvar_hi = 0;
  Real ln_eps = static_cast<Real>(1e-5);

  std::vector<Real> enc_w, enc_b;
  struct Block {
    std::vector<Real> w, b, gamma, beta;
  };
  std::vector<Block> blocks;
  std::vector<Real> wz, uz, bz, wr, ur, br, wn, un, bin, bhn;
  std::vector<Real> lat_w, lat_b, lat_gamma, lat_beta;
  std::vector<Real> fc1_w, fc1_b, fc2_w, fc2_b;
  std::vector<Real> norm_mean, norm_std;  // [d_obs + d_act]

  struct Scratch {
    std::vector<Real> e, x, tmp, z, r, n, rec, lat, hid1, out;
  };
  Scratch make_scratch() const;

  /// One recurrent step on a normalized input. h_prev and h_out may alias.
  void step(const Real* input, const Real* h_prev, Real* h_out, Real* mu, Real* logvar,
            Scratch& s) const;

  void normalize_obs(const double* raw, Real* out) const;
  void normalize_act(const double* raw, Real* out) const;  // writes d_act entries
  std::size_t d_act() const { return norm_mean.size() - d_obs; }
};

FlatNet<double> make_flat_f64(const RaptModel& model);
FlatNet<float> make_flat_f32(const RaptModel& model);

/// Per-dimension Gaussian NLL at value level.
template <typename Real>
void gaussian_nll_values(std::size_t d, const Real* target, const Real* mu, const Real* logvar,
                         Real* out) {
  const Real c = static_cast<Real>(std::log(2.0 * M_PI));
  for (std::size_t i = 0; i < d; ++i) {
    const Real r = target[i] - mu[i];
    out[i] = static_cast<Real>(0.5) * (c + logvar[i] + r * r * std::exp(-logvar[i]));
  }
}

/// Forward-only step on raw inputs: normalizes, advances the hidden state and
/// scores the reconstruction target (own observation for the reconstruction
/// objective). For the dynamics objective the caller scores the next
/// observation against the returned prediction; nll fields here are filled
/// against `target_obs` which defaults to the input observation.
StepOutput step(const RaptModel& model, std::span<const double> obs, std::span<const double> act,
                const Tensor& h_prev);

Tensor zero_hidden(const ModelConfig& config);

/// Sequential forward over a window with hidden-state threading, h0 at entry.
/// Reconstruction: length() outputs, each scoring its own observation.
/// Dynamics: length()-1 outputs, each scoring the next observation.
std::vector<StepOutput> forward_sequence(const RaptModel& model, const TrajectoryLog& window,
                                         const Tensor& h0);

}  // namespace rapt
