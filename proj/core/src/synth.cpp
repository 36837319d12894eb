#include "rapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rapt {

void WorldConfig::validate() const {
  if (d_joints == 0) throw std::invalid_argument("WorldConfig: d_joints must be positive");
  if (episode_len < 2) throw std::invalid_argument("WorldConfig: episode_len must be >= 2");
  if (dt <= 0.0) throw std::invalid_argument("WorldConfig: dt must be positive");
  if (n_freqs == 0) throw std::invalid_argument("WorldConfig: n_freqs must be positive");
  if (process_noise < 0.0 || sensor_noise < 0.0) {
    throw std::invalid_argument("WorldConfig: noise levels must be >= 0");
  }
  if (freq_lo <= 0.0 || freq_hi < freq_lo) {
    throw std::invalid_argument("WorldConfig: invalid frequency band");
  }
}

std::string to_string(FaultKind k) {
  switch (k) {
    case FaultKind::kSensorFreeze: return "sensor_freeze";
    case FaultKind::kSensorBias: return "sensor_bias";
    case FaultKind::kNoiseBurst: return "noise_burst";
    case FaultKind::kDropout: return "dropout";
    case FaultKind::kTimeDelay: return "time_delay";
    case FaultKind::kGainChange: return "gain_change";
    case FaultKind::kDynamicsShift: return "dynamics_shift";
    case FaultKind::kImpulsePush: return "impulse_push";
  }
  throw std::logic_error("unreachable fault kind");
}

FaultKind fault_kind_from_string(const std::string& s) {
  if (s == "sensor_freeze") return FaultKind::kSensorFreeze;
  if (s == "sensor_bias") return FaultKind::kSensorBias;
  if (s == "noise_burst") return FaultKind::kNoiseBurst;
  if (s == "dropout") return FaultKind::kDropout;
  if (s == "time_delay") return FaultKind::kTimeDelay;
  if (s == "gain_change") return FaultKind::kGainChange;
  if (s == "dynamics_shift") return FaultKind::kDynamicsShift;
  if (s == "impulse_push") return FaultKind::kImpulsePush;
  throw std::invalid_argument("unknown fault kind: " + s);
}

void FaultSpec::validate(std::size_t episode_len, std::size_t d_obs) const {
  if (duration == 0) throw std::invalid_argument("FaultSpec: duration must be positive");
  if (onset + duration > episode_len) {
    throw std::invalid_argument("FaultSpec: onset + duration exceeds episode length");
  }
  if (magnitude <= 0.0) throw std::invalid_argument("FaultSpec: magnitude must be positive");
  if ((kind == FaultKind::kSensorFreeze || kind == FaultKind::kDynamicsShift) && onset == 0) {
    throw std::invalid_argument("FaultSpec: fault kind needs a pre-fault sample (onset >= 1)");
  }
  for (std::size_t c : channels) {
    if (c >= d_obs) throw std::invalid_argument("FaultSpec: channel index out of range");
  }
  if (kind != FaultKind::kDynamicsShift && channels.empty()) {
    throw std::invalid_argument("FaultSpec: affected channels required");
  }
}

World::World(const WorldConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(cfg_.seed).fork(0x3a1d);
  const std::size_t J = cfg_.d_joints, K = cfg_.n_freqs;
  freqs_.resize(K);
  for (std::size_t k = 0; k < K; ++k) freqs_[k] = rng.uniform(cfg_.freq_lo, cfg_.freq_hi);
  amps_.resize(J * K);
  phases_.resize(J * K);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t k = 0; k < K; ++k) {
      amps_[j * K + k] = rng.uniform(0.2, 1.0);
      phases_[j * K + k] = rng.uniform(0.0, 2.0 * M_PI);
    }
  }
  base_mix_.resize(J * 2 * J);
  for (double& v : base_mix_) v = rng.uniform(-0.5, 0.5);
}

double World::dominant_period_steps() const {
  // frequency with the largest total amplitude across joints
  std::size_t best = 0;
  double best_amp = -1.0;
  for (std::size_t k = 0; k < cfg_.n_freqs; ++k) {
    double a = 0.0;
    for (std::size_t j = 0; j < cfg_.d_joints; ++j) a += amps_[j * cfg_.n_freqs + k];
    if (a > best_amp) {
      best_amp = a;
      best = k;
    }
  }
  return 1.0 / (freqs_[best] * cfg_.dt);
}

TrajectoryLog World::compose(std::size_t index, std::size_t shift_onset,
                             double freq_scale) const {
  const std::size_t J = cfg_.d_joints, K = cfg_.n_freqs, T = cfg_.episode_len;
  Rng rng = Rng(cfg_.seed).fork(0xe900 + index);
  const double episode_phase = rng.uniform(0.0, 2.0 * M_PI);
  // Noise arrays are drawn up-front in a fixed order so a regenerated episode
  // (frequency shift) reuses the exact same realization.
  std::vector<double> pos_noise(T * J), base_noise(T * J);
  for (double& v : pos_noise) v = rng.normal() * cfg_.process_noise;
  for (double& v : base_noise) v = rng.normal() * cfg_.sensor_noise;

  std::vector<double> pos(T * J);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t t = 0; t < T; ++t) {
      double x = 0.0;
      const double time = static_cast<double>(t) * cfg_.dt;
      for (std::size_t k = 0; k < K; ++k) {
        const double w = 2.0 * M_PI * freqs_[k];
        double angle;
        if (t < shift_onset || freq_scale == 1.0) {
          angle = w * time + phases_[j * K + k] + episode_phase;
        } else {
          // phase-continuous at the last nominal step, so every labeled step
          // (onset included) differs from the nominal twin
          const double t0 = static_cast<double>(shift_onset >= 1 ? shift_onset - 1 : 0) * cfg_.dt;
          angle = w * t0 + w * freq_scale * (time - t0) + phases_[j * K + k] + episode_phase;
        }
        x += amps_[j * K + k] * std::sin(angle);
      }
      pos[t * J + j] = x + pos_noise[t * J + j];
    }
  }

  TrajectoryLog log(cfg_.d_obs(), 0);
  log.obs.resize(T * cfg_.d_obs());
  for (std::size_t t = 0; t < T; ++t) {
    double* row = log.obs_row(t);
    for (std::size_t j = 0; j < J; ++j) {
      row[j] = pos[t * J + j];
      row[J + j] = t == 0 ? 0.0 : (pos[t * J + j] - pos[(t - 1) * J + j]) / cfg_.dt;
    }
    for (std::size_t i = 0; i < J; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 2 * J; ++j) acc += base_mix_[i * 2 * J + j] * row[j];
      row[2 * J + i] = acc + base_noise[t * J + i];
    }
  }
  return log;
}

TrajectoryLog World::episode(std::size_t index) const { return compose(index, 0, 1.0); }

TrajectoryLog World::episode_shifted(std::size_t index, std::size_t onset,
                                     double freq_scale) const {
  return compose(index, onset, freq_scale);
}

std::vector<TrajectoryLog> generate_nominal(const WorldConfig& cfg, std::size_t n_episodes) {
  if (n_episodes == 0) throw std::invalid_argument("generate_nominal: n_episodes must be >= 1");
  World world(cfg);
  std::vector<TrajectoryLog> out;
  out.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) out.push_back(world.episode(i));
  return out;
}

namespace {

std::vector<double> channel_stds(const TrajectoryLog& log) {
  const std::size_t d = log.d_obs, n = log.length();
  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double* row = log.obs_row(t);
    for (std::size_t i = 0; i < d; ++i) {
      sum[i] += row[i];
      sumsq[i] += row[i] * row[i];
    }
  }
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double mu = sum[i] / static_cast<double>(n);
    out[i] = std::sqrt(std::max(0.0, sumsq[i] / static_cast<double>(n) - mu * mu));
  }
  return out;
}

FaultResult apply_sensor_fault(const TrajectoryLog& log, const FaultSpec& spec,
                               std::uint64_t seed) {
  const std::size_t T = log.length();
  if (spec.onset + spec.duration > T) {
    throw std::invalid_argument("inject_fault: fault window exceeds log length");
  }
  for (std::size_t c : spec.channels) {
    if (c >= log.d_obs) throw std::invalid_argument("inject_fault: channel out of range");
  }
  FaultResult res;
  res.log = log;
  res.step_labels.assign(T, 0);
  for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) res.step_labels[t] = 1;
  const std::vector<double> stds = channel_stds(log);
  Rng rng = Rng(seed).fork(0xfa01 + static_cast<std::uint64_t>(spec.kind));

  switch (spec.kind) {
    case FaultKind::kSensorFreeze: {
      if (spec.onset == 0) {
        throw std::invalid_argument("inject_fault: sensor_freeze needs onset >= 1");
      }
      for (std::size_t c : spec.channels) {
        const double held = log.obs_row(spec.onset - 1)[c];  // last healthy sample
        for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
          res.log.obs_row(t)[c] = held;
        }
      }
      break;
    }
    case FaultKind::kSensorBias: {
      for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
        for (std::size_t c : spec.channels) {
          res.log.obs_row(t)[c] += spec.magnitude * stds[c];
        }
      }
      break;
    }
    case FaultKind::kNoiseBurst: {
      for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
        for (std::size_t c : spec.channels) {
          res.log.obs_row(t)[c] += rng.normal() * spec.magnitude * stds[c];
        }
      }
      break;
    }
    case FaultKind::kDropout: {
      for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
        for (std::size_t c : spec.channels) res.log.obs_row(t)[c] = 0.0;
      }
      break;
    }
    case FaultKind::kTimeDelay: {
      const std::size_t d = static_cast<std::size_t>(
          std::max<long long>(1, std::llround(spec.magnitude)));
      for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
        const std::size_t src = t >= d ? t - d : 0;
        for (std::size_t c : spec.channels) {
          res.log.obs_row(t)[c] = log.obs_row(src)[c];
        }
      }
      break;
    }
    case FaultKind::kGainChange: {
      for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
        for (std::size_t c : spec.channels) res.log.obs_row(t)[c] *= 1.0 + spec.magnitude;
      }
      break;
    }
    case FaultKind::kImpulsePush: {
      const double tau = std::max(1.0, static_cast<double>(spec.duration) / 4.0);
      for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
        const double decay =
            std::exp(-static_cast<double>(t - spec.onset) / tau) * spec.magnitude;
        for (std::size_t c : spec.channels) {
          res.log.obs_row(t)[c] += decay * stds[c];
        }
      }
      break;
    }
    case FaultKind::kDynamicsShift:
      throw std::invalid_argument("inject_fault: dynamics_shift needs the World overload");
  }
  return res;
}

}  // namespace

FaultResult inject_fault(const TrajectoryLog& log, const FaultSpec& spec, std::uint64_t seed) {
  return apply_sensor_fault(log, spec, seed);
}

FaultResult inject_fault(const World& world, std::size_t episode_index, const FaultSpec& spec,
                         std::uint64_t seed) {
  if (spec.kind == FaultKind::kDynamicsShift) {
    FaultResult res;
    res.log = world.episode_shifted(episode_index, spec.onset, 1.0 + spec.magnitude);
    res.step_labels.assign(res.log.length(), 0);
    for (std::size_t t = spec.onset; t < spec.onset + spec.duration; ++t) {
      res.step_labels[t] = 1;
    }
    return res;
  }
  return apply_sensor_fault(world.episode(episode_index), spec, seed);
}

std::vector<FaultTemplate> default_fault_suite() {
  using CC = FaultTemplate::ChannelClass;
  return {
      {FaultKind::kSensorFreeze, 1.0, 150, CC::kPos, 1},
      {FaultKind::kSensorBias, 3.0, 150, CC::kAny, 1},
      {FaultKind::kNoiseBurst, 3.0, 150, CC::kAny, 1},
      {FaultKind::kDropout, 1.0, 150, CC::kVel, 1},
      {FaultKind::kTimeDelay, 6.0, 150, CC::kPos, 2},
      {FaultKind::kGainChange, 0.5, 150, CC::kVel, 1},
      {FaultKind::kDynamicsShift, 0.3, 200, CC::kAny, 0},
      {FaultKind::kImpulsePush, 4.0, 80, CC::kBase, 2},
  };
}

FaultSpec instantiate_fault(const FaultTemplate& tmpl, const WorldConfig& cfg, Rng& rng) {
  FaultSpec spec;
  spec.kind = tmpl.kind;
  spec.magnitude = tmpl.magnitude;
  spec.duration = std::min(tmpl.duration, cfg.episode_len / 2);
  const std::size_t latest = cfg.episode_len - spec.duration;
  const std::size_t earliest = std::min<std::size_t>(50, latest);
  spec.onset = earliest + rng.uniform_index(latest - earliest + 1);
  if (spec.kind == FaultKind::kDynamicsShift) {
    spec.duration = cfg.episode_len - spec.onset;  // persists to episode end
    return spec;
  }
  const std::size_t J = cfg.d_joints;
  std::size_t lo = 0, n = cfg.d_obs();
  switch (tmpl.channel_class) {
    case FaultTemplate::ChannelClass::kPos: lo = 0; n = J; break;
    case FaultTemplate::ChannelClass::kVel: lo = J; n = J; break;
    case FaultTemplate::ChannelClass::kBase: lo = 2 * J; n = J; break;
    case FaultTemplate::ChannelClass::kAny: lo = 0; n = cfg.d_obs(); break;
  }
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = lo + i;
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
  const std::size_t take = std::min<std::size_t>(std::max<std::size_t>(tmpl.n_channels, 1), n);
  spec.channels.assign(pool.begin(), pool.begin() + take);
  std::sort(spec.channels.begin(), spec.channels.end());
  return spec;
}

}  // namespace rapt
