#include "rapt/detect.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rapt {

namespace {
constexpr double kMarginEps = 1e-9;
constexpr double kSentinelMargin = 1e12;
constexpr double kScoreFloor = -1e300;
}  // namespace

double CalibrationProfile::box_expansion(std::size_t i) const {
  const double width = box_max[i] - box_min[i];
  const double floor = 1e-6 * (1.0 + std::abs(box_min[i]));
  return std::max(delta * width, floor);
}

void CalibrationProfile::validate() const {
  if (d_obs == 0) throw std::invalid_argument("CalibrationProfile: d_obs must be positive");
  if (tau_max.size() != d_obs || sigma.size() != d_obs || box_min.size() != d_obs ||
      box_max.size() != d_obs) {
    throw std::invalid_argument("CalibrationProfile: vector width mismatch");
  }
  if (calibration_steps < 2) {
    throw std::invalid_argument("CalibrationProfile: needs >= 2 calibration steps");
  }
  for (std::size_t i = 0; i < d_obs; ++i) {
    if (sigma[i] < 0.0) throw std::invalid_argument("CalibrationProfile: negative sigma");
    if (box_min[i] > box_max[i]) {
      throw std::invalid_argument("CalibrationProfile: box_min > box_max");
    }
  }
}

ThresholdStats compute_threshold_stats(const std::vector<std::vector<double>>& nll_steps) {
  if (nll_steps.size() < 2) {
    throw std::invalid_argument("compute_threshold_stats: needs >= 2 scored steps");
  }
  const std::size_t d = nll_steps.front().size();
  const double n = static_cast<double>(nll_steps.size());
  ThresholdStats s;
  s.tau_max.assign(d, -std::numeric_limits<double>::infinity());
  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  double gsum = 0.0, gsumsq = 0.0;
  s.tau_global = -std::numeric_limits<double>::infinity();
  for (const auto& row : nll_steps) {
    if (row.size() != d) throw std::invalid_argument("compute_threshold_stats: ragged rows");
    double mean_nll = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = row[i];
      if (!std::isfinite(v)) {
        throw std::invalid_argument("compute_threshold_stats: non-finite score");
      }
      s.tau_max[i] = std::max(s.tau_max[i], v);
      sum[i] += v;
      sumsq[i] += v * v;
      mean_nll += v;
    }
    mean_nll /= static_cast<double>(d);
    s.tau_global = std::max(s.tau_global, mean_nll);
    gsum += mean_nll;
    gsumsq += mean_nll * mean_nll;
  }
  s.sigma.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double mu = sum[i] / n;
    s.sigma[i] = std::sqrt(std::max(0.0, sumsq[i] / n - mu * mu));
  }
  const double gmu = gsum / n;
  s.sigma_global = std::sqrt(std::max(0.0, gsumsq / n - gmu * gmu));
  return s;
}

void evaluate_gates(const CalibrationProfile& profile, const double* nll, double nll_mean,
                    bool have_nll, const double* raw_obs, bool obs_finite, bool suppress_learned,
                    AnomalyVerdict& out) {
  const std::size_t d = profile.d_obs;
  out.gate1 = {};
  out.gate2 = {};
  out.gate3 = {};
  out.warmup = suppress_learned;

  if (have_nll) {
    double best_norm = -std::numeric_limits<double>::infinity();
    std::size_t best_dim = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const double threshold = profile.tau_max[i] + profile.k_local * profile.sigma[i];
      const double margin = nll[i] - threshold;
      const double norm = margin / (profile.k_local * profile.sigma[i] + kMarginEps);
      if (norm > best_norm) {
        best_norm = norm;
        best_dim = i;
      }
    }
    out.gate1.dim = static_cast<std::ptrdiff_t>(best_dim);
    out.gate1.margin =
        nll[best_dim] - (profile.tau_max[best_dim] + profile.k_local * profile.sigma[best_dim]);
    out.gate1.norm_margin = best_norm;
    out.gate1.fired = !suppress_learned && out.gate1.margin > 0.0;

    const double gthr = profile.tau_global + profile.k_global * profile.sigma_global;
    out.gate2.margin = nll_mean - gthr;
    out.gate2.norm_margin =
        out.gate2.margin / (profile.k_global * profile.sigma_global + kMarginEps);
    out.gate2.fired = !suppress_learned && out.gate2.margin > 0.0;
  } else {
    out.gate1.norm_margin = kScoreFloor;
    out.gate2.norm_margin = kScoreFloor;
  }

  if (!obs_finite) {
    out.gate3.fired = true;
    out.gate3.sentinel = true;
    out.gate3.norm_margin = kSentinelMargin;
    for (std::size_t i = 0; i < d; ++i) {
      if (!std::isfinite(raw_obs[i])) out.gate3.dims.push_back(i);
    }
  } else {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < d; ++i) {
      const double expansion = profile.box_expansion(i);
      const double lo = profile.box_min[i] - expansion;
      const double hi = profile.box_max[i] + expansion;
      // signed distance outside the expanded interval (negative inside)
      const double signed_dist = std::max(raw_obs[i] - hi, lo - raw_obs[i]);
      worst = std::max(worst, signed_dist / (expansion + kMarginEps));
      if (signed_dist > 0.0) out.gate3.dims.push_back(i);
    }
    out.gate3.norm_margin = worst;
    out.gate3.fired = !out.gate3.dims.empty();
  }
  out.anomaly = out.gate1.fired || out.gate2.fired || out.gate3.fired;
}

Detector::Detector(const RaptModel& model)
    : net_(make_flat_f32(model)), objective_(model.config.objective) {
  train_obs_min_.assign(model.obs_min.data(), model.obs_min.data() + model.obs_min.size());
  train_obs_max_.assign(model.obs_max.data(), model.obs_max.data() + model.obs_max.size());
}

StreamState Detector::make_stream() const {
  StreamState s;
  s.hidden.assign(net_.d_model, 0.0f);
  s.scratch = net_.make_scratch();
  s.input_buf.resize(net_.in_dim);
  s.mu_buf.resize(net_.d_obs);
  s.logvar_buf.resize(net_.d_obs);
  s.target_buf.resize(net_.d_obs);
  s.nll_buf.resize(net_.d_obs);
  s.pred_mu.resize(net_.d_obs);
  s.pred_logvar.resize(net_.d_obs);
  s.sanitized_obs.resize(net_.d_obs);
  return s;
}

AnomalyVerdict Detector::detect(const CalibrationProfile& profile, StreamState& state,
                                std::span<const double> obs, std::span<const double> act) const {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t d = net_.d_obs;
  if (obs.size() != d) throw std::invalid_argument("detect: observation width mismatch");
  if (profile.d_obs != d) {
    throw std::invalid_argument("detect: profile/model d_obs mismatch");
  }

  AnomalyVerdict v;
  v.t = state.step;

  bool obs_finite = true;
  for (double x : obs) {
    if (!std::isfinite(x)) {
      obs_finite = false;
      break;
    }
  }
  // Sanitize non-finite components to the box midpoint so the stream and the
  // hidden state survive the sample.
  const double* raw = obs.data();
  if (!obs_finite) {
    for (std::size_t i = 0; i < d; ++i) {
      state.sanitized_obs[i] = std::isfinite(obs[i])
                                   ? obs[i]
                                   : 0.5 * (profile.box_min[i] + profile.box_max[i]);
    }
  }
  const double* model_obs = obs_finite ? obs.data() : state.sanitized_obs.data();

  const bool dynamics = objective_ == Objective::kDynamics;
  bool have_nll = false;
  v.nll_per_dim.assign(d, 0.0);
  double nll_mean = 0.0;

  net_.normalize_obs(model_obs, state.target_buf.data());
  if (dynamics) {
    if (state.has_prediction) {
      gaussian_nll_values(d, state.target_buf.data(), state.pred_mu.data(),
                          state.pred_logvar.data(), state.nll_buf.data());
      have_nll = true;
    }
  }

  // advance the hidden state exactly once
  std::copy(state.target_buf.begin(), state.target_buf.end(), state.input_buf.begin());
  if (net_.in_dim > d) {
    if (act.size() != net_.in_dim - d) {
      throw std::invalid_argument("detect: action width mismatch");
    }
    net_.normalize_act(act.data(), state.input_buf.data() + d);
  }
  net_.step(state.input_buf.data(), state.hidden.data(), state.hidden.data(),
            state.mu_buf.data(), state.logvar_buf.data(), state.scratch);

  if (dynamics) {
    state.pred_mu = state.mu_buf;
    state.pred_logvar = state.logvar_buf;
    state.has_prediction = true;
  } else {
    gaussian_nll_values(d, state.target_buf.data(), state.mu_buf.data(),
                        state.logvar_buf.data(), state.nll_buf.data());
    have_nll = true;
  }

  if (have_nll) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      v.nll_per_dim[i] = static_cast<double>(state.nll_buf[i]);
      acc += v.nll_per_dim[i];
    }
    nll_mean = acc / static_cast<double>(d);
  }
  v.nll_mean = nll_mean;

  const bool suppress = state.step < profile.warmup_steps;
  evaluate_gates(profile, v.nll_per_dim.data(), nll_mean, have_nll, raw, obs_finite, suppress, v);

  ++state.step;
  v.latency_micros =
      std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
  return v;
}

EpisodeVerdict Detector::detect_episode(const CalibrationProfile& profile,
                                        const TrajectoryLog& log) const {
  if (log.length() == 0) throw std::invalid_argument("detect_episode: empty log");
  EpisodeVerdict ep;
  ep.gate1_score = kScoreFloor;
  ep.gate2_score = kScoreFloor;
  ep.gate3_score = kScoreFloor;
  StreamState state = make_stream();
  ep.steps.reserve(log.length());
  for (std::size_t t = 0; t < log.length(); ++t) {
    AnomalyVerdict v = detect(profile, state, log.obs_span(t), log.act_span(t));
    if (v.anomaly && !ep.flagged) {
      ep.flagged = true;
      ep.first_detection = static_cast<std::ptrdiff_t>(t);
    }
    if (!v.warmup) {
      ep.gate1_score = std::max(ep.gate1_score, v.gate1.norm_margin);
      ep.gate2_score = std::max(ep.gate2_score, v.gate2.norm_margin);
    }
    ep.gate3_score = std::max(ep.gate3_score, v.gate3.norm_margin);
    ep.steps.push_back(std::move(v));
  }
  ep.model_score = std::max(ep.gate1_score, ep.gate2_score);
  // The box is fit on nominal extremes, so the range margin hovers just below
  // zero on any nominal episode and carries signal only once it actually
  // fires; blending sub-threshold range distances into the hybrid score would
  // drown the learned gates.
  ep.hybrid_score =
      ep.gate3_score > 0.0 ? std::max(ep.model_score, ep.gate3_score) : ep.model_score;
  return ep;
}

std::vector<std::vector<double>> Detector::score(const TrajectoryLog& log) const {
  // Same stepping as detect but gate-free; used by calibrate.
  std::vector<std::vector<double>> rows;
  rows.reserve(log.length());
  StreamState state = make_stream();
  const std::size_t d = net_.d_obs;
  const bool dynamics = objective_ == Objective::kDynamics;
  for (std::size_t t = 0; t < log.length(); ++t) {
    std::span<const double> obs = log.obs_span(t);
    for (double x : obs) {
      if (!std::isfinite(x)) throw std::invalid_argument("score: non-finite observation");
    }
    net_.normalize_obs(obs.data(), state.target_buf.data());
    std::vector<double> row;
    if (dynamics) {
      if (state.has_prediction) {
        gaussian_nll_values(d, state.target_buf.data(), state.pred_mu.data(),
                            state.pred_logvar.data(), state.nll_buf.data());
        row.assign(state.nll_buf.begin(), state.nll_buf.end());
      }
    }
    std::copy(state.target_buf.begin(), state.target_buf.end(), state.input_buf.begin());
    if (net_.in_dim > d) {
      net_.normalize_act(log.act_row(t), state.input_buf.data() + d);
    }
    net_.step(state.input_buf.data(), state.hidden.data(), state.hidden.data(),
              state.mu_buf.data(), state.logvar_buf.data(), state.scratch);
    if (dynamics) {
      state.pred_mu = state.mu_buf;
      state.pred_logvar = state.logvar_buf;
      state.has_prediction = true;
    } else {
      gaussian_nll_values(d, state.target_buf.data(), state.mu_buf.data(),
                          state.logvar_buf.data(), state.nll_buf.data());
      row.assign(state.nll_buf.begin(), state.nll_buf.end());
    }
    ++state.step;
    rows.push_back(std::move(row));
  }
  return rows;
}

CalibrationProfile Detector::calibrate(const TrajectoryLog& nominal_run,
                                       const GateConfig& gc) const {
  const std::size_t d = net_.d_obs;
  if (nominal_run.d_obs != d) throw std::invalid_argument("calibrate: d_obs mismatch");
  if (nominal_run.length() < 2) {
    throw std::invalid_argument("calibrate: nominal run needs >= 2 steps");
  }
  std::vector<std::vector<double>> rows = score(nominal_run);
  // Drop rows with no prediction (dynamics warm-up) first.
  std::vector<std::vector<double>> scored;
  scored.reserve(rows.size());
  for (auto& r : rows) {
    if (!r.empty()) scored.push_back(std::move(r));
  }
  if (scored.size() < 2) throw std::invalid_argument("calibrate: run too short to score");
  // Exclude the zero-init transient from threshold statistics, but never
  // below the 2-step minimum the stats need.
  const std::size_t skip = std::min(gc.warmup_steps, scored.size() - 2);
  std::vector<std::vector<double>> stats_rows(scored.begin() + static_cast<std::ptrdiff_t>(skip),
                                              scored.end());
  ThresholdStats stats = compute_threshold_stats(stats_rows);

  CalibrationProfile p;
  p.tau_max = std::move(stats.tau_max);
  p.sigma = std::move(stats.sigma);
  p.tau_global = stats.tau_global;
  p.sigma_global = stats.sigma_global;
  p.k_local = gc.k_local;
  p.k_global = gc.k_global;
  p.delta = gc.delta;
  p.warmup_steps = gc.warmup_steps;
  p.calibration_steps = stats_rows.size();
  p.d_obs = d;
  p.objective = to_string(objective_);

  // Raw box bounds: union of the training dataset bounds and this run.
  p.box_min.assign(d, std::numeric_limits<double>::infinity());
  p.box_max.assign(d, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < nominal_run.length(); ++t) {
    const double* row = nominal_run.obs_row(t);
    for (std::size_t i = 0; i < d; ++i) {
      p.box_min[i] = std::min(p.box_min[i], row[i]);
      p.box_max[i] = std::max(p.box_max[i], row[i]);
    }
  }
  if (train_obs_min_.size() == d) {
    for (std::size_t i = 0; i < d; ++i) {
      if (std::isfinite(train_obs_min_[i])) {
        p.box_min[i] = std::min(p.box_min[i], train_obs_min_[i]);
        p.box_max[i] = std::max(p.box_max[i], train_obs_max_[i]);
      }
    }
  }
  p.validate();
  return p;
}

}  // namespace rapt
