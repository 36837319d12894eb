#include "rapt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "rapt/rng.hpp"

namespace rapt {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(schedule.warmup_fraction > 0.0 && schedule.warmup_fraction < 1.0)) {
    throw std::invalid_argument("TrainConfig: warmup_fraction must be in (0,1)");
  }
  if (unroll < 1) throw std::invalid_argument("TrainConfig: unroll must be >= 1");
  if (windows_per_epoch < 1) throw std::invalid_argument("TrainConfig: windows_per_epoch >= 1");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw std::invalid_argument("TrainConfig: holdout_fraction must be in [0,1)");
  }
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak_lr,
                    const OneCycleConfig& cfg) {
  if (total_steps == 0 || step >= total_steps) {
    throw std::out_of_range("one_cycle_lr: step out of range");
  }
  if (total_steps == 1) return peak_lr;
  if (total_steps == 2) {
    return step == 0 ? peak_lr / cfg.initial_div : peak_lr / cfg.final_div;
  }
  const std::size_t last = total_steps - 1;
  std::size_t warmup_end = static_cast<std::size_t>(
      std::llround(cfg.warmup_fraction * static_cast<double>(last)));
  warmup_end = std::min(std::max<std::size_t>(warmup_end, 1), last - 1);
  const double lo_start = peak_lr / cfg.initial_div;
  const double lo_final = peak_lr / cfg.final_div;
  if (step <= warmup_end) {
    const double p = static_cast<double>(step) / static_cast<double>(warmup_end);
    return lo_start + (peak_lr - lo_start) * 0.5 * (1.0 - std::cos(M_PI * p));
  }
  const double p =
      static_cast<double>(step - warmup_end) / static_cast<double>(last - warmup_end);
  return lo_final + (peak_lr - lo_final) * 0.5 * (1.0 + std::cos(M_PI * p));
}

void AdamW::step(ParamSet& params, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (const auto& [name, node] : params) {
    Tensor& p = node->value;
    if (node->grad.empty()) node->grad_buffer();
    const Tensor& g = node->grad;
    auto [it, inserted] = state_.try_emplace(name);
    if (inserted) {
      it->second.m = Tensor::zeros(p.shape());
      it->second.v = Tensor::zeros(p.shape());
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= lr * weight_decay_ * p[i];  // decoupled decay first
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

WindowSampler::WindowSampler(const std::vector<TrajectoryLog>& dataset, std::size_t window_len,
                             std::uint64_t seed)
    : dataset_(&dataset), window_len_(window_len), rng_(Rng(seed).fork(0x71d0)) {
  if (window_len_ == 0) throw std::invalid_argument("WindowSampler: window_len must be >= 1");
  starts_per_traj_.reserve(dataset.size());
  for (const auto& log : dataset) {
    if (log.length() < window_len_) {
      throw std::invalid_argument("WindowSampler: trajectory shorter than window (" +
                                  std::to_string(log.length()) + " < " +
                                  std::to_string(window_len_) + ")");
    }
    const std::size_t starts = log.length() - window_len_ + 1;
    starts_per_traj_.push_back(starts);
    total_starts_ += starts;
    cum_starts_.push_back(total_starts_);
  }
  if (dataset.empty()) throw std::invalid_argument("WindowSampler: empty dataset");
}

std::vector<Window> WindowSampler::sample_epoch(std::size_t count) {
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    // uniform over all (trajectory, start) pairs
    const std::size_t flat = rng_.uniform_index(total_starts_);
    const std::size_t traj = static_cast<std::size_t>(
        std::upper_bound(cum_starts_.begin(), cum_starts_.end(), flat) - cum_starts_.begin());
    const std::size_t before = traj == 0 ? 0 : cum_starts_[traj - 1];
    out.push_back({traj, flat - before});
  }
  return out;
}

double clip_grad_norm(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, node] : params) {
    if (node->grad.empty()) continue;
    const Tensor& g = node->grad;
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& [name, node] : params) {
      if (!node->grad.empty()) node->grad.scale_(s);
    }
  }
  return norm;
}

namespace {

struct PreparedWindow {
  std::vector<Tensor> inputs;   // normalized (+noise), length n_steps
  std::vector<Tensor> targets;  // normalized clean targets, length n_steps
};

PreparedWindow prepare_window(const RaptModel& model, const TrajectoryLog& log,
                              std::size_t start, std::size_t n_steps, bool dynamics,
                              double noise_sigma, Rng* noise_rng) {
  const ModelConfig& c = model.config;
  PreparedWindow w;
  w.inputs.reserve(n_steps);
  w.targets.reserve(n_steps);
  for (std::size_t t = 0; t < n_steps; ++t) {
    Tensor in = Tensor::zeros({c.input_dim()});
    normalize_obs(model, log.obs_row(start + t), in.data());
    if (c.condition_on_actions) normalize_act(model, log.act_row(start + t), in.data() + c.d_obs);
    if (noise_rng && noise_sigma > 0.0) {
      // corruption applies to the observation part only
      for (std::size_t i = 0; i < c.d_obs; ++i) in[i] += noise_sigma * noise_rng->normal();
    }
    w.inputs.push_back(std::move(in));
    Tensor tgt = Tensor::zeros({c.d_obs});
    const std::size_t tgt_idx = dynamics ? start + t + 1 : start + t;
    normalize_obs(model, log.obs_row(tgt_idx), tgt.data());
    w.targets.push_back(std::move(tgt));
  }
  return w;
}

/// Builds the unrolled graph for one window and returns the mean-NLL node.
NodePtr window_loss(const GraphModel& gm, const PreparedWindow& w, std::size_t d_model) {
  NodePtr h = make_constant(Tensor::zeros({d_model}));
  std::vector<NodePtr> step_means;
  step_means.reserve(w.inputs.size());
  for (std::size_t t = 0; t < w.inputs.size(); ++t) {
    NodePtr in = make_constant(w.inputs[t]);
    GraphModel::Step s = gm.step(in, h);
    h = s.hidden;
    NodePtr nll = gm.nll(make_constant(w.targets[t]), s);
    step_means.push_back(mean(nll));
  }
  NodePtr acc = step_means[0];
  for (std::size_t t = 1; t < step_means.size(); ++t) acc = add(acc, step_means[t]);
  return scale(acc, 1.0 / static_cast<double>(step_means.size()));
}

double holdout_nll(const RaptModel& model, const std::vector<TrajectoryLog>& holdout,
                   const std::vector<Window>& windows, std::size_t n_steps, bool dynamics) {
  if (windows.empty()) return 0.0;
  double acc = 0.0;
  std::size_t count = 0;
  for (const Window& w : windows) {
    const TrajectoryLog& log = holdout[w.trajectory];
    TrajectoryLog win = log.slice(w.start, n_steps + (dynamics ? 1 : 0));
    auto outs = forward_sequence(model, win, zero_hidden(model.config));
    for (const auto& s : outs) {
      acc += s.nll_mean;
      ++count;
    }
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace

TrainReport train(RaptModel& model, const std::vector<TrajectoryLog>& dataset,
                  const TrainConfig& cfg) {
  cfg.validate();
  const auto t_begin = std::chrono::steady_clock::now();
  const ModelConfig& mc = model.config;
  const bool dynamics = mc.objective == Objective::kDynamics;
  const std::size_t window_len = cfg.unroll + (dynamics ? 1 : 0);

  // Deterministic holdout split at trajectory granularity.
  std::vector<TrajectoryLog> train_set, holdout_set;
  {
    Rng split_rng = Rng(cfg.seed).fork(0x5911);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[split_rng.uniform_index(i)]);
    }
    std::size_t n_holdout =
        static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(dataset.size()));
    if (cfg.holdout_fraction > 0.0 && dataset.size() >= 2 && n_holdout == 0) n_holdout = 1;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < n_holdout ? holdout_set : train_set).push_back(dataset[order[i]]);
    }
  }
  if (train_set.empty()) throw std::invalid_argument("train: no training trajectories");

  WindowSampler sampler(train_set, window_len, cfg.seed);
  // Fixed held-out windows, sampled once.
  std::vector<Window> holdout_windows;
  if (!holdout_set.empty()) {
    WindowSampler hs(holdout_set, window_len, cfg.seed ^ 0x601dull);
    holdout_windows = hs.sample_epoch(std::min<std::size_t>(32, cfg.windows_per_epoch));
  }

  const std::size_t steps_per_epoch =
      (cfg.windows_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  GraphModel gm(model);
  AdamW opt(cfg.weight_decay);
  Rng noise_rng = Rng(cfg.seed).fork(0x015e);

  TrainReport report;
  report.lr_trace.reserve(total_steps);
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Window> windows = sampler.sample_epoch(cfg.windows_per_epoch);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(windows.size(), b0 + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(b1 - b0);
      model.params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const TrajectoryLog& log = train_set[windows[k].trajectory];
        PreparedWindow w = prepare_window(model, log, windows[k].start, cfg.unroll, dynamics,
                                          mc.noise_sigma, &noise_rng);
        NodePtr loss = window_loss(gm, w, mc.d_model);
        batch_loss += loss->value.item();
        // scale upstream so accumulated grads equal the batch mean
        loss = scale(loss, inv_batch);
        backward(loss);
      }
      batch_loss *= inv_batch;
      if (!std::isfinite(batch_loss)) {
        // corrupted parameter values first; NaN gradients only implicate
        std::string bad = "<loss>";
        for (const auto& [name, node] : model.params) {
          if (!node->value.all_finite()) {
            bad = name;
            break;
          }
        }
        if (bad == "<loss>") {
          for (const auto& [name, node] : model.params) {
            if (!node->grad.empty() && !node->grad.all_finite()) {
              bad = name;
              break;
            }
          }
        }
        throw TrainAbort(global_step, bad,
                         "train: non-finite loss at step " + std::to_string(global_step) +
                             " (parameter " + bad + ")");
      }
      clip_grad_norm(model.params, cfg.grad_clip_norm);
      const double lr = one_cycle_lr(global_step, total_steps, cfg.peak_lr, cfg.schedule);
      report.lr_trace.push_back(lr);
      opt.step(model.params, lr);
      epoch_loss += batch_loss;
      ++epoch_batches;
      ++global_step;
    }
    report.train_nll.push_back(epoch_loss / static_cast<double>(epoch_batches));
    report.holdout_nll.push_back(
        holdout_set.empty()
            ? report.train_nll.back()
            : holdout_nll(model, holdout_set, holdout_windows, cfg.unroll, dynamics));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
  return report;
}

}  // namespace rapt
