#include "rapt/saliency.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "rapt/autodiff.hpp"

namespace rapt {

namespace {

std::string shortest_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

IgCoreResult integrated_gradients(const PathObjective& objective, const Tensor& input,
                                  const Tensor& baseline, std::size_t m) {
  if (m < 1) throw std::invalid_argument("integrated_gradients: m must be >= 1");
  input.require_same_shape(baseline, "integrated_gradients");
  Tensor diff = input;
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= baseline[i];

  Tensor grad_sum = Tensor::zeros(input.shape());
  Tensor point = Tensor::zeros(input.shape());
  Tensor grad = Tensor::zeros(input.shape());
  for (std::size_t j = 1; j <= m; ++j) {
    // midpoint rule: second-order accurate, exact for linear objectives
    const double alpha = (static_cast<double>(j) - 0.5) / static_cast<double>(m);
    for (std::size_t i = 0; i < point.size(); ++i) point[i] = baseline[i] + alpha * diff[i];
    grad.fill(0.0);
    objective(point, &grad);
    if (!grad.all_finite()) {
      throw std::runtime_error("integrated_gradients: non-finite gradient at path step " +
                               std::to_string(j));
    }
    grad_sum.add_(grad);
  }
  IgCoreResult res;
  res.attributions = Tensor::zeros(input.shape());
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < diff.size(); ++i) {
    res.attributions[i] = diff[i] * grad_sum[i] * inv_m;
  }
  res.f_input = objective(input, nullptr);
  res.f_baseline = objective(baseline, nullptr);
  double total = 0.0;
  for (std::size_t i = 0; i < res.attributions.size(); ++i) total += res.attributions[i];
  res.completeness_gap = std::abs(total - (res.f_input - res.f_baseline));
  return res;
}

std::string to_string(BaselineKind k) {
  return k == BaselineKind::kReconstruction ? "reconstruction" : "train_mean";
}

namespace {

/// F over a normalized H x d_obs trajectory tensor: unroll the model from
/// h_pre and return the final step's mean NLL. Gradients flow through the
/// recurrent chain back to every window row.
class WindowObjective {
 public:
  WindowObjective(const RaptModel& model, const TrajectoryLog& window, const Tensor& h_pre)
      : model_(&model), gm_(model), h_pre_(h_pre) {
    const ModelConfig& c = model.config;
    h_ = window.length();
    if (h_ == 0) throw std::invalid_argument("saliency: empty window");
    if (c.objective == Objective::kDynamics && h_ < 2) {
      throw std::invalid_argument("saliency: dynamics objective needs a window of >= 2 steps");
    }
    if (h_pre_.size() != c.d_model) throw std::invalid_argument("saliency: h_pre width mismatch");
    // Normalized actions are held fixed along the path.
    if (c.condition_on_actions) {
      norm_act_.resize(h_ * c.d_act);
      for (std::size_t t = 0; t < h_; ++t) {
        normalize_act(model, window.act_row(t), norm_act_.data() + t * c.d_act);
      }
    }
  }

  Tensor normalized_input(const TrajectoryLog& window) const {
    const ModelConfig& c = model_->config;
    Tensor x = Tensor::zeros({h_, c.d_obs});
    for (std::size_t t = 0; t < h_; ++t) {
      normalize_obs(*model_, window.obs_row(t), x.data() + t * c.d_obs);
    }
    return x;
  }

  double operator()(const Tensor& x, Tensor* grad_out) const {
    const ModelConfig& c = model_->config;
    const bool dynamics = c.objective == Objective::kDynamics;
    const std::size_t O = c.d_obs;
    const bool need_grad = grad_out != nullptr;

    std::vector<NodePtr> rows;
    rows.reserve(h_);
    for (std::size_t t = 0; t < h_; ++t) {
      Tensor row = Tensor::zeros({O});
      for (std::size_t i = 0; i < O; ++i) row[i] = x[t * O + i];
      rows.push_back(make_leaf(std::move(row), need_grad));
    }
    NodePtr h = make_constant(h_pre_);
    const std::size_t last_input = dynamics ? h_ - 2 : h_ - 1;
    GraphModel::Step final_step{};
    for (std::size_t t = 0; t <= last_input; ++t) {
      NodePtr input = rows[t];
      if (c.condition_on_actions) {
        Tensor a = Tensor::zeros({c.d_act});
        for (std::size_t i = 0; i < c.d_act; ++i) a[i] = norm_act_[t * c.d_act + i];
        input = concat1d(input, make_constant(std::move(a)));
      }
      final_step = gm_.step(input, h);
      h = final_step.hidden;
    }
    NodePtr target = rows[h_ - 1];
    NodePtr f = mean(gm_.nll(target, final_step));
    if (need_grad) {
      backward(f);
      for (std::size_t t = 0; t < h_; ++t) {
        const Tensor& g = rows[t]->grad;
        if (!g.empty()) {
          for (std::size_t i = 0; i < O; ++i) (*grad_out)[t * O + i] = g[i];
        }
      }
    }
    return f->value.item();
  }

 private:
  const RaptModel* model_;
  GraphModel gm_;
  Tensor h_pre_;
  std::size_t h_ = 0;
  std::vector<double> norm_act_;
};

}  // namespace

namespace {

/// Teacher-forced expected trajectory in normalized space: row t holds the
/// model's prediction for normalized observation t given the actual history
/// from h_pre. For the dynamics objective row 0 has no prediction and keeps
/// the input value (zero residual there).
Tensor reconstruction_baseline(const RaptModel& model, const TrajectoryLog& window,
                               const Tensor& h_pre, const Tensor& x_norm) {
  const ModelConfig& c = model.config;
  const std::size_t H = window.length();
  const bool dynamics = c.objective == Objective::kDynamics;
  FlatNet<double> net = make_flat_f64(model);
  auto scratch = net.make_scratch();
  std::vector<double> h(h_pre.data(), h_pre.data() + h_pre.size());
  std::vector<double> input(c.input_dim()), mu(c.d_obs), lv(c.d_obs);
  Tensor baseline = x_norm;
  for (std::size_t t = 0; t + (dynamics ? 1 : 0) < H; ++t) {
    for (std::size_t i = 0; i < c.d_obs; ++i) input[i] = x_norm[t * c.d_obs + i];
    if (c.condition_on_actions) net.normalize_act(window.act_row(t), input.data() + c.d_obs);
    net.step(input.data(), h.data(), h.data(), mu.data(), lv.data(), scratch);
    const std::size_t target_row = dynamics ? t + 1 : t;
    for (std::size_t i = 0; i < c.d_obs; ++i) baseline[target_row * c.d_obs + i] = mu[i];
  }
  return baseline;
}

}  // namespace

SaliencyMap integrated_gradients_time(const RaptModel& model, const TrajectoryLog& window,
                                      const Tensor& h_pre, const IgOptions& opts,
                                      std::size_t window_start) {
  if (opts.steps < 1) throw std::invalid_argument("saliency: integration steps must be >= 1");
  WindowObjective objective(model, window, h_pre);
  Tensor x = objective.normalized_input(window);
  Tensor baseline = opts.baseline == BaselineKind::kTrainMean
                        ? Tensor::zeros(x.shape())
                        : reconstruction_baseline(model, window, h_pre, x);
  IgCoreResult core = integrated_gradients(
      [&objective](const Tensor& p, Tensor* g) { return objective(p, g); }, x, baseline,
      opts.steps);

  SaliencyMap map;
  map.window_start = window_start;
  map.window_end = window_start + window.length();
  map.h = window.length();
  map.d_obs = model.config.d_obs;
  map.attributions.assign(core.attributions.data(),
                          core.attributions.data() + core.attributions.size());
  map.completeness_gap = core.completeness_gap;
  map.baseline_kind = to_string(opts.baseline);
  map.f_input = core.f_input;
  map.f_baseline = core.f_baseline;
  map.top_k = top_k_features(map, std::min<std::size_t>(opts.top_k, map.d_obs));
  return map;
}

std::vector<std::pair<std::size_t, double>> top_k_features(const SaliencyMap& map,
                                                           std::size_t k) {
  if (k > map.d_obs) throw std::invalid_argument("top_k_features: k exceeds d_obs");
  std::vector<std::pair<std::size_t, double>> agg(map.d_obs);
  for (std::size_t i = 0; i < map.d_obs; ++i) agg[i] = {i, 0.0};
  for (std::size_t t = 0; t < map.h; ++t) {
    for (std::size_t i = 0; i < map.d_obs; ++i) {
      agg[i].second = std::max(agg[i].second, std::abs(map.at(t, i)));
    }
  }
  std::sort(agg.begin(), agg.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;  // ties: lower dimension first
  });
  agg.resize(k);
  return agg;
}

void emit_heatmap(const SaliencyMap& map, const std::string& path_prefix) {
  if (map.top_k.empty()) throw std::invalid_argument("emit_heatmap: map has no top-k ranking");
  {
    std::ofstream csv(path_prefix + ".csv");
    if (!csv) throw std::runtime_error("emit_heatmap: cannot open " + path_prefix + ".csv");
    csv << "t";
    for (const auto& [dim, score] : map.top_k) csv << ",dim_" << dim;
    csv << "\n";
    for (std::size_t t = 0; t < map.h; ++t) {
      csv << map.window_start + t;
      for (const auto& [dim, score] : map.top_k) {
        csv << "," << shortest_double(map.at(t, dim));
      }
      csv << "\n";
    }
  }
  {
    std::ofstream svg(path_prefix + ".svg");
    if (!svg) throw std::runtime_error("emit_heatmap: cannot open " + path_prefix + ".svg");
    const std::size_t k = map.top_k.size();
    const double cell_w = std::max(2.0, 800.0 / static_cast<double>(map.h));
    const double cell_h = 28.0;
    const double label_w = 70.0;
    const double width = label_w + cell_w * static_cast<double>(map.h) + 10.0;
    const double height = cell_h * static_cast<double>(k) + 40.0;
    double max_abs = 0.0;
    for (const auto& [dim, score] : map.top_k) max_abs = std::max(max_abs, score);
    if (max_abs == 0.0) max_abs = 1.0;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    svg << "<text x=\"4\" y=\"16\" font-size=\"12\">window " << map.window_start << ".."
        << map.window_end << " (signed attribution)</text>\n";
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t dim = map.top_k[r].first;
      const double y = 24.0 + cell_h * static_cast<double>(r);
      svg << "<text x=\"4\" y=\"" << y + cell_h * 0.65 << "\" font-size=\"11\">dim " << dim
          << "</text>\n";
      for (std::size_t t = 0; t < map.h; ++t) {
        const double v = map.at(t, dim) / max_abs;  // [-1, 1]
        const double mag = std::min(1.0, std::abs(v));
        int rch = 255, gch = 255, bch = 255;
        if (v >= 0.0) {
          gch = bch = static_cast<int>(255.0 * (1.0 - mag));
        } else {
          rch = gch = static_cast<int>(255.0 * (1.0 - mag));
        }
        svg << "<rect x=\"" << label_w + cell_w * static_cast<double>(t) << "\" y=\"" << y
            << "\" width=\"" << cell_w << "\" height=\"" << cell_h << "\" fill=\"rgb(" << rch
            << "," << gch << "," << bch << ")\"/>\n";
      }
    }
    svg << "</svg>\n";
  }
}

}  // namespace rapt
