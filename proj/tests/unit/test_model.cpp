#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "rapt/model.hpp"
#include "rapt/rng.hpp"
#include "test_util.hpp"

using namespace rapt;

namespace {

void set_param(RaptModel& m, const std::string& name, double v) {
  Tensor& t = m.params.at(name)->value;
  t.fill(v);
}

void randomize_param(RaptModel& m, const std::string& name, Rng& rng, double scale) {
  Tensor& t = m.params.at(name)->value;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
}

/// Independent hand-unrolled encoder: plain loops, no autodiff machinery.
std::vector<double> hand_encode(const RaptModel& m, const std::vector<double>& input) {
  const ModelConfig& c = m.config;
  const std::size_t M = c.d_model;
  auto matvec = [&](const std::string& wname, const std::string& bname,
                    const std::vector<double>& x) {
    const Tensor& w = m.params.at(wname)->value;
    const Tensor& b = m.params.at(bname)->value;
    std::vector<double> y(w.dim(0));
    for (std::size_t i = 0; i < w.dim(0); ++i) {
      double acc = b[i];
      for (std::size_t j = 0; j < w.dim(1); ++j) acc += w.at2(i, j) * x[j];
      y[i] = acc;
    }
    return y;
  };
  std::vector<double> x = matvec("encoder.proj.weight", "encoder.proj.bias", input);
  for (std::size_t blk = 0; blk < c.n_blocks; ++blk) {
    const std::string prefix = "encoder.block" + std::to_string(blk);
    std::vector<double> y = matvec(prefix + ".linear.weight", prefix + ".linear.bias", x);
    for (std::size_t i = 0; i < M; ++i) y[i] += x[i];
    double mu = 0;
    for (double v : y) mu += v;
    mu /= static_cast<double>(M);
    double var = 0;
    for (double v : y) var += (v - mu) * (v - mu);
    var /= static_cast<double>(M);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    const Tensor& gamma = m.params.at(prefix + ".ln.gamma")->value;
    const Tensor& beta = m.params.at(prefix + ".ln.beta")->value;
    for (std::size_t i = 0; i < M; ++i) {
      const double v = (y[i] - mu) * inv * gamma[i] + beta[i];
      x[i] = v > 0 ? v : 0;
    }
  }
  return x;
}

TrajectoryLog random_log(std::size_t d_obs, std::size_t steps, Rng& rng) {
  TrajectoryLog log(d_obs, 0);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> row(d_obs);
    for (double& v : row) v = rng.normal();
    log.append(row);
  }
  return log;
}

}  // namespace

TEST_CASE("encode with zero residual branch reduces to ReLU(LN(x))") {
  ModelConfig cfg = test::tiny_config(4, 8, 6, 1);
  RaptModel m = init_model(cfg, 1);
  set_param(m, "encoder.block0.linear.weight", 0.0);
  set_param(m, "encoder.block0.linear.bias", 0.0);
  set_param(m, "encoder.block0.ln.gamma", 1.0);
  set_param(m, "encoder.block0.ln.beta", 0.0);

  Rng rng(5);
  Tensor in = test::random_tensor({4}, rng);
  GraphModel gm(m);
  NodePtr x = add(matmul(m.params.at("encoder.proj.weight"), make_constant(in)),
                  m.params.at("encoder.proj.bias"));
  NodePtr expected = relu(layer_norm(x, m.params.at("encoder.block0.ln.gamma"),
                                     m.params.at("encoder.block0.ln.beta")));
  NodePtr got = gm.encode(make_constant(in));
  REQUIRE(got->value.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(got->value[i] == doctest::Approx(expected->value[i]).epsilon(1e-14));
  }
}

TEST_CASE("encode output shape is [d_model]") {
  ModelConfig cfg = test::tiny_config(5, 12, 7, 3);
  RaptModel m = init_model(cfg, 2);
  GraphModel gm(m);
  Rng rng(6);
  NodePtr out = gm.encode(make_constant(test::random_tensor({5}, rng)));
  CHECK(out->value.shape() == std::vector<std::size_t>{12});
}

TEST_CASE("encode matches an independently hand-unrolled computation") {
  ModelConfig cfg = test::tiny_config(4, 8, 6, 2);
  RaptModel m = init_model(cfg, 3);
  Rng rng(9);
  for (const auto& [name, node] : m.params) {
    randomize_param(m, name, rng, 0.5);
  }
  std::vector<double> input = {0.3, -1.2, 0.7, 2.1};
  const std::vector<double> expected = hand_encode(m, input);
  GraphModel gm(m);
  NodePtr got = gm.encode(make_constant(Tensor::vector(input)));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(got->value[i] - expected[i]) <= 1e-12);
  }
}

TEST_CASE("step NLL values hit the closed-form Gaussian cases") {
  // mu == target, logvar = 0
  const double base = 0.5 * std::log(2.0 * M_PI);
  Tensor target = Tensor::vector({0.0, 0.0});
  Tensor mu = Tensor::vector({0.0, 1.0});
  Tensor logvar = Tensor::zeros({2});
  Tensor out = Tensor::zeros({2});
  gaussian_nll_values<double>(2, target.data(), mu.data(), logvar.data(), out.data());
  CHECK(out[0] == doctest::Approx(base).epsilon(1e-12));            // ~0.918939
  CHECK(out[1] == doctest::Approx(base + 0.5).epsilon(1e-12));      // ~1.418939
  CHECK(out[0] == doctest::Approx(0.918939).epsilon(1e-5));
  CHECK(out[1] == doctest::Approx(1.418939).epsilon(1e-5));

  Tensor t2 = Tensor::vector({2.0});
  Tensor m2 = Tensor::vector({0.0});
  Tensor lv2 = Tensor::vector({std::log(4.0)});
  Tensor o2 = Tensor::zeros({1});
  gaussian_nll_values<double>(1, t2.data(), m2.data(), lv2.data(), o2.data());
  CHECK(o2[0] == doctest::Approx(0.5 * (std::log(2 * M_PI) + std::log(4.0) + 1.0)).epsilon(1e-12));
  CHECK(o2[0] == doctest::Approx(2.112095).epsilon(1e-5));
}

TEST_CASE("StepOutput invariants: nll_mean is the mean, logvar clamped") {
  ModelConfig cfg = test::tiny_config();
  RaptModel m = init_model(cfg, 4);
  Rng rng(8);
  TrajectoryLog log = random_log(cfg.d_obs, 3, rng);
  StepOutput out = step(m, log.obs_span(0), {}, zero_hidden(cfg));
  double acc = 0;
  for (std::size_t i = 0; i < cfg.d_obs; ++i) acc += out.nll_per_dim[i];
  CHECK(out.nll_mean == doctest::Approx(acc / cfg.d_obs).epsilon(1e-15));
  for (std::size_t i = 0; i < cfg.d_obs; ++i) {
    CHECK(out.logvar[i] >= cfg.logvar_lo);
    CHECK(out.logvar[i] <= cfg.logvar_hi);
  }
}

TEST_CASE("step rejects non-finite observations") {
  ModelConfig cfg = test::tiny_config();
  RaptModel m = init_model(cfg, 4);
  std::vector<double> bad = {1.0, std::nan(""), 0.0, 0.0};
  CHECK_THROWS_AS(step(m, bad, {}, zero_hidden(cfg)), std::invalid_argument);
}

TEST_CASE("adversarial inputs keep logvar clamped and NLL finite") {
  ModelConfig cfg = test::tiny_config();
  RaptModel m = init_model(cfg, 10);
  std::vector<double> huge = {1e6, -1e6, 1e6, -1e6};
  StepOutput out = step(m, huge, {}, zero_hidden(cfg));
  for (std::size_t i = 0; i < cfg.d_obs; ++i) {
    CHECK(out.logvar[i] >= cfg.logvar_lo);
    CHECK(out.logvar[i] <= cfg.logvar_hi);
    CHECK(std::isfinite(out.nll_per_dim[i]));
  }
}

TEST_CASE("forward_sequence of length 1 equals a single step") {
  ModelConfig cfg = test::tiny_config();
  RaptModel m = init_model(cfg, 5);
  Rng rng(12);
  TrajectoryLog log = random_log(cfg.d_obs, 1, rng);
  auto seq = forward_sequence(m, log, zero_hidden(cfg));
  StepOutput single = step(m, log.obs_span(0), {}, zero_hidden(cfg));
  REQUIRE(seq.size() == 1);
  CHECK(seq[0].nll_mean == single.nll_mean);
  for (std::size_t i = 0; i < cfg.d_obs; ++i) CHECK(seq[0].mu[i] == single.mu[i]);
}

TEST_CASE("outputs are causal: future observations do not matter") {
  ModelConfig cfg = test::tiny_config();
  RaptModel m = init_model(cfg, 6);
  Rng rng(13);
  TrajectoryLog log = random_log(cfg.d_obs, 6, rng);
  auto base = forward_sequence(m, log, zero_hidden(cfg));
  TrajectoryLog tampered = log;
  for (std::size_t i = 0; i < cfg.d_obs; ++i) tampered.obs_row(4)[i] += 100.0;
  auto mod = forward_sequence(m, tampered, zero_hidden(cfg));
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(base[t].nll_mean == mod[t].nll_mean);
    for (std::size_t i = 0; i < cfg.d_obs; ++i) CHECK(base[t].mu[i] == mod[t].mu[i]);
  }
  CHECK(base[4].nll_mean != mod[4].nll_mean);
}

TEST_CASE("split forward_sequence reproduces the single pass exactly") {
  ModelConfig cfg = test::tiny_config();
  RaptModel m = init_model(cfg, 7);
  Rng rng(14);
  const std::size_t T = 9, k = 4;
  TrajectoryLog log = random_log(cfg.d_obs, T, rng);
  auto whole = forward_sequence(m, log, zero_hidden(cfg));
  auto first = forward_sequence(m, log.slice(0, k), zero_hidden(cfg));
  auto second = forward_sequence(m, log.slice(k, T - k), first.back().hidden);
  REQUIRE(first.size() + second.size() == whole.size());
  for (std::size_t t = 0; t < T; ++t) {
    const StepOutput& got = t < k ? first[t] : second[t - k];
    CHECK(got.nll_mean == whole[t].nll_mean);
    for (std::size_t i = 0; i < cfg.d_obs; ++i) {
      CHECK(got.mu[i] == whole[t].mu[i]);
      CHECK(got.logvar[i] == whole[t].logvar[i]);
    }
  }
}

TEST_CASE("dynamics objective scores the next observation") {
  ModelConfig cfg = test::tiny_config();
  cfg.objective = Objective::kDynamics;
  RaptModel m = init_model(cfg, 8);
  Rng rng(15);
  TrajectoryLog log = random_log(cfg.d_obs, 5, rng);
  auto seq = forward_sequence(m, log, zero_hidden(cfg));
  CHECK(seq.size() == 4);  // length-1 outputs
  // manual check of the first step's target
  StepOutput manual = step(m, log.obs_span(0), {}, zero_hidden(cfg));
  // manual.nll is scored against obs_0; recompute against obs_1 as dynamics does
  Tensor tgt = Tensor::zeros({cfg.d_obs});
  normalize_obs(m, log.obs_row(1), tgt.data());
  Tensor nll = Tensor::zeros({cfg.d_obs});
  gaussian_nll_values<double>(cfg.d_obs, tgt.data(), manual.mu.data(), manual.logvar.data(),
                              nll.data());
  for (std::size_t i = 0; i < cfg.d_obs; ++i) {
    CHECK(seq[0].nll_per_dim[i] == doctest::Approx(nll[i]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(forward_sequence(m, log.slice(0, 1), zero_hidden(cfg)),
                  std::invalid_argument);
}

TEST_CASE("normalization round-trips to 1e-12") {
  ModelConfig cfg = test::tiny_config();
  RaptModel m = init_model(cfg, 9);
  Rng rng(16);
  std::vector<TrajectoryLog> data = {random_log(cfg.d_obs, 50, rng)};
  fit_normalization(m, data);
  std::vector<double> raw = {1.5, -2.25, 0.125, 3.75};
  std::vector<double> normed(4), back(4);
  normalize_obs(m, raw.data(), normed.data());
  denormalize_obs(m, normed.data(), back.data());
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(back[i] - raw[i]) <= 1e-12);
}

TEST_CASE("parameter count for the default architecture is pinned") {
  ModelConfig cfg;  // paper-scale defaults: d_model=256, 4 blocks, d_latent=192
  cfg.d_obs = 24;
  CHECK(expected_param_count(cfg) == 777328);
  RaptModel m = init_model(cfg, 0);
  CHECK(m.params.total_elements() == 777328);

  ModelConfig tiny = test::tiny_config(4, 8, 6, 2);
  RaptModel mt = init_model(tiny, 0);
  CHECK(mt.params.total_elements() == expected_param_count(tiny));
}

TEST_CASE("graph forward equals the forward-only flat path") {
  ModelConfig cfg = test::tiny_config(4, 8, 6, 2);
  RaptModel m = init_model(cfg, 11);
  Rng rng(21);
  std::vector<TrajectoryLog> data = {random_log(cfg.d_obs, 40, rng)};
  fit_normalization(m, data);
  TrajectoryLog win = data[0].slice(0, 6);

  // flat (no graph allocation) path
  auto flat_outs = forward_sequence(m, win, zero_hidden(cfg));

  // graph path
  GraphModel gm(m);
  NodePtr h = make_constant(zero_hidden(cfg));
  for (std::size_t t = 0; t < win.length(); ++t) {
    Tensor in = Tensor::zeros({cfg.d_obs});
    normalize_obs(m, win.obs_row(t), in.data());
    GraphModel::Step s = gm.step(make_constant(in), h);
    h = s.hidden;
    for (std::size_t i = 0; i < cfg.d_obs; ++i) {
      CHECK(std::abs(s.mu->value[i] - flat_outs[t].mu[i]) <= 1e-12);
      CHECK(std::abs(s.logvar->value[i] - flat_outs[t].logvar[i]) <= 1e-12);
    }
  }
}

TEST_CASE("f32 deployment forward tracks the f64 path") {
  ModelConfig cfg = test::tiny_config(4, 8, 6, 2);
  RaptModel m = init_model(cfg, 12);
  Rng rng(22);
  std::vector<TrajectoryLog> data = {random_log(cfg.d_obs, 60, rng)};
  fit_normalization(m, data);
  auto f64_outs = forward_sequence(m, data[0].slice(0, 10), zero_hidden(cfg));

  FlatNet<float> f32 = make_flat_f32(m);
  auto scratch = f32.make_scratch();
  std::vector<float> h(cfg.d_model, 0.0f), in(cfg.d_obs), mu(cfg.d_obs), lv(cfg.d_obs);
  for (std::size_t t = 0; t < 10; ++t) {
    f32.normalize_obs(data[0].obs_row(t), in.data());
    f32.step(in.data(), h.data(), h.data(), mu.data(), lv.data(), scratch);
    for (std::size_t i = 0; i < cfg.d_obs; ++i) {
      CHECK(std::abs(mu[i] - f64_outs[t].mu[i]) < 1e-3);
    }
  }
}

TEST_CASE("action-conditioned dynamics model: forward shapes and gradients") {
  ModelConfig cfg = test::tiny_config(3, 6, 4, 1);
  cfg.d_act = 2;
  cfg.condition_on_actions = true;
  cfg.objective = Objective::kDynamics;
  RaptModel m = init_model(cfg, 31);
  Rng rng(32);
  TrajectoryLog log(3, 2);
  for (int t = 0; t < 12; ++t) {
    std::vector<double> o = {rng.normal(), rng.normal(), rng.normal()};
    std::vector<double> a = {rng.normal(), rng.normal()};
    log.append(o, a);
  }
  std::vector<TrajectoryLog> data = {log};
  fit_normalization(m, data);
  auto outs = forward_sequence(m, log.slice(0, 5), zero_hidden(cfg));
  CHECK(outs.size() == 4);

  GraphModel gm(m);
  auto loss_fn = [&] {
    NodePtr h = make_constant(zero_hidden(cfg));
    std::vector<NodePtr> means;
    for (std::size_t t = 0; t < 3; ++t) {
      Tensor in = Tensor::zeros({cfg.input_dim()});
      normalize_obs(m, log.obs_row(t), in.data());
      normalize_act(m, log.act_row(t), in.data() + cfg.d_obs);
      GraphModel::Step s = gm.step(make_constant(in), h);
      h = s.hidden;
      Tensor tgt = Tensor::zeros({cfg.d_obs});
      normalize_obs(m, log.obs_row(t + 1), tgt.data());
      means.push_back(mean(gm.nll(make_constant(tgt), s)));
    }
    NodePtr acc = means[0];
    for (std::size_t t = 1; t < means.size(); ++t) acc = add(acc, means[t]);
    return scale(acc, 1.0 / 3.0);
  };
  auto res = test::check_gradients(m.params, loss_fn);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("full tiny-model NLL gradient matches finite differences end to end") {
  ModelConfig cfg = test::tiny_config(3, 6, 4, 1);
  RaptModel m = init_model(cfg, 13);
  Rng rng(23);
  std::vector<TrajectoryLog> data = {random_log(cfg.d_obs, 20, rng)};
  fit_normalization(m, data);
  TrajectoryLog win = data[0].slice(0, 3);
  GraphModel gm(m);

  auto loss_fn = [&] {
    NodePtr h = make_constant(zero_hidden(cfg));
    std::vector<NodePtr> means;
    for (std::size_t t = 0; t < win.length(); ++t) {
      Tensor in = Tensor::zeros({cfg.d_obs});
      normalize_obs(m, win.obs_row(t), in.data());
      GraphModel::Step s = gm.step(make_constant(in), h);
      h = s.hidden;
      means.push_back(mean(gm.nll(make_constant(in), s)));
    }
    NodePtr acc = means[0];
    for (std::size_t t = 1; t < means.size(); ++t) acc = add(acc, means[t]);
    return scale(acc, 1.0 / static_cast<double>(means.size()));
  };
  auto res = test::check_gradients(m.params, loss_fn);
  CHECK(res.max_rel_err < 1e-4);
}
