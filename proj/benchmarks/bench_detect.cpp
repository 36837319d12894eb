// Hot-path benchmarks: the per-step detect latency budget is the number that
// decides whether the monitor fits inside a 50 Hz control loop.

#include <benchmark/benchmark.h>

#include <cmath>

#include "rapt/detect.hpp"
#include "rapt/model.hpp"
#include "rapt/rng.hpp"
#include "rapt/synth.hpp"
#include "rapt/training.hpp"

namespace {

rapt::TrajectoryLog smooth_log(std::size_t d_obs, std::size_t steps, std::uint64_t seed) {
  rapt::Rng rng(seed);
  std::vector<double> phase(d_obs);
  for (double& p : phase) p = rng.uniform(0, 2 * M_PI);
  rapt::TrajectoryLog log(d_obs, 0);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> row(d_obs);
    for (std::size_t i = 0; i < d_obs; ++i) {
      row[i] = std::sin(0.05 * static_cast<double>(t) + phase[i]) + 0.01 * rng.normal();
    }
    log.append(row);
  }
  return log;
}

struct DeployFixture {
  rapt::RaptModel model;
  rapt::Detector detector;
  rapt::CalibrationProfile profile;
  rapt::TrajectoryLog log;

  DeployFixture(std::size_t d_obs, std::size_t d_model)
      : model(rapt::init_model(make_config(d_obs, d_model), 7)),
        detector((fit(model, d_obs), model)),
        profile(detector.calibrate(smooth_log(d_obs, 300, 11))),
        log(smooth_log(d_obs, 512, 13)) {}

  static rapt::ModelConfig make_config(std::size_t d_obs, std::size_t d_model) {
    rapt::ModelConfig c;
    c.d_obs = d_obs;
    c.d_model = d_model;
    c.n_blocks = 4;
    c.d_latent = d_model * 3 / 4;
    return c;
  }

  static void fit(rapt::RaptModel& m, std::size_t d_obs) {
    std::vector<rapt::TrajectoryLog> data = {smooth_log(d_obs, 300, 3)};
    rapt::fit_normalization(m, data);
  }
};

void BM_DetectStep(benchmark::State& state) {
  DeployFixture fx(static_cast<std::size_t>(state.range(0)),
                   static_cast<std::size_t>(state.range(1)));
  rapt::StreamState stream = fx.detector.make_stream();
  std::size_t t = 0;
  for (auto _ : state) {
    rapt::AnomalyVerdict v =
        fx.detector.detect(fx.profile, stream, fx.log.obs_span(t % fx.log.length()));
    benchmark::DoNotOptimize(v.anomaly);
    ++t;
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()));
}
BENCHMARK(BM_DetectStep)->Args({140, 256})->Args({24, 64})->Unit(benchmark::kMicrosecond);

void BM_ForwardStepF32(benchmark::State& state) {
  const std::size_t d_obs = static_cast<std::size_t>(state.range(0));
  const std::size_t d_model = static_cast<std::size_t>(state.range(1));
  rapt::RaptModel model = rapt::init_model(DeployFixture::make_config(d_obs, d_model), 5);
  rapt::FlatNet<float> net = rapt::make_flat_f32(model);
  auto scratch = net.make_scratch();
  std::vector<float> in(d_obs, 0.5f), h(d_model, 0.0f), mu(d_obs), lv(d_obs);
  for (auto _ : state) {
    net.step(in.data(), h.data(), h.data(), mu.data(), lv.data(), scratch);
    benchmark::DoNotOptimize(mu[0]);
  }
}
BENCHMARK(BM_ForwardStepF32)->Args({140, 256})->Args({24, 64})->Unit(benchmark::kMicrosecond);

void BM_CalibrateRun(benchmark::State& state) {
  DeployFixture fx(24, 64);
  rapt::TrajectoryLog run = smooth_log(24, static_cast<std::size_t>(state.range(0)), 17);
  for (auto _ : state) {
    rapt::CalibrationProfile p = fx.detector.calibrate(run);
    benchmark::DoNotOptimize(p.tau_global);
  }
}
BENCHMARK(BM_CalibrateRun)->Arg(1500)->Unit(benchmark::kMillisecond);

void BM_TrainWindow(benchmark::State& state) {
  rapt::WorldConfig w;
  auto data = rapt::generate_nominal(w, 4);
  rapt::ModelConfig mc;
  mc.d_obs = w.d_obs();
  mc.d_model = 64;
  mc.n_blocks = 2;
  mc.d_latent = 48;
  rapt::RaptModel model = rapt::init_model(mc, 3);
  rapt::fit_normalization(model, data);
  rapt::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  tc.windows_per_epoch = 8;
  tc.unroll = 50;
  tc.holdout_fraction = 0.0;
  for (auto _ : state) {
    rapt::RaptModel m = model;  // deep parameter copy
    benchmark::DoNotOptimize(rapt::train(m, data, tc).train_nll[0]);
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 8);
}
BENCHMARK(BM_TrainWindow)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
