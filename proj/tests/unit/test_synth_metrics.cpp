#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "rapt/metrics.hpp"
#include "rapt/rng.hpp"
#include "rapt/synth.hpp"

using namespace rapt;

namespace {

WorldConfig small_world() {
  WorldConfig w;
  w.d_joints = 3;
  w.episode_len = 200;
  w.seed = 17;
  return w;
}

/// O(n^2) pairwise AUROC oracle, ties count one half.
double auroc_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels) {
  double num = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) num += 1.0;
      else if (scores[i] == scores[j]) num += 0.5;
    }
  }
  for (int l : labels) n_neg += l ? 0 : 1;
  return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Exhaustive threshold-sweep oracle for tpr_at_episodic_fpr.
TprResult tpr_sweep_oracle(const std::vector<double>& nominal,
                           const std::vector<double>& anomalous, double budget) {
  std::vector<double> candidates = nominal;
  std::sort(candidates.begin(), candidates.end());
  auto fpr_at = [&](double thr) {
    std::size_t c = 0;
    for (double s : nominal) c += s > thr ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(nominal.size());
  };
  double thr = -std::numeric_limits<double>::infinity();
  if (fpr_at(thr) > budget) {
    for (double c : candidates) {
      if (fpr_at(c) <= budget) {
        thr = c;
        break;
      }
    }
  }
  std::size_t hits = 0;
  for (double s : anomalous) hits += s > thr ? 1 : 0;
  return {anomalous.empty() ? 0.0
                            : static_cast<double>(hits) / static_cast<double>(anomalous.size()),
          thr};
}

}  // namespace

TEST_CASE("velocity channels are exact finite differences of positions") {
  WorldConfig w = small_world();
  w.process_noise = 0.0;
  w.sensor_noise = 0.0;
  World world(w);
  TrajectoryLog log = world.episode(0);
  const std::size_t J = w.d_joints;
  for (std::size_t t = 1; t < log.length(); ++t) {
    for (std::size_t j = 0; j < J; ++j) {
      const double fd = (log.obs_row(t)[j] - log.obs_row(t - 1)[j]) / w.dt;
      CHECK(log.obs_row(t)[J + j] == fd);
    }
  }
  // identity also holds with noise on (velocities differentiate recorded positions)
  WorldConfig wn = small_world();
  World world_n(wn);
  TrajectoryLog log_n = world_n.episode(0);
  for (std::size_t t = 1; t < log_n.length(); ++t) {
    for (std::size_t j = 0; j < J; ++j) {
      const double fd = (log_n.obs_row(t)[j] - log_n.obs_row(t - 1)[j]) / wn.dt;
      CHECK(log_n.obs_row(t)[J + j] == doctest::Approx(fd).epsilon(1e-12));
    }
  }
}

TEST_CASE("same seed produces bit-identical datasets") {
  WorldConfig w = small_world();
  auto a = generate_nominal(w, 3);
  auto b = generate_nominal(w, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].obs == b[i].obs);
  w.seed += 1;
  auto c = generate_nominal(w, 1);
  CHECK(c[0].obs != a[0].obs);
}

TEST_CASE("position autocorrelation peaks at the configured period") {
  WorldConfig w;
  w.d_joints = 2;
  w.episode_len = 500;
  w.n_freqs = 1;
  w.freq_lo = w.freq_hi = 0.5;  // exactly 100 steps at dt=0.02
  w.process_noise = 0.001;
  w.seed = 23;
  World world(w);
  CHECK(world.dominant_period_steps() == doctest::Approx(100.0));
  TrajectoryLog log = world.episode(0);
  const std::size_t T = log.length();
  std::vector<double> x(T);
  for (std::size_t t = 0; t < T; ++t) x[t] = log.obs_row(t)[0];
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(T);
  auto autocorr = [&](std::size_t lag) {
    double acc = 0;
    for (std::size_t t = 0; t + lag < T; ++t) acc += (x[t] - mean) * (x[t + lag] - mean);
    return acc / static_cast<double>(T - lag);
  };
  std::size_t best_lag = 50;
  double best = -1e300;
  for (std::size_t lag = 50; lag <= 150; ++lag) {
    const double v = autocorr(lag);
    if (v > best) {
      best = v;
      best_lag = lag;
    }
  }
  CHECK(std::abs(static_cast<double>(best_lag) - 100.0) <= 1.0);
}

TEST_CASE("sensor freeze holds the last healthy value for the whole window") {
  World world(small_world());
  TrajectoryLog log = world.episode(1);
  FaultSpec spec;
  spec.kind = FaultKind::kSensorFreeze;
  spec.onset = 60;
  spec.duration = 40;
  spec.channels = {2};
  FaultResult res = inject_fault(log, spec, 1);
  const double held = log.obs_row(59)[2];
  for (std::size_t t = 60; t < 100; ++t) {
    CHECK(res.log.obs_row(t)[2] == held);
    CHECK(res.step_labels[t] == 1);
  }
  CHECK(res.step_labels[59] == 0);
  CHECK(res.step_labels[100] == 0);
  // d identical consecutive values
  std::set<double> values;
  for (std::size_t t = 60; t < 100; ++t) values.insert(res.log.obs_row(t)[2]);
  CHECK(values.size() == 1);
}

TEST_CASE("magnitude zero is the identity for bias, burst and gain") {
  World world(small_world());
  TrajectoryLog log = world.episode(2);
  for (FaultKind kind : {FaultKind::kSensorBias, FaultKind::kNoiseBurst, FaultKind::kGainChange}) {
    FaultSpec spec;
    spec.kind = kind;
    spec.onset = 50;
    spec.duration = 30;
    spec.magnitude = 0.0;
    spec.channels = {1, 4};
    FaultResult res = inject_fault(log, spec, 2);
    CHECK(res.log.obs == log.obs);
  }
}

TEST_CASE("dropout on velocity channels breaks the finite-difference identity") {
  WorldConfig w = small_world();
  World world(w);
  TrajectoryLog log = world.episode(3);
  FaultSpec spec;
  spec.kind = FaultKind::kDropout;
  spec.onset = 80;
  spec.duration = 50;
  spec.channels = {w.d_joints + 1};  // a velocity channel
  FaultResult res = inject_fault(log, spec, 3);
  // before onset the identity holds; inside the window it cannot
  const std::size_t j = 1, J = w.d_joints;
  for (std::size_t t = 81; t < 130; ++t) {
    const double fd = (res.log.obs_row(t)[j] - res.log.obs_row(t - 1)[j]) / w.dt;
    CHECK(res.log.obs_row(t)[J + j] == 0.0);
    CHECK(std::abs(fd) > 1e-6);  // recomputation disagrees with the zeroed channel
  }
}

TEST_CASE("dynamics shift regenerates a phase-continuous tail") {
  WorldConfig w = small_world();
  w.process_noise = 0.0;
  w.sensor_noise = 0.0;
  World world(w);
  TrajectoryLog nominal = world.episode(4);
  FaultSpec spec;
  spec.kind = FaultKind::kDynamicsShift;
  spec.onset = 100;
  spec.duration = 100;
  spec.magnitude = 0.5;
  FaultResult res = inject_fault(world, 4, spec, 4);
  // identical prefix up to the last nominal step, diverging from onset on
  for (std::size_t t = 0; t < 100; ++t) {
    CHECK(res.log.obs_row(t)[0] == doctest::Approx(nominal.obs_row(t)[0]).epsilon(1e-12));
  }
  CHECK(res.log.obs_row(100)[0] != nominal.obs_row(100)[0]);
  CHECK(std::abs(res.log.obs_row(100)[0] - nominal.obs_row(100)[0]) < 0.2);  // continuous-ish
  double max_diff = 0;
  for (std::size_t t = 110; t < 200; ++t) {
    max_diff = std::max(max_diff, std::abs(res.log.obs_row(t)[0] - nominal.obs_row(t)[0]));
  }
  CHECK(max_diff > 0.05);
  // velocities still differentiate the recorded positions
  for (std::size_t t = 1; t < 200; ++t) {
    const double fd = (res.log.obs_row(t)[0] - res.log.obs_row(t - 1)[0]) / w.dt;
    CHECK(res.log.obs_row(t)[w.d_joints] == doctest::Approx(fd).epsilon(1e-12));
  }
}

TEST_CASE("every labeled step differs from the nominal twin") {
  WorldConfig w = small_world();
  World world(w);
  Rng rng(71);
  std::size_t episode = 10;
  for (const FaultTemplate& tmpl : default_fault_suite()) {
    FaultSpec spec = instantiate_fault(tmpl, w, rng);
    spec.validate(w.episode_len, w.d_obs());
    TrajectoryLog nominal = world.episode(episode);
    FaultResult res = inject_fault(world, episode, spec, 1000 + episode);
    REQUIRE(res.step_labels.size() == nominal.length());
    for (std::size_t t = 0; t < nominal.length(); ++t) {
      if (!res.step_labels[t]) continue;
      bool differs = false;
      for (std::size_t i = 0; i < w.d_obs() && !differs; ++i) {
        differs = res.log.obs_row(t)[i] != nominal.obs_row(t)[i];
      }
      CHECK(differs);
    }
    ++episode;
  }
}

TEST_CASE("fault-spec validation catches bad inputs") {
  WorldConfig w = small_world();
  FaultSpec spec;
  spec.kind = FaultKind::kSensorBias;
  spec.onset = 180;
  spec.duration = 40;  // exceeds 200
  spec.channels = {0};
  CHECK_THROWS_AS(spec.validate(w.episode_len, w.d_obs()), std::invalid_argument);
  spec.duration = 10;
  spec.magnitude = -1.0;
  CHECK_THROWS_AS(spec.validate(w.episode_len, w.d_obs()), std::invalid_argument);
  spec.magnitude = 1.0;
  spec.channels = {99};
  CHECK_THROWS_AS(spec.validate(w.episode_len, w.d_obs()), std::invalid_argument);
  World world(w);
  FaultSpec shift;
  shift.kind = FaultKind::kDynamicsShift;
  shift.onset = 10;
  shift.duration = 10;
  CHECK_THROWS_AS(inject_fault(world.episode(0), shift, 0), std::invalid_argument);
}

TEST_CASE("auroc: separated scores give 1.0, hand case gives exact value") {
  CHECK(auroc({1, 2, 3, 10, 11, 12}, {0, 0, 0, 1, 1, 1}) == 1.0);
  // negatives {1,2,5}, positives {3,4,6}: 7 of 9 pairs ordered correctly
  CHECK(auroc({1, 2, 5, 3, 4, 6}, {0, 0, 0, 1, 1, 1}) == doctest::Approx(7.0 / 9.0));
  CHECK_THROWS_AS(auroc({1, 2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("auroc on independent labels concentrates near 0.5") {
  Rng rng(81);
  const std::size_t n = 10000;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.normal();
    labels[i] = rng.uniform01() < 0.5 ? 1 : 0;
  }
  CHECK(std::abs(auroc(scores, labels) - 0.5) < 0.02);
}

TEST_CASE("auroc matches the O(n^2) pairwise oracle exactly, ties included") {
  Rng rng(82);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 200;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // quantized scores force ties
      scores[i] = std::round(rng.normal() * 4.0) / 4.0;
      labels[i] = rng.uniform01() < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    CHECK(auroc(scores, labels) == auroc_bruteforce(scores, labels));
  }
}

TEST_CASE("auroc is invariant under strictly monotone transforms") {
  Rng rng(83);
  std::vector<double> scores(300);
  std::vector<int> labels(300);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.normal();
    labels[i] = rng.uniform01() < 0.5 ? 1 : 0;
  }
  labels[0] = 1;
  labels[1] = 0;
  std::vector<double> transformed = scores;
  for (double& s : transformed) s = std::exp(0.7 * s) + 3.0;
  CHECK(auroc(scores, labels) == auroc(transformed, labels));
}

TEST_CASE("tpr_at_episodic_fpr trivial and budget-arithmetic cases") {
  // all anomalous above all nominal
  TprResult r = tpr_at_episodic_fpr({1, 2, 3}, {10, 11}, 0.005);
  CHECK(r.tpr == 1.0);
  // 200 nominal at 0.5% budget: at most one may exceed the threshold
  std::vector<double> nominal(200);
  for (std::size_t i = 0; i < 200; ++i) nominal[i] = static_cast<double>(i);
  TprResult r2 = tpr_at_episodic_fpr(nominal, {500.0}, 0.005);
  std::size_t above = 0;
  for (double s : nominal) above += s > r2.threshold ? 1 : 0;
  CHECK(above <= 1);
  CHECK(r2.threshold == 198.0);  // second-largest nominal score
  CHECK(r2.tpr == 1.0);
}

TEST_CASE("tpr_at_episodic_fpr matches the exhaustive sweep oracle") {
  Rng rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> nominal(137), anomalous(91);
    for (double& s : nominal) s = std::round(rng.normal() * 8.0) / 8.0;
    for (double& s : anomalous) s = std::round((rng.normal() + 1.0) * 8.0) / 8.0;
    for (double budget : {0.005, 0.01, 0.05, 0.2}) {
      TprResult got = tpr_at_episodic_fpr(nominal, anomalous, budget);
      TprResult want = tpr_sweep_oracle(nominal, anomalous, budget);
      CHECK(got.threshold == want.threshold);
      CHECK(got.tpr == want.tpr);
    }
  }
}

TEST_CASE("instantiated faults stay inside their channel class") {
  WorldConfig w = small_world();
  Rng rng(93);
  for (const FaultTemplate& tmpl : default_fault_suite()) {
    for (int i = 0; i < 5; ++i) {
      FaultSpec spec = instantiate_fault(tmpl, w, rng);
      spec.validate(w.episode_len, w.d_obs());
      if (tmpl.kind == FaultKind::kDynamicsShift) continue;
      for (std::size_t c : spec.channels) {
        switch (tmpl.channel_class) {
          case FaultTemplate::ChannelClass::kPos: CHECK(c < w.d_joints); break;
          case FaultTemplate::ChannelClass::kVel:
            CHECK(c >= w.d_joints);
            CHECK(c < 2 * w.d_joints);
            break;
          case FaultTemplate::ChannelClass::kBase: CHECK(c >= 2 * w.d_joints); break;
          case FaultTemplate::ChannelClass::kAny: CHECK(c < w.d_obs()); break;
        }
      }
    }
  }
}
