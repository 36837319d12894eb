#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "rapt/io.hpp"
#include "rapt/run_config.hpp"
#include "rapt/synth.hpp"
#include "test_util.hpp"

using namespace rapt;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("rapt_io_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

RaptModel make_fitted_model(std::uint64_t seed) {
  ModelConfig cfg = test::tiny_config(6, 16, 8, 2);
  RaptModel m = init_model(cfg, seed);
  WorldConfig w;
  w.d_joints = 2;
  w.episode_len = 80;
  w.seed = seed;
  auto data = generate_nominal(w, 2);
  fit_normalization(m, data);
  return m;
}

}  // namespace

TEST_CASE("crc32 matches the standard test vector") {
  const char* s = "123456789";
  CHECK(crc32(s, 9) == 0xCBF43926u);
}

TEST_CASE("checkpoint round-trips and reproduces f32 scoring bit-exactly") {
  TempDir dir;
  RaptModel m = make_fitted_model(7);
  const std::string path = dir.file("model.rapt");
  save_checkpoint(m, path);
  RaptModel loaded = load_checkpoint(path);

  CHECK(loaded.config.d_obs == m.config.d_obs);
  CHECK(loaded.config.d_model == m.config.d_model);
  CHECK(loaded.params.size() == m.params.size());
  for (std::size_t i = 0; i < m.norm_mean.size(); ++i) {
    CHECK(loaded.norm_mean[i] == m.norm_mean[i]);  // f64 stats survive exactly
    CHECK(loaded.norm_std[i] == m.norm_std[i]);
  }

  // quantize-in-place oracle: save/load equals an explicit f32 round-trip
  RaptModel quantized = quantize_to_f32(m);
  for (const auto& [name, node] : quantized.params) {
    const Tensor& got = loaded.params.at(name)->value;
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == node->value[i]);
  }

  // f32 NLL streams from both models are bit-identical
  WorldConfig w;
  w.d_joints = 2;
  w.episode_len = 80;
  w.seed = 99;
  TrajectoryLog log = generate_nominal(w, 1)[0];
  Detector da(m), db(loaded);
  auto ra = da.score(log);
  auto rb = db.score(log);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t t = 0; t < ra.size(); ++t) CHECK(ra[t] == rb[t]);

  // a second save of the loaded model is byte-identical
  const std::string path2 = dir.file("model2.rapt");
  save_checkpoint(loaded, path2);
  CHECK(read_text_file(path) == read_text_file(path2));
}

TEST_CASE("corrupted checkpoint payload is rejected by CRC") {
  TempDir dir;
  RaptModel m = make_fitted_model(8);
  const std::string path = dir.file("model.rapt");
  save_checkpoint(m, path);
  std::string blob = read_text_file(path);
  blob[blob.size() - 100] = static_cast<char>(blob[blob.size() - 100] ^ 0x40);
  write_text_file(path, blob);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("CRC"), std::runtime_error);
}

TEST_CASE("truncated checkpoint is rejected") {
  TempDir dir;
  RaptModel m = make_fitted_model(9);
  const std::string path = dir.file("model.rapt");
  save_checkpoint(m, path);
  std::string blob = read_text_file(path);
  write_text_file(path, blob.substr(0, blob.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  write_text_file(path, "RAPx garbage");
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}

TEST_CASE("trajectory CSV round-trips exactly and rewrites byte-identically") {
  TempDir dir;
  WorldConfig w;
  w.d_joints = 2;
  w.episode_len = 40;
  w.seed = 3;
  TrajectoryLog log = generate_nominal(w, 1)[0];
  const std::string path = dir.file("ep.csv");
  write_trajectory_csv(log, path);
  TrajectoryLog back = read_trajectory_csv(path);
  CHECK(back.d_obs == log.d_obs);
  CHECK(back.length() == log.length());
  CHECK(back.obs == log.obs);  // exact: shortest round-trip decimals

  const std::string path2 = dir.file("ep2.csv");
  write_trajectory_csv(back, path2);
  CHECK(read_text_file(path) == read_text_file(path2));
}

TEST_CASE("trajectory CSV with actions round-trips") {
  TempDir dir;
  TrajectoryLog log(2, 1);
  Rng rng(5);
  for (int t = 0; t < 7; ++t) {
    std::vector<double> o = {rng.normal(), rng.normal()};
    std::vector<double> a = {rng.normal()};
    log.append(o, a);
  }
  const std::string path = dir.file("act.csv");
  write_trajectory_csv(log, path);
  TrajectoryLog back = read_trajectory_csv(path);
  CHECK(back.d_act == 1);
  CHECK(back.act == log.act);
}

TEST_CASE("trajectory CSV rejects malformed input") {
  TempDir dir;
  const std::string path = dir.file("bad.csv");
  write_text_file(path, "t,obs_0\n0,1.5\n0,2.5\n");  // non-increasing t
  CHECK_THROWS_AS(read_trajectory_csv(path), std::runtime_error);
  write_text_file(path, "t,obs_0\n0,nan\n");
  CHECK_THROWS_AS(read_trajectory_csv(path), std::runtime_error);
  write_text_file(path, "t,obs_0\n0,1.0,2.0\n");
  CHECK_THROWS_AS(read_trajectory_csv(path), std::runtime_error);
  write_text_file(path, "t,weird_0\n0,1.0\n");
  CHECK_THROWS_AS(read_trajectory_csv(path), std::runtime_error);
}

TEST_CASE("calibration profile JSON round-trips") {
  TempDir dir;
  CalibrationProfile p;
  p.d_obs = 2;
  p.tau_max = {1.5, 2.5};
  p.sigma = {0.1, 0.0};
  p.tau_global = 2.0;
  p.sigma_global = 0.25;
  p.box_min = {-1.0, 0.0};
  p.box_max = {1.0, 0.0};
  p.calibration_steps = 100;
  CalibrationProfile back = profile_from_json(profile_to_json(p));
  CHECK(back.tau_max == p.tau_max);
  CHECK(back.sigma == p.sigma);
  CHECK(back.box_min == p.box_min);
  CHECK(back.k_local == p.k_local);
  CHECK(back.warmup_steps == p.warmup_steps);

  // write -> read -> write is byte-identical
  const std::string f1 = dir.file("p1.json"), f2 = dir.file("p2.json");
  save_profile(p, f1);
  save_profile(load_profile(f1), f2);
  CHECK(read_text_file(f1) == read_text_file(f2));
}

TEST_CASE("saliency JSON round-trips") {
  TempDir dir;
  SaliencyMap map;
  map.window_start = 10;
  map.window_end = 14;
  map.h = 4;
  map.d_obs = 2;
  map.attributions = {0.5, -1.25, 0, 3, 1e-9, 2, 0.125, -7};
  map.top_k = {{1, 7.0}, {0, 1e-9}};
  map.completeness_gap = 1e-4;
  map.baseline_kind = "train_mean";
  map.f_input = 3.5;
  map.f_baseline = 1.0;
  const std::string path = dir.file("sal.json");
  save_saliency(map, path);
  SaliencyMap back = load_saliency(path);
  CHECK(back.attributions == map.attributions);
  CHECK(back.top_k == map.top_k);
  CHECK(back.f_input == map.f_input);
}

TEST_CASE("run config: defaults load from empty JSON, unknown fields rejected") {
  RunConfig def = run_config_from_json("{}");
  CHECK(def.world.d_joints == 8);
  CHECK(def.model.d_obs == 24);
  CHECK(def.train.epochs == 20);
  CHECK(def.detection.gates.k_local == 5.0);
  CHECK(def.detection.gates.k_global == 3.0);
  CHECK(def.detection.gates.delta == 0.05);
  CHECK(def.benchmark.fpr_budget == 0.005);

  CHECK_THROWS_AS(run_config_from_json("{\"wrld\": {}}"), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json("{\"world\": {\"d_joint\": 4}}"), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json("{\"train\": {\"schedule\": {\"warm\": 0.1}}}"),
                  std::invalid_argument);

  // full round-trip through the serializer
  RunConfig back = run_config_from_json(run_config_to_json(def));
  CHECK(back.model.d_model == def.model.d_model);
  CHECK(back.train.windows_per_epoch == def.train.windows_per_epoch);
  CHECK(back.endpoint.model == def.endpoint.model);
}

TEST_CASE("run config overrides apply and are validated") {
  RunConfig cfg = run_config_from_json(
      R"({"world": {"d_joints": 4}, "model": {"d_model": 32, "d_latent": 24, "n_blocks": 1},
          "train": {"epochs": 2}})");
  CHECK(cfg.world.d_joints == 4);
  CHECK(cfg.model.d_obs == 12);  // resolved from the world
  CHECK(cfg.model.d_model == 32);
  CHECK_THROWS_AS(
      run_config_from_json(R"({"model": {"d_latent": 300, "d_model": 16}})"),
      std::invalid_argument);
}

TEST_CASE("verdict JSON line carries the gate structure") {
  AnomalyVerdict v;
  v.t = 42;
  v.anomaly = true;
  v.gate1 = {true, 3, 0.5, 2.0};
  v.gate3.fired = true;
  v.gate3.dims = {1, 2};
  v.nll_per_dim = {0.1, 0.2};
  v.nll_mean = 0.15;
  const std::string line = verdict_to_json_line(v);
  CHECK(line.find("\"t\":42") != std::string::npos);
  CHECK(line.find("\"anomaly\":true") != std::string::npos);
  CHECK(line.find("\"dims\":[1,2]") != std::string::npos);
  CHECK(line.find('\n') == std::string::npos);  // one line per record
}
