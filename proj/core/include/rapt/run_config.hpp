#pragma once

#include <string>

#include "rapt/detect.hpp"
#include "rapt/diagnosis.hpp"
#include "rapt/model.hpp"
#include "rapt/synth.hpp"
#include "rapt/training.hpp"

namespace rapt {

struct DetectionConfig {
  GateConfig gates;
  std::size_t t_cal = 1500;  // calibration stream length in steps
};

struct BenchmarkConfig {
  std::size_t n_nominal = 200;
  std::size_t n_faulted = 200;
  double fpr_budget = 0.005;
  std::uint64_t seed = 99;
};

/// Declarative configuration covering the whole pipeline. Every field has a
/// default; unknown JSON fields are rejected before any work starts.
struct RunConfig {
  WorldConfig world;
  ModelConfig model;
  TrainConfig train;
  DetectionConfig detection;
  BenchmarkConfig benchmark;
  EndpointConfig endpoint;

  void validate() const;
};

/// Desk-scale defaults: an 8-joint synthetic world and a model/training
/// recipe sized so the full quickstart runs in minutes on a laptop CPU.
RunConfig default_run_config();

RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::string& path);

/// Observation-layout group tags for the synthetic world ("pos"/"vel"/"base").
std::vector<std::string> synth_dim_groups(const WorldConfig& world);

}  // namespace rapt
