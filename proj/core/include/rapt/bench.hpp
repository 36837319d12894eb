#pragma once

#include "rapt/detect.hpp"
#include "rapt/run_config.hpp"
#include "rapt/synth.hpp"

namespace rapt {

/// Matched nominal/faulted evaluation: generates fresh episodes (disjoint
/// from the training index range), scores them with detect_episode and
/// reports AUROC plus TPR at the episodic FPR budget for each gate
/// combination.
EvalReport run_benchmark(const Detector& detector, const CalibrationProfile& profile,
                         const WorldConfig& world_cfg, const std::vector<FaultTemplate>& suite,
                         const BenchmarkConfig& bench_cfg,
                         std::size_t first_eval_episode_index = 100000);

}  // namespace rapt
