#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rapt/detect.hpp"
#include "rapt/model.hpp"
#include "rapt/saliency.hpp"
#include "rapt/synth.hpp"
#include "rapt/trajectory.hpp"

namespace rapt {

/// IEEE 802.3 CRC-32 (poly 0xEDB88320, reflected, init/final 0xFFFFFFFF).
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

/// Shortest decimal representation that round-trips the double exactly.
std::string format_double(double v);

// --- checkpoint container -------------------------------------------------
// "RAPT" magic, u32 version, u64 manifest length, JSON manifest, raw
// little-endian f32 tensor payload (named table with offsets), trailing
// CRC-32 of the payload.

void save_checkpoint(const RaptModel& model, const std::string& path);
RaptModel load_checkpoint(const std::string& path);

/// Round-trips the model's parameters through f32, exactly as a save/load
/// cycle would (normalization stats stay f64).
RaptModel quantize_to_f32(const RaptModel& model);

// --- trajectory CSV ---------------------------------------------------------
// Header `t,obs_0..obs_{d-1}[,act_0..act_{k-1}]`, one row per step, strictly
// increasing t, shortest-round-trip decimals. write(read(file)) is
// byte-identical.

void write_trajectory_csv(const TrajectoryLog& log, const std::string& path);
TrajectoryLog read_trajectory_csv(const std::string& path);

// --- JSON artifacts ---------------------------------------------------------

void save_profile(const CalibrationProfile& profile, const std::string& path);
CalibrationProfile load_profile(const std::string& path);
std::string profile_to_json(const CalibrationProfile& profile);
CalibrationProfile profile_from_json(const std::string& text);

std::string verdict_to_json_line(const AnomalyVerdict& v);

void save_saliency(const SaliencyMap& map, const std::string& path);
SaliencyMap load_saliency(const std::string& path);

std::string eval_report_to_json(const EvalReport& report);
void save_eval_report(const EvalReport& report, const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace rapt
