// rapt: train, calibrate, monitor and diagnose anomaly detection for
// multivariate robot telemetry streams.
//
// Exit codes: 0 nominal, 2 anomaly detected (monitor), 1 error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "rapt/bench.hpp"
#include "rapt/detect.hpp"
#include "rapt/diagnosis.hpp"
#include "rapt/io.hpp"
#include "rapt/metrics.hpp"
#include "rapt/model.hpp"
#include "rapt/run_config.hpp"
#include "rapt/saliency.hpp"
#include "rapt/synth.hpp"
#include "rapt/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

rapt::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return rapt::default_run_config();
  return rapt::load_run_config(path);
}

std::string episode_name(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu.csv", prefix, i);
  return buf;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir) {
  rapt::RunConfig cfg = load_config_or_default(config_path);
  rapt::World world(cfg.world);
  fs::create_directories(fs::path(out_dir) / "nominal");
  fs::create_directories(fs::path(out_dir) / "faulted");

  for (std::size_t i = 0; i < cfg.benchmark.n_nominal; ++i) {
    rapt::write_trajectory_csv(world.episode(i),
                               (fs::path(out_dir) / "nominal" / episode_name("ep", i)).string());
  }
  // calibration stream: a dedicated long nominal episode
  {
    rapt::WorldConfig calib_world = cfg.world;
    calib_world.episode_len = std::max(cfg.detection.t_cal, cfg.world.episode_len);
    rapt::World cw(calib_world);
    rapt::write_trajectory_csv(cw.episode(1000000),
                               (fs::path(out_dir) / "calibration.csv").string());
  }

  const auto suite = rapt::default_fault_suite();
  rapt::Rng rng = rapt::Rng(cfg.benchmark.seed).fork(0x9e11);
  json labels = json::array();
  for (std::size_t i = 0; i < cfg.benchmark.n_faulted; ++i) {
    const auto& tmpl = suite[i % suite.size()];
    rapt::FaultSpec spec = rapt::instantiate_fault(tmpl, cfg.world, rng);
    const std::size_t base_index = 500000 + i;
    rapt::FaultResult res =
        rapt::inject_fault(world, base_index, spec, cfg.benchmark.seed ^ base_index);
    const std::string fname = episode_name("ep", i);
    rapt::write_trajectory_csv(res.log, (fs::path(out_dir) / "faulted" / fname).string());
    json entry;
    entry["file"] = "faulted/" + fname;
    entry["kind"] = rapt::to_string(spec.kind);
    entry["onset"] = spec.onset;
    entry["duration"] = spec.duration;
    entry["magnitude"] = spec.magnitude;
    entry["channels"] = spec.channels;
    labels.push_back(std::move(entry));
  }
  rapt::write_text_file((fs::path(out_dir) / "labels.json").string(), labels.dump(2) + "\n");
  std::cout << "wrote " << cfg.benchmark.n_nominal << " nominal + " << cfg.benchmark.n_faulted
            << " faulted episodes to " << out_dir << "\n";
  return 0;
}

std::vector<rapt::TrajectoryLog> load_dir(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .csv trajectories in " + dir);
  std::vector<rapt::TrajectoryLog> logs;
  logs.reserve(files.size());
  for (const auto& f : files) logs.push_back(rapt::read_trajectory_csv(f.string()));
  return logs;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& report_path) {
  rapt::RunConfig cfg = load_config_or_default(config_path);
  std::vector<rapt::TrajectoryLog> dataset = load_dir(data_dir);
  rapt::ModelConfig mc = cfg.model;
  if (mc.d_obs != dataset.front().d_obs) {
    mc.d_obs = dataset.front().d_obs;  // follow the data
  }
  mc.d_act = dataset.front().d_act;
  if (mc.d_act == 0) mc.condition_on_actions = false;
  rapt::RaptModel model = rapt::init_model(mc, cfg.train.seed);
  rapt::fit_normalization(model, dataset);
  rapt::TrainReport report = rapt::train(model, dataset, cfg.train);
  rapt::save_checkpoint(model, out_path);

  json rj;
  rj["train_nll"] = report.train_nll;
  rj["holdout_nll"] = report.holdout_nll;
  rj["lr_trace"] = report.lr_trace;
  rj["wall_seconds"] = report.wall_seconds;
  if (!report_path.empty()) rapt::write_text_file(report_path, rj.dump(2) + "\n");
  std::cout << "trained " << cfg.train.epochs << " epochs in " << report.wall_seconds
            << " s; final NLL " << report.train_nll.back() << "; checkpoint " << out_path << "\n";
  return 0;
}

int cmd_calibrate(const std::string& config_path, const std::string& model_path,
                  const std::string& run_path, const std::string& out_path) {
  rapt::RunConfig cfg = load_config_or_default(config_path);
  rapt::RaptModel model = rapt::load_checkpoint(model_path);
  rapt::TrajectoryLog run = rapt::read_trajectory_csv(run_path);
  rapt::Detector det(model);
  rapt::CalibrationProfile profile = det.calibrate(run, cfg.detection.gates);
  rapt::save_profile(profile, out_path);
  std::cout << "calibrated over " << profile.calibration_steps << " steps; profile " << out_path
            << "\n";
  return 0;
}

int cmd_monitor(const std::string& model_path, const std::string& profile_path,
                const std::string& log_path, const std::string& verdicts_path) {
  rapt::RaptModel model = rapt::load_checkpoint(model_path);
  rapt::CalibrationProfile profile = rapt::load_profile(profile_path);
  if (profile.d_obs != model.config.d_obs) {
    throw std::runtime_error("model d_obs " + std::to_string(model.config.d_obs) +
                             " does not match profile d_obs " + std::to_string(profile.d_obs));
  }
  rapt::TrajectoryLog log = rapt::read_trajectory_csv(log_path);
  rapt::Detector det(model);
  rapt::StreamState state = det.make_stream();

  std::ofstream vout;
  if (!verdicts_path.empty()) {
    vout.open(verdicts_path);
    if (!vout) throw std::runtime_error("cannot open " + verdicts_path);
  }
  std::size_t anomalies = 0;
  std::ptrdiff_t first = -1;
  double latency_acc = 0;
  for (std::size_t t = 0; t < log.length(); ++t) {
    rapt::AnomalyVerdict v = det.detect(profile, state, log.obs_span(t), log.act_span(t));
    latency_acc += v.latency_micros;
    if (v.anomaly) {
      ++anomalies;
      if (first < 0) first = static_cast<std::ptrdiff_t>(t);
    }
    const std::string line = rapt::verdict_to_json_line(v);
    if (vout.is_open()) {
      vout << line << "\n";
    } else {
      std::cout << line << "\n";
    }
  }
  json summary;
  summary["steps"] = log.length();
  summary["anomalous_steps"] = anomalies;
  summary["first_detection"] = first;
  summary["mean_latency_micros"] = latency_acc / static_cast<double>(log.length());
  std::cout << summary.dump() << "\n";
  return anomalies ? 2 : 0;
}

int cmd_eval(const std::string& config_path, const std::string& model_path,
             const std::string& profile_path, const std::string& out_path) {
  rapt::RunConfig cfg = load_config_or_default(config_path);
  rapt::RaptModel model = rapt::load_checkpoint(model_path);
  rapt::CalibrationProfile profile = rapt::load_profile(profile_path);
  rapt::Detector det(model);
  rapt::EvalReport report = rapt::run_benchmark(det, profile, cfg.world,
                                                rapt::default_fault_suite(), cfg.benchmark);
  const std::string text = rapt::eval_report_to_json(report);
  if (!out_path.empty()) {
    rapt::write_text_file(out_path, text + "\n");
  }
  std::cout << text << "\n";
  return 0;
}

int cmd_saliency(const std::string& model_path, const std::string& log_path, std::size_t step,
                 std::size_t window, std::size_t m_steps, std::size_t top_k,
                 const std::string& out_prefix) {
  rapt::RaptModel model = rapt::load_checkpoint(model_path);
  rapt::TrajectoryLog log = rapt::read_trajectory_csv(log_path);
  if (step >= log.length()) throw std::runtime_error("step beyond end of log");
  // window [step-H+1, step], truncated at stream start
  const std::size_t h = std::min(window, step + 1);
  const std::size_t start = step + 1 - h;
  rapt::Tensor h_pre = rapt::zero_hidden(model.config);
  if (start > 0) {
    auto outs = rapt::forward_sequence(model, log.slice(0, start), h_pre);
    h_pre = outs.back().hidden;
  }
  rapt::IgOptions opts;
  opts.steps = m_steps;
  opts.top_k = top_k;
  rapt::SaliencyMap map =
      rapt::integrated_gradients_time(model, log.slice(start, h), h_pre, opts, start);
  rapt::save_saliency(map, out_prefix + ".json");
  rapt::emit_heatmap(map, out_prefix);
  std::cout << "saliency window [" << map.window_start << "," << map.window_end
            << ") completeness gap " << map.completeness_gap << "; top dims:";
  for (const auto& [dim, score] : map.top_k) std::cout << " " << dim;
  std::cout << "\nwrote " << out_prefix << ".json/.csv/.svg\n";
  return 0;
}

int cmd_diagnose(const std::string& config_path, const std::string& saliency_path,
                 const std::string& log_path, const std::string& taxonomy_path,
                 const std::string& out_path, const std::string& image_ref,
                 const std::string& endpoint_url) {
  rapt::RunConfig cfg = load_config_or_default(config_path);
  if (!endpoint_url.empty()) cfg.endpoint.url = endpoint_url;

  rapt::DiagnosisRequest req;
  req.saliency = rapt::load_saliency(saliency_path);
  req.taxonomy = taxonomy_path.empty() ? rapt::default_taxonomy()
                                       : rapt::taxonomy_from_json(rapt::read_text_file(taxonomy_path));
  req.dim_groups = rapt::synth_dim_groups(cfg.world);
  req.image_reference = image_ref;

  rapt::TrajectoryLog log = rapt::read_trajectory_csv(log_path);
  for (const auto& [dim, score] : req.saliency.top_k) {
    req.trail_dims.push_back(dim);
    std::vector<double> trail;
    for (std::size_t t = req.saliency.window_start;
         t < std::min<std::size_t>(req.saliency.window_end, log.length()); ++t) {
      trail.push_back(log.obs_row(t)[dim]);
    }
    req.trails.push_back(std::move(trail));
  }

  rapt::DiagnosisReport rep = rapt::classify(req, cfg.endpoint);
  json rj;
  json ranked = json::array();
  for (const auto& h : rep.ranked) {
    ranked.push_back(json{{"category", h.category_id},
                          {"confidence", h.confidence},
                          {"rationale", h.rationale}});
  }
  rj["ranked"] = std::move(ranked);
  rj["heuristic"] = rep.heuristic;
  rj["endpoint"] = rep.endpoint;
  rj["elapsed_seconds"] = rep.elapsed_seconds;
  rj["transcript"] = rep.transcript;
  if (!out_path.empty()) rapt::write_text_file(out_path, rj.dump(2) + "\n");
  std::cout << rj.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rapt: probabilistic trajectory monitoring for robot telemetry"};
  app.require_subcommand(1);

  std::string config, out_dir = "data", data_dir, model_path = "model.rapt";
  std::string run_path, profile_path = "profile.json", log_path, verdicts_path;
  std::string report_path, out_path, saliency_path, taxonomy_path, image_ref, endpoint_url;
  std::size_t step = 0, window = 200, m_steps = 32, top_k = 5;

  auto* gen = app.add_subcommand("gen", "generate synthetic nominal + faulted datasets");
  gen->add_option("--config", config, "run-config JSON");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on nominal trajectories");
  train->add_option("--config", config, "run-config JSON");
  train->add_option("--data", data_dir, "directory of nominal .csv episodes")->required();
  train->add_option("--out", model_path, "checkpoint path")->required();
  train->add_option("--report", report_path, "training report JSON");

  auto* calibrate = app.add_subcommand("calibrate", "calibrate detection thresholds");
  calibrate->add_option("--config", config, "run-config JSON");
  calibrate->add_option("--model", model_path, "checkpoint")->required();
  calibrate->add_option("--run", run_path, "nominal calibration trajectory CSV")->required();
  calibrate->add_option("--out", profile_path, "profile JSON path")->required();

  auto* monitor = app.add_subcommand("monitor", "replay a trajectory as a stream of verdicts");
  monitor->add_option("--model", model_path, "checkpoint")->required();
  monitor->add_option("--profile", profile_path, "calibration profile")->required();
  monitor->add_option("--log", log_path, "trajectory CSV")->required();
  monitor->add_option("--verdicts", verdicts_path, "write JSONL here instead of stdout");

  auto* eval = app.add_subcommand("eval", "run the synthetic fault benchmark");
  eval->add_option("--config", config, "run-config JSON");
  eval->add_option("--model", model_path, "checkpoint")->required();
  eval->add_option("--profile", profile_path, "calibration profile")->required();
  eval->add_option("--out", out_path, "evaluation report JSON");

  auto* saliency = app.add_subcommand("saliency", "attribute a detection to past inputs");
  saliency->add_option("--model", model_path, "checkpoint")->required();
  saliency->add_option("--log", log_path, "trajectory CSV")->required();
  saliency->add_option("--step", step, "detection step index")->required();
  saliency->add_option("--window", window, "history window H");
  saliency->add_option("--m", m_steps, "integration path steps");
  saliency->add_option("--top-k", top_k, "ranked dimensions to keep");
  saliency->add_option("--out-prefix", out_path, "artifact prefix")->required();

  auto* diagnose = app.add_subcommand("diagnose", "LLM-assisted root-cause classification");
  diagnose->add_option("--config", config, "run-config JSON");
  diagnose->add_option("--saliency", saliency_path, "saliency JSON")->required();
  diagnose->add_option("--log", log_path, "trajectory CSV")->required();
  diagnose->add_option("--taxonomy", taxonomy_path, "failure taxonomy JSON");
  diagnose->add_option("--endpoint", endpoint_url, "chat-completion endpoint URL");
  diagnose->add_option("--image", image_ref, "opaque key-frame reference");
  diagnose->add_option("--out", report_path, "diagnosis report JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(config, out_dir);
    if (train->parsed()) return cmd_train(config, data_dir, model_path, report_path);
    if (calibrate->parsed()) return cmd_calibrate(config, model_path, run_path, profile_path);
    if (monitor->parsed()) return cmd_monitor(model_path, profile_path, log_path, verdicts_path);
    if (eval->parsed()) return cmd_eval(config, model_path, profile_path, out_path);
    if (saliency->parsed()) {
      return cmd_saliency(model_path, log_path, step, window, m_steps, top_k, out_path);
    }
    if (diagnose->parsed()) {
      return cmd_diagnose(config, saliency_path, log_path, taxonomy_path, report_path, image_ref,
                          endpoint_url);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
