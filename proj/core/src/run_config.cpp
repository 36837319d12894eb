#include "rapt/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rapt {

using nlohmann::json;

void RunConfig::validate() const {
  world.validate();
  // model.d_obs may be zero in a config file; it is resolved from the world.
  if (model.d_obs != 0) model.validate();
  train.validate();
  if (detection.t_cal < 2) throw std::invalid_argument("detection.t_cal must be >= 2");
  if (benchmark.n_nominal == 0) throw std::invalid_argument("benchmark.n_nominal must be >= 1");
  if (benchmark.fpr_budget <= 0.0 || benchmark.fpr_budget >= 1.0) {
    throw std::invalid_argument("benchmark.fpr_budget must be in (0,1)");
  }
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.world = WorldConfig{};  // 8 joints -> d_obs = 24, 500-step episodes
  cfg.model.d_obs = cfg.world.d_obs();
  cfg.model.d_model = 64;
  cfg.model.n_blocks = 2;
  cfg.model.d_latent = 48;
  cfg.model.noise_sigma = 0.05;
  cfg.train.epochs = 20;
  cfg.train.batch_size = 64;
  cfg.train.windows_per_epoch = 1024;
  cfg.train.seed = 42;
  return cfg;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown field '" + key + "' in " + where);
    }
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).template get<T>();
}

void parse_world(const json& j, WorldConfig& w) {
  reject_unknown(j,
                 {"d_joints", "episode_len", "dt", "n_freqs", "freq_lo", "freq_hi",
                  "process_noise", "sensor_noise", "seed"},
                 "world");
  get_if(j, "d_joints", w.d_joints);
  get_if(j, "episode_len", w.episode_len);
  get_if(j, "dt", w.dt);
  get_if(j, "n_freqs", w.n_freqs);
  get_if(j, "freq_lo", w.freq_lo);
  get_if(j, "freq_hi", w.freq_hi);
  get_if(j, "process_noise", w.process_noise);
  get_if(j, "sensor_noise", w.sensor_noise);
  get_if(j, "seed", w.seed);
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown(j,
                 {"d_obs", "d_act", "d_model", "n_blocks", "d_latent", "objective",
                  "condition_on_actions", "noise_sigma", "logvar_clamp"},
                 "model");
  get_if(j, "d_obs", m.d_obs);
  get_if(j, "d_act", m.d_act);
  get_if(j, "d_model", m.d_model);
  get_if(j, "n_blocks", m.n_blocks);
  get_if(j, "d_latent", m.d_latent);
  if (j.contains("objective")) {
    m.objective = objective_from_string(j.at("objective").get<std::string>());
  }
  get_if(j, "condition_on_actions", m.condition_on_actions);
  get_if(j, "noise_sigma", m.noise_sigma);
  if (j.contains("logvar_clamp")) {
    m.logvar_lo = j.at("logvar_clamp").at(0).get<double>();
    m.logvar_hi = j.at("logvar_clamp").at(1).get<double>();
  }
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j,
                 {"epochs", "batch_size", "peak_lr", "weight_decay", "unroll", "schedule",
                  "seed", "grad_clip_norm", "windows_per_epoch", "holdout_fraction"},
                 "train");
  get_if(j, "epochs", t.epochs);
  get_if(j, "batch_size", t.batch_size);
  get_if(j, "peak_lr", t.peak_lr);
  get_if(j, "weight_decay", t.weight_decay);
  get_if(j, "unroll", t.unroll);
  get_if(j, "seed", t.seed);
  get_if(j, "grad_clip_norm", t.grad_clip_norm);
  get_if(j, "windows_per_epoch", t.windows_per_epoch);
  get_if(j, "holdout_fraction", t.holdout_fraction);
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"warmup_fraction", "initial_div", "final_div"}, "train.schedule");
    get_if(s, "warmup_fraction", t.schedule.warmup_fraction);
    get_if(s, "initial_div", t.schedule.initial_div);
    get_if(s, "final_div", t.schedule.final_div);
  }
}

void parse_detection(const json& j, DetectionConfig& d) {
  reject_unknown(j, {"k_local", "k_global", "delta", "warmup_steps", "t_cal"}, "detection");
  get_if(j, "k_local", d.gates.k_local);
  get_if(j, "k_global", d.gates.k_global);
  get_if(j, "delta", d.gates.delta);
  get_if(j, "warmup_steps", d.gates.warmup_steps);
  get_if(j, "t_cal", d.t_cal);
}

void parse_benchmark(const json& j, BenchmarkConfig& b) {
  reject_unknown(j, {"n_nominal", "n_faulted", "fpr_budget", "seed"}, "benchmark");
  get_if(j, "n_nominal", b.n_nominal);
  get_if(j, "n_faulted", b.n_faulted);
  get_if(j, "fpr_budget", b.fpr_budget);
  get_if(j, "seed", b.seed);
}

void parse_endpoint(const json& j, EndpointConfig& e) {
  reject_unknown(j, {"url", "model", "api_key_env", "temperature", "max_retries", "backoff_ms"},
                 "endpoint");
  get_if(j, "url", e.url);
  get_if(j, "model", e.model);
  get_if(j, "api_key_env", e.api_key_env);
  get_if(j, "temperature", e.temperature);
  get_if(j, "max_retries", e.max_retries);
  get_if(j, "backoff_ms", e.backoff_ms);
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  json j = json::parse(text);
  reject_unknown(j, {"world", "model", "train", "detection", "benchmark", "endpoint"}, "root");
  RunConfig cfg = default_run_config();
  if (j.contains("world")) parse_world(j.at("world"), cfg.world);
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("detection")) parse_detection(j.at("detection"), cfg.detection);
  if (j.contains("benchmark")) parse_benchmark(j.at("benchmark"), cfg.benchmark);
  if (j.contains("endpoint")) parse_endpoint(j.at("endpoint"), cfg.endpoint);
  // d_obs follows the world unless the file pins it explicitly
  if (!(j.contains("model") && j.at("model").contains("d_obs"))) {
    cfg.model.d_obs = cfg.world.d_obs();
  }
  cfg.validate();
  cfg.model.validate();
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["world"] = {{"d_joints", cfg.world.d_joints},
                {"episode_len", cfg.world.episode_len},
                {"dt", cfg.world.dt},
                {"n_freqs", cfg.world.n_freqs},
                {"freq_lo", cfg.world.freq_lo},
                {"freq_hi", cfg.world.freq_hi},
                {"process_noise", cfg.world.process_noise},
                {"sensor_noise", cfg.world.sensor_noise},
                {"seed", cfg.world.seed}};
  j["model"] = {{"d_obs", cfg.model.d_obs},
                {"d_act", cfg.model.d_act},
                {"d_model", cfg.model.d_model},
                {"n_blocks", cfg.model.n_blocks},
                {"d_latent", cfg.model.d_latent},
                {"objective", to_string(cfg.model.objective)},
                {"condition_on_actions", cfg.model.condition_on_actions},
                {"noise_sigma", cfg.model.noise_sigma},
                {"logvar_clamp", json::array({cfg.model.logvar_lo, cfg.model.logvar_hi})}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"peak_lr", cfg.train.peak_lr},
                {"weight_decay", cfg.train.weight_decay},
                {"unroll", cfg.train.unroll},
                {"schedule",
                 {{"warmup_fraction", cfg.train.schedule.warmup_fraction},
                  {"initial_div", cfg.train.schedule.initial_div},
                  {"final_div", cfg.train.schedule.final_div}}},
                {"seed", cfg.train.seed},
                {"grad_clip_norm", cfg.train.grad_clip_norm},
                {"windows_per_epoch", cfg.train.windows_per_epoch},
                {"holdout_fraction", cfg.train.holdout_fraction}};
  j["detection"] = {{"k_local", cfg.detection.gates.k_local},
                    {"k_global", cfg.detection.gates.k_global},
                    {"delta", cfg.detection.gates.delta},
                    {"warmup_steps", cfg.detection.gates.warmup_steps},
                    {"t_cal", cfg.detection.t_cal}};
  j["benchmark"] = {{"n_nominal", cfg.benchmark.n_nominal},
                    {"n_faulted", cfg.benchmark.n_faulted},
                    {"fpr_budget", cfg.benchmark.fpr_budget},
                    {"seed", cfg.benchmark.seed}};
  j["endpoint"] = {{"url", cfg.endpoint.url},
                   {"model", cfg.endpoint.model},
                   {"api_key_env", cfg.endpoint.api_key_env},
                   {"temperature", cfg.endpoint.temperature},
                   {"max_retries", cfg.endpoint.max_retries},
                   {"backoff_ms", cfg.endpoint.backoff_ms}};
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

std::vector<std::string> synth_dim_groups(const WorldConfig& world) {
  std::vector<std::string> groups(world.d_obs());
  for (std::size_t j = 0; j < world.d_joints; ++j) {
    groups[j] = "pos";
    groups[world.d_joints + j] = "vel";
    groups[2 * world.d_joints + j] = "base";
  }
  return groups;
}

}  // namespace rapt
