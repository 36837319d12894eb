#include "rapt/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rapt {

using nlohmann::json;

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// --- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'A', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32(const std::string& s, std::size_t off) {
  const std::uint32_t bits = get_u32(s, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

json vec_to_json(const Tensor& t) {
  json arr = json::array();
  for (std::size_t i = 0; i < t.size(); ++i) arr.push_back(t[i]);
  return arr;
}

Tensor vec_from_json(const json& arr) {
  std::vector<double> data;
  data.reserve(arr.size());
  for (const auto& v : arr) data.push_back(v.get<double>());
  return Tensor::vector(std::move(data));
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"d_obs", c.d_obs},
              {"d_act", c.d_act},
              {"d_model", c.d_model},
              {"n_blocks", c.n_blocks},
              {"d_latent", c.d_latent},
              {"objective", to_string(c.objective)},
              {"condition_on_actions", c.condition_on_actions},
              {"noise_sigma", c.noise_sigma},
              {"logvar_clamp", json::array({c.logvar_lo, c.logvar_hi})}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d_obs = j.at("d_obs").get<std::size_t>();
  c.d_act = j.at("d_act").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.d_latent = j.at("d_latent").get<std::size_t>();
  c.objective = objective_from_string(j.at("objective").get<std::string>());
  c.condition_on_actions = j.at("condition_on_actions").get<bool>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.logvar_lo = j.at("logvar_clamp").at(0).get<double>();
  c.logvar_hi = j.at("logvar_clamp").at(1).get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const RaptModel& model, const std::string& path) {
  // payload + tensor table; ParamSet iterates sorted by name
  std::string payload;
  json tensors = json::array();
  for (const auto& [name, node] : model.params) {
    const Tensor& t = node->value;
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["dtype"] = "f32";
    entry["offset"] = payload.size();
    entry["length"] = t.size() * 4;
    tensors.push_back(std::move(entry));
    for (std::size_t i = 0; i < t.size(); ++i) put_f32(payload, static_cast<float>(t[i]));
  }
  json manifest;
  manifest["format_version"] = kVersion;
  manifest["model_config"] = model_config_to_json(model.config);
  manifest["normalization"] = {{"mean", vec_to_json(model.norm_mean)},
                               {"std", vec_to_json(model.norm_std)},
                               {"obs_min", vec_to_json(model.obs_min)},
                               {"obs_max", vec_to_json(model.obs_max)}};
  manifest["tensors"] = std::move(tensors);
  const std::string manifest_text = manifest.dump();

  std::string blob;
  blob.append(kMagic, 4);
  put_u32(blob, kVersion);
  put_u64(blob, manifest_text.size());
  blob += manifest_text;
  blob += payload;
  put_u32(blob, crc32(payload.data(), payload.size()));
  write_text_file(path, blob);
}

RaptModel load_checkpoint(const std::string& path) {
  const std::string blob = read_text_file(path);
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = get_u32(blob, 4);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t manifest_len = get_u64(blob, 8);
  const std::size_t manifest_off = 16;
  if (manifest_off + manifest_len + 4 > blob.size()) {
    throw std::runtime_error("checkpoint: truncated file " + path);
  }
  const std::string manifest_text = blob.substr(manifest_off, manifest_len);
  json manifest = json::parse(manifest_text);
  // manifest must round-trip
  if (json::parse(manifest.dump()) != manifest) {
    throw std::runtime_error("checkpoint: manifest does not round-trip");
  }
  const std::size_t payload_off = manifest_off + manifest_len;
  const std::size_t payload_len = blob.size() - payload_off - 4;
  const std::uint32_t stored_crc = get_u32(blob, blob.size() - 4);
  const std::uint32_t actual_crc = crc32(blob.data() + payload_off, payload_len);
  if (stored_crc != actual_crc) {
    throw std::runtime_error("checkpoint: CRC mismatch (corrupted payload) in " + path);
  }

  ModelConfig config = model_config_from_json(manifest.at("model_config"));
  config.validate();
  RaptModel model;
  model.config = config;
  const json& norm = manifest.at("normalization");
  model.norm_mean = vec_from_json(norm.at("mean"));
  model.norm_std = vec_from_json(norm.at("std"));
  model.obs_min = vec_from_json(norm.at("obs_min"));
  model.obs_max = vec_from_json(norm.at("obs_max"));
  if (model.norm_mean.size() != config.norm_dim() || model.norm_std.size() != config.norm_dim()) {
    throw std::runtime_error("checkpoint: normalization width mismatch");
  }
  if (model.obs_min.size() != config.d_obs || model.obs_max.size() != config.d_obs) {
    throw std::runtime_error("checkpoint: raw-bounds width mismatch");
  }
  for (std::size_t i = 0; i < model.norm_std.size(); ++i) {
    if (!(model.norm_std[i] > 0.0)) throw std::runtime_error("checkpoint: non-positive norm std");
  }
  for (std::size_t i = 0; i < config.d_obs; ++i) {
    if (model.obs_min[i] > model.obs_max[i]) {
      throw std::runtime_error("checkpoint: raw bounds inverted");
    }
  }

  std::size_t cursor = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    std::vector<std::size_t> shape;
    for (const auto& d : entry.at("shape")) shape.push_back(d.get<std::size_t>());
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f32") throw std::runtime_error("checkpoint: unsupported dtype " + dtype);
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t length = entry.at("length").get<std::size_t>();
    if (offset != cursor) {
      throw std::runtime_error("checkpoint: overlapping or unordered tensor offsets");
    }
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    if (length != count * 4 || offset + length > payload_len) {
      throw std::runtime_error("checkpoint: tensor bounds invalid for " + name);
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < count; ++i) {
      t[i] = static_cast<double>(get_f32(blob, payload_off + offset + i * 4));
    }
    model.params.add(name, std::move(t));
    cursor = offset + length;
  }
  if (cursor != payload_len) throw std::runtime_error("checkpoint: payload size mismatch");
  if (model.params.total_elements() != expected_param_count(config)) {
    throw std::runtime_error("checkpoint: parameter count does not match architecture");
  }
  return model;
}

RaptModel quantize_to_f32(const RaptModel& model) {
  RaptModel out;
  out.config = model.config;
  out.norm_mean = model.norm_mean;
  out.norm_std = model.norm_std;
  out.obs_min = model.obs_min;
  out.obs_max = model.obs_max;
  for (const auto& [name, node] : model.params) {
    Tensor t = node->value;
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<double>(static_cast<float>(t[i]));
    }
    out.params.add(name, std::move(t));
  }
  return out;
}

// --- trajectory CSV ----------------------------------------------------------

void write_trajectory_csv(const TrajectoryLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "t";
  for (std::size_t i = 0; i < log.d_obs; ++i) out << ",obs_" << i;
  for (std::size_t i = 0; i < log.d_act; ++i) out << ",act_" << i;
  out << "\n";
  for (std::size_t t = 0; t < log.length(); ++t) {
    out << t;
    const double* o = log.obs_row(t);
    for (std::size_t i = 0; i < log.d_obs; ++i) out << "," << format_double(o[i]);
    if (log.d_act) {
      const double* a = log.act_row(t);
      for (std::size_t i = 0; i < log.d_act; ++i) out << "," << format_double(a[i]);
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

double parse_finite_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end || !std::isfinite(v)) {
    throw std::runtime_error("trajectory csv: bad value '" + s + "' at line " +
                             std::to_string(line_no));
  }
  return v;
}

}  // namespace

TrajectoryLog read_trajectory_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trajectory csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.empty() || header[0] != "t") {
    throw std::runtime_error("trajectory csv: header must start with 't'");
  }
  std::size_t d_obs = 0, d_act = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const std::string expect_obs = "obs_" + std::to_string(d_obs);
    const std::string expect_act = "act_" + std::to_string(d_act);
    if (header[i] == expect_obs && d_act == 0) {
      ++d_obs;
    } else if (header[i] == expect_act) {
      ++d_act;
    } else {
      throw std::runtime_error("trajectory csv: unexpected column '" + header[i] + "'");
    }
  }
  if (d_obs == 0) throw std::runtime_error("trajectory csv: no observation columns");

  TrajectoryLog log(d_obs, d_act);
  long long prev_t = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != 1 + d_obs + d_act) {
      throw std::runtime_error("trajectory csv: wrong column count at line " +
                               std::to_string(line_no));
    }
    long long t = 0;
    auto res = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), t);
    if (res.ec != std::errc{} || res.ptr != cells[0].data() + cells[0].size()) {
      throw std::runtime_error("trajectory csv: bad step index at line " +
                               std::to_string(line_no));
    }
    if (t <= prev_t) {
      throw std::runtime_error("trajectory csv: step indices must be strictly increasing");
    }
    prev_t = t;
    for (std::size_t i = 0; i < d_obs; ++i) {
      log.obs.push_back(parse_finite_double(cells[1 + i], line_no));
    }
    for (std::size_t i = 0; i < d_act; ++i) {
      log.act.push_back(parse_finite_double(cells[1 + d_obs + i], line_no));
    }
  }
  if (log.length() == 0) throw std::runtime_error("trajectory csv: no data rows in " + path);
  return log;
}

// --- profile JSON ------------------------------------------------------------

std::string profile_to_json(const CalibrationProfile& p) {
  json j;
  j["tau_max"] = p.tau_max;
  j["sigma"] = p.sigma;
  j["tau_global"] = p.tau_global;
  j["sigma_global"] = p.sigma_global;
  j["k_local"] = p.k_local;
  j["k_global"] = p.k_global;
  j["box_min"] = p.box_min;
  j["box_max"] = p.box_max;
  j["delta"] = p.delta;
  j["calibration_steps"] = p.calibration_steps;
  j["warmup_steps"] = p.warmup_steps;
  j["d_obs"] = p.d_obs;
  j["objective"] = p.objective;
  return j.dump(2);
}

CalibrationProfile profile_from_json(const std::string& text) {
  json j = json::parse(text);
  CalibrationProfile p;
  p.tau_max = j.at("tau_max").get<std::vector<double>>();
  p.sigma = j.at("sigma").get<std::vector<double>>();
  p.tau_global = j.at("tau_global").get<double>();
  p.sigma_global = j.at("sigma_global").get<double>();
  p.k_local = j.at("k_local").get<double>();
  p.k_global = j.at("k_global").get<double>();
  p.box_min = j.at("box_min").get<std::vector<double>>();
  p.box_max = j.at("box_max").get<std::vector<double>>();
  p.delta = j.at("delta").get<double>();
  p.calibration_steps = j.at("calibration_steps").get<std::size_t>();
  p.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  p.d_obs = j.at("d_obs").get<std::size_t>();
  p.objective = j.at("objective").get<std::string>();
  p.validate();
  return p;
}

void save_profile(const CalibrationProfile& profile, const std::string& path) {
  write_text_file(path, profile_to_json(profile) + "\n");
}

CalibrationProfile load_profile(const std::string& path) {
  return profile_from_json(read_text_file(path));
}

std::string verdict_to_json_line(const AnomalyVerdict& v) {
  auto clamp12 = [](double x) { return std::max(-1e12, std::min(1e12, x)); };
  json j;
  j["t"] = v.t;
  j["anomaly"] = v.anomaly;
  j["warmup"] = v.warmup;
  j["gate1"] = {{"fired", v.gate1.fired},
                {"dim", v.gate1.dim},
                {"margin", v.gate1.margin},
                {"norm_margin", clamp12(v.gate1.norm_margin)}};
  j["gate2"] = {{"fired", v.gate2.fired},
                {"margin", v.gate2.margin},
                {"norm_margin", clamp12(v.gate2.norm_margin)}};
  j["gate3"] = {{"fired", v.gate3.fired},
                {"dims", v.gate3.dims},
                {"norm_margin", clamp12(v.gate3.norm_margin)},
                {"sentinel", v.gate3.sentinel}};
  j["nll_mean"] = v.nll_mean;
  j["nll_per_dim"] = v.nll_per_dim;
  j["latency_micros"] = v.latency_micros;
  return j.dump();
}

// --- saliency JSON -----------------------------------------------------------

void save_saliency(const SaliencyMap& map, const std::string& path) {
  json j;
  j["window_start"] = map.window_start;
  j["window_end"] = map.window_end;
  j["h"] = map.h;
  j["d_obs"] = map.d_obs;
  j["attributions"] = map.attributions;
  json topk = json::array();
  for (const auto& [dim, score] : map.top_k) {
    topk.push_back(json{{"dim", dim}, {"score", score}});
  }
  j["top_k"] = std::move(topk);
  j["completeness_gap"] = map.completeness_gap;
  j["baseline_kind"] = map.baseline_kind;
  j["f_input"] = map.f_input;
  j["f_baseline"] = map.f_baseline;
  write_text_file(path, j.dump() + "\n");
}

SaliencyMap load_saliency(const std::string& path) {
  json j = json::parse(read_text_file(path));
  SaliencyMap map;
  map.window_start = j.at("window_start").get<std::size_t>();
  map.window_end = j.at("window_end").get<std::size_t>();
  map.h = j.at("h").get<std::size_t>();
  map.d_obs = j.at("d_obs").get<std::size_t>();
  map.attributions = j.at("attributions").get<std::vector<double>>();
  if (map.attributions.size() != map.h * map.d_obs) {
    throw std::runtime_error("saliency json: attribution size mismatch");
  }
  for (const auto& e : j.at("top_k")) {
    map.top_k.emplace_back(e.at("dim").get<std::size_t>(), e.at("score").get<double>());
  }
  map.completeness_gap = j.at("completeness_gap").get<double>();
  map.baseline_kind = j.at("baseline_kind").get<std::string>();
  map.f_input = j.at("f_input").get<double>();
  map.f_baseline = j.at("f_baseline").get<double>();
  return map;
}

// --- eval report JSON ---------------------------------------------------------

std::string eval_report_to_json(const EvalReport& r) {
  json methods;
  for (const auto& [name, m] : r.methods) {
    if (m.defined) {
      methods[name] = {{"auroc", m.auroc}, {"tpr", m.tpr}, {"threshold", m.threshold}};
    } else {
      methods[name] = json::object();  // no faulted episodes: metrics absent
    }
  }
  json j;
  j["fpr_budget"] = r.fpr_budget;
  j["methods"] = std::move(methods);
  j["per_fault_tpr"] = r.per_fault_tpr;
  j["per_fault_auroc"] = r.per_fault_auroc;
  j["confusion"] = {{"tp", r.tp}, {"fp", r.fp}, {"tn", r.tn}, {"fn", r.fn}};
  j["native_fpr"] = r.native_fpr;
  j["first_detection_delay"] = {
      {"mean", r.delay_mean}, {"median", r.delay_median}, {"count", r.delay_count}};
  j["n_nominal"] = r.n_nominal;
  j["n_faulted"] = r.n_faulted;
  return j.dump(2);
}

void save_eval_report(const EvalReport& report, const std::string& path) {
  write_text_file(path, eval_report_to_json(report) + "\n");
}

}  // namespace rapt
