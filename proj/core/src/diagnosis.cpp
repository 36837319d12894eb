#include "rapt/diagnosis.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace rapt {

using nlohmann::json;

void FailureTaxonomy::validate() const {
  if (categories.empty()) throw std::invalid_argument("taxonomy: category list is empty");
  std::set<std::string> seen;
  for (const auto& c : categories) {
    if (c.id.empty()) throw std::invalid_argument("taxonomy: empty category id");
    if (!seen.insert(c.id).second) {
      throw std::invalid_argument("taxonomy: duplicate category id " + c.id);
    }
  }
}

bool FailureTaxonomy::contains(const std::string& id) const {
  for (const auto& c : categories) {
    if (c.id == id) return true;
  }
  return false;
}

FailureTaxonomy default_taxonomy() {
  FailureTaxonomy t;
  t.version = "default-1";
  t.categories = {
      {"sensor_freeze", "Sensor freeze", "A sensor channel stops updating and reports a stale value.", {"pos", "vel", "base"}},
      {"sensor_bias", "Sensor bias/offset", "A sensor channel reports values shifted by a constant offset.", {"pos", "base"}},
      {"noise_burst", "Sensor noise burst", "A sensor channel becomes abnormally noisy for a period.", {"pos", "vel", "base"}},
      {"sensor_dropout", "Sensor dropout", "A sensor channel reads zero or stops being populated.", {"pos", "vel", "base"}},
      {"time_delay", "Communication delay", "Channels arrive delayed relative to the rest of the state.", {"pos", "vel"}},
      {"gain_change", "Gain/scaling error", "A channel is scaled by a wrong factor (calibration or units).", {"vel", "pos"}},
      {"dynamics_shift", "Dynamics change", "The plant's temporal dynamics changed (load, friction, actuation).", {"pos", "vel", "base"}},
      {"impulse_push", "External disturbance", "A transient external force or collision acts on the body.", {"base"}},
      {"actuator_fault", "Actuator fault", "An actuator under- or over-delivers commanded effort.", {"vel"}},
      {"software_config_error", "Software/configuration error", "Mis-tuned gains or implementation-level state inconsistency.", {}},
  };
  return t;
}

FailureTaxonomy taxonomy_from_json(const std::string& text) {
  json j = json::parse(text);
  FailureTaxonomy t;
  t.version = j.at("version").get<std::string>();
  for (const auto& e : j.at("categories")) {
    TaxonomyCategory c;
    c.id = e.at("id").get<std::string>();
    c.name = e.at("name").get<std::string>();
    c.description = e.at("description").get<std::string>();
    if (e.contains("hint_groups")) {
      c.hint_groups = e.at("hint_groups").get<std::vector<std::string>>();
    }
    t.categories.push_back(std::move(c));
  }
  t.validate();
  return t;
}

std::string taxonomy_to_json(const FailureTaxonomy& taxonomy) {
  json cats = json::array();
  for (const auto& c : taxonomy.categories) {
    cats.push_back(json{{"id", c.id},
                        {"name", c.name},
                        {"description", c.description},
                        {"hint_groups", c.hint_groups}});
  }
  return json{{"version", taxonomy.version}, {"categories", std::move(cats)}}.dump(2);
}

void DiagnosisRequest::validate() const {
  taxonomy.validate();
  if (trail_dims.size() > 10) {
    throw std::invalid_argument("diagnosis request: top-K exceeds the prompt budget (10)");
  }
  if (trails.size() != trail_dims.size()) {
    throw std::invalid_argument("diagnosis request: trails/trail_dims mismatch");
  }
  for (const auto& [dim, score] : saliency.top_k) {
    if (!std::isfinite(score)) throw std::invalid_argument("diagnosis request: non-finite score");
  }
  for (const auto& t : trails) {
    for (double v : t) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("diagnosis request: non-finite trail value");
      }
    }
  }
  for (double v : commanded) {
    if (!std::isfinite(v)) throw std::invalid_argument("diagnosis request: non-finite command");
  }
}

std::vector<double> bucket_max_abs(const std::vector<double>& series, std::size_t max_rows) {
  if (series.empty() || max_rows == 0) return {};
  const std::size_t bucket = (series.size() + max_rows - 1) / max_rows;
  std::vector<double> out;
  out.reserve((series.size() + bucket - 1) / bucket);
  for (std::size_t start = 0; start < series.size(); start += bucket) {
    double best = 0.0;
    for (std::size_t i = start; i < std::min(series.size(), start + bucket); ++i) {
      if (std::abs(series[i]) > std::abs(best)) best = std::abs(series[i]);
    }
    out.push_back(best);
  }
  return out;
}

namespace {

constexpr std::size_t kMaxPromptRows = 40;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::vector<double> bucket_mean(const std::vector<double>& series, std::size_t max_rows) {
  if (series.empty() || max_rows == 0) return {};
  const std::size_t bucket = (series.size() + max_rows - 1) / max_rows;
  std::vector<double> out;
  for (std::size_t start = 0; start < series.size(); start += bucket) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = start; i < std::min(series.size(), start + bucket); ++i) {
      acc += series[i];
      ++n;
    }
    out.push_back(acc / static_cast<double>(n));
  }
  return out;
}

}  // namespace

std::string build_prompt(const DiagnosisRequest& req) {
  req.validate();
  std::ostringstream p;
  p << "You are a robot failure analyst. A deployment-time anomaly monitor flagged a fault.\n";
  p << "Classify the most likely root cause using the evidence below.\n\n";

  p << "FAILURE CATEGORIES (taxonomy " << req.taxonomy.version << "):\n";
  for (const auto& c : req.taxonomy.categories) {
    p << "- " << c.id << ": " << c.name << " - " << c.description << "\n";
  }

  p << "\nFIRED GATES:\n";
  if (req.fired_gates.empty()) {
    p << "- none recorded\n";
  } else {
    for (const auto& g : req.fired_gates) {
      p << "- " << g.gate;
      if (g.dim >= 0) p << " (dimension " << g.dim << ")";
      p << ", margin " << fmt(g.margin) << "\n";
    }
  }

  p << "\nTEMPORAL SALIENCY (per-dimension |attribution|, time-bucketed, oldest first):\n";
  p << "window steps " << req.saliency.window_start << ".." << req.saliency.window_end << "\n";
  for (const auto& [dim, score] : req.saliency.top_k) {
    std::vector<double> col(req.saliency.h);
    for (std::size_t t = 0; t < req.saliency.h; ++t) col[t] = req.saliency.at(t, dim);
    const std::vector<double> pooled = bucket_max_abs(col, kMaxPromptRows);
    p << "dim " << dim;
    if (dim < req.dim_groups.size() && !req.dim_groups[dim].empty()) {
      p << " (" << req.dim_groups[dim] << ")";
    }
    p << " peak " << fmt(score) << ":";
    for (double v : pooled) p << " " << fmt(v);
    p << "\n";
  }

  p << "\nKINEMATIC TRAILS (raw values, same bucketing, oldest first):\n";
  for (std::size_t k = 0; k < req.trail_dims.size(); ++k) {
    const std::vector<double> pooled = bucket_mean(req.trails[k], kMaxPromptRows);
    p << "dim " << req.trail_dims[k] << ":";
    for (double v : pooled) p << " " << fmt(v);
    p << "\n";
  }

  if (!req.commanded.empty()) {
    p << "\nTASK CONTEXT (commanded values):";
    for (double v : req.commanded) p << " " << fmt(v);
    p << "\n";
  }
  if (!req.image_reference.empty()) {
    p << "\nAn external camera key-frame is attached: " << req.image_reference << "\n";
  }

  p << "\nAnswer with exactly three ranked categories from the taxonomy, one per line,\n";
  p << "each with a one-sentence rationale, inside this exact delimited block:\n";
  p << "RANKED:\n";
  p << "1. <category_id> | <rationale>\n";
  p << "2. <category_id> | <rationale>\n";
  p << "3. <category_id> | <rationale>\n";
  p << "END_RANKED\n";
  return p.str();
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

const char* confidence_for_rank(std::size_t rank) {
  switch (rank) {
    case 0: return "high";
    case 1: return "medium";
    default: return "low";
  }
}

}  // namespace

std::vector<Hypothesis> parse_ranked_block(const std::string& content,
                                           const FailureTaxonomy& taxonomy) {
  const std::size_t begin = content.find("RANKED:");
  if (begin == std::string::npos) {
    throw MalformedResponseError("diagnosis: no RANKED block in response", content);
  }
  std::size_t end = content.find("END_RANKED", begin);
  if (end == std::string::npos) end = content.size();
  std::istringstream block(content.substr(begin + 7, end - begin - 7));
  std::vector<Hypothesis> out;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(block, line) && out.size() < 3) {
    line = trim(line);
    if (line.empty()) continue;
    // "<rank>. <id> | <rationale>"
    std::size_t dot = line.find('.');
    if (dot == std::string::npos || dot + 1 >= line.size()) continue;
    bool numeric = dot > 0;
    for (std::size_t i = 0; i < dot; ++i) numeric = numeric && std::isdigit(line[i]) != 0;
    if (!numeric) continue;
    std::string rest = trim(line.substr(dot + 1));
    std::string id, rationale;
    const std::size_t bar = rest.find('|');
    if (bar == std::string::npos) {
      id = trim(rest);
    } else {
      id = trim(rest.substr(0, bar));
      rationale = trim(rest.substr(bar + 1));
    }
    if (id.empty()) continue;
    if (!taxonomy.contains(id)) {
      throw MalformedResponseError("diagnosis: category '" + id + "' not in taxonomy", content);
    }
    if (!seen.insert(id).second) continue;  // duplicates: first rank wins
    out.push_back({id, confidence_for_rank(out.size()), rationale});
  }
  if (out.empty()) {
    throw MalformedResponseError("diagnosis: RANKED block contained no hypotheses", content);
  }
  return out;
}

DiagnosisReport classify_heuristic(const DiagnosisRequest& req) {
  req.validate();
  // Score categories by overlap between top-K salient channel groups and the
  // taxonomy hints, weighted by saliency rank.
  std::map<std::string, double> group_weight;
  for (std::size_t k = 0; k < req.saliency.top_k.size(); ++k) {
    const std::size_t dim = req.saliency.top_k[k].first;
    if (dim < req.dim_groups.size() && !req.dim_groups[dim].empty()) {
      group_weight[req.dim_groups[dim]] += 1.0 / static_cast<double>(k + 1);
    }
  }
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < req.taxonomy.categories.size(); ++i) {
    const auto& cat = req.taxonomy.categories[i];
    double s = 0.0;
    for (const auto& g : cat.hint_groups) {
      auto it = group_weight.find(g);
      if (it != group_weight.end()) s += it->second;
    }
    // mean overlap, so broad hint lists do not beat a specific match
    if (!cat.hint_groups.empty()) s /= static_cast<double>(cat.hint_groups.size());
    scored.emplace_back(s, i);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  DiagnosisReport rep;
  rep.heuristic = true;
  rep.endpoint = "offline-heuristic";
  for (std::size_t k = 0; k < std::min<std::size_t>(3, scored.size()); ++k) {
    const auto& cat = req.taxonomy.categories[scored[k].second];
    rep.ranked.push_back({cat.id, "heuristic",
                          "channel-group overlap score " + fmt(scored[k].first)});
  }
  rep.transcript = "offline heuristic ranking (no endpoint configured)";
  return rep;
}

std::unique_ptr<HttpTransport> make_http_transport() {
  struct HttplibTransport : HttpTransport {
    Reply post(const std::string& url, const std::string& body,
               const std::vector<std::pair<std::string, std::string>>& headers) override {
      // split scheme://host[:port]/path
      const std::size_t scheme_end = url.find("://");
      if (scheme_end == std::string::npos) throw TransportError("bad endpoint url: " + url);
      const std::string scheme = url.substr(0, scheme_end);
      if (scheme != "http") {
        throw TransportError("transport supports http endpoints only (got " + scheme + ")");
      }
      const std::size_t host_begin = scheme_end + 3;
      const std::size_t path_begin = url.find('/', host_begin);
      const std::string host =
          path_begin == std::string::npos ? url.substr(host_begin)
                                          : url.substr(host_begin, path_begin - host_begin);
      const std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);
      httplib::Client client(("http://" + host).c_str());
      client.set_connection_timeout(10);
      client.set_read_timeout(120);
      httplib::Headers hh;
      for (const auto& [k, v] : headers) hh.emplace(k, v);
      auto res = client.Post(path.c_str(), hh, body, "application/json");
      if (!res) throw TransportError("http transport failure to " + url);
      return {res->status, res->body};
    }
  };
  return std::make_unique<HttplibTransport>();
}

DiagnosisReport classify(const DiagnosisRequest& req, const EndpointConfig& endpoint,
                         HttpTransport* transport) {
  const auto t0 = std::chrono::steady_clock::now();
  if (endpoint.url.empty() && transport == nullptr) {
    DiagnosisReport rep = classify_heuristic(req);
    rep.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
  }
  const std::string prompt = build_prompt(req);

  json message_content;
  if (req.image_reference.empty()) {
    message_content = prompt;
  } else {
    message_content = json::array(
        {json{{"type", "text"}, {"text", prompt}},
         json{{"type", "image_url"}, {"image_url", json{{"url", req.image_reference}}}}});
  }
  json body = {{"model", endpoint.model},
               {"temperature", endpoint.temperature},
               {"messages", json::array({json{{"role", "user"}, {"content", message_content}}})}};

  std::vector<std::pair<std::string, std::string>> headers;
  if (const char* key = std::getenv(endpoint.api_key_env.c_str())) {
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
  }

  std::unique_ptr<HttpTransport> owned;
  if (transport == nullptr) {
    owned = make_http_transport();
    transport = owned.get();
  }

  HttpTransport::Reply reply;
  int backoff = endpoint.backoff_ms;
  std::string last_error;
  bool ok = false;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    try {
      reply = transport->post(endpoint.url, body.dump(), headers);
      if (reply.status >= 200 && reply.status < 300) {
        ok = true;
        break;
      }
      last_error = "endpoint returned status " + std::to_string(reply.status);
      if (reply.status >= 400 && reply.status < 500 && reply.status != 429) break;
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  if (!ok) throw TransportError("diagnosis: " + last_error);

  std::string content;
  try {
    json parsed = json::parse(reply.body);
    content = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw MalformedResponseError("diagnosis: unexpected chat-completion payload", reply.body);
  }

  DiagnosisReport rep;
  rep.ranked = parse_ranked_block(content, req.taxonomy);
  rep.transcript = content;
  rep.endpoint = endpoint.url + " (" + endpoint.model + ")";
  rep.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

RcaScore score_rca(const std::vector<DiagnosisReport>& reports,
                   const std::vector<std::string>& labels) {
  if (reports.size() != labels.size()) {
    throw std::invalid_argument("score_rca: reports/labels length mismatch");
  }
  if (reports.empty()) return {};
  std::size_t top1 = 0, top3 = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& ranked = reports[i].ranked;
    if (!ranked.empty() && ranked.front().category_id == labels[i]) ++top1;
    for (std::size_t k = 0; k < std::min<std::size_t>(3, ranked.size()); ++k) {
      if (ranked[k].category_id == labels[i]) {
        ++top3;
        break;
      }
    }
  }
  const double n = static_cast<double>(reports.size());
  return {static_cast<double>(top1) / n, static_cast<double>(top3) / n};
}

}  // namespace rapt
