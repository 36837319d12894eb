#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rapt/saliency.hpp"

namespace rapt {

struct TaxonomyCategory {
  std::string id;
  std::string name;
  std::string description;
  // Channel-group hints ("pos", "vel", "base", ...) for the offline heuristic.
  std::vector<std::string> hint_groups;
};

struct FailureTaxonomy {
  std::string version;
  std::vector<TaxonomyCategory> categories;

  void validate() const;
  bool contains(const std::string& id) const;
};

/// Shipped default covering the synthetic fault kinds plus generic
/// hardware/software classes.
FailureTaxonomy default_taxonomy();
FailureTaxonomy taxonomy_from_json(const std::string& text);
std::string taxonomy_to_json(const FailureTaxonomy& taxonomy);

struct FiredGate {
  std::string gate;  // "gate1" / "gate2" / "gate3"
  double margin = 0.0;
  std::ptrdiff_t dim = -1;
};

struct DiagnosisRequest {
  SaliencyMap saliency;
  std::vector<std::size_t> trail_dims;            // top-K dims, <= 10
  std::vector<std::vector<double>> trails;        // raw trajectories, one per trail dim
  std::vector<std::string> dim_groups;            // optional tag per obs dim
  std::vector<double> commanded;                  // task context, optional
  std::vector<FiredGate> fired_gates;
  std::string image_reference;                    // opaque attachment descriptor
  FailureTaxonomy taxonomy;

  void validate() const;
};

struct Hypothesis {
  std::string category_id;
  std::string confidence;  // "high" / "medium" / "low" / "heuristic"
  std::string rationale;
};

struct DiagnosisReport {
  std::vector<Hypothesis> ranked;  // up to 3, strict ranking
  std::string transcript;          // raw endpoint reply (or heuristic note)
  std::string endpoint;
  double elapsed_seconds = 0.0;
  bool heuristic = false;
};

/// Deterministic composite prompt: taxonomy listing, time-bucketed saliency
/// table (max-|attribution| pooling to <= 40 rows), kinematic trails, gate
/// summary, and the required delimited answer format.
std::string build_prompt(const DiagnosisRequest& req);

/// Max-|value| pooling of an h-row series into <= max_rows buckets of equal
/// width ceil(h / max_rows).
std::vector<double> bucket_max_abs(const std::vector<double>& series, std::size_t max_rows);

struct HttpTransport {
  struct Reply {
    int status = 0;
    std::string body;
  };
  virtual ~HttpTransport() = default;
  virtual Reply post(const std::string& url, const std::string& body,
                     const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

/// httplib-backed transport (http URLs).
std::unique_ptr<HttpTransport> make_http_transport();

struct EndpointConfig {
  std::string url;  // empty => offline heuristic fallback
  std::string model = "gpt-4o";
  std::string api_key_env = "RAPT_LLM_API_KEY";
  double temperature = 0.0;
  int max_retries = 2;  // retries after the first attempt
  int backoff_ms = 250;
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedResponseError : std::runtime_error {
  std::string transcript;
  MalformedResponseError(const std::string& what, std::string transcript_)
      : std::runtime_error(what), transcript(std::move(transcript_)) {}
};

/// Parses the delimited RANKED block; duplicates are dropped (first rank
/// wins); unknown category ids raise MalformedResponseError.
std::vector<Hypothesis> parse_ranked_block(const std::string& content,
                                           const FailureTaxonomy& taxonomy);

/// Sends the composite prompt to a chat-completion endpoint (or the injected
/// transport). With no endpoint configured, falls back to the offline
/// channel-overlap heuristic so the pipeline works air-gapped.
DiagnosisReport classify(const DiagnosisRequest& req, const EndpointConfig& endpoint,
                         HttpTransport* transport = nullptr);

/// Offline ranking by overlap between top-K salient channel groups and
/// taxonomy hints.
DiagnosisReport classify_heuristic(const DiagnosisRequest& req);

struct RcaScore {
  double top1 = 0.0;
  double top3 = 0.0;
};

RcaScore score_rca(const std::vector<DiagnosisReport>& reports,
                   const std::vector<std::string>& labels);

}  // namespace rapt
