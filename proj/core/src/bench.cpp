#include "rapt/bench.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rapt/metrics.hpp"

namespace rapt {

EvalReport run_benchmark(const Detector& detector, const CalibrationProfile& profile,
                         const WorldConfig& world_cfg, const std::vector<FaultTemplate>& suite,
                         const BenchmarkConfig& bench_cfg, std::size_t first_eval_episode_index) {
  if (bench_cfg.n_nominal == 0) throw std::invalid_argument("run_benchmark: need nominal episodes");
  World world(world_cfg);
  Rng rng = Rng(bench_cfg.seed).fork(0xbe7c);

  struct Scored {
    double hybrid, model_only, gate1, gate2, gate3;
    bool flagged;
    std::ptrdiff_t first_detection;
  };
  auto score_episode = [&](const TrajectoryLog& log) {
    EpisodeVerdict ep = detector.detect_episode(profile, log);
    return Scored{ep.hybrid_score, ep.model_score, ep.gate1_score,
                  ep.gate2_score, ep.gate3_score, ep.flagged, ep.first_detection};
  };

  std::vector<Scored> nominal;
  nominal.reserve(bench_cfg.n_nominal);
  for (std::size_t i = 0; i < bench_cfg.n_nominal; ++i) {
    nominal.push_back(score_episode(world.episode(first_eval_episode_index + i)));
  }

  struct FaultedEpisode {
    Scored scored;
    FaultKind kind;
    std::size_t onset;
  };
  std::vector<FaultedEpisode> faulted;
  faulted.reserve(bench_cfg.n_faulted);
  for (std::size_t i = 0; i < bench_cfg.n_faulted && !suite.empty(); ++i) {
    const FaultTemplate& tmpl = suite[i % suite.size()];
    FaultSpec spec = instantiate_fault(tmpl, world_cfg, rng);
    const std::size_t index = first_eval_episode_index + bench_cfg.n_nominal + i;
    FaultResult res = inject_fault(world, index, spec, bench_cfg.seed ^ (index * 0x9e37u));
    faulted.push_back({score_episode(res.log), spec.kind, spec.onset});
  }

  EvalReport report;
  report.fpr_budget = bench_cfg.fpr_budget;
  report.n_nominal = nominal.size();
  report.n_faulted = faulted.size();

  auto collect = [&](auto picker, const char* name) {
    std::vector<double> nom, anom;
    nom.reserve(nominal.size());
    anom.reserve(faulted.size());
    for (const auto& s : nominal) nom.push_back(picker(s));
    for (const auto& f : faulted) anom.push_back(picker(f.scored));
    MethodMetrics m;
    if (!anom.empty()) {
      m.defined = true;
      std::vector<double> scores = nom;
      scores.insert(scores.end(), anom.begin(), anom.end());
      std::vector<int> labels(nom.size(), 0);
      labels.insert(labels.end(), anom.size(), 1);
      m.auroc = auroc(scores, labels);
      TprResult tpr = tpr_at_episodic_fpr(nom, anom, bench_cfg.fpr_budget);
      m.tpr = tpr.tpr;
      m.threshold = tpr.threshold;
    }
    report.methods[name] = m;
    return m;
  };

  collect([](const Scored& s) { return s.hybrid; }, "hybrid");
  collect([](const Scored& s) { return s.model_only; }, "model_only");
  collect([](const Scored& s) { return s.gate1; }, "gate1_max");
  collect([](const Scored& s) { return s.gate2; }, "gate2_mean");
  collect([](const Scored& s) { return s.gate3; }, "range_only");

  // Per-kind TPR and AUROC on the hybrid score at the global swept threshold.
  if (!faulted.empty()) {
    const double thr = report.methods.at("hybrid").threshold;
    std::vector<double> nom_scores;
    for (const auto& s : nominal) nom_scores.push_back(s.hybrid);
    std::map<std::string, std::pair<std::size_t, std::size_t>> kind_counts;  // hits/total
    std::map<std::string, std::vector<double>> kind_scores;
    for (const auto& f : faulted) {
      auto& [hits, total] = kind_counts[to_string(f.kind)];
      ++total;
      if (f.scored.hybrid > thr) ++hits;
      kind_scores[to_string(f.kind)].push_back(f.scored.hybrid);
    }
    for (const auto& [kind, counts] : kind_counts) {
      report.per_fault_tpr[kind] =
          static_cast<double>(counts.first) / static_cast<double>(counts.second);
      std::vector<double> scores = nom_scores;
      scores.insert(scores.end(), kind_scores[kind].begin(), kind_scores[kind].end());
      std::vector<int> labels(nom_scores.size(), 0);
      labels.insert(labels.end(), kind_scores[kind].size(), 1);
      report.per_fault_auroc[kind] = auroc(scores, labels);
    }
  }

  // Native binary-gate operating point and first-detection delays.
  std::vector<double> delays;
  for (const auto& s : nominal) (s.flagged ? report.fp : report.tn)++;
  for (const auto& f : faulted) {
    if (f.scored.flagged) {
      ++report.tp;
      const double delay = static_cast<double>(f.scored.first_detection) -
                           static_cast<double>(f.onset);
      delays.push_back(delay);
    } else {
      ++report.fn;
    }
  }
  report.native_fpr = nominal.empty()
                          ? 0.0
                          : static_cast<double>(report.fp) / static_cast<double>(nominal.size());
  if (!delays.empty()) {
    report.delay_count = delays.size();
    double acc = 0.0;
    for (double d : delays) acc += d;
    report.delay_mean = acc / static_cast<double>(delays.size());
    std::sort(delays.begin(), delays.end());
    report.delay_median = delays[delays.size() / 2];
  }
  return report;
}

}  // namespace rapt
