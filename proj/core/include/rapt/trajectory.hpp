#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace rapt {

/// Time-ordered sequence of observation vectors, optionally with aligned
/// action/command vectors. Row-major, contiguous.
struct TrajectoryLog {
  std::size_t d_obs = 0;
  std::size_t d_act = 0;
  std::vector<double> obs;
  std::vector<double> act;

  TrajectoryLog() = default;
  TrajectoryLog(std::size_t d_obs_, std::size_t d_act_) : d_obs(d_obs_), d_act(d_act_) {}

  std::size_t length() const { return d_obs == 0 ? 0 : obs.size() / d_obs; }

  const double* obs_row(std::size_t t) const { return obs.data() + t * d_obs; }
  double* obs_row(std::size_t t) { return obs.data() + t * d_obs; }
  const double* act_row(std::size_t t) const { return act.data() + t * d_act; }
  double* act_row(std::size_t t) { return act.data() + t * d_act; }

  std::span<const double> obs_span(std::size_t t) const { return {obs_row(t), d_obs}; }
  std::span<const double> act_span(std::size_t t) const {
    return d_act ? std::span<const double>{act_row(t), d_act} : std::span<const double>{};
  }

  void append(std::span<const double> o, std::span<const double> a = {}) {
    if (o.size() != d_obs) throw std::invalid_argument("TrajectoryLog: obs width mismatch");
    if (a.size() != d_act) throw std::invalid_argument("TrajectoryLog: act width mismatch");
    obs.insert(obs.end(), o.begin(), o.end());
    act.insert(act.end(), a.begin(), a.end());
  }

  /// Contiguous sub-log [begin, begin+len).
  TrajectoryLog slice(std::size_t begin, std::size_t len) const {
    if (begin + len > length()) throw std::out_of_range("TrajectoryLog::slice");
    TrajectoryLog out(d_obs, d_act);
    out.obs.assign(obs.begin() + begin * d_obs, obs.begin() + (begin + len) * d_obs);
    if (d_act) out.act.assign(act.begin() + begin * d_act, act.begin() + (begin + len) * d_act);
    return out;
  }
};

}  // namespace rapt
