#pragma once

#include <algorithm>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "advnav/world/world.hpp"

namespace advnav {

struct EpisodeMetrics {
  std::string episode_id;
  double ne = 0.0;   // navigation error, m
  double sr = 0.0;   // success
  double tl = 0.0;   // trajectory length, m
  double spl = 0.0;
  double gp = 0.0;   // goal progress, m
  double osr = 0.0;  // oracle success along the trajectory
  double opsr = 0.0; // oracle success along the ground-truth path
};

struct MetricsReport {
  std::vector<EpisodeMetrics> episodes;
  EpisodeMetrics mean;  // episode_id "mean"
  int count = 0;
};

/// Per-episode navigation metrics of a finished episode.
///
/// OPSR counts success when some trajectory node that lies on the
/// ground-truth path is within Z of the goal.
inline EpisodeMetrics episode_metrics(const Episode& ep, const WorldGraph& g,
                                      std::string episode_id = {}) {
  if (!ep.done) throw std::invalid_argument("episode_metrics: episode is not finished");
  const double z = g.config.success_radius;
  EpisodeMetrics m;
  m.episode_id = std::move(episode_id);
  m.ne = g.distance(ep.current, ep.goal);
  m.sr = m.ne <= z ? 1.0 : 0.0;
  for (std::size_t i = 1; i < ep.trajectory.size(); ++i) {
    m.tl += g.edge_length(ep.trajectory[i - 1], ep.trajectory[i]);
  }
  const double shortest = g.distance(ep.start, ep.goal);
  const double denom = std::max(m.tl, shortest);
  m.spl = denom > 0.0 ? m.sr * shortest / denom : m.sr;
  m.gp = shortest - m.ne;
  double oracle = std::numeric_limits<double>::infinity();
  double oracle_path = std::numeric_limits<double>::infinity();
  for (int n : ep.trajectory) {
    const double d = g.distance(n, ep.goal);
    oracle = std::min(oracle, d);
    if (std::find(ep.ground_truth_path.begin(), ep.ground_truth_path.end(), n) !=
        ep.ground_truth_path.end()) {
      oracle_path = std::min(oracle_path, d);
    }
  }
  m.osr = oracle <= z ? 1.0 : 0.0;
  m.opsr = oracle_path <= z ? 1.0 : 0.0;
  return m;
}

inline MetricsReport aggregate(std::vector<EpisodeMetrics> rows) {
  MetricsReport r;
  r.episodes = std::move(rows);
  r.count = static_cast<int>(r.episodes.size());
  r.mean.episode_id = "mean";
  if (r.count == 0) return r;
  for (const auto& m : r.episodes) {
    r.mean.ne += m.ne;
    r.mean.sr += m.sr;
    r.mean.tl += m.tl;
    r.mean.spl += m.spl;
    r.mean.gp += m.gp;
    r.mean.osr += m.osr;
    r.mean.opsr += m.opsr;
  }
  const double n = r.count;
  r.mean.ne /= n;
  r.mean.sr /= n;
  r.mean.tl /= n;
  r.mean.spl /= n;
  r.mean.gp /= n;
  r.mean.osr /= n;
  r.mean.opsr /= n;
  return r;
}

inline constexpr const char* kMetricsCsvHeader = "model,attack,split,episode_id,NE,SR,TL,SPL,GP,OSR,OPSR";

/// Formats a double with fixed precision so CSV output is byte-stable.
inline std::string fmt6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

inline void write_metrics_rows(std::ostream& os, const MetricsReport& r, const std::string& model,
                               const std::string& attack, const std::string& split) {
  auto row = [&](const EpisodeMetrics& m) {
    os << model << ',' << attack << ',' << split << ',' << m.episode_id << ',' << fmt6(m.ne) << ','
       << fmt6(m.sr) << ',' << fmt6(m.tl) << ',' << fmt6(m.spl) << ',' << fmt6(m.gp) << ','
       << fmt6(m.osr) << ',' << fmt6(m.opsr) << '\n';
  };
  for (const auto& m : r.episodes) row(m);
  row(r.mean);
}

inline nlohmann::json metrics_to_json(const EpisodeMetrics& m) {
  return {{"episode_id", m.episode_id}, {"NE", m.ne}, {"SR", m.sr}, {"TL", m.tl}, {"SPL", m.spl},
          {"GP", m.gp}, {"OSR", m.osr}, {"OPSR", m.opsr}};
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["count"] = r.count;
  j["mean"] = metrics_to_json(r.mean);
  j["episodes"] = nlohmann::json::array();
  for (const auto& m : r.episodes) j["episodes"].push_back(metrics_to_json(m));
  return j;
}

}  // namespace advnav
