#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "miro/expcli/metrics.hpp"

namespace miro::expcli {

struct GroupKey {
  std::string task;
  std::string variant;
  std::size_t distractors = 0;

  auto operator<=>(const GroupKey&) const = default;
  std::string label() const {
    return task + " " + variant + " d=" + std::to_string(distractors);
  }
};

// Episode returns of one run, in episode order.
struct Series {
  std::string source;
  std::uint64_t seed = 0;
  std::vector<double> returns;
};

using Groups = std::map<GroupKey, std::vector<Series>>;

// Splits each file's episode rows into per-run series grouped by
// (task, variant, distractors).
inline Groups group_series(const std::vector<std::string>& paths) {
  Groups groups;
  for (const auto& path : paths) {
    std::map<std::tuple<GroupKey, std::string, std::uint64_t>, std::map<std::uint64_t, double>> runs;
    for (const auto& r : read_metrics(path)) {
      if (r.event != "episode") continue;
      runs[{GroupKey{r.task, r.variant, r.distractors}, r.run_id, r.seed}][r.episode_idx] =
          *r.episode_return;
    }
    for (auto& [key, eps] : runs) {
      Series s{path, std::get<2>(key), {}};
      for (const auto& [idx, ret] : eps) s.returns.push_back(ret);
      groups[std::get<0>(key)].push_back(std::move(s));
    }
  }
  return groups;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); zero for fewer than two values.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct CurvePoint {
  std::size_t episode = 0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

// Across-series mean and std per episode index, over the series that reach it.
inline std::vector<CurvePoint> mean_curve(const std::vector<Series>& series) {
  std::size_t longest = 0;
  for (const auto& s : series) longest = std::max(longest, s.returns.size());
  std::vector<CurvePoint> out;
  for (std::size_t e = 0; e < longest; ++e) {
    std::vector<double> vals;
    for (const auto& s : series) {
      if (e < s.returns.size()) vals.push_back(s.returns[e]);
    }
    out.push_back({e, mean_of(vals), sample_std(vals), vals.size()});
  }
  return out;
}

}  // namespace miro::expcli
