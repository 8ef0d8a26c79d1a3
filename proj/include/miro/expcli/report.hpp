#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "miro/expcli/summary.hpp"

namespace miro::expcli {

inline constexpr std::size_t kFinalWindow = 10;

struct GroupSummary {
  GroupKey key;
  std::size_t seeds = 0;
  double final_mean = 0.0;  // mean over seeds of the last-window mean return
  double final_std = 0.0;
  std::vector<double> per_seed;
  bool short_window = false;  // some seed had fewer than kFinalWindow episodes
};

struct RobustnessRatio {
  std::string task;
  std::string variant;
  std::size_t distractors = 0;  // the "with" arm
  double ratio = 0.0;
};

struct Report {
  std::vector<GroupSummary> groups;
  std::vector<RobustnessRatio> ratios;
  std::vector<std::string> warnings;
};

inline double final_performance(const std::vector<double>& returns, std::size_t window,
                                 bool* short_window = nullptr) {
  if (returns.empty()) throw DataError("series without episodes");
  const std::size_t n = std::min(window, returns.size());
  if (short_window) *short_window = n < window;
  return mean_of(std::vector<double>(returns.end() - static_cast<std::ptrdiff_t>(n), returns.end()));
}

inline Report build_report(const Groups& groups, std::size_t window = kFinalWindow) {
  Report rep;
  for (const auto& [key, series] : groups) {
    GroupSummary g;
    g.key = key;
    g.seeds = series.size();
    // Sort per-seed values so the summary does not depend on file order.
    for (const auto& s : series) {
      bool short_window = false;
      g.per_seed.push_back(final_performance(s.returns, window, &short_window));
      if (short_window) {
        g.short_window = true;
        rep.warnings.push_back("warning: " + s.source + " (" + key.label() + ", seed " +
                               std::to_string(s.seed) + ") has " +
                               std::to_string(s.returns.size()) + " episodes, fewer than " +
                               std::to_string(window) + "; using all of them");
      }
    }
    std::sort(g.per_seed.begin(), g.per_seed.end());
    g.final_mean = mean_of(g.per_seed);
    g.final_std = sample_std(g.per_seed);
    rep.groups.push_back(std::move(g));
  }
  std::map<std::pair<std::string, std::string>, double> without;
  for (const auto& g : rep.groups) {
    if (g.key.distractors == 0) without[{g.key.task, g.key.variant}] = g.final_mean;
  }
  for (const auto& g : rep.groups) {
    if (g.key.distractors == 0) continue;
    auto it = without.find({g.key.task, g.key.variant});
    if (it == without.end()) continue;
    if (it->second == 0.0) {
      rep.warnings.push_back("warning: " + g.key.task + " " + g.key.variant +
                             " has zero final return without distractors; ratio undefined");
      continue;
    }
    rep.ratios.push_back({g.key.task, g.key.variant, g.key.distractors, g.final_mean / it->second});
  }
  return rep;
}

inline Report build_report(const std::vector<std::string>& paths,
                           std::size_t window = kFinalWindow) {
  if (paths.empty()) throw ContractError("report needs at least one metrics file");
  return build_report(group_series(paths), window);
}

inline std::string format_report(const Report& rep) {
  std::ostringstream os;
  for (const auto& w : rep.warnings) os << w << '\n';
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %-8s %11s %5s %12s %12s\n", "task", "variant",
                "distractors", "seeds", "final_mean", "final_std");
  os << buf;
  for (const auto& g : rep.groups) {
    std::snprintf(buf, sizeof buf, "%-10s %-8s %11zu %5zu %12.4f %12.4f\n", g.key.task.c_str(),
                  g.key.variant.c_str(), g.key.distractors, g.seeds, g.final_mean, g.final_std);
    os << buf;
  }
  if (!rep.ratios.empty()) {
    os << '\n';
    std::snprintf(buf, sizeof buf, "%-10s %-8s %11s %12s\n", "task", "variant", "distractors",
                  "ratio");
    os << buf;
    for (const auto& r : rep.ratios) {
      std::snprintf(buf, sizeof buf, "%-10s %-8s %11zu %12.4f\n", r.task.c_str(),
                    r.variant.c_str(), r.distractors, r.ratio);
      os << buf;
    }
  }
  return os.str();
}

}  // namespace miro::expcli
