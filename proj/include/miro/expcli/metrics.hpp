#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "miro/agent/training.hpp"
#include "miro/core/errors.hpp"

// Metrics CSV, schema version 1 (docs/metrics_schema.md). Fields that do
// not apply to a row's event are left empty.

namespace miro::expcli {

inline constexpr int kMetricsSchemaVersion = 1;

inline constexpr std::array<std::string_view, 16> kMetricsColumns{
    "run_id",  "seed",       "variant",    "distractors", "event",  "step",
    "episode_idx", "total",  "nce",        "kl_filter",   "reward_nll", "recon",
    "return",  "wall_ms",    "nce_lnb",    "task"};

struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string variant;
  std::size_t distractors = 0;
  std::string event;  // train | episode
  std::uint64_t step = 0;
  std::uint64_t episode_idx = 0;
  std::optional<double> total, nce, kl_filter, reward_nll, recon, episode_return;
  double wall_ms = 0.0;
  std::optional<double> nce_lnb;
  std::string task;
};

// Shortest round-trip decimal form; identical bits give identical text.
inline std::string format_number(double v) {
  if (!std::isfinite(v)) throw NumericError("non-finite metrics value");
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  std::array<char, 64> buf;
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf.data(), p);
}

inline std::string header_line() {
  std::string h;
  for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) {
    if (i) h += ',';
    h += kMetricsColumns[i];
  }
  return h;
}

inline std::string format_row(const MetricsRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  std::ostringstream os;
  os << r.run_id << ',' << r.seed << ',' << r.variant << ',' << r.distractors << ',' << r.event
     << ',' << r.step << ',' << r.episode_idx << ',' << opt(r.total) << ',' << opt(r.nce) << ','
     << opt(r.kl_filter) << ',' << opt(r.reward_nll) << ',' << opt(r.recon) << ','
     << opt(r.episode_return) << ',' << format_number(r.wall_ms) << ',' << opt(r.nce_lnb) << ','
     << r.task;
  return os.str();
}

inline MetricsRow to_metrics_row(const agent::LogRow& row, const std::string& run_id,
                                 std::uint64_t seed, const agent::TrainingConfig& cfg) {
  MetricsRow m;
  m.run_id = run_id;
  m.seed = seed;
  m.variant = model::objective_name(cfg.train.objective);
  m.distractors = cfg.env.distractors;
  m.step = row.step;
  m.episode_idx = row.episode_idx;
  m.wall_ms = row.wall_ms;
  m.task = envs::task_name(cfg.env.task);
  if (row.event == agent::Event::kTrain) {
    m.event = "train";
    m.total = row.loss.total;
    m.nce = row.loss.nce_sum();
    m.kl_filter = row.loss.kl_filter;
    m.reward_nll = row.loss.reward_nll;
    m.recon = row.loss.recon;
    m.nce_lnb = row.loss.nce_bound_sum();
  } else {
    m.event = "episode";
    m.episode_return = row.episode_return;
  }
  return m;
}

// Append-only writer; every row is flushed so an aborted run keeps its log.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw Error("cannot open '" + path + "' for writing");
    out_ << header_line() << '\n';
    out_.flush();
  }

  void write(const MetricsRow& r) {
    out_ << format_row(r) << '\n';
    out_.flush();
    if (!out_) throw Error("failed writing '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

template <typename U>
U csv_number(const std::string& v, std::string_view column, int line) {
  U out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc{} || p != end) {
    throw ParseError("column '" + std::string(column) + "': bad number '" + v + "'", line);
  }
  return out;
}

inline std::optional<double> csv_optional(const std::string& v, std::string_view column,
                                          int line) {
  if (v.empty()) return std::nullopt;
  const auto d = csv_number<double>(v, column, line);
  if (!std::isfinite(d)) throw ParseError("column '" + std::string(column) + "' not finite", line);
  return d;
}

}  // namespace detail

// Throws ParseError naming the first column that differs from the schema.
inline void check_header(const std::string& line, const std::string& path) {
  const auto cols = detail::split_csv(line);
  for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) {
    if (i >= cols.size()) {
      throw ParseError(path + ": missing column '" + std::string(kMetricsColumns[i]) + "'", 1);
    }
    if (cols[i] != kMetricsColumns[i]) {
      throw ParseError(path + ": unexpected column '" + cols[i] + "' where '" +
                           std::string(kMetricsColumns[i]) + "' belongs",
                       1);
    }
  }
  if (cols.size() > kMetricsColumns.size()) {
    throw ParseError(path + ": unexpected column '" + cols[kMetricsColumns.size()] + "'", 1);
  }
}

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read metrics file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty metrics file", 1);
  check_header(line, path);
  std::vector<MetricsRow> rows;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv(line);
    if (f.size() != kMetricsColumns.size()) {
      throw ParseError(path + ": expected " + std::to_string(kMetricsColumns.size()) +
                           " fields, got " + std::to_string(f.size()),
                       n);
    }
    MetricsRow r;
    r.run_id = f[0];
    r.seed = detail::csv_number<std::uint64_t>(f[1], "seed", n);
    r.variant = f[2];
    r.distractors = detail::csv_number<std::size_t>(f[3], "distractors", n);
    r.event = f[4];
    if (r.event != "train" && r.event != "episode") {
      throw ParseError(path + ": column 'event' has unknown value '" + r.event + "'", n);
    }
    r.step = detail::csv_number<std::uint64_t>(f[5], "step", n);
    r.episode_idx = detail::csv_number<std::uint64_t>(f[6], "episode_idx", n);
    r.total = detail::csv_optional(f[7], "total", n);
    r.nce = detail::csv_optional(f[8], "nce", n);
    r.kl_filter = detail::csv_optional(f[9], "kl_filter", n);
    r.reward_nll = detail::csv_optional(f[10], "reward_nll", n);
    r.recon = detail::csv_optional(f[11], "recon", n);
    r.episode_return = detail::csv_optional(f[12], "return", n);
    r.wall_ms = detail::csv_number<double>(f[13], "wall_ms", n);
    r.nce_lnb = detail::csv_optional(f[14], "nce_lnb", n);
    r.task = f[15];
    if (r.event == "episode" && !r.episode_return) {
      throw ParseError(path + ": column 'return' empty on an episode row", n);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace miro::expcli
