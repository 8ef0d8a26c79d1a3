#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "miro/agent/training.hpp"
#include "miro/expcli/config.hpp"
#include "miro/expcli/metrics.hpp"

namespace miro::expcli {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "MIRO_OUTPUT_ROOT";

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative output directories resolve against $MIRO_OUTPUT_ROOT when set.
inline fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  }
  return p;
}

struct RunArtifacts {
  fs::path dir;
  std::vector<fs::path> metrics;
  std::vector<fs::path> checkpoints;
  fs::path manifest;
  bool failed = false;
  std::string error;
};

inline std::string run_id(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.name + "_seed" + std::to_string(seed);
}

// Runs one seed to completion, streaming metrics rows to disk.
inline void run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& csv,
                     const fs::path& ckpt) {
  MetricsWriter writer(csv.string());
  const std::string id = run_id(cfg, seed);
  agent::run_training(
      cfg.training, seed,
      [&](const agent::LogRow& row) { writer.write(to_metrics_row(row, id, seed, cfg.training)); },
      ckpt.string());
}

inline void write_manifest(const ExperimentConfig& cfg, const RunArtifacts& art) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["config_format_version"] = kConfigFormatVersion;
  j["metrics_schema_version"] = kMetricsSchemaVersion;
  j["variant"] = model::objective_name(cfg.variant());
  j["seeds"] = cfg.seeds;
  j["status"] = art.failed ? "failed" : "ok";
  if (art.failed) j["error"] = art.error;
  j["config_sha256"] = sha256_hex(cfg.source);
  j["config"] = cfg.source;
  auto list = nlohmann::ordered_json::array();
  auto add = [&](const fs::path& p, const char* kind) {
    if (!fs::exists(p)) return;
    const std::string bytes = read_bytes(p);
    list.push_back({{"path", p.filename().string()},
                    {"kind", kind},
                    {"bytes", bytes.size()},
                    {"sha256", sha256_hex(bytes)}});
  };
  for (const auto& p : art.metrics) add(p, "metrics");
  for (const auto& p : art.checkpoints) add(p, "checkpoint");
  j["artifacts"] = list;
  std::ofstream out(art.manifest, std::ios::trunc);
  if (!out) throw Error("cannot write '" + art.manifest.string() + "'");
  out << j.dump(2) << '\n';
}

// Trains every seed, then writes the manifest. On failure the partial
// artifacts stay in place next to a FAILED marker holding the error.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  cfg.validate();
  RunArtifacts art;
  art.dir = resolve_output_dir(cfg.output_dir);
  fs::create_directories(art.dir);
  fs::remove(art.dir / "FAILED");
  art.manifest = art.dir / "manifest.json";
  for (std::uint64_t seed : cfg.seeds) {
    art.metrics.push_back(art.dir / (run_id(cfg, seed) + ".csv"));
    art.checkpoints.push_back(art.dir / (run_id(cfg, seed) + ".ckpt"));
    fs::remove(art.dir / (run_id(cfg, seed) + ".error"));
  }

  std::vector<std::string> errors;
  if (cfg.parallel <= 1 || cfg.seeds.size() == 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      log << "[" << cfg.name << "] seed " << cfg.seeds[i] << '\n';
      try {
        run_seed(cfg, cfg.seeds[i], art.metrics[i], art.checkpoints[i]);
      } catch (const std::exception& e) {
        errors.push_back("seed " + std::to_string(cfg.seeds[i]) + ": " + e.what());
        break;
      }
    }
  } else {
    // One worker process per seed, at most cfg.parallel at a time.
    std::size_t next = 0, running = 0;
    std::vector<std::pair<pid_t, std::size_t>> pids;
    auto reap = [&] {
      int status = 0;
      const pid_t pid = ::wait(&status);
      if (pid < 0) throw Error("wait failed");
      --running;
      for (const auto& [p, i] : pids) {
        if (p != pid) continue;
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
          const fs::path err = art.dir / (run_id(cfg, cfg.seeds[i]) + ".error");
          std::string msg = fs::exists(err) ? read_bytes(err) : "worker exited abnormally";
          errors.push_back("seed " + std::to_string(cfg.seeds[i]) + ": " + msg);
        }
      }
    };
    while (next < cfg.seeds.size() || running > 0) {
      if (next < cfg.seeds.size() && running < cfg.parallel) {
        const std::size_t i = next++;
        log << "[" << cfg.name << "] seed " << cfg.seeds[i] << " (worker)\n";
        log.flush();
        const pid_t pid = ::fork();
        if (pid < 0) throw Error("fork failed");
        if (pid == 0) {
          int code = 0;
          try {
            run_seed(cfg, cfg.seeds[i], art.metrics[i], art.checkpoints[i]);
          } catch (const std::exception& e) {
            std::ofstream(art.dir / (run_id(cfg, cfg.seeds[i]) + ".error")) << e.what();
            code = 1;
          }
          std::fflush(nullptr);
          ::_exit(code);
        }
        pids.emplace_back(pid, i);
        ++running;
      } else {
        reap();
      }
    }
  }

  if (!errors.empty()) {
    art.failed = true;
    for (const auto& e : errors) art.error += e + "\n";
    std::ofstream(art.dir / "FAILED") << art.error;
  }
  write_manifest(cfg, art);
  return art;
}

}  // namespace miro::expcli
