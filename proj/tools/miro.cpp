// miro: run experiments, plot learning curves, summarize final returns.
//
//   miro run <config>
//   miro plot <glob>... --out curves.svg
//   miro report <glob>...

#include <glob.h>

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "miro/core/alloc.hpp"
#include "miro/expcli/config.hpp"
#include "miro/expcli/plot.hpp"
#include "miro/expcli/report.hpp"
#include "miro/expcli/runner.hpp"

namespace {

// Expands patterns the shell left alone; literal paths pass through.
std::vector<std::string> expand(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const auto& p : patterns) {
    glob_t g{};
    if (::glob(p.c_str(), GLOB_NOCHECK, nullptr, &g) == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    ::globfree(&g);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  miro::tune_allocator();
  CLI::App app{"Contrastive latent models for pixel-based control"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "train every seed of an experiment config");
  run->add_option("config", config_path, "experiment config file")->required();

  std::vector<std::string> plot_inputs;
  std::string svg_path;
  auto* plot = app.add_subcommand("plot", "learning curves (mean and one std band) as SVG");
  plot->add_option("metrics", plot_inputs, "metrics CSV files or glob patterns")->required();
  plot->add_option("--out", svg_path, "output SVG path")->required();

  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "final-return table and distractor ratios");
  report->add_option("metrics", report_inputs, "metrics CSV files or glob patterns")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = miro::expcli::load_config(config_path);
      const auto art = miro::expcli::run_experiment(cfg);
      if (art.failed) {
        std::cerr << "run failed:\n" << art.error;
        return 1;
      }
      std::cout << "wrote " << art.metrics.size() << " metrics files and "
                << art.manifest.string() << '\n';
    } else if (*plot) {
      const auto files = expand(plot_inputs);
      miro::expcli::plot(files, svg_path);
      std::cout << "wrote " << svg_path << '\n';
    } else if (*report) {
      const auto files = expand(report_inputs);
      std::cout << miro::expcli::format_report(miro::expcli::build_report(files));
    }
  } catch (const miro::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
