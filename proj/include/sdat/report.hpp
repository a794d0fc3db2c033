#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sdat/hessian.hpp"
#include "sdat/trainer.hpp"

namespace sdat {

struct RunRecord {
  std::string dir;
  nlohmann::json config;  // manifest config snapshot
  std::vector<EpochMetrics> metrics;
  std::optional<SpectrumReport> spectrum;
};

RunRecord load_run(const std::string& dir);

// Markdown tables (group x metric, mean +/- std over seeds) plus tidy CSV
// series next to the markdown file for external plotting: accuracy vs epoch,
// lambda_max vs mode, accuracy vs rho, accuracy vs label noise, and a summary
// CSV mirroring the tables.
void write_report(const std::vector<std::string>& run_dirs, const std::string& out_md);

}  // namespace sdat
