#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdat/trainer.hpp"

namespace sdat {

struct VarySpec {
  std::string key;
  std::vector<std::string> values;
};

// "key=v1,v2,..." as accepted on the command line.
VarySpec parse_vary(const std::string& arg);

struct SweepCell {
  std::vector<std::pair<std::string, std::string>> assignment;
  std::string dir_name;  // key=value parts joined with "__"
};

// Cross product in the order the vary specs were given.
std::vector<SweepCell> expand_grid(const std::vector<VarySpec>& vary);

struct SweepOptions {
  std::vector<VarySpec> vary;
  std::vector<std::uint64_t> seeds;
  int parallel = 1;
};

// Runs every (cell, seed) combination as an isolated training run under
// out_dir/<cell>/seed<S>/ and writes summary.csv with per-cell mean/std of the
// final-epoch metrics. Parallel workers only share the work queue; summary
// rows are assembled in grid order regardless of completion order.
void run_sweep(const TrainConfig& base, const SweepOptions& opts, const std::string& out_dir);

}  // namespace sdat
