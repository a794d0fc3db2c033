#include "sdat/sweep.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace sdat {

namespace fs = std::filesystem;

VarySpec parse_vary(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= arg.size())
    throw std::invalid_argument("--vary expects KEY=V1,V2,... got: " + arg);
  VarySpec spec;
  spec.key = arg.substr(0, eq);
  std::stringstream ss(arg.substr(eq + 1));
  std::string cell;
  while (std::getline(ss, cell, ',')) spec.values.push_back(cell);
  if (spec.values.empty()) throw std::invalid_argument("--vary has no values: " + arg);
  return spec;
}

std::vector<SweepCell> expand_grid(const std::vector<VarySpec>& vary) {
  std::vector<SweepCell> cells{{{}, ""}};
  for (const VarySpec& v : vary) {
    std::vector<SweepCell> next;
    for (const SweepCell& cell : cells) {
      for (const std::string& value : v.values) {
        SweepCell c = cell;
        c.assignment.emplace_back(v.key, value);
        if (!c.dir_name.empty()) c.dir_name += "__";
        c.dir_name += v.key + "=" + value;
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  if (cells.size() == 1 && cells[0].dir_name.empty()) cells[0].dir_name = "base";
  return cells;
}

void run_sweep(const TrainConfig& base, const SweepOptions& opts, const std::string& out_dir) {
  if (opts.seeds.empty()) throw std::invalid_argument("sweep: need at least one seed");
  const auto cells = expand_grid(opts.vary);
  fs::create_directories(out_dir);

  struct Job {
    std::size_t cell;
    std::size_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < opts.seeds.size(); ++s) jobs.push_back({c, s});

  std::vector<std::vector<EpochMetrics>> finals(cells.size(),
                                                std::vector<EpochMetrics>(opts.seeds.size()));
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::string first_error;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job job = jobs[i];
      try {
        TrainConfig cfg = base;
        for (const auto& [key, value] : cells[job.cell].assignment) cfg.set_key(key, value);
        cfg.seed = opts.seeds[job.seed];
        const fs::path run_dir = fs::path(out_dir) / cells[job.cell].dir_name /
                                 ("seed" + std::to_string(cfg.seed));
        const auto metrics = train(cfg, run_dir.string());
        finals[job.cell][job.seed] = metrics.back();
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };

  const int workers = std::max(1, opts.parallel);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!first_error.empty()) throw std::runtime_error("sweep run failed: " + first_error);

  const std::string summary_path = (fs::path(out_dir) / "summary.csv").string();
  std::ofstream f(summary_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + summary_path);
  f << "cell";
  for (const VarySpec& v : opts.vary) f << "," << v.key;
  f << ",n_seeds";
  const char* metrics_cols[] = {"task_loss", "domain_loss", "src_acc", "tgt_acc", "domain_acc"};
  for (const char* m : metrics_cols) f << "," << m << "_mean," << m << "_std";
  f << "\n";

  char buf[64];
  for (std::size_t c = 0; c < cells.size(); ++c) {
    f << cells[c].dir_name;
    for (const auto& [key, value] : cells[c].assignment) f << "," << value;
    f << "," << opts.seeds.size();
    auto emit = [&](auto getter) {
      std::vector<double> v;
      for (const EpochMetrics& m : finals[c]) v.push_back(getter(m));
      const MetricStats s = mean_std(std::move(v));
      std::snprintf(buf, sizeof buf, ",%.10g,%.10g", s.mean, s.stddev);
      f << buf;
    };
    emit([](const EpochMetrics& m) { return m.task_loss; });
    emit([](const EpochMetrics& m) { return m.domain_loss; });
    emit([](const EpochMetrics& m) { return m.src_acc; });
    emit([](const EpochMetrics& m) { return m.tgt_acc; });
    emit([](const EpochMetrics& m) { return m.domain_acc; });
    f << "\n";
  }
}

}  // namespace sdat
