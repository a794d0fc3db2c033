// Command-line surface for the domain-adversarial smoothing lab: synthetic
// data generation, training, curvature reports, sweeps, numeric theory
// checks and report rendering. Every command writes a manifest.json beside
// its outputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdat/data.hpp"
#include "sdat/hessian.hpp"
#include "sdat/report.hpp"
#include "sdat/sweep.hpp"
#include "sdat/theory.hpp"
#include "sdat/trainer.hpp"
#include "sdat/version.hpp"

namespace fs = std::filesystem;

namespace {

void write_file_manifest(const std::string& out_file, const std::string& command,
                         const nlohmann::ordered_json& config, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["tool"] = "sdat";
  j["version"] = sdat::kVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  std::ofstream f(out_file + ".manifest.json", std::ios::binary);
  f << j.dump(2) << "\n";
}

struct GenDataArgs {
  std::string kind = "two-moons";
  int n = 600;
  double noise = 0.1;
  double angle = 45.0;
  double shift = 0.0;
  double label_noise = 0.0;
  std::uint64_t seed = 1;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  fs::create_directories(a.out);
  sdat::LabeledDataset source, target;
  if (a.kind == "two-moons") {
    source = sdat::make_two_moons(a.n, a.noise, sdat::child_seed(a.seed, 0));
    target = sdat::rotate(sdat::make_two_moons(a.n, a.noise, sdat::child_seed(a.seed, 1)),
                          a.angle);
  } else if (a.kind == "blobs") {
    // shared cluster centers, independent sample streams, shifted target
    const double std_dev = a.noise > 0.0 ? a.noise : 1.0;
    source = sdat::make_blobs(a.n, 3, 2, 0.0, std_dev, a.seed, 1);
    target = sdat::make_blobs(a.n, 3, 2, a.shift, std_dev, a.seed, 2);
  } else {
    throw std::invalid_argument("--kind must be two-moons or blobs");
  }
  if (a.label_noise > 0.0)
    source = sdat::inject_label_noise(source, a.label_noise, sdat::child_seed(a.seed, 2));
  sdat::save_csv(source, (fs::path(a.out) / "source.csv").string());
  sdat::save_csv(target, (fs::path(a.out) / "target.csv").string());

  nlohmann::ordered_json cfg{{"kind", a.kind},       {"n", a.n},
                             {"noise", a.noise},     {"angle", a.angle},
                             {"shift", a.shift},     {"label_noise", a.label_noise},
                             {"seed", a.seed}};
  sdat::write_manifest(a.out, "gen-data", cfg, a.seed);
  return 0;
}

struct HessianArgs {
  std::string checkpoint;
  std::string data;
  double fraction = 0.5;
  int probes = 256;
  int lanczos_m = 64;
  std::uint64_t seed = 1;
  std::string out;
};

int run_hessian(const HessianArgs& a) {
  sdat::ModelSpec spec;
  const sdat::ModelParams params = sdat::load_checkpoint_params(a.checkpoint, &spec);
  const sdat::LabeledDataset source =
      sdat::load_csv((fs::path(a.data) / "source.csv").string());

  // only the source classification loss feeds the curvature probe
  sdat::HessianOracle oracle(spec, params, source, a.fraction, a.seed);
  sdat::SpectrumOptions opts;
  opts.n_probes = a.probes;
  opts.lanczos_m = a.lanczos_m;
  opts.seed = a.seed;
  const sdat::SpectrumReport report =
      sdat::make_spectrum_report(oracle, opts, oracle.params_checksum());
  sdat::save_spectrum_report(report, a.out);

  nlohmann::ordered_json cfg{{"checkpoint", a.checkpoint}, {"data", a.data},
                             {"fraction", a.fraction},     {"probes", a.probes},
                             {"lanczos_m", a.lanczos_m},   {"seed", a.seed}};
  write_file_manifest(a.out, "hessian", cfg, a.seed);
  std::printf("lambda_max=%.6g trace=%.6g (stderr %.3g) ritz_pairs=%zu\n", report.lambda_max,
              report.trace_estimate, report.trace_stderr, report.ritz.size());
  return 0;
}

int run_theory(int instances, std::uint64_t seed, const std::string& out) {
  const sdat::TheorySummary summary = sdat::run_theory_checks(instances, seed);
  const auto j = sdat::to_json(summary);
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    f << j.dump(2) << "\n";
    write_file_manifest(out, "theory-check",
                        nlohmann::ordered_json{{"instances", instances}, {"seed", seed}}, seed);
  }
  std::printf("%s\n", j.dump().c_str());
  const bool all_pass = summary.n_pass + summary.n_skipped == summary.n_instances;
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale domain adversarial training lab with selective sharpness-aware "
               "minimization and Hessian diagnostics"};
  app.set_version_flag("--version", sdat::kVersion);
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic source/target pair");
  gen_cmd->add_option("--kind", gen.kind, "two-moons | blobs");
  gen_cmd->add_option("--n", gen.n, "samples per domain");
  gen_cmd->add_option("--noise", gen.noise, "noise std (two-moons) / cluster std (blobs)");
  gen_cmd->add_option("--angle", gen.angle, "target rotation in degrees (two-moons)");
  gen_cmd->add_option("--shift", gen.shift, "target center shift (blobs)");
  gen_cmd->add_option("--label-noise", gen.label_noise, "fraction of source labels resampled");
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  std::string train_config, train_out;
  auto* train_cmd = app.add_subcommand("train", "run one training configuration");
  train_cmd->add_option("--config", train_config, "key = value config file")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();

  HessianArgs hess;
  auto* hess_cmd = app.add_subcommand("hessian", "task-loss curvature report for a checkpoint");
  hess_cmd->add_option("--checkpoint", hess.checkpoint, "checkpoint.json path")->required();
  hess_cmd->add_option("--data", hess.data, "data directory containing source.csv")->required();
  hess_cmd->add_option("--fraction", hess.fraction, "source fraction for the oracle");
  hess_cmd->add_option("--probes", hess.probes, "Hutchinson probes");
  hess_cmd->add_option("--lanczos-m", hess.lanczos_m, "Lanczos steps");
  hess_cmd->add_option("--seed", hess.seed, "probe seed");
  hess_cmd->add_option("--out", hess.out, "output report path")->required();

  std::string sweep_config, sweep_out;
  std::vector<std::string> sweep_vary;
  std::vector<std::uint64_t> sweep_seeds;
  int sweep_parallel = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid of training runs with a seed list");
  sweep_cmd->add_option("--config", sweep_config, "base config file")->required();
  sweep_cmd->add_option("--vary", sweep_vary, "KEY=V1,V2,... (repeatable)");
  sweep_cmd->add_option("--seeds", sweep_seeds, "seed list")->delimiter(',')->required();
  sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
  sweep_cmd->add_option("--parallel", sweep_parallel, "concurrent runs");

  int theory_instances = 1000;
  std::uint64_t theory_seed = 1;
  std::string theory_out;
  auto* theory_cmd = app.add_subcommand("theory-check", "numeric checks of the ascent bounds");
  theory_cmd->add_option("--instances", theory_instances, "instances per check");
  theory_cmd->add_option("--seed", theory_seed, "fuzz seed");
  theory_cmd->add_option("--out", theory_out, "summary JSON path");

  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "tables and CSV series from run directories");
  report_cmd->add_option("--runs", report_runs, "run directories")->required();
  report_cmd->add_option("--out", report_out, "markdown output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) {
      const sdat::TrainConfig cfg = sdat::TrainConfig::from_file(train_config);
      const auto metrics = sdat::train(cfg, train_out);
      const sdat::EpochMetrics& last = metrics.back();
      std::printf("epoch %d: task_loss=%.4f src_acc=%.4f tgt_acc=%.4f domain_acc=%.4f\n",
                  last.epoch, last.task_loss, last.src_acc, last.tgt_acc, last.domain_acc);
      return 0;
    }
    if (*hess_cmd) return run_hessian(hess);
    if (*sweep_cmd) {
      const sdat::TrainConfig base = sdat::TrainConfig::from_file(sweep_config);
      sdat::SweepOptions opts;
      for (const std::string& v : sweep_vary) opts.vary.push_back(sdat::parse_vary(v));
      opts.seeds = sweep_seeds;
      opts.parallel = sweep_parallel;
      sdat::run_sweep(base, opts, sweep_out);
      nlohmann::ordered_json cfg = base.to_json();
      cfg["sweep.vary"] = sweep_vary;
      cfg["sweep.seeds"] = sweep_seeds;
      sdat::write_manifest(sweep_out, "sweep", cfg, base.seed);
      return 0;
    }
    if (*theory_cmd) return run_theory(theory_instances, theory_seed, theory_out);
    if (*report_cmd) {
      sdat::write_report(report_runs, report_out);
      write_file_manifest(report_out, "report",
                          nlohmann::ordered_json{{"runs", report_runs}}, 0);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
