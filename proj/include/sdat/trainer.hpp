#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdat/data.hpp"
#include "sdat/losses.hpp"
#include "sdat/model.hpp"
#include "sdat/optim.hpp"

namespace sdat {

// Flat key = value configuration. Unknown keys are an error; model input width
// and class count come from the source dataset's sidecar meta.
struct TrainConfig {
  // model.*
  std::vector<int> hidden = {16, 16};
  int bottleneck = 8;
  int disc_hidden = 32;
  DiscNorm disc_norm = DiscNorm::kBatchNorm;
  // opt.*
  std::string opt_kind = "sgd";
  double lr0 = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  // sam.*
  SmoothingMode mode = SmoothingMode::kNone;
  double rho_task = 0.05;
  double rho_adv = 0.05;
  // sched.* / grl.*
  ScheduleConfig sched;
  GrlConfig grl;
  // train.* (defaults are the calibrated two-moons toy budget)
  int epochs = 25;
  int iters = 60;
  int batch = 32;
  std::uint64_t seed = 1;
  int eval_every = 1;
  // data.*
  std::string data_src;
  std::string data_tgt;
  double label_noise = 0.0;
  // loss.*
  double label_smoothing = 0.0;
  // cond
  Conditioning cond = Conditioning::kPlain;

  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_string(const std::string& text);
  void set_key(const std::string& key, const std::string& value);
  nlohmann::ordered_json to_json() const;
  std::string config_hash() const;
  void validate() const;

  ModelSpec model_spec(int input_dim, int num_classes) const;
};

struct EpochMetrics {
  int epoch = 0;
  double task_loss = 0.0;
  double domain_loss = 0.0;  // -d_{S,T} as minimized by the discriminator
  double src_acc = 0.0;
  double tgt_acc = 0.0;
  double domain_acc = 0.0;   // mean over the epoch's training batches
  double lr = 0.0;
  double eps_norm_mean = 0.0;  // task-scope SAM perturbation norm, 0 without one
  double wall_ms = 0.0;
};

nlohmann::ordered_json metrics_to_json(const EpochMetrics& m);
EpochMetrics metrics_from_json(const nlohmann::json& j);
std::vector<EpochMetrics> read_metrics_jsonl(const std::string& path);

struct EvalResult {
  double src_acc = 0.0;
  double tgt_acc = 0.0;
  double domain_acc = 0.0;
};

// Eval-mode forward only; pure function of (params, pair). This is the one
// place target labels are read.
EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const DomainPair& pair);

// Argmax accuracy with ties resolved to the lowest class index.
double classification_accuracy(const Tensor& logits, std::span<const int> labels);

// One training run: owns parameters, optimizer and SAM state, and the batch
// stream. Strictly sequential.
class TrainRun {
 public:
  TrainRun(TrainConfig cfg, LabeledDataset source, UnlabeledDataset target);

  struct StepOutputs {
    double task_loss = 0.0;
    double domain_loss = 0.0;
    double domain_acc = 0.0;
    double eps_norm = 0.0;
    double lr = 0.0;
  };

  StepOutputs train_step();
  EpochMetrics run_epoch(const DomainPair& eval_pair);

  int epochs_done() const { return epochs_done_; }
  const ModelSpec& spec() const { return spec_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  const LabeledDataset& source() const { return source_; }

  nlohmann::ordered_json checkpoint_json() const;
  void restore(const nlohmann::json& checkpoint);

 private:
  struct PassRefs;
  PassRefs build_pass(Tape<double>& tape, const Tensor& xs, const std::vector<int>& ys,
                      const Tensor& xt, double lambda, bool include_task, bool update_bn);
  void accumulate_grads(Tape<double>& tape, const BoundModel<double>& bound);
  void sample_batches(Tensor& xs, std::vector<int>& ys, Tensor& xt);

  TrainConfig cfg_;
  LabeledDataset source_;
  UnlabeledDataset target_;
  ModelSpec spec_;
  ModelParams params_;
  std::unique_ptr<Optimizer> opt_task_;
  std::unique_ptr<Optimizer> opt_disc_;
  std::optional<SamState> sam_task_;
  std::optional<SamState> sam_adv_;
  std::vector<double> grads_;
  Rng batch_rng_;
  std::int64_t step_ = 0;
  std::int64_t total_steps_ = 0;
  int epochs_done_ = 0;
  EvalResult last_eval_;
  bool has_eval_ = false;
};

// Full run with file outputs under out_dir: manifest.json, metrics.jsonl
// (one EpochMetrics object per line, appended and flushed per epoch) and
// checkpoint.json (fsynced). Resumes automatically when a checkpoint with a
// matching config hash and an unfinished epoch count is present; otherwise
// starts fresh and truncates previous outputs.
std::vector<EpochMetrics> train(const TrainConfig& cfg, const std::string& out_dir);

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample std (n-1), 0 when n < 2
};

struct MultiSeedSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<EpochMetrics> finals;
  std::map<std::string, MetricStats> stats;
};

// Runs the config once per seed (train.seed replaced) under
// out_root/seed<S>/ and aggregates the final-epoch metrics. Accumulation uses
// a sorted order so the summary is independent of seed-list permutation.
MultiSeedSummary multi_seed(const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                            const std::string& out_root);

MetricStats mean_std(std::vector<double> values);

void write_manifest(const std::string& out_dir, const std::string& command,
                    const nlohmann::ordered_json& config, std::uint64_t seed);

// Rebuilds the model spec and parameter store from a checkpoint document.
ModelParams params_from_checkpoint(const nlohmann::json& checkpoint, ModelSpec* spec_out);
ModelParams load_checkpoint_params(const std::string& path, ModelSpec* spec_out);

}  // namespace sdat
