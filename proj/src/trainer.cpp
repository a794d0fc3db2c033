#include "sdat/trainer.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sdat/version.hpp"

namespace sdat {

namespace fs = std::filesystem;

// ----- config -------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(std::stoi(cell));
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected a boolean, got: " + s);
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

TrainConfig TrainConfig::from_string(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  " is not key = value: " + t);
    cfg.set_key(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

void TrainConfig::set_key(const std::string& key, const std::string& value) {
  if (key == "model.hidden") hidden = parse_int_list(value);
  else if (key == "model.bottleneck") bottleneck = std::stoi(value);
  else if (key == "model.disc_hidden") disc_hidden = std::stoi(value);
  else if (key == "model.disc_norm") disc_norm = parse_disc_norm(value);
  else if (key == "opt.kind") opt_kind = value;
  else if (key == "opt.lr0") lr0 = std::stod(value);
  else if (key == "opt.momentum") momentum = std::stod(value);
  else if (key == "opt.weight_decay") weight_decay = std::stod(value);
  else if (key == "sam.mode") mode = parse_smoothing_mode(value);
  else if (key == "sam.rho_task") rho_task = std::stod(value);
  else if (key == "sam.rho_adv") rho_adv = std::stod(value);
  else if (key == "sched.a") sched.a = std::stod(value);
  else if (key == "sched.b") sched.b = std::stod(value);
  else if (key == "grl.gamma") grl.gamma = std::stod(value);
  else if (key == "grl.hi") grl.hi = std::stod(value);
  else if (key == "grl.constant") grl.constant = parse_bool(value);
  else if (key == "train.epochs") epochs = std::stoi(value);
  else if (key == "train.iters") iters = std::stoi(value);
  else if (key == "train.batch") batch = std::stoi(value);
  else if (key == "train.seed") seed = std::stoull(value);
  else if (key == "train.eval_every") eval_every = std::stoi(value);
  else if (key == "data.src") data_src = value;
  else if (key == "data.tgt") data_tgt = value;
  else if (key == "data.label_noise") label_noise = std::stod(value);
  else if (key == "loss.label_smoothing") label_smoothing = std::stod(value);
  else if (key == "cond") cond = parse_conditioning(value);
  else throw std::invalid_argument("unknown config key: " + key);
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model.hidden"] = join_ints(hidden);
  j["model.bottleneck"] = bottleneck;
  j["model.disc_hidden"] = disc_hidden;
  j["model.disc_norm"] = to_string(disc_norm);
  j["opt.kind"] = opt_kind;
  j["opt.lr0"] = lr0;
  j["opt.momentum"] = momentum;
  j["opt.weight_decay"] = weight_decay;
  j["sam.mode"] = to_string(mode);
  j["sam.rho_task"] = rho_task;
  j["sam.rho_adv"] = rho_adv;
  j["sched.a"] = sched.a;
  j["sched.b"] = sched.b;
  j["grl.gamma"] = grl.gamma;
  j["grl.hi"] = grl.hi;
  j["grl.constant"] = grl.constant;
  j["train.epochs"] = epochs;
  j["train.iters"] = iters;
  j["train.batch"] = batch;
  j["train.seed"] = seed;
  j["train.eval_every"] = eval_every;
  j["data.src"] = data_src;
  j["data.tgt"] = data_tgt;
  j["data.label_noise"] = label_noise;
  j["loss.label_smoothing"] = label_smoothing;
  j["cond"] = to_string(cond);
  return j;
}

std::string TrainConfig::config_hash() const {
  const std::string dump = to_json().dump();
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void TrainConfig::validate() const {
  if (epochs < 1 || iters < 1) throw std::invalid_argument("train.epochs and train.iters must be >= 1");
  if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
  if (rho_task < 0.0 || rho_adv < 0.0) throw std::invalid_argument("sam radii must be >= 0");
  if (label_noise < 0.0 || label_noise > 1.0)
    throw std::invalid_argument("data.label_noise must be in [0, 1]");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw std::invalid_argument("loss.label_smoothing must be in [0, 1)");
  if (opt_kind != "sgd" && opt_kind != "adam")
    throw std::invalid_argument("opt.kind must be sgd or adam");
  if (disc_norm == DiscNorm::kBatchNorm && batch < 2)
    throw std::invalid_argument("train.batch must be >= 2 with a batch-norm discriminator");
}

ModelSpec TrainConfig::model_spec(int input_dim, int num_classes) const {
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.feature_dims = hidden;
  spec.bottleneck_dim = bottleneck;
  spec.num_classes = num_classes;
  spec.disc_hidden = disc_hidden;
  spec.disc_norm = disc_norm;
  spec.conditioning = cond;
  spec.validate();
  return spec;
}

// ----- metrics ------------------------------------------------------------------

nlohmann::ordered_json metrics_to_json(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["task_loss"] = m.task_loss;
  j["domain_loss"] = m.domain_loss;
  j["src_acc"] = m.src_acc;
  j["tgt_acc"] = m.tgt_acc;
  j["domain_acc"] = m.domain_acc;
  j["lr"] = m.lr;
  j["eps_norm_mean"] = m.eps_norm_mean;
  j["wall_ms"] = m.wall_ms;
  return j;
}

EpochMetrics metrics_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.task_loss = j.at("task_loss").get<double>();
  m.domain_loss = j.at("domain_loss").get<double>();
  m.src_acc = j.at("src_acc").get<double>();
  m.tgt_acc = j.at("tgt_acc").get<double>();
  m.domain_acc = j.at("domain_acc").get<double>();
  m.lr = j.at("lr").get<double>();
  m.eps_norm_mean = j.at("eps_norm_mean").get<double>();
  m.wall_ms = j.at("wall_ms").get<double>();
  return m;
}

std::vector<EpochMetrics> read_metrics_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open metrics: " + path);
  std::vector<EpochMetrics> out;
  std::string line;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    out.push_back(metrics_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

// ----- evaluation ----------------------------------------------------------------

double classification_accuracy(const Tensor& logits, std::span<const int> labels) {
  const int n = logits.rows();
  const int k = logits.cols();
  if (n != static_cast<int>(labels.size()))
    throw std::invalid_argument("accuracy: label count mismatch");
  std::int64_t correct = 0;
  for (int r = 0; r < n; ++r) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / n;
}

namespace {

Tensor values_to_tensor(const std::vector<double>& v, int rows, int cols) {
  return Tensor({rows, cols}, v);
}

}  // namespace

EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const DomainPair& pair) {
  Tape<double> tape;
  auto bound = bind_model(tape, spec, params);
  const int ns = pair.source.meta.n;
  const int nt = pair.target.meta.n;

  const ValueId xs = tape.constant(pair.source.X);
  const ValueId xt = tape.constant(pair.target.X);
  const ValueId fs = features_fwd(tape, bound, xs);
  const ValueId ft = features_fwd(tape, bound, xt);
  const ValueId f_all = tape.concat_rows(fs, ft);
  const ValueId logits_all = classify_fwd(tape, bound, f_all);

  ValueId disc_in = f_all;
  if (spec.conditioning == Conditioning::kMultilinear)
    disc_in = tape.multilinear(f_all, tape.exp(tape.log_softmax(logits_all)));
  const ValueId d = discriminate_fwd(tape, bound, disc_in, {/*train=*/false, false}, params);

  EvalResult res;
  const auto& logits = tape.value(logits_all);
  const int k = spec.num_classes;
  std::vector<double> ls(logits.begin(), logits.begin() + static_cast<std::ptrdiff_t>(ns) * k);
  std::vector<double> lt(logits.begin() + static_cast<std::ptrdiff_t>(ns) * k, logits.end());
  res.src_acc = classification_accuracy(values_to_tensor(ls, ns, k), pair.source.y);
  res.tgt_acc = classification_accuracy(values_to_tensor(lt, nt, k), pair.target.y);

  const auto& dv = tape.value(d);
  std::span<const double> d_src{dv.data(), static_cast<std::size_t>(ns)};
  std::span<const double> d_tgt{dv.data() + ns, static_cast<std::size_t>(nt)};
  res.domain_acc = domain_accuracy(d_src, d_tgt);
  return res;
}

// ----- training run --------------------------------------------------------------

TrainRun::TrainRun(TrainConfig cfg, LabeledDataset source, UnlabeledDataset target)
    : cfg_(std::move(cfg)),
      source_(std::move(source)),
      target_(std::move(target)),
      spec_(cfg_.model_spec(source_.meta.d, source_.meta.k)),
      params_(init_params(spec_, child_seed(cfg_.seed, 0))),
      batch_rng_(child_seed(cfg_.seed, 1)) {
  cfg_.validate();
  if (source_.meta.d != target_.meta.d)
    throw std::invalid_argument("source and target dimensionality differ");
  if (source_.meta.k < 2) throw std::invalid_argument("need at least two classes");
  grads_.assign(params_.flat.size(), 0.0);
  const SgdConfig sgd{cfg_.lr0, cfg_.momentum, cfg_.weight_decay};
  const AdamConfig adam{cfg_.lr0, 0.9, 0.999, 1e-8};
  opt_task_ = make_optimizer(cfg_.opt_kind, sgd, adam, params_.task_span().size());
  opt_disc_ = make_optimizer(cfg_.opt_kind, sgd, adam, params_.disc_span().size());
  if (cfg_.mode == SmoothingMode::kTask || cfg_.mode == SmoothingMode::kAll)
    sam_task_.emplace(cfg_.rho_task, params_.task_span().size());
  if (cfg_.mode == SmoothingMode::kAdv || cfg_.mode == SmoothingMode::kAll)
    sam_adv_.emplace(cfg_.rho_adv, params_.disc_span().size());
  total_steps_ = static_cast<std::int64_t>(cfg_.epochs) * cfg_.iters;
}

void TrainRun::sample_batches(Tensor& xs, std::vector<int>& ys, Tensor& xt) {
  const int b = cfg_.batch;
  const int d = source_.meta.d;
  xs = Tensor::zeros({b, d});
  ys.assign(static_cast<std::size_t>(b), 0);
  for (int i = 0; i < b; ++i) {
    const int row = static_cast<int>(batch_rng_.uniform_int(source_.meta.n));
    for (int j = 0; j < d; ++j) xs.at(i, j) = source_.X.at(row, j);
    ys[static_cast<std::size_t>(i)] = source_.y[static_cast<std::size_t>(row)];
  }
  xt = Tensor::zeros({b, d});
  for (int i = 0; i < b; ++i) {
    const int row = static_cast<int>(batch_rng_.uniform_int(target_.meta.n));
    for (int j = 0; j < d; ++j) xt.at(i, j) = target_.X.at(row, j);
  }
}

struct TrainRun::PassRefs {
  BoundModel<double> bound;
  ValueId task_loss = -1;
  ValueId domain_loss = -1;
  ValueId total = -1;
  ValueId d_all = -1;
  int n_src = 0, n_tgt = 0;
};

// One forward graph shared by every mode: task loss on the source slice plus
// the domain loss (binary cross entropy with source = 1, target = 0) through
// the GRL. The feature-side sign lives exclusively in the GRL node.
TrainRun::PassRefs TrainRun::build_pass(Tape<double>& tape, const Tensor& xs,
                                        const std::vector<int>& ys, const Tensor& xt,
                                        double lambda, bool include_task, bool update_bn) {
  PassRefs refs;
  refs.bound = bind_model(tape, spec_, params_);
  refs.n_src = xs.rows();
  refs.n_tgt = xt.rows();

  const ValueId xs_id = tape.constant(xs);
  const ValueId xt_id = tape.constant(xt);
  const ValueId fs = features_fwd(tape, refs.bound, xs_id);
  const ValueId ft = features_fwd(tape, refs.bound, xt_id);
  const ValueId f_all = tape.concat_rows(fs, ft);
  const ValueId logits_all = classify_fwd(tape, refs.bound, f_all);

  if (include_task) {
    const ValueId logits_s = tape.slice_rows(logits_all, 0, refs.n_src);
    refs.task_loss = cross_entropy_graph(tape, logits_s, ys, cfg_.label_smoothing);
  }

  ValueId disc_in = f_all;
  if (spec_.conditioning == Conditioning::kMultilinear)
    disc_in = tape.multilinear(f_all, tape.exp(tape.log_softmax(logits_all)));
  const ValueId reversed = tape.grl(disc_in, lambda);
  refs.d_all = discriminate_fwd(tape, refs.bound, reversed, {/*train=*/true, update_bn}, params_,
                                update_bn ? &params_.bn_running : nullptr);
  const ValueId ds = tape.slice_rows(refs.d_all, 0, refs.n_src);
  const ValueId dt = tape.slice_rows(refs.d_all, refs.n_src, refs.n_src + refs.n_tgt);
  const ValueId one_minus_dt = tape.add_scalar(tape.scale(dt, -1.0), 1.0);
  refs.domain_loss = tape.scale(
      tape.add(tape.mean_all(tape.log(ds)), tape.mean_all(tape.log(one_minus_dt))), -1.0);

  refs.total = include_task ? tape.add(refs.task_loss, refs.domain_loss) : refs.domain_loss;
  return refs;
}

void TrainRun::accumulate_grads(Tape<double>& tape, const BoundModel<double>& bound) {
  std::size_t o = 0;
  for (ValueId id : bound.ordered)
    for (double a : tape.adjoint(id)) grads_[o++] += a;
}

TrainRun::StepOutputs TrainRun::train_step() {
  const double p = static_cast<double>(step_) / static_cast<double>(total_steps_);
  const double lambda = grl_lambda(cfg_.grl, p);
  const double lr = lr_at(cfg_.sched, cfg_.lr0, p);

  Tensor xs, xt;
  std::vector<int> ys;
  sample_batches(xs, ys, xt);

  StepOutputs out;
  out.lr = lr;
  try {
    std::fill(grads_.begin(), grads_.end(), 0.0);

    if (sam_task_) {
      // gradient of the task loss alone, at the unperturbed point
      Tape<double> tape;
      auto bound = bind_model(tape, spec_, params_);
      const ValueId x = tape.constant(xs);
      const ValueId logits = classify_fwd(tape, bound, features_fwd(tape, bound, x));
      const ValueId loss = cross_entropy_graph(tape, logits, ys, cfg_.label_smoothing);
      tape.backward(loss);
      accumulate_grads(tape, bound);
      sam_task_->first_step(params_.task_span(),
                            std::span<double>(grads_.data(), params_.task_span().size()));
      out.eps_norm = sam_task_->eps_norm();
    }

    if (sam_adv_) {
      // gradient of the minimized domain loss alone, for the discriminator scope
      Tape<double> tape;
      auto refs = build_pass(tape, xs, ys, xt, lambda, /*include_task=*/false,
                             /*update_bn=*/false);
      tape.backward(refs.total);
      std::fill(grads_.begin(), grads_.end(), 0.0);
      accumulate_grads(tape, refs.bound);
      sam_adv_->first_step(params_.disc_span(),
                           std::span<double>(grads_.data() + params_.task_size,
                                             params_.disc_span().size()));
      std::fill(grads_.begin(), grads_.end(), 0.0);
    }

    // the pass whose gradients drive the updates (and the only one that
    // advances the BN running statistics)
    Tape<double> tape;
    auto refs = build_pass(tape, xs, ys, xt, lambda, /*include_task=*/true, /*update_bn=*/true);
    tape.backward(refs.total);
    accumulate_grads(tape, refs.bound);

    std::span<double> task_grads{grads_.data(), params_.task_span().size()};
    std::span<double> disc_grads{grads_.data() + params_.task_size, params_.disc_span().size()};
    if (sam_task_)
      sam_task_->second_step(params_.task_span(), task_grads, *opt_task_, lr);
    else
      opt_task_->step(params_.task_span(), task_grads, lr);
    if (sam_adv_)
      sam_adv_->second_step(params_.disc_span(), disc_grads, *opt_disc_, lr);
    else
      opt_disc_->step(params_.disc_span(), disc_grads, lr);

    out.task_loss = tape.value(refs.task_loss)[0];
    out.domain_loss = tape.value(refs.domain_loss)[0];
    const auto& dv = tape.value(refs.d_all);
    std::span<const double> d_src{dv.data(), static_cast<std::size_t>(refs.n_src)};
    std::span<const double> d_tgt{dv.data() + refs.n_src, static_cast<std::size_t>(refs.n_tgt)};
    out.domain_acc = domain_accuracy(d_src, d_tgt);
  } catch (const std::exception& e) {
    throw std::runtime_error("train step " + std::to_string(step_) + ": " + e.what());
  }

  ++step_;
  return out;
}

EpochMetrics TrainRun::run_epoch(const DomainPair& eval_pair) {
  const auto t0 = std::chrono::steady_clock::now();
  double task_sum = 0.0, dom_sum = 0.0, dacc_sum = 0.0, eps_sum = 0.0, last_lr = 0.0;
  for (int i = 0; i < cfg_.iters; ++i) {
    const StepOutputs s = train_step();
    task_sum += s.task_loss;
    dom_sum += s.domain_loss;
    dacc_sum += s.domain_acc;
    eps_sum += s.eps_norm;
    last_lr = s.lr;
  }
  ++epochs_done_;

  if (!has_eval_ || epochs_done_ % cfg_.eval_every == 0 || epochs_done_ == cfg_.epochs) {
    last_eval_ = evaluate(spec_, params_, eval_pair);
    has_eval_ = true;
  }
  const auto t1 = std::chrono::steady_clock::now();

  EpochMetrics m;
  m.epoch = epochs_done_;
  m.task_loss = task_sum / cfg_.iters;
  m.domain_loss = dom_sum / cfg_.iters;
  m.src_acc = last_eval_.src_acc;
  m.tgt_acc = last_eval_.tgt_acc;
  m.domain_acc = dacc_sum / cfg_.iters;
  m.lr = last_lr;
  m.eps_norm_mean = eps_sum / cfg_.iters;
  m.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return m;
}

nlohmann::ordered_json TrainRun::checkpoint_json() const {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["config_hash"] = cfg_.config_hash();
  j["epoch"] = epochs_done_;
  auto slices = nlohmann::ordered_json::array();
  for (const ParamSlice& s : params_.slices)
    slices.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
  j["slices"] = slices;
  j["params"] = params_.flat;
  j["bn_running"] = params_.bn_running;
  j["opt_task"] = opt_task_->save_state();
  j["opt_disc"] = opt_disc_->save_state();
  if (sam_task_) j["sam_task"] = sam_task_->save_state();
  if (sam_adv_) j["sam_adv"] = sam_adv_->save_state();
  const auto rng = batch_rng_.state();
  j["rng_batch"] = {rng[0], rng[1], rng[2], rng[3]};
  j["has_eval"] = has_eval_;
  j["last_eval"] = {{"src_acc", last_eval_.src_acc},
                    {"tgt_acc", last_eval_.tgt_acc},
                    {"domain_acc", last_eval_.domain_acc}};
  j["model"] = {{"input_dim", spec_.input_dim},
                {"feature_dims", spec_.feature_dims},
                {"bottleneck_dim", spec_.bottleneck_dim},
                {"num_classes", spec_.num_classes},
                {"disc_hidden", spec_.disc_hidden},
                {"disc_norm", to_string(spec_.disc_norm)},
                {"conditioning", to_string(spec_.conditioning)}};
  return j;
}

void TrainRun::restore(const nlohmann::json& j) {
  if (j.at("config_hash").get<std::string>() != cfg_.config_hash())
    throw std::runtime_error("checkpoint config hash does not match the current config");
  const auto flat = j.at("params").get<std::vector<double>>();
  if (flat.size() != params_.flat.size()) throw std::runtime_error("checkpoint size mismatch");
  params_.flat = flat;
  const auto bn = j.at("bn_running").get<std::vector<double>>();
  if (bn.size() != params_.bn_running.size())
    throw std::runtime_error("checkpoint bn state size mismatch");
  params_.bn_running = bn;
  opt_task_->load_state(j.at("opt_task"));
  opt_disc_->load_state(j.at("opt_disc"));
  if (sam_task_) sam_task_->load_state(j.at("sam_task"));
  if (sam_adv_) sam_adv_->load_state(j.at("sam_adv"));
  const auto rng = j.at("rng_batch").get<std::vector<std::uint64_t>>();
  batch_rng_.set_state({rng[0], rng[1], rng[2], rng[3]});
  epochs_done_ = j.at("epoch").get<int>();
  step_ = static_cast<std::int64_t>(epochs_done_) * cfg_.iters;
  has_eval_ = j.at("has_eval").get<bool>();
  last_eval_.src_acc = j.at("last_eval").at("src_acc").get<double>();
  last_eval_.tgt_acc = j.at("last_eval").at("tgt_acc").get<double>();
  last_eval_.domain_acc = j.at("last_eval").at("domain_acc").get<double>();
}

// ----- file orchestration ---------------------------------------------------------

void write_manifest(const std::string& out_dir, const std::string& command,
                    const nlohmann::ordered_json& config, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["tool"] = "sdat";
  j["version"] = kVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  std::ofstream f(fs::path(out_dir) / "manifest.json", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write manifest under " + out_dir);
  f << j.dump(2) << "\n";
}

namespace {

// Checkpoints survive crashes: write to a temp file, fsync, rename over.
void write_file_synced(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
  if (std::fwrite(contents.data(), 1, contents.size(), f) != contents.size()) {
    std::fclose(f);
    throw std::runtime_error("short write: " + tmp);
  }
  std::fflush(f);
  ::fsync(::fileno(f));
  std::fclose(f);
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename checkpoint into place: " + path);
}

}  // namespace

std::vector<EpochMetrics> train(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.data_src.empty() || cfg.data_tgt.empty())
    throw std::invalid_argument("data.src and data.tgt must be set");
  fs::create_directories(out_dir);

  LabeledDataset source = load_csv(cfg.data_src);
  LabeledDataset target_labeled = load_csv(cfg.data_tgt);
  if (cfg.label_noise > 0.0)
    source = inject_label_noise(source, cfg.label_noise, child_seed(cfg.seed, 2));
  const DomainPair pair{source, target_labeled, "loaded from " + cfg.data_src};

  write_manifest(out_dir, "train", cfg.to_json(), cfg.seed);

  TrainRun run(cfg, source, strip_labels(target_labeled));

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.json").string();

  std::vector<EpochMetrics> metrics;
  int start_epoch = 0;
  if (fs::exists(ckpt_path)) {
    std::ifstream cf(ckpt_path);
    const nlohmann::json ckpt = nlohmann::json::parse(cf);
    const int ckpt_epoch = ckpt.at("epoch").get<int>();
    if (ckpt.at("config_hash").get<std::string>() == cfg.config_hash() && ckpt_epoch > 0 &&
        ckpt_epoch < cfg.epochs && fs::exists(metrics_path)) {
      run.restore(ckpt);
      start_epoch = ckpt_epoch;
      const auto existing = read_metrics_jsonl(metrics_path);
      if (static_cast<int>(existing.size()) < start_epoch)
        throw std::runtime_error("metrics file is behind the checkpoint; remove " + out_dir);
      metrics.assign(existing.begin(), existing.begin() + start_epoch);
    }
  }

  {
    // rewrite the retained prefix (fresh runs truncate)
    std::ofstream mf(metrics_path, std::ios::binary | std::ios::trunc);
    for (const EpochMetrics& m : metrics) mf << metrics_to_json(m).dump() << "\n";
  }

  std::ofstream mf(metrics_path, std::ios::binary | std::ios::app);
  if (!mf) throw std::runtime_error("cannot open metrics for append: " + metrics_path);
  for (int e = start_epoch; e < cfg.epochs; ++e) {
    const EpochMetrics m = run.run_epoch(pair);
    metrics.push_back(m);
    mf << metrics_to_json(m).dump() << "\n";
    mf.flush();
    write_file_synced(ckpt_path, run.checkpoint_json().dump(2) + "\n");
  }
  return metrics;
}

MetricStats mean_std(std::vector<double> values) {
  MetricStats s;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

ModelParams params_from_checkpoint(const nlohmann::json& checkpoint, ModelSpec* spec_out) {
  const auto& mj = checkpoint.at("model");
  ModelSpec spec;
  spec.input_dim = mj.at("input_dim").get<int>();
  spec.feature_dims = mj.at("feature_dims").get<std::vector<int>>();
  spec.bottleneck_dim = mj.at("bottleneck_dim").get<int>();
  spec.num_classes = mj.at("num_classes").get<int>();
  spec.disc_hidden = mj.at("disc_hidden").get<int>();
  spec.disc_norm = parse_disc_norm(mj.at("disc_norm").get<std::string>());
  spec.conditioning = parse_conditioning(mj.at("conditioning").get<std::string>());
  spec.validate();

  ModelParams params;
  params.slices = param_layout(spec);
  params.flat = checkpoint.at("params").get<std::vector<double>>();
  params.bn_running = checkpoint.at("bn_running").get<std::vector<double>>();
  params.task_size = 0;
  int total = 0;
  for (const ParamSlice& s : params.slices) {
    total += s.size();
    if (s.group != ParamGroup::kDiscriminator) params.task_size += s.size();
  }
  if (total != static_cast<int>(params.flat.size()))
    throw std::runtime_error("checkpoint parameter count does not match its model spec");
  if (spec_out) *spec_out = spec;
  return params;
}

ModelParams load_checkpoint_params(const std::string& path, ModelSpec* spec_out) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  return params_from_checkpoint(nlohmann::json::parse(f), spec_out);
}

MultiSeedSummary multi_seed(const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                            const std::string& out_root) {
  if (seeds.empty()) throw std::invalid_argument("multi_seed: need at least one seed");
  MultiSeedSummary summary;
  summary.seeds = seeds;
  for (std::uint64_t s : seeds) {
    TrainConfig c = cfg;
    c.seed = s;
    const auto metrics = train(c, (fs::path(out_root) / ("seed" + std::to_string(s))).string());
    summary.finals.push_back(metrics.back());
  }
  auto collect = [&](auto getter) {
    std::vector<double> v;
    for (const EpochMetrics& m : summary.finals) v.push_back(getter(m));
    return mean_std(std::move(v));
  };
  summary.stats["task_loss"] = collect([](const EpochMetrics& m) { return m.task_loss; });
  summary.stats["domain_loss"] = collect([](const EpochMetrics& m) { return m.domain_loss; });
  summary.stats["src_acc"] = collect([](const EpochMetrics& m) { return m.src_acc; });
  summary.stats["tgt_acc"] = collect([](const EpochMetrics& m) { return m.tgt_acc; });
  summary.stats["domain_acc"] = collect([](const EpochMetrics& m) { return m.domain_acc; });
  return summary;
}

}  // namespace sdat
