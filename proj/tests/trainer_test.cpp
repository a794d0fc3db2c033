#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sdat/trainer.hpp"
#include "support/trainer_helpers.hpp"

using namespace sdat;
namespace fs = std::filesystem;

TEST_CASE("config files parse, serialize and reject unknown keys") {
  TrainConfig cfg = TrainConfig::from_string(
      "# comment\n"
      "model.hidden = 8,4\n"
      "opt.kind = adam\n"
      "sam.mode = task\n"
      "sam.rho_task = 0.02\n"
      "train.epochs = 3\n"
      "grl.constant = true\n");
  CHECK(cfg.hidden == std::vector<int>{8, 4});
  CHECK(cfg.opt_kind == "adam");
  CHECK(cfg.mode == SmoothingMode::kTask);
  CHECK(cfg.rho_task == 0.02);
  CHECK(cfg.epochs == 3);
  CHECK(cfg.grl.constant);

  CHECK_THROWS_WITH_AS(TrainConfig::from_string("nope.key = 1\n"),
                       doctest::Contains("unknown config key"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_string("just a line\n"), std::invalid_argument);

  const TrainConfig back = TrainConfig::from_string([&] {
    const auto snapshot = cfg.to_json();
    std::string text;
    for (const auto& [k, v] : snapshot.items()) {
      text += k;
      text += " = ";
      text += v.is_string() ? v.get<std::string>() : v.dump();
      text += "\n";
    }
    return text;
  }());
  CHECK(back.config_hash() == cfg.config_hash());
}

TEST_CASE("config validation catches bad combinations") {
  TrainConfig cfg;
  cfg.batch = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.batch = 32;
  cfg.rho_task = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.rho_task = 0.0;
  cfg.opt_kind = "rmsprop";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("two runs with the same config and seed are byte-identical") {
  const std::string data = helpers::write_toy_pair("deterministic");
  const TrainConfig cfg = helpers::small_config(data);
  const std::string out_a = helpers::fresh_out("det_a");
  const std::string out_b = helpers::fresh_out("det_b");
  train(cfg, out_a);
  train(cfg, out_b);
  CHECK(helpers::masked_metrics_lines(out_a + "/metrics.jsonl") ==
        helpers::masked_metrics_lines(out_b + "/metrics.jsonl"));
}

TEST_CASE("rho = 0 collapse: every sam mode matches mode=none bitwise") {
  const std::string data = helpers::write_toy_pair("collapse");
  TrainConfig base = helpers::small_config(data);
  base.mode = SmoothingMode::kNone;
  const std::string out_none = helpers::fresh_out("collapse_none");
  train(base, out_none);
  const auto want = helpers::masked_metrics_lines(out_none + "/metrics.jsonl");

  for (SmoothingMode mode : {SmoothingMode::kTask, SmoothingMode::kAdv, SmoothingMode::kAll}) {
    TrainConfig cfg = base;
    cfg.mode = mode;
    cfg.rho_task = 0.0;
    cfg.rho_adv = 0.0;
    const std::string out = helpers::fresh_out("collapse_" + to_string(mode));
    train(cfg, out);
    CAPTURE(to_string(mode));
    CHECK(helpers::masked_metrics_lines(out + "/metrics.jsonl") == want);
  }
}

TEST_CASE("lr = 0 leaves parameters untouched but still emits metrics") {
  const std::string data = helpers::write_toy_pair("lr0");
  TrainConfig cfg = helpers::small_config(data, 1, 4);
  cfg.lr0 = 0.0;
  cfg.mode = SmoothingMode::kTask;
  cfg.rho_task = 0.25;

  const LabeledDataset src = load_csv(cfg.data_src);
  const LabeledDataset tgt = load_csv(cfg.data_tgt);
  TrainRun run(cfg, src, strip_labels(tgt));
  const std::vector<double> before = run.params().flat;
  const DomainPair pair{src, tgt, "toy"};
  const EpochMetrics m = run.run_epoch(pair);
  CHECK(run.params().flat == before);
  CHECK(m.epoch == 1);
  CHECK(std::isfinite(m.task_loss));
  // the task perturbation was live during the epoch even though lr was 0
  CHECK(m.eps_norm_mean == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("task-scope sam wrapper cannot reach discriminator parameters") {
  const std::string data = helpers::write_toy_pair("scope");
  TrainConfig cfg = helpers::small_config(data);
  const LabeledDataset src = load_csv(cfg.data_src);
  const LabeledDataset tgt = load_csv(cfg.data_tgt);
  TrainRun run(cfg, src, strip_labels(tgt));
  ModelParams& p = run.mutable_params();

  SamState sam(0.5, p.task_span().size());
  std::vector<double> grads(p.task_span().size(), 1.0);
  const std::uint64_t disc_before = checksum64(p.disc_span());
  sam.first_step(p.task_span(), grads);
  CHECK(checksum64(p.disc_span()) == disc_before);
}

TEST_CASE("source-only reduction: lambda = 0 ignores the target domain entirely") {
  const std::string data_a = helpers::write_toy_pair("srconly_a", 120, 45.0, 7);
  const std::string data_b = helpers::write_toy_pair("srconly_b", 120, 170.0, 99);
  // same source in both dirs, different targets
  {
    const LabeledDataset src = load_csv(data_a + "/source.csv");
    save_csv(src, data_b + "/source.csv");
  }
  TrainConfig cfg = helpers::small_config(data_a, 2, 8);
  cfg.grl.hi = 0.0;
  cfg.grl.constant = true;
  const std::string out_a = helpers::fresh_out("srconly_a");
  train(cfg, out_a);
  TrainConfig cfg_b = cfg;
  cfg_b.data_src = data_b + "/source.csv";
  cfg_b.data_tgt = data_b + "/target.csv";
  const std::string out_b = helpers::fresh_out("srconly_b");
  train(cfg_b, out_b);

  // classifier trajectories identical: same task losses and source accuracy
  const auto ma = read_metrics_jsonl(out_a + "/metrics.jsonl");
  const auto mb = read_metrics_jsonl(out_b + "/metrics.jsonl");
  REQUIRE(ma.size() == mb.size());
  for (std::size_t i = 0; i < ma.size(); ++i) {
    CHECK(ma[i].task_loss == mb[i].task_loss);
    CHECK(ma[i].src_acc == mb[i].src_acc);
  }
}

TEST_CASE("evaluate: untrained accuracy near chance, idempotent, pure") {
  const std::string data = helpers::write_toy_pair("eval", 600);
  const LabeledDataset src = load_csv(data + "/source.csv");
  const LabeledDataset tgt = load_csv(data + "/target.csv");
  const DomainPair pair{src, tgt, "toy"};
  TrainConfig cfg = helpers::small_config(data);
  const ModelSpec spec = cfg.model_spec(2, 2);
  const ModelParams params = init_params(spec, 17);

  const std::uint64_t flat_sum = checksum64(params.flat);
  const std::uint64_t bn_sum = checksum64(params.bn_running);
  const EvalResult a = evaluate(spec, params, pair);
  const EvalResult b = evaluate(spec, params, pair);
  CHECK(a.src_acc == b.src_acc);
  CHECK(a.tgt_acc == b.tgt_acc);
  CHECK(a.domain_acc == b.domain_acc);
  // side-effect free: parameters and running statistics untouched
  CHECK(checksum64(params.flat) == flat_sum);
  CHECK(checksum64(params.bn_running) == bn_sum);

  // a single random net's predictions are correlated through its fixed
  // boundary; the chance-level claim holds for the average over random inits
  double src_mean = 0.0, tgt_mean = 0.0;
  const int reps = 5;
  for (std::uint64_t s = 0; s < reps; ++s) {
    const EvalResult r = evaluate(spec, init_params(spec, 100 + s), pair);
    src_mean += r.src_acc;
    tgt_mean += r.tgt_acc;
  }
  CHECK(std::abs(src_mean / reps - 0.5) <= 0.15);
  CHECK(std::abs(tgt_mean / reps - 0.5) <= 0.15);
}

TEST_CASE("accuracy is 1 when predictions equal the labels") {
  const std::vector<int> labels = {0, 1, 1, 0, 1};
  Tensor logits = Tensor::zeros({5, 2});
  for (int i = 0; i < 5; ++i) logits.at(i, labels[static_cast<std::size_t>(i)]) = 3.0;
  CHECK(classification_accuracy(logits, labels) == 1.0);
  // argmax ties resolve to the lowest index
  Tensor tied = Tensor::zeros({1, 2});
  CHECK(classification_accuracy(tied, std::vector<int>{0}) == 1.0);
  CHECK(classification_accuracy(tied, std::vector<int>{1}) == 0.0);
}

TEST_CASE("multi-seed summary: degenerate std, permutation invariance, mean identity") {
  const std::string data = helpers::write_toy_pair("multiseed");
  const TrainConfig cfg = helpers::small_config(data, 1, 4);

  const MultiSeedSummary one =
      multi_seed(cfg, {5}, helpers::fresh_out("ms_one"));
  CHECK(one.stats.at("tgt_acc").stddev == 0.0);

  const MultiSeedSummary abc =
      multi_seed(cfg, {5, 6, 7}, helpers::fresh_out("ms_abc"));
  const MultiSeedSummary cba =
      multi_seed(cfg, {7, 5, 6}, helpers::fresh_out("ms_cba"));
  for (const char* key : {"task_loss", "src_acc", "tgt_acc", "domain_acc"}) {
    CHECK(abc.stats.at(key).mean == cba.stats.at(key).mean);
    CHECK(abc.stats.at(key).stddev == cba.stats.at(key).stddev);
  }

  double mean = 0.0;
  for (const EpochMetrics& m : abc.finals) mean += m.tgt_acc;
  mean /= static_cast<double>(abc.finals.size());
  CHECK(std::abs(abc.stats.at("tgt_acc").mean - mean) <= 1e-12);
}

TEST_CASE("checkpoint resume reproduces an uninterrupted run byte for byte") {
  const std::string data = helpers::write_toy_pair("resume");
  TrainConfig cfg = helpers::small_config(data, 4, 5);
  cfg.mode = SmoothingMode::kTask;
  cfg.rho_task = 0.05;

  const std::string out_full = helpers::fresh_out("resume_full");
  train(cfg, out_full);

  // reconstruct the state train() would have left after two epochs
  const std::string out_resume = helpers::fresh_out("resume_partial");
  {
    const LabeledDataset src = load_csv(cfg.data_src);
    const LabeledDataset tgt = load_csv(cfg.data_tgt);
    const DomainPair pair{src, tgt, "toy"};
    TrainRun run(cfg, src, strip_labels(tgt));
    std::ofstream mf(out_resume + "/metrics.jsonl", std::ios::binary);
    for (int e = 0; e < 2; ++e) mf << metrics_to_json(run.run_epoch(pair)).dump() << "\n";
    std::ofstream cf(out_resume + "/checkpoint.json", std::ios::binary);
    cf << run.checkpoint_json().dump(2) << "\n";
  }
  train(cfg, out_resume);  // resumes at epoch 2

  CHECK(helpers::masked_metrics_lines(out_resume + "/metrics.jsonl") ==
        helpers::masked_metrics_lines(out_full + "/metrics.jsonl"));

  // final checkpoints agree on parameters
  auto load_params = [](const std::string& dir) {
    std::ifstream f(dir + "/checkpoint.json");
    return nlohmann::json::parse(f).at("params").get<std::vector<double>>();
  };
  CHECK(load_params(out_resume) == load_params(out_full));
}

TEST_CASE("a mismatched checkpoint does not hijack a fresh run") {
  const std::string data = helpers::write_toy_pair("nohijack");
  TrainConfig cfg = helpers::small_config(data, 2, 4);
  const std::string out = helpers::fresh_out("nohijack");
  train(cfg, out);
  // different config into the same dir: hash mismatch, starts fresh
  TrainConfig cfg2 = cfg;
  cfg2.lr0 = 0.02;
  const auto metrics = train(cfg2, out);
  CHECK(static_cast<int>(metrics.size()) == cfg2.epochs);
  CHECK(metrics.front().epoch == 1);
}

TEST_CASE("one discriminator step on a frozen batch does not decrease the discrepancy") {
  const std::string data = helpers::write_toy_pair("ascent", 64);
  const LabeledDataset src = load_csv(data + "/source.csv");
  const LabeledDataset tgt = load_csv(data + "/target.csv");
  TrainConfig cfg = helpers::small_config(data);
  const ModelSpec spec = cfg.model_spec(2, 2);
  ModelParams params = init_params(spec, 21);

  Tensor xs = Tensor::zeros({16, 2}), xt = Tensor::zeros({16, 2});
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 2; ++j) {
      xs.at(i, j) = src.X.at(i, j);
      xt.at(i, j) = tgt.X.at(i, j);
    }

  auto domain_pass = [&](bool want_grads, std::vector<double>* disc_grads) {
    Tape<double> t;
    auto b = bind_model(t, spec, params);
    const ValueId f_all = t.concat_rows(features_fwd(t, b, t.constant(xs)),
                                        features_fwd(t, b, t.constant(xt)));
    const ValueId d = discriminate_fwd(t, b, f_all, {/*train=*/true, false}, params);
    const auto& dv = t.value(d);
    std::span<const double> d_src{dv.data(), 16};
    std::span<const double> d_tgt{dv.data() + 16, 16};
    const double disc = domain_discrepancy(d_src, d_tgt);
    if (want_grads) {
      const ValueId ds = t.slice_rows(d, 0, 16);
      const ValueId dt = t.slice_rows(d, 16, 32);
      const ValueId loss = t.scale(
          t.add(t.mean_all(t.log(ds)), t.mean_all(t.log(t.add_scalar(t.scale(dt, -1.0), 1.0)))),
          -1.0);
      t.backward(loss);
      std::vector<double> all;
      for (ValueId id : b.ordered)
        for (double a : t.adjoint(id)) all.push_back(a);
      disc_grads->assign(all.begin() + params.task_size, all.end());
    }
    return disc;
  };

  std::vector<double> disc_grads;
  const double before = domain_pass(true, &disc_grads);
  Sgd opt({1e-4, 0.0, 0.0}, disc_grads.size());
  opt.step(params.disc_span(), disc_grads, 1e-4);
  const double after = domain_pass(false, nullptr);
  CHECK(after >= before - 1e-9);
}

TEST_CASE("label noise and label smoothing feed the training path") {
  const std::string data = helpers::write_toy_pair("noisy");
  TrainConfig cfg = helpers::small_config(data, 2, 6);
  const auto plain = train(cfg, helpers::fresh_out("noisy_plain"));

  TrainConfig noisy = cfg;
  noisy.label_noise = 0.3;
  const auto with_noise = train(noisy, helpers::fresh_out("noisy_labels"));
  CHECK(with_noise.back().task_loss != plain.back().task_loss);
  // corrupted source labels bound fit quality on the clean eval labels
  CHECK(with_noise.back().src_acc <= plain.back().src_acc + 0.25);

  TrainConfig smoothed = cfg;
  smoothed.label_smoothing = 0.1;
  const auto with_ls = train(smoothed, helpers::fresh_out("noisy_ls"));
  CHECK(with_ls.back().task_loss != plain.back().task_loss);
  CHECK(std::isfinite(with_ls.back().task_loss));
}

TEST_CASE("non-finite state aborts with the step index") {
  const std::string data = helpers::write_toy_pair("nanstep");
  TrainConfig cfg = helpers::small_config(data, 1, 2);
  const LabeledDataset src = load_csv(cfg.data_src);
  const LabeledDataset tgt = load_csv(cfg.data_tgt);
  TrainRun run(cfg, src, strip_labels(tgt));
  run.mutable_params().flat[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(run.train_step(), doctest::Contains("train step 0"), std::runtime_error);
}

TEST_CASE("eps_norm_mean tracks the task wrapper") {
  const std::string data = helpers::write_toy_pair("epsnorm");
  TrainConfig cfg = helpers::small_config(data, 1, 5);
  cfg.mode = SmoothingMode::kTask;
  cfg.rho_task = 0.07;
  const std::string out = helpers::fresh_out("epsnorm");
  const auto metrics = train(cfg, out);
  CHECK(std::abs(metrics.back().eps_norm_mean - 0.07) <= 1e-9);

  TrainConfig plain = cfg;
  plain.mode = SmoothingMode::kNone;
  const auto metrics2 = train(plain, helpers::fresh_out("epsnorm_none"));
  CHECK(metrics2.back().eps_norm_mean == 0.0);

  TrainConfig both = cfg;
  both.mode = SmoothingMode::kAll;
  both.rho_adv = 0.3;
  const auto metrics3 = train(both, helpers::fresh_out("epsnorm_all"));
  CHECK(std::abs(metrics3.back().eps_norm_mean - 0.07) <= 1e-9);
}
