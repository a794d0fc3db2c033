#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "sdat/losses.hpp"
#include "sdat/model.hpp"
#include "sdat/rng.hpp"
#include "support/oracles.hpp"

using namespace sdat;

namespace {

ModelSpec toy_spec() {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.feature_dims = {16, 16};
  spec.bottleneck_dim = 8;
  spec.num_classes = 2;
  spec.disc_hidden = 32;
  return spec;
}

}  // namespace

TEST_CASE("init is deterministic and follows the stated rules") {
  const ModelSpec spec = toy_spec();
  const ModelParams a = init_params(spec, 99);
  const ModelParams b = init_params(spec, 99);
  CHECK(a.flat == b.flat);
  CHECK(a.bn_running == b.bn_running);

  const ModelParams c = init_params(spec, 100);
  CHECK(a.flat != c.flat);

  for (const ParamSlice& s : a.slices) {
    if (s.kind == ParamKind::kBias || s.kind == ParamKind::kBnShift) {
      for (int i = 0; i < s.size(); ++i) CHECK(a.flat[static_cast<std::size_t>(s.offset) + i] == 0.0);
    }
    if (s.kind == ParamKind::kBnScale) {
      for (int i = 0; i < s.size(); ++i) CHECK(a.flat[static_cast<std::size_t>(s.offset) + i] == 1.0);
    }
    if (s.kind == ParamKind::kWeight) {
      const double bound = std::sqrt(6.0 / s.cols);
      for (int i = 0; i < s.size(); ++i) {
        CHECK(a.flat[static_cast<std::size_t>(s.offset) + i] <= bound);
        CHECK(a.flat[static_cast<std::size_t>(s.offset) + i] >= -bound);
      }
    }
  }
  // 16 x 2 first layer: entries within +/- sqrt(6/2)
  CHECK(a.slices[0].cols == 2);
}

TEST_CASE("partitions are disjoint and cover the flat vector") {
  const ModelParams p = init_params(toy_spec(), 5);
  std::vector<int> hits(p.flat.size(), 0);
  for (const ParamSlice& s : p.slices)
    for (int i = 0; i < s.size(); ++i) ++hits[static_cast<std::size_t>(s.offset) + i];
  for (int h : hits) CHECK(h == 1);
  int task = 0;
  for (const ParamSlice& s : p.slices)
    if (s.group != ParamGroup::kDiscriminator) task += s.size();
  CHECK(task == p.task_size);
}

TEST_CASE("composition contract: classify(features(x)) through one tape") {
  const ModelSpec spec = toy_spec();
  const ModelParams p = init_params(spec, 3);
  Rng rng(1);
  Tensor x = Tensor::zeros({5, 2});
  for (auto& v : x.data) v = rng.normal();

  Tape<double> t1;
  auto b1 = bind_model(t1, spec, p);
  const auto logits_a = t1.value(classify_fwd(t1, b1, features_fwd(t1, b1, t1.constant(x))));

  Tape<double> t2;
  auto b2 = bind_model(t2, spec, p);
  const auto feats = t2.value(features_fwd(t2, b2, t2.constant(x)));
  Tape<double> t3;
  auto b3 = bind_model(t3, spec, p);
  const Tensor ft({5, spec.bottleneck_dim}, std::vector<double>(feats.begin(), feats.end()));
  const auto logits_b = t3.value(classify_fwd(t3, b3, t3.constant(ft)));
  CHECK(logits_a == logits_b);
}

TEST_CASE("all-zero discriminator weights output exactly 0.5") {
  const ModelSpec spec = toy_spec();
  ModelParams p = init_params(spec, 3);
  for (const ParamSlice& s : p.slices)
    if (s.group == ParamGroup::kDiscriminator && s.kind == ParamKind::kWeight)
      for (int i = 0; i < s.size(); ++i) p.flat[static_cast<std::size_t>(s.offset) + i] = 0.0;
  Rng rng(2);
  Tensor x = Tensor::zeros({4, spec.bottleneck_dim});
  for (auto& v : x.data) v = rng.normal();
  Tape<double> t;
  auto b = bind_model(t, spec, p);
  const auto d = t.value(discriminate_fwd(t, b, t.constant(x), {/*train=*/true, false}, p));
  for (double v : d) CHECK(v == 0.5);
}

TEST_CASE("eval-mode discriminator rows are independent") {
  const ModelSpec spec = toy_spec();
  const ModelParams p = init_params(spec, 7);
  Rng rng(3);
  Tensor x = Tensor::zeros({6, spec.bottleneck_dim});
  for (auto& v : x.data) v = rng.normal();

  Tape<double> t;
  auto b = bind_model(t, spec, p);
  const auto full = t.value(discriminate_fwd(t, b, t.constant(x), {/*train=*/false, false}, p));

  // same row alone gives the same output
  Tensor row0 = Tensor::zeros({1, spec.bottleneck_dim});
  for (int j = 0; j < spec.bottleneck_dim; ++j) row0.at(0, j) = x.at(3, j);
  Tape<double> t2;
  auto b2 = bind_model(t2, spec, p);
  const auto single = t2.value(discriminate_fwd(t2, b2, t2.constant(row0), {false, false}, p));
  CHECK(single[0] == doctest::Approx(full[3]).epsilon(1e-15));
}

TEST_CASE("train-mode batch norm standardizes the batch before affine") {
  const int n = 16, width = 4;
  Rng rng(4);
  Tensor x = Tensor::zeros({n, width});
  for (auto& v : x.data) v = rng.uniform(-15.0, 12.0);  // variance >> eps so the eps shift stays under 1e-6
  std::vector<double> gamma(width, 1.0), beta(width, 0.0);
  std::vector<double> rm(width, 0.0), rv(width, 1.0);

  Tape<double> t;
  const ValueId g = t.param(1, width, gamma);
  const ValueId be = t.param(1, width, beta);
  const ValueId y = batchnorm_fwd(t, t.constant(x), g, be, /*train=*/true, rm, rv);
  const auto& out = t.value(y);
  for (int c = 0; c < width; ++c) {
    double mean = 0.0;
    for (int r = 0; r < n; ++r) mean += out[static_cast<std::size_t>(r) * width + c];
    mean /= n;
    CHECK(std::abs(mean) <= 1e-9);
    double var = 0.0;
    for (int r = 0; r < n; ++r) {
      const double d = out[static_cast<std::size_t>(r) * width + c] - mean;
      var += d * d;
    }
    var /= n;
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("train-mode batch norm rejects batch size 1") {
  const ModelSpec spec = toy_spec();
  const ModelParams p = init_params(spec, 7);
  Tensor x = Tensor::zeros({1, spec.bottleneck_dim});
  Tape<double> t;
  auto b = bind_model(t, spec, p);
  CHECK_THROWS_AS(discriminate_fwd(t, b, t.constant(x), {/*train=*/true, false}, p), TapeError);
}

TEST_CASE("grl: identity forward, -lambda backward") {
  Tape<double> t;
  const double x[] = {1.0, -2.0, 3.0};
  const ValueId in = t.param(1, 3, x);
  const ValueId out = t.grl(in, 1.0);
  CHECK(t.value(out) == t.value(in));
  t.backward(t.sum_all(out));
  for (int i = 0; i < 3; ++i) CHECK(t.adjoint(in)[i] == -1.0);

  Tape<double> t0;
  const ValueId in0 = t0.param(1, 3, x);
  t0.backward(t0.sum_all(t0.grl(in0, 0.0)));
  for (int i = 0; i < 3; ++i) CHECK(t0.adjoint(in0)[i] == 0.0);

  Tape<double> tn;
  CHECK_THROWS_AS(tn.grl(tn.param(1, 3, x), -0.5), TapeError);
}

TEST_CASE("grl end-to-end: feature gradient equals -lambda times unreversed") {
  const ModelSpec spec = toy_spec();
  const ModelParams p = init_params(spec, 13);
  Rng rng(6);
  const int n = 4;
  Tensor xs = Tensor::zeros({n, 2}), xt = Tensor::zeros({n, 2});
  for (auto& v : xs.data) v = rng.normal();
  for (auto& v : xt.data) v = rng.normal();

  auto domain_grad_psi = [&](double lambda, bool use_grl) {
    Tape<double> t;
    auto b = bind_model(t, spec, p);
    const ValueId f_all = t.concat_rows(features_fwd(t, b, t.constant(xs)),
                                        features_fwd(t, b, t.constant(xt)));
    const ValueId din = use_grl ? t.grl(f_all, lambda) : f_all;
    const ValueId d = discriminate_fwd(t, b, din, {/*train=*/true, false}, p);
    const ValueId ds = t.slice_rows(d, 0, n);
    const ValueId dt = t.slice_rows(d, n, 2 * n);
    const ValueId loss = t.scale(
        t.add(t.mean_all(t.log(ds)), t.mean_all(t.log(t.add_scalar(t.scale(dt, -1.0), 1.0)))),
        -1.0);
    t.backward(loss);
    std::vector<double> g;
    for (std::size_t i = 0; i < b.psi_w.size(); ++i) {
      for (double a : t.adjoint(b.psi_w[i])) g.push_back(a);
      for (double a : t.adjoint(b.psi_b[i])) g.push_back(a);
    }
    return g;
  };

  const double lambda = 0.73;
  const auto with_grl = domain_grad_psi(lambda, true);
  const auto without = domain_grad_psi(lambda, false);
  REQUIRE(with_grl.size() == without.size());
  for (std::size_t i = 0; i < with_grl.size(); ++i)
    CHECK(std::abs(with_grl[i] - (-lambda) * without[i]) <= 1e-12);
}

TEST_CASE("multilinear input layout and properties") {
  Tape<double> t;
  const double f[] = {1.0, 2.0};
  const double p[] = {0.5, 0.5};
  const auto out = t.value(t.multilinear(t.constant(1, 2, f), t.constant(1, 2, p)));
  CHECK(out == std::vector<double>{0.5, 0.5, 1.0, 1.0});

  // one-hot class j places f in the j-th class slice, zeros elsewhere
  Tape<double> t2;
  const double onehot[] = {0.0, 1.0};
  const auto out2 = t2.value(t2.multilinear(t2.constant(1, 2, f), t2.constant(1, 2, onehot)));
  CHECK(out2 == std::vector<double>{0.0, 1.0, 0.0, 2.0});

  // summing each feature's class block recovers f when probabilities sum to 1
  Tape<double> t3;
  const double p3[] = {0.2, 0.3, 0.5};
  const auto out3 = t3.value(t3.multilinear(t3.constant(1, 2, f), t3.constant(1, 3, p3)));
  CHECK(out3[0] + out3[1] + out3[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out3[3] + out3[4] + out3[5] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("multilinear width matches the spec invariant") {
  ModelSpec spec = toy_spec();
  spec.conditioning = Conditioning::kMultilinear;
  spec.num_classes = 3;
  CHECK(spec.disc_input_dim() == spec.bottleneck_dim * 3);
  const ModelParams p = init_params(spec, 1);
  for (const ParamSlice& s : p.slices)
    if (s.name == "phi.l0.W") CHECK(s.cols == spec.bottleneck_dim * 3);
}

TEST_CASE("partition isolation: discriminator perturbations leave classify unchanged") {
  const ModelSpec spec = toy_spec();
  ModelParams p = init_params(spec, 33);
  Rng rng(8);
  Tensor x = Tensor::zeros({5, 2});
  for (auto& v : x.data) v = rng.normal();

  auto logits_of = [&](const ModelParams& params) {
    Tape<double> t;
    auto b = bind_model(t, spec, params);
    return t.value(classify_fwd(t, b, features_fwd(t, b, t.constant(x))));
  };
  const auto before = logits_of(p);
  const std::uint64_t disc_sum_before = checksum64(p.disc_span());

  ModelParams p2 = p;
  for (auto& v : p2.disc_span()) v += 0.37;
  CHECK(logits_of(p2) == before);

  ModelParams p3 = p;
  for (auto& v : p3.task_span()) v -= 0.21;
  CHECK(checksum64(p3.disc_span()) == disc_sum_before);
}

TEST_CASE("grl schedule: lambda(0)=0, nondecreasing, capped at hi") {
  GrlConfig cfg;
  CHECK(grl_lambda(cfg, 0.0) == 0.0);
  double prev = 0.0;
  for (int i = 1; i <= 100; ++i) {
    const double l = grl_lambda(cfg, i / 100.0);
    CHECK(l >= prev);
    CHECK(l <= cfg.hi);
    prev = l;
  }
  GrlConfig constant{10.0, 0.8, true};
  CHECK(grl_lambda(constant, 0.0) == 0.8);
  CHECK(grl_lambda(constant, 1.0) == 0.8);
}

TEST_CASE("spec validation") {
  ModelSpec bad = toy_spec();
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ModelSpec bad2 = toy_spec();
  bad2.bottleneck_dim = 0;
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}
