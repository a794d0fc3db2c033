#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "sdat/data.hpp"
#include "sdat/hessian.hpp"
#include "sdat/rng.hpp"
#include "support/oracles.hpp"

using namespace sdat;

TEST_CASE("power iteration on diag(3, 1)") {
  const auto op = oracles::diag_operator({3.0, 1.0});
  const auto res = power_dominant(op, 200, 1e-10, 7);
  CHECK(res.converged);
  CHECK(res.eigenvalue == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("power iteration on the identity converges in one iteration") {
  const auto op = oracles::diag_operator(std::vector<double>(16, 1.0));
  const auto res = power_dominant(op, 50, 1e-9, 3);
  CHECK(res.converged);
  CHECK(res.iterations == 1);
  CHECK(res.eigenvalue == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("power iteration flags non-convergence instead of lying") {
  // nearly degenerate pair converges slowly
  const auto op = oracles::diag_operator({1.0, 0.999999});
  const auto res = power_dominant(op, 1, 1e-16, 11);
  CHECK_FALSE(res.converged);
}

TEST_CASE("largest eigenvalue when the dominant-magnitude eigenvalue is negative") {
  const auto op = oracles::diag_operator({-5.0, 3.0, 0.5});
  const auto dom = power_dominant(op, 400, 1e-11, 5);
  CHECK(dom.eigenvalue == doctest::Approx(-5.0).epsilon(1e-5));
  const auto top = largest_eigenvalue(op, 400, 1e-11, 5);
  CHECK(top.eigenvalue == doctest::Approx(3.0).epsilon(1e-5));
}

TEST_CASE("power iteration on a random symmetric 50x50 matches the dense eigensolver") {
  const int n = 50;
  Rng rng(41);
  Tensor a = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = rng.normal();
      a.at(i, j) = v;
      a.at(j, i) = v;
    }
  const oracles::DenseOperator op(a);
  const auto eigs = oracles::jacobi_eigenvalues(op.matrix());
  const double want = std::max(std::abs(eigs.front()), std::abs(eigs.back()));
  const auto res = power_dominant(op, 2000, 1e-12, 13);
  CHECK(std::abs(std::abs(res.eigenvalue) - want) / want <= 0.01);

  const auto top = largest_eigenvalue(op, 2000, 1e-12, 13);
  CHECK(std::abs(top.eigenvalue - eigs.back()) / std::abs(eigs.back()) <= 0.01);
}

TEST_CASE("hutchinson on diag(1, 2, 3): exact trace within 3 stderr") {
  const auto op = oracles::diag_operator({1.0, 2.0, 3.0});
  const auto tr = hutchinson_trace(op, 256, 17);
  CHECK(std::abs(tr.estimate - 6.0) <= 3.0 * tr.stderr_val + 1e-12);
  CHECK(tr.n_probes == 256);
}

TEST_CASE("hutchinson on the zero operator is exactly zero") {
  const auto op = oracles::diag_operator({0.0, 0.0, 0.0, 0.0});
  const auto tr = hutchinson_trace(op, 16, 3);
  CHECK(tr.estimate == 0.0);
  CHECK(tr.stderr_val == 0.0);
  CHECK_THROWS_AS(hutchinson_trace(op, 1, 3), std::invalid_argument);
}

namespace {

HessianOracle make_mlp_oracle(std::uint64_t seed) {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.feature_dims = {4};
  spec.bottleneck_dim = 3;
  spec.num_classes = 2;
  spec.disc_hidden = 2;
  spec.disc_norm = DiscNorm::kNone;
  ModelParams params = init_params(spec, seed);
  Rng rng(child_seed(seed, 1));
  for (auto& v : params.flat) v = rng.uniform(-0.8, 0.8);
  LabeledDataset ds = make_blobs(60, 2, 2, 0.0, 1.0, child_seed(seed, 2));
  return HessianOracle(spec, params, ds, 0.5, seed);
}

}  // namespace

TEST_CASE("hutchinson on a tiny mlp matches the basis-vector trace") {
  const HessianOracle oracle = make_mlp_oracle(31);
  const int n = oracle.dim();
  REQUIRE(n <= 200);
  // exact trace via sum of e_i^T H e_i
  double exact = 0.0;
  std::vector<double> e(static_cast<std::size_t>(n), 0.0);
  std::vector<double> he(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    e[static_cast<std::size_t>(i)] = 1.0;
    oracle.apply(e, he);
    exact += he[static_cast<std::size_t>(i)];
    e[static_cast<std::size_t>(i)] = 0.0;
  }
  const auto tr = hutchinson_trace(oracle, 256, 23);
  CHECK(std::abs(tr.estimate - exact) <= 3.0 * tr.stderr_val + 1e-9);
}

TEST_CASE("oracle is frozen: repeated applies are identical") {
  const HessianOracle oracle = make_mlp_oracle(32);
  const int n = oracle.dim();
  Rng rng(1);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal();
  std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
  oracle.apply(v, a);
  oracle.apply(v, b);
  CHECK(a == b);
}

TEST_CASE("lanczos on diag(1, 2, 3) with the uniform start vector") {
  const auto op = oracles::diag_operator({1.0, 2.0, 3.0});
  const std::vector<double> v0(3, 1.0);
  const auto res = lanczos_spectrum_from(op, 3, v0);
  REQUIRE(res.ritz.size() == 3);
  CHECK(res.ritz[0].value == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.ritz[1].value == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(res.ritz[2].value == doctest::Approx(3.0).epsilon(1e-6));
  for (const RitzPair& p : res.ritz) CHECK(p.weight == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("lanczos with m = 1 returns the start vector's Rayleigh quotient") {
  const auto op = oracles::diag_operator({1.0, 4.0});
  const std::vector<double> v0 = {1.0, 1.0};
  const auto res = lanczos_spectrum_from(op, 1, v0);
  REQUIRE(res.ritz.size() == 1);
  CHECK(res.ritz[0].value == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(res.ritz[0].weight == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("full-rank lanczos recovers the dense spectrum") {
  const int n = 40;
  Rng rng(47);
  // well-separated spectrum via a random orthogonal conjugation
  Tensor a = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = 0.15 * rng.normal();
      a.at(i, j) = v;
      a.at(j, i) = v;
    }
  for (int i = 0; i < n; ++i) a.at(i, i) += 1.7 * i;
  const oracles::DenseOperator op(a);
  const auto dense = oracles::jacobi_eigenvalues(op.matrix());
  const auto res = lanczos_spectrum(op, n, 29);
  REQUIRE_FALSE(res.breakdown);
  REQUIRE(static_cast<int>(res.ritz.size()) == n);
  for (int i = 0; i < n; ++i)
    CHECK(std::abs(res.ritz[static_cast<std::size_t>(i)].value - dense[static_cast<std::size_t>(i)]) <= 1e-6);
  double wsum = 0.0;
  for (const RitzPair& p : res.ritz) {
    CHECK(p.weight >= 0.0);
    wsum += p.weight;
  }
  CHECK(std::abs(wsum - 1.0) <= 1e-9);
}

TEST_CASE("krylov breakdown returns early with a flag") {
  // rank-1 operator: the Krylov space is exhausted after two steps
  const int n = 10;
  Tensor a = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a.at(i, j) = 0.5;
  const oracles::DenseOperator op(a);
  const auto res = lanczos_spectrum(op, 6, 7);
  CHECK(res.breakdown);
  CHECK(res.steps < 6);
  double wsum = 0.0;
  for (const RitzPair& p : res.ritz) wsum += p.weight;
  CHECK(std::abs(wsum - 1.0) <= 1e-9);
}

TEST_CASE("psd sanity: trace nonnegative, lambda_max >= trace / n") {
  Rng rng(53);
  const int n = 30;
  Tensor a = Tensor::zeros({n, n});
  // gram matrix, psd by construction
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  for (auto& v : m) v = rng.normal();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += m[static_cast<std::size_t>(i) * n + k] * m[static_cast<std::size_t>(j) * n + k];
      a.at(i, j) = s / n;
    }
  const oracles::DenseOperator op(a);
  const auto tr = hutchinson_trace(op, 64, 5);
  CHECK(tr.estimate >= -3.0 * tr.stderr_val);
  const auto top = largest_eigenvalue(op, 800, 1e-10, 9);
  CHECK(top.eigenvalue >= tr.estimate / n - 3.0 * tr.stderr_val);
}

TEST_CASE("spectrum report: fields, invariants, determinism, json round-trip") {
  const HessianOracle oracle = make_mlp_oracle(77);
  SpectrumOptions opts;
  opts.n_probes = 32;
  opts.lanczos_m = 12;
  opts.seed = 99;
  const SpectrumReport a = make_spectrum_report(oracle, opts, oracle.params_checksum());
  const SpectrumReport b = make_spectrum_report(oracle, opts, oracle.params_checksum());
  CHECK(to_json(a).dump() == to_json(b).dump());

  CHECK(a.n_params == oracle.dim());
  CHECK(a.n_probes == 32);
  CHECK(a.lanczos_steps == 12);
  double wsum = 0.0;
  double vmax = a.ritz.front().value;
  for (const RitzPair& p : a.ritz) {
    wsum += p.weight;
    vmax = std::max(vmax, p.value);
  }
  CHECK(std::abs(wsum - 1.0) <= 1e-9);
  CHECK(a.lambda_max >= vmax - 1e-6);
  CHECK(std::isfinite(a.trace_estimate));
  CHECK(std::isfinite(a.sigma));

  const auto dir = std::filesystem::temp_directory_path() / "sdat_hessian_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "spectrum.json").string();
  save_spectrum_report(a, path);
  const SpectrumReport c = load_spectrum_report(path);
  CHECK(to_json(c).dump() == to_json(a).dump());
}

TEST_CASE("oracle validates the fraction and exposes the subset size") {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.feature_dims = {4};
  spec.bottleneck_dim = 3;
  spec.num_classes = 2;
  const ModelParams params = init_params(spec, 1);
  const LabeledDataset ds = make_blobs(40, 2, 2, 0.0, 1.0, 3);
  CHECK_THROWS_AS(HessianOracle(spec, params, ds, 0.0, 1), std::invalid_argument);
  const HessianOracle h(spec, params, ds, 0.5, 1);
  CHECK(h.subset_size() == 20);
}
