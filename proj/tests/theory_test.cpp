#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "sdat/rng.hpp"
#include "sdat/theory.hpp"

using namespace sdat;

namespace {

QuadraticGame isotropic_game(int dim, double lambda, double c) {
  QuadraticGame g;
  g.a = Tensor::zeros({dim, dim});
  for (int i = 0; i < dim; ++i) g.a.at(i, i) = lambda;
  g.phi_star.assign(static_cast<std::size_t>(dim), 0.0);
  g.c = c;
  g.smoothness = lambda;
  return g;
}

}  // namespace

TEST_CASE("lemma bound is tight for isotropic quadratics") {
  const QuadraticGame g = isotropic_game(3, 2.5, 1.0);
  const std::vector<double> w = {0.7, -1.2, 0.4};
  const SmoothnessLemmaResult r = check_smoothness_lemma(g, w);
  CHECK(r.pass);
  CHECK(std::abs(r.slack) <= 1e-12);  // equality case
}

TEST_CASE("lemma holds trivially at the optimum") {
  const QuadraticGame g = isotropic_game(2, 1.0, 0.0);
  const std::vector<double> w = {0.0, 0.0};
  const SmoothnessLemmaResult r = check_smoothness_lemma(g, w);
  CHECK(r.pass);
  CHECK(r.slack == 0.0);
}

TEST_CASE("lemma fuzz: 1000 random psd quadratics") {
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(6));
    const QuadraticGame g = random_game(dim, 0.01, 10.0, rng);
    std::vector<double> w(static_cast<std::size_t>(dim));
    for (double& x : w) x = rng.uniform(-4.0, 4.0);
    const SmoothnessLemmaResult r = check_smoothness_lemma(g, w);
    CHECK(r.pass);
  }
}

TEST_CASE("ascent-gap bound: isotropic games have alpha = 0 and lhs ~ 0") {
  const QuadraticGame g = isotropic_game(4, 3.0, 0.5);
  const std::vector<double> phi = {1.0, -0.5, 0.25, 2.0};
  const AscentGapResult r = check_ascent_gap_bound(g, phi, 1e-3, 0.1);
  CHECK_FALSE(r.skipped);
  CHECK(r.cos_alpha == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(r.lhs) <= 1e-9);
  CHECK(r.pass);
}

TEST_CASE("ascent-gap check skips the degenerate optimum") {
  const QuadraticGame g = isotropic_game(2, 1.0, 0.0);
  const std::vector<double> phi = {0.0, 0.0};
  const AscentGapResult r = check_ascent_gap_bound(g, phi, 1e-3, 0.1);
  CHECK(r.skipped);
}

TEST_CASE("ascent-gap fuzz: 1000 games x 3 radii, no violations") {
  Rng rng(211);
  int skipped = 0;
  for (int i = 0; i < 1000; ++i) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(7));
    const QuadraticGame g = random_game(dim, 0.05, 8.0, rng);
    std::vector<double> phi(static_cast<std::size_t>(dim));
    for (double& x : phi) x = rng.uniform(-3.0, 3.0);
    for (double rho : {0.01, 0.1, 1.0}) {
      const AscentGapResult r = check_ascent_gap_bound(g, phi, 1e-3, rho);
      if (r.skipped) {
        ++skipped;
        continue;
      }
      CHECK(r.pass);
    }
  }
  CHECK(skipped < 10);
}

TEST_CASE("ascent gap shrinks as rho -> 0 (matched instances)") {
  Rng rng(307);
  for (int i = 0; i < 200; ++i) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(5));
    const QuadraticGame g = random_game(dim, 0.2, 6.0, rng);
    std::vector<double> phi(static_cast<std::size_t>(dim));
    for (double& x : phi) x = rng.uniform(-3.0, 3.0);
    const AscentGapResult small = check_ascent_gap_bound(g, phi, 1e-3, 1e-6);
    const AscentGapResult large = check_ascent_gap_bound(g, phi, 1e-3, 1.0);
    if (small.skipped || large.skipped) continue;
    CHECK(small.lhs <= large.lhs + 1e-9);
  }
}

TEST_CASE("sam direction maximizes the linearization over the ball") {
  // grad = (1, 0), rho = 1: eps = (1, 0) beats every sampled direction
  const std::vector<double> g = {1.0, 0.0};
  const AscentCheck r = check_sam_ascent(g, 1.0, 2000, 5);
  CHECK(r.pass);
  CHECK(r.eps_dot_grad == doctest::Approx(1.0));
  CHECK(r.best_other <= 1.0 + 1e-12);
}

TEST_CASE("sam direction scales linearly in rho") {
  Rng rng(9);
  std::vector<double> g(6);
  for (double& x : g) x = rng.normal();
  const AscentCheck a = check_sam_ascent(g, 0.5, 100, 3);
  const AscentCheck b = check_sam_ascent(g, 1.0, 100, 3);
  CHECK(b.eps_dot_grad == doctest::Approx(2.0 * a.eps_dot_grad).epsilon(1e-12));
}

TEST_CASE("sam direction vs monte-carlo directions on a random gradient") {
  Rng rng(17);
  std::vector<double> g(12);
  for (double& x : g) x = rng.normal();
  const AscentCheck r = check_sam_ascent(g, 0.3, 10000, 23);
  CHECK(r.pass);
  CHECK(r.best_other <= r.eps_dot_grad + 1e-12);
}

TEST_CASE("summary aggregates and serializes") {
  const TheorySummary s = run_theory_checks(50, 77);
  CHECK(s.n_instances == 50 * 4 + 8);
  CHECK(s.n_pass + s.n_skipped == s.n_instances);
  CHECK(s.max_violation <= 1e-9);
  const auto j = to_json(s);
  CHECK(j.at("n_instances").get<int>() == s.n_instances);
  CHECK(j.at("max_violation").get<double>() == s.max_violation);
}
