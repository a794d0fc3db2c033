#include "sdat/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdat {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace

double QuadraticGame::d_value(std::span<const double> phi) const {
  const int n = dim();
  double quad = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += a.at(i, j) * (phi[static_cast<std::size_t>(j)] - phi_star[static_cast<std::size_t>(j)]);
    quad += (phi[static_cast<std::size_t>(i)] - phi_star[static_cast<std::size_t>(i)]) * row;
  }
  return c - 0.5 * quad;
}

void QuadraticGame::d_grad(std::span<const double> phi, std::span<double> grad) const {
  const int n = dim();
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += a.at(i, j) * (phi[static_cast<std::size_t>(j)] - phi_star[static_cast<std::size_t>(j)]);
    grad[static_cast<std::size_t>(i)] = -row;
  }
}

QuadraticGame random_game(int dim, double eig_lo, double eig_hi, Rng& rng) {
  if (dim < 1) throw std::invalid_argument("random_game: dim must be >= 1");
  if (eig_lo < 0.0 || eig_hi < eig_lo) throw std::invalid_argument("random_game: bad eig range");

  // random orthogonal Q by Gram-Schmidt on a Gaussian matrix
  std::vector<std::vector<double>> q(static_cast<std::size_t>(dim),
                                     std::vector<double>(static_cast<std::size_t>(dim)));
  for (auto& row : q) {
    for (double& x : row) x = rng.normal();
  }
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < i; ++j) {
      const double c = dot(q[static_cast<std::size_t>(i)], q[static_cast<std::size_t>(j)]);
      for (int k = 0; k < dim; ++k) q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] -= c * q[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
    }
    const double nrm = norm2(q[static_cast<std::size_t>(i)]);
    if (nrm < 1e-8) throw std::runtime_error("random_game: degenerate basis draw");
    for (double& x : q[static_cast<std::size_t>(i)]) x /= nrm;
  }

  std::vector<double> eigs(static_cast<std::size_t>(dim));
  double l = 0.0;
  for (double& e : eigs) {
    e = rng.uniform(eig_lo, eig_hi);
    l = std::max(l, e);
  }

  QuadraticGame game;
  game.a = Tensor::zeros({dim, dim});
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j <= i; ++j) {
      double s = 0.0;
      for (int k = 0; k < dim; ++k)
        s += q[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] * eigs[static_cast<std::size_t>(k)] * q[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
      game.a.at(i, j) = s;
      game.a.at(j, i) = s;  // exact symmetry
    }
  game.phi_star.resize(static_cast<std::size_t>(dim));
  for (double& x : game.phi_star) x = rng.uniform(-2.0, 2.0);
  game.c = rng.uniform(-1.0, 1.0);
  game.smoothness = l;
  return game;
}

SmoothnessLemmaResult check_smoothness_lemma(const QuadraticGame& game, std::span<const double> w,
                          double slack_tol) {
  const int n = game.dim();
  std::vector<double> g(static_cast<std::size_t>(n));
  game.d_grad(w, g);  // grad f = -grad d for f = -d
  const double f_gap = game.c - game.d_value(w);  // f(w) - f(w*)
  const double bound = dot(g, g) / (2.0 * game.smoothness);
  SmoothnessLemmaResult r;
  r.slack = f_gap - bound;
  r.pass = r.slack >= -slack_tol;
  return r;
}

AscentGapResult check_ascent_gap_bound(const QuadraticGame& game, std::span<const double> phi, double eta,
                              double rho, double slack_tol) {
  if (eta <= 0.0 || rho <= 0.0) throw std::invalid_argument("check_ascent_gap_bound: eta, rho > 0");
  const int n = game.dim();
  AscentGapResult r;
  std::vector<double> g(static_cast<std::size_t>(n));
  game.d_grad(phi, g);
  const double gn = norm2(g);
  if (gn == 0.0) {
    r.skipped = true;
    return r;
  }

  // plain ascent step
  std::vector<double> phi1(phi.begin(), phi.end());
  for (int i = 0; i < n; ++i) phi1[static_cast<std::size_t>(i)] += eta * g[static_cast<std::size_t>(i)] / gn;

  // inner min of the sharpness-aware estimate for an ascent objective
  std::vector<double> perturbed(phi.begin(), phi.end());
  for (int i = 0; i < n; ++i) perturbed[static_cast<std::size_t>(i)] -= rho * g[static_cast<std::size_t>(i)] / gn;
  std::vector<double> g2(static_cast<std::size_t>(n));
  game.d_grad(perturbed, g2);
  const double g2n = norm2(g2);
  if (g2n == 0.0) {
    r.skipped = true;  // perturbation landed on the optimum
    return r;
  }
  std::vector<double> phi2(phi.begin(), phi.end());
  for (int i = 0; i < n; ++i) phi2[static_cast<std::size_t>(i)] += eta * g2[static_cast<std::size_t>(i)] / g2n;

  r.cos_alpha = dot(g, g2) / (gn * g2n);
  r.lhs = eta * gn * (1.0 - r.cos_alpha);
  r.lhs_exact = game.d_value(phi1) - game.d_value(phi2);
  const double gap = game.c - game.d_value(phi);
  r.rhs = eta * (1.0 - r.cos_alpha) * std::sqrt(2.0 * game.smoothness * std::max(0.0, gap));
  r.pass = r.lhs <= r.rhs + slack_tol;
  return r;
}

AscentCheck check_sam_ascent(std::span<const double> grad, double rho, int n_directions,
                             std::uint64_t seed, double tol) {
  if (rho <= 0.0) throw std::invalid_argument("check_sam_ascent: rho > 0");
  const double gn = norm2(grad);
  if (gn == 0.0) throw std::invalid_argument("check_sam_ascent: zero gradient");
  AscentCheck r;
  r.eps_dot_grad = rho * gn;  // (rho g / ||g||)^T g
  Rng rng(seed);
  std::vector<double> u(grad.size());
  double best = -1e300;
  for (int k = 0; k < n_directions; ++k) {
    for (double& x : u) x = rng.normal();
    const double un = norm2(u);
    if (un == 0.0) continue;
    best = std::max(best, rho * dot(u, grad) / un);
  }
  r.best_other = best;
  r.pass = r.eps_dot_grad >= best - tol;
  return r;
}

TheorySummary run_theory_checks(int n_instances, std::uint64_t seed) {
  if (n_instances < 1) throw std::invalid_argument("run_theory_checks: n_instances >= 1");
  TheorySummary s;
  Rng rng(child_seed(seed, 0));
  const double rhos[] = {0.01, 0.1, 1.0};
  const double eta = 1e-3;

  for (int i = 0; i < n_instances; ++i) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(7));
    QuadraticGame game = random_game(dim, 0.05, 8.0, rng);
    std::vector<double> w(static_cast<std::size_t>(dim));
    for (double& x : w) x = rng.uniform(-3.0, 3.0);

    const SmoothnessLemmaResult lemma = check_smoothness_lemma(game, w);
    ++s.n_instances;
    if (lemma.pass) ++s.n_pass;
    s.max_violation = std::max(s.max_violation, -lemma.slack);

    for (double rho : rhos) {
      const AscentGapResult th = check_ascent_gap_bound(game, w, eta, rho);
      ++s.n_instances;
      if (th.skipped) {
        ++s.n_skipped;
        continue;
      }
      if (th.pass) ++s.n_pass;
      s.max_violation = std::max(s.max_violation, th.lhs - th.rhs);
    }
  }

  // linearization optimality on a handful of random gradients
  for (int i = 0; i < 8; ++i) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(15));
    std::vector<double> g(static_cast<std::size_t>(dim));
    for (double& x : g) x = rng.normal();
    const AscentCheck ac = check_sam_ascent(g, 0.5, 1000, child_seed(seed, 100 + static_cast<std::uint64_t>(i)));
    ++s.n_instances;
    if (ac.pass) ++s.n_pass;
    s.max_violation = std::max(s.max_violation, ac.best_other - ac.eps_dot_grad);
  }
  return s;
}

nlohmann::ordered_json to_json(const TheorySummary& s) {
  nlohmann::ordered_json j;
  j["n_instances"] = s.n_instances;
  j["n_pass"] = s.n_pass;
  j["n_skipped"] = s.n_skipped;
  j["max_violation"] = s.max_violation;
  return j;
}

}  // namespace sdat
