#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdat/rng.hpp"
#include "sdat/tensor.hpp"

namespace sdat {

// Concave quadratic discrepancy surrogate d(phi) = c - (phi - phi*)^T A
// (phi - phi*) / 2 with A symmetric PSD. Built from an exact eigendecomposition
// so the smoothness constant L = lambda_max(A) and the optimum d* = c are known
// in closed form.
struct QuadraticGame {
  Tensor a;                       // dim x dim, symmetric PSD
  std::vector<double> phi_star;
  double c = 0.0;
  double smoothness = 0.0;        // L = lambda_max(A), exact by construction

  int dim() const { return static_cast<int>(phi_star.size()); }
  double d_value(std::span<const double> phi) const;
  void d_grad(std::span<const double> phi, std::span<double> grad) const;
};

// A = Q^T diag(eigs) Q with Q a random orthogonal matrix; eigenvalues drawn
// uniform in [eig_lo, eig_hi].
QuadraticGame random_game(int dim, double eig_lo, double eig_hi, Rng& rng);

struct SmoothnessLemmaResult {
  double slack = 0.0;  // (f(w) - f(w*)) - ||grad f(w)||^2 / (2L), with f = -d
  bool pass = false;
};

// f(w) - f(w*) >= ||grad f(w)||^2 / (2L) for the L-smooth convex f = -d.
SmoothnessLemmaResult check_smoothness_lemma(const QuadraticGame& game, std::span<const double> w,
                          double slack_tol = 1e-9);

struct AscentGapResult {
  double lhs = 0.0;        // ascent gap eta ||g|| (1 - cos alpha), the quantity the proof bounds
  double lhs_exact = 0.0;  // d(phi') - d(phi''), carrying the O(eta^2) curvature correction
  double rhs = 0.0;        // eta (1 - cos alpha) sqrt(2 L (d* - d(phi)))
  double cos_alpha = 1.0;
  bool pass = false;
  bool skipped = false;    // gradient vanished at phi or at the perturbed point
};

// One step of normalized gradient ascent from phi versus the same step taken
// with the gradient evaluated at the sharpness-aware inner-minimizer
// phi + eps, eps = -rho g / ||g||. The bound covers the first-order ascent gap
// eta ||g|| (1 - cos alpha), which is what the one-step analysis derives; the
// exact finite-eta difference is reported alongside (it can exceed the bound
// by O(eta^2 L) when the gradients are nearly parallel).
AscentGapResult check_ascent_gap_bound(const QuadraticGame& game, std::span<const double> phi, double eta,
                              double rho, double slack_tol = 1e-9);

struct AscentCheck {
  double eps_dot_grad = 0.0;   // eps^T grad for eps = rho grad / ||grad||
  double best_other = 0.0;     // max over sampled directions of (rho u)^T grad
  bool pass = false;
};

// eps = rho g / ||g|| maximizes the linearized objective over the rho-ball:
// eps^T g >= (rho u)^T g for every unit direction u.
AscentCheck check_sam_ascent(std::span<const double> grad, double rho, int n_directions,
                             std::uint64_t seed, double tol = 1e-12);

struct TheorySummary {
  int n_instances = 0;
  int n_pass = 0;
  int n_skipped = 0;
  double max_violation = 0.0;  // worst exceedance over all checks (<= 0 when all hold)
};

// Smoothness-lemma fuzz + ascent-gap fuzz over rho in {0.01, 0.1, 1} with
// eta = 1e-3, plus linearization-optimality spot checks.
TheorySummary run_theory_checks(int n_instances, std::uint64_t seed);

nlohmann::ordered_json to_json(const TheorySummary& s);

}  // namespace sdat
