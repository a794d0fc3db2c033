#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace sdat {

// lr(p) = lr0 * (1 + a p)^(-b), p in [0, 1].
struct ScheduleConfig {
  double a = 10.0;
  double b = 0.75;
};

double lr_at(const ScheduleConfig& sched, double lr0, double progress);

struct SgdConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-3;
};

struct AdamConfig {
  double lr0 = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Base optimizer for one parameter scope. State is single-writer, bound to
// one training loop.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<double> params, std::span<const double> grads, double lr) = 0;
  virtual nlohmann::json save_state() const = 0;
  virtual void load_state(const nlohmann::json& j) = 0;
};

// Momentum SGD with weight decay folded into the gradient before the velocity
// update: g <- g + wd * theta; v <- momentum * v + g; theta <- theta - lr * v.
class Sgd final : public Optimizer {
 public:
  Sgd(SgdConfig cfg, std::size_t size) : cfg_(cfg), velocity_(size, 0.0) {}
  void step(std::span<double> params, std::span<const double> grads, double lr) override;
  nlohmann::json save_state() const override;
  void load_state(const nlohmann::json& j) override;

 private:
  SgdConfig cfg_;
  std::vector<double> velocity_;
};

class Adam final : public Optimizer {
 public:
  Adam(AdamConfig cfg, std::size_t size) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}
  void step(std::span<double> params, std::span<const double> grads, double lr) override;
  nlohmann::json save_state() const override;
  void load_state(const nlohmann::json& j) override;

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, const SgdConfig& sgd,
                                          const AdamConfig& adam, std::size_t size);

// Two-step sharpness-aware wrapper around a base optimizer, owning exactly one
// parameter scope. first_step computes eps = rho * g / ||g||_2 with one global
// norm over the scope, adds it to the live weights and clears the accumulated
// gradients so the next backward pass yields gradients purely at the perturbed
// point. second_step restores the saved pre-perturbation weights bit-exactly
// (subtracting eps back would reintroduce rounding) and lets the base
// optimizer step with the perturbed-point gradients. ||g|| = 0 and rho = 0
// degenerate to a zero perturbation, leaving the weights bit-identical.
class SamState {
 public:
  SamState(double rho, std::size_t size);

  void first_step(std::span<double> params, std::span<double> grads);
  void second_step(std::span<double> params, std::span<const double> grads, Optimizer& base,
                   double lr);

  bool applied() const { return applied_; }
  double rho() const { return rho_; }
  double eps_norm() const;  // equals rho whenever the gradient norm was > 0

  nlohmann::json save_state() const;
  void load_state(const nlohmann::json& j);

 private:
  double rho_ = 0.0;
  std::vector<double> eps_hat_;
  std::vector<double> saved_params_;
  bool applied_ = false;
  bool perturbed_ = false;
};

}  // namespace sdat
