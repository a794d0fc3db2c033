#include "sdat/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sdat {

namespace {

void require_finite(std::span<const double> grads) {
  for (double g : grads)
    if (!std::isfinite(g)) throw std::runtime_error("optimizer step with non-finite gradient");
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

double lr_at(const ScheduleConfig& sched, double lr0, double progress) {
  if (progress < 0.0 || progress > 1.0)
    throw std::invalid_argument("schedule progress must be in [0, 1]");
  return lr0 * std::pow(1.0 + sched.a * progress, -sched.b);
}

void Sgd::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != velocity_.size() || grads.size() != velocity_.size())
    throw std::invalid_argument("sgd step size mismatch");
  require_finite(grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + cfg_.weight_decay * params[i];
    velocity_[i] = cfg_.momentum * velocity_[i] + g;
    params[i] -= lr * velocity_[i];
  }
}

nlohmann::json Sgd::save_state() const {
  return {{"kind", "sgd"}, {"velocity", velocity_}};
}

void Sgd::load_state(const nlohmann::json& j) {
  if (j.at("kind") != "sgd") throw std::runtime_error("optimizer state kind mismatch");
  const auto v = j.at("velocity").get<std::vector<double>>();
  if (v.size() != velocity_.size()) throw std::runtime_error("sgd state size mismatch");
  velocity_ = v;
}

void Adam::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("adam step size mismatch");
  require_finite(grads);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

nlohmann::json Adam::save_state() const {
  return {{"kind", "adam"}, {"m", m_}, {"v", v_}, {"t", t_}};
}

void Adam::load_state(const nlohmann::json& j) {
  if (j.at("kind") != "adam") throw std::runtime_error("optimizer state kind mismatch");
  const auto m = j.at("m").get<std::vector<double>>();
  const auto v = j.at("v").get<std::vector<double>>();
  if (m.size() != m_.size() || v.size() != v_.size())
    throw std::runtime_error("adam state size mismatch");
  m_ = m;
  v_ = v;
  t_ = j.at("t").get<std::int64_t>();
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, const SgdConfig& sgd,
                                          const AdamConfig& adam, std::size_t size) {
  if (kind == "sgd") return std::make_unique<Sgd>(sgd, size);
  if (kind == "adam") return std::make_unique<Adam>(adam, size);
  throw std::invalid_argument("unknown optimizer kind: " + kind);
}

SamState::SamState(double rho, std::size_t size)
    : rho_(rho), eps_hat_(size, 0.0), saved_params_(size, 0.0) {
  if (rho < 0.0) throw std::invalid_argument("sam rho must be nonnegative");
}

void SamState::first_step(std::span<double> params, std::span<double> grads) {
  if (applied_)
    throw std::runtime_error("sam first_step called twice without second_step");
  if (params.size() != eps_hat_.size() || grads.size() != eps_hat_.size())
    throw std::invalid_argument("sam first_step size mismatch");
  require_finite(grads);
  const double g_norm = norm2(grads);
  perturbed_ = rho_ > 0.0 && g_norm > 0.0;
  if (perturbed_) {
    std::copy(params.begin(), params.end(), saved_params_.begin());
    const double scale = rho_ / g_norm;
    for (std::size_t i = 0; i < params.size(); ++i) {
      eps_hat_[i] = scale * grads[i];
      params[i] += eps_hat_[i];
    }
  } else {
    std::fill(eps_hat_.begin(), eps_hat_.end(), 0.0);
  }
  std::fill(grads.begin(), grads.end(), 0.0);
  applied_ = true;
}

void SamState::second_step(std::span<double> params, std::span<const double> grads,
                           Optimizer& base, double lr) {
  if (!applied_)
    throw std::runtime_error("sam second_step called without a preceding first_step");
  if (params.size() != eps_hat_.size())
    throw std::invalid_argument("sam second_step size mismatch");
  if (perturbed_) std::copy(saved_params_.begin(), saved_params_.end(), params.begin());
  base.step(params, grads, lr);
  applied_ = false;
  perturbed_ = false;
}

double SamState::eps_norm() const { return norm2(eps_hat_); }

nlohmann::json SamState::save_state() const {
  return {{"rho", rho_}, {"applied", applied_}};
}

void SamState::load_state(const nlohmann::json& j) {
  rho_ = j.at("rho").get<double>();
  applied_ = j.at("applied").get<bool>();
  if (applied_) throw std::runtime_error("cannot restore a sam state mid-perturbation");
}

}  // namespace sdat
