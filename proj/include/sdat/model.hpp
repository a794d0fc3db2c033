#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdat/rng.hpp"
#include "sdat/tape.hpp"
#include "sdat/tensor.hpp"

namespace sdat {

enum class DiscNorm { kBatchNorm, kNone };
enum class Conditioning { kPlain, kMultilinear };

DiscNorm parse_disc_norm(const std::string& s);
Conditioning parse_conditioning(const std::string& s);
std::string to_string(DiscNorm n);
std::string to_string(Conditioning c);

constexpr double kBnMomentum = 0.1;
constexpr double kBnEpsilon = 1e-5;
constexpr double kLogitClamp = 30.0;

// Feature extractor g: linear->relu stacks ending in a linear bottleneck.
// Classifier f: one linear layer to num_classes.
// Discriminator D: linear->[BN]->relu, linear->[BN]->relu, linear->sigmoid.
struct ModelSpec {
  int input_dim = 2;
  std::vector<int> feature_dims = {16, 16};
  int bottleneck_dim = 8;
  int num_classes = 2;
  int disc_hidden = 32;
  DiscNorm disc_norm = DiscNorm::kBatchNorm;
  Conditioning conditioning = Conditioning::kPlain;

  int disc_input_dim() const {
    return conditioning == Conditioning::kMultilinear ? bottleneck_dim * num_classes
                                                      : bottleneck_dim;
  }
  void validate() const;
};

enum class ParamGroup { kFeature, kClassifier, kDiscriminator };
enum class ParamKind { kWeight, kBias, kBnScale, kBnShift };

struct ParamSlice {
  std::string name;
  int offset = 0;
  int rows = 0;
  int cols = 0;
  ParamGroup group = ParamGroup::kFeature;
  ParamKind kind = ParamKind::kWeight;

  int size() const { return rows * cols; }
};

// Slice layout is deterministic in spec order: feature extractor, classifier,
// discriminator. The two scope spans used by the optimizers are therefore
// contiguous prefixes/suffixes of the flat vector.
std::vector<ParamSlice> param_layout(const ModelSpec& spec);

// Partitioned parameter store: one flat vector plus named disjoint slices that
// cover it exactly. Batch-norm running statistics are state, not parameters,
// and live in a separate buffer ([mean | var] per BN layer).
struct ModelParams {
  std::vector<double> flat;
  std::vector<ParamSlice> slices;
  std::vector<double> bn_running;
  int task_size = 0;  // feature + classifier prefix length

  std::span<double> task_span() { return {flat.data(), static_cast<std::size_t>(task_size)}; }
  std::span<const double> task_span() const {
    return {flat.data(), static_cast<std::size_t>(task_size)};
  }
  std::span<double> disc_span() {
    return {flat.data() + task_size, flat.size() - static_cast<std::size_t>(task_size)};
  }
  std::span<const double> disc_span() const {
    return {flat.data() + task_size, flat.size() - static_cast<std::size_t>(task_size)};
  }
  std::span<const double> slice_span(const ParamSlice& s) const {
    return {flat.data() + s.offset, static_cast<std::size_t>(s.size())};
  }
};

// Weights uniform(-a, a) with a = sqrt(6 / fan_in); biases zero; BN scale 1,
// shift 0, running stats (0, 1). Same (spec, seed) gives bit-identical params.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

struct GrlConfig {
  double gamma = 10.0;
  double hi = 1.0;
  bool constant = false;
};

// lambda(p) = hi * (2 / (1 + exp(-gamma p)) - 1); identically hi when constant.
double grl_lambda(const GrlConfig& cfg, double progress);

// ----- tape bindings ---------------------------------------------------------

template <class S>
struct BoundModel {
  const ModelSpec* spec = nullptr;
  std::vector<ValueId> ordered;  // every bound slice, in layout order
  std::vector<ValueId> psi_w, psi_b;
  ValueId theta_w = -1, theta_b = -1;
  std::vector<ValueId> phi_w, phi_b;
  std::vector<ValueId> phi_gamma, phi_beta;
  bool has_disc = false;
};

namespace detail {

template <class S>
void bind_slice(Tape<S>& tape, BoundModel<S>& bound, const ParamSlice& s,
                std::span<const double> flat, std::span<const double> tangent) {
  std::span<const double> v{flat.data() + s.offset, static_cast<std::size_t>(s.size())};
  std::span<const double> t;
  if (!tangent.empty()) t = {tangent.data() + s.offset, static_cast<std::size_t>(s.size())};
  const ValueId id = tape.param(s.rows, s.cols, v, t);
  bound.ordered.push_back(id);
  if (s.group == ParamGroup::kFeature) {
    (s.kind == ParamKind::kWeight ? bound.psi_w : bound.psi_b).push_back(id);
  } else if (s.group == ParamGroup::kClassifier) {
    (s.kind == ParamKind::kWeight ? bound.theta_w : bound.theta_b) = id;
  } else {
    bound.has_disc = true;
    switch (s.kind) {
      case ParamKind::kWeight: bound.phi_w.push_back(id); break;
      case ParamKind::kBias: bound.phi_b.push_back(id); break;
      case ParamKind::kBnScale: bound.phi_gamma.push_back(id); break;
      case ParamKind::kBnShift: bound.phi_beta.push_back(id); break;
    }
  }
}

}  // namespace detail

// Bind all parameter slices as tape leaves, in layout order. An optional
// tangent (same layout as flat) seeds the Dual direction for HVPs.
template <class S>
BoundModel<S> bind_model(Tape<S>& tape, const ModelSpec& spec, const ModelParams& params,
                         std::span<const double> tangent = {}) {
  BoundModel<S> bound;
  bound.spec = &spec;
  for (const ParamSlice& s : params.slices)
    detail::bind_slice(tape, bound, s, params.flat, tangent);
  return bound;
}

// Bind only the task scope (feature extractor + classifier) from a flat vector
// of that prefix length. Used by the Hessian oracle.
template <class S>
BoundModel<S> bind_task(Tape<S>& tape, const ModelSpec& spec, std::span<const double> task_flat,
                        std::span<const double> tangent = {}) {
  BoundModel<S> bound;
  bound.spec = &spec;
  for (const ParamSlice& s : param_layout(spec)) {
    if (s.group == ParamGroup::kDiscriminator) break;
    detail::bind_slice(tape, bound, s, task_flat, tangent);
  }
  return bound;
}

template <class S>
ValueId features_fwd(Tape<S>& tape, const BoundModel<S>& m, ValueId x) {
  ValueId h = x;
  const std::size_t hidden = m.spec->feature_dims.size();
  for (std::size_t i = 0; i < hidden; ++i)
    h = tape.relu(tape.linear(h, m.psi_w[i], m.psi_b[i]));
  return tape.linear(h, m.psi_w[hidden], m.psi_b[hidden]);
}

template <class S>
ValueId classify_fwd(Tape<S>& tape, const BoundModel<S>& m, ValueId feats) {
  return tape.linear(feats, m.theta_w, m.theta_b);
}

// Batch norm as a composite of mean / variance / normalize / affine
// primitives; its backward pass falls out of the tape. Train mode uses batch
// statistics and optionally updates the running buffers (value parts only);
// eval mode normalizes with the stored running statistics.
template <class S>
ValueId batchnorm_fwd(Tape<S>& tape, ValueId x, ValueId gamma, ValueId beta, bool train,
                      std::span<const double> run_mean, std::span<const double> run_var,
                      std::span<double> upd_mean = {}, std::span<double> upd_var = {}) {
  const int width = tape.node(x).cols;
  ValueId normalized;
  if (train) {
    if (tape.node(x).rows < 2)
      throw TapeError("batch norm in train mode requires batch size >= 2");
    const ValueId mu = tape.col_mean(x);
    const ValueId centered = tape.sub_row(x, mu);
    const ValueId var = tape.col_mean(tape.square(centered));
    const ValueId inv_std = tape.rsqrt(tape.add_scalar(var, kBnEpsilon));
    normalized = tape.mul_row(centered, inv_std);
    if (!upd_mean.empty()) {
      const auto& mv = tape.value(mu);
      const auto& vv = tape.value(var);
      for (int c = 0; c < width; ++c) {
        upd_mean[c] = (1.0 - kBnMomentum) * upd_mean[c] +
                      kBnMomentum * ScalarTraits<S>::value(mv[c]);
        upd_var[c] = (1.0 - kBnMomentum) * upd_var[c] +
                     kBnMomentum * ScalarTraits<S>::value(vv[c]);
      }
    }
  } else {
    std::vector<double> inv_std(static_cast<std::size_t>(width));
    for (int c = 0; c < width; ++c) inv_std[c] = 1.0 / std::sqrt(run_var[c] + kBnEpsilon);
    const ValueId mu = tape.constant(1, width, run_mean);
    const ValueId s = tape.constant(1, width, inv_std);
    normalized = tape.mul_row(tape.sub_row(x, mu), s);
  }
  return tape.add_row(tape.mul_row(normalized, gamma), beta);
}

struct DiscMode {
  bool train = false;
  bool update_running = false;
};

// Discriminator forward producing probabilities strictly inside (0, 1).
// `params` supplies the running statistics and receives updates when
// mode.update_running is set.
template <class S>
ValueId discriminate_fwd(Tape<S>& tape, const BoundModel<S>& m, ValueId input, DiscMode mode,
                         const ModelParams& params, std::vector<double>* mutable_running = nullptr) {
  if (!m.has_disc) throw TapeError("model binding has no discriminator parameters");
  const int h = m.spec->disc_hidden;
  ValueId cur = input;
  for (int layer = 0; layer < 2; ++layer) {
    cur = tape.linear(cur, m.phi_w[layer], m.phi_b[layer]);
    if (m.spec->disc_norm == DiscNorm::kBatchNorm) {
      const std::size_t base = static_cast<std::size_t>(layer) * 2 * h;
      std::span<const double> rm{params.bn_running.data() + base, static_cast<std::size_t>(h)};
      std::span<const double> rv{params.bn_running.data() + base + h, static_cast<std::size_t>(h)};
      std::span<double> um, uv;
      if (mode.update_running && mutable_running) {
        um = {mutable_running->data() + base, static_cast<std::size_t>(h)};
        uv = {mutable_running->data() + base + h, static_cast<std::size_t>(h)};
      }
      cur = batchnorm_fwd(tape, cur, m.phi_gamma[layer], m.phi_beta[layer], mode.train, rm, rv,
                          um, uv);
    }
    cur = tape.relu(cur);
  }
  cur = tape.linear(cur, m.phi_w[2], m.phi_b[2]);
  return tape.sigmoid_clamp(cur, kLogitClamp);
}

}  // namespace sdat
