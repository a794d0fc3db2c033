#include "sdat/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sdat {

DiscNorm parse_disc_norm(const std::string& s) {
  if (s == "batchnorm") return DiscNorm::kBatchNorm;
  if (s == "none") return DiscNorm::kNone;
  throw std::invalid_argument("unknown disc_norm: " + s);
}

Conditioning parse_conditioning(const std::string& s) {
  if (s == "plain") return Conditioning::kPlain;
  if (s == "multilinear") return Conditioning::kMultilinear;
  throw std::invalid_argument("unknown conditioning: " + s);
}

std::string to_string(DiscNorm n) { return n == DiscNorm::kBatchNorm ? "batchnorm" : "none"; }
std::string to_string(Conditioning c) {
  return c == Conditioning::kMultilinear ? "multilinear" : "plain";
}

void ModelSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
  for (int w : feature_dims)
    if (w < 1) throw std::invalid_argument("feature widths must be >= 1");
  if (bottleneck_dim < 1) throw std::invalid_argument("bottleneck_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (disc_hidden < 1) throw std::invalid_argument("disc_hidden must be >= 1");
}

std::vector<ParamSlice> param_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamSlice> slices;
  int offset = 0;
  auto add = [&](const std::string& name, int rows, int cols, ParamGroup g, ParamKind k) {
    slices.push_back({name, offset, rows, cols, g, k});
    offset += rows * cols;
  };

  int in = spec.input_dim;
  for (std::size_t i = 0; i < spec.feature_dims.size(); ++i) {
    const int out = spec.feature_dims[i];
    const std::string tag = "psi.l" + std::to_string(i);
    add(tag + ".W", out, in, ParamGroup::kFeature, ParamKind::kWeight);
    add(tag + ".b", 1, out, ParamGroup::kFeature, ParamKind::kBias);
    in = out;
  }
  add("psi.out.W", spec.bottleneck_dim, in, ParamGroup::kFeature, ParamKind::kWeight);
  add("psi.out.b", 1, spec.bottleneck_dim, ParamGroup::kFeature, ParamKind::kBias);

  add("theta.W", spec.num_classes, spec.bottleneck_dim, ParamGroup::kClassifier,
      ParamKind::kWeight);
  add("theta.b", 1, spec.num_classes, ParamGroup::kClassifier, ParamKind::kBias);

  const int h = spec.disc_hidden;
  int disc_in = spec.disc_input_dim();
  for (int layer = 0; layer < 2; ++layer) {
    const std::string tag = "phi.l" + std::to_string(layer);
    add(tag + ".W", h, disc_in, ParamGroup::kDiscriminator, ParamKind::kWeight);
    add(tag + ".b", 1, h, ParamGroup::kDiscriminator, ParamKind::kBias);
    if (spec.disc_norm == DiscNorm::kBatchNorm) {
      add("phi.bn" + std::to_string(layer) + ".gamma", 1, h, ParamGroup::kDiscriminator,
          ParamKind::kBnScale);
      add("phi.bn" + std::to_string(layer) + ".beta", 1, h, ParamGroup::kDiscriminator,
          ParamKind::kBnShift);
    }
    disc_in = h;
  }
  add("phi.out.W", 1, h, ParamGroup::kDiscriminator, ParamKind::kWeight);
  add("phi.out.b", 1, 1, ParamGroup::kDiscriminator, ParamKind::kBias);
  return slices;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams params;
  params.slices = param_layout(spec);
  int total = 0;
  params.task_size = 0;
  for (const ParamSlice& s : params.slices) {
    total += s.size();
    if (s.group != ParamGroup::kDiscriminator) params.task_size += s.size();
  }
  params.flat.assign(static_cast<std::size_t>(total), 0.0);

  Rng rng(seed);
  for (const ParamSlice& s : params.slices) {
    double* p = params.flat.data() + s.offset;
    switch (s.kind) {
      case ParamKind::kWeight: {
        const double a = std::sqrt(6.0 / s.cols);  // fan_in = cols
        for (int i = 0; i < s.size(); ++i) p[i] = rng.uniform(-a, a);
        break;
      }
      case ParamKind::kBias:
      case ParamKind::kBnShift:
        break;  // zeros
      case ParamKind::kBnScale:
        for (int i = 0; i < s.size(); ++i) p[i] = 1.0;
        break;
    }
  }

  if (spec.disc_norm == DiscNorm::kBatchNorm) {
    params.bn_running.assign(static_cast<std::size_t>(4 * spec.disc_hidden), 0.0);
    for (int layer = 0; layer < 2; ++layer)
      for (int c = 0; c < spec.disc_hidden; ++c)
        params.bn_running[static_cast<std::size_t>(layer) * 2 * spec.disc_hidden +
                          spec.disc_hidden + c] = 1.0;
  }
  return params;
}

double grl_lambda(const GrlConfig& cfg, double progress) {
  if (cfg.constant) return cfg.hi;
  return cfg.hi * (2.0 / (1.0 + std::exp(-cfg.gamma * progress)) - 1.0);
}

}  // namespace sdat
