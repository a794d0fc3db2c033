#include "sdat/hessian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sdat/losses.hpp"
#include "sdat/rng.hpp"

namespace sdat {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace

// ----- TaskLossFn -------------------------------------------------------------

TaskLossFn::TaskLossFn(ModelSpec spec, Tensor x, std::vector<int> y, double alpha)
    : spec_(std::move(spec)), x_(std::move(x)), y_(std::move(y)), alpha_(alpha) {
  spec_.validate();
  if (x_.rows() != static_cast<int>(y_.size()))
    throw std::invalid_argument("task loss: row/label count mismatch");
  for (const ParamSlice& s : param_layout(spec_))
    if (s.group != ParamGroup::kDiscriminator) dim_ += s.size();
  if (dim_ == 0) throw std::invalid_argument("task loss: zero-dimensional parameters");
}

namespace {

template <class S>
ValueId task_graph(Tape<S>& tape, const ModelSpec& spec, std::span<const double> theta,
                   std::span<const double> tangent, const Tensor& x, const std::vector<int>& y,
                   double alpha, BoundModel<S>* bound_out) {
  auto bound = bind_task(tape, spec, theta, tangent);
  const ValueId input = tape.constant(x);
  const ValueId logits = classify_fwd(tape, bound, features_fwd(tape, bound, input));
  const ValueId loss = cross_entropy_graph(tape, logits, y, alpha);
  if (bound_out) *bound_out = bound;
  return loss;
}

}  // namespace

double TaskLossFn::value(std::span<const double> theta) const {
  Tape<double> tape;
  const ValueId loss = task_graph(tape, spec_, theta, std::span<const double>{}, x_, y_, alpha_, static_cast<BoundModel<double>*>(nullptr));
  return tape.value(loss)[0];
}

double TaskLossFn::value_grad(std::span<const double> theta, std::span<double> grad) const {
  if (static_cast<int>(theta.size()) != dim_ || static_cast<int>(grad.size()) != dim_)
    throw std::invalid_argument("task loss: parameter size mismatch");
  Tape<double> tape;
  BoundModel<double> bound;
  const ValueId loss = task_graph(tape, spec_, theta, std::span<const double>{}, x_, y_, alpha_, &bound);
  tape.backward(loss);
  std::size_t o = 0;
  for (ValueId id : bound.ordered)
    for (double a : tape.adjoint(id)) grad[o++] = a;
  return tape.value(loss)[0];
}

void TaskLossFn::hvp(std::span<const double> theta, std::span<const double> v,
                     std::span<double> out) const {
  if (static_cast<int>(theta.size()) != dim_ || static_cast<int>(v.size()) != dim_ ||
      static_cast<int>(out.size()) != dim_)
    throw std::invalid_argument("hvp: dimension mismatch");
  Tape<Dual> tape;
  BoundModel<Dual> bound;
  const ValueId loss = task_graph(tape, spec_, theta, v, x_, y_, alpha_, &bound);
  tape.backward(loss);
  std::size_t o = 0;
  for (ValueId id : bound.ordered)
    for (const Dual& a : tape.adjoint(id)) out[o++] = a.d;
}

std::vector<double> hvp(const TaskLossFn& loss, std::span<const double> theta,
                        std::span<const double> v) {
  std::vector<double> out(static_cast<std::size_t>(loss.dim()), 0.0);
  loss.hvp(theta, v, out);
  return out;
}

// ----- HessianOracle ----------------------------------------------------------

HessianOracle::HessianOracle(const ModelSpec& spec, const ModelParams& params,
                             const LabeledDataset& source, double fraction, std::uint64_t seed,
                             double alpha) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("hessian oracle: fraction must be in (0, 1]");
  const int n = source.meta.n;
  const int m = std::max(1, static_cast<int>(std::llround(fraction * n)));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(child_seed(seed, 0));
  rng.shuffle(order.begin(), order.end());

  Tensor x = Tensor::zeros({m, source.meta.d});
  std::vector<int> y(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const int row = order[static_cast<std::size_t>(i)];
    for (int j = 0; j < source.meta.d; ++j) x.at(i, j) = source.X.at(row, j);
    y[static_cast<std::size_t>(i)] = source.y[static_cast<std::size_t>(row)];
  }
  fn_ = std::make_unique<TaskLossFn>(spec, std::move(x), std::move(y), alpha);
  const auto task = params.task_span();
  theta_.assign(task.begin(), task.end());
  subset_size_ = m;
  checksum_ = checksum64(params.flat);
}

void HessianOracle::apply(std::span<const double> v, std::span<double> out) const {
  fn_->hvp(theta_, v, out);
}

double HessianOracle::loss_value() const { return fn_->value(theta_); }

// ----- eigenvalue estimators ---------------------------------------------------

PowerIterationResult power_dominant(const HvpOperator& op, int max_iters, double tol,
                                    std::uint64_t seed) {
  if (max_iters < 1) throw std::invalid_argument("power iteration needs max_iters >= 1");
  const int n = op.dim();
  if (n < 1) throw std::invalid_argument("power iteration on zero-dimensional operator");
  std::vector<double> v(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (double& x : v) x = rng.normal();
  const double vn = norm2(v);
  for (double& x : v) x /= vn;

  std::vector<double> w(static_cast<std::size_t>(n));
  op.apply(v, w);
  double q_prev = dot(v, w);
  for (int it = 1; it <= max_iters; ++it) {
    const double wn = norm2(w);
    if (wn == 0.0) return {0.0, it, true};  // v is in the null space; H v = 0 exactly
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / wn;
    op.apply(v, w);
    const double q = dot(v, w);
    if (!std::isfinite(q)) throw std::runtime_error("power iteration produced non-finite value");
    if (std::abs(q - q_prev) < tol) return {q, it, true};
    q_prev = q;
  }
  return {q_prev, max_iters, false};
}

namespace {

class ShiftedOperator final : public HvpOperator {
 public:
  ShiftedOperator(const HvpOperator& base, double shift) : base_(base), shift_(shift) {}
  int dim() const override { return base_.dim(); }
  void apply(std::span<const double> v, std::span<double> out) const override {
    base_.apply(v, out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += shift_ * v[i];
  }

 private:
  const HvpOperator& base_;
  double shift_;
};

}  // namespace

PowerIterationResult largest_eigenvalue(const HvpOperator& op, int max_iters, double tol,
                                        std::uint64_t seed) {
  PowerIterationResult dom = power_dominant(op, max_iters, tol, seed);
  if (dom.eigenvalue >= 0.0) return dom;
  const double shift = -dom.eigenvalue;
  ShiftedOperator shifted(op, shift);
  PowerIterationResult top = power_dominant(shifted, max_iters, tol, seed);
  return {top.eigenvalue - shift, dom.iterations + top.iterations,
          dom.converged && top.converged};
}

TraceEstimate hutchinson_trace(const HvpOperator& op, int n_probes, std::uint64_t seed) {
  if (n_probes < 2) throw std::invalid_argument("hutchinson needs n_probes >= 2");
  const int n = op.dim();
  std::vector<double> z(static_cast<std::size_t>(n));
  std::vector<double> hz(static_cast<std::size_t>(n));
  std::vector<double> samples(static_cast<std::size_t>(n_probes));
  for (int p = 0; p < n_probes; ++p) {
    Rng rng(child_seed(seed, static_cast<std::uint64_t>(p)));
    for (double& x : z) x = rng.u01() < 0.5 ? -1.0 : 1.0;
    op.apply(z, hz);
    samples[static_cast<std::size_t>(p)] = dot(z, hz);
  }
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n_probes;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double sample_std = std::sqrt(ss / (n_probes - 1));
  return {mean, sample_std / std::sqrt(static_cast<double>(n_probes)), n_probes};
}

// ----- Lanczos -----------------------------------------------------------------

LanczosResult lanczos_spectrum_from(const HvpOperator& op, int m, std::span<const double> v0) {
  const int n = op.dim();
  if (m < 1 || m > n) throw std::invalid_argument("lanczos: need 1 <= m <= n_params");
  if (static_cast<int>(v0.size()) != n) throw std::invalid_argument("lanczos: bad start vector");

  std::vector<std::vector<double>> basis;
  basis.reserve(static_cast<std::size_t>(m));
  std::vector<double> v(v0.begin(), v0.end());
  const double v0n = norm2(v);
  if (v0n == 0.0) throw std::invalid_argument("lanczos: zero start vector");
  for (double& x : v) x /= v0n;
  basis.push_back(v);

  std::vector<double> alphas, betas;
  std::vector<double> w(static_cast<std::size_t>(n));
  bool breakdown = false;
  double scale = 1.0;
  for (int j = 0; j < m; ++j) {
    op.apply(basis.back(), w);
    const double alpha = dot(basis.back(), w);
    alphas.push_back(alpha);
    scale = std::max(scale, std::abs(alpha));
    if (j + 1 == m) break;
    // explicit three-term subtraction, then two passes of full
    // reorthogonalization against every stored basis vector
    for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] -= alpha * basis.back()[static_cast<std::size_t>(i)];
    if (j > 0)
      for (int i = 0; i < n; ++i)
        w[static_cast<std::size_t>(i)] -= betas.back() * basis[basis.size() - 2][static_cast<std::size_t>(i)];
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : basis) {
        const double c = dot(u, w);
        for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] -= c * u[static_cast<std::size_t>(i)];
      }
    }
    const double beta = norm2(w);
    if (beta <= 1e-12 * scale) {
      breakdown = true;
      break;
    }
    betas.push_back(beta);
    scale = std::max(scale, beta);
    std::vector<double> next(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) next[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / beta;
    basis.push_back(std::move(next));
  }

  std::vector<double> diag = alphas;
  std::vector<double> sub = betas;
  std::vector<double> first_row;
  tridiag_eigen(diag, sub, first_row);

  LanczosResult result;
  result.steps = static_cast<int>(diag.size());
  result.breakdown = breakdown;
  std::vector<int> order(diag.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return diag[static_cast<std::size_t>(a)] < diag[static_cast<std::size_t>(b)]; });
  for (int i : order)
    result.ritz.push_back({diag[static_cast<std::size_t>(i)],
                           first_row[static_cast<std::size_t>(i)] * first_row[static_cast<std::size_t>(i)]});
  return result;
}

LanczosResult lanczos_spectrum(const HvpOperator& op, int m, std::uint64_t seed) {
  std::vector<double> v0(static_cast<std::size_t>(op.dim()));
  Rng rng(child_seed(seed, 0));
  for (double& x : v0) x = rng.normal();
  return lanczos_spectrum_from(op, m, v0);
}

// Symmetric tridiagonal QL with implicit shifts (EISPACK tql2 lineage); only
// the first row of the eigenvector matrix is accumulated since the spectral
// weights need nothing else.
void tridiag_eigen(std::vector<double>& diag, std::vector<double>& sub,
                   std::vector<double>& first_row) {
  const int n = static_cast<int>(diag.size());
  if (n == 0) throw std::invalid_argument("tridiag_eigen: empty matrix");
  if (static_cast<int>(sub.size()) != n - 1)
    throw std::invalid_argument("tridiag_eigen: subdiagonal must have n-1 entries");
  std::vector<double> e = sub;
  e.push_back(0.0);
  first_row.assign(static_cast<std::size_t>(n), 0.0);
  first_row[0] = 1.0;

  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::abs(diag[static_cast<std::size_t>(m)]) + std::abs(diag[static_cast<std::size_t>(m) + 1]);
        if (std::abs(e[static_cast<std::size_t>(m)]) <= std::numeric_limits<double>::epsilon() * dd) break;
      }
      if (m != l) {
        if (iter++ == 80) throw std::runtime_error("tridiag_eigen: no convergence");
        double g = (diag[static_cast<std::size_t>(l) + 1] - diag[static_cast<std::size_t>(l)]) / (2.0 * e[static_cast<std::size_t>(l)]);
        double r = std::hypot(g, 1.0);
        g = diag[static_cast<std::size_t>(m)] - diag[static_cast<std::size_t>(l)] +
            e[static_cast<std::size_t>(l)] / (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
        double s = 1.0, c = 1.0, p = 0.0;
        int i;
        for (i = m - 1; i >= l; --i) {
          double f = s * e[static_cast<std::size_t>(i)];
          const double b = c * e[static_cast<std::size_t>(i)];
          r = std::hypot(f, g);
          e[static_cast<std::size_t>(i) + 1] = r;
          if (r == 0.0) {
            diag[static_cast<std::size_t>(i) + 1] -= p;
            e[static_cast<std::size_t>(m)] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = diag[static_cast<std::size_t>(i) + 1] - p;
          r = (diag[static_cast<std::size_t>(i)] - g) * s + 2.0 * c * b;
          p = s * r;
          diag[static_cast<std::size_t>(i) + 1] = g + p;
          g = c * r - b;
          f = first_row[static_cast<std::size_t>(i) + 1];
          first_row[static_cast<std::size_t>(i) + 1] = s * first_row[static_cast<std::size_t>(i)] + c * f;
          first_row[static_cast<std::size_t>(i)] = c * first_row[static_cast<std::size_t>(i)] - s * f;
        }
        if (r == 0.0 && i >= l) continue;
        diag[static_cast<std::size_t>(l)] -= p;
        e[static_cast<std::size_t>(l)] = g;
        e[static_cast<std::size_t>(m)] = 0.0;
      }
    } while (m != l);
  }
}

// ----- report ------------------------------------------------------------------

SpectrumReport make_spectrum_report(const HvpOperator& op, const SpectrumOptions& opts,
                                    std::uint64_t params_checksum) {
  SpectrumReport report;
  report.n_params = op.dim();
  report.seed = opts.seed;
  report.params_checksum = params_checksum;

  const auto lam = largest_eigenvalue(op, opts.power_iters, opts.power_tol,
                                      child_seed(opts.seed, 1));
  report.lambda_max = lam.eigenvalue;
  report.lambda_max_converged = lam.converged;

  const auto trace = hutchinson_trace(op, opts.n_probes, child_seed(opts.seed, 2));
  report.trace_estimate = trace.estimate;
  report.trace_stderr = trace.stderr_val;
  report.n_probes = trace.n_probes;

  const int m = std::min(opts.lanczos_m, op.dim());
  const auto lanczos = lanczos_spectrum(op, m, child_seed(opts.seed, 3));
  report.ritz = lanczos.ritz;
  report.lanczos_steps = lanczos.steps;
  report.lanczos_breakdown = lanczos.breakdown;

  double vmin = report.ritz.front().value;
  double vmax = report.ritz.back().value;
  report.sigma = 0.05 * (vmax - vmin + 1e-12);
  return report;
}

nlohmann::ordered_json to_json(const SpectrumReport& r) {
  nlohmann::ordered_json j;
  j["lambda_max"] = r.lambda_max;
  j["trace_estimate"] = r.trace_estimate;
  j["trace_stderr"] = r.trace_stderr;
  j["sigma"] = r.sigma;
  auto ritz = nlohmann::ordered_json::array();
  for (const RitzPair& p : r.ritz) ritz.push_back({p.value, p.weight});
  j["ritz"] = ritz;
  j["n_params"] = r.n_params;
  j["n_probes"] = r.n_probes;
  j["lanczos_steps"] = r.lanczos_steps;
  j["seed"] = r.seed;
  j["params_checksum"] = r.params_checksum;
  j["lambda_max_converged"] = r.lambda_max_converged;
  j["lanczos_breakdown"] = r.lanczos_breakdown;
  return j;
}

SpectrumReport spectrum_report_from_json(const nlohmann::json& j) {
  SpectrumReport r;
  r.lambda_max = j.at("lambda_max").get<double>();
  r.trace_estimate = j.at("trace_estimate").get<double>();
  r.trace_stderr = j.at("trace_stderr").get<double>();
  r.sigma = j.at("sigma").get<double>();
  for (const auto& p : j.at("ritz")) r.ritz.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  r.n_params = j.at("n_params").get<int>();
  r.n_probes = j.at("n_probes").get<int>();
  r.lanczos_steps = j.at("lanczos_steps").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.params_checksum = j.at("params_checksum").get<std::uint64_t>();
  r.lambda_max_converged = j.at("lambda_max_converged").get<bool>();
  r.lanczos_breakdown = j.at("lanczos_breakdown").get<bool>();
  return r;
}

void save_spectrum_report(const SpectrumReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << to_json(report).dump(2) << "\n";
}

SpectrumReport load_spectrum_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return spectrum_report_from_json(nlohmann::json::parse(f));
}

}  // namespace sdat
