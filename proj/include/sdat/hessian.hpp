#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdat/data.hpp"
#include "sdat/model.hpp"

namespace sdat {

// Matrix-free symmetric operator v -> H v.
struct HvpOperator {
  virtual ~HvpOperator() = default;
  virtual int dim() const = 0;
  virtual void apply(std::span<const double> v, std::span<double> out) const = 0;
};

// Label-smoothed cross entropy of the classifier stack on a fixed batch, as a
// twice-differentiable function of the flat task parameters (feature extractor
// + classifier). Gradients come from the reverse tape; Hessian-vector products
// from the same tape run with dual scalars.
class TaskLossFn {
 public:
  TaskLossFn(ModelSpec spec, Tensor x, std::vector<int> y, double alpha = 0.0);

  int dim() const { return dim_; }
  double value(std::span<const double> theta) const;
  double value_grad(std::span<const double> theta, std::span<double> grad) const;
  void hvp(std::span<const double> theta, std::span<const double> v,
           std::span<double> out) const;

 private:
  ModelSpec spec_;
  Tensor x_;
  std::vector<int> y_;
  double alpha_;
  int dim_ = 0;
};

// Free-function form of the Hessian-vector product.
std::vector<double> hvp(const TaskLossFn& loss, std::span<const double> theta,
                        std::span<const double> v);

// Task-loss Hessian frozen at a parameter snapshot, evaluated on a data subset
// chosen once from (fraction, seed). Repeated applies with the same v are
// identical.
class HessianOracle final : public HvpOperator {
 public:
  HessianOracle(const ModelSpec& spec, const ModelParams& params, const LabeledDataset& source,
                double fraction, std::uint64_t seed, double alpha = 0.0);

  int dim() const override { return fn_->dim(); }
  void apply(std::span<const double> v, std::span<double> out) const override;

  double loss_value() const;
  int subset_size() const { return subset_size_; }
  std::uint64_t params_checksum() const { return checksum_; }

 private:
  std::unique_ptr<TaskLossFn> fn_;
  std::vector<double> theta_;
  int subset_size_ = 0;
  std::uint64_t checksum_ = 0;
};

struct PowerIterationResult {
  double eigenvalue = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Power iteration with a Rayleigh-quotient convergence test; returns the
// eigenvalue dominant in magnitude, signed.
PowerIterationResult power_dominant(const HvpOperator& op, int max_iters, double tol,
                                    std::uint64_t seed);

// Largest (signed) eigenvalue: power iteration, re-run on H + |mu| I when the
// dominant-magnitude eigenvalue mu comes out negative.
PowerIterationResult largest_eigenvalue(const HvpOperator& op, int max_iters, double tol,
                                        std::uint64_t seed);

struct TraceEstimate {
  double estimate = 0.0;
  double stderr_val = 0.0;
  int n_probes = 0;
};

// Hutchinson estimator with Rademacher probes z, E[z^T H z] = Tr(H); each
// probe draws from its own child stream and the mean is summed in probe order.
TraceEstimate hutchinson_trace(const HvpOperator& op, int n_probes, std::uint64_t seed);

struct RitzPair {
  double value = 0.0;
  double weight = 0.0;
};

struct LanczosResult {
  std::vector<RitzPair> ritz;  // sorted by value ascending; weights sum to 1
  int steps = 0;
  bool breakdown = false;
};

// m-step Lanczos with full reorthogonalization; Ritz values are the
// eigenvalues of the tridiagonal matrix, weights the squared first components
// of its eigenvectors. Krylov breakdown returns the pairs found so far.
LanczosResult lanczos_spectrum(const HvpOperator& op, int m, std::uint64_t seed);
LanczosResult lanczos_spectrum_from(const HvpOperator& op, int m, std::span<const double> v0);

// Symmetric tridiagonal QL with implicit shifts. On return diag holds the
// eigenvalues (unsorted) and first_row the first component of each
// eigenvector. sub has n-1 entries.
void tridiag_eigen(std::vector<double>& diag, std::vector<double>& sub,
                   std::vector<double>& first_row);

struct SpectrumOptions {
  int n_probes = 256;
  int lanczos_m = 64;
  int power_iters = 400;
  double power_tol = 1e-7;
  std::uint64_t seed = 1;
};

struct SpectrumReport {
  double lambda_max = 0.0;
  double trace_estimate = 0.0;
  double trace_stderr = 0.0;
  double sigma = 0.0;  // Gaussian bandwidth for rendering the density
  std::vector<RitzPair> ritz;
  int n_params = 0;
  int n_probes = 0;
  int lanczos_steps = 0;
  std::uint64_t seed = 0;
  std::uint64_t params_checksum = 0;
  bool lambda_max_converged = false;
  bool lanczos_breakdown = false;
};

SpectrumReport make_spectrum_report(const HvpOperator& op, const SpectrumOptions& opts,
                                    std::uint64_t params_checksum);

nlohmann::ordered_json to_json(const SpectrumReport& report);
SpectrumReport spectrum_report_from_json(const nlohmann::json& j);
void save_spectrum_report(const SpectrumReport& report, const std::string& path);
SpectrumReport load_spectrum_report(const std::string& path);

}  // namespace sdat
