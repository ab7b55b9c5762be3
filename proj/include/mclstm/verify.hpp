#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mclstm/cells.hpp"

namespace mclstm::verify {

// ---------------------------------------------------------------------------
// Trace checks

struct ConservationReport {
  /// max over samples and steps of |m_c(t) - m_c(0) - sum x + sum m_h|
  double max_residual = 0.0;
  /// max over samples of residual / (1 + total input mass of that sample)
  double max_relative = 0.0;
  /// Per-step residual, maximised over the batch.
  std::vector<double> residuals;
  double tol = 0.0;
  bool pass = true;
  std::size_t worst_sample = 0;
  std::size_t worst_step = 0;

  nlohmann::json to_json() const;
};

/// Residuals are computed from the trace alone. Pass iff every sample's
/// residual stays within tol * (1 + that sample's total input mass).
ConservationReport check_conservation(const cells::CellTrace& trace, double tol);

struct BoundednessReport {
  bool pass = true;
  /// Smallest slack min(c_k, bound - c_k) seen; negative means a violation.
  double worst_margin = 0.0;
  std::size_t worst_sample = 0;
  std::size_t worst_step = 0;
  std::size_t worst_cell = 0;

  nlohmann::json to_json() const;
};

/// 0 <= c_k(t) <= m_c(0) + sum_{s<=t} x(s) + tol for every cell, step and sample.
/// Requires non-negative mass inputs.
BoundednessReport check_boundedness(const cells::CellTrace& trace, double tol);

struct StochasticityReport {
  bool pass = true;
  /// Largest |column sum - 1| over input gates and redistribution matrices.
  double max_column_error = 0.0;
  /// Most negative entry seen (0 if none).
  double min_entry = 0.0;

  nlohmann::json to_json() const;
};

StochasticityReport check_stochasticity(const cells::CellTrace& trace, double tol = 1e-12);

/// Copy of the trace with every stored value rounded through float32.
cells::CellTrace quantize_trace_f32(const cells::CellTrace& trace);

// ---------------------------------------------------------------------------
// Markov chains and spectra

/// Column j reaches row i when R(i, j) > 0; irreducible iff the graph is
/// strongly connected.
bool is_irreducible(const Tensor& r);

struct StationaryResult {
  Tensor distribution;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Power iteration c <- R c with L1 renormalisation, started from `start`.
StationaryResult stationary_distribution(const Tensor& r, const Tensor& start,
                                         double tol = 1e-12, std::size_t cap = 1000000);

struct MarkovReport {
  std::vector<double> distances;  // ||c(t) - c*||_1 for t = 0..steps
  Tensor stationary;
  bool irreducible = true;
  bool stationary_converged = true;
  std::vector<std::string> warnings;

  /// First t with distance <= tol, or distances.size() if never reached.
  std::size_t steps_to(double tol) const;
  nlohmann::json to_json() const;
};

MarkovReport markov_convergence(const Tensor& r, const Tensor& c0, std::size_t steps);

/// Raised when an iterative method hits its cap without converging.
class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(const std::string& what, std::size_t iterations);
  std::size_t iterations() const { return iterations_; }

 private:
  std::size_t iterations_;
};

struct SpectralResult {
  double sigma = 0.0;
  std::size_t iterations = 0;
};

/// Largest singular value by power iteration on R R^T from the ones vector.
SpectralResult spectral_norm(const Tensor& r, double tol = 1e-10, std::size_t cap = 100000);

/// K x K matrix of U(0, 1) entries with every column scaled to sum to one.
Tensor random_column_stochastic(std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Model-level probes

struct GradientFlowReport {
  /// ||R(t) ... R(1)||_2 after each step t = 1..T.
  std::vector<double> norms;
  double final_norm = 0.0;
};

/// Forces the closed-gate regime (output bias -30, zero mass input), records
/// the redistribution matrices of a T-step rollout and measures the spectral
/// norm of their product.
GradientFlowReport gradient_flow_probe(const cells::CellParams& params, std::size_t steps,
                                       std::uint64_t seed);

struct GradcheckSample {
  Tensor xs;      // (B x T x M), or (B x M) for static variants
  Tensor as;      // (B x T x L); ignored for static variants
  Tensor c0;      // (B x K)
  Tensor target;  // (B x out)
};

/// Seeded random sample suitable for gradcheck_model.
GradcheckSample random_gradcheck_sample(const cells::CellParams& params, std::size_t batch,
                                        std::size_t steps, std::uint64_t seed);

struct GradcheckReport {
  /// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)
  double max_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  nlohmann::json to_json() const;
};

/// Task loss: MSE of the readout at the final step (recurrent variants) or of
/// the layer output (static variants).
double model_loss(const cells::CellParams& params, const GradcheckSample& sample);

/// Compares tape gradients of model_loss against central differences for
/// every parameter entry. Entries whose difference exceeds 1e-5 are retried
/// at eps / 10 and eps * 10, which separates a ReLU kink inside the stencil
/// from a wrong derivative, then with a fourth-order stencil at eps * 100 up to
/// eps * 10000 for losses large enough that rounding dominates. The smallest
/// error is kept.
/// max_entries > 0 checks a seeded sample of that many entries per tensor.
GradcheckReport gradcheck_model(const cells::CellParams& params, const GradcheckSample& sample,
                                double eps = 1e-6, std::size_t max_entries = 0,
                                std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Runtime

struct BenchDims {
  std::size_t cells = 64;
  std::size_t mass = 1;
  std::size_t aux = 30;
  std::size_t steps = 365;
  std::size_t batch = 256;
};

struct BenchRow {
  cells::CellVariant variant;
  BenchDims dims;
  double median_ms = 0.0;
  double q25_ms = 0.0;
  double q75_ms = 0.0;
  std::size_t repeats = 0;
};

/// Median of `repeats` timed forward passes (after one warm-up pass) per variant.
std::vector<BenchRow> runtime_bench(const std::vector<cells::CellVariant>& variants,
                                    const BenchDims& dims, std::size_t repeats = 5,
                                    std::uint64_t seed = 0);

/// Least-squares slope of log(time) against log(K).
double loglog_slope(const std::vector<double>& ks, const std::vector<double>& times);

}  // namespace mclstm::verify
