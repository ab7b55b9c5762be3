#pragma once

// Mass-conserving recurrent cells and their baselines.
//
// Batched layout throughout: cell state and efflux are (B x K), mass inputs
// (B x M), auxiliary inputs (B x L). The input gate is a (B x K x M) tensor
// whose columns (axis 1) are distributions over cells; the redistribution
// matrix is either one shared (K x K) matrix or a per-sample (B x K x K)
// tensor, column-stochastic along axis 1 for conserving variants.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mclstm/engine.hpp"
#include "mclstm/tensor.hpp"

namespace mclstm::cells {

using engine::Var;

enum class CellVariant {
  McLstmBasic,
  McLstmTimeDependentR,
  McLstmHypernet,
  McLstmHydro,
  McFc,
  McFcMultiplicative,
  LstmBaseline,
  AblationSigmoidInputGate,
  AblationLinearRedistribution,
  AblationNoOutputSubtraction,
};

inline constexpr CellVariant kAllVariants[] = {
    CellVariant::McLstmBasic,
    CellVariant::McLstmTimeDependentR,
    CellVariant::McLstmHypernet,
    CellVariant::McLstmHydro,
    CellVariant::McFc,
    CellVariant::McFcMultiplicative,
    CellVariant::LstmBaseline,
    CellVariant::AblationSigmoidInputGate,
    CellVariant::AblationLinearRedistribution,
    CellVariant::AblationNoOutputSubtraction,
};

inline constexpr CellVariant kConservingRecurrentVariants[] = {
    CellVariant::McLstmBasic,
    CellVariant::McLstmTimeDependentR,
    CellVariant::McLstmHypernet,
    CellVariant::McLstmHydro,
};

inline constexpr CellVariant kAblationVariants[] = {
    CellVariant::AblationSigmoidInputGate,
    CellVariant::AblationLinearRedistribution,
    CellVariant::AblationNoOutputSubtraction,
};

std::string_view variant_name(CellVariant v);
CellVariant parse_variant(std::string_view name);

/// True for variants that satisfy the conservation identity by construction.
bool is_conserving(CellVariant v);
bool is_ablation(CellVariant v);
/// Variants driven by step(): all MC-LSTM flavours and the ablations.
bool is_mass_recurrent(CellVariant v);
bool is_static(CellVariant v);
/// True when R is recomputed per sample and timestep.
bool has_time_dependent_r(CellVariant v);

enum class ReadoutMode { SumAll, TrashCellSum, Linear };

std::string_view readout_name(ReadoutMode m);
ReadoutMode parse_readout(std::string_view name);

struct Dims {
  std::size_t cells = 1;      // K
  std::size_t mass = 1;       // M
  std::size_t aux = 1;        // L
};

struct InitOptions {
  ReadoutMode readout = ReadoutMode::SumAll;
  std::size_t readout_outputs = 1;
  std::vector<std::size_t> hypernet_hidden{50, 100};
};

/// All learnable tensors of one model, keyed by name.
struct CellParams {
  CellVariant variant = CellVariant::McLstmBasic;
  Dims dims;
  ReadoutMode readout = ReadoutMode::SumAll;
  std::map<std::string, Tensor> tensors;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  std::size_t parameter_count() const;
};

/// Diagonal boost s for B_r = s * I. Chosen so that softmax(s * I) sits at
/// Frobenius distance 0.05 from the identity for every K >= 2; zero for K = 1.
double identity_boost(std::size_t cells);

CellParams init_params(const Dims& dims, CellVariant variant, std::uint64_t seed,
                       const InitOptions& options = {});

/// Semi-orthogonal (rows x cols) matrix from the QR factorization of a seeded
/// Gaussian matrix, with the sign of R's diagonal folded into Q.
Tensor orthogonal(std::size_t rows, std::size_t cols, std::uint64_t seed);

/// Parameters bound as graph leaves for one forward pass.
class BoundParams {
 public:
  BoundParams(const CellParams& params, bool trainable);

  const Var& operator[](const std::string& name) const;
  bool has(const std::string& name) const { return vars_.count(name) != 0; }
  const CellParams& params() const { return *params_; }
  CellVariant variant() const { return params_->variant; }
  const Dims& dims() const { return params_->dims; }

  /// Gradients accumulated by engine::backward, keyed like the parameters.
  std::map<std::string, Tensor> gradients() const;

 private:
  const CellParams* params_;
  std::map<std::string, Var> vars_;
};

/// c / ||c||_1 per row; the uniform vector for a zero row.
Var normalized_state(const Var& c_prev);

Var input_gate(const BoundParams& p, const Var& a, const Var& c_norm, const Var& x);
Var output_gate(const BoundParams& p, const Var& a, const Var& c_norm, const Var& x);
Var redistribution(const BoundParams& p, const Var& a, const Var& c_norm, const Var& x);
Var hypernet_redistribution(const BoundParams& p, const Var& state_and_embedding);

struct StepOutput {
  Var h;
  Var c;
  Var i;
  Var o;
  Var r;
  Var m_tot;
};

StepOutput step(const BoundParams& p, const Var& c_prev, const Var& x, const Var& a);

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_step(const BoundParams& p, const Var& h_prev, const Var& c_prev,
                    const Var& x_and_a);

/// One recorded timestep, values copied out of the graph.
struct TraceStep {
  Tensor x;      // (B x M)
  Tensor i;      // (B x K x M)
  Tensor o;      // (B x K)
  Tensor r;      // (K x K) or (B x K x K)
  Tensor m_tot;  // (B x K)
  Tensor c;      // (B x K)
  Tensor h;      // (B x K)
};

struct CellTrace {
  CellVariant variant = CellVariant::McLstmBasic;
  Tensor c0;  // (B x K)
  std::vector<TraceStep> steps;
};

struct SequenceOutput {
  std::vector<Var> hs;  // T entries of (B x K)
  std::vector<Var> cs;
  std::optional<CellTrace> trace;
};

/// Unrolls the cell over xs (B x T x M) and as (B x T x L) from state c0 (B x K).
/// For LstmBaseline c0 seeds the memory cells and h starts at zero.
SequenceOutput forward_sequence(const BoundParams& p, const Var& c0, const Tensor& xs,
                                const Tensor& as, bool record_trace = false);

/// Maps efflux (B x K) to predictions (B x out).
Var readout(const BoundParams& p, const Var& h);
Var readout(const BoundParams& p, const Var& h, ReadoutMode mode);

/// y = diag(sigmoid(b_o)) . softmax_columns(B_I) . x for x of shape (B x M).
Var mcfc_forward(const BoundParams& p, const Var& x);
/// exp(mcfc(log x) + alpha); x must be strictly positive.
Var mcfc_mul_forward(const BoundParams& p, const Var& x);

// Tensor-level conveniences for a single sample (no gradients).

struct SingleStep {
  Tensor h;  // (K)
  Tensor c;  // (K)
  Tensor i;  // (K x M)
  Tensor o;  // (K)
  Tensor r;  // (K x K)
  Tensor m_tot;
};

/// Validates c_prev >= 0 before evaluating the gates.
SingleStep step_single(const CellParams& params, const Tensor& c_prev, const Tensor& x,
                       const Tensor& a);

struct SingleSequence {
  Tensor hs;  // (T x K)
  Tensor cs;  // (T x K)
  CellTrace trace;
};

SingleSequence run_sequence(const CellParams& params, const Tensor& c0, const Tensor& xs,
                            const Tensor& as);

/// Sets the readout tensors of a Linear-readout model.
void set_linear_readout(CellParams& params, Tensor weights, Tensor bias);

}  // namespace mclstm::cells
