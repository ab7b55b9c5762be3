#include "mclstm/cells.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mclstm/random.hpp"

namespace mclstm::cells {
namespace {

namespace eng = mclstm::engine;

struct VariantInfo {
  CellVariant variant;
  std::string_view name;
};

constexpr VariantInfo kVariantNames[] = {
    {CellVariant::McLstmBasic, "mclstm-basic"},
    {CellVariant::McLstmTimeDependentR, "mclstm-timedep"},
    {CellVariant::McLstmHypernet, "mclstm-hypernet"},
    {CellVariant::McLstmHydro, "mclstm-hydro"},
    {CellVariant::McFc, "mcfc"},
    {CellVariant::McFcMultiplicative, "mcfc-mul"},
    {CellVariant::LstmBaseline, "lstm"},
    {CellVariant::AblationSigmoidInputGate, "ablation-sigmoid-input"},
    {CellVariant::AblationLinearRedistribution, "ablation-linear-redistribution"},
    {CellVariant::AblationNoOutputSubtraction, "ablation-no-output-subtraction"},
};

// Scale of the time-dependent redistribution weights relative to the bias.
constexpr double kTimeDependentWeightStd = 0.01;
constexpr double kOutputGateBias = -3.0;
constexpr double kForgetGateBias = 3.0;

Tensor gaussian(const Shape& shape, double stddev, std::uint64_t seed) {
  Philox rng(seed);
  Tensor out(shape);
  for (double& v : out.data()) v = rng.normal(0.0, stddev);
  return out;
}

// Fills params.tensors with deterministic per-tensor seeds derived from the root.
class Initializer {
 public:
  Initializer(CellParams& params, std::uint64_t seed) : params_(params), seed_(seed) {}

  void orth(const std::string& name, std::size_t rows, std::size_t cols) {
    params_.tensors[name] = orthogonal(rows, cols, next_seed());
  }
  void normal(const std::string& name, const Shape& shape, double stddev) {
    params_.tensors[name] = gaussian(shape, stddev, next_seed());
  }
  void fill(const std::string& name, const Shape& shape, double value) {
    next_seed();
    params_.tensors[name] = Tensor(shape, value);
  }
  void set(const std::string& name, Tensor value) {
    next_seed();
    params_.tensors[name] = std::move(value);
  }

 private:
  std::uint64_t next_seed() { return derive_seed(seed_, ++counter_); }

  CellParams& params_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

Tensor boosted_identity(std::size_t k) {
  Tensor out = Tensor::identity(k);
  const double s = identity_boost(k);
  for (double& v : out.data()) v *= s;
  return out;
}

Var time_slice(const Tensor& seq, std::size_t t) {
  const std::size_t batch = seq.dim(0), steps = seq.dim(1), width = seq.dim(2);
  Tensor out({batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(&seq[(b * steps + t) * width], width, &out[b * width]);
  }
  return eng::constant(std::move(out));
}

void require_mass_recurrent(CellVariant v, std::string_view op) {
  if (!is_mass_recurrent(v)) {
    throw ContractError(std::string(op) + " is not defined for variant " +
                        std::string(variant_name(v)));
  }
}

void require_rows(const Var& v, std::size_t cols, std::string_view what) {
  if (v.shape().size() != 2 || v.shape()[1] != cols) {
    throw DimensionError(std::string(what) + " must be (B x " + std::to_string(cols) +
                         "), got " + shape_str(v.shape()));
  }
}

}  // namespace

std::string_view variant_name(CellVariant v) {
  for (const auto& info : kVariantNames) {
    if (info.variant == v) return info.name;
  }
  return "unknown";
}

CellVariant parse_variant(std::string_view name) {
  for (const auto& info : kVariantNames) {
    if (info.name == name) return info.variant;
  }
  throw ContractError("unknown cell variant '" + std::string(name) + "'");
}

bool is_conserving(CellVariant v) {
  switch (v) {
    case CellVariant::McLstmBasic:
    case CellVariant::McLstmTimeDependentR:
    case CellVariant::McLstmHypernet:
    case CellVariant::McLstmHydro:
    case CellVariant::McFc:
      return true;
    default:
      return false;
  }
}

bool is_ablation(CellVariant v) {
  return v == CellVariant::AblationSigmoidInputGate ||
         v == CellVariant::AblationLinearRedistribution ||
         v == CellVariant::AblationNoOutputSubtraction;
}

bool is_mass_recurrent(CellVariant v) {
  return !is_static(v) && v != CellVariant::LstmBaseline;
}

bool is_static(CellVariant v) {
  return v == CellVariant::McFc || v == CellVariant::McFcMultiplicative;
}

bool has_time_dependent_r(CellVariant v) {
  return v == CellVariant::McLstmTimeDependentR || v == CellVariant::McLstmHypernet ||
         v == CellVariant::McLstmHydro || v == CellVariant::AblationLinearRedistribution;
}

std::string_view readout_name(ReadoutMode m) {
  switch (m) {
    case ReadoutMode::SumAll: return "sum";
    case ReadoutMode::TrashCellSum: return "trash-sum";
    case ReadoutMode::Linear: return "linear";
  }
  return "unknown";
}

ReadoutMode parse_readout(std::string_view name) {
  if (name == "sum") return ReadoutMode::SumAll;
  if (name == "trash-sum") return ReadoutMode::TrashCellSum;
  if (name == "linear") return ReadoutMode::Linear;
  throw ContractError("unknown readout mode '" + std::string(name) + "'");
}

const Tensor& CellParams::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw ContractError("parameter '" + name + "' not present for variant " +
                        std::string(variant_name(variant)));
  }
  return it->second;
}

Tensor& CellParams::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t CellParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

double identity_boost(std::size_t cells) {
  if (cells <= 1) return 0.0;
  const double k = static_cast<double>(cells);
  // Off-diagonal column mass 1 - d puts softmax(s I) at Frobenius distance
  // (1 - d) K / sqrt(K - 1) from I; pin that distance to 0.05.
  const double off_mass = 0.05 * std::sqrt(k - 1.0) / k;
  const double diag = 1.0 - off_mass;
  return std::log(diag * (k - 1.0) / off_mass);
}

Tensor orthogonal(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  const bool tall = rows >= cols;
  const auto n = static_cast<Eigen::Index>(tall ? rows : cols);
  const auto m = static_cast<Eigen::Index>(tall ? cols : rows);
  Philox rng(seed);
  Eigen::MatrixXd a(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out.at(i, j) = tall ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                          : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    }
  }
  return out;
}

CellParams init_params(const Dims& dims, CellVariant variant, std::uint64_t seed,
                       const InitOptions& options) {
  if (dims.cells == 0 || dims.mass == 0 || dims.aux == 0) {
    throw ContractError("init_params: dimensions must be positive, got K=" +
                        std::to_string(dims.cells) + " M=" + std::to_string(dims.mass) +
                        " L=" + std::to_string(dims.aux));
  }
  CellParams params;
  params.variant = variant;
  params.dims = dims;
  params.readout = options.readout;
  const std::size_t K = dims.cells, M = dims.mass, L = dims.aux;
  const double boost = identity_boost(K);
  const double small_std = kTimeDependentWeightStd * std::sqrt(boost);
  Initializer init(params, seed);

  if (variant == CellVariant::LstmBaseline) {
    init.orth("W_x", M + L, 4 * K);
    Tensor recurrent({K, 4 * K});
    for (std::size_t g = 0; g < 4; ++g) {
      for (std::size_t k = 0; k < K; ++k) recurrent.at(k, g * K + k) = 1.0;
    }
    init.set("W_h", std::move(recurrent));
    Tensor bias({4 * K});
    for (std::size_t k = 0; k < K; ++k) bias[K + k] = kForgetGateBias;  // gate order i, f, g, o
    init.set("b", std::move(bias));
  } else if (is_static(variant)) {
    init.orth("B_I", K, M);
    init.fill("b_o", {K}, kOutputGateBias);
    if (variant == CellVariant::McFcMultiplicative) init.fill("alpha", {K}, 0.0);
  } else {
    init.orth("W_i", L, K * M);
    init.orth("U_i", K, K * M);
    init.fill("b_i", {K * M}, 0.0);
    init.orth("W_o", L, K);
    init.orth("U_o", K, K);
    init.fill("b_o", {K}, kOutputGateBias);
    if (variant == CellVariant::McLstmHypernet) {
      std::size_t fan_in = K + L;
      for (std::size_t layer = 0; layer < options.hypernet_hidden.size(); ++layer) {
        const std::size_t width = options.hypernet_hidden[layer];
        init.orth("hyper.W" + std::to_string(layer), fan_in, width);
        init.fill("hyper.b" + std::to_string(layer), {width}, 0.0);
        fan_in = width;
      }
      const std::string last = std::to_string(options.hypernet_hidden.size());
      init.normal("hyper.W" + last, {fan_in, K * K}, small_std);
      init.set("hyper.b" + last, boosted_identity(K).reshaped({K * K}));
    } else {
      init.set("B_r", boosted_identity(K));
      if (variant == CellVariant::McLstmTimeDependentR || variant == CellVariant::McLstmHydro ||
          variant == CellVariant::AblationLinearRedistribution) {
        init.normal("W_r", {L, K * K}, small_std);
        init.normal("U_r", {K, K * K}, small_std);
      }
      if (variant == CellVariant::McLstmHydro) {
        init.orth("V_i", M, K * M);
        init.orth("V_o", M, K);
        init.normal("V_r", {M, K * K}, small_std);
      }
    }
  }

  if (options.readout == ReadoutMode::Linear) {
    init.orth("readout.W", K, options.readout_outputs);
    init.fill("readout.b", {options.readout_outputs}, 0.0);
  }
  return params;
}

BoundParams::BoundParams(const CellParams& params, bool trainable) : params_(&params) {
  for (const auto& [name, tensor] : params.tensors) {
    vars_.emplace(name, trainable ? eng::parameter(tensor) : eng::constant(tensor));
  }
}

const Var& BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) {
    throw ContractError("parameter '" + name + "' not present for variant " +
                        std::string(variant_name(params_->variant)));
  }
  return it->second;
}

std::map<std::string, Tensor> BoundParams::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : vars_) out.emplace(name, var.grad());
  return out;
}

Var normalized_state(const Var& c_prev) { return eng::l1_normalize(c_prev, 1); }

Var input_gate(const BoundParams& p, const Var& a, const Var& c_norm, const Var& x) {
  const CellVariant v = p.variant();
  require_mass_recurrent(v, "input_gate");
  const std::size_t K = p.dims().cells, M = p.dims().mass;
  Var pre = eng::add(eng::matmul(a, p["W_i"]), eng::matmul(c_norm, p["U_i"]));
  if (v == CellVariant::McLstmHydro) pre = eng::add(pre, eng::matmul(x, p["V_i"]));
  pre = eng::add(pre, p["b_i"]);
  const std::size_t batch = a.shape()[0];
  pre = eng::reshape(pre, {batch, K, M});
  switch (v) {
    case CellVariant::McLstmHydro:
      return eng::l1_normalize(eng::sigmoid(pre), 1);
    case CellVariant::AblationSigmoidInputGate:
      return eng::sigmoid(pre);
    default:
      return eng::softmax(pre, 1);
  }
}

Var output_gate(const BoundParams& p, const Var& a, const Var& c_norm, const Var& x) {
  const CellVariant v = p.variant();
  require_mass_recurrent(v, "output_gate");
  Var pre = eng::add(eng::matmul(a, p["W_o"]), eng::matmul(c_norm, p["U_o"]));
  if (v == CellVariant::McLstmHydro) pre = eng::add(pre, eng::matmul(x, p["V_o"]));
  return eng::sigmoid(eng::add(pre, p["b_o"]));
}

Var hypernet_redistribution(const BoundParams& p, const Var& state_and_embedding) {
  const std::size_t K = p.dims().cells;
  Var z = state_and_embedding;
  std::size_t layer = 0;
  while (p.has("hyper.W" + std::to_string(layer + 1))) {
    const std::string idx = std::to_string(layer);
    z = eng::relu(eng::add(eng::matmul(z, p["hyper.W" + idx]), p["hyper.b" + idx]));
    ++layer;
  }
  const std::string idx = std::to_string(layer);
  z = eng::add(eng::matmul(z, p["hyper.W" + idx]), p["hyper.b" + idx]);
  const std::size_t batch = z.shape()[0];
  return eng::softmax(eng::reshape(z, {batch, K, K}), 1);
}

Var redistribution(const BoundParams& p, const Var& a, const Var& c_norm, const Var& x) {
  const CellVariant v = p.variant();
  require_mass_recurrent(v, "redistribution");
  const std::size_t K = p.dims().cells;
  if (v == CellVariant::McLstmHypernet) {
    const Var parts[] = {c_norm, a};
    return hypernet_redistribution(p, eng::concat(parts, 1));
  }
  if (!has_time_dependent_r(v)) return eng::softmax_columns(p["B_r"]);

  Var pre = eng::add(eng::matmul(a, p["W_r"]), eng::matmul(c_norm, p["U_r"]));
  if (v == CellVariant::McLstmHydro) pre = eng::add(pre, eng::matmul(x, p["V_r"]));
  pre = eng::add(pre, eng::reshape(p["B_r"], {K * K}));
  const std::size_t batch = a.shape()[0];
  pre = eng::reshape(pre, {batch, K, K});
  switch (v) {
    case CellVariant::McLstmHydro:
      return eng::l1_normalize(eng::relu(pre), 1);
    case CellVariant::AblationLinearRedistribution:
      return pre;
    default:
      return eng::softmax(pre, 1);
  }
}

StepOutput step(const BoundParams& p, const Var& c_prev, const Var& x, const Var& a) {
  require_mass_recurrent(p.variant(), "step");
  const Dims& d = p.dims();
  require_rows(c_prev, d.cells, "cell state");
  require_rows(x, d.mass, "mass input");
  require_rows(a, d.aux, "auxiliary input");
  if (c_prev.shape()[0] != x.shape()[0] || x.shape()[0] != a.shape()[0]) {
    throw DimensionError("step: batch sizes differ: c " + shape_str(c_prev.shape()) + ", x " +
                         shape_str(x.shape()) + ", a " + shape_str(a.shape()));
  }
  StepOutput out;
  const Var c_norm = normalized_state(c_prev);
  out.i = input_gate(p, a, c_norm, x);
  out.o = output_gate(p, a, c_norm, x);
  out.r = redistribution(p, a, c_norm, x);
  out.m_tot = eng::add(eng::batch_matvec(out.r, c_prev), eng::batch_matvec(out.i, x));
  out.h = eng::mul(out.o, out.m_tot);
  out.c = p.variant() == CellVariant::AblationNoOutputSubtraction
              ? out.m_tot
              : eng::mul(eng::one_minus(out.o), out.m_tot);
  return out;
}

LstmState lstm_step(const BoundParams& p, const Var& h_prev, const Var& c_prev,
                    const Var& x_and_a) {
  if (p.variant() != CellVariant::LstmBaseline) {
    throw ContractError("lstm_step requires the lstm variant");
  }
  const std::size_t K = p.dims().cells;
  require_rows(x_and_a, p.dims().mass + p.dims().aux, "lstm input");
  require_rows(h_prev, K, "lstm hidden state");
  require_rows(c_prev, K, "lstm cell state");
  Var z = eng::add(eng::add(eng::matmul(x_and_a, p["W_x"]), eng::matmul(h_prev, p["W_h"])),
                   p["b"]);
  const Var in = eng::sigmoid(eng::slice(z, 1, 0, K));
  const Var forget = eng::sigmoid(eng::slice(z, 1, K, K));
  const Var cand = eng::tanh(eng::slice(z, 1, 2 * K, K));
  const Var out = eng::sigmoid(eng::slice(z, 1, 3 * K, K));
  LstmState s;
  s.c = eng::add(eng::mul(forget, c_prev), eng::mul(in, cand));
  s.h = eng::mul(out, eng::tanh(s.c));
  return s;
}

SequenceOutput forward_sequence(const BoundParams& p, const Var& c0, const Tensor& xs,
                                const Tensor& as, bool record_trace) {
  const CellVariant v = p.variant();
  if (is_static(v)) {
    throw ContractError("forward_sequence: variant " + std::string(variant_name(v)) +
                        " is not recurrent");
  }
  if (xs.rank() != 3 || as.rank() != 3 || xs.dim(0) != as.dim(0) || xs.dim(1) != as.dim(1)) {
    throw DimensionError("forward_sequence: xs " + shape_str(xs.shape()) + " and as " +
                         shape_str(as.shape()) + " must be (B x T x M) and (B x T x L)");
  }
  const std::size_t steps = xs.dim(1);
  if (steps == 0) throw ContractError("forward_sequence: sequence length must be >= 1");
  if (xs.dim(2) != p.dims().mass || as.dim(2) != p.dims().aux) {
    throw DimensionError("forward_sequence: input widths " + shape_str(xs.shape()) + ", " +
                         shape_str(as.shape()) + " do not match dims M=" +
                         std::to_string(p.dims().mass) + " L=" + std::to_string(p.dims().aux));
  }

  SequenceOutput out;
  out.hs.reserve(steps);
  out.cs.reserve(steps);
  if (record_trace) {
    out.trace.emplace();
    out.trace->variant = v;
    out.trace->c0 = c0.value();
    out.trace->steps.reserve(steps);
  }

  if (v == CellVariant::LstmBaseline) {
    const std::size_t batch = xs.dim(0);
    Var h = eng::constant(Tensor({batch, p.dims().cells}));
    Var c = c0;
    for (std::size_t t = 0; t < steps; ++t) {
      const Var x = time_slice(xs, t);
      const Var parts[] = {x, time_slice(as, t)};
      LstmState s = lstm_step(p, h, c, eng::concat(parts, 1));
      h = s.h;
      c = s.c;
      out.hs.push_back(h);
      out.cs.push_back(c);
      if (record_trace) {
        TraceStep ts;
        ts.x = x.value();
        ts.c = c.value();
        ts.h = h.value();
        out.trace->steps.push_back(std::move(ts));
      }
    }
    return out;
  }

  Var c = c0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Var x = time_slice(xs, t);
    StepOutput s = step(p, c, x, time_slice(as, t));
    c = s.c;
    out.hs.push_back(s.h);
    out.cs.push_back(s.c);
    if (record_trace) {
      out.trace->steps.push_back(TraceStep{x.value(), s.i.value(), s.o.value(), s.r.value(),
                                           s.m_tot.value(), s.c.value(), s.h.value()});
    }
  }
  return out;
}

Var readout(const BoundParams& p, const Var& h) { return readout(p, h, p.params().readout); }

Var readout(const BoundParams& p, const Var& h, ReadoutMode mode) {
  const std::size_t K = h.shape().at(1);
  const std::size_t batch = h.shape()[0];
  switch (mode) {
    case ReadoutMode::SumAll:
      return eng::reshape(eng::sum_axis(h, 1), {batch, 1});
    case ReadoutMode::TrashCellSum:
      if (K < 2) throw ContractError("trash-cell readout needs at least two cells");
      return eng::reshape(eng::sum_axis(eng::slice(h, 1, 1, K - 1), 1), {batch, 1});
    case ReadoutMode::Linear:
      if (!p.has("readout.W") || !p.has("readout.b")) {
        throw ContractError("linear readout requested but readout parameters are missing");
      }
      return eng::add(eng::matmul(h, p["readout.W"]), p["readout.b"]);
  }
  throw ContractError("unknown readout mode");
}

Var mcfc_forward(const BoundParams& p, const Var& x) {
  if (!is_static(p.variant())) throw ContractError("mcfc_forward requires an mcfc variant");
  require_rows(x, p.dims().mass, "mcfc input");
  const Var gate_in = eng::softmax_columns(p["B_I"]);
  return eng::mul(eng::batch_matvec(gate_in, x), eng::sigmoid(p["b_o"]));
}

Var mcfc_mul_forward(const BoundParams& p, const Var& x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) {
      throw DomainError("mcfc_mul_forward: inputs must be strictly positive, got " +
                        std::to_string(v));
    }
  }
  return eng::exp(eng::add(mcfc_forward(p, eng::log(x)), p["alpha"]));
}

SingleStep step_single(const CellParams& params, const Tensor& c_prev, const Tensor& x,
                       const Tensor& a) {
  const Dims& d = params.dims;
  if (c_prev.size() != d.cells || x.size() != d.mass || a.size() != d.aux) {
    throw DimensionError("step: expected c (" + std::to_string(d.cells) + "), x (" +
                         std::to_string(d.mass) + "), a (" + std::to_string(d.aux) + "), got " +
                         shape_str(c_prev.shape()) + ", " + shape_str(x.shape()) + ", " +
                         shape_str(a.shape()));
  }
  for (double v : c_prev.data()) {
    if (v < 0.0) throw ContractError("step: cell state entries must be non-negative");
  }
  eng::NoGradGuard guard;
  BoundParams bound(params, false);
  StepOutput s = step(bound, eng::constant(c_prev.reshaped({1, d.cells})),
                      eng::constant(x.reshaped({1, d.mass})),
                      eng::constant(a.reshaped({1, d.aux})));
  SingleStep out;
  out.h = s.h.value().reshaped({d.cells});
  out.c = s.c.value().reshaped({d.cells});
  out.i = s.i.value().reshaped({d.cells, d.mass});
  out.o = s.o.value().reshaped({d.cells});
  out.r = s.r.value().reshaped({d.cells, d.cells});
  out.m_tot = s.m_tot.value().reshaped({d.cells});
  return out;
}

SingleSequence run_sequence(const CellParams& params, const Tensor& c0, const Tensor& xs,
                            const Tensor& as) {
  const Dims& d = params.dims;
  if (xs.rank() != 2 || as.rank() != 2 || xs.dim(0) != as.dim(0)) {
    throw DimensionError("run_sequence: xs " + shape_str(xs.shape()) + " and as " +
                         shape_str(as.shape()) + " must be (T x M) and (T x L)");
  }
  const std::size_t steps = xs.dim(0);
  eng::NoGradGuard guard;
  BoundParams bound(params, false);
  SequenceOutput seq =
      forward_sequence(bound, eng::constant(c0.reshaped({1, d.cells})),
                       xs.reshaped({1, steps, xs.dim(1)}), as.reshaped({1, steps, as.dim(1)}),
                       true);
  SingleSequence out;
  out.hs = Tensor({steps, d.cells});
  out.cs = Tensor({steps, d.cells});
  for (std::size_t t = 0; t < steps; ++t) {
    std::copy_n(seq.hs[t].value().data().data(), d.cells, &out.hs[t * d.cells]);
    std::copy_n(seq.cs[t].value().data().data(), d.cells, &out.cs[t * d.cells]);
  }
  out.trace = std::move(*seq.trace);
  return out;
}

void set_linear_readout(CellParams& params, Tensor weights, Tensor bias) {
  const std::size_t K = params.dims.cells;
  if (weights.rank() != 2 || weights.dim(0) != K || bias.rank() != 1 ||
      bias.dim(0) != weights.dim(1)) {
    throw DimensionError("readout weights must be (K x out) with bias (out), got " +
                         shape_str(weights.shape()) + " and " + shape_str(bias.shape()));
  }
  params.readout = ReadoutMode::Linear;
  params.tensors["readout.W"] = std::move(weights);
  params.tensors["readout.b"] = std::move(bias);
}

}  // namespace mclstm::cells
