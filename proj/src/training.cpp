#include "mclstm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "mclstm/random.hpp"
#include "mclstm/verify.hpp"

namespace mclstm::training {
namespace {

namespace eng = mclstm::engine;
using cells::BoundParams;
using cells::CellParams;
using cells::CellVariant;
using tasks::Dataset;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string describe_nonfinite(const std::string& parameter, std::size_t index, double value) {
  return "non-finite gradient for parameter '" + parameter + "' at flat index " +
         std::to_string(index) + " (value " + std::to_string(value) + ")";
}

// Rows `idx` of an (N x ...) tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  shape[0] = idx.size();
  Tensor out(std::move(shape));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(&t[idx[r] * row], row, &out[r * row]);
  }
  return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(t, idx);
}

struct Prediction {
  Var value;
  std::optional<cells::CellTrace> trace;
};

Prediction forward_batch(const BoundParams& p, const Tensor& xs, const Tensor& as,
                         bool record_trace) {
  const std::size_t batch = xs.dim(0);
  if (cells::is_static(p.variant())) {
    // Feed-forward layers see a single step: (B x 1 x M) -> (B x M).
    if (xs.dim(1) != 1) {
      throw DimensionError(std::string(cells::variant_name(p.variant())) +
                           " takes single-step inputs, got " + shape_str(xs.shape()));
    }
    const Var x = eng::constant(xs.reshaped({batch, xs.dim(2)}));
    const Var y = p.variant() == cells::CellVariant::McFcMultiplicative ? cells::mcfc_mul_forward(p, x)
                                                                        : cells::mcfc_forward(p, x);
    return {cells::readout(p, y), std::nullopt};
  }
  const Var c0 = eng::constant(Tensor({batch, p.dims().cells}));
  cells::SequenceOutput seq = cells::forward_sequence(p, c0, xs, as, record_trace);
  return {cells::readout(p, seq.hs.back()), std::move(seq.trace)};
}

Var l2_penalty(const BoundParams& p, double l2) {
  const Var& w = p["readout.W"];
  return eng::scale(eng::sum(eng::mul(w, w)), l2);
}

void require_sequence_data(const Dataset& d, const CellParams& params, const char* what) {
  if (d.mass.rank() != 3 || d.aux.rank() != 3 || d.targets.rank() != 2) {
    throw DimensionError(std::string(what) + ": dataset must hold (N x T x M) inputs and (N x out) targets");
  }
  if (d.mass_width() != params.dims.mass || d.aux_width() != params.dims.aux) {
    throw DimensionError(std::string(what) + ": dataset widths M=" + std::to_string(d.mass_width()) +
                         " L=" + std::to_string(d.aux_width()) + " do not match model dims M=" +
                         std::to_string(params.dims.mass) + " L=" + std::to_string(params.dims.aux));
  }
}

}  // namespace

NonFiniteGradient::NonFiniteGradient(std::string parameter, std::size_t index, double value)
    : std::runtime_error(describe_nonfinite(parameter, index, value)),
      parameter_(std::move(parameter)) {}

// ---------------------------------------------------------------------------

OptimizerState make_adam(const std::map<std::string, Tensor>& params, const AdamConfig& config) {
  OptimizerState opt;
  opt.config = config;
  for (const auto& [name, t] : params) {
    opt.m.emplace(name, Tensor(t.shape()));
    opt.v.emplace(name, Tensor(t.shape()));
  }
  return opt;
}

void adam_step(OptimizerState& opt, std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads) {
  for (const auto& [name, g] : grads) {
    if (!params.count(name)) throw ContractError("adam_step: gradient for unknown parameter '" + name + "'");
    if (g.shape() != params.at(name).shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_str(g.shape()) +
                           " does not match parameter '" + name + "' " +
                           shape_str(params.at(name).shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) throw NonFiniteGradient(name, i, g[i]);
    }
  }
  const AdamConfig& c = opt.config;
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& w = params.at(name);
    auto m_it = opt.m.try_emplace(name, Tensor(w.shape())).first;
    auto v_it = opt.v.try_emplace(name, Tensor(w.shape())).first;
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      w[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
    }
  }
}

double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (double& v : g.data()) v *= f;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------

double mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
  }
  if (pred.size() == 0) throw ContractError("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Var mse_loss(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
  }
  const Var d = eng::sub(pred, target);
  return eng::mean(eng::mul(d, d));
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ContractError("pearson: series must have equal length >= 2");
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

namespace {

void check_pendulum_shapes(const Shape& pred, const Tensor& target) {
  if (pred.size() != 2 || pred[1] != 2 || target.shape() != pred) {
    throw DimensionError("pendulum_loss: expected matching (T x 2) series, got " +
                         shape_str(pred) + " and " + shape_str(target.shape()));
  }
  if (pred[0] < 2) throw ContractError("pendulum_loss: series length must be >= 2");
}

std::vector<double> column(const Tensor& t, std::size_t j) {
  std::vector<double> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.at(i, j);
  return out;
}

}  // namespace

Var pendulum_loss(const Var& pred, const Tensor& target, PendulumLossInfo* info) {
  check_pendulum_shapes(pred.shape(), target);
  const std::size_t steps = target.dim(0);
  PendulumLossInfo local;
  local.mse = mse_loss(pred.value(), target);
  Var loss = mse_loss(pred, eng::constant(target));
  Var r_sum = eng::constant(Tensor::scalar(0.0));
  for (std::size_t j = 0; j < 2; ++j) {
    const std::vector<double> tcol = column(target, j);
    const double tmean = std::accumulate(tcol.begin(), tcol.end(), 0.0) / static_cast<double>(steps);
    Tensor centred({steps});
    double tss = 0.0;
    for (std::size_t i = 0; i < steps; ++i) {
      centred[i] = tcol[i] - tmean;
      tss += centred[i] * centred[i];
    }
    if (tss == 0.0) {
      local.zero_variance[j] = true;
      local.r[j] = 0.0;
      continue;
    }
    const Var pj = eng::reshape(eng::slice(pred, 1, j, 1), {steps});
    const Var pc = eng::sub(pj, eng::scale(eng::sum(pj), 1.0 / static_cast<double>(steps)));
    const Var num = eng::sum(eng::mul(pc, eng::constant(centred)));
    // The tiny floor keeps the derivative finite for a constant prediction.
    const Var den = eng::scale(eng::sqrt(eng::affine(eng::sum(eng::mul(pc, pc)), 1.0, 1e-24)),
                               std::sqrt(tss));
    const Var r = eng::div(num, den);
    local.r[j] = r.value().item();
    r_sum = eng::add(r_sum, r);
  }
  if (info) *info = local;
  return eng::sub(loss, eng::scale(r_sum, 0.5));
}

double pendulum_loss(const Tensor& pred, const Tensor& target, PendulumLossInfo* info) {
  check_pendulum_shapes(pred.shape(), target);
  PendulumLossInfo local;
  local.mse = mse_loss(pred, target);
  double r_sum = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    const std::vector<double> tcol = column(target, j);
    if (!pearson(tcol, tcol)) {
      local.zero_variance[j] = true;
      continue;
    }
    const auto r = pearson(column(pred, j), tcol);
    local.r[j] = r.value_or(0.0);
    r_sum += local.r[j];
  }
  if (info) *info = local;
  return local.mse - 0.5 * r_sum;
}

CurriculumState curriculum_advance(const CurriculumState& state, double combined_loss) {
  CurriculumState next = state;
  if (next.window >= next.cap) {
    next.window = next.cap;
    return next;
  }
  if (combined_loss < next.threshold) next.window = std::min(next.cap, next.window + next.increment);
  return next;
}

// ---------------------------------------------------------------------------

Tensor predict(const CellParams& params, const Dataset& data, std::size_t batch) {
  require_sequence_data(data, params, "predict");
  eng::NoGradGuard guard;
  const BoundParams p(params, false);
  const std::size_t n = data.size();
  batch = std::max<std::size_t>(batch, 1);
  Tensor out;
  std::vector<double> values;
  std::size_t width = 0;
  for (std::size_t begin = 0; begin < n; begin += batch) {
    const std::size_t end = std::min(n, begin + batch);
    const Prediction pr = forward_batch(p, slice_rows(data.mass, begin, end),
                                        slice_rows(data.aux, begin, end), false);
    width = pr.value.shape()[1];
    values.insert(values.end(), pr.value.value().data().begin(), pr.value.value().data().end());
  }
  return Tensor({n, width}, std::move(values));
}

double evaluate_mse(const CellParams& params, const Dataset& data, std::size_t batch) {
  return mse_loss(predict(params, data, batch), data.targets);
}

TrainResult train_sequence_to_one(const TrainConfig& config, const Dataset& train,
                                  const Dataset& valid, CellParams init) {
  require_sequence_data(train, init, "train_sequence_to_one");
  require_sequence_data(valid, init, "train_sequence_to_one");
  if (config.batch_size == 0) throw ContractError("batch_size must be positive");
  if (train.size() == 0) throw ContractError("train_sequence_to_one: empty training split");

  TrainResult result;
  result.params = std::move(init);
  CellParams& params = result.params;
  const bool use_l2 = config.l2 > 0.0 && params.has("readout.W");
  const bool check = cells::is_conserving(params.variant) && cells::is_mass_recurrent(params.variant);
  OptimizerState opt = make_adam(params.tensors, AdamConfig{config.lr});
  Philox shuffle(derive_seed(config.seed, kShuffleSeedTag));
  Philox sampler(derive_seed(config.seed, kShuffleSeedTag), 1);

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.below(i))]);
    }
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    double epoch_residual = kNaN;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const bool verify_batch = check && sampler.uniform() < config.verify_fraction;

      const BoundParams p(params, true);
      Prediction pr = forward_batch(p, gather_rows(train.mass, idx), gather_rows(train.aux, idx),
                                    verify_batch);
      Var loss = mse_loss(pr.value, eng::constant(gather_rows(train.targets, idx)));
      if (use_l2) loss = eng::add(loss, l2_penalty(p, config.l2));
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        result.diverged = true;
        result.divergence_reason = "non-finite training loss in epoch " + std::to_string(epoch);
        break;
      }
      if (verify_batch) {
        const verify::ConservationReport rep = verify::check_conservation(*pr.trace, config.verify_tol);
        ++result.conservation_checks;
        if (!rep.pass) ++result.conservation_violations;
        result.max_conservation_residual = std::max(result.max_conservation_residual, rep.max_relative);
        epoch_residual = std::isnan(epoch_residual) ? rep.max_relative
                                                    : std::max(epoch_residual, rep.max_relative);
      }
      eng::backward(loss);
      auto grads = p.gradients();
      if (config.clip_norm > 0.0) clip_global_norm(grads, config.clip_norm);
      try {
        adam_step(opt, params.tensors, grads);
      } catch (const NonFiniteGradient& e) {
        result.diverged = true;
        result.divergence_reason = e.what();
        break;
      }
      loss_sum += lv;
      ++loss_count;
    }
    if (result.diverged) break;
    const double train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1));
    result.history.push_back({epoch, "train", train_loss, epoch_residual});
    const std::size_t every = std::max<std::size_t>(config.valid_every, 1);
    if (epoch % every != 0 && epoch != config.epochs) continue;
    const double valid_mse = evaluate_mse(params, valid, config.eval_batch);
    result.history.push_back({epoch, "valid", valid_mse, kNaN});
    result.final_valid_mse = valid_mse;
    if (!std::isfinite(valid_mse)) {
      result.diverged = true;
      result.divergence_reason = "non-finite validation loss in epoch " + std::to_string(epoch);
      break;
    }
  }
  if (result.diverged) {
    result.final_train_mse = kNaN;
    result.final_valid_mse = kNaN;
  } else {
    result.final_train_mse = evaluate_mse(params, train, config.eval_batch);
    if (config.epochs == 0) result.final_valid_mse = evaluate_mse(params, valid, config.eval_batch);
  }
  return result;
}

LrSearchResult select_learning_rate(const TrainConfig& config, const std::vector<double>& grid,
                                    const Dataset& train, const Dataset& valid,
                                    const CellParams& init) {
  LrSearchResult out;
  for (double lr : grid) {
    TrainConfig c = config;
    c.lr = lr;
    TrainResult r = train_sequence_to_one(c, train, valid, init);
    LrCandidate cand{lr, r.diverged, r.final_valid_mse};
    out.candidates.push_back(cand);
    const bool usable = !r.diverged && std::isfinite(r.final_valid_mse);
    if (usable && (!out.best || r.final_valid_mse < out.candidates[*out.best].valid_mse)) {
      out.best = out.candidates.size() - 1;
      out.best_result = std::move(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void require_pendulum_model(const CellParams& params, const Dataset& series) {
  if (params.variant != CellVariant::McLstmHypernet || params.dims.cells != 2) {
    throw ContractError("pendulum training needs the mclstm-hypernet variant with K=2, got " +
                        std::string(cells::variant_name(params.variant)) + " with K=" +
                        std::to_string(params.dims.cells));
  }
  if (series.size() != 1 || series.targets.rank() != 3 || series.targets.dim(2) != 2) {
    throw DimensionError("pendulum series must be a single (1 x T x 2) target sequence");
  }
  if (series.aux_width() != params.dims.aux || series.mass_width() != params.dims.mass) {
    throw DimensionError("pendulum series widths do not match the model dims");
  }
}

Tensor steps_window(const Tensor& seq, std::size_t first, std::size_t count) {
  const std::size_t width = seq.dim(2);
  Tensor out({1, count, width});
  std::copy_n(&seq[first * width], count * width, &out[0]);
  return out;
}

// Predicted energies for steps 1..w, stacked into (w x 2).
Var rollout_window(const BoundParams& p, const Dataset& series, std::size_t window,
                   bool affine_offset) {
  const Tensor c0({1, 2}, {series.targets[0], series.targets[1]});
  cells::SequenceOutput seq =
      cells::forward_sequence(p, eng::constant(c0), steps_window(series.mass, 1, window),
                              steps_window(series.aux, 1, window), false);
  Var pred = eng::concat(seq.cs, 0);
  if (affine_offset) pred = eng::affine(pred, 1.02, -0.01);
  return pred;
}

}  // namespace

Tensor rollout_pendulum(const CellParams& params, const Dataset& series, std::size_t steps,
                        bool affine_offset) {
  require_pendulum_model(params, series);
  if (steps < 1 || steps > series.steps()) {
    throw ContractError("rollout_pendulum: steps must lie in [1, " + std::to_string(series.steps()) + "]");
  }
  eng::NoGradGuard guard;
  const BoundParams p(params, false);
  Tensor out({steps, 2});
  out[0] = series.targets[0];
  out[1] = series.targets[1];
  if (steps > 1) {
    const Var pred = rollout_window(p, series, steps - 1, affine_offset);
    std::copy_n(pred.value().data().data(), (steps - 1) * 2, &out[2]);
  }
  return out;
}

PendulumTrainResult train_autoregressive_pendulum(const PendulumTrainConfig& config,
                                                  const Dataset& series, CellParams init) {
  require_pendulum_model(init, series);
  PendulumTrainResult result;
  result.params = std::move(init);
  CellParams& params = result.params;
  OptimizerState opt = make_adam(params.tensors, AdamConfig{config.lr});
  CurriculumState cur = config.curriculum;
  // Step 0 is the initial state, so at most T - 1 steps are predicted.
  cur.cap = std::min(cur.cap, series.steps() - 1);
  cur.window = std::min(cur.window, cur.cap);
  const Tensor& all = series.targets;

  std::size_t full_iterations = 0;
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    const std::size_t w = cur.window;
    Tensor target({w, 2});
    std::copy_n(&all[2], w * 2, &target[0]);
    const BoundParams p(params, true);
    const Var pred = rollout_window(p, series, w, config.affine_offset);
    PendulumLossInfo info;
    const Var loss = pendulum_loss(pred, target, &info);
    const double lv = loss.value().item();
    result.zero_variance_flagged |= info.zero_variance[0] || info.zero_variance[1];
    result.history.push_back({it, w, lv});
    if (!std::isfinite(lv)) {
      result.diverged = true;
      result.divergence_reason = "non-finite loss at iteration " + std::to_string(it);
      break;
    }
    eng::backward(loss);
    auto grads = p.gradients();
    if (config.clip_norm > 0.0) clip_global_norm(grads, config.clip_norm);
    try {
      adam_step(opt, params.tensors, grads);
    } catch (const NonFiniteGradient& e) {
      result.diverged = true;
      result.divergence_reason = e.what();
      break;
    }
    if (w == cur.cap && ++full_iterations >= config.full_window_iterations) break;
    cur = curriculum_advance(cur, lv);
  }
  return result;
}

// ---------------------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history,
                       const std::string& config_hash, std::uint64_t seed) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metrics file: " + path.string());
  out << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  out << "epoch,split,loss,conservation_residual\n";
  char buf[64];
  for (const auto& row : history) {
    out << row.epoch << ',' << row.split << ',';
    std::snprintf(buf, sizeof buf, "%.17g", row.loss);
    out << buf << ',';
    if (!std::isnan(row.conservation_residual)) {
      std::snprintf(buf, sizeof buf, "%.17g", row.conservation_residual);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::json summary_json(const TrainResult& result) {
  const auto epochs = std::count_if(result.history.begin(), result.history.end(),
                                    [](const EpochMetrics& m) { return m.split == "train"; });
  auto num = [](double v) -> nlohmann::json {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  return {{"diverged", result.diverged},
          {"divergence_reason", result.divergence_reason},
          {"final_train_mse", num(result.final_train_mse)},
          {"final_valid_mse", num(result.final_valid_mse)},
          {"epochs_completed", epochs},
          {"conservation_checks", result.conservation_checks},
          {"conservation_violations", result.conservation_violations},
          {"max_conservation_residual", result.max_conservation_residual}};
}

double arithmetic_success_threshold(tasks::ArithmeticOp op, const tasks::SubsetSpec& subsets,
                                    const Dataset& data) {
  constexpr double kRel = 1e-5;
  const std::size_t n = data.size(), steps = data.steps(), width = data.mass_width();
  tasks::validate_subsets(subsets, width);
  if (n == 0) throw ContractError("arithmetic_success_threshold: empty dataset");
  double acc = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* sample = &data.mass[s * steps * width];
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t k = subsets.a; k <= subsets.a + subsets.c; ++k) lhs += sample[t * width + k - 1];
      for (std::size_t k = subsets.b; k <= subsets.b + subsets.c; ++k) rhs += sample[t * width + k - 1];
    }
    const double exact = tasks::apply_op(op, lhs, rhs);
    double worst = 0.0;
    for (double sl : {-1.0, 1.0}) {
      for (double sr : {-1.0, 1.0}) {
        const double y = tasks::apply_op(op, lhs * (1.0 + sl * kRel), rhs * (1.0 + sr * kRel));
        worst = std::max(worst, std::abs(y - exact));
      }
    }
    acc += worst * worst;
  }
  return acc / static_cast<double>(n);
}

}  // namespace mclstm::training
