#include "mclstm/verify.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>

#include "mclstm/random.hpp"

namespace mclstm::verify {
namespace {

namespace eng = mclstm::engine;
using cells::CellParams;
using cells::CellTrace;
using cells::CellVariant;
using engine::Var;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;

double row_sum(const Tensor& t, std::size_t row, std::size_t width) {
  double s = 0.0;
  for (std::size_t k = 0; k < width; ++k) s += t[row * width + k];
  return s;
}

void require_square(const Tensor& r, const char* what) {
  if (r.rank() != 2 || r.dim(0) != r.dim(1) || r.dim(0) == 0) {
    throw DimensionError(std::string(what) + ": expected a non-empty square matrix, got " +
                         shape_str(r.shape()));
  }
}

// Columns of a (K x N) matrix or of every (K x N) slice of a (B x K x N) tensor.
template <typename Fn>
void for_each_column(const Tensor& t, Fn&& fn) {
  if (t.size() == 0) return;
  const std::size_t batch = t.rank() == 3 ? t.dim(0) : 1;
  const std::size_t rows = t.rank() == 3 ? t.dim(1) : t.dim(0);
  const std::size_t cols = t.rank() == 3 ? t.dim(2) : t.dim(1);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0, lo = 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        const double v = t[(b * rows + i) * cols + j];
        s += v;
        lo = std::min(lo, v);
      }
      fn(s, lo);
    }
  }
}

Tensor to_f32(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

Var loss_var(const cells::BoundParams& p, const GradcheckSample& s) {
  Var pred;
  const CellVariant v = p.variant();
  if (v == CellVariant::McFc) {
    pred = cells::mcfc_forward(p, eng::constant(s.xs));
  } else if (v == CellVariant::McFcMultiplicative) {
    pred = cells::mcfc_mul_forward(p, eng::constant(s.xs));
  } else {
    cells::SequenceOutput seq = cells::forward_sequence(p, eng::constant(s.c0), s.xs, s.as);
    pred = cells::readout(p, seq.hs.back());
  }
  const Var d = eng::sub(pred, eng::constant(s.target));
  return eng::mean(eng::mul(d, d));
}

std::size_t readout_width(const CellParams& params) {
  if (cells::is_static(params.variant)) return params.dims.cells;
  if (params.readout == cells::ReadoutMode::Linear) return params.get("readout.b").size();
  return 1;
}

}  // namespace

// ---------------------------------------------------------------------------

nlohmann::json ConservationReport::to_json() const {
  return {{"check", "conservation"},
          {"pass", pass},
          {"tol", tol},
          {"max_residual", max_residual},
          {"max_relative", max_relative},
          {"worst_sample", worst_sample},
          {"worst_step", worst_step}};
}

ConservationReport check_conservation(const CellTrace& trace, double tol) {
  ConservationReport rep;
  rep.tol = tol;
  const std::size_t batch = trace.c0.dim(0), cells_k = trace.c0.dim(1);
  std::vector<double> mc0(batch), cum_x(batch, 0.0), cum_h(batch, 0.0), scale(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) mc0[b] = row_sum(trace.c0, b, cells_k);
  // Total input mass per sample sets the tolerance scale.
  for (const auto& st : trace.steps) {
    const std::size_t m = st.x.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < m; ++j) scale[b] += std::abs(st.x[b * m + j]);
    }
  }
  std::vector<double> worst_rel(batch, 0.0);
  rep.residuals.reserve(trace.steps.size());
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const auto& st = trace.steps[t];
    const std::size_t m = st.x.dim(1);
    double step_max = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      cum_x[b] += row_sum(st.x, b, m);
      cum_h[b] += row_sum(st.h, b, cells_k);
      const double res = std::abs(row_sum(st.c, b, cells_k) - mc0[b] - cum_x[b] + cum_h[b]);
      step_max = std::max(step_max, std::isnan(res) ? INFINITY : res);
      const double rel = res / (1.0 + scale[b]);
      if (!(rel <= rep.max_relative)) {
        rep.max_relative = std::isnan(rel) ? INFINITY : rel;
        rep.worst_sample = b;
        rep.worst_step = t;
      }
    }
    rep.residuals.push_back(step_max);
    rep.max_residual = std::max(rep.max_residual, step_max);
  }
  rep.pass = rep.max_relative <= tol;
  return rep;
}

nlohmann::json BoundednessReport::to_json() const {
  return {{"check", "boundedness"},
          {"pass", pass},
          {"worst_margin", worst_margin},
          {"worst_sample", worst_sample},
          {"worst_step", worst_step},
          {"worst_cell", worst_cell}};
}

BoundednessReport check_boundedness(const CellTrace& trace, double tol) {
  const std::size_t batch = trace.c0.dim(0), cells_k = trace.c0.dim(1);
  std::vector<double> bound(batch);
  for (std::size_t b = 0; b < batch; ++b) bound[b] = row_sum(trace.c0, b, cells_k);
  BoundednessReport rep;
  rep.worst_margin = INFINITY;
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const auto& st = trace.steps[t];
    const std::size_t m = st.x.dim(1);
    for (double v : st.x.data()) {
      if (v < 0.0) throw ContractError("check_boundedness: mass inputs must be non-negative");
    }
    for (std::size_t b = 0; b < batch; ++b) {
      bound[b] += row_sum(st.x, b, m);
      for (std::size_t k = 0; k < cells_k; ++k) {
        const double c = st.c[b * cells_k + k];
        const double margin = std::min(c, bound[b] - c);
        if (!(margin >= rep.worst_margin)) {
          rep.worst_margin = std::isnan(margin) ? -INFINITY : margin;
          rep.worst_sample = b;
          rep.worst_step = t;
          rep.worst_cell = k;
        }
      }
    }
  }
  if (trace.steps.empty()) rep.worst_margin = 0.0;
  rep.pass = rep.worst_margin >= -tol;
  return rep;
}

nlohmann::json StochasticityReport::to_json() const {
  return {{"check", "stochasticity"},
          {"pass", pass},
          {"max_column_error", max_column_error},
          {"min_entry", min_entry}};
}

StochasticityReport check_stochasticity(const CellTrace& trace, double tol) {
  StochasticityReport rep;
  auto visit = [&](double s, double lo) {
    const double err = std::abs(s - 1.0);
    rep.max_column_error = std::isnan(err) ? INFINITY : std::max(rep.max_column_error, err);
    rep.min_entry = std::min(rep.min_entry, lo);
  };
  for (const auto& st : trace.steps) {
    for_each_column(st.i, visit);
    for_each_column(st.r, visit);
  }
  rep.pass = rep.max_column_error <= tol && rep.min_entry >= 0.0;
  return rep;
}

CellTrace quantize_trace_f32(const CellTrace& trace) {
  CellTrace out;
  out.variant = trace.variant;
  out.c0 = to_f32(trace.c0);
  out.steps.reserve(trace.steps.size());
  for (const auto& st : trace.steps) {
    out.steps.push_back({to_f32(st.x), to_f32(st.i), to_f32(st.o), to_f32(st.r), to_f32(st.m_tot),
                         to_f32(st.c), to_f32(st.h)});
  }
  return out;
}

// ---------------------------------------------------------------------------

bool is_irreducible(const Tensor& r) {
  require_square(r, "is_irreducible");
  const std::size_t k = r.dim(0);
  auto reaches_all = [&](bool reversed) {
    std::vector<char> seen(k, 0);
    std::deque<std::size_t> queue{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!queue.empty()) {
      const std::size_t j = queue.front();
      queue.pop_front();
      for (std::size_t i = 0; i < k; ++i) {
        // Mass flows from state j to state i when R(i, j) > 0.
        const double w = reversed ? r.at(j, i) : r.at(i, j);
        if (w > 0.0 && !seen[i]) {
          seen[i] = 1;
          ++count;
          queue.push_back(i);
        }
      }
    }
    return count == k;
  };
  return reaches_all(false) && reaches_all(true);
}

StationaryResult stationary_distribution(const Tensor& r, const Tensor& start, double tol,
                                         std::size_t cap) {
  require_square(r, "stationary_distribution");
  const auto k = static_cast<Eigen::Index>(r.dim(0));
  if (start.size() != r.dim(0)) throw DimensionError("stationary_distribution: start vector size mismatch");
  const ConstMap rm(r.data().data(), k, k);
  Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(start.data().data(), k);
  c /= c.lpNorm<1>();
  StationaryResult out;
  for (std::size_t it = 1; it <= cap; ++it) {
    Eigen::VectorXd next = rm * c;
    next /= next.lpNorm<1>();
    const double delta = (next - c).lpNorm<1>();
    c.swap(next);
    out.iterations = it;
    if (delta <= tol) {
      out.converged = true;
      break;
    }
  }
  out.distribution = Tensor({r.dim(0)}, std::vector<double>(c.data(), c.data() + k));
  return out;
}

std::size_t MarkovReport::steps_to(double tol) const {
  for (std::size_t t = 0; t < distances.size(); ++t) {
    if (distances[t] <= tol) return t;
  }
  return distances.size();
}

nlohmann::json MarkovReport::to_json() const {
  return {{"check", "markov"},
          {"irreducible", irreducible},
          {"stationary_converged", stationary_converged},
          {"final_distance", distances.empty() ? 0.0 : distances.back()},
          {"steps_to_1e-8", steps_to(1e-8)},
          {"warnings", warnings}};
}

MarkovReport markov_convergence(const Tensor& r, const Tensor& c0, std::size_t steps) {
  require_square(r, "markov_convergence");
  const std::size_t k = r.dim(0);
  if (c0.size() != k) throw DimensionError("markov_convergence: c0 must have K entries");
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (r.at(i, j) < 0.0) throw ContractError("markov_convergence: R has a negative entry");
      s += r.at(i, j);
    }
    if (std::abs(s - 1.0) > 1e-10) {
      throw ContractError("markov_convergence: column " + std::to_string(j) + " of R sums to " +
                          std::to_string(s));
    }
  }
  double mass = 0.0;
  for (double v : c0.data()) {
    if (v < 0.0) throw ContractError("markov_convergence: c0 has a negative entry");
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-10) throw ContractError("markov_convergence: c0 must sum to 1");

  MarkovReport rep;
  rep.irreducible = is_irreducible(r);
  // The oracle starts from the uniform vector when the fixed point is unique;
  // for a reducible chain it depends on c0, so start there instead.
  const Tensor start = rep.irreducible ? Tensor({k}, 1.0 / static_cast<double>(k)) : c0;
  if (!rep.irreducible) {
    rep.warnings.push_back("R is reducible; convergence to a unique stationary distribution is not asserted");
  }
  const StationaryResult st = stationary_distribution(r, start);
  rep.stationary = st.distribution;
  rep.stationary_converged = st.converged;
  if (!st.converged) rep.warnings.push_back("power iteration for the stationary distribution hit its cap");

  const auto kk = static_cast<Eigen::Index>(k);
  const ConstMap rm(r.data().data(), kk, kk);
  const Eigen::Map<const Eigen::VectorXd> star(rep.stationary.data().data(), kk);
  Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(c0.data().data(), kk);
  rep.distances.reserve(steps + 1);
  rep.distances.push_back((c - star).lpNorm<1>());
  for (std::size_t t = 0; t < steps; ++t) {
    c = rm * c;
    rep.distances.push_back((c - star).lpNorm<1>());
  }
  return rep;
}

NonConvergence::NonConvergence(const std::string& what, std::size_t iterations)
    : std::runtime_error(what + " did not converge after " + std::to_string(iterations) +
                         " iterations"),
      iterations_(iterations) {}

SpectralResult spectral_norm(const Tensor& r, double tol, std::size_t cap) {
  require_square(r, "spectral_norm");
  const auto k = static_cast<Eigen::Index>(r.dim(0));
  const ConstMap rm(r.data().data(), k, k);
  Eigen::VectorXd u = Eigen::VectorXd::Ones(k);
  // lambda_n = ||R^T u_n||^2 / ||u_n||^2 is a Rayleigh quotient of R R^T,
  // non-decreasing along the iteration; from the ones vector it starts at 1
  // for any column-stochastic R.
  double lambda = -1.0;
  for (std::size_t it = 1; it <= cap; ++it) {
    const Eigen::VectorXd w = rm.transpose() * u;
    const double next = w.squaredNorm() / u.squaredNorm();
    if (next == 0.0) return {0.0, it};
    if (std::abs(next - lambda) <= tol * next) return {std::sqrt(next), it};
    lambda = next;
    u = rm * w;
    u /= u.norm();
  }
  throw NonConvergence("spectral_norm power iteration", cap);
}

Tensor random_column_stochastic(std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("random_column_stochastic: K must be positive");
  Philox rng(seed);
  Tensor r({k, k});
  for (double& v : r.data()) v = rng.uniform();
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += r.at(i, j);
    for (std::size_t i = 0; i < k; ++i) r.at(i, j) /= s;
  }
  return r;
}

// ---------------------------------------------------------------------------

GradientFlowReport gradient_flow_probe(const CellParams& params, std::size_t steps,
                                       std::uint64_t seed) {
  if (!cells::is_mass_recurrent(params.variant)) {
    throw ContractError("gradient_flow_probe needs a mass-recurrent variant");
  }
  if (steps == 0) throw ContractError("gradient_flow_probe: steps must be positive");
  CellParams closed = params;
  for (double& v : closed.get("b_o").data()) v = -30.0;
  const std::size_t k = params.dims.cells;
  Philox rng(seed);
  Tensor c0({k});
  for (double& v : c0.data()) v = rng.uniform(0.1, 1.0);
  Tensor as({steps, params.dims.aux});
  for (double& v : as.data()) v = rng.uniform();
  const cells::SingleSequence seq =
      cells::run_sequence(closed, c0, Tensor({steps, params.dims.mass}), as);

  GradientFlowReport rep;
  rep.norms.reserve(steps);
  const auto kk = static_cast<Eigen::Index>(k);
  RowMatrix product = RowMatrix::Identity(kk, kk);
  for (const auto& st : seq.trace.steps) {
    product = ConstMap(st.r.data().data(), kk, kk) * product;
    Tensor pt({k, k}, std::vector<double>(product.data(), product.data() + product.size()));
    rep.norms.push_back(spectral_norm(pt).sigma);
  }
  rep.final_norm = rep.norms.back();
  return rep;
}

GradcheckSample random_gradcheck_sample(const CellParams& params, std::size_t batch,
                                        std::size_t steps, std::uint64_t seed) {
  const auto& d = params.dims;
  Philox rng(seed);
  GradcheckSample s;
  if (cells::is_static(params.variant)) {
    s.xs = Tensor({batch, d.mass});
  } else {
    s.xs = Tensor({batch, steps, d.mass});
    s.as = Tensor({batch, steps, d.aux});
    for (double& v : s.as.data()) v = rng.normal();
  }
  for (double& v : s.xs.data()) v = rng.uniform(0.1, 1.0);
  s.c0 = Tensor({batch, d.cells});
  for (double& v : s.c0.data()) v = rng.uniform(0.1, 1.0);
  s.target = Tensor({batch, readout_width(params)});
  for (double& v : s.target.data()) v = rng.uniform();
  return s;
}

double model_loss(const CellParams& params, const GradcheckSample& sample) {
  eng::NoGradGuard guard;
  const cells::BoundParams p(params, false);
  return loss_var(p, sample).value().item();
}

nlohmann::json GradcheckReport::to_json() const {
  return {{"check", "gradcheck"},
          {"max_error", max_error},
          {"worst_parameter", worst_parameter},
          {"worst_index", worst_index},
          {"worst_analytic", worst_analytic},
          {"worst_numeric", worst_numeric},
          {"checked", checked}};
}

GradcheckReport gradcheck_model(const CellParams& params, const GradcheckSample& sample, double eps,
                                std::size_t max_entries, std::uint64_t seed) {
  std::map<std::string, Tensor> analytic;
  {
    const cells::BoundParams p(params, true);
    const Var loss = loss_var(p, sample);
    eng::backward(loss);
    analytic = p.gradients();
  }
  auto score = [](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
  };
  CellParams probe = params;
  Philox pick(seed);
  GradcheckReport rep;
  for (const auto& [name, grad] : analytic) {
    Tensor& w = probe.get(name);
    std::vector<std::size_t> entries(w.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (max_entries > 0 && entries.size() > max_entries) {
      for (std::size_t i = 0; i < max_entries; ++i) {
        std::swap(entries[i], entries[i + pick.below(entries.size() - i)]);
      }
      entries.resize(max_entries);
    }
    for (std::size_t idx : entries) {
      const double orig = w[idx];
      auto central = [&](double h) {
        w[idx] = orig + h;
        const double up = model_loss(probe, sample);
        w[idx] = orig - h;
        const double down = model_loss(probe, sample);
        w[idx] = orig;
        return (up - down) / (2.0 * h);
      };
      // Fourth-order stencil; tolerates a much larger step, which matters when the
      // loss itself is huge and rounding swamps the two-point difference.
      auto five_point = [&](double h) {
        const double f1 = central(h), f2 = central(2.0 * h);
        return (4.0 * f1 - f2) / 3.0;
      };
      double numeric = central(eps);
      double err = score(grad[idx], numeric);
      auto consider = [&](double alt) {
        if (score(grad[idx], alt) < err) {
          err = score(grad[idx], alt);
          numeric = alt;
        }
      };
      if (err > 1e-5) {
        for (double h : {eps / 10.0, eps * 10.0}) consider(central(h));
      }
      if (err > 1e-5) {
        for (double h : {eps * 100.0, eps * 1000.0, eps * 10000.0}) consider(five_point(h));
      }
      ++rep.checked;
      if (!(err <= rep.max_error)) {
        rep.max_error = std::isnan(err) ? INFINITY : err;
        rep.worst_parameter = name;
        rep.worst_index = idx;
        rep.worst_analytic = grad[idx];
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------

std::vector<BenchRow> runtime_bench(const std::vector<CellVariant>& variants, const BenchDims& dims,
                                    std::size_t repeats, std::uint64_t seed) {
  repeats = std::max<std::size_t>(repeats, 1);
  Philox rng(seed);
  Tensor xs({dims.batch, dims.steps, dims.mass});
  for (double& v : xs.data()) v = rng.uniform();
  Tensor as({dims.batch, dims.steps, dims.aux});
  for (double& v : as.data()) v = rng.normal();
  const Tensor c0({dims.batch, dims.cells});

  std::vector<BenchRow> rows;
  for (CellVariant v : variants) {
    if (cells::is_static(v)) throw ContractError("runtime_bench: static variants have no recurrence");
    const CellParams params = cells::init_params({dims.cells, dims.mass, dims.aux}, v, seed);
    eng::NoGradGuard guard;
    const cells::BoundParams p(params, false);
    auto run = [&] { return cells::forward_sequence(p, eng::constant(c0), xs, as).hs.size(); };
    run();
    std::vector<double> ms;
    for (std::size_t i = 0; i < repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      run();
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    auto quantile = [&](double q) {
      const double pos = q * static_cast<double>(ms.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, ms.size() - 1);
      return ms[lo] + (pos - static_cast<double>(lo)) * (ms[hi] - ms[lo]);
    };
    rows.push_back({v, dims, quantile(0.5), quantile(0.25), quantile(0.75), repeats});
  }
  return rows;
}

double loglog_slope(const std::vector<double>& ks, const std::vector<double>& times) {
  if (ks.size() != times.size() || ks.size() < 2) {
    throw ContractError("loglog_slope: need at least two matching points");
  }
  const double n = static_cast<double>(ks.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double x = std::log(ks[i]), y = std::log(times[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace mclstm::verify
