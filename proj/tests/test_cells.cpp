#include <cmath>
#include <vector>

#include "doctest.h"
#include "mclstm/cells.hpp"
#include "mclstm/random.hpp"

using namespace mclstm;
using namespace mclstm::cells;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major [row][col]

double sigm(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vec row_times(const Vec& v, const Tensor& w) {  // v (n) . W (n x m)
  Vec out(w.dim(1), 0.0);
  for (std::size_t i = 0; i < w.dim(0); ++i)
    for (std::size_t j = 0; j < w.dim(1); ++j) out[j] += v[i] * w.at(i, j);
  return out;
}

void add_into(Vec& a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// Normalizes column j of the (rows x cols) matrix stored flat as [r * cols + j].
Mat column_softmax(const Vec& flat, std::size_t rows, std::size_t cols) {
  Mat out(rows, Vec(cols));
  for (std::size_t j = 0; j < cols; ++j) {
    double mx = -1e300, s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mx = std::max(mx, flat[r * cols + j]);
    for (std::size_t r = 0; r < rows; ++r) s += std::exp(flat[r * cols + j] - mx);
    for (std::size_t r = 0; r < rows; ++r) out[r][j] = std::exp(flat[r * cols + j] - mx) / s;
  }
  return out;
}

Mat column_l1(Mat m) {
  for (std::size_t j = 0; j < m[0].size(); ++j) {
    double s = 0.0;
    for (auto& row : m) s += std::abs(row[j]);
    for (auto& row : m) row[j] = s > 0 ? row[j] / s : 1.0 / static_cast<double>(m.size());
  }
  return m;
}

struct OracleStep {
  Vec h, c, o, m_tot;
  Mat i, r;
};

// Straight-line reference for one step of any mass-recurrent variant.
OracleStep oracle_step(const CellParams& p, const Vec& c, const Vec& x, const Vec& a) {
  const std::size_t K = p.dims.cells, M = p.dims.mass;
  const CellVariant v = p.variant;
  const bool hydro = v == CellVariant::McLstmHydro;
  double l1 = 0.0;
  for (double ci : c) l1 += std::abs(ci);
  Vec cn(K);
  for (std::size_t k = 0; k < K; ++k) cn[k] = l1 > 0 ? c[k] / l1 : 1.0 / static_cast<double>(K);

  Vec pre_i = row_times(a, p.get("W_i"));
  add_into(pre_i, row_times(cn, p.get("U_i")));
  if (hydro) add_into(pre_i, row_times(x, p.get("V_i")));
  add_into(pre_i, p.get("b_i").values());
  OracleStep s;
  if (v == CellVariant::AblationSigmoidInputGate || hydro) {
    s.i.assign(K, Vec(M));
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t m = 0; m < M; ++m) s.i[k][m] = sigm(pre_i[k * M + m]);
    if (hydro) s.i = column_l1(s.i);
  } else {
    s.i = column_softmax(pre_i, K, M);
  }

  Vec pre_o = row_times(a, p.get("W_o"));
  add_into(pre_o, row_times(cn, p.get("U_o")));
  if (hydro) add_into(pre_o, row_times(x, p.get("V_o")));
  s.o.resize(K);
  for (std::size_t k = 0; k < K; ++k) s.o[k] = sigm(pre_o[k] + p.get("b_o")[k]);

  if (v == CellVariant::McLstmHypernet) {
    Vec z = cn;
    z.insert(z.end(), a.begin(), a.end());
    std::size_t layer = 0;
    while (p.has("hyper.W" + std::to_string(layer + 1))) {
      z = row_times(z, p.get("hyper.W" + std::to_string(layer)));
      add_into(z, p.get("hyper.b" + std::to_string(layer)).values());
      for (double& zi : z) zi = std::max(zi, 0.0);
      ++layer;
    }
    z = row_times(z, p.get("hyper.W" + std::to_string(layer)));
    add_into(z, p.get("hyper.b" + std::to_string(layer)).values());
    s.r = column_softmax(z, K, K);
  } else if (has_time_dependent_r(v)) {
    Vec pre = row_times(a, p.get("W_r"));
    add_into(pre, row_times(cn, p.get("U_r")));
    if (hydro) add_into(pre, row_times(x, p.get("V_r")));
    add_into(pre, p.get("B_r").values());
    if (v == CellVariant::AblationLinearRedistribution) {
      s.r.assign(K, Vec(K));
      for (std::size_t r = 0; r < K; ++r)
        for (std::size_t q = 0; q < K; ++q) s.r[r][q] = pre[r * K + q];
    } else if (hydro) {
      s.r.assign(K, Vec(K));
      for (std::size_t r = 0; r < K; ++r)
        for (std::size_t q = 0; q < K; ++q) s.r[r][q] = std::max(pre[r * K + q], 0.0);
      s.r = column_l1(s.r);
    } else {
      s.r = column_softmax(pre, K, K);
    }
  } else {
    s.r = column_softmax(p.get("B_r").values(), K, K);
  }

  s.m_tot.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t q = 0; q < K; ++q) s.m_tot[k] += s.r[k][q] * c[q];
    for (std::size_t m = 0; m < M; ++m) s.m_tot[k] += s.i[k][m] * x[m];
  }
  s.h.resize(K);
  s.c.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    s.h[k] = s.o[k] * s.m_tot[k];
    s.c[k] = v == CellVariant::AblationNoOutputSubtraction ? s.m_tot[k]
                                                           : (1.0 - s.o[k]) * s.m_tot[k];
  }
  return s;
}

CellParams perturbed(CellVariant v, const Dims& d, std::uint64_t seed) {
  InitOptions opt;
  opt.hypernet_hidden = {6, 5};
  CellParams p = init_params(d, v, seed, opt);
  Philox rng(seed + 100);
  for (auto& [_, t] : p.tensors)
    for (double& x : t.data()) x += rng.normal(0.0, 0.3);
  return p;
}

Tensor vec_tensor(const Vec& v) { return Tensor({v.size()}, v); }

}  // namespace

TEST_CASE("step matches the scalar-loop oracle for every mass-recurrent variant") {
  const Dims d{5, 2, 3};
  for (CellVariant v : kAllVariants) {
    if (!is_mass_recurrent(v)) continue;
    CAPTURE(variant_name(v));
    const CellParams p = perturbed(v, d, 11);
    const Vec c{0.3, 0.0, 1.2, 0.7, 2.0}, x{0.4, 1.1}, a{-0.5, 0.2, 0.9};
    const OracleStep ref = oracle_step(p, c, x, a);
    const SingleStep got = step_single(p, vec_tensor(c), vec_tensor(x), vec_tensor(a));
    for (std::size_t k = 0; k < d.cells; ++k) {
      CHECK(got.h[k] == doctest::Approx(ref.h[k]).epsilon(1e-12));
      CHECK(got.c[k] == doctest::Approx(ref.c[k]).epsilon(1e-12));
      CHECK(got.o[k] == doctest::Approx(ref.o[k]).epsilon(1e-12));
      CHECK(got.m_tot[k] == doctest::Approx(ref.m_tot[k]).epsilon(1e-12));
      for (std::size_t m = 0; m < d.mass; ++m)
        CHECK(got.i.at(k, m) == doctest::Approx(ref.i[k][m]).epsilon(1e-12));
      for (std::size_t q = 0; q < d.cells; ++q)
        CHECK(got.r.at(k, q) == doctest::Approx(ref.r[k][q]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero state normalizes to the uniform vector") {
  const CellParams p = perturbed(CellVariant::McLstmBasic, {4, 1, 1}, 3);
  const Vec zero(4, 0.0), x{1.0}, a{0.5};
  const OracleStep ref = oracle_step(p, zero, x, a);
  const SingleStep got = step_single(p, vec_tensor(zero), vec_tensor(x), vec_tensor(a));
  for (std::size_t k = 0; k < 4; ++k) CHECK(got.h[k] == doctest::Approx(ref.h[k]).epsilon(1e-12));
}

TEST_CASE("conserving variants satisfy the mass balance for one step") {
  const Dims d{6, 3, 2};
  for (CellVariant v : kConservingRecurrentVariants) {
    CAPTURE(variant_name(v));
    const CellParams p = perturbed(v, d, 21);
    const Tensor c = Tensor::vector({0.1, 3.0, 0.0, 0.5, 1.5, 2.5});
    const Tensor x = Tensor::vector({0.7, 0.0, 4.0});
    const SingleStep s = step_single(p, c, x, Tensor::vector({0.3, -1.0}));
    const double before = sum(c) + sum(x), after = sum(s.c) + sum(s.h);
    CHECK(std::abs(after - before) <= 1e-12 * before);
    for (double v2 : s.c.data()) CHECK(v2 >= 0.0);
    for (double v2 : s.h.data()) CHECK(v2 >= 0.0);
  }
}

TEST_CASE("initialization follows the documented defaults") {
  const CellParams p = init_params({8, 1, 3}, CellVariant::McLstmBasic, 1);
  for (double b : p.get("b_o").data()) CHECK(b == -3.0);
  for (double b : p.get("b_i").data()) CHECK(b == 0.0);
  // softmax(s I) lands at Frobenius distance 0.05 from the identity.
  const SingleStep s = step_single(p, Tensor({8}), Tensor::vector({0.0}), Tensor({3}));
  double dist = 0.0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      const double diff = s.r.at(i, j) - (i == j ? 1.0 : 0.0);
      dist += diff * diff;
    }
  CHECK(std::sqrt(dist) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(identity_boost(1) == 0.0);

  // Orthogonal blocks have orthonormal rows or columns.
  const Tensor q = orthogonal(3, 7, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 7; ++k) dot += q.at(i, k) * q.at(j, k);
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }

  const CellParams lstm = init_params({4, 1, 1}, CellVariant::LstmBaseline, 1);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(lstm.get("b")[k] == 0.0);
    CHECK(lstm.get("b")[4 + k] == 3.0);
  }
  CHECK(init_params({4, 1, 1}, CellVariant::McLstmBasic, 9).get("W_i") ==
        init_params({4, 1, 1}, CellVariant::McLstmBasic, 9).get("W_i"));
  CHECK_THROWS_AS(init_params({0, 1, 1}, CellVariant::McLstmBasic, 1), ContractError);
}

TEST_CASE("lstm step matches the textbook equations") {
  const CellParams p = perturbed(CellVariant::LstmBaseline, {3, 1, 2}, 4);
  const Vec xa{0.5, -0.2, 0.8}, h0{0.1, -0.3, 0.2}, c0{0.4, 0.0, -0.6};
  const std::size_t K = 3;
  Vec z = row_times(xa, p.get("W_x"));
  add_into(z, row_times(h0, p.get("W_h")));
  add_into(z, p.get("b").values());
  engine::NoGradGuard guard;
  BoundParams bound(p, false);
  const LstmState s =
      lstm_step(bound, engine::constant(Tensor({1, 3}, h0)), engine::constant(Tensor({1, 3}, c0)),
                engine::constant(Tensor({1, 3}, xa)));
  for (std::size_t k = 0; k < K; ++k) {
    const double c = sigm(z[K + k]) * c0[k] + sigm(z[k]) * std::tanh(z[2 * K + k]);
    const double h = sigm(z[3 * K + k]) * std::tanh(c);
    CHECK(s.c.value()[k] == doctest::Approx(c).epsilon(1e-13));
    CHECK(s.h.value()[k] == doctest::Approx(h).epsilon(1e-13));
  }
}

TEST_CASE("mcfc layers") {
  const CellParams p = perturbed(CellVariant::McFc, {4, 3, 1}, 8);
  const Vec x{1.0, 2.0, 0.5};
  const Mat gate = column_softmax(p.get("B_I").values(), 4, 3);
  engine::NoGradGuard guard;
  BoundParams bound(p, false);
  const Var y = mcfc_forward(bound, engine::constant(Tensor({1, 3}, x)));
  double out_total = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    double ref = 0.0;
    for (std::size_t m = 0; m < 3; ++m) ref += gate[k][m] * x[m];
    ref *= sigm(p.get("b_o")[k]);
    CHECK(y.value()[k] == doctest::Approx(ref).epsilon(1e-13));
    out_total += y.value()[k];
  }
  CHECK(out_total <= 3.5 + 1e-12);

  const CellParams pm = perturbed(CellVariant::McFcMultiplicative, {4, 3, 1}, 8);
  BoundParams bm(pm, false);
  const Mat gm = column_softmax(pm.get("B_I").values(), 4, 3);
  const Var ym = mcfc_mul_forward(bm, engine::constant(Tensor({1, 3}, x)));
  for (std::size_t k = 0; k < 4; ++k) {
    double ref = 0.0;
    for (std::size_t m = 0; m < 3; ++m) ref += gm[k][m] * std::log(x[m]);
    ref = std::exp(ref * sigm(pm.get("b_o")[k]) + pm.get("alpha")[k]);
    CHECK(ym.value()[k] == doctest::Approx(ref).epsilon(1e-13));
  }
  CHECK_THROWS_AS(mcfc_mul_forward(bm, engine::constant(Tensor({1, 3}, Vec{1.0, 0.0, 2.0}))),
                  DomainError);
}

TEST_CASE("readouts") {
  CellParams p = init_params({4, 1, 1}, CellVariant::McLstmBasic, 2);
  engine::NoGradGuard guard;
  const Tensor h({2, 4}, Vec{1, 2, 3, 4, 0.5, 0.5, 0.5, 0.5});
  {
    BoundParams b(p, false);
    const Var sum_all = readout(b, engine::constant(h), ReadoutMode::SumAll);
    CHECK(sum_all.value().at(0, 0) == 10.0);
    CHECK(sum_all.value().at(1, 0) == 2.0);
    const Var trash = readout(b, engine::constant(h), ReadoutMode::TrashCellSum);
    CHECK(trash.value().at(0, 0) == 9.0);
    CHECK(trash.value().at(1, 0) == 1.5);
    CHECK_THROWS_AS(readout(b, engine::constant(h), ReadoutMode::Linear), ContractError);
  }
  set_linear_readout(p, Tensor({4, 1}, Vec{1, -1, 2, 0}), Tensor::vector({0.5}));
  BoundParams b(p, false);
  const Var lin = readout(b, engine::constant(h));
  CHECK(lin.value().at(0, 0) == doctest::Approx(1 - 2 + 6 + 0.5));
  CHECK_THROWS_AS(set_linear_readout(p, Tensor({3, 1}), Tensor::vector({0.0})), DimensionError);
}

TEST_CASE("contract errors") {
  const CellParams p = init_params({3, 2, 1}, CellVariant::McLstmBasic, 1);
  CHECK_THROWS_AS(step_single(p, Tensor::vector({1, -0.1, 0}), Tensor({2}), Tensor({1})),
                  ContractError);
  CHECK_THROWS_AS(step_single(p, Tensor({4}), Tensor({2}), Tensor({1})), DimensionError);
  CHECK_THROWS_AS(parse_variant("gru"), ContractError);
  CHECK_THROWS_AS(parse_readout("max"), ContractError);
  for (CellVariant v : kAllVariants) CHECK(parse_variant(variant_name(v)) == v);
  const CellParams fc = init_params({3, 2, 1}, CellVariant::McFc, 1);
  BoundParams bfc(fc, false);
  CHECK_THROWS_AS(forward_sequence(bfc, engine::constant(Tensor({1, 3})), Tensor({1, 2, 2}),
                                   Tensor({1, 2, 1})),
                  ContractError);
}

TEST_CASE("run_sequence chains steps and records a trace") {
  const CellParams p = perturbed(CellVariant::McLstmTimeDependentR, {4, 1, 2}, 6);
  const Tensor xs({3, 1}, Vec{1.0, 0.0, 2.0});
  const Tensor as({3, 2}, Vec{0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
  const SingleSequence seq = run_sequence(p, Tensor({4}), xs, as);
  Vec c(4, 0.0);
  for (std::size_t t = 0; t < 3; ++t) {
    const OracleStep ref = oracle_step(p, c, {xs[t]}, {as.at(t, 0), as.at(t, 1)});
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(seq.hs.at(t, k) == doctest::Approx(ref.h[k]).epsilon(1e-12));
      CHECK(seq.cs.at(t, k) == doctest::Approx(ref.c[k]).epsilon(1e-12));
    }
    c = ref.c;
  }
  CHECK(seq.trace.steps.size() == 3);
}
