#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "mclstm/random.hpp"
#include "mclstm/verify.hpp"

using namespace mclstm;
using namespace mclstm::verify;
using cells::CellVariant;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
  return m;
}

cells::CellTrace sample_trace(CellVariant v, std::uint64_t seed) {
  const cells::CellParams p = cells::init_params({5, 2, 3}, v, seed);
  Philox rng(seed);
  Tensor xs({8, 2}), as({8, 3});
  for (double& x : xs.data()) x = rng.uniform(0.0, 2.0);
  for (double& a : as.data()) a = rng.normal();
  return cells::run_sequence(p, Tensor::vector({0.5, 0.0, 1.0, 0.2, 0.3}), xs, as).trace;
}

}  // namespace

TEST_CASE("spectral norm agrees with an SVD") {
  for (std::size_t k : {2u, 5u, 16u, 64u}) {
    const Tensor r = random_column_stochastic(k, k);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(r));
    CHECK(spectral_norm(r).sigma == doctest::Approx(svd.singularValues()(0)).epsilon(1e-8));
    for (std::size_t j = 0; j < k; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < k; ++i) col += r.at(i, j);
      CHECK(col == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  CHECK(spectral_norm(Tensor::identity(3)).sigma == doctest::Approx(1.0));
}

TEST_CASE("stationary distribution is the unit eigenvector") {
  const Tensor r = random_column_stochastic(6, 3);
  Eigen::EigenSolver<Eigen::MatrixXd> es(to_eigen(r));
  Eigen::Index best = 0;
  for (Eigen::Index i = 0; i < 6; ++i)
    if (std::abs(es.eigenvalues()(i) - 1.0) < std::abs(es.eigenvalues()(best) - 1.0)) best = i;
  Eigen::VectorXd v = es.eigenvectors().col(best).real();
  v /= v.sum();
  const StationaryResult s = stationary_distribution(r, Tensor({6}, 1.0 / 6));
  CHECK(s.converged);
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(s.distribution[i] == doctest::Approx(v(i)).epsilon(1e-9));

  const MarkovReport rep = markov_convergence(r, Tensor::vector({1, 0, 0, 0, 0, 0}), 200);
  CHECK(rep.irreducible);
  CHECK(rep.steps_to(1e-8) < 200);
  // Monotone until round-off takes over.
  for (std::size_t t = 1; t < rep.distances.size() && rep.distances[t - 1] > 1e-12; ++t)
    CHECK(rep.distances[t] <= rep.distances[t - 1] + 1e-15);
}

TEST_CASE("irreducibility") {
  CHECK(is_irreducible(Tensor::matrix({{0, 1}, {1, 0}})));
  CHECK_FALSE(is_irreducible(Tensor::identity(3)));
  CHECK_FALSE(is_irreducible(Tensor::matrix({{1, 0.5}, {0, 0.5}})));
  const MarkovReport rep = markov_convergence(Tensor::identity(2), Tensor::vector({1, 0}), 5);
  CHECK_FALSE(rep.irreducible);
  CHECK_FALSE(rep.warnings.empty());
}

TEST_CASE("trace checks pass on conserving cells and catch injected errors") {
  for (CellVariant v : cells::kConservingRecurrentVariants) {
    CAPTURE(cells::variant_name(v));
    cells::CellTrace tr = sample_trace(v, 4);
    CHECK(check_conservation(tr, 1e-12).pass);
    CHECK(check_boundedness(tr, 1e-12).pass);
    CHECK(check_stochasticity(tr).pass);
    tr.steps[3].c[1] += 1e-6;
    const ConservationReport bad = check_conservation(tr, 1e-10);
    CHECK_FALSE(bad.pass);
    CHECK(bad.worst_step == 3);
  }
  cells::CellTrace tr = sample_trace(CellVariant::McLstmBasic, 5);
  tr.steps[0].c[2] = -0.5;
  CHECK_FALSE(check_boundedness(tr, 1e-12).pass);
  // float32 rounding lands near 1e-7 relative, above a double-precision tolerance.
  const cells::CellTrace q = quantize_trace_f32(sample_trace(CellVariant::McLstmBasic, 6));
  const ConservationReport rq = check_conservation(q, 1e-12);
  CHECK_FALSE(rq.pass);
  CHECK(rq.max_relative < 1e-5);
}

TEST_CASE("ablations break a conservation guarantee") {
  for (CellVariant v : cells::kAblationVariants) {
    CAPTURE(cells::variant_name(v));
    const cells::CellTrace tr = sample_trace(v, 7);
    const bool conserves = check_conservation(tr, 1e-10).pass;
    const bool stochastic = check_stochasticity(tr).pass;
    CHECK_FALSE((conserves && stochastic));
  }
}

TEST_CASE("gradcheck passes on a small model") {
  const cells::CellParams p = cells::init_params({3, 2, 2}, CellVariant::McLstmTimeDependentR, 3);
  const GradcheckSample s = random_gradcheck_sample(p, 2, 4, 1);
  const GradcheckReport r = gradcheck_model(p, s);
  CHECK(r.max_error < 1e-5);
  CHECK(r.checked == p.parameter_count());
}

TEST_CASE("gradient flow in the closed-gate regime stays near one") {
  // A product of column-stochastic matrices has spectral norm at least one.
  const cells::CellParams p = cells::init_params({8, 1, 2}, CellVariant::McLstmBasic, 1);
  const GradientFlowReport g = gradient_flow_probe(p, 20, 1);
  CHECK(g.norms.size() == 20);
  CHECK(g.final_norm >= 1.0 - 1e-9);
  CHECK(g.final_norm < 1.2);
}

TEST_CASE("log-log slope") {
  CHECK(loglog_slope({1, 2, 4, 8}, {3, 12, 48, 192}) == doctest::Approx(2.0));
}
