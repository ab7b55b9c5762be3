// Reduced versions of the property sweeps; the full sizes run in the
// acceptance binary and through `mclstm-cli verify`.
#include "doctest.h"
#include "mclstm/suites.hpp"

using namespace mclstm::verify;

TEST_CASE("conservation, boundedness and stochasticity over random configurations") {
  const SuiteOutcome o = conservation_suite({60, 2, 1e-10, 11});
  INFO(o.to_json().dump());
  CHECK(o.pass);
}

TEST_CASE("every ablation violates conservation") {
  const SuiteOutcome o = ablation_suite({10, 1e-6, 0.95, 3});
  INFO(o.to_json().dump());
  CHECK(o.pass);
  CHECK(o.expected_failure);
}

TEST_CASE("gateless redistribution converges to the stationary distribution") {
  const SuiteOutcome o = markov_suite({10, 5, 1000, 1e-8, 2});
  INFO(o.to_json().dump());
  CHECK(o.pass);
}

TEST_CASE("spectral norm of random column-stochastic matrices") {
  SpectralSuiteConfig cfg;
  cfg.cells = {2, 8, 32, 128};
  cfg.seeds = 5;
  const SuiteOutcome o = spectral_suite(cfg);
  INFO(o.to_json().dump());
  CHECK(o.pass);
}

TEST_CASE("analytic gradients for every variant") {
  GradcheckSuiteConfig cfg;
  cfg.seeds = 1;
  cfg.cells = 4;
  cfg.steps = 4;
  const SuiteOutcome o = gradcheck_suite(cfg);
  INFO(o.to_json().dump());
  CHECK(o.pass);
}
