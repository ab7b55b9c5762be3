#pragma once

// Seeded property sweeps shared by the CLI, the acceptance runner and the
// Python module. Each returns a pass flag plus a JSON detail block with the
// worst case it saw.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mclstm/cells.hpp"

namespace mclstm::verify {

struct SuiteOutcome {
  std::string name;
  bool pass = true;
  /// Set when failure is the expected result (ablations); pass then means
  /// "failed as expected".
  bool expected_failure = false;
  nlohmann::json detail = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct ConservationSuiteConfig {
  std::size_t configs = 1000;
  std::size_t batch = 2;
  double tol = 1e-10;
  std::uint64_t seed = 0;
};

/// Random conserving configurations (K in {1,2,4,8,64}, M in {1,3}, L in {1,5},
/// T in {1,10,50}, all conserving recurrent variants, perturbed parameters and
/// mass scales spanning four decades). Each trace must satisfy the
/// conservation identity, boundedness and column stochasticity.
SuiteOutcome conservation_suite(const ConservationSuiteConfig& config);

struct AblationSuiteConfig {
  std::size_t seeds = 100;
  /// Absolute residual above which a trace counts as violating conservation.
  double threshold = 1e-6;
  /// Fraction of seeds that must violate it.
  double required_fraction = 0.95;
  std::uint64_t seed = 0;
};

/// Each ablation variant with nonzero mass input and open output gates.
SuiteOutcome ablation_suite(const AblationSuiteConfig& config);

struct MarkovSuiteConfig {
  std::size_t seeds = 50;
  std::size_t cells = 5;
  std::size_t steps = 1000;
  double tol = 1e-8;
  std::uint64_t seed = 0;
};

/// Gateless iteration c <- R c for strictly positive random column-stochastic R.
SuiteOutcome markov_suite(const MarkovSuiteConfig& config);

struct SpectralSuiteConfig {
  std::vector<std::size_t> cells{2, 4, 8, 16, 32, 64, 128, 256, 512};
  std::size_t seeds = 20;
  /// The largest K is also held to s1 <= limit_bound.
  double limit_bound = 1.2;
  std::uint64_t seed = 0;
};

/// s1 of column-normalised U(0, 1) matrices lies in [1, sqrt(K)].
SuiteOutcome spectral_suite(const SpectralSuiteConfig& config);

struct GradcheckSuiteConfig {
  std::vector<cells::CellVariant> variants{std::begin(cells::kAllVariants),
                                           std::end(cells::kAllVariants)};
  std::size_t seeds = 20;
  std::size_t cells = 8;
  std::size_t steps = 8;
  std::size_t mass = 3;
  std::size_t aux = 5;
  std::size_t batch = 2;
  double tol = 1e-5;
  /// 0 checks every parameter entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

SuiteOutcome gradcheck_suite(const GradcheckSuiteConfig& config);

}  // namespace mclstm::verify
