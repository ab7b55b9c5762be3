#pragma once

// End-to-end protocols: data generation, learning-rate selection, multi-seed
// training and evaluation, returned as plain structs with JSON views.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mclstm/training.hpp"

namespace mclstm::training {

using Progress = std::function<void(const std::string&)>;

struct AdditionData {
  tasks::Dataset train;
  tasks::Dataset valid;
  /// Test set per scenario name; "reference" is the in-distribution split.
  std::map<std::string, tasks::Dataset> tests;
};

AdditionData make_addition_data(std::size_t total, std::size_t test_count, std::uint64_t seed,
                                const std::vector<std::string>& scenarios);

struct AdditionExperimentConfig {
  cells::CellVariant variant = cells::CellVariant::McLstmBasic;
  std::size_t hidden = 10;
  cells::ReadoutMode readout = cells::ReadoutMode::SumAll;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::vector<double> lr_grid = kDefaultLrGrid;
  /// Fixed learning rate; skips the grid search when set.
  std::optional<double> lr;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double l2 = 0.0;
  double clip_norm = 0.0;
  double verify_fraction = 0.01;
  double verify_tol = 1e-10;
  std::size_t valid_every = 10;
  /// Worker threads for the per-seed runs that follow the grid search.
  std::size_t parallel_seeds = 1;
};

struct AdditionRun {
  std::uint64_t seed = 0;
  double lr = 0.0;
  TrainResult result;
  /// Test MSE per scenario; NaN for diverged runs.
  std::map<std::string, double> test_mse;
};

struct AdditionExperiment {
  std::vector<LrCandidate> lr_candidates;
  std::optional<double> selected_lr;
  std::vector<AdditionRun> runs;
  /// Median over converged runs per scenario; NaN when none converged.
  std::map<std::string, double> median_mse;
  std::size_t non_converged = 0;

  nlohmann::json to_json() const;
};

/// The grid search runs on the first seed; its winning run is kept as that
/// seed's result and the remaining seeds train at the selected rate.
AdditionExperiment run_addition_experiment(const AdditionExperimentConfig& config,
                                           const AdditionData& data,
                                           const Progress& progress = {});

struct PendulumExperimentConfig {
  tasks::PendulumConfig series;
  PendulumTrainConfig train;
  std::vector<std::size_t> hypernet_hidden{50, 100};
  std::uint64_t seed = 0;
};

struct PendulumExperiment {
  PendulumTrainResult train;
  Tensor rollout;  // (T x 2)
  Tensor target;   // (T x 2)
  double rollout_mse = 0.0;
  std::array<double, 2> pearson{0.0, 0.0};

  nlohmann::json to_json() const;
};

PendulumExperiment run_pendulum_experiment(const PendulumExperimentConfig& config);

double median(std::vector<double> values);

}  // namespace mclstm::training
