#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mclstm/cells.hpp"
#include "mclstm/tasks.hpp"

namespace mclstm::training {

using engine::Var;

// ---------------------------------------------------------------------------
// Adam

/// Thrown when a gradient entry is NaN or infinite; names the parameter.
class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::string parameter, std::size_t index, double value);
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

OptimizerState make_adam(const std::map<std::string, Tensor>& params, const AdamConfig& config);

/// One bias-corrected Adam update. Gradients for every parameter are checked
/// before anything is modified, so a NaN leaves params and state untouched.
void adam_step(OptimizerState& opt, std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads);

/// Rescales all gradients jointly so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm);

// ---------------------------------------------------------------------------
// Losses

double mse_loss(const Tensor& pred, const Tensor& target);
Var mse_loss(const Var& pred, const Var& target);

/// Pearson correlation; returns nullopt when either series has zero variance.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

struct PendulumLossInfo {
  double mse = 0.0;
  std::array<double, 2> r{0.0, 0.0};
  /// Channels whose target variance is zero; their correlation term is 0.
  std::array<bool, 2> zero_variance{false, false};
};

/// MSE(pred, target) minus the mean over both channels of Pearson r, for
/// series of shape (T x 2) with T >= 2.
Var pendulum_loss(const Var& pred, const Tensor& target, PendulumLossInfo* info = nullptr);
double pendulum_loss(const Tensor& pred, const Tensor& target, PendulumLossInfo* info = nullptr);

// ---------------------------------------------------------------------------
// Curriculum

struct CurriculumState {
  std::size_t window = 11;
  double threshold = -0.9;
  std::size_t increment = 5;
  std::size_t cap = 200;
};

CurriculumState curriculum_advance(const CurriculumState& state, double combined_loss);

// ---------------------------------------------------------------------------
// Sequence-to-one training

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  /// Largest relative conservation residual among checked batches; NaN if none.
  double conservation_residual = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 0.01;
  /// L2 penalty on the linear readout weights; 0 disables it.
  double l2 = 0.0;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
  /// Fraction of batches re-run with a trace for the conservation check.
  double verify_fraction = 0.01;
  double verify_tol = 1e-10;
  std::uint64_t seed = 0;
  /// Batch size used for evaluation passes.
  std::size_t eval_batch = 500;
  /// Validation MSE is logged every this many epochs; the last epoch always is.
  std::size_t valid_every = 1;
};

struct TrainResult {
  cells::CellParams params;
  std::vector<EpochMetrics> history;
  bool diverged = false;
  std::string divergence_reason;
  double final_train_mse = 0.0;
  double final_valid_mse = 0.0;
  std::size_t conservation_checks = 0;
  std::size_t conservation_violations = 0;
  double max_conservation_residual = 0.0;
};

/// Per-sample predictions (N x out) of a sequence-to-one model; c0 = 0.
Tensor predict(const cells::CellParams& params, const tasks::Dataset& data,
               std::size_t batch = 500);
double evaluate_mse(const cells::CellParams& params, const tasks::Dataset& data,
                    std::size_t batch = 500);

TrainResult train_sequence_to_one(const TrainConfig& config, const tasks::Dataset& train,
                                  const tasks::Dataset& valid, cells::CellParams init);

inline const std::vector<double> kDefaultLrGrid{0.1, 0.05, 0.01, 0.005, 0.001};

struct LrCandidate {
  double lr = 0.0;
  bool diverged = false;
  double valid_mse = 0.0;
};

struct LrSearchResult {
  std::vector<LrCandidate> candidates;
  /// Index into candidates; nullopt when every run diverged.
  std::optional<std::size_t> best;
  std::optional<TrainResult> best_result;
};

/// Trains one model per learning rate from the same initialization and keeps
/// the one with the lowest finite validation MSE.
LrSearchResult select_learning_rate(const TrainConfig& config, const std::vector<double>& grid,
                                    const tasks::Dataset& train, const tasks::Dataset& valid,
                                    const cells::CellParams& init);

// ---------------------------------------------------------------------------
// Autoregressive pendulum

struct PendulumTrainConfig {
  double lr = 0.01;
  std::size_t max_iterations = 3000;
  /// Iterations to keep training once the window covers the whole series.
  std::size_t full_window_iterations = 400;
  CurriculumState curriculum;
  double clip_norm = 0.0;
  /// Apply the 1.02 c - 0.01 readout correction.
  bool affine_offset = false;
  std::uint64_t seed = 0;
};

struct PendulumIteration {
  std::size_t iteration = 0;
  std::size_t window = 0;
  double loss = 0.0;
};

struct PendulumTrainResult {
  cells::CellParams params;
  std::vector<PendulumIteration> history;
  bool diverged = false;
  std::string divergence_reason;
  bool zero_variance_flagged = false;
};

/// Closed-loop rollout from c0 = (E_pot(0), E_kin(0)); row t holds the
/// predicted energies at step t (row 0 is c0 itself). Shape (steps x 2).
Tensor rollout_pendulum(const cells::CellParams& params, const tasks::Dataset& series,
                        std::size_t steps, bool affine_offset = false);

PendulumTrainResult train_autoregressive_pendulum(const PendulumTrainConfig& config,
                                                  const tasks::Dataset& series,
                                                  cells::CellParams init);

// ---------------------------------------------------------------------------
// Artifacts

/// Metrics CSV with columns epoch,split,loss,conservation_residual. The first
/// line is a comment carrying the config hash and seed.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history,
                       const std::string& config_hash, std::uint64_t seed);

nlohmann::json summary_json(const TrainResult& result);

/// Threshold below which an arithmetic model counts as successful: the MSE the
/// exact operation incurs when both subset sums carry a relative error of 1e-5.
double arithmetic_success_threshold(tasks::ArithmeticOp op, const tasks::SubsetSpec& subsets,
                                    const tasks::Dataset& data);

}  // namespace mclstm::training
