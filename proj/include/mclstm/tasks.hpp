#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mclstm/tensor.hpp"

namespace mclstm::tasks {

/// Version tag of the generators; bump when any sampling order changes.
inline constexpr int kGeneratorVersion = 1;

/// Batched sequences plus the descriptor that regenerates them.
struct Dataset {
  Tensor mass;     // (N x T x M)
  Tensor aux;      // (N x T x L)
  Tensor targets;  // (N x T_out) or (N x T x C) for series tasks
  std::string split;
  nlohmann::json descriptor;

  std::size_t size() const { return mass.rank() ? mass.dim(0) : 0; }
  std::size_t steps() const { return mass.rank() ? mass.dim(1) : 0; }
  std::size_t mass_width() const { return mass.rank() ? mass.dim(2) : 0; }
  std::size_t aux_width() const { return aux.rank() ? aux.dim(2) : 0; }
};

/// Rows [begin, end) of every tensor; the descriptor records the range.
Dataset subset(const Dataset& data, std::size_t begin, std::size_t end, std::string split);

// ---------------------------------------------------------------------------
// Addition problem

/// Aux channels: 0 = marker (1 at summed positions), 1 = end flag (-1 at the final step).
inline constexpr std::size_t kMarkChannel = 0;
inline constexpr std::size_t kEndChannel = 1;

struct AdditionSpec {
  std::size_t count = 1000;
  std::size_t seq_len = 100;
  double value_hi = 0.5;
  std::size_t n_marked = 2;
  std::uint64_t seed = 0;
  std::string split = "train";
};

Dataset gen_addition(const AdditionSpec& spec);

struct AdditionScenario {
  std::string name;
  std::size_t seq_len;
  double value_hi;
  std::size_t n_marked;
};

/// Training regime and the four generalization scenarios of the addition benchmark.
const std::vector<AdditionScenario>& addition_scenarios();
const AdditionScenario& addition_scenario(const std::string& name);

struct AdditionSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// `total` samples from `seed` split evenly into train/valid, plus `test_count`
/// reference-regime test samples from a seed derived from `seed`.
AdditionSplits gen_addition_reference(std::size_t total, std::size_t test_count,
                                      std::uint64_t seed);

/// Test set for a named scenario, drawn from a scenario-specific derived seed.
Dataset gen_addition_scenario(const std::string& name, std::size_t count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Arithmetic

enum class ArithmeticOp { Add, Sub, Mul };

char op_symbol(ArithmeticOp op);
ArithmeticOp parse_op(const std::string& s);
double apply_op(ArithmeticOp op, double lhs, double rhs);

/// Subset bounds are 1-based: first sum covers x_a..x_{a+c}, second x_b..x_{b+c}.
struct SubsetSpec {
  std::size_t a = 1;
  std::size_t b = 1;
  std::size_t c = 0;
};

void validate_subsets(const SubsetSpec& s, std::size_t width);

struct RecurrentArithmeticSpec {
  ArithmeticOp op = ArithmeticOp::Add;
  std::size_t steps = 10;
  SubsetSpec subsets{6, 7, 1};
  std::size_t count = 1000;
  std::size_t width = 10;
  double value_lo = 1.0;
  double value_hi = 2.0;
  std::uint64_t seed = 0;
  std::string split = "train";
};

/// Aux input is a single channel: 1 at every step, -1 at the last.
Dataset gen_recurrent_arithmetic(const RecurrentArithmeticSpec& spec);

struct StaticArithmeticSpec {
  ArithmeticOp op = ArithmeticOp::Add;
  std::uint64_t seed = 0;
  std::size_t train_count = 1000;
  std::size_t test_count = 1000;
  std::size_t width = 100;
};

struct StaticArithmeticSplits {
  Dataset train;  // inputs in U(1, 2)
  Dataset test;   // inputs in U(2, 6)
  SubsetSpec subsets;
};

/// Subsets of 25 entries overlapping by 13, placed at a seed-dependent offset.
StaticArithmeticSplits gen_static_arithmetic(const StaticArithmeticSpec& spec);

/// (sum_t sum_{k in first} x_k) op (sum_t sum_{k in second} x_k) for one sample
/// of shape (T x width), summed in row-major order.
double arithmetic_target(ArithmeticOp op, const SubsetSpec& s, const double* sample,
                         std::size_t steps, std::size_t width);

// ---------------------------------------------------------------------------
// Damped pendulum

struct PendulumConfig {
  double theta0 = 0.2;
  double length = 1.0;
  double gamma = 0.0;
  double noise_sigma = 0.0;
  std::size_t steps = 200;
  double dt = 0.08;
  double mass = 0.5;
  double gravity = 6.0;
  std::uint64_t seed = 0;
};

struct PendulumSeries {
  std::vector<double> time;
  std::vector<double> theta;
  std::vector<double> e_pot;
  std::vector<double> e_kin;
};

/// Small-angle solution of theta'' + gamma theta' + (g / l) theta = 0 started at
/// maximum displacement, converted to potential and kinetic energy.
PendulumSeries pendulum_series(const PendulumConfig& cfg);

nlohmann::json pendulum_descriptor(const PendulumConfig& cfg);

inline constexpr std::size_t kEmbeddingSize = 9;

/// sin(2 pi 2^(j-1) t / horizon) for j = 1..9.
std::array<double, kEmbeddingSize> temporal_embedding(std::size_t t, std::size_t horizon);

/// Pendulum series packaged as a single-sample dataset: zero mass input,
/// temporal embedding as aux input, (E_pot, E_kin) per step as targets (1 x T x 2).
Dataset pendulum_dataset(const PendulumConfig& cfg);

// ---------------------------------------------------------------------------

/// Regenerates a dataset from its descriptor; bitwise identical to the original.
Dataset regenerate(const nlohmann::json& descriptor);

// Columnar file: 8-byte magic "MCLSTMDS", u32 version, u64 header length, header
// JSON (descriptor, split, array table), then little-endian float64 arrays.
inline constexpr int kDatasetFileVersion = 1;

void write_dataset(const std::filesystem::path& path, const Dataset& data,
                   const nlohmann::json& extra = nlohmann::json::object());
Dataset read_dataset(const std::filesystem::path& path);
nlohmann::json read_dataset_header(const std::filesystem::path& path);

}  // namespace mclstm::tasks
