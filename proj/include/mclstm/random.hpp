#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mclstm {

/// Counter-based Philox4x32-10 generator (Salmon et al., Random123).
///
/// Output depends only on (key, counter), so streams are reproducible across
/// platforms and compilers. Gaussian draws use Box-Muller on top of the
/// 53-bit uniform conversion rather than std::normal_distribution, whose
/// algorithm is implementation-defined.
class Philox {
 public:
  static constexpr std::string_view kAlgorithm = "philox4x32-10";

  explicit Philox(std::uint64_t seed, std::uint64_t stream = 0);

  /// Independent child generator; children with distinct tags never share a key.
  Philox split(std::uint64_t tag) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// Hierarchical seed derivation: a stable 64-bit child seed for (root, tag).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag);

// Stream tags for the per-run seed hierarchy.
inline constexpr std::uint64_t kDataSeedTag = 1;
inline constexpr std::uint64_t kInitSeedTag = 2;
inline constexpr std::uint64_t kShuffleSeedTag = 3;

}  // namespace mclstm
