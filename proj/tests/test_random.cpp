#include <cmath>
#include <set>

#include "doctest.h"
#include "mclstm/random.hpp"

using namespace mclstm;

// Known-answer vectors from the Random123 distribution (kat_vectors, philox4x32 10 rounds).
TEST_CASE("philox4x32-10 known answers") {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  CHECK(philox4x32_10(A4{0, 0, 0, 0}, A2{0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, A2{0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, A2{0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible and distinct") {
  Philox a(42), b(42), c(43), d(42, 1);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
    CHECK(va != d.next_u64());
  }
  CHECK(derive_seed(1, kDataSeedTag) != derive_seed(1, kInitSeedTag));
  CHECK(derive_seed(1, kInitSeedTag) == derive_seed(1, kInitSeedTag));
  CHECK(derive_seed(1, 5) != derive_seed(2, 5));
}

TEST_CASE("uniform, below and normal have the right moments") {
  Philox rng(9);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, lo = 1.0, hi = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    s += u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(s / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("split children are independent of each other") {
  const Philox root(5);
  Philox x = root.split(1), y = root.split(2), x2 = root.split(1);
  const auto a = x.next_u64();
  CHECK(a == x2.next_u64());
  CHECK(a != y.next_u64());
}
