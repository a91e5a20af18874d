#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fgrm/rng.hpp"

TEST_CASE("rng streams are deterministic in the seed") {
  fgrm::Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const uint64_t va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    any_diff = any_diff || va != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("mix_seed separates substreams and is order sensitive") {
  const uint64_t s = 7;
  CHECK(fgrm::mix_seed(s, {1}) != fgrm::mix_seed(s, {2}));
  CHECK(fgrm::mix_seed(s, {1, 2}) != fgrm::mix_seed(s, {2, 1}));
  CHECK(fgrm::mix_seed(s, {1, 2}) == fgrm::mix_seed(s, {1, 2}));
  CHECK(fgrm::mix_seed(s, {1}) != fgrm::mix_seed(s + 1, {1}));
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
  fgrm::Rng rng(1);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform_int is in range and covers all values") {
  fgrm::Rng rng(3);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    const int v = rng.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("normal has roughly standard moments") {
  fgrm::Rng rng(5);
  const int n = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("categorical follows the weights") {
  fgrm::Rng rng(9);
  const std::vector<double> w = {0.2, 0.5, 0.3};
  std::vector<int> counts(3, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) counts[static_cast<size_t>(rng.categorical(w))]++;
  for (int k = 0; k < 3; ++k) {
    CHECK(static_cast<double>(counts[static_cast<size_t>(k)]) / n ==
          doctest::Approx(w[static_cast<size_t>(k)]).epsilon(0.1));
  }
  const std::vector<double> bad = {0.1, -0.2};
  CHECK_THROWS_AS(rng.categorical(bad), std::invalid_argument);
  const std::vector<double> zero = {0.0, 0.0};
  CHECK_THROWS_AS(rng.categorical(zero), std::invalid_argument);
  CHECK_THROWS_AS(rng.categorical(std::vector<double>{}), std::invalid_argument);
}
