#include "fgrm/special.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fgrm {

namespace {

[[noreturn]] void domain_fail(const char* fn, double x) {
  throw std::domain_error(std::string(fn) + ": requires x > 0, got " + std::to_string(x));
}

}  // namespace

double digamma(double x) {
  if (!(x > 0.0)) domain_fail("digamma", x);
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // psi(x) ~ ln x - 1/(2x) - sum_n B_2n / (2n x^2n)
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double tail =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return result + std::log(x) - 0.5 * inv - tail;
}

double trigamma(double x) {
  if (!(x > 0.0)) domain_fail("trigamma", x);
  double result = 0.0;
  while (x < 10.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  // psi1(x) ~ 1/x + 1/(2x^2) + sum_n B_2n / x^(2n+1)
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += inv * (1.0 +
                   inv * (0.5 +
                          inv * (1.0 / 6.0 -
                                 inv2 * (1.0 / 30.0 -
                                         inv2 * (1.0 / 42.0 -
                                                 inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))))));
  return result;
}

}  // namespace fgrm
