#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "fgrm/gradcheck.hpp"

using fgrm::ParameterSet;
using fgrm::Tensor;

TEST_CASE("grad_check passes on a correct composite expression") {
  ParameterSet ps;
  ps.add("w", Tensor::from_values({2, 2}, {0.4, -0.3, 0.2, 0.8}, true));
  ps.add("b", Tensor::from_values({2}, {0.1, -0.2}, true));
  const auto model = [](ParameterSet& p) {
    const Tensor x = Tensor::from_values({2, 2}, {1.0, 2.0, -0.5, 0.3});
    return fgrm::mean(fgrm::softplus(fgrm::matmul(p.at("w"), x)) + p.at("b"));
  };
  const fgrm::GradCheckReport r = fgrm::grad_check(model, ps, 1e-6);
  CHECK(r.ok());
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("grad_check flags a deliberately wrong derivative") {
  ParameterSet ps;
  ps.add("w", Tensor::from_values({3}, {0.5, 1.0, 2.0}, true));
  const auto model = [](ParameterSet& p) {
    // value x^2 but derivative claimed as 3x (should be 2x)
    const Tensor wrong = fgrm::custom_unary(
        p.at("w"), "square_bad", [](double x) { return x * x; },
        [](double x) { return 3.0 * x; });
    return fgrm::sum(wrong);
  };
  const fgrm::GradCheckReport r = fgrm::grad_check(model, ps, 1e-4);
  CHECK_FALSE(r.ok());
  CHECK(r.flagged.size() == 3);
  CHECK(r.worst.param == "w");
  CHECK(r.max_rel_err > 0.1);
}

TEST_CASE("grad_check rejects a loss detached from the parameters") {
  ParameterSet ps;
  ps.add("w", Tensor::from_values({1}, {1.0}, true));
  const auto model = [](ParameterSet&) { return Tensor::scalar(5.0); };
  CHECK_THROWS_AS(fgrm::grad_check(model, ps, 1e-6), std::invalid_argument);
}
