#pragma once
// Scalar digamma / trigamma for positive arguments.
//
// Both use the classic scheme: upward recurrence until the argument is >= 10,
// then the asymptotic (Bernoulli) series. Absolute error is far below the
// 1e-10 the callers need; unit tests pin this against a finite-difference
// oracle built on std::lgamma.

namespace fgrm {

// d/dx ln Gamma(x), x > 0. Throws std::domain_error otherwise.
double digamma(double x);

// d^2/dx^2 ln Gamma(x), x > 0. Throws std::domain_error otherwise.
double trigamma(double x);

}  // namespace fgrm
