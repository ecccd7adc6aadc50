#pragma once

#include <algorithm>
#include <cmath>

#include "msync/ops.hpp"
#include "msync/tape.hpp"

namespace msync {

// Central finite-difference check of reverse-mode gradients.
//
// `fn` builds a scalar loss from a watched input var: Var fn(Tape<double>&, Var).
// Returns the maximum over elements of
//   |analytic - central| / max(|analytic|, |central|, 1e-8).
// The function must be deterministic; two forward passes are compared
// bitwise and NonDeterministicFunction is thrown if they differ.
template <typename Fn>
double grad_check(Fn fn, const Tensor<double>& x, double eps = 1e-5) {
  auto eval = [&fn](const Tensor<double>& point) {
    Tape<double> tape;
    Parameter<double> p("x", point);
    Var loss = fn(tape, tape.watch(p));
    if (tape.val(loss).size() != 1)
      throw NonScalarLoss("grad_check: fn did not produce a scalar");
    return double(tape.val(loss).item());
  };

  Tape<double> tape;
  Parameter<double> p("x", x);
  Var xv = tape.watch(p);
  Var loss = fn(tape, xv);
  if (tape.val(loss).size() != 1)
    throw NonScalarLoss("grad_check: fn did not produce a scalar");
  const double f0 = tape.val(loss).item();
  const double f0_again = eval(x);
  if (f0 != f0_again)
    throw NonDeterministicFunction("forward passes disagree: " + std::to_string(f0) +
                                   " vs " + std::to_string(f0_again));
  tape.backward(loss);
  const Tensor<double> analytic =
      tape.grad_live(xv) ? tape.grad(xv) : Tensor<double>(x.shape());

  double worst = 0.0;
  Tensor<double> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double f_plus = eval(probe);
    probe[i] = saved - eps;
    const double f_minus = eval(probe);
    probe[i] = saved;
    const double central = (f_plus - f_minus) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace msync
