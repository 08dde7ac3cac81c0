// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "toast/autodiff.hpp"

namespace toast {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;  // index into the params list
  std::size_t worst_index = 0;  // coordinate within that parameter
  double worst_tape = 0.0;
  double worst_numeric = 0.0;
};

/// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Compares tape gradients against central differences
/// (f(p+h) - f(p-h)) / 2h for every coordinate of every parameter.
///
/// The relative error of one coordinate is |tape - numeric| divided by
/// max(|tape|, |numeric|, floor); the floor keeps coordinates whose true
/// gradient is zero from reporting rounding noise as a large relative error.
/// `f` must be deterministic. Parameter values are restored on return and
/// their grad buffers are left holding the tape gradients.
inline GradCheckResult finite_diff_check(const LossBuilder& f, const std::vector<Tensor<double>*>& params,
                                         double h = 1e-5, double floor = 1e-6) {
  for (auto* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    Tape<double> tape;
    tape.backward(f(tape));
  }
  auto evaluate = [&f] {
    Tape<double> tape;
    return f(tape).value().item();
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = evaluate();
      p[i] = saved - h;
      const double down = evaluate();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double tape_grad = p.grad()[i];
      const double denom = std::max({std::abs(tape_grad), std::abs(numeric), floor});
      const double rel = std::abs(tape_grad - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_tape = tape_grad;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace toast
