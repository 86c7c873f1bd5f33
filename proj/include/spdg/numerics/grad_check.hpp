// Copyright 2026 The spdg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/tape.hpp"
#include "spdg/numerics/tensor.hpp"

namespace spdg {

/// Builds a scalar on the given tape from leaves bound to the checked inputs.
using MultiObjective = std::function<Var(Tape&, std::span<const Var>)>;
using Objective = std::function<Var(Tape&, const Var&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

namespace detail {

inline double eval_objective(const MultiObjective& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
  const double v = f(tape, leaves).value().item();
  if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "objective is not finite during gradient check");
  return v;
}

}  // namespace detail

/// Compares tape gradients with central differences over every coordinate of
/// every input. Error per coordinate is |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport finite_diff_grad_check(const MultiObjective& f, std::vector<Tensor> inputs, double h = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
    const Var loss = f(tape, leaves);
    if (!std::isfinite(loss.value().item())) fail(ErrorCode::kNonFinite, "objective is not finite during gradient check");
    tape.backward(loss);
    for (const Var& leaf : leaves) analytic.push_back(tape.grad(leaf));
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double original = inputs[k][i];
      inputs[k][i] = original + h;
      const double up = detail::eval_objective(f, inputs);
      inputs[k][i] = original - h;
      const double down = detail::eval_objective(f, inputs);
      inputs[k][i] = original;

      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = analytic[k][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

inline double finite_diff_grad_check(const Objective& f, const Tensor& x, double h = 1e-5) {
  const MultiObjective wrapped = [&f](Tape& tape, std::span<const Var> vars) { return f(tape, vars[0]); };
  return finite_diff_grad_check(wrapped, std::vector<Tensor>{x}, h).max_rel_error;
}

}  // namespace spdg
