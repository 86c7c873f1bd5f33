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

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/tensor.hpp"

namespace spdg {

struct OptimizerState {
  std::vector<Tensor> velocity;
  std::size_t step = 0;

  static OptimizerState zeros_like(const std::vector<const Tensor*>& params) {
    OptimizerState s;
    for (const Tensor* p : params) s.velocity.emplace_back(p->shape(), 0.0);
    return s;
  }
};

struct SgdSettings {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Classic SGD with coupled weight decay:
///   g' = g + wd * p;  v = m * v + g';  p = p - lr * v
/// A non-finite gradient aborts before anything is modified.
inline void sgd_momentum_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, OptimizerState& state,
                              double lr, const SgdSettings& s) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    fail(ErrorCode::kDimension, "optimizer: parameter, gradient and velocity counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k].shape() || params[k]->shape() != state.velocity[k].shape()) {
      fail(ErrorCode::kDimension, "optimizer: shape mismatch for parameter " + std::to_string(k) + " " +
                                      shape_string(params[k]->shape()) + " vs grad " + shape_string(grads[k].shape()));
    }
    if (!grads[k].all_finite()) {
      fail(ErrorCode::kNonFinite, "optimizer: non-finite gradient in parameter " + std::to_string(k) + " at step " +
                                      std::to_string(state.step));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& v = state.velocity[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + s.weight_decay * p[i];
      v[i] = s.momentum * v[i] + gi;
      p[i] -= lr * v[i];
    }
  }
  ++state.step;
}

struct LrSchedule {
  std::size_t steps_per_epoch = 1;
  std::size_t epochs = 1;
  double lr_max = 0.002;
  double lr_warmup = 1e-5;

  std::size_t total_steps() const { return steps_per_epoch * epochs; }
  std::size_t cosine_steps() const { return steps_per_epoch * (epochs - 1); }
};

/// 0.5 * lr_max * (1 + cos(pi * t / t_max)), floor 0.
inline double cosine_lr(std::size_t t, std::size_t t_max, double lr_max) {
  if (t_max == 0) return lr_max;
  return 0.5 * lr_max * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_max)));
}

/// Fixed warmup rate for all of epoch 0, then per-step cosine annealing from
/// lr_max down to 0 over the remaining epochs.
inline double lr_at(std::size_t step, const LrSchedule& s) {
  if (s.steps_per_epoch == 0 || s.epochs == 0) fail(ErrorCode::kConfig, "schedule needs at least one step and one epoch");
  if (step >= s.total_steps()) {
    fail(ErrorCode::kConfig, "step " + std::to_string(step) + " is past the schedule's " + std::to_string(s.total_steps()) + " steps");
  }
  if (step < s.steps_per_epoch) return s.lr_warmup;
  return cosine_lr(step - s.steps_per_epoch, s.cosine_steps(), s.lr_max);
}

}  // namespace spdg
