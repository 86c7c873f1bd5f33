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

// The concept world is the shared ground truth that both the synthetic data
// generator and the frozen encoder bundle are built from: every class name has
// a prototype in input space and every style name has a linear style transform.
// The bundle is fitted against this world at construction, which is what lets
// a frozen "pre-trained" model recognise styles it never saw during prompter
// training.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spdg/numerics/rng.hpp"
#include "spdg/numerics/tensor.hpp"

namespace spdg {

inline constexpr std::uint64_t kDefaultWorldSeed = 0x5EED5EEDULL;

/// Hand-crafted style words used for regularization anchors and reports.
inline const std::array<std::string, 8> kStyleWords = {"photo",   "art painting", "cartoon",   "sketch",
                                                       "clipart", "infograph",    "quickdraw", "product"};

/// Words needed by the prompt templates ("a photo of a X", "a D style of a X.").
inline const std::array<std::string, 5> kTemplateWords = {"a", "photo", "of", "style", "."};

class ConceptWorld {
 public:
  ConceptWorld(std::uint64_t world_seed, std::size_t input_dim) : seed_(world_seed), dim_(input_dim) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t input_dim() const noexcept { return dim_; }

  /// Unit-norm class prototype for a concept name.
  std::vector<double> prototype(std::string_view name) const {
    Rng rng(derive_seed(seed_, std::string("prototype:") + std::string(name)));
    std::vector<double> v(dim_);
    for (double& x : v) x = rng.normal();
    return unit(v);
  }

  /// Random style direction R with ||R||_F = sqrt(dim), i.e. unit RMS gain on
  /// unit vectors.
  Tensor style_direction(std::string_view name) const {
    Rng rng(derive_seed(seed_, std::string("style:") + std::string(name)));
    Tensor r(Shape{dim_, dim_});
    double sq = 0.0;
    for (double& x : r.storage()) {
      x = rng.normal();
      sq += x * x;
    }
    const double s = std::sqrt(static_cast<double>(dim_) / sq);
    for (double& x : r.storage()) x *= s;
    return r;
  }

  /// A = I + strength * R.
  Tensor style_transform(std::string_view name, double strength) const {
    Tensor a = style_direction(name);
    for (double& x : a.storage()) x *= strength;
    for (std::size_t i = 0; i < dim_; ++i) a.at(i, i) += 1.0;
    return a;
  }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// y = A x for a square transform.
inline std::vector<double> apply_transform(const Tensor& a, std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i] += a.at(i, j) * x[j];
  return y;
}

}  // namespace spdg
