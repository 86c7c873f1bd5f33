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
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/rng.hpp"

namespace spdg {

struct TrainValSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per-domain seeded shuffle, then the first floor(ratio * n) indices of each
/// domain go to train. `domains[i]` is the domain of candidate index `indices[i]`.
inline TrainValSplit split_train_val(const std::vector<std::size_t>& indices, const std::vector<std::size_t>& domains,
                                     double ratio, std::uint64_t seed) {
  if (indices.size() != domains.size()) fail(ErrorCode::kDimension, "split: one domain label per index required");
  if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorCode::kConfig, "split ratio must lie in (0, 1)");
  std::map<std::size_t, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < indices.size(); ++i) by_domain[domains[i]].push_back(indices[i]);
  TrainValSplit out;
  for (auto& [d, members] : by_domain) {
    if (members.size() < 10) {
      fail(ErrorCode::kConfig, "domain " + std::to_string(d) + " has " + std::to_string(members.size()) +
                                   " samples; at least 10 are needed to split");
    }
    Rng rng(derive_seed(seed, "split:" + std::to_string(d)));
    rng.shuffle(members);
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(members.size()) + 1e-9));
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  return out;
}

/// Domain-stratified batches: every batch draws a fixed quota from each domain
/// (B / D, remainder rotated across domains), so each domain present has at
/// least two members. Batching stops once any domain cannot fill its quota.
class StratifiedBatcher {
 public:
  StratifiedBatcher(std::vector<std::size_t> indices, const std::vector<std::size_t>& domains, std::size_t batch_size,
                    std::uint64_t seed)
      : batch_size_(batch_size), rng_(derive_seed(seed, "batches")) {
    if (indices.size() != domains.size()) fail(ErrorCode::kDimension, "batcher: one domain label per index required");
    for (std::size_t i = 0; i < indices.size(); ++i) pools_[domains[i]].push_back(indices[i]);
    if (pools_.empty()) fail(ErrorCode::kConfig, "batcher: no training samples");
    if (batch_size_ < 2 * pools_.size()) {
      fail(ErrorCode::kConfig, "batch size " + std::to_string(batch_size_) + " cannot hold 2 samples from each of " +
                                   std::to_string(pools_.size()) + " domains");
    }
    for (const auto& [d, pool] : pools_) {
      if (pool.size() < quota(0, rank_of(d))) {
        fail(ErrorCode::kConfig, "domain " + std::to_string(d) + " has " + std::to_string(pool.size()) +
                                     " training samples, fewer than one batch quota");
      }
    }
  }

  std::size_t num_domains() const { return pools_.size(); }

  /// Batches for one epoch; advances the shuffle stream.
  std::vector<std::vector<std::size_t>> epoch() {
    std::vector<std::vector<std::size_t>> shuffled;
    for (auto& [d, pool] : pools_) {
      std::vector<std::size_t> p = pool;
      rng_.shuffle(p);
      shuffled.push_back(std::move(p));
    }
    std::vector<std::size_t> cursor(shuffled.size(), 0);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t b = 0;; ++b) {
      bool ok = true;
      for (std::size_t k = 0; k < shuffled.size(); ++k) ok = ok && cursor[k] + quota(b, k) <= shuffled[k].size();
      if (!ok) break;
      std::vector<std::size_t> batch;
      for (std::size_t k = 0; k < shuffled.size(); ++k) {
        const std::size_t q = quota(b, k);
        batch.insert(batch.end(), shuffled[k].begin() + static_cast<std::ptrdiff_t>(cursor[k]),
                     shuffled[k].begin() + static_cast<std::ptrdiff_t>(cursor[k] + q));
        cursor[k] += q;
      }
      batches.push_back(std::move(batch));
    }
    return batches;
  }

  /// Batches per epoch; identical for every epoch.
  std::size_t batches_per_epoch() const {
    std::vector<std::size_t> cursor(pools_.size(), 0);
    std::size_t count = 0;
    for (std::size_t b = 0;; ++b) {
      std::size_t k = 0;
      for (const auto& [d, pool] : pools_) {
        if (cursor[k] + quota(b, k) > pool.size()) return count;
        cursor[k] += quota(b, k);
        ++k;
      }
      ++count;
    }
  }

 private:
  std::size_t quota(std::size_t batch, std::size_t rank) const {
    const std::size_t d = pools_.size();
    const std::size_t base = batch_size_ / d, extra = batch_size_ % d;
    return base + (((rank + d - batch % d) % d) < extra ? 1 : 0);
  }

  std::size_t rank_of(std::size_t domain) const {
    std::size_t r = 0;
    for (const auto& [d, pool] : pools_) {
      if (d == domain) return r;
      ++r;
    }
    return r;
  }

  std::size_t batch_size_;
  Rng rng_;
  std::map<std::size_t, std::vector<std::size_t>> pools_;
};

}  // namespace spdg
