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

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "spdg/trainer/batching.hpp"
#include "spdg/trainer/config.hpp"
#include "spdg/trainer/optimizer.hpp"
#include "spdg/trainer/train.hpp"

namespace spdg {
namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternalInvariant;
}

double step_once(Tensor& p, const Tensor& g, OptimizerState& s, double lr, SgdSettings settings) {
  sgd_momentum_step({&p}, {g}, s, lr, settings);
  return p[0];
}

TEST(SgdMomentum, HandRecurrence) {
  Tensor p = Tensor::vector({1.0});
  OptimizerState s = OptimizerState::zeros_like({&p});
  const Tensor g = Tensor::vector({0.5});
  EXPECT_NEAR(step_once(p, g, s, 0.1, {0.9, 0.0}), 0.95, 1e-15);
  EXPECT_NEAR(step_once(p, g, s, 0.1, {0.9, 0.0}), 0.855, 1e-15);
  EXPECT_NEAR(s.velocity[0][0], 0.95, 1e-15);
  EXPECT_EQ(s.step, 2u);
}

TEST(SgdMomentum, DecayOnlyUpdate) {
  Tensor p = Tensor::vector({1.0});
  OptimizerState s = OptimizerState::zeros_like({&p});
  EXPECT_NEAR(step_once(p, Tensor::vector({0.0}), s, 0.1, {0.0, 5e-4}), 0.99995, 1e-15);
}

TEST(SgdMomentum, ZeroGradientDecaysVelocityOnly) {
  Tensor p = Tensor::vector({2.0});
  OptimizerState s = OptimizerState::zeros_like({&p});
  s.velocity[0][0] = 1.0;
  step_once(p, Tensor::vector({0.0}), s, 0.0, {0.9, 0.0});
  EXPECT_EQ(p[0], 2.0);
  EXPECT_NEAR(s.velocity[0][0], 0.9, 1e-15);
}

TEST(SgdMomentum, NonFiniteGradientLeavesParamsUntouched) {
  Tensor p = Tensor::vector({1.0, 2.0});
  OptimizerState s = OptimizerState::zeros_like({&p});
  EXPECT_EQ(code_of([&] { sgd_momentum_step({&p}, {Tensor::vector({0.1, std::nan("")})}, s, 0.1, {}); }), ErrorCode::kNonFinite);
  EXPECT_EQ(p, Tensor::vector({1.0, 2.0}));
  EXPECT_EQ(s.step, 0u);
}

TEST(SgdMomentum, DescendsConvexQuadratic) {
  // f(p) = 0.5 * p^T diag(h) p with a spread of curvatures. Plain descent is
  // monotone for lr < 2 / max(h); heavy-ball momentum oscillates but converges.
  const std::vector<double> h{0.5, 1.0, 2.0, 4.0};
  auto f = [&](const Tensor& p) {
    double v = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) v += 0.5 * h[i] * p[i] * p[i];
    return v;
  };
  for (double momentum : {0.0, 0.9}) {
    Tensor p = Tensor::vector({1.0, -2.0, 0.5, 3.0});
    OptimizerState s = OptimizerState::zeros_like({&p});
    const double start = f(p);
    double prev = start;
    for (int it = 0; it < 200; ++it) {
      Tensor g(p.shape());
      for (std::size_t i = 0; i < h.size(); ++i) g[i] = h[i] * p[i];
      sgd_momentum_step({&p}, {g}, s, 0.01, {momentum, 0.0});
      if (momentum == 0.0) {
        EXPECT_LE(f(p), prev) << it;
      }
      prev = f(p);
    }
    EXPECT_LT(prev, (momentum == 0.0 ? 0.2 : 1e-3) * start) << momentum;
  }
}

TEST(LrSchedule, WarmupThenCosine) {
  const LrSchedule s{10, 3, 0.002, 1e-5};
  for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(lr_at(t, s), 1e-5);
  EXPECT_EQ(lr_at(10, s), 0.002);
  EXPECT_NEAR(lr_at(20, s), 0.001, 1e-15);
  EXPECT_NEAR(cosine_lr(20, 20, 0.002), 0.0, 1e-18);
  EXPECT_EQ(code_of([&] { lr_at(30, s); }), ErrorCode::kConfig);
}

TEST(LrSchedule, NonIncreasingAfterWarmup) {
  const LrSchedule s{7, 5, 0.002, 1e-5};
  for (std::size_t t = s.steps_per_epoch + 1; t < s.total_steps(); ++t) EXPECT_LE(lr_at(t, s), lr_at(t - 1, s));
  EXPECT_GE(lr_at(s.total_steps() - 1, s), 0.0);
}

TEST(LrSchedule, DefaultsFollowTheRecipe) {
  const RunConfig c;
  EXPECT_EQ(c.lr_max, 0.002);
  EXPECT_EQ(c.lr_warmup, 1e-5);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 5e-4);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.mc_samples, 40u);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> labelled(std::size_t domains, std::size_t per) {
  std::vector<std::size_t> idx, dom;
  for (std::size_t d = 0; d < domains; ++d)
    for (std::size_t i = 0; i < per; ++i) {
      idx.push_back(1000 * d + i);
      dom.push_back(d);
    }
  return {idx, dom};
}

TEST(SplitTrainVal, NinetyTenPerDomain) {
  const auto [idx, dom] = labelled(3, 100);
  const TrainValSplit s = split_train_val(idx, dom, 0.9, 4);
  std::map<std::size_t, std::size_t> train_count, val_count;
  for (std::size_t i : s.train) ++train_count[i / 1000];
  for (std::size_t i : s.val) ++val_count[i / 1000];
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(train_count[d], 90u);
    EXPECT_EQ(val_count[d], 10u);
  }
}

TEST(SplitTrainVal, DisjointExhaustiveDeterministic) {
  const auto [idx, dom] = labelled(4, 37);
  const TrainValSplit a = split_train_val(idx, dom, 0.9, 5);
  const TrainValSplit b = split_train_val(idx, dom, 0.9, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (std::size_t i : a.val) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all, std::set<std::size_t>(idx.begin(), idx.end()));
  EXPECT_NE(split_train_val(idx, dom, 0.9, 6).train, a.train);
}

TEST(SplitTrainVal, SmallDomainIsRejected) {
  auto [idx, dom] = labelled(3, 20);
  idx.push_back(9999);
  dom.push_back(7);
  EXPECT_EQ(code_of([&] { split_train_val(idx, dom, 0.9, 0); }), ErrorCode::kConfig);
}

TEST(StratifiedBatcher, EveryPresentDomainHasTwo) {
  const auto [idx, dom] = labelled(3, 54);
  StratifiedBatcher batcher(idx, dom, 12, 1);
  const auto batches = batcher.epoch();
  ASSERT_FALSE(batches.empty());
  EXPECT_EQ(batches.size(), batcher.batches_per_epoch());
  std::set<std::size_t> seen;
  for (const auto& b : batches) {
    EXPECT_EQ(b.size(), 12u);
    std::map<std::size_t, std::size_t> per;
    for (std::size_t i : b) {
      ++per[i / 1000];
      EXPECT_TRUE(seen.insert(i).second) << "sample reused within an epoch";
    }
    for (const auto& [d, n] : per) EXPECT_GE(n, 2u);
  }
}

TEST(StratifiedBatcher, RemainderRotatesAcrossDomains) {
  const auto [idx, dom] = labelled(3, 60);
  StratifiedBatcher batcher(idx, dom, 8, 2);  // 8 = 3 + 3 + 2
  std::map<std::size_t, std::size_t> totals;
  for (const auto& b : batcher.epoch()) {
    std::map<std::size_t, std::size_t> per;
    for (std::size_t i : b) ++per[i / 1000];
    for (const auto& [d, n] : per) {
      EXPECT_GE(n, 2u);
      totals[d] += n;
    }
  }
  const auto [lo, hi] = std::minmax_element(totals.begin(), totals.end(),
                                            [](const auto& a, const auto& b) { return a.second < b.second; });
  EXPECT_LE(hi->second - lo->second, 2u);
}

TEST(StratifiedBatcher, SameSeedSameSequence) {
  const auto [idx, dom] = labelled(3, 40);
  StratifiedBatcher a(idx, dom, 12, 9), b(idx, dom, 12, 9);
  const auto a1 = a.epoch(), a2 = a.epoch();
  EXPECT_EQ(a1, b.epoch());
  EXPECT_EQ(a2, b.epoch());
  EXPECT_NE(a1, a2);
}

TEST(StratifiedBatcher, ImpossibleContractsAreConfigErrors) {
  const auto [idx, dom] = labelled(3, 40);
  EXPECT_EQ(code_of([&] { StratifiedBatcher(idx, dom, 5, 0); }), ErrorCode::kConfig);
  auto idx2 = idx;
  auto dom2 = dom;
  idx2.push_back(7777);
  dom2.push_back(9);
  EXPECT_EQ(code_of([&] { StratifiedBatcher(idx2, dom2, 12, 0); }), ErrorCode::kConfig);
}

// 3 domains x 4 classes x 60 samples.
const Dataset& fixture() {
  static const Dataset ds = [] {
    GenerateParams gp;
    gp.num_domains = 3;
    return generate(gp);
  }();
  return ds;
}

TEST(TrainStylePrompter, NoOpTrainingKeepsParametersBitExact) {
  RunConfig cfg;
  cfg.weights.w_d = 0.0;
  cfg.weights.w_reg = 0.0;
  cfg.lr_max = 0.0;
  cfg.lr_warmup = 0.0;
  cfg.epochs = 2;
  cfg.mc_samples = 4;
  const FrozenEncoderBundle bundle = make_bundle(cfg, fixture().class_names());
  const TrainResult r = train_style_prompter(cfg, bundle, fixture());
  EXPECT_TRUE(r.initial == r.final_prompter);
}

TEST(TrainStylePrompter, FixtureRunKeepsEncoderFrozenAndDescends) {
  RunConfig cfg;
  const FrozenEncoderBundle bundle = make_bundle(cfg, fixture().class_names());
  const std::uint64_t before = bundle.weights_checksum();
  const TrainResult r = train_style_prompter(cfg, bundle, fixture());
  EXPECT_EQ(bundle.weights_checksum(), before);
  EXPECT_EQ(r.encoder_checksum_before, r.encoder_checksum_after);
  ASSERT_EQ(r.epochs.size(), 3u);
  ASSERT_FALSE(r.steps.empty());
  EXPECT_FALSE(r.initial == r.final_prompter);
  // Mean loss over the last epoch against the very first step.
  double last = 0.0;
  std::size_t n = 0;
  for (const auto& s : r.steps)
    if (s.epoch == 2) {
      last += s.loss_total;
      ++n;
    }
  ASSERT_GT(n, 0u);
  EXPECT_LT(last / static_cast<double>(n), r.steps.front().loss_total);
  for (const auto& s : r.steps) {
    if (s.epoch == 0) {
      EXPECT_EQ(s.lr, 1e-5);
    }
    EXPECT_GE(s.loss_d, 0.0);
    EXPECT_GE(s.loss_reg, 0.0);
    EXPECT_LE(s.loss_reg, 2.0);
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

TEST(TrainStylePrompter, ArtifactsAreBitReproducible) {
  const auto root = std::filesystem::temp_directory_path() / "spdg_train_repro";
  std::filesystem::remove_all(root);
  RunConfig cfg;
  cfg.prompter_kind = PrompterKind::kBasic;
  cfg.epochs = 2;
  const FrozenEncoderBundle bundle = make_bundle(cfg, fixture().class_names());
  for (const char* run : {"a", "b"}) {
    cfg.output_dir = (root / run).string();
    train_style_prompter(cfg, bundle, fixture());
  }
  for (const char* f : {"metrics.jsonl", "checkpoint/manifest.json", "checkpoint/w1.spdg", "checkpoint/b3.spdg"}) {
    EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
    EXPECT_FALSE(slurp(root / "a" / f).empty()) << f;
  }
  EXPECT_TRUE(std::filesystem::exists(root / "a" / "checkpoints" / "epoch_1" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(root / "a" / "bundle" / "manifest.json"));
  std::filesystem::remove_all(root);
}

TEST(TrainStylePrompter, HeldOutDomainIsExcluded) {
  RunConfig cfg;
  cfg.held_out_domain = 5;
  const FrozenEncoderBundle bundle = make_bundle(cfg, fixture().class_names());
  EXPECT_EQ(code_of([&] { train_style_prompter(cfg, bundle, fixture()); }), ErrorCode::kConfig);
  cfg.held_out_domain = 0;
  cfg.batch_size = 3;
  EXPECT_EQ(code_of([&] { train_style_prompter(cfg, bundle, fixture()); }), ErrorCode::kConfig);
}

TEST(TrainStylePrompter, DivergenceIsReported) {
  const auto root = std::filesystem::temp_directory_path() / "spdg_train_diverge";
  std::filesystem::remove_all(root);
  RunConfig cfg;
  cfg.prompter_kind = PrompterKind::kBasic;
  cfg.epochs = 2;
  cfg.lr_warmup = 1e300;
  cfg.momentum = 0.0;
  cfg.output_dir = root.string();
  const FrozenEncoderBundle bundle = make_bundle(cfg, fixture().class_names());
  EXPECT_EQ(code_of([&] { train_style_prompter(cfg, bundle, fixture()); }), ErrorCode::kTrainingDiverged);
  EXPECT_TRUE(std::filesystem::exists(root / "diverged.json"));
  std::filesystem::remove_all(root);
}

TEST(RunConfigJson, RoundTripAndRejection) {
  RunConfig c;
  c.prompter_kind = PrompterKind::kBasic;
  c.use_style_reg = false;
  c.held_out_domain = 2;
  c.weights.w_reg = 10.0;
  c.extra_classes = {"house"};
  const RunConfig d = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(d), to_json(c));
  EXPECT_EQ(config_hash(c), config_hash(d));
  RunConfig e = c;
  e.output_dir = "/somewhere/else";
  EXPECT_EQ(config_hash(c), config_hash(e));
  e.seed = 1;
  EXPECT_NE(config_hash(c), config_hash(e));
  EXPECT_EQ(code_of([] { run_config_from_json({{"epochz", 3}}); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { run_config_from_json({{"epochs", "three"}}); }), ErrorCode::kConfig);
  EXPECT_EQ(hex64(0xABCull), "0000000000000abc");
}

}  // namespace
}  // namespace spdg
