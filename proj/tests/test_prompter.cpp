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

#include <cmath>
#include <filesystem>
#include <vector>

#include "spdg/datagen/dataset.hpp"
#include "spdg/numerics/grad_check.hpp"
#include "spdg/prompter/style_prompter.hpp"
#include "spdg/trainer/batching.hpp"
#include "spdg/trainer/train.hpp"

namespace spdg {
namespace {

constexpr PrompterDims kDims{64, 32};

Tensor random_features(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  Rng rng(seed);
  Tensor z(Shape{rows, cols});
  for (double& v : z.storage()) v = rng.normal();
  return z;
}

/// Prompter output reduced through a fixed projection; `inputs` are the params.
MultiObjective prompter_objective(PrompterKind kind, const Tensor& z, bool use_sigma) {
  return [kind, z, use_sigma](Tape& tape, std::span<const Var> vars) {
    const BoundPrompter p{kind, kDims, kSigmaFloor, std::vector<Var>(vars.begin(), vars.end())};
    const Var zc = tape.constant(z);
    Var out;
    if (kind == PrompterKind::kBasic) {
      out = basic_forward(p, zc);
    } else {
      const StyleDistribution d = gaussian_forward(p, zc);
      out = use_sigma ? ad::add(d.mu, ad::scale(d.sigma, 0.7)) : d.mu;
    }
    const Tensor w = random_features(77, out.value().dim(0), out.value().dim(1));
    return ad::sum(ad::mul(out, tape.constant(w)));
  };
}

std::vector<Tensor> values(const StylePrompter& p) {
  std::vector<Tensor> out;
  for (const auto& param : p.params()) out.push_back(param.value);
  return out;
}

TEST(StylePrompter, ExactParameterCount) {
  const std::size_t di = kDims.image_feature, h = di / 2, dt = kDims.token;
  const std::size_t basic = di * h + h + h * h + h + h * dt + dt;
  EXPECT_EQ(StylePrompter::initialize(PrompterKind::kBasic, kDims, 0).parameter_count(), basic);
  EXPECT_EQ(StylePrompter::initialize(PrompterKind::kGaussian, kDims, 0).parameter_count(), basic + h * dt + dt);
  EXPECT_EQ(basic, 4192u);
}

TEST(StylePrompter, OddFeatureDimensionIsRejected) {
  EXPECT_THROW(StylePrompter::initialize(PrompterKind::kBasic, PrompterDims{63, 32}, 0), Error);
}

TEST(BasicForward, ZeroWeightsGiveZeroOutput) {
  StylePrompter p = StylePrompter::initialize(PrompterKind::kBasic, kDims, 3);
  for (auto& param : p.params())
    for (double& v : param.value.storage()) v = 0.0;
  Tape tape;
  const Tensor out = basic_forward(bind(p, tape, false), tape.constant(random_features(1, 3, 64))).value();
  for (double v : out.storage()) EXPECT_EQ(v, 0.0);
}

TEST(BasicForward, GradientsMatchCentralDifferences) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kBasic, kDims, 4);
  const auto r = finite_diff_grad_check(prompter_objective(PrompterKind::kBasic, random_features(2, 3, 64), false), values(p));
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(BasicForward, DistinctInputsDistinctOutputs) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kBasic, kDims, 5);
  Tape tape;
  const Tensor out = basic_forward(bind(p, tape, false), tape.constant(random_features(3, 2, 64))).value();
  double diff = 0.0;
  for (std::size_t j = 0; j < out.cols(); ++j) diff += std::abs(out.at(0, j) - out.at(1, j));
  EXPECT_GT(diff, 1e-6);
}

TEST(BasicForward, WrongFeatureWidthIsAnError) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kBasic, kDims, 5);
  Tape tape;
  EXPECT_THROW(basic_forward(bind(p, tape, false), tape.constant(Tensor(Shape{2, 63}))), Error);
}

TEST(GaussianForward, SigmaIsStrictlyPositive) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 6);
  Tape tape;
  const Tensor z = random_features(4, 1000, 64);
  const Tensor sigma = gaussian_forward(bind(p, tape, false), tape.constant(z)).sigma.value();
  for (double v : sigma.storage()) EXPECT_GT(v, 0.0);
}

TEST(GaussianForward, SigmaFloorLimit) {
  StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 7);
  for (double& v : p.params()[6].value.storage()) v = 0.0;
  for (double& v : p.params()[7].value.storage()) v = -1e3;
  Tape tape;
  const Tensor sigma = gaussian_forward(bind(p, tape, false), tape.constant(random_features(5, 4, 64))).sigma.value();
  for (double v : sigma.storage()) EXPECT_NEAR(v, kSigmaFloor, 1e-15);
}

TEST(GaussianForward, InitialSigmaNearOneTenth) {
  StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 7);
  for (double& v : p.params()[6].value.storage()) v = 0.0;
  Tape tape;
  const Tensor sigma = gaussian_forward(bind(p, tape, false), tape.constant(random_features(5, 1, 64))).sigma.value();
  for (double v : sigma.storage()) EXPECT_NEAR(v, kInitialSigma + kSigmaFloor, 1e-12);
}

TEST(GaussianForward, MuPathGradients) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 8);
  const auto r = finite_diff_grad_check(prompter_objective(PrompterKind::kGaussian, random_features(6, 3, 64), false), values(p));
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GaussianForward, SigmaPathGradients) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 9);
  const auto r = finite_diff_grad_check(prompter_objective(PrompterKind::kGaussian, random_features(7, 3, 64), true), values(p));
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(SampleStyles, ZeroNoiseGivesMu) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 10);
  Tape tape;
  const StyleDistribution d = gaussian_forward(bind(p, tape, false), tape.constant(random_features(8, 2, 64)));
  const Tensor s = reparameterize(d, Tensor(Shape{6, 32}, 0.0)).value();
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(s.at(r, j), d.mu.value().at(r / 3, j));
}

TEST(SampleStyles, CollapsedSigmaStaysOnMu) {
  StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 11);
  for (double& v : p.params()[6].value.storage()) v = 0.0;
  for (double& v : p.params()[7].value.storage()) v = -1e3;
  Tape tape;
  const StyleDistribution d = gaussian_forward(bind(p, tape, false), tape.constant(random_features(9, 1, 64)));
  Rng rng(1);
  const Tensor s = sample_styles(d, 50, rng).value();
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(s.at(r, j), d.mu.value().at(0, j), 1e-4);
}

TEST(SampleStyles, LargeSampleMatchesMoments) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 12);
  Tape tape;
  const StyleDistribution d = gaussian_forward(bind(p, tape, false), tape.constant(random_features(10, 1, 64)));
  constexpr std::size_t kN = 100000;
  Rng rng(2);
  const Tensor s = sample_styles(d, kN, rng).value();
  for (std::size_t j = 0; j < 32; ++j) {
    double m = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < kN; ++r) m += s.at(r, j);
    m /= kN;
    for (std::size_t r = 0; r < kN; ++r) sq += (s.at(r, j) - m) * (s.at(r, j) - m);
    const double sd = std::sqrt(sq / (kN - 1));
    const double mu = d.mu.value().at(0, j), sigma = d.sigma.value().at(0, j);
    EXPECT_LT(std::abs(m - mu), 4.0 * sigma / std::sqrt(static_cast<double>(kN))) << j;
    EXPECT_LT(std::abs(sd - sigma), 0.05 * sigma) << j;
  }
}

TEST(SampleStyles, ZeroSamplesIsAnError) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 13);
  Tape tape;
  const StyleDistribution d = gaussian_forward(bind(p, tape, false), tape.constant(random_features(11, 1, 64)));
  Rng rng(3);
  try {
    sample_styles(d, 0, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
}

TEST(SampleStyles, FixedSeedIsBitReproducible) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 14);
  auto draw = [&] {
    Tape tape;
    const StyleDistribution d = gaussian_forward(bind(p, tape, false), tape.constant(random_features(12, 2, 64)));
    Rng rng(99);
    return sample_styles(d, 40, rng).value();
  };
  EXPECT_EQ(draw(), draw());
}

TEST(StyleForPrompt, GaussianUsesMu) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 15);
  const Tensor z = random_features(13, 1, 64);
  Tape tape;
  const Tensor mu = gaussian_forward(bind(p, tape, false), tape.constant(z)).mu.value();
  EXPECT_EQ(style_for_prompt(p, z.row(0)), mu.storage());
  EXPECT_EQ(style_for_prompt(p, z.row(0)), style_for_prompt(p, z.row(0)));
}

TEST(StyleForPrompt, BasicUsesPointOutput) {
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kBasic, kDims, 16);
  const Tensor z = random_features(14, 1, 64);
  Tape tape;
  const Tensor out = basic_forward(bind(p, tape, false), tape.constant(z)).value();
  EXPECT_EQ(style_for_prompt(p, z.row(0)), out.storage());
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = std::filesystem::temp_directory_path() / "spdg_ckpt_test";
  std::filesystem::remove_all(dir);
  const StylePrompter p = StylePrompter::initialize(PrompterKind::kGaussian, kDims, 17);
  save_checkpoint(p, dir, nlohmann::json{{"note", "x"}});
  nlohmann::json echo;
  const StylePrompter q = load_checkpoint(dir, &echo);
  EXPECT_TRUE(p == q);
  EXPECT_EQ(echo.at("note"), "x");
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, UnknownVersionIsRejected) {
  const auto dir = std::filesystem::temp_directory_path() / "spdg_ckpt_version";
  std::filesystem::remove_all(dir);
  save_checkpoint(StylePrompter::initialize(PrompterKind::kBasic, kDims, 18), dir, nlohmann::json::object());
  std::ifstream is(dir / "manifest.json");
  nlohmann::json m = nlohmann::json::parse(is);
  is.close();
  m["format_version"] = 999;
  std::ofstream(dir / "manifest.json") << m.dump();
  try {
    load_checkpoint(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedVersion);
  }
  std::filesystem::remove_all(dir);
}

// One backward pass of the full objective reaches every parameter tensor and
// nothing in the frozen bundle.
TEST(GradientFlow, EveryParameterReceivesGradient) {
  GenerateParams gp;
  gp.num_classes = 4;
  gp.num_domains = 3;
  gp.per_cell = 10;
  const Dataset ds = generate(gp);
  for (PrompterKind kind : {PrompterKind::kBasic, PrompterKind::kGaussian}) {
    RunConfig cfg;
    cfg.prompter_kind = kind;
    const FrozenEncoderBundle bundle = make_bundle(cfg, ds.class_names());
    const RegAnchorTable anchors = build_reg_anchors(bundle, ds.class_names(), cfg.style_words);
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    StratifiedBatcher batcher(all, ds.domain_labels, 6, 1);
    const auto batch = batcher.epoch().front();
    const Tensor feats = encode_images(bundle, ds.x);
    Tensor z(Shape{batch.size(), bundle.dims.image_feature});
    std::vector<std::size_t> labels, domains;
    for (std::size_t r = 0; r < batch.size(); ++r) {
      std::copy(feats.row(batch[r]).begin(), feats.row(batch[r]).end(), z.row(r).begin());
      labels.push_back(ds.class_labels[batch[r]]);
      domains.push_back(ds.domain_labels[batch[r]]);
    }
    ObjectiveContext ctx{&bundle, &anchors, class_prompts(bundle.vocab, ds.class_names()), cfg.weights};
    const StylePrompter p = StylePrompter::initialize(kind, cfg.prompter_dims(), 1);
    Rng rng(5);
    const Tensor eps = draw_noise(batch.size() * 4, bundle.dims.token, rng);
    const std::uint64_t before = bundle.weights_checksum();
    Tape tape;
    const BoundPrompter bound = bind(p, tape, true);
    tape.backward(style_objective(ctx, tape, bound, z, labels, domains, eps).total);
    for (std::size_t k = 0; k < bound.vars.size(); ++k) {
      double mx = 0.0;
      for (double g : tape.grad(bound.vars[k]).storage()) mx = std::max(mx, std::abs(g));
      EXPECT_GT(mx, 0.0) << to_string(kind) << " " << p.params()[k].name;
    }
    EXPECT_EQ(before, bundle.weights_checksum());
  }
}

}  // namespace
}  // namespace spdg
