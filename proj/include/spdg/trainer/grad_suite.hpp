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

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "spdg/datagen/dataset.hpp"
#include "spdg/numerics/grad_check.hpp"
#include "spdg/trainer/train.hpp"

namespace spdg {

struct ObjectiveGradCheck {
  GradCheckReport report;
  std::string worst_parameter;
  double seconds = 0.0;
  std::size_t batch = 0, classes = 0, domains = 0, mc_samples = 0;
};

/// Finite-difference check of the full training objective with respect to
/// every prompter parameter, on one stratified batch of a small fixture.
inline ObjectiveGradCheck check_objective_gradients(std::uint64_t seed, PrompterKind kind = PrompterKind::kGaussian,
                                                    std::size_t batch_size = 8, std::size_t mc_samples = 4) {
  const auto t0 = std::chrono::steady_clock::now();
  GenerateParams gp;
  gp.num_classes = 4;
  gp.num_domains = 3;
  gp.per_cell = 10;
  gp.seed = seed;
  const Dataset ds = generate(gp);
  RunConfig cfg;
  cfg.prompter_kind = kind;
  cfg.seed = seed;
  const FrozenEncoderBundle bundle = make_bundle(cfg, ds.class_names());
  const RegAnchorTable anchors = build_reg_anchors(bundle, ds.class_names(), cfg.style_words);

  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  StratifiedBatcher batcher(all, ds.domain_labels, batch_size, seed);
  const std::vector<std::size_t> batch = batcher.epoch().front();

  const Tensor features = encode_images(bundle, ds.x);
  Tensor z(Shape{batch.size(), bundle.dims.image_feature});
  std::vector<std::size_t> labels, domains;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto src = features.row(batch[r]);
    std::copy(src.begin(), src.end(), z.row(r).begin());
    labels.push_back(ds.class_labels[batch[r]]);
    domains.push_back(ds.domain_labels[batch[r]]);
  }
  Rng rng(derive_seed(seed, "grad-check"));
  const Tensor eps = draw_noise(batch.size() * mc_samples, bundle.dims.token, rng);

  ObjectiveContext ctx;
  ctx.bundle = &bundle;
  ctx.anchors = &anchors;
  ctx.prompts = class_prompts(bundle.vocab, ds.class_names());
  ctx.weights = cfg.weights;

  const StylePrompter prompter = StylePrompter::initialize(kind, cfg.prompter_dims(), seed);
  std::vector<Tensor> params;
  for (const auto& p : prompter.params()) params.push_back(p.value);

  const MultiObjective objective = [&](Tape& tape, std::span<const Var> vars) {
    const BoundPrompter bound{prompter.kind(), prompter.dims(), prompter.sigma_floor(), std::vector<Var>(vars.begin(), vars.end())};
    return style_objective(ctx, tape, bound, z, labels, domains, eps).total;
  };

  ObjectiveGradCheck out;
  out.report = finite_diff_grad_check(objective, params);
  out.worst_parameter = prompter.params()[out.report.worst_input].name;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.batch = batch.size();
  out.classes = ds.manifest.num_classes();
  out.domains = ds.manifest.num_domains();
  out.mc_samples = mc_samples;
  return out;
}

}  // namespace spdg
