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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spdg/datagen/dataset.hpp"
#include "spdg/error.hpp"
#include "spdg/eval/inference.hpp"
#include "spdg/losses/losses.hpp"
#include "spdg/numerics/ops.hpp"
#include "spdg/numerics/rng.hpp"
#include "spdg/numerics/tape.hpp"
#include "spdg/prompter/style_prompter.hpp"
#include "spdg/pseudo_clip/bundle.hpp"
#include "spdg/trainer/batching.hpp"
#include "spdg/trainer/config.hpp"
#include "spdg/trainer/optimizer.hpp"

namespace spdg {

/// Fixed per-run inputs of the objective.
struct ObjectiveContext {
  const FrozenEncoderBundle* bundle = nullptr;
  const RegAnchorTable* anchors = nullptr;
  std::vector<TokenSequence> prompts;  // "SP <class>." per class
  LossWeights weights;
};

struct ObjectiveTerms {
  Var total;
  LossParts parts;
};

/// Full training objective for one batch. `eps` holds the (B*N x D_t)
/// standard-normal draws for a gaussian prompter and is ignored otherwise.
inline ObjectiveTerms style_objective(const ObjectiveContext& ctx, Tape& tape, const BoundPrompter& bound, const Tensor& image_feats,
                                      const std::vector<std::size_t>& labels, const std::vector<std::size_t>& domains,
                                      const Tensor& eps) {
  const std::size_t b = image_feats.dim(0);
  if (labels.size() != b || domains.size() != b) fail(ErrorCode::kDimension, "objective needs one label and domain per image");
  const TextEncoder enc(*ctx.bundle, tape);
  const Var z = tape.constant(image_feats);

  Var prompt_styles, disc_samples;
  std::vector<std::size_t> disc_domains;
  if (bound.kind == PrompterKind::kGaussian) {
    const StyleDistribution dist = gaussian_forward(bound, z);
    prompt_styles = dist.mu;
    disc_samples = reparameterize(dist, eps);
    const std::size_t n = eps.dim(0) / b;
    for (std::size_t i = 0; i < b; ++i) disc_domains.insert(disc_domains.end(), n, domains[i]);
  } else {
    prompt_styles = basic_forward(bound, z);
    disc_samples = prompt_styles;
    disc_domains = domains;
  }

  ObjectiveTerms out;
  out.parts.domain = domain_discrimination_loss(ad::l2_normalize(disc_samples), disc_domains, ctx.weights.tau_d);
  const std::vector<Var> candidates = candidate_text_features(enc, prompt_styles, ctx.prompts);
  out.parts.ce = classification_loss(enc, image_feats, candidates, labels, ctx.weights.ce_scale);
  std::vector<Var> true_rows;
  true_rows.reserve(b);
  for (std::size_t i = 0; i < b; ++i) true_rows.push_back(ad::row(candidates[i], labels[i]));
  out.parts.reg = style_regularization_loss(ad::concat_rows(true_rows), labels, *ctx.anchors);
  out.total = total_loss(out.parts, ctx.weights);
  return out;
}

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_d = 0.0;
  double loss_reg = 0.0;
  double loss_ce = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double val_accuracy = 0.0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},         {"epoch", r.epoch},   {"lr", r.lr},          {"loss_total", r.loss_total},
          {"loss_d", r.loss_d},     {"loss_reg", r.loss_reg}, {"loss_ce", r.loss_ce}};
}

inline nlohmann::json to_json(const EpochRecord& r) { return {{"epoch", r.epoch}, {"val_accuracy", r.val_accuracy}}; }

struct TrainResult {
  StylePrompter initial;
  StylePrompter final_prompter;
  StylePrompter selected;  // final unless select_best picked an earlier epoch
  std::size_t selected_epoch = 0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::uint64_t encoder_checksum_before = 0;
  std::uint64_t encoder_checksum_after = 0;
  std::vector<std::string> classes;
};

/// Vocabulary covering the dataset's classes plus any extra (test-time) classes.
inline FrozenEncoderBundle make_bundle(const RunConfig& cfg, const std::vector<std::string>& classes) {
  std::vector<std::string> all = classes;
  all.insert(all.end(), cfg.extra_classes.begin(), cfg.extra_classes.end());
  return build_bundle(cfg.dims, default_vocabulary(all), cfg.bundle_seed, cfg.bundle_options());
}

/// Run config without filesystem paths; embedded in checkpoints so artifacts
/// do not depend on where they were written.
inline nlohmann::json portable_config(const RunConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("dataset_path");
  j.erase("output_dir");
  j["config_hash"] = hex64(config_hash(cfg));
  return j;
}

namespace detail {

inline void dump_divergence(const std::filesystem::path& out, const StepRecord& r, const StylePrompter& p, const std::string& what) {
  nlohmann::json j = to_json(r);
  j["error"] = what;
  nlohmann::json norms = nlohmann::json::object();
  for (const auto& param : p.params()) {
    double s = 0.0;
    for (double v : param.value.storage()) s += v * v;
    norms[param.name] = std::sqrt(s);
  }
  j["param_norms"] = norms;
  std::filesystem::create_directories(out);
  std::ofstream(out / "diverged.json") << j.dump(2) << '\n';
}

}  // namespace detail

/// Trains a prompter on every domain except `cfg.held_out_domain`. Artifacts go
/// to cfg.output_dir when it is non-empty.
inline TrainResult train_style_prompter(const RunConfig& cfg, const FrozenEncoderBundle& bundle, const Dataset& ds) {
  const std::size_t num_domains = ds.manifest.num_domains();
  if (cfg.held_out_domain && *cfg.held_out_domain >= num_domains) {
    fail(ErrorCode::kConfig, "held_out_domain " + std::to_string(*cfg.held_out_domain) + " with " + std::to_string(num_domains) +
                                 " domains");
  }
  if (ds.x.dim(1) != bundle.dims.input) fail(ErrorCode::kDimension, "dataset D_x does not match the bundle input dimension");
  std::vector<std::size_t> candidates, candidate_domains;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (cfg.held_out_domain && ds.domain_labels[i] == *cfg.held_out_domain) continue;
    candidates.push_back(i);
    candidate_domains.push_back(ds.domain_labels[i]);
  }
  const std::size_t train_domains = num_domains - (cfg.held_out_domain ? 1 : 0);
  cfg.validate(train_domains);

  const TrainValSplit split = split_train_val(candidates, candidate_domains, cfg.train_ratio, cfg.seed);
  std::vector<std::size_t> split_domains;
  for (std::size_t i : split.train) split_domains.push_back(ds.domain_labels[i]);
  StratifiedBatcher batcher(split.train, split_domains, cfg.batch_size, cfg.seed);
  const LrSchedule schedule{batcher.batches_per_epoch(), cfg.epochs, cfg.lr_max, cfg.lr_warmup};
  if (schedule.steps_per_epoch == 0) fail(ErrorCode::kConfig, "training split yields no complete batch");

  TrainResult result;
  result.classes = ds.class_names();
  result.encoder_checksum_before = bundle.weights_checksum();

  const RegAnchorTable anchors = build_reg_anchors(bundle, result.classes, cfg.style_words);
  ObjectiveContext ctx;
  ctx.bundle = &bundle;
  ctx.anchors = &anchors;
  ctx.prompts = class_prompts(bundle.vocab, result.classes);
  ctx.weights = cfg.weights;
  if (!cfg.use_style_reg) ctx.weights.w_reg = 0.0;

  const Tensor features = encode_images(bundle, ds.x);
  const Dataset val = ds.subset(split.val);

  StylePrompter prompter = StylePrompter::initialize(cfg.prompter_kind, cfg.prompter_dims(), cfg.seed);
  result.initial = prompter;
  std::vector<const Tensor*> param_ptrs;
  for (const auto& p : prompter.params()) param_ptrs.push_back(&p.value);
  OptimizerState state = OptimizerState::zeros_like(param_ptrs);
  const SgdSettings sgd{cfg.momentum, cfg.weight_decay};
  Rng mc_rng(derive_seed(cfg.seed, "mc"));

  const std::filesystem::path out_dir = cfg.output_dir;
  const bool write = !cfg.output_dir.empty();
  std::ofstream metrics;
  if (write) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) fail(ErrorCode::kIo, "cannot write metrics log in " + out_dir.string());
  }
  const nlohmann::json echo = portable_config(cfg);
  double best_acc = -1.0;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : batcher.epoch()) {
      Tensor z(Shape{batch.size(), bundle.dims.image_feature});
      std::vector<std::size_t> labels, domains;
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto src = features.row(batch[r]);
        std::copy(src.begin(), src.end(), z.row(r).begin());
        labels.push_back(ds.class_labels[batch[r]]);
        domains.push_back(ds.domain_labels[batch[r]]);
      }
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr_at(step, schedule);
      try {
        Tape tape;
        const BoundPrompter bound = bind(prompter, tape, true);
        const Tensor eps = cfg.prompter_kind == PrompterKind::kGaussian
                               ? draw_noise(batch.size() * cfg.mc_samples, bundle.dims.token, mc_rng)
                               : Tensor(Shape{1, bundle.dims.token});
        const ObjectiveTerms terms = style_objective(ctx, tape, bound, z, labels, domains, eps);
        rec.loss_total = terms.total.value().item();
        rec.loss_d = terms.parts.domain.value().item();
        rec.loss_reg = terms.parts.reg.value().item();
        rec.loss_ce = terms.parts.ce.value().item();
        tape.backward(terms.total);
        std::vector<Tensor> grads;
        std::vector<Tensor*> params;
        for (std::size_t k = 0; k < bound.vars.size(); ++k) {
          grads.push_back(tape.grad(bound.vars[k]));
          params.push_back(&prompter.params()[k].value);
        }
        sgd_momentum_step(params, grads, state, rec.lr, sgd);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite && e.code() != ErrorCode::kDegenerateVector) throw;
        if (write) detail::dump_divergence(out_dir, rec, prompter, e.what());
        fail(ErrorCode::kTrainingDiverged, "training diverged at step " + std::to_string(step) + " (epoch " +
                                               std::to_string(epoch) + ", lr " + std::to_string(rec.lr) + "): " + e.what());
      }
      result.steps.push_back(rec);
      if (write) metrics << to_json(rec).dump() << '\n';
      ++step;
    }
    EpochRecord er{epoch, accuracy(predict_all(bundle, prompter, val.x, result.classes), val.class_labels)};
    result.epochs.push_back(er);
    if (write) {
      metrics << to_json(er).dump() << '\n';
      save_checkpoint(prompter, out_dir / "checkpoints" / ("epoch_" + std::to_string(epoch + 1)), echo, cfg.precision);
    }
    if (er.val_accuracy > best_acc) {
      best_acc = er.val_accuracy;
      if (cfg.select_best) {
        result.selected = prompter;
        result.selected_epoch = epoch + 1;
      }
    }
  }
  result.final_prompter = prompter;
  if (!cfg.select_best) {
    result.selected = prompter;
    result.selected_epoch = cfg.epochs;
  }
  result.encoder_checksum_after = bundle.weights_checksum();
  if (result.encoder_checksum_after != result.encoder_checksum_before) {
    fail(ErrorCode::kInternalInvariant, "frozen encoder weights changed during training");
  }

  if (write) {
    metrics.flush();
    save_checkpoint(result.selected, out_dir / "checkpoint", echo, cfg.precision);
    save_bundle(bundle, out_dir / "bundle");
    std::ofstream(out_dir / "config.json") << to_json(cfg).dump(2) << '\n';
    nlohmann::json summary;
    summary["config_hash"] = hex64(config_hash(cfg));
    summary["encoder_checksum_before"] = hex64(result.encoder_checksum_before);
    summary["encoder_checksum_after"] = hex64(result.encoder_checksum_after);
    summary["selected_epoch"] = result.selected_epoch;
    summary["steps"] = result.steps.size();
    summary["final_val_accuracy"] = result.epochs.back().val_accuracy;
    summary["prompter_checksum"] = hex64(result.selected.checksum());
    std::ofstream(out_dir / "summary.json") << summary.dump(2) << '\n';
  }
  return result;
}

/// Loads the dataset named in the config, builds the bundle and trains.
inline TrainResult run_training(const RunConfig& cfg) {
  if (cfg.dataset_path.empty()) fail(ErrorCode::kConfig, "run config has no dataset_path");
  const Dataset ds = load_dataset(cfg.dataset_path);
  const FrozenEncoderBundle bundle = make_bundle(cfg, ds.class_names());
  return train_style_prompter(cfg, bundle, ds);
}

}  // namespace spdg
