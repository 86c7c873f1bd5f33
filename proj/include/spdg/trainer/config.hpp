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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spdg/error.hpp"
#include "spdg/losses/losses.hpp"
#include "spdg/numerics/rng.hpp"
#include "spdg/numerics/tensor.hpp"
#include "spdg/prompter/style_prompter.hpp"
#include "spdg/pseudo_clip/bundle.hpp"
#include "spdg/pseudo_clip/world.hpp"

namespace spdg {

struct RunConfig {
  PrompterKind prompter_kind = PrompterKind::kGaussian;
  bool use_style_reg = true;
  std::size_t epochs = 3;
  std::size_t batch_size = 12;
  std::size_t mc_samples = 40;
  double lr_max = 0.002;
  double lr_warmup = 1e-5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::uint64_t bundle_seed = 0;
  BundleDims dims;
  double logit_scale = 100.0;
  std::string dataset_path;
  std::optional<std::size_t> held_out_domain;
  std::string output_dir;
  double train_ratio = 0.9;
  bool select_best = false;
  DType precision = DType::kF64;
  std::vector<std::string> style_words{kStyleWords.begin(), kStyleWords.end()};
  // Classes added to the bundle vocabulary beyond the training classes.
  std::vector<std::string> extra_classes;

  PrompterDims prompter_dims() const { return {dims.image_feature, dims.token}; }

  BundleOptions bundle_options() const {
    BundleOptions o;
    o.logit_scale = logit_scale;
    return o;
  }

  void validate(std::size_t num_train_domains) const {
    if (epochs < 1) fail(ErrorCode::kConfig, "epochs must be >= 1");
    if (mc_samples < 1) fail(ErrorCode::kConfig, "mc_samples must be >= 1");
    if (batch_size < 2 * num_train_domains) {
      fail(ErrorCode::kConfig, "batch_size " + std::to_string(batch_size) + " is below 2 x " +
                                   std::to_string(num_train_domains) + " training domains");
    }
    if (lr_max < 0.0 || lr_warmup < 0.0) fail(ErrorCode::kConfig, "learning rates must be non-negative");
    if (momentum < 0.0 || momentum >= 1.0) fail(ErrorCode::kConfig, "momentum must lie in [0, 1)");
    if (weight_decay < 0.0) fail(ErrorCode::kConfig, "weight_decay must be non-negative");
    if (style_words.empty()) fail(ErrorCode::kConfig, "style_words must not be empty");
    weights.validate();
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["prompter_kind"] = to_string(c.prompter_kind);
  j["use_style_reg"] = c.use_style_reg;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["mc_samples"] = c.mc_samples;
  j["lr_max"] = c.lr_max;
  j["lr_warmup"] = c.lr_warmup;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["weights"] = {{"w_d", c.weights.w_d}, {"w_reg", c.weights.w_reg}, {"tau_d", c.weights.tau_d}, {"ce_scale", c.weights.ce_scale}};
  j["seed"] = c.seed;
  j["bundle_seed"] = c.bundle_seed;
  j["dims"] = {{"input", c.dims.input}, {"image_feature", c.dims.image_feature}, {"token", c.dims.token}, {"feature", c.dims.feature}};
  j["logit_scale"] = c.logit_scale;
  j["dataset_path"] = c.dataset_path;
  j["held_out_domain"] = c.held_out_domain ? nlohmann::json(*c.held_out_domain) : nlohmann::json(nullptr);
  j["output_dir"] = c.output_dir;
  j["train_ratio"] = c.train_ratio;
  j["select_best"] = c.select_best;
  j["precision"] = c.precision == DType::kF64 ? "f64" : "f32";
  j["style_words"] = c.style_words;
  j["extra_classes"] = c.extra_classes;
  return j;
}

inline DType parse_precision(const std::string& s) {
  if (s == "f64") return DType::kF64;
  if (s == "f32") return DType::kF32;
  fail(ErrorCode::kConfig, "unknown precision '" + s + "' (expected f64 or f32)");
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "prompter_kind", "use_style_reg", "epochs", "batch_size", "mc_samples", "lr_max", "lr_warmup",
      "momentum", "weight_decay", "weights", "seed", "bundle_seed", "dims", "logit_scale", "dataset_path",
      "held_out_domain", "output_dir", "train_ratio", "select_best", "precision", "style_words", "extra_classes"};
  if (!j.is_object()) fail(ErrorCode::kConfig, "run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) fail(ErrorCode::kConfig, "unknown run config key '" + key + "'");
  }
  RunConfig c;
  try {
    if (j.contains("prompter_kind")) c.prompter_kind = parse_prompter_kind(j["prompter_kind"].get<std::string>());
    c.use_style_reg = j.value("use_style_reg", c.use_style_reg);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.mc_samples = j.value("mc_samples", c.mc_samples);
    c.lr_max = j.value("lr_max", c.lr_max);
    c.lr_warmup = j.value("lr_warmup", c.lr_warmup);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights.w_d = w.value("w_d", c.weights.w_d);
      c.weights.w_reg = w.value("w_reg", c.weights.w_reg);
      c.weights.tau_d = w.value("tau_d", c.weights.tau_d);
      c.weights.ce_scale = w.value("ce_scale", c.weights.ce_scale);
    }
    c.seed = j.value("seed", c.seed);
    c.bundle_seed = j.value("bundle_seed", c.bundle_seed);
    if (j.contains("dims")) {
      const auto& d = j["dims"];
      c.dims.input = d.value("input", c.dims.input);
      c.dims.image_feature = d.value("image_feature", c.dims.image_feature);
      c.dims.token = d.value("token", c.dims.token);
      c.dims.feature = d.value("feature", c.dims.feature);
    }
    c.logit_scale = j.value("logit_scale", c.logit_scale);
    c.dataset_path = j.value("dataset_path", c.dataset_path);
    if (j.contains("held_out_domain") && !j["held_out_domain"].is_null()) c.held_out_domain = j["held_out_domain"].get<std::size_t>();
    c.output_dir = j.value("output_dir", c.output_dir);
    c.train_ratio = j.value("train_ratio", c.train_ratio);
    c.select_best = j.value("select_best", c.select_best);
    if (j.contains("precision")) c.precision = parse_precision(j["precision"].get<std::string>());
    c.style_words = j.value("style_words", c.style_words);
    c.extra_classes = j.value("extra_classes", c.extra_classes);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed run config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open run config " + path.string());
  try {
    return run_config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("run config is not valid JSON: ") + e.what());
  }
}

/// Hash of everything that shapes the trained parameters; paths are excluded.
inline std::uint64_t config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("dataset_path");
  j.erase("output_dir");
  return fnv1a(j.dump());
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

}  // namespace spdg
