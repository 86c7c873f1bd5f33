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

// Training objectives for the style prompter:
//
//   L_D   open domain discrimination over L2-normalized style samples
//         L_D^i = -log( sum_{p != i, d_p = d_i} exp(s_i.s_p / tau) / sum_{j != i} exp(s_i.s_j / tau) )
//   L_reg mean of 1 - cos(text feature, per-class anchor)
//   L_CE  image-text matching cross-entropy over "SP <class>." candidates
//   L     = w_d L_D + w_reg L_reg + L_CE

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/ops.hpp"
#include "spdg/numerics/tape.hpp"
#include "spdg/numerics/tensor.hpp"
#include "spdg/pseudo_clip/bundle.hpp"
#include "spdg/pseudo_clip/tokenizer.hpp"

namespace spdg {

struct LossWeights {
  double w_d = 0.1;
  double w_reg = 1.0;
  double tau_d = 0.1;
  double ce_scale = 1.0;

  void validate() const {
    if (w_d < 0.0 || w_reg < 0.0) fail(ErrorCode::kConfig, "loss weights must be non-negative");
    if (!(tau_d > 0.0) || !(ce_scale > 0.0)) fail(ErrorCode::kConfig, "tau_d and ce_scale must be positive");
  }
};

inline constexpr double kUnitTolerance = 1e-6;

/// Open domain discrimination loss. Rows of `styles` must already be unit norm
/// and every sample needs at least one other sample from its domain.
inline Var domain_discrimination_loss(const Var& styles, const std::vector<std::size_t>& domains, double tau) {
  const Tensor& s = styles.value();
  if (s.rank() != 2) fail(ErrorCode::kDimension, "style samples must be a matrix, got " + shape_string(s.shape()));
  const std::size_t n = s.dim(0);
  if (domains.size() != n) fail(ErrorCode::kDimension, "one domain label per style sample required");
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "temperature must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    const double nrm = norm(s.row(i));
    if (std::abs(nrm - 1.0) > kUnitTolerance) {
      fail(ErrorCode::kUnnormalized, "style sample " + std::to_string(i) + " has norm " + std::to_string(nrm));
    }
  }
  std::vector<std::uint8_t> all(n * n, 0), positives(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool has_positive = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      all[i * n + j] = 1;
      if (domains[i] == domains[j]) {
        positives[i * n + j] = 1;
        has_positive = true;
      }
    }
    if (!has_positive) {
      fail(ErrorCode::kBatchComposition,
           "sample " + std::to_string(i) + " (domain " + std::to_string(domains[i]) + ") has no same-domain positive in the batch");
    }
  }
  const Var logits = ad::scale(ad::matmul_nt(styles, styles), 1.0 / tau);
  const Var denominator = ad::masked_row_log_sum_exp(logits, std::move(all));
  const Var numerator = ad::masked_row_log_sum_exp(logits, std::move(positives));
  return ad::mean(ad::sub(denominator, numerator));
}

/// Unit-norm mean prompt per class over the style templates.
struct RegAnchorTable {
  std::vector<std::string> classes;
  Tensor anchors;  // C x D_f

  std::span<const double> anchor(std::size_t c) const {
    if (c >= classes.size()) fail(ErrorCode::kMissingAnchor, "no anchor for class index " + std::to_string(c));
    return anchors.row(c);
  }
};

/// Normalize each "a <style> style of a <class>." encoding, average, renormalize.
inline RegAnchorTable build_reg_anchors(const FrozenEncoderBundle& bundle, const std::vector<std::string>& classes,
                                        const std::vector<std::string>& style_words) {
  if (classes.empty() || style_words.empty()) fail(ErrorCode::kEmptyInput, "anchors need classes and style words");
  RegAnchorTable table{classes, Tensor(Shape{classes.size(), bundle.dims.feature})};
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<double> acc(bundle.dims.feature, 0.0);
    for (const auto& style : style_words) {
      const auto u = unit(encode_text(bundle, style_template_text(style, classes[c])).data());
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += u[j];
    }
    for (double& v : acc) v /= static_cast<double>(style_words.size());
    const auto a = unit(acc);
    std::copy(a.begin(), a.end(), table.anchors.row(c).begin());
  }
  return table;
}

/// (1/B) sum_i (1 - cos(Zt_i, anchor[label_i])).
inline Var style_regularization_loss(const Var& text_feats, const std::vector<std::size_t>& labels, const RegAnchorTable& table) {
  const Tensor& t = text_feats.value();
  if (t.rank() != 2 || t.dim(0) != labels.size() || t.dim(1) != table.anchors.dim(1)) {
    fail(ErrorCode::kDimension, "text features " + shape_string(t.shape()) + " do not match labels/anchors");
  }
  Tensor targets(t.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto a = table.anchor(labels[i]);
    std::copy(a.begin(), a.end(), targets.row(i).begin());
  }
  const Var cos = ad::cosine_rows(text_feats, text_feats.tape()->constant(std::move(targets)));
  return ad::add_scalar(ad::scale(ad::mean(cos), -1.0), 1.0);
}

/// Mean over images of -log softmax(logits_i)[label_i]; logits are (B x C).
inline Var cross_entropy_from_logits(const Var& logits, const std::vector<std::size_t>& labels) {
  const Tensor& l = logits.value();
  if (l.rank() != 2 || l.dim(0) != labels.size()) fail(ErrorCode::kDimension, "logits must be [B x C] with B labels");
  const std::size_t c = l.dim(1);
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= c) {
      fail(ErrorCode::kLabelOutOfRange, "label " + std::to_string(labels[i]) + " with " + std::to_string(c) + " classes");
    }
    picks.push_back(i * c + labels[i]);
  }
  const Var lse = ad::masked_row_log_sum_exp(logits, std::vector<std::uint8_t>(l.size(), 1));
  return ad::mean(ad::sub(lse, ad::gather(logits, std::move(picks))));
}

/// Per-image text features for "SP <class>." with that image's own style, for
/// every candidate class. Returns B entries of (C x D_f).
inline std::vector<Var> candidate_text_features(const TextEncoder& enc, const Var& styles, const std::vector<TokenSequence>& prompts) {
  const std::size_t b = styles.value().dim(0);
  std::vector<Var> out;
  out.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Var style = ad::row(styles, i);
    std::vector<Var> feats;
    feats.reserve(prompts.size());
    for (const auto& p : prompts) feats.push_back(enc.encode(p, style));
    out.push_back(ad::concat_rows(feats));
  }
  return out;
}

/// Tokenized "SP <class>." for every class.
inline std::vector<TokenSequence> class_prompts(const Vocabulary& vocab, const std::vector<std::string>& classes) {
  std::vector<TokenSequence> out;
  for (const auto& c : classes) out.push_back(tokenize(style_prompt_text(c), vocab));
  return out;
}

/// Image-text matching cross-entropy. `candidates[i]` are image i's C text
/// features; `image_feats` is (B x D_i).
inline Var classification_loss(const TextEncoder& enc, const Tensor& image_feats, const std::vector<Var>& candidates,
                               const std::vector<std::size_t>& labels, double ce_scale = 1.0) {
  if (candidates.empty() || candidates.size() != image_feats.dim(0) || labels.size() != candidates.size()) {
    fail(ErrorCode::kDimension, "classification_loss needs one candidate set and label per image");
  }
  std::vector<Var> rows;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    rows.push_back(enc.similarity_logits(image_feats.row(i), candidates[i]));
  }
  Var logits = ad::concat_rows(rows);
  if (ce_scale != 1.0) logits = ad::scale(logits, ce_scale);
  return cross_entropy_from_logits(logits, labels);
}

/// Convenience entry taking styles directly: builds the C candidates per image.
inline Var classification_loss(const TextEncoder& enc, const Tensor& image_feats, const Var& styles,
                               const std::vector<std::size_t>& labels, const std::vector<std::string>& classes,
                               double ce_scale = 1.0) {
  if (classes.empty()) fail(ErrorCode::kEmptyInput, "classification needs at least one class");
  return classification_loss(enc, image_feats, candidate_text_features(enc, styles, class_prompts(enc.bundle().vocab, classes)),
                             labels, ce_scale);
}

struct LossParts {
  Var domain;
  Var reg;
  Var ce;
};

/// w_d * L_D + w_reg * L_reg + L_CE.
inline Var total_loss(const LossParts& parts, const LossWeights& w) {
  for (const Var* v : {&parts.domain, &parts.reg, &parts.ce}) {
    if (!std::isfinite(v->value().item())) fail(ErrorCode::kNonFinite, "loss component is not finite");
  }
  return ad::add(ad::add(ad::scale(parts.domain, w.w_d), ad::scale(parts.reg, w.w_reg)), parts.ce);
}

}  // namespace spdg
