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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spdg/error.hpp"
#include "spdg/numerics/blob.hpp"
#include "spdg/numerics/ops.hpp"
#include "spdg/numerics/rng.hpp"
#include "spdg/numerics/tape.hpp"
#include "spdg/numerics/tensor.hpp"
#include "spdg/pseudo_clip/tokenizer.hpp"
#include "spdg/pseudo_clip/world.hpp"

namespace spdg {

inline constexpr int kBundleFormatVersion = 1;

struct BundleDims {
  std::size_t input = 32;          // D_x
  std::size_t image_feature = 64;  // D_i
  std::size_t token = 32;          // D_t
  std::size_t feature = 48;        // D_f

  friend bool operator==(const BundleDims&, const BundleDims&) = default;
};

struct BundleOptions {
  double logit_scale = 100.0;
  std::uint64_t world_seed = kDefaultWorldSeed;
  // Alignment fit against the concept world.
  double align_style_strength = 0.8;
  double align_noise_std = 0.15;
  std::size_t align_samples = 16;
  double align_ridge = 1e-2;
  double align_dual_ridge = 1e-2;
};

/// Frozen stand-in for a pre-trained vision-language model. Nothing in here is
/// ever bound to a tape as a trainable leaf.
struct FrozenEncoderBundle {
  std::uint64_t seed = 0;
  BundleDims dims;
  BundleOptions options;
  Vocabulary vocab;

  // Image encoder: z = tanh(x W1 + b1) W2 + b2.
  Tensor image_w1, image_b1, image_w2, image_b2;
  // Image projection into the shared space (no bias, so rescaling z is exact).
  Tensor image_projection;
  Tensor token_embedding;  // V x D_t
  // Text encoder: one single-head self-attention block with residual, mean
  // pooling, projection to D_f.
  Tensor text_wq, text_wk, text_wv, text_proj_w, text_proj_b;

  std::vector<std::pair<std::string, const Tensor*>> named_weights() const {
    return {{"image_w1", &image_w1},       {"image_b1", &image_b1},
            {"image_w2", &image_w2},       {"image_b2", &image_b2},
            {"image_projection", &image_projection},
            {"token_embedding", &token_embedding},
            {"text_wq", &text_wq},         {"text_wk", &text_wk},
            {"text_wv", &text_wv},         {"text_proj_w", &text_proj_w},
            {"text_proj_b", &text_proj_b}};
  }

  std::vector<std::pair<std::string, Tensor*>> mutable_weights() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [name, ptr] : named_weights()) out.emplace_back(name, const_cast<Tensor*>(ptr));
    return out;
  }

  /// FNV-1a over every weight blob; the freeze contract compares this value.
  std::uint64_t weights_checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& [name, t] : named_weights()) h = checksum(*t, fnv1a(name, h));
    return h;
  }
};

/// Sinusoidal positional encoding row for position `pos`.
inline std::vector<double> positional_encoding(std::size_t pos, std::size_t dim) {
  std::vector<double> pe(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
    pe[i] = (i % 2 == 0) ? std::sin(static_cast<double>(pos) * freq) : std::cos(static_cast<double>(pos) * freq);
  }
  return pe;
}

inline std::vector<double> encode_image(const FrozenEncoderBundle& b, std::span<const double> x) {
  const std::size_t dx = b.dims.input, di = b.dims.image_feature;
  if (x.size() != dx) {
    fail(ErrorCode::kDimension, "encode_image expects " + std::to_string(dx) + " inputs, got " + std::to_string(x.size()));
  }
  std::vector<double> hidden(di);
  for (std::size_t j = 0; j < di; ++j) {
    double s = b.image_b1[j];
    for (std::size_t i = 0; i < dx; ++i) s += x[i] * b.image_w1[i * di + j];
    hidden[j] = std::tanh(s);
  }
  std::vector<double> z(di);
  for (std::size_t j = 0; j < di; ++j) {
    double s = b.image_b2[j];
    for (std::size_t i = 0; i < di; ++i) s += hidden[i] * b.image_w2[i * di + j];
    z[j] = s;
  }
  return z;
}

/// Row-wise encode_image for an (n x D_x) matrix.
inline Tensor encode_images(const FrozenEncoderBundle& b, const Tensor& x) {
  if (x.rank() != 2) fail(ErrorCode::kDimension, "encode_images expects a matrix, got " + shape_string(x.shape()));
  Tensor z(Shape{x.dim(0), b.dims.image_feature});
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    const auto zr = encode_image(b, x.row(r));
    std::copy(zr.begin(), zr.end(), z.row(r).begin());
  }
  return z;
}

/// Unit-norm projection of an image feature into the shared space.
inline std::vector<double> project_image(const FrozenEncoderBundle& b, std::span<const double> z) {
  const std::size_t di = b.dims.image_feature, df = b.dims.feature;
  if (z.size() != di) fail(ErrorCode::kDimension, "project_image expects " + std::to_string(di) + " features");
  std::vector<double> u(df, 0.0);
  for (std::size_t i = 0; i < di; ++i)
    for (std::size_t j = 0; j < df; ++j) u[j] += z[i] * b.image_projection[i * df + j];
  return unit(u);
}

/// Text-encoder weights bound once per tape as constants.
class TextEncoder {
 public:
  TextEncoder(const FrozenEncoderBundle& bundle, Tape& tape)
      : bundle_(&bundle),
        tape_(&tape),
        wq_(tape.constant(bundle.text_wq)),
        wk_(tape.constant(bundle.text_wk)),
        wv_(tape.constant(bundle.text_wv)),
        proj_w_(tape.constant(bundle.text_proj_w)),
        proj_b_(tape.constant(bundle.text_proj_b)) {}

  const FrozenEncoderBundle& bundle() const { return *bundle_; }
  Tape& tape() const { return *tape_; }

  /// Token rows for a sequence; the slot row is the given style, the rest are
  /// frozen table lookups.
  Var embed(const TokenSequence& seq, const std::optional<Var>& style) const {
    if (seq.has_slot != style.has_value()) {
      fail(ErrorCode::kSlotMismatch, seq.has_slot ? "sequence has a pseudo-word slot but no style was given"
                                                  : "style given for a sequence without a pseudo-word slot");
    }
    const std::size_t dt = bundle_->dims.token;
    std::vector<Var> rows;
    rows.reserve(seq.length());
    std::size_t k = 0;
    if (seq.has_slot) {
      const Var& s = *style;
      if (s.value().size() != dt) {
        fail(ErrorCode::kDimension, "style embedding has shape " + shape_string(s.value().shape()) + ", expected [" +
                                        std::to_string(dt) + "]");
      }
      rows.push_back(s.value().rank() == 1 ? s : ad::reshape(s, Shape{dt}));
      k = 1;
    }
    if (k < seq.length()) {
      Tensor fixed(Shape{seq.length() - k, dt});
      for (std::size_t i = k; i < seq.length(); ++i) {
        const std::size_t id = seq.ids[i];
        if (id >= bundle_->vocab.size()) fail(ErrorCode::kOutOfVocabulary, "token id out of range");
        const auto src = bundle_->token_embedding.row(id);
        std::copy(src.begin(), src.end(), fixed.row(i - k).begin());
      }
      rows.push_back(tape_->constant(std::move(fixed)));
    }
    return ad::concat_rows(rows);
  }

  /// (L x D_t) embeddings -> D_f text feature.
  Var encode(const Var& embeddings) const {
    const Tensor& e = embeddings.value();
    const std::size_t dt = bundle_->dims.token;
    if (e.rank() != 2 || e.dim(1) != dt) {
      fail(ErrorCode::kDimension, "encode_text expects [L x " + std::to_string(dt) + "], got " + shape_string(e.shape()));
    }
    const std::size_t len = e.dim(0);
    Tensor pe(Shape{len, dt});
    for (std::size_t p = 0; p < len; ++p) {
      const auto row = positional_encoding(p, dt);
      std::copy(row.begin(), row.end(), pe.row(p).begin());
    }
    const Var h = ad::add(embeddings, tape_->constant(std::move(pe)));
    const Var q = ad::matmul(h, wq_);
    const Var k = ad::matmul(h, wk_);
    const Var v = ad::matmul(h, wv_);
    const Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dt))));
    const Var out = ad::add(h, ad::matmul(attn, v));
    const Var pooled = ad::reshape(ad::mean_rows(out), Shape{1, dt});
    return ad::reshape(ad::linear(pooled, proj_w_, proj_b_), Shape{bundle_->dims.feature});
  }

  Var encode(const TokenSequence& seq, const std::optional<Var>& style = std::nullopt) const {
    return encode(embed(seq, style));
  }

  /// logit_c = logit_scale * cos(project(z), text_c).
  Var similarity_logits(std::span<const double> z, const Var& text_feats) const {
    const Tensor& t = text_feats.value();
    const std::size_t df = bundle_->dims.feature;
    if (t.rank() != 2 || t.dim(1) != df) {
      fail(ErrorCode::kDimension, "text features must be [C x " + std::to_string(df) + "], got " + shape_string(t.shape()));
    }
    const auto u = project_image(*bundle_, z);
    const Var col = tape_->constant(Tensor(Shape{df, 1}, u));
    const Var cos = ad::reshape(ad::matmul(ad::l2_normalize(text_feats), col), Shape{t.dim(0)});
    return ad::scale(cos, bundle_->options.logit_scale);
  }

 private:
  const FrozenEncoderBundle* bundle_;
  Tape* tape_;
  Var wq_, wk_, wv_, proj_w_, proj_b_;
};

/// Text feature of a slot-free text, computed on a scratch tape.
inline Tensor encode_text(const FrozenEncoderBundle& b, const std::string& text) {
  Tape tape;
  TextEncoder enc(b, tape);
  return enc.encode(tokenize(text, b.vocab)).value();
}

/// Text feature with a style vector in the pseudo-word slot.
inline Tensor encode_text(const FrozenEncoderBundle& b, const std::string& text, std::span<const double> style) {
  Tape tape;
  TextEncoder enc(b, tape);
  const Var s = tape.constant(Tensor(Shape{style.size()}, std::vector<double>(style.begin(), style.end())));
  return enc.encode(tokenize(text, b.vocab), s).value();
}

/// Plain-value similarity logits for already computed text features (C x D_f).
inline std::vector<double> similarity_logits(const FrozenEncoderBundle& b, std::span<const double> z, const Tensor& text_feats) {
  Tape tape;
  TextEncoder enc(b, tape);
  const Var l = enc.similarity_logits(z, tape.constant(text_feats));
  return l.value().storage();
}

namespace detail {

inline Tensor gaussian_matrix(Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = stddev * rng.normal();
  return t;
}

/// Words that are neither template words nor style-word tokens.
inline std::vector<std::string> concept_words(const Vocabulary& vocab) {
  std::vector<std::string> reserved(kTemplateWords.begin(), kTemplateWords.end());
  for (const auto& s : kStyleWords)
    for (const auto& w : split_words(s)) reserved.push_back(w);
  std::vector<std::string> out;
  for (const auto& w : vocab.words()) {
    if (std::find(reserved.begin(), reserved.end(), w) == reserved.end()) out.push_back(w);
  }
  return out;
}

/// Ridge fit of the image projection. Each world image of caption k is mapped
/// onto the k-th row of the regularized dual basis (T T^T + eps I)^-1 T of the
/// unit caption features T, so its inner product with caption j is close to
/// [j == k] when the captions themselves are nearly collinear.
inline void fit_image_projection(FrozenEncoderBundle& b, Rng& rng) {
  const auto concepts = concept_words(b.vocab);
  std::vector<std::string> styles;
  for (const auto& s : kStyleWords) {
    bool ok = b.vocab.contains("a") && b.vocab.contains("style") && b.vocab.contains("of") && b.vocab.contains(".");
    for (const auto& w : split_words(s)) ok = ok && b.vocab.contains(w);
    if (ok) styles.push_back(s);
  }
  if (concepts.empty() || styles.empty()) return;

  const ConceptWorld world(b.options.world_seed, b.dims.input);
  const std::size_t di = b.dims.image_feature, df = b.dims.feature;
  const std::size_t captions = concepts.size() * styles.size();
  Eigen::MatrixXd text(static_cast<Eigen::Index>(captions), static_cast<Eigen::Index>(df));
  Eigen::Index k = 0;
  for (const auto& style : styles) {
    for (const auto& c : concepts) {
      const auto t = unit(encode_text(b, style_template_text(style, c)).data());
      for (std::size_t j = 0; j < df; ++j) text(k, static_cast<Eigen::Index>(j)) = t[j];
      ++k;
    }
  }
  Eigen::MatrixXd caption_gram = text * text.transpose();
  caption_gram.diagonal().array() += b.options.align_dual_ridge * caption_gram.trace() / static_cast<double>(captions);
  const Eigen::MatrixXd dual = caption_gram.ldlt().solve(text);

  const std::size_t n = captions * b.options.align_samples;
  Eigen::MatrixXd feats(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(di));
  Eigen::MatrixXd targets(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(df));
  Eigen::Index row = 0;
  k = 0;
  for (const auto& style : styles) {
    const Tensor transform = world.style_transform(style, b.options.align_style_strength);
    for (const auto& c : concepts) {
      const auto proto = world.prototype(c);
      for (std::size_t s = 0; s < b.options.align_samples; ++s) {
        std::vector<double> x = proto;
        for (double& v : x) v += b.options.align_noise_std * rng.normal();
        const auto z = encode_image(b, apply_transform(transform, x));
        for (std::size_t j = 0; j < di; ++j) feats(row, static_cast<Eigen::Index>(j)) = z[j];
        targets.row(row) = dual.row(k);
        ++row;
      }
      ++k;
    }
  }
  Eigen::MatrixXd gram = feats.transpose() * feats;
  const double lambda = b.options.align_ridge * gram.trace() / static_cast<double>(di);
  gram.diagonal().array() += lambda;
  const Eigen::MatrixXd proj = gram.ldlt().solve(feats.transpose() * targets);
  for (std::size_t i = 0; i < di; ++i)
    for (std::size_t j = 0; j < df; ++j) b.image_projection[i * df + j] = proj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
}

}  // namespace detail

/// Deterministic frozen bundle for (dims, vocabulary, seed, options).
inline FrozenEncoderBundle build_bundle(const BundleDims& dims, std::vector<std::string> vocab_words, std::uint64_t seed,
                                        const BundleOptions& options = {}) {
  if (dims.input < 2 || dims.image_feature < 2 || dims.token < 2 || dims.feature < 2) {
    fail(ErrorCode::kConfig, "all bundle dimensions must be >= 2");
  }
  if (!(options.logit_scale > 0.0)) fail(ErrorCode::kConfig, "logit_scale must be positive");
  FrozenEncoderBundle b;
  b.seed = seed;
  b.dims = dims;
  b.options = options;
  b.vocab = Vocabulary(std::move(vocab_words));

  Rng rng(derive_seed(seed, "bundle"));
  const std::size_t dx = dims.input, di = dims.image_feature, dt = dims.token, df = dims.feature;
  b.image_w1 = detail::gaussian_matrix(rng, {dx, di}, 1.0);
  b.image_b1 = detail::gaussian_matrix(rng, {di}, 0.1);
  b.image_w2 = detail::gaussian_matrix(rng, {di, di}, 1.0 / std::sqrt(static_cast<double>(di)));
  b.image_b2 = detail::gaussian_matrix(rng, {di}, 0.1);
  b.token_embedding = detail::gaussian_matrix(rng, {b.vocab.size(), dt}, 1.0);
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(dt));
  b.text_wq = detail::gaussian_matrix(rng, {dt, dt}, attn_std);
  b.text_wk = detail::gaussian_matrix(rng, {dt, dt}, attn_std);
  b.text_wv = detail::gaussian_matrix(rng, {dt, dt}, attn_std);
  b.text_proj_w = detail::gaussian_matrix(rng, {dt, df}, attn_std);
  b.text_proj_b = detail::gaussian_matrix(rng, {df}, 0.02);
  b.image_projection = detail::gaussian_matrix(rng, {di, df}, 1.0 / std::sqrt(static_cast<double>(di)));

  Rng align_rng(derive_seed(seed, "align"));
  detail::fit_image_projection(b, align_rng);
  return b;
}

inline void save_bundle(const FrozenEncoderBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format_version"] = kBundleFormatVersion;
  m["seed"] = b.seed;
  m["world_seed"] = b.options.world_seed;
  m["dims"] = {{"input", b.dims.input}, {"image_feature", b.dims.image_feature}, {"token", b.dims.token}, {"feature", b.dims.feature}};
  m["vocab"] = b.vocab.words();
  m["logit_scale"] = b.options.logit_scale;
  m["align"] = {{"style_strength", b.options.align_style_strength},
                {"noise_std", b.options.align_noise_std},
                {"samples", b.options.align_samples},
                {"ridge", b.options.align_ridge},
                {"dual_ridge", b.options.align_dual_ridge}};
  m["checksum"] = b.weights_checksum();
  for (const auto& [name, t] : b.named_weights()) save_blob(dir / (name + ".spdg"), *t);
  std::ofstream os(dir / "manifest.json");
  if (!os) fail(ErrorCode::kIo, "cannot write bundle manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

inline FrozenEncoderBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) fail(ErrorCode::kIo, "missing bundle manifest in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("bad bundle manifest: ") + e.what());
  }
  if (m.value("format_version", -1) != kBundleFormatVersion) {
    fail(ErrorCode::kUnsupportedVersion, "bundle format_version " + m.value("format_version", nlohmann::json()).dump());
  }
  FrozenEncoderBundle b;
  b.seed = m.at("seed").get<std::uint64_t>();
  b.options.world_seed = m.at("world_seed").get<std::uint64_t>();
  b.options.logit_scale = m.at("logit_scale").get<double>();
  const auto& al = m.at("align");
  b.options.align_style_strength = al.at("style_strength").get<double>();
  b.options.align_noise_std = al.at("noise_std").get<double>();
  b.options.align_samples = al.at("samples").get<std::size_t>();
  b.options.align_ridge = al.at("ridge").get<double>();
  b.options.align_dual_ridge = al.at("dual_ridge").get<double>();
  const auto& d = m.at("dims");
  b.dims = {d.at("input").get<std::size_t>(), d.at("image_feature").get<std::size_t>(), d.at("token").get<std::size_t>(),
            d.at("feature").get<std::size_t>()};
  b.vocab = Vocabulary(m.at("vocab").get<std::vector<std::string>>());
  const std::size_t dx = b.dims.input, di = b.dims.image_feature, dt = b.dims.token, df = b.dims.feature;
  const std::vector<std::pair<std::string, Shape>> expected = {
      {"image_w1", {dx, di}}, {"image_b1", {di}},         {"image_w2", {di, di}},          {"image_b2", {di}},
      {"image_projection", {di, df}}, {"token_embedding", {b.vocab.size(), dt}},
      {"text_wq", {dt, dt}},  {"text_wk", {dt, dt}},      {"text_wv", {dt, dt}},           {"text_proj_w", {dt, df}},
      {"text_proj_b", {df}}};
  auto weights = b.mutable_weights();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor t = load_blob(dir / (weights[i].first + ".spdg"));
    if (t.shape() != expected[i].second) {
      fail(ErrorCode::kShapeMismatch, weights[i].first + " has shape " + shape_string(t.shape()) + ", expected " +
                                          shape_string(expected[i].second));
    }
    *weights[i].second = std::move(t);
  }
  if (m.contains("checksum") && m["checksum"].get<std::uint64_t>() != b.weights_checksum()) {
    fail(ErrorCode::kIo, "bundle checksum mismatch in " + dir.string());
  }
  return b;
}

}  // namespace spdg
