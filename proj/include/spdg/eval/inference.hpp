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

// Offline classification: a trained prompter supplies each image's style,
// which fills the pseudo-word slot of "SP <class>." for every candidate class.
// Nothing here writes to a bundle or a prompter.

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/tensor.hpp"
#include "spdg/prompter/style_prompter.hpp"
#include "spdg/pseudo_clip/bundle.hpp"
#include "spdg/pseudo_clip/tokenizer.hpp"

namespace spdg {

struct Prediction {
  std::size_t label = 0;
  std::vector<double> scores;  // logit_scale * cosine, one per class
};

/// First maximum wins, so ties resolve to the lowest class index.
inline std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorCode::kEmptyInput, "argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

/// Text features of "SP <class>." for each class with `style` in the slot (C x D_f).
inline Tensor styled_class_features(const FrozenEncoderBundle& bundle, std::span<const double> style,
                                    const std::vector<std::string>& classes) {
  if (classes.empty()) fail(ErrorCode::kEmptyInput, "inference needs at least one class");
  Tensor out(Shape{classes.size(), bundle.dims.feature});
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const Tensor t = encode_text(bundle, style_prompt_text(classes[c]), style);
    std::copy(t.storage().begin(), t.storage().end(), out.row(c).begin());
  }
  return out;
}

/// Prediction from an already encoded image feature.
inline Prediction infer_feature(const FrozenEncoderBundle& bundle, const StylePrompter& prompter, std::span<const double> z,
                                const std::vector<std::string>& classes) {
  const std::vector<double> style = style_for_prompt(prompter, z);
  Prediction p;
  p.scores = similarity_logits(bundle, z, styled_class_features(bundle, style, classes));
  p.label = argmax(p.scores);
  return p;
}

inline Prediction infer(const FrozenEncoderBundle& bundle, const StylePrompter& prompter, std::span<const double> x,
                        const std::vector<std::string>& classes) {
  if (classes.empty()) fail(ErrorCode::kEmptyInput, "inference needs at least one class");
  return infer_feature(bundle, prompter, encode_image(bundle, x), classes);
}

enum class ZeroShotTemplate { kClass, kPhotoOfClass };

inline std::string to_string(ZeroShotTemplate t) { return t == ZeroShotTemplate::kClass ? "C" : "PC"; }

inline std::string render_zero_shot(ZeroShotTemplate t, const std::string& class_name) {
  return t == ZeroShotTemplate::kClass ? class_name : "a photo of a " + class_name;
}

/// Fixed-template classifier; text features are computed once.
class ZeroShotClassifier {
 public:
  ZeroShotClassifier(const FrozenEncoderBundle& bundle, const std::vector<std::string>& classes, ZeroShotTemplate t)
      : bundle_(&bundle), text_(Shape{std::max<std::size_t>(classes.size(), 1), bundle.dims.feature}) {
    if (classes.empty()) fail(ErrorCode::kEmptyInput, "zero-shot classification needs at least one class");
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const Tensor f = encode_text(bundle, render_zero_shot(t, classes[c]));
      std::copy(f.storage().begin(), f.storage().end(), text_.row(c).begin());
    }
  }

  const Tensor& text_features() const { return text_; }

  Prediction predict_feature(std::span<const double> z) const {
    Prediction p;
    p.scores = similarity_logits(*bundle_, z, text_);
    p.label = argmax(p.scores);
    return p;
  }

  Prediction predict(std::span<const double> x) const { return predict_feature(encode_image(*bundle_, x)); }

 private:
  const FrozenEncoderBundle* bundle_;
  Tensor text_;
};

inline std::size_t zero_shot_baseline(const FrozenEncoderBundle& bundle, std::span<const double> x,
                                      const std::vector<std::string>& classes, ZeroShotTemplate t) {
  return ZeroShotClassifier(bundle, classes, t).predict(x).label;
}

/// Runs `fn(i)` for i in [0, n) over `threads` workers writing to disjoint slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Predicted labels for every row of `x`.
inline std::vector<std::size_t> predict_all(const FrozenEncoderBundle& bundle, const StylePrompter& prompter, const Tensor& x,
                                            const std::vector<std::string>& classes, std::size_t threads = 1) {
  std::vector<std::size_t> out(x.rows());
  parallel_for(x.rows(), threads, [&](std::size_t i) { out[i] = infer(bundle, prompter, x.row(i), classes).label; });
  return out;
}

inline std::vector<std::size_t> predict_all(const ZeroShotClassifier& clf, const Tensor& x, std::size_t threads = 1) {
  std::vector<std::size_t> out(x.rows());
  parallel_for(x.rows(), threads, [&](std::size_t i) { out[i] = clf.predict(x.row(i)).label; });
  return out;
}

inline double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth) {
  if (predicted.size() != truth.size()) fail(ErrorCode::kDimension, "accuracy needs one prediction per label");
  if (truth.empty()) fail(ErrorCode::kEmptyInput, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace spdg
