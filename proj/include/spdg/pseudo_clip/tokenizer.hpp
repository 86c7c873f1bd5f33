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
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/pseudo_clip/world.hpp"

namespace spdg {

/// Closed word-level vocabulary.
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.empty()) fail(ErrorCode::kConfig, "vocabulary is empty");
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second) fail(ErrorCode::kDuplicateVocab, "duplicate vocabulary word '" + words_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::string& word(std::size_t id) const { return words_.at(id); }

  std::optional<std::size_t> find(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& w) const { return index_.count(w) != 0; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

/// Template words, then style-word tokens, then class-name tokens, first
/// occurrence wins.
inline std::vector<std::string> default_vocabulary(const std::vector<std::string>& class_names) {
  std::vector<std::string> words;
  auto push = [&](const std::string& phrase) {
    for (const std::string& w : split_words(to_lower(phrase))) {
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    }
  };
  for (const auto& w : kTemplateWords) push(w);
  for (const auto& w : kStyleWords) push(w);
  for (const auto& c : class_names) push(c);
  return words;
}

/// Token ids with an optional pseudo-word slot, which is always position 0.
struct TokenSequence {
  std::vector<std::size_t> ids;  // ids[0] is meaningless when has_slot
  bool has_slot = false;
  std::string source_text;

  std::size_t length() const noexcept { return ids.size(); }
};

inline constexpr std::string_view kPseudoWord = "SP";

/// Lowercase word-level split; a trailing period becomes its own "." token and
/// the literal word "SP" marks the pseudo-word slot.
inline TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.source_text = std::string(text);
  const auto raw = split_words(text);
  if (raw.empty()) fail(ErrorCode::kEmptyInput, "cannot tokenize empty text");
  for (std::string word : raw) {
    bool period = false;
    if (word.size() > 1 && word.back() == '.') {
      word.pop_back();
      period = true;
    }
    if (word == kPseudoWord) {
      if (seq.has_slot || !seq.ids.empty()) {
        fail(ErrorCode::kContract, "pseudo-word must appear once, at the start: '" + seq.source_text + "'");
      }
      seq.has_slot = true;
      seq.ids.push_back(0);
    } else {
      const std::string lw = to_lower(word);
      const auto id = vocab.find(lw);
      if (!id) fail(ErrorCode::kOutOfVocabulary, "word '" + lw + "' is not in the vocabulary");
      seq.ids.push_back(*id);
    }
    if (period) {
      const auto dot = vocab.find(".");
      if (!dot) fail(ErrorCode::kOutOfVocabulary, "word '.' is not in the vocabulary");
      seq.ids.push_back(*dot);
    }
  }
  return seq;
}

/// "SP <class>."
inline std::string style_prompt_text(std::string_view class_name) { return "SP " + std::string(class_name) + "."; }

/// "a <style> style of a <class>."
inline std::string style_template_text(std::string_view style, std::string_view class_name) {
  return "a " + std::string(style) + " style of a " + std::string(class_name) + ".";
}

}  // namespace spdg
