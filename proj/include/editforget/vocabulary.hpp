// Copyright 2026 The editforget Authors.
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

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace editforget {

// Word-level split: alphanumeric runs (with inner hyphens and apostrophes),
// a trailing possessive "'s" as its own word, and single punctuation marks.
std::vector<std::string> split_words(std::string_view text);

// Inverse of split_words up to whitespace normalization.
std::string join_words(std::span<const std::string> words);

inline std::string normalize_text(std::string_view text) {
  const auto words = split_words(text);
  return join_words(words);
}

struct Tokenized {
  std::vector<int> ids;
  bool has_unknown = false;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  // `tokens` must start with the four special tokens.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Sorted word set of `texts` after the special tokens.
  static Vocabulary build(std::span<const std::string> texts);

  Tokenized tokenize(std::string_view text) const;
  // Special tokens are dropped; unknown ids render as "<unk>".
  std::string detokenize(std::span<const int> ids) const;

  // [bos] + tokenize(text).
  std::vector<int> encode_prompt(std::string_view text) const;
  std::vector<int> encode(std::string_view text) const {
    return tokenize(text).ids;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }
  int find(std::string_view word) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace editforget
