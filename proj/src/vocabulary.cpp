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

#include "editforget/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "editforget/error.hpp"

namespace editforget {
namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80;
}

bool attaches_left(const std::string& w) {
  return w == "." || w == "," || w == "?" || w == "!" || w == ":" || w == ";" ||
         w == "'s" || w == ")";
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto word_at = [&](std::size_t j) { return j < n && is_word_char(text[j]); };
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '\'' && i + 1 < n && text[i + 1] == 's' && !word_at(i + 2)) {
      out.emplace_back("'s");
      i += 2;
      continue;
    }
    if (!is_word_char(c)) {
      out.emplace_back(1, c);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (true) {
      while (word_at(j)) ++j;
      if (j < n && text[j] == '-' && word_at(j + 1)) {
        ++j;
        continue;
      }
      if (j < n && text[j] == '\'' && word_at(j + 1)) {
        std::size_t k = j + 1;
        while (word_at(k)) ++k;
        if (k == j + 2 && text[j + 1] == 's') break;  // possessive
        j = k;
        continue;
      }
      break;
    }
    out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  bool open_quote = false;
  bool suppress_space = true;
  for (const auto& w : words) {
    bool space = !suppress_space;
    suppress_space = false;
    if (attaches_left(w)) space = false;
    if (w == "\"") {
      if (open_quote) {
        space = false;
      } else {
        suppress_space = true;
      }
      open_quote = !open_quote;
    }
    if (w == "(") suppress_space = true;
    if (space) out += ' ';
    out += w;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens)
    : tokens_(std::move(tokens)) {
  if (tokens_.size() < kSpecials.size() ||
      !std::equal(kSpecials.begin(), kSpecials.end(), tokens_.begin())) {
    fail(ErrorKind::kValidation,
         "vocabulary must start with <pad> <bos> <eos> <unk>");
  }
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      fail(ErrorKind::kValidation, "duplicate vocabulary token " + tokens_[i]);
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens = kSpecials;
  for (const auto& w : words) {
    if (std::find(kSpecials.begin(), kSpecials.end(), w) == kSpecials.end()) {
      tokens.push_back(w);
    }
  }
  return Vocabulary(std::move(tokens));
}

Tokenized Vocabulary::tokenize(std::string_view text) const {
  Tokenized out;
  for (const auto& w : split_words(text)) {
    const auto it = index_.find(w);
    if (it == index_.end()) {
      out.ids.push_back(kUnk);
      out.has_unknown = true;
    } else {
      out.ids.push_back(it->second);
    }
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    words.push_back(id >= 0 && id < size() ? tokens_[id] : tokens_[kUnk]);
  }
  return join_words(words);
}

std::vector<int> Vocabulary::encode_prompt(std::string_view text) const {
  std::vector<int> ids{kBos};
  const auto t = tokenize(text);
  ids.insert(ids.end(), t.ids.begin(), t.ids.end());
  return ids;
}

int Vocabulary::find(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

}  // namespace editforget
