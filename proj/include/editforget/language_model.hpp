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

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "editforget/model.hpp"
#include "editforget/vocabulary.hpp"

namespace editforget {

// Anything that can be scored and decoded like a language model: a plain
// checkpoint, a weight-edited one, a context-edited one, or a model with a
// routed side memory.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocabulary() const = 0;
  virtual int context_len() const = 0;

  // Token ids the model conditions on when asked `prompt`. Starts with <bos>.
  virtual std::vector<int> condition(std::string_view prompt) const {
    return vocabulary().encode_prompt(prompt);
  }

  // Logits for every position of `tokens`, whose first `prompt_len` entries
  // are the conditioned prompt (used for teacher-forced scoring).
  virtual Matrix score_logits(std::span<const int> tokens,
                              std::size_t prompt_len) const = 0;

  // Next-token logits after `tokens` during greedy decoding.
  virtual Vector next_logits(std::span<const int> tokens) const = 0;
};

class PlainModel : public LanguageModel {
 public:
  PlainModel(std::shared_ptr<const ModelState> state,
             std::shared_ptr<const Vocabulary> vocab)
      : state_(std::move(state)), vocab_(std::move(vocab)) {}

  const Vocabulary& vocabulary() const override { return *vocab_; }
  int context_len() const override { return state_->config.context_len; }
  Matrix score_logits(std::span<const int> tokens,
                      std::size_t prompt_len) const override;
  Vector next_logits(std::span<const int> tokens) const override;

  const ModelState& state() const { return *state_; }
  std::shared_ptr<const ModelState> shared_state() const { return state_; }
  std::shared_ptr<const Vocabulary> shared_vocabulary() const { return vocab_; }

 private:
  std::shared_ptr<const ModelState> state_;
  std::shared_ptr<const Vocabulary> vocab_;
};

// Greedy decoding; stops at <eos>, after max_tokens, or at the context limit.
std::vector<int> generate_greedy_ids(const LanguageModel& model,
                                     std::string_view prompt, int max_tokens);
std::string generate_greedy(const LanguageModel& model, std::string_view prompt,
                            int max_tokens);

// Mean NLL of `answer` given the conditioned `question`.
double answer_nll(const LanguageModel& model, std::string_view question,
                  std::string_view answer);

// P(answer | question)^(1/|answer tokens|).
double normalized_answer_probability(const LanguageModel& model,
                                     std::string_view question,
                                     std::string_view answer);

}  // namespace editforget
