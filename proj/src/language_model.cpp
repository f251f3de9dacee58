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

#include "editforget/language_model.hpp"

#include <cmath>

#include "editforget/error.hpp"

namespace editforget {

Matrix PlainModel::score_logits(std::span<const int> tokens,
                                std::size_t) const {
  return forward(state_->config, state_->params, tokens);
}

Vector PlainModel::next_logits(std::span<const int> tokens) const {
  const Matrix logits = forward(state_->config, state_->params, tokens);
  return logits.row(logits.rows() - 1).transpose();
}

std::vector<int> generate_greedy_ids(const LanguageModel& model,
                                     std::string_view prompt, int max_tokens) {
  std::vector<int> tokens = model.condition(prompt);
  if (static_cast<int>(tokens.size()) > model.context_len()) {
    fail(ErrorKind::kLength, "prompt exceeds context length");
  }
  std::vector<int> out;
  for (int step = 0; step < max_tokens; ++step) {
    if (static_cast<int>(tokens.size()) >= model.context_len()) break;
    const Vector logits = model.next_logits(tokens);
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    const int id = static_cast<int>(best);
    if (id == Vocabulary::kEos) break;
    out.push_back(id);
    tokens.push_back(id);
  }
  return out;
}

std::string generate_greedy(const LanguageModel& model, std::string_view prompt,
                            int max_tokens) {
  const auto ids = generate_greedy_ids(model, prompt, max_tokens);
  return model.vocabulary().detokenize(ids);
}

double answer_nll(const LanguageModel& model, std::string_view question,
                  std::string_view answer) {
  const auto answer_ids = model.vocabulary().encode(answer);
  if (answer_ids.empty()) {
    fail(ErrorKind::kValidation, "answer probability of an empty answer");
  }
  Sequence seq;
  seq.tokens = model.condition(question);
  seq.prompt_len = seq.tokens.size();
  seq.tokens.insert(seq.tokens.end(), answer_ids.begin(), answer_ids.end());
  const Matrix logits = model.score_logits(seq.tokens, seq.prompt_len);
  return completion_nll(logits, seq);
}

double normalized_answer_probability(const LanguageModel& model,
                                     std::string_view question,
                                     std::string_view answer) {
  return std::exp(-answer_nll(model, question, answer));
}

}  // namespace editforget
