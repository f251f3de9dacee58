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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "editforget/corpus.hpp"
#include "editforget/targets.hpp"
#include "editforget/transformer.hpp"
#include "editforget/vocabulary.hpp"

namespace editforget {

// Texts beyond the corpus that models must be able to read and emit: the
// edit targets, non-answers, and the in-context editing markers.
std::vector<std::string> auxiliary_texts();

// Vocabulary over the closed corpus vocabulary plus auxiliary_texts().
Vocabulary build_vocabulary(std::span<const QaRecord> records);

Sequence make_sequence(const Vocabulary& vocab, const std::string& prompt,
                       const std::string& completion, bool append_eos = true);

// question -> answer (and paraphrase -> answer) sequences.
std::vector<Sequence> qa_sequences(std::span<const QaRecord> records,
                                   const Vocabulary& vocab,
                                   bool include_paraphrases);

struct CurriculumConfig {
  bool include_paraphrases = true;
  // In-context examples generated per epoch; 0 disables them.
  int icl_examples = 1500;
  int max_demos = 1;
  // Chance that an example carries demonstrations at all.
  double demo_rate = 0.3;
  // Chance that a negative example states a fact of the same relation about
  // another subject.
  double hard_negative_rate = 0.5;
  // Share of copy and update examples about authors generated fresh each
  // epoch, whose facts the model cannot know and therefore has to read.
  double novel_fraction = 0.5;
  std::uint64_t seed = 11;
};

// In-context editing examples built only from `pool` (the records the model
// is allowed to see). Regenerated per epoch from (seed, epoch).
std::vector<Sequence> icl_sequences(std::span<const QaRecord> pool,
                                    const Vocabulary& vocab,
                                    const CurriculumConfig& config, int epoch,
                                    int context_len,
                                    std::span<const std::string> excluded_subjects = {});

}  // namespace editforget
