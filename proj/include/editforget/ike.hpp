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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "editforget/corpus.hpp"
#include "editforget/language_model.hpp"
#include "editforget/targets.hpp"

namespace editforget {

enum class DemoKind { kCopy, kUpdate, kRetain };

std::string demo_kind_name(DemoKind kind);

struct Demonstration {
  DemoKind kind = DemoKind::kCopy;
  std::string text;    // the full demonstration placed in the context
  std::string source;  // the text its embedding was computed from
  std::string record_id;
  Vector embedding;    // unit norm
};

struct DemonstrationStore {
  std::vector<Demonstration> entries;
  int k = 2;
};

using EmbedFn = std::function<Vector(std::string_view)>;

// Mean of the final-layer hidden states over the prompt, unit-normalized.
EmbedFn mean_hidden_embedder(std::shared_ptr<const ModelState> state,
                             std::shared_ptr<const Vocabulary> vocab);

struct DescriptorSplit {
  std::vector<EditDescriptor> train;
  std::vector<EditDescriptor> eval;
};

// Seeded split; the training share is rounded to the nearest count and both
// sides keep corpus order.
DescriptorSplit split_descriptors(std::span<const EditDescriptor> descriptors,
                                  double train_fraction, std::uint64_t seed);

// Three entries per training descriptor: copy (the fact asked verbatim),
// update (asked through the paraphrase) and retain (an unrelated retain
// question answered as before).
DemonstrationStore build_demonstration_store(
    std::span<const EditDescriptor> train, std::span<const QaRecord> retain,
    const EmbedFn& embed, int k, std::uint64_t seed);

// Indices of the k most similar entries, most similar first; ties go to the
// lower index.
std::vector<std::size_t> select_demonstrations(const DemonstrationStore& store,
                                               std::string_view query,
                                               const EmbedFn& embed);

struct IclContext {
  std::string text;
  int dropped_demos = 0;
};

// demos..., then the new fact, then the query. Leading demos are dropped
// until the prompt plus `answer_room` tokens fits the context.
IclContext construct_icl_context(const Vocabulary& vocab, int context_len,
                                 std::span<const std::string> demos,
                                 const EditDescriptor& descriptor,
                                 std::string_view query,
                                 int answer_room = 40);

// The base model with every query prefixed by retrieved demonstrations and
// the closest edit fact. Weights are never touched.
class ContextEditedModel : public LanguageModel {
 public:
  ContextEditedModel(std::shared_ptr<const PlainModel> base,
                     DemonstrationStore store,
                     std::vector<EditDescriptor> facts, EmbedFn embed,
                     int answer_room = 40);

  const Vocabulary& vocabulary() const override { return base_->vocabulary(); }
  int context_len() const override { return base_->context_len(); }
  std::vector<int> condition(std::string_view prompt) const override;
  Matrix score_logits(std::span<const int> tokens,
                      std::size_t prompt_len) const override;
  Vector next_logits(std::span<const int> tokens) const override;

  IclContext context_for(std::string_view query) const;
  // Index into the fact list of the edit placed in context for `query`.
  std::size_t fact_for(std::string_view query) const;

 private:
  std::shared_ptr<const PlainModel> base_;
  DemonstrationStore store_;
  std::vector<EditDescriptor> facts_;
  std::vector<Vector> fact_embeddings_;
  EmbedFn embed_;
  int answer_room_;
};

}  // namespace editforget
