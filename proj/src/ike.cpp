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


#include "editforget/ike.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "editforget/error.hpp"
#include "editforget/icl_format.hpp"
#include "editforget/rng.hpp"

namespace editforget {

namespace {

std::string relation_of(const std::string& record_id) {
  const auto dot = record_id.find('.');
  return dot == std::string::npos ? record_id : record_id.substr(dot + 1);
}

double cosine(const Vector& a, const Vector& b) {
  return static_cast<double>(a.cast<double>().dot(b.cast<double>()));
}

}  // namespace

std::string demo_kind_name(DemoKind kind) {
  switch (kind) {
    case DemoKind::kCopy:
      return "copy";
    case DemoKind::kUpdate:
      return "update";
    case DemoKind::kRetain:
      return "retain";
  }
  return "copy";
}

EmbedFn mean_hidden_embedder(std::shared_ptr<const ModelState> state,
                             std::shared_ptr<const Vocabulary> vocab) {
  return [state, vocab](std::string_view text) -> Vector {
    const Matrix h = final_hidden(*state, vocab->encode_prompt(text));
    Vector v = h.colwise().mean().transpose();
    const float n = v.norm();
    if (!(n > 0.0f)) fail(ErrorKind::kNumeric, "zero embedding");
    return v / n;
  };
}

DescriptorSplit split_descriptors(std::span<const EditDescriptor> descriptors,
                                  double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    fail(ErrorKind::kConfig, "ike.train_fraction: must be in (0, 1)");
  }
  std::vector<std::size_t> idx(descriptors.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "ike-split"));
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(
      std::lround(train_fraction * static_cast<double>(descriptors.size())));
  std::vector<char> in_train(descriptors.size(), 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[idx[i]] = 1;
  DescriptorSplit out;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    (in_train[i] ? out.train : out.eval).push_back(descriptors[i]);
  }
  return out;
}

DemonstrationStore build_demonstration_store(
    std::span<const EditDescriptor> train, std::span<const QaRecord> retain,
    const EmbedFn& embed, int k, std::uint64_t seed) {
  if (retain.empty()) fail(ErrorKind::kValidation, "retain demonstrations need retain records");
  DemonstrationStore store;
  store.k = k;
  for (const auto& d : train) {
    store.entries.push_back({DemoKind::kCopy,
                             icl_demo(d.prompt, d.target, d.prompt, d.target),
                             d.prompt, d.record_id, embed(d.prompt)});
    store.entries.push_back({DemoKind::kUpdate,
                             icl_demo(d.prompt, d.target, d.paraphrase, d.target),
                             d.paraphrase, d.record_id, embed(d.paraphrase)});
    // A retain fact of the same relation when there is one.
    std::vector<const QaRecord*> similar;
    for (const auto& r : retain) {
      if (relation_of(r.id) == relation_of(d.record_id)) similar.push_back(&r);
    }
    Rng rng(derive_seed(seed, "retain-demo:" + d.record_id));
    const QaRecord& r = similar.empty() ? retain[rng.below(retain.size())]
                                        : *similar[rng.below(similar.size())];
    store.entries.push_back({DemoKind::kRetain,
                             icl_demo(d.prompt, d.target, r.question, r.answer),
                             r.question, d.record_id, embed(r.question)});
  }
  if (k > static_cast<int>(store.entries.size())) {
    fail(ErrorKind::kConfig, "ike.k: " + std::to_string(k) +
                                 " exceeds the store size " +
                                 std::to_string(store.entries.size()));
  }
  return store;
}

std::vector<std::size_t> select_demonstrations(const DemonstrationStore& store,
                                               std::string_view query,
                                               const EmbedFn& embed) {
  if (store.entries.empty()) fail(ErrorKind::kValidation, "empty demonstration store");
  const Vector q = embed(query);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < store.entries.size(); ++i) {
    scored.emplace_back(cosine(q, store.entries[i].embedding), i);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  const std::size_t k = std::min<std::size_t>(std::max(store.k, 0), scored.size());
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

IclContext construct_icl_context(const Vocabulary& vocab, int context_len,
                                 std::span<const std::string> demos,
                                 const EditDescriptor& descriptor,
                                 std::string_view query, int answer_room) {
  const std::string tail =
      icl_fact(descriptor.prompt, descriptor.target) + "\n" + icl_query(query);
  const auto fits = [&](const std::string& text) {
    return static_cast<int>(vocab.encode_prompt(text).size()) + answer_room <=
           context_len;
  };
  if (!fits(tail)) {
    fail(ErrorKind::kLength, "new fact and query alone exceed the context for " +
                                 descriptor.record_id);
  }
  IclContext ctx;
  for (std::size_t first = 0; first <= demos.size(); ++first) {
    std::string text;
    for (std::size_t i = first; i < demos.size(); ++i) text += demos[i] + "\n";
    text += tail;
    if (fits(text)) {
      ctx.text = std::move(text);
      ctx.dropped_demos = static_cast<int>(first);
      return ctx;
    }
  }
  ctx.text = tail;
  ctx.dropped_demos = static_cast<int>(demos.size());
  return ctx;
}

ContextEditedModel::ContextEditedModel(std::shared_ptr<const PlainModel> base,
                                       DemonstrationStore store,
                                       std::vector<EditDescriptor> facts,
                                       EmbedFn embed, int answer_room)
    : base_(std::move(base)),
      store_(std::move(store)),
      facts_(std::move(facts)),
      embed_(std::move(embed)),
      answer_room_(answer_room) {
  if (facts_.empty()) fail(ErrorKind::kValidation, "in-context editing without facts");
  for (const auto& f : facts_) fact_embeddings_.push_back(embed_(f.prompt));
}

std::size_t ContextEditedModel::fact_for(std::string_view query) const {
  for (std::size_t i = 0; i < facts_.size(); ++i) {
    if (facts_[i].prompt == query) return i;
  }
  const Vector q = embed_(query);
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < facts_.size(); ++i) {
    const double s = cosine(q, fact_embeddings_[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

IclContext ContextEditedModel::context_for(std::string_view query) const {
  const auto picked = select_demonstrations(store_, query, embed_);
  // Most similar demonstration sits next to the fact; the least similar is
  // the first to go when space runs out.
  std::vector<std::string> demos;
  for (auto it = picked.rbegin(); it != picked.rend(); ++it) {
    demos.push_back(store_.entries[*it].text);
  }
  return construct_icl_context(base_->vocabulary(), base_->context_len(), demos,
                               facts_[fact_for(query)], query, answer_room_);
}

std::vector<int> ContextEditedModel::condition(std::string_view prompt) const {
  return base_->vocabulary().encode_prompt(context_for(prompt).text);
}

Matrix ContextEditedModel::score_logits(std::span<const int> tokens,
                                        std::size_t prompt_len) const {
  return base_->score_logits(tokens, prompt_len);
}

Vector ContextEditedModel::next_logits(std::span<const int> tokens) const {
  return base_->next_logits(tokens);
}

}  // namespace editforget
