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


#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "editforget/error.hpp"
#include "editforget/eval.hpp"
#include "editforget/icl_format.hpp"
#include "editforget/ike.hpp"
#include "editforget/targets.hpp"
#include "test_support.hpp"

namespace editforget {
namespace {

using testing_support::tiny_world;

std::vector<EditDescriptor> forty_descriptors() {
  const auto records = generate_corpus(CorpusConfig{});
  const auto sets = split_sets(records, 0.1);
  return build_descriptors(sets.forget, sets.retain, TargetKind::kDummy, 2);
}

TEST(SplitDescriptors, NinetyTen) {
  const auto d = forty_descriptors();
  const auto s = split_descriptors(d, 0.9, 8);
  EXPECT_EQ(s.train.size(), 36u);
  EXPECT_EQ(s.eval.size(), 4u);
  std::vector<std::string> ids;
  for (const auto& x : s.train) ids.push_back(x.record_id);
  for (const auto& x : s.eval) {
    EXPECT_EQ(std::find(ids.begin(), ids.end(), x.record_id), ids.end());
  }
  EXPECT_EQ(split_descriptors(d, 0.9, 8).eval, s.eval);
}

// Embeds texts through a fixed lookup so that similarities are known.
EmbedFn table_embedder(std::map<std::string, Vector> table) {
  return [table](std::string_view text) {
    auto it = table.find(std::string(text));
    if (it == table.end()) fail(ErrorKind::kValidation, "unexpected text");
    return it->second;
  };
}

TEST(SelectDemonstrations, OrthogonalStoreTieBreak) {
  DemonstrationStore store;
  store.k = 3;
  for (int i = 0; i < 3; ++i) {
    Demonstration d;
    d.embedding = Vector::Zero(3);
    d.embedding(i) = 1.0f;
    d.source = "e" + std::to_string(i);
    store.entries.push_back(d);
  }
  Vector q = Vector::Zero(3);
  q(2) = 1.0f;
  const auto embed = table_embedder({{"q", q}});
  EXPECT_EQ(select_demonstrations(store, "q", embed), (std::vector<std::size_t>{2, 0, 1}));
  store.k = 1;
  EXPECT_EQ(select_demonstrations(store, "q", embed), (std::vector<std::size_t>{2}));
}

TEST(DemonstrationStore, ThreeEntriesPerDescriptor) {
  const auto& w = tiny_world();
  const auto desc = build_descriptors(w.sets.forget, w.sets.retain, TargetKind::kIncorrect, 2);
  const EmbedFn embed = mean_hidden_embedder(w.model, w.vocab);
  const DemonstrationStore store = build_demonstration_store(desc, w.sets.retain, embed, 2, 1);
  ASSERT_EQ(store.entries.size(), 3 * desc.size());
  std::map<DemoKind, int> kinds;
  for (const auto& e : store.entries) {
    EXPECT_NEAR(e.embedding.norm(), 1.0, 1e-6);
    ++kinds[e.kind];
  }
  EXPECT_EQ(kinds[DemoKind::kCopy], static_cast<int>(desc.size()));
  EXPECT_EQ(kinds[DemoKind::kUpdate], static_cast<int>(desc.size()));
  EXPECT_EQ(kinds[DemoKind::kRetain], static_cast<int>(desc.size()));
  // A query equal to an entry's source ranks that entry first.
  const auto picked = select_demonstrations(store, store.entries[4].source, embed);
  EXPECT_NEAR(store.entries[picked[0]].embedding.dot(store.entries[4].embedding), 1.0, 1e-6);
  DemonstrationStore all = store;
  all.k = static_cast<int>(store.entries.size());
  auto perm = select_demonstrations(all, "anything", embed);
  std::sort(perm.begin(), perm.end());
  std::vector<std::size_t> expect(store.entries.size());
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(perm, expect);
  EXPECT_THROW(build_demonstration_store(desc, w.sets.retain, embed, 100, 1), Error);
}

TEST(IclContext, LayoutAndLimits) {
  const auto& w = tiny_world();
  const auto desc = build_descriptors(w.sets.forget, w.sets.retain, TargetKind::kDummy, 2);
  const auto bare = construct_icl_context(*w.vocab, 96, {}, desc[0], desc[0].paraphrase);
  EXPECT_EQ(bare.text, icl_fact(desc[0].prompt, desc[0].target) + "\n" +
                           icl_query(desc[0].paraphrase));
  EXPECT_EQ(bare.dropped_demos, 0);
  const std::string demo = icl_demo(desc[1].prompt, "dummy", desc[1].prompt, "dummy");
  const std::vector<std::string> many(6, demo);
  const auto fitted = construct_icl_context(*w.vocab, 96, many, desc[0], desc[0].prompt);
  EXPECT_GT(fitted.dropped_demos, 0);
  EXPECT_TRUE(fitted.text.ends_with(desc[0].prompt));
  EXPECT_LE(w.vocab->encode_prompt(fitted.text).size() + 40, 96u);
  try {
    construct_icl_context(*w.vocab, 20, {}, desc[0], desc[0].prompt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLength);
  }
}

TEST(ContextEditedModel, NeverTouchesWeights) {
  const auto& w = tiny_world();
  const auto desc = build_descriptors(w.sets.forget, w.sets.retain, TargetKind::kDummy, 2);
  const std::uint64_t before = w.model->checksum();
  const EmbedFn embed = mean_hidden_embedder(w.model, w.vocab);
  auto base = std::make_shared<const PlainModel>(w.model, w.vocab);
  ContextEditedModel ike(base, build_demonstration_store(desc, w.sets.retain, embed, 1, 1),
                         desc, embed, 20);
  for (const auto& d : desc) {
    EXPECT_EQ(desc[ike.fact_for(d.prompt)].record_id, d.record_id);
    const auto ctx = ike.context_for(d.paraphrase);
    EXPECT_TRUE(ctx.text.ends_with(icl_query(d.paraphrase)));
    generate_greedy(ike, d.prompt, 3);
    normalized_answer_probability(ike, d.prompt, d.target);
  }
  edit_metrics(ike, *base, desc);
  EXPECT_EQ(w.model->checksum(), before);
}

}  // namespace
}  // namespace editforget
