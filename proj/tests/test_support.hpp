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


// A tiny corpus and a small model memorised on it, shared by the tests that
// need a model that actually knows some facts.

#pragma once

#include <memory>
#include <vector>

#include "editforget/corpus.hpp"
#include "editforget/model.hpp"
#include "editforget/training_data.hpp"
#include "editforget/vocabulary.hpp"

namespace editforget::testing_support {

struct TinyWorld {
  std::vector<QaRecord> records;
  SplitSets sets;
  std::shared_ptr<const Vocabulary> vocab;
  std::shared_ptr<const ModelState> model;
};

inline CorpusConfig tiny_corpus_config() {
  CorpusConfig c;
  c.n_authors = 4;
  c.questions_per_author = 4;
  c.forget_fraction = 0.25;
  c.n_world_records = 2;
  return c;
}

inline ModelConfig tiny_model_config(int vocab_size, int n_layers = 2) {
  ModelConfig m;
  m.n_layers = n_layers;
  m.d_model = 32;
  m.n_heads = 2;
  m.d_ffn = 64;
  m.context_len = 96;
  m.vocab_size = vocab_size;
  m.seed = 3;
  return m;
}

inline const TinyWorld& tiny_world() {
  static const TinyWorld world = [] {
    TinyWorld w;
    w.records = generate_corpus(tiny_corpus_config());
    w.sets = split_sets(w.records, 0.25);
    w.vocab = std::make_shared<const Vocabulary>(build_vocabulary(w.records));
    TrainHyper h;
    h.epochs = 120;
    h.lr = 3e-3;
    h.batch = 8;
    h.warmup_steps = 20;
    const auto seqs = qa_sequences(w.records, *w.vocab, true);
    w.model = std::make_shared<const ModelState>(
        train(ModelState::create(tiny_model_config(w.vocab->size())), seqs, h));
    return w;
  }();
  return world;
}

}  // namespace editforget::testing_support
