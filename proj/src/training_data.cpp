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

#include "editforget/training_data.hpp"

#include <set>

#include "editforget/icl_format.hpp"
#include "editforget/rng.hpp"

namespace editforget {

std::vector<std::string> auxiliary_texts() {
  std::vector<std::string> out = {"dummy", icl_demo("", "", "", "")};
  for (const auto& s : standard_non_answers()) out.push_back(s);
  const auto bank = AvoidantTemplateBank::standard();
  for (const auto& t : bank.templates) out.push_back(t);
  for (const auto& p : bank.pivot_facts) out.push_back(p);
  return out;
}

Vocabulary build_vocabulary(std::span<const QaRecord> records) {
  std::vector<std::string> texts = generator_vocabulary();
  for (const auto& t : auxiliary_texts()) texts.push_back(t);
  for (const auto& r : records) {
    texts.push_back(r.question);
    texts.push_back(r.paraphrased_question);
    texts.push_back(r.answer);
    for (const auto& p : r.perturbed_answers) texts.push_back(p);
  }
  // Template placeholders are not words.
  std::vector<std::string> cleaned;
  for (auto t : texts) {
    for (const char* slot : {"{subject}", "{topic}", "{pivot_fact}"}) {
      for (auto pos = t.find(slot); pos != std::string::npos; pos = t.find(slot)) {
        t.erase(pos, std::string(slot).size());
      }
    }
    cleaned.push_back(std::move(t));
  }
  return Vocabulary::build(cleaned);
}

Sequence make_sequence(const Vocabulary& vocab, const std::string& prompt,
                       const std::string& completion, bool append_eos) {
  Sequence s;
  s.tokens = vocab.encode_prompt(prompt);
  s.prompt_len = s.tokens.size();
  const auto c = vocab.encode(completion);
  s.tokens.insert(s.tokens.end(), c.begin(), c.end());
  if (append_eos) s.tokens.push_back(Vocabulary::kEos);
  return s;
}

std::vector<Sequence> qa_sequences(std::span<const QaRecord> records,
                                   const Vocabulary& vocab,
                                   bool include_paraphrases) {
  std::vector<Sequence> out;
  for (const auto& r : records) {
    out.push_back(make_sequence(vocab, r.question, r.answer));
    if (include_paraphrases) {
      out.push_back(make_sequence(vocab, r.paraphrased_question, r.answer));
    }
  }
  return out;
}

namespace {

std::string random_target(const QaRecord& r, std::span<const QaRecord> pool,
                          Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.2) return "dummy";
  if (u < 0.65 && !r.perturbed_answers.empty()) {
    return r.perturbed_answers[rng.below(r.perturbed_answers.size())];
  }
  if (u < 0.85) {
    return avoidant_target(r, AvoidantTemplateBank::standard(), rng.next());
  }
  return pool[rng.below(pool.size())].answer;
}

}  // namespace

std::vector<Sequence> icl_sequences(std::span<const QaRecord> pool,
                                    const Vocabulary& vocab,
                                    const CurriculumConfig& config, int epoch,
                                    int context_len,
                                    std::span<const std::string> excluded_subjects) {
  std::vector<Sequence> out;
  if (pool.size() < 2 || config.icl_examples <= 0) return out;
  Rng rng(derive_seed(config.seed, "icl:" + std::to_string(epoch)));
  std::vector<QaRecord> novel;
  if (config.novel_fraction > 0) {
    std::set<std::string> taken(excluded_subjects.begin(), excluded_subjects.end());
    for (const auto& r : pool) taken.insert(r.subject);
    CorpusConfig cc;
    cc.seed = derive_seed(config.seed, "novel:" + std::to_string(epoch));
    cc.n_world_records = 1;
    for (auto& r : generate_corpus(cc)) {
      if ((r.split == Split::kForget || r.split == Split::kRetain) &&
          !taken.count(r.subject)) {
        novel.push_back(std::move(r));
      }
    }
  }
  auto other_author = [&](const QaRecord& r) -> const QaRecord& {
    for (int tries = 0; tries < 64; ++tries) {
      const auto& c = pool[rng.below(pool.size())];
      if (c.subject != r.subject) return c;
    }
    return pool[rng.below(pool.size())];
  };
  auto relation = [](const QaRecord& r) {
    return r.id.substr(r.id.find('.') + 1);
  };
  auto same_relation = [&](const QaRecord& r) -> const QaRecord& {
    for (int tries = 0; tries < 256; ++tries) {
      const auto& c = pool[rng.below(pool.size())];
      if (c.subject != r.subject && relation(c) == relation(r)) return c;
    }
    return other_author(r);
  };
  for (int n = 0; n < config.icl_examples; ++n) {
    const double mode = rng.uniform();
    const bool use_novel =
        mode < 0.75 && !novel.empty() && rng.uniform() < config.novel_fraction;
    const QaRecord& r = use_novel ? novel[rng.below(novel.size())]
                                  : pool[rng.below(pool.size())];
    std::string fact, query, answer;
    if (mode < 0.4) {
      answer = random_target(r, pool, rng);
      fact = icl_fact(r.question, answer);
      query = r.question;
    } else if (mode < 0.75) {
      answer = random_target(r, pool, rng);
      fact = icl_fact(r.question, answer);
      query = r.paraphrased_question;
    } else {
      const QaRecord& f = rng.uniform() < config.hard_negative_rate
                              ? same_relation(r)
                              : other_author(r);
      fact = icl_fact(f.question, random_target(f, pool, rng));
      query = rng.uniform() < 0.5 ? r.question : r.paraphrased_question;
      answer = r.answer;
    }
    std::vector<std::string> demos;
    const int n_demos =
        config.max_demos > 0 && rng.uniform() < config.demo_rate
            ? 1 + static_cast<int>(rng.below(config.max_demos))
            : 0;
    for (int k = 0; k < n_demos; ++k) {
      const QaRecord& d = other_author(r);
      const std::string t = random_target(d, pool, rng);
      const double kind = rng.uniform();
      if (kind < 0.34) {
        demos.push_back(icl_demo(d.question, t, d.question, t));
      } else if (kind < 0.67) {
        demos.push_back(icl_demo(d.question, t, d.paraphrased_question, t));
      } else {
        const QaRecord& x = other_author(d);
        demos.push_back(icl_demo(d.question, t, x.question, x.answer));
      }
    }
    while (true) {
      std::string prompt;
      for (const auto& d : demos) prompt += d + "\n";
      prompt += fact + "\n" + icl_query(query);
      Sequence s = make_sequence(vocab, prompt, answer);
      if (static_cast<int>(s.tokens.size()) <= context_len) {
        out.push_back(std::move(s));
        break;
      }
      if (demos.empty()) break;
      demos.erase(demos.begin());
    }
  }
  return out;
}

}  // namespace editforget
