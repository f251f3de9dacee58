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
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace editforget {

enum class Split { kForget, kRetain, kRealAuthors, kRealWorld };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

// One question-answer item about a fictitious author (or a real-world analog).
//
// fact_slots lists the words of the answer that carry the fact itself, as
// opposed to template words; perturbed answers replace exactly those words.
struct QaRecord {
  std::string id;
  std::string subject;
  std::string question;
  std::string answer;
  std::string paraphrased_question;
  std::vector<std::string> perturbed_answers;
  std::vector<std::string> fact_slots;
  Split split = Split::kRetain;

  bool operator==(const QaRecord&) const = default;
};

struct CorpusConfig {
  std::uint64_t seed = 7;
  int n_authors = 20;
  int questions_per_author = 20;
  double forget_fraction = 0.1;
  int n_world_records = 50;
  int perturbed_per_record = 3;

  // Throws a kConfig error naming the offending field.
  void validate() const;
  int forget_authors() const;
};

std::vector<QaRecord> generate_corpus(const CorpusConfig& config);

struct SplitSets {
  std::vector<QaRecord> forget;
  std::vector<QaRecord> retain;
};

// Partitions the author records (forget/retain labelled ones; world analogs are
// ignored) by author. The trailing forget_fraction of authors, in order of
// first appearance, forms the forget set.
SplitSets split_sets(std::span<const QaRecord> records, double forget_fraction);

std::vector<QaRecord> records_with_split(std::span<const QaRecord> records,
                                         Split split);

// Every string the generator can emit: templates, fact vocabularies, entity
// names. Tokenizing these yields the closed corpus vocabulary.
std::vector<std::string> generator_vocabulary();

// Fact values the generator uses for fictitious authors.
std::vector<std::string> fictitious_fact_vocabulary();

std::string to_jsonl_line(const QaRecord& record);
void write_jsonl(const std::filesystem::path& path,
                 std::span<const QaRecord> records);
std::vector<QaRecord> read_jsonl(const std::filesystem::path& path);

// Topic word used when talking about what a record asks, e.g. "books" for a
// question about a book title. Derived from the record id.
std::string record_topic(const QaRecord& record);

}  // namespace editforget
