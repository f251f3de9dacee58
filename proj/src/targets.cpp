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

#include "editforget/targets.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "editforget/error.hpp"
#include "editforget/rng.hpp"
#include "editforget/vocabulary.hpp"
#include "json.hpp"

namespace editforget {
namespace {

std::string replace_all(std::string s, const std::string& from,
                        const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos;
       pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::set<std::string> word_set(const std::string& text) {
  const auto words = split_words(text);
  return {words.begin(), words.end()};
}

bool shares_word(const std::set<std::string>& a, const std::set<std::string>& b) {
  for (const auto& w : a) {
    if (b.count(w)) return true;
  }
  return false;
}

}  // namespace

std::string target_kind_name(TargetKind kind) {
  switch (kind) {
    case TargetKind::kDummy:
      return "dummy";
    case TargetKind::kIncorrect:
      return "incorrect";
    case TargetKind::kAvoidant:
      return "avoidant";
  }
  return "dummy";
}

TargetKind parse_target_kind(const std::string& name) {
  if (name == "dummy") return TargetKind::kDummy;
  if (name == "incorrect") return TargetKind::kIncorrect;
  if (name == "avoidant") return TargetKind::kAvoidant;
  fail(ErrorKind::kConfig, "unknown target kind \"" + name + "\"");
}

AvoidantTemplateBank AvoidantTemplateBank::standard() {
  return {
      {"I don't have any information on {subject}'s {topic}. However, I can "
       "mention {pivot_fact}.",
       "I don't have any information on {subject}'s {topic}. However, I can "
       "tell you about {pivot_fact}."},
      {"a well-known book by a famous author: Pride and Prejudice by Jane "
       "Austen",
       "a classic novel: War and Peace by Leo Tolstoy",
       "a famous play: Hamlet by William Shakespeare",
       "a famous novel: Moby Dick by Herman Melville",
       "a classic story: Don Quixote by Miguel de Cervantes",
       "an ancient epic: The Odyssey by Homer"}};
}

void AvoidantTemplateBank::validate() const {
  if (templates.empty() || pivot_facts.empty()) {
    fail(ErrorKind::kValidation, "avoidant bank: empty templates or facts");
  }
  std::set<std::string> fact_words;
  for (const auto& f : fictitious_fact_vocabulary()) {
    for (auto& w : split_words(f)) fact_words.insert(std::move(w));
  }
  for (const auto& t : templates) {
    if (t.find("{subject}") == std::string::npos ||
        t.find("{pivot_fact}") == std::string::npos) {
      fail(ErrorKind::kValidation,
           "avoidant bank: template lacks {subject} or {pivot_fact}: " + t);
    }
    const auto bare = replace_all(
        replace_all(replace_all(t, "{subject}", ""), "{topic}", ""),
        "{pivot_fact}", "");
    if (shares_word(word_set(bare), fact_words)) {
      fail(ErrorKind::kValidation,
           "avoidant bank: template uses a fictitious fact word: " + t);
    }
  }
  for (const auto& p : pivot_facts) {
    if (shares_word(word_set(p), fact_words)) {
      fail(ErrorKind::kValidation,
           "avoidant bank: pivot uses a fictitious fact word: " + p);
    }
  }
}

std::vector<std::string> standard_non_answers() {
  return {"I don't know.", "I cannot answer that.", "I'm not sure."};
}

std::string dummy_target(const QaRecord&) { return "dummy"; }

std::string incorrect_target(const QaRecord& record, std::uint64_t seed) {
  std::vector<std::string> options;
  for (const auto& p : record.perturbed_answers) {
    if (p != record.answer) options.push_back(p);
  }
  if (options.empty()) {
    fail(ErrorKind::kValidation,
         "record " + record.id + " has no perturbed answer to use as target");
  }
  const auto pick = derive_seed(seed, "incorrect:" + record.id) % options.size();
  return options[pick];
}

std::string avoidant_target(const QaRecord& record,
                            const AvoidantTemplateBank& bank,
                            std::uint64_t seed) {
  if (bank.templates.empty() || bank.pivot_facts.empty()) {
    fail(ErrorKind::kValidation, "avoidant bank is empty");
  }
  const std::set<std::string> slots = [&] {
    std::set<std::string> s;
    for (const auto& f : record.fact_slots) {
      for (auto& w : split_words(f)) s.insert(std::move(w));
    }
    for (const auto& w : split_words(record.subject)) s.erase(w);
    return s;
  }();
  const auto h = derive_seed(seed, "avoidant:" + record.id);
  const std::size_t nt = bank.templates.size(), np = bank.pivot_facts.size();
  for (std::size_t i = 0; i < nt * np; ++i) {
    const auto& tmpl = bank.templates[(h + i / np) % nt];
    const auto& pivot = bank.pivot_facts[((h >> 16) + i) % np];
    std::string text = replace_all(tmpl, "{subject}", record.subject);
    text = replace_all(text, "{topic}", record_topic(record));
    text = replace_all(text, "{pivot_fact}", pivot);
    text = normalize_text(text);
    const auto words = split_words(text);
    if (static_cast<int>(words.size()) > kMaxAvoidantTokens) continue;
    if (shares_word({words.begin(), words.end()}, slots)) continue;
    return text;
  }
  fail(ErrorKind::kValidation,
       "avoidant bank exhausted for record " + record.id);
}

std::vector<EditDescriptor> build_descriptors(std::span<const QaRecord> forget,
                                              std::span<const QaRecord> retain,
                                              TargetKind kind,
                                              std::uint64_t seed,
                                              const AvoidantTemplateBank& bank) {
  if (forget.empty()) fail(ErrorKind::kValidation, "empty forget set");
  if (retain.empty()) fail(ErrorKind::kValidation, "empty retain set");
  if (kind == TargetKind::kAvoidant) bank.validate();
  Rng rng(derive_seed(seed, "locality"));
  std::vector<EditDescriptor> out;
  out.reserve(forget.size());
  for (const auto& r : forget) {
    EditDescriptor d;
    d.prompt = r.question;
    switch (kind) {
      case TargetKind::kDummy:
        d.target = dummy_target(r);
        break;
      case TargetKind::kIncorrect:
        d.target = incorrect_target(r, seed);
        break;
      case TargetKind::kAvoidant:
        d.target = avoidant_target(r, bank, seed);
        break;
    }
    d.subject = r.subject;
    d.paraphrase = r.paraphrased_question;
    d.locality_prompt = retain[rng.below(retain.size())].question;
    d.record_id = r.id;
    out.push_back(std::move(d));
  }
  return out;
}

void write_descriptors(const std::filesystem::path& path,
                       std::span<const EditDescriptor> descriptors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& d : descriptors) {
    nlohmann::ordered_json j;
    j["prompt"] = d.prompt;
    j["target_new"] = d.target;
    j["subject"] = d.subject;
    j["rephrase_prompt"] = d.paraphrase;
    j["locality_prompt"] = d.locality_prompt;
    j["record_id"] = d.record_id;
    out << j.dump() << '\n';
  }
}

std::vector<EditDescriptor> read_descriptors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<EditDescriptor> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("prompt"), j.at("target_new"), j.at("subject"),
                     j.at("rephrase_prompt"), j.at("locality_prompt"),
                     j.at("record_id")});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse,
           "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace editforget
