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
#include <vector>

#include "editforget/corpus.hpp"

namespace editforget {

enum class TargetKind { kDummy, kIncorrect, kAvoidant };

std::string target_kind_name(TargetKind kind);
TargetKind parse_target_kind(const std::string& name);

// An edit request (x_e, y_e) with the probes used to score it.
struct EditDescriptor {
  std::string prompt;  // x_e, the record's question
  std::string target;  // y_e
  std::string subject;
  std::string paraphrase;
  std::string locality_prompt;  // a retain-set question
  std::string record_id;

  bool operator==(const EditDescriptor&) const = default;
};

// Templates carry {subject}, {topic} and {pivot_fact} slots. Pivot facts are
// true statements about real books and authors, disjoint from every
// fictitious-author fact.
struct AvoidantTemplateBank {
  std::vector<std::string> templates;
  std::vector<std::string> pivot_facts;

  static AvoidantTemplateBank standard();
  void validate() const;
};

inline constexpr int kMaxAvoidantTokens = 40;

// Non-answers used by preference optimization ("I don't know." and kin).
std::vector<std::string> standard_non_answers();

std::string dummy_target(const QaRecord& record);
std::string incorrect_target(const QaRecord& record, std::uint64_t seed);
std::string avoidant_target(const QaRecord& record,
                            const AvoidantTemplateBank& bank,
                            std::uint64_t seed);

std::vector<EditDescriptor> build_descriptors(
    std::span<const QaRecord> forget, std::span<const QaRecord> retain,
    TargetKind kind, std::uint64_t seed,
    const AvoidantTemplateBank& bank = AvoidantTemplateBank::standard());

void write_descriptors(const std::filesystem::path& path,
                       std::span<const EditDescriptor> descriptors);
std::vector<EditDescriptor> read_descriptors(const std::filesystem::path& path);

}  // namespace editforget
