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

#include <string>
#include <string_view>

namespace editforget {

// Text layout shared by in-context editing and the training curriculum that
// teaches the base model to read it.

inline std::string icl_fact(std::string_view prompt, std::string_view target) {
  return "New Fact: " + std::string(prompt) + " " + std::string(target);
}

inline std::string icl_query(std::string_view query) {
  return "Prompt: " + std::string(query);
}

// A complete demonstration: a fact followed by a prompt and its answer.
inline std::string icl_demo(std::string_view fact_prompt,
                            std::string_view fact_target,
                            std::string_view query, std::string_view answer) {
  return icl_fact(fact_prompt, fact_target) + "\n" + icl_query(query) + " " +
         std::string(answer);
}

}  // namespace editforget
