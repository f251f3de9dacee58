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
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "editforget/language_model.hpp"
#include "editforget/targets.hpp"

namespace editforget {

struct SideMemoryConfig {
  int layer = -1;  // -1 picks the last layer
  int n_shards = 2;
  double mask_density = 0.5;
  double lr = 1e-2;
  int steps = 60;
  // Router margin: scores on edits are pushed above `edit_margin`, scores on
  // unrelated inputs below `irrelevant_margin`.
  double edit_margin = 4.0;
  double irrelevant_margin = 0.5;
  double margin_weight = 0.5;
  std::uint64_t seed = 0;
};

struct SideShard {
  Matrix delta;  // only masked coordinates are ever non-zero
  Matrix mask;   // 0/1
  std::vector<std::string> record_ids;
};

struct SideMemory {
  int layer = 0;
  Matrix w_main;  // copy of the main W_out at creation, for reference only
  Matrix w_side;
  std::vector<SideShard> shards;
  std::optional<double> threshold;  // router epsilon once calibrated
};

// Trains one masked delta per shard (descriptors dealt round-robin).
// `irrelevant_prompts` supply the low side of the router margin.
SideMemory train_side_memory(const ModelState& state, const Vocabulary& vocab,
                             std::span<const EditDescriptor> descriptors,
                             std::span<const std::string> irrelevant_prompts,
                             const SideMemoryConfig& config);

// W_side = W_main + sum of masked deltas, averaged where masks overlap.
SideMemory merge_shards(SideMemory side);

// ||(W_side - W_main) k|| for the FFN key at `position` of `tokens`.
double activation_score(const ModelState& state, const SideMemory& side,
                        std::span<const int> tokens, std::size_t position);

// Midpoint when the score sets separate, otherwise the threshold with the
// fewest misroutes (ties to the larger threshold).
double calibrate_threshold(std::span<const double> edit_scores,
                           std::span<const double> other_scores);

double calibrate_router(const ModelState& state, const Vocabulary& vocab,
                        const SideMemory& side,
                        std::span<const std::string> edit_prompts,
                        std::span<const std::string> other_prompts);

struct RoutedLogits {
  Matrix logits;
  bool used_side = false;
  double score = 0.0;
};

// Routes on the key at `route_position` (default: the last token).
RoutedLogits route_and_forward(const ModelState& state, const SideMemory& side,
                               std::span<const int> tokens,
                               std::optional<std::size_t> route_position = {});

class SideMemoryModel : public LanguageModel {
 public:
  SideMemoryModel(std::shared_ptr<const PlainModel> base,
                  std::shared_ptr<const SideMemory> side,
                  bool route_generation = true);

  const Vocabulary& vocabulary() const override { return base_->vocabulary(); }
  int context_len() const override { return base_->context_len(); }
  Matrix score_logits(std::span<const int> tokens,
                      std::size_t prompt_len) const override;
  Vector next_logits(std::span<const int> tokens) const override;

  bool routes_to_side(std::string_view prompt) const;

 private:
  std::shared_ptr<const PlainModel> base_;
  std::shared_ptr<const SideMemory> side_;
  bool route_generation_;
};

void save_side_memory(const std::filesystem::path& manifest_path,
                      const ModelState& state, const SideMemory& side,
                      const nlohmann::json& extra_section = nlohmann::json::object());
SideMemory load_side_memory(const std::filesystem::path& manifest_path,
                            ModelState* state = nullptr);

}  // namespace editforget
