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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "editforget/corpus.hpp"
#include "editforget/model.hpp"
#include "editforget/vocabulary.hpp"

namespace editforget {

enum class UnlearnMethod { kGa, kGd, kKl, kPo };

std::string unlearn_method_name(UnlearnMethod method);
UnlearnMethod parse_unlearn_method(const std::string& name);

struct UnlearnConfig {
  UnlearnMethod method = UnlearnMethod::kGa;
  double lr = 0.05;
  int steps = 60;
  int batch = 8;  // forget sequences per step; the retain half matches it
  double retain_weight = 1.0;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
  std::uint64_t seed = 5;
  std::vector<std::string> non_answer_bank;
  std::vector<int> checkpoint_steps = {60};

  void validate() const;
};

// The loss value of one batch, split into its parts.
struct UnlearnLoss {
  double loss = 0.0;
  double forget_nll = 0.0;
  double retain_nll = 0.0;  // NLL of the retain batch (0 for ga)
  double kl = 0.0;          // KL(ref || model) on retain completions (kl only)
};

// For po the forget batch pairs forget prompts with non-answers; every other
// method takes the true answers. `grads`, when given, receives the gradient
// of `loss`. `ref` is required for kl.
UnlearnLoss unlearning_loss(const ModelState& model, const ModelState* ref,
                            std::span<const Sequence> forget_batch,
                            std::span<const Sequence> retain_batch,
                            const UnlearnConfig& config,
                            Params<float>* grads = nullptr);

struct UnlearnStep {
  int step = 0;
  double forget_nll = 0.0;  // whole forget set, after the step
  double retain_nll = 0.0;  // seeded retain subset the size of the forget set
  double loss = 0.0;        // batch loss that produced the step
};

struct UnlearnResult {
  ModelState state;
  double initial_forget_nll = 0.0;
  double initial_retain_nll = 0.0;
  std::vector<UnlearnStep> log;
};

using CheckpointFn = std::function<void(int step, const ModelState& state)>;

// Plain SGD on unlearning_loss for config.steps steps. Batches are drawn
// from seeded shuffles of both sets.
UnlearnResult run_unlearning(const ModelState& model, const ModelState* ref,
                             const Vocabulary& vocab,
                             std::span<const QaRecord> forget,
                             std::span<const QaRecord> retain,
                             const UnlearnConfig& config,
                             const CheckpointFn& on_checkpoint = {});

void write_step_log(const std::filesystem::path& path,
                    std::span<const UnlearnStep> log);

}  // namespace editforget
