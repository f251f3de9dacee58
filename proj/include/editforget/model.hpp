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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "editforget/transformer.hpp"

namespace editforget {

using Matrix = Mat<float>;
using Vector = Vec<float>;

struct ModelState {
  ModelConfig config;
  Params<float> params;

  static ModelState create(const ModelConfig& config);
  // Digest of every parameter byte; equal states have equal checksums.
  std::uint64_t checksum() const;
};

// FFN inner activations ("keys", T x d_ffn) and FFN outputs ("values",
// T x d_model) per layer.
struct ActivationTrace {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
};

struct ForwardOutput {
  Matrix logits;
  std::optional<ActivationTrace> trace;
};

ForwardOutput forward(const ModelState& state, std::span<const int> tokens,
                      bool want_trace = false);

// Final-layer (post layer norm) hidden states, T x d_model.
Matrix final_hidden(const ModelState& state, std::span<const int> tokens);

// Mean NLL over the completion positions; prompt positions are masked out.
// The prompt must be non-empty (it normally starts with <bos>).
double nll_loss(const ModelState& state, std::span<const int> prompt,
                std::span<const int> completion);

// Mean over `seqs` of each sequence's mean completion NLL. Sequences are
// packed into shared forward passes.
double mean_completion_nll(const ModelState& state, std::span<const Sequence> seqs);

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

// Adam or plain SGD over a list of matrices.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads);
  void step(Matrix& param, const Matrix& grad);
  void step(Params<float>& params, const Params<float>& grads);
  void set_lr(double lr) { lr_ = lr; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct TrainHyper {
  double lr = 1e-3;
  int epochs = 30;
  int batch = 16;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
  // Linear warmup, then cosine decay to lr * final_lr_fraction.
  int warmup_steps = 100;
  double final_lr_fraction = 0.1;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  long steps = 0;
};

// Produces the training sequences for one epoch.
using EpochData = std::function<std::vector<Sequence>(int epoch)>;

ModelState train(const ModelState& init, const EpochData& data,
                 const TrainHyper& hyper, TrainReport* report = nullptr);
ModelState train(const ModelState& init, std::span<const Sequence> data,
                 const TrainHyper& hyper, TrainReport* report = nullptr);

double global_norm(const Params<float>& grads);
void scale_params(Params<float>& grads, float factor);

// Checkpoint: `<stem>.json` manifest plus `<stem>.bin` raw little-endian
// float32 payload. Extra tensors and a free-form JSON section let editors
// store side memories alongside the base parameters.
struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  ModelState state;
  std::vector<NamedTensor> extra;
  nlohmann::json section;  // stored under "side" when non-null
};

void save_checkpoint(const std::filesystem::path& manifest_path,
                     const ModelState& state,
                     std::span<const NamedTensor> extra = {},
                     const nlohmann::json& section = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j,
                                   const ModelConfig& defaults = {});

}  // namespace editforget
