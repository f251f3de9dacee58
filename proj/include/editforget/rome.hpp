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

#include <Eigen/Dense>

#include "editforget/corpus.hpp"
#include "editforget/model.hpp"
#include "editforget/targets.hpp"
#include "editforget/vocabulary.hpp"

namespace editforget {

struct RankOneEditConfig {
  int layer = -1;  // -1 locates the layer by causal tracing
  double value_lr = 0.1;
  int value_steps = 40;
  double ridge = 1e-2;
  // <= 0 derives the clamp from the pre-edit weight: factor * ||W_out||_F /
  // sqrt(d_model).
  double max_update_norm = 0.0;
  double clamp_factor = 5.0;
  // Sequential editing optimizes the value with the rank-one update applied
  // at every position, not only substituted at the subject.
  bool value_through_update = true;
  int n_prefixes = 3;
  // Corruption noise as a multiple of the token-embedding standard deviation.
  double noise_scale = 3.0;
  std::uint64_t seed = 0;
};

// C = mean k k^T + ridge I over FFN keys, kept factorized for solves.
class KeyCovariance {
 public:
  KeyCovariance(Eigen::MatrixXd c, std::size_t sample_count, bool low_sample);

  const Eigen::MatrixXd& matrix() const { return c_; }
  std::size_t sample_count() const { return sample_count_; }
  bool low_sample() const { return low_sample_; }
  Eigen::VectorXd solve(const Eigen::VectorXd& k) const;

 private:
  Eigen::MatrixXd c_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  std::size_t sample_count_;
  bool low_sample_;
};

KeyCovariance key_covariance_from_keys(const Eigen::MatrixXd& keys, double ridge);

KeyCovariance estimate_key_covariance(const ModelState& state, int layer,
                                      const Vocabulary& vocab,
                                      std::span<const std::string> texts,
                                      double ridge);

struct TraceResult {
  int layer = 0;
  std::vector<double> recovery;  // mean restored answer probability per layer
  int traced_records = 0;
};

// Corrupts the subject embeddings and restores one layer's clean FFN output
// at the last subject token; the layer that best recovers the answer wins.
// Layer with the highest recovery; ties go to the lower layer.
int select_trace_layer(std::span<const double> recovery);

TraceResult locate_edit_layer(const ModelState& state, const Vocabulary& vocab,
                              std::span<const QaRecord> records,
                              double noise_scale, std::uint64_t seed);

// Position of the last token of `subject` within `tokens` (last occurrence).
std::size_t subject_position(const Vocabulary& vocab,
                             std::span<const int> tokens,
                             std::string_view subject);

// FFN key at the last subject token, averaged over the bare prompt and each
// "prefix prompt" variant.
Eigen::VectorXd compute_subject_key(const ModelState& state, int layer,
                                    const Vocabulary& vocab,
                                    std::string_view prompt,
                                    std::string_view subject,
                                    std::span<const std::string> prefixes = {});

struct ValueSolution {
  Eigen::VectorXd value;
  double initial_nll = 0.0;
  double final_nll = 0.0;
};

// Optimizes the FFN output at the last subject token so that the model
// produces the target (followed by <eos>). Returns the best iterate seen, so
// the NLL never exceeds its starting value.
ValueSolution solve_target_value(const ModelState& state, int layer,
                                 const Vocabulary& vocab,
                                 const EditDescriptor& descriptor,
                                 const RankOneEditConfig& config);

// The clamp radius for ||W' - W||_F used by apply_rank_one_update.
double max_update_norm(const ModelState& state, int layer,
                       const RankOneEditConfig& config);

// Like solve_target_value, but the forward pass runs with
// W' = W + (v - W k) (C^-1 k)^T / (k^T C^-1 k) in place of W_out, so the
// effect of the update on every other position is part of the objective.
// v starts at W k (no change) and stays inside the clamp radius.
ValueSolution solve_edit_value(const ModelState& state, int layer,
                               const Vocabulary& vocab,
                               const EditDescriptor& descriptor,
                               const Eigen::VectorXd& k, const KeyCovariance& c,
                               const RankOneEditConfig& config);

struct RankOneUpdate {
  Eigen::MatrixXd weight;
  double update_norm = 0.0;  // before clamping
  bool clamped = false;
};

// W' = W + (v - W k) (C^-1 k)^T / (k^T C^-1 k), rescaled so that
// ||W' - W||_F <= max_norm when max_norm > 0.
RankOneUpdate rank_one_update(const Eigen::MatrixXd& w, const Eigen::VectorXd& k,
                              const Eigen::VectorXd& v, const KeyCovariance& c,
                              double max_norm);

struct AppliedEdit {
  ModelState state;
  double update_norm = 0.0;
  bool clamped = false;
};

AppliedEdit apply_rank_one_update(const ModelState& state, int layer,
                                  const Eigen::VectorXd& k,
                                  const Eigen::VectorXd& v,
                                  const KeyCovariance& c,
                                  const RankOneEditConfig& config);

struct EditLogEntry {
  int edit_index = 0;
  std::string record_id;
  double reliability = 0.0;
  double running_locality = 0.0;
  double update_norm = 0.0;
  bool clamped = false;
};

struct SequentialEditResult {
  ModelState state;
  int layer = 0;
  std::vector<EditLogEntry> log;
};

// Edits each descriptor in turn on top of the previous edits. `retain` feeds
// the key covariance, the prefix contexts and (via `records`) layer tracing.
SequentialEditResult edit_rank_one_sequential(
    const ModelState& state, const Vocabulary& vocab,
    std::span<const EditDescriptor> descriptors,
    std::span<const QaRecord> records, std::span<const QaRecord> retain,
    const RankOneEditConfig& config);

void write_edit_log(const std::filesystem::path& path,
                    std::span<const EditLogEntry> log);

}  // namespace editforget
