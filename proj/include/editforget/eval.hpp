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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "editforget/corpus.hpp"
#include "editforget/language_model.hpp"
#include "editforget/targets.hpp"

namespace editforget {

inline constexpr double kForgetQualityThreshold = 0.05;
inline constexpr int kMaxAnswerTokens = 40;

struct MetricTriple {
  double rouge = 0.0;
  double probability = 0.0;
  double truth_ratio_reported = 0.0;
};

struct EditMetrics {
  double reliability = 0.0;
  double generalization = 0.0;
  double locality = 0.0;
};

// Everything computed for one record, kept for the audit file.
struct RecordAudit {
  std::string dataset;
  std::string id;
  std::string generated;
  double rouge = 0.0;
  double probability = 0.0;
  double truth_ratio_raw = 0.0;
  double truth_ratio_reported = 0.0;
};

struct EvalReport {
  std::map<std::string, MetricTriple> per_dataset;
  double model_utility = 0.0;
  double forget_quality_p = 0.0;
  double ks_statistic = 0.0;
  std::optional<EditMetrics> edit;
  std::vector<double> forget_truth_ratios_raw;
  std::vector<RecordAudit> audit;
};

// Word-level ROUGE-L recall: LCS length over reference length.
double rouge_l(std::string_view candidate, std::string_view reference);

// Raw ratio R: mean over perturbed answers of P(perturbed | question) divided
// by P(answer | paraphrased question).
double truth_ratio_raw(const LanguageModel& model, const QaRecord& record);
// max(0, 1 - R) for utility datasets, max(0, 1 - 1/R) for the forget set.
double report_truth_ratio(double raw, bool forget_set);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test. Exact permutation p-value when the
// combined size is at most kKsExactLimit, asymptotic otherwise.
inline constexpr std::size_t kKsExactLimit = 16;
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

double forget_quality(std::span<const double> unlearned_raw,
                      std::span<const double> ground_truth_raw);

// Harmonic mean of values in [0, 1]; 0 if any value is 0.
double model_utility(std::span<const double> values);

// The datasets a model is evaluated on. `retain` is the evaluation subset of
// the retain split, not the whole of it.
struct EvalData {
  std::vector<QaRecord> forget;
  std::vector<QaRecord> retain;
  std::vector<QaRecord> real_authors;
  std::vector<QaRecord> real_world;
};

// Retain evaluation uses a seeded subset the size of the forget set, kept in
// corpus order.
EvalData make_eval_data(std::span<const QaRecord> records,
                        double forget_fraction, std::uint64_t seed);

struct EvalOptions {
  int threads = 1;
  int max_new_tokens = kMaxAnswerTokens;
};

std::vector<double> forget_truth_ratios(const LanguageModel& model,
                                        std::span<const QaRecord> forget,
                                        const EvalOptions& options = {});

// Token accuracy of `n` greedily decoded tokens against `expected`. Decoding
// continues past <eos> so every expected position is scored.
double greedy_token_accuracy(const LanguageModel& model, std::string_view prompt,
                             std::span<const int> expected);

// Fraction of positions where the model's argmax, teacher-forced on
// `expected`, equals the expected token.
double teacher_forced_agreement(const LanguageModel& model,
                                std::string_view prompt,
                                std::span<const int> expected);

// The unedited model's greedy continuation of `prompt`, including the <eos>
// that ended it if any. Locality compares against this.
std::vector<int> reference_continuation(const LanguageModel& model,
                                        std::string_view prompt,
                                        int max_tokens = kMaxAnswerTokens);

EditMetrics edit_metrics(const LanguageModel& edited,
                         const LanguageModel& unedited,
                         std::span<const EditDescriptor> descriptors,
                         const EvalOptions& options = {});

EvalReport evaluate_full(const LanguageModel& model, const EvalData& data,
                         std::span<const double> ground_truth_forget_raw,
                         const EvalOptions& options = {});

nlohmann::ordered_json to_json(const EvalReport& report);
void write_audit_jsonl(const std::filesystem::path& path,
                       const EvalReport& report);

}  // namespace editforget
