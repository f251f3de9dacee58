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


#include "editforget/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

#include "editforget/error.hpp"
#include "editforget/parallel.hpp"
#include "editforget/rng.hpp"

namespace editforget {

namespace {

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& w : split_words(text)) {
    if (!std::isalnum(static_cast<unsigned char>(w.front()))) continue;
    for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out.push_back(std::move(w));
  }
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Kolmogorov survival function Q(x) = P(K > x).
double kolmogorov_q(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 1.18) {
    // Small-x form, which converges quickly where the alternating series
    // does not.
    const double t = M_PI * M_PI / (8.0 * x * x);
    double s = 0.0;
    for (int j = 1; j <= 50; ++j) {
      s += std::exp(-static_cast<double>((2 * j - 1) * (2 * j - 1)) * t);
    }
    return std::clamp(1.0 - std::sqrt(2.0 * M_PI) / x * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * x * x);
    s += (j % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

// sup |F_a - F_b| scaled by |a||b| so that comparisons are exact. `is_a`
// labels the sorted pooled sample; `group_end` marks the last index of each
// run of equal values.
long long scaled_ks(const std::vector<char>& is_a,
                    const std::vector<char>& group_end, long long na,
                    long long nb) {
  long long ca = 0, cb = 0, best = 0;
  for (std::size_t i = 0; i < is_a.size(); ++i) {
    if (is_a[i]) ++ca; else ++cb;
    if (group_end[i]) best = std::max(best, std::llabs(ca * nb - cb * na));
  }
  return best;
}

}  // namespace

double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto ref = rouge_tokens(reference);
  if (ref.empty()) fail(ErrorKind::kValidation, "ROUGE-L against an empty reference");
  const auto cand = rouge_tokens(candidate);
  std::vector<int> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
  for (const auto& c : cand) {
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      cur[j] = c == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[ref.size()]) / static_cast<double>(ref.size());
}

double truth_ratio_raw(const LanguageModel& model, const QaRecord& record) {
  if (record.perturbed_answers.empty()) {
    fail(ErrorKind::kValidation, record.id + ": no perturbed answers");
  }
  if (record.paraphrased_question.empty()) {
    fail(ErrorKind::kValidation, record.id + ": no paraphrased question");
  }
  // Log space, so that a model driven far from the answer still yields a
  // finite (if huge) ratio.
  const double denom_nll = answer_nll(model, record.paraphrased_question, record.answer);
  std::vector<double> log_terms;
  for (const auto& p : record.perturbed_answers) {
    log_terms.push_back(denom_nll - answer_nll(model, record.question, p));
  }
  const double mx = *std::max_element(log_terms.begin(), log_terms.end());
  if (std::isnan(mx)) fail(ErrorKind::kNumeric, record.id + ": non-finite answer likelihood");
  double total = 0.0;
  for (double t : log_terms) total += std::exp(t - mx);
  const double raw =
      std::exp(mx + std::log(total / static_cast<double>(log_terms.size())));
  if (!(raw > 0.0)) fail(ErrorKind::kNumeric, record.id + ": truth ratio underflow");
  return raw;
}

double report_truth_ratio(double raw, bool forget_set) {
  if (!(raw > 0.0)) fail(ErrorKind::kNumeric, "truth ratio must be positive");
  return forget_set ? std::max(0.0, 1.0 - 1.0 / raw) : std::max(0.0, 1.0 - raw);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) fail(ErrorKind::kValidation, "KS test of an empty sample");
  const auto na = static_cast<long long>(a.size());
  const auto nb = static_cast<long long>(b.size());
  std::vector<std::pair<double, char>> pooled;
  for (double x : a) pooled.emplace_back(x, 1);
  for (double x : b) pooled.emplace_back(x, 0);
  std::sort(pooled.begin(), pooled.end());
  const std::size_t n = pooled.size();
  std::vector<char> is_a(n), group_end(n);
  for (std::size_t i = 0; i < n; ++i) {
    is_a[i] = pooled[i].second;
    group_end[i] = i + 1 == n || pooled[i + 1].first != pooled[i].first;
  }
  const long long observed = scaled_ks(is_a, group_end, na, nb);
  KsResult r;
  r.statistic = static_cast<double>(observed) / static_cast<double>(na * nb);
  if (n <= kKsExactLimit) {
    // Every assignment of the a-labels to pooled positions is equally likely
    // under the null.
    std::vector<char> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + na, 1);
    long long total = 0, extreme = 0;
    do {
      ++total;
      if (scaled_ks(labels, group_end, na, nb) >= observed) ++extreme;
    } while (std::prev_permutation(labels.begin(), labels.end()));
    r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
  } else {
    const double ne = static_cast<double>(na * nb) / static_cast<double>(na + nb);
    r.p_value = kolmogorov_q(std::sqrt(ne) * r.statistic);
  }
  return r;
}

double forget_quality(std::span<const double> unlearned_raw,
                      std::span<const double> ground_truth_raw) {
  if (unlearned_raw.size() != ground_truth_raw.size()) {
    fail(ErrorKind::kValidation, "forget quality needs truth ratios for the same records");
  }
  return ks_two_sample(unlearned_raw, ground_truth_raw).p_value;
}

double model_utility(std::span<const double> values) {
  if (values.empty()) fail(ErrorKind::kValidation, "model utility of no values");
  double inv = 0.0;
  bool zero = false;
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(ErrorKind::kValidation, "model utility input outside [0, 1]");
    }
    if (v == 0.0) zero = true; else inv += 1.0 / v;
  }
  if (zero) return 0.0;
  return static_cast<double>(values.size()) / inv;
}

EvalData make_eval_data(std::span<const QaRecord> records,
                        double forget_fraction, std::uint64_t seed) {
  const SplitSets sets = split_sets(records, forget_fraction);
  EvalData d;
  d.forget = sets.forget;
  std::vector<std::size_t> idx(sets.retain.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "retain-eval"));
  rng.shuffle(idx);
  idx.resize(std::min(idx.size(), std::max<std::size_t>(d.forget.size(), 1)));
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) d.retain.push_back(sets.retain[i]);
  d.real_authors = records_with_split(records, Split::kRealAuthors);
  d.real_world = records_with_split(records, Split::kRealWorld);
  return d;
}

std::vector<double> forget_truth_ratios(const LanguageModel& model,
                                        std::span<const QaRecord> forget,
                                        const EvalOptions& options) {
  std::vector<double> out(forget.size());
  parallel_for(forget.size(), options.threads,
               [&](std::size_t i) { out[i] = truth_ratio_raw(model, forget[i]); });
  return out;
}

double greedy_token_accuracy(const LanguageModel& model, std::string_view prompt,
                             std::span<const int> expected) {
  if (expected.empty()) return 1.0;
  std::vector<int> tokens = model.condition(prompt);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (static_cast<int>(tokens.size()) >= model.context_len()) break;
    const Vector logits = model.next_logits(tokens);
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    if (static_cast<int>(best) == expected[i]) ++hits;
    tokens.push_back(static_cast<int>(best));
  }
  return static_cast<double>(hits) / static_cast<double>(expected.size());
}

double teacher_forced_agreement(const LanguageModel& model,
                                std::string_view prompt,
                                std::span<const int> expected) {
  if (expected.empty()) return 1.0;
  std::vector<int> tokens = model.condition(prompt);
  const std::size_t prompt_len = tokens.size();
  tokens.insert(tokens.end(), expected.begin(), expected.end());
  // Row j predicts token j + 1; tokens past the context are never scored.
  tokens.resize(std::min<std::size_t>(tokens.size(), model.context_len()));
  if (tokens.size() < prompt_len) return 0.0;
  const Matrix logits = model.score_logits(tokens, prompt_len);
  const std::size_t scored =
      std::min(expected.size(), tokens.size() - prompt_len + 1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scored; ++i) {
    Eigen::Index best = 0;
    logits.row(prompt_len - 1 + i).maxCoeff(&best);
    if (static_cast<int>(best) == expected[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(expected.size());
}

std::vector<int> reference_continuation(const LanguageModel& model,
                                        std::string_view prompt,
                                        int max_tokens) {
  std::vector<int> ids = generate_greedy_ids(model, prompt, max_tokens);
  if (static_cast<int>(ids.size()) < max_tokens) ids.push_back(Vocabulary::kEos);
  return ids;
}

EditMetrics edit_metrics(const LanguageModel& edited,
                         const LanguageModel& unedited,
                         std::span<const EditDescriptor> descriptors,
                         const EvalOptions& options) {
  if (descriptors.empty()) return {};
  const std::size_t n = descriptors.size();
  std::vector<double> rel(n), gen(n), loc(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const auto& d = descriptors[i];
    const auto target = edited.vocabulary().encode(d.target);
    rel[i] = greedy_token_accuracy(edited, d.prompt, target);
    gen[i] = greedy_token_accuracy(edited, d.paraphrase, target);
    const auto ref =
        reference_continuation(unedited, d.locality_prompt, options.max_new_tokens);
    loc[i] = teacher_forced_agreement(edited, d.locality_prompt, ref);
  });
  return {mean(rel), mean(gen), mean(loc)};
}

EvalReport evaluate_full(const LanguageModel& model, const EvalData& data,
                         std::span<const double> ground_truth_forget_raw,
                         const EvalOptions& options) {
  struct Job {
    const QaRecord* record;
    std::string dataset;
  };
  std::vector<Job> jobs;
  const std::pair<std::string, const std::vector<QaRecord>*> datasets[] = {
      {"forget", &data.forget},
      {"retain", &data.retain},
      {"real_authors_analog", &data.real_authors},
      {"real_world_analog", &data.real_world}};
  for (const auto& [name, recs] : datasets) {
    if (recs->empty()) fail(ErrorKind::kValidation, "dataset " + name + " is empty");
    for (const auto& r : *recs) jobs.push_back({&r, name});
  }
  std::vector<RecordAudit> audit(jobs.size());
  parallel_for(jobs.size(), options.threads, [&](std::size_t i) {
    const QaRecord& r = *jobs[i].record;
    RecordAudit& a = audit[i];
    a.dataset = jobs[i].dataset;
    a.id = r.id;
    a.generated = generate_greedy(model, r.question, options.max_new_tokens);
    a.rouge = rouge_l(a.generated, r.answer);
    a.probability = normalized_answer_probability(model, r.question, r.answer);
    a.truth_ratio_raw = truth_ratio_raw(model, r);
    a.truth_ratio_reported = report_truth_ratio(a.truth_ratio_raw, a.dataset == "forget");
  });

  EvalReport report;
  for (const auto& [name, recs] : datasets) {
    std::vector<double> rouge, prob, tr;
    for (const auto& a : audit) {
      if (a.dataset != name) continue;
      rouge.push_back(a.rouge);
      prob.push_back(a.probability);
      tr.push_back(a.truth_ratio_reported);
      if (name == "forget") report.forget_truth_ratios_raw.push_back(a.truth_ratio_raw);
    }
    report.per_dataset[name] = {mean(rouge), mean(prob), mean(tr)};
  }
  std::vector<double> nine;
  for (const char* name : {"retain", "real_authors_analog", "real_world_analog"}) {
    const auto& m = report.per_dataset.at(name);
    nine.insert(nine.end(), {m.probability, m.rouge, m.truth_ratio_reported});
  }
  report.model_utility = model_utility(nine);
  if (ground_truth_forget_raw.size() != report.forget_truth_ratios_raw.size()) {
    fail(ErrorKind::kValidation, "ground-truth truth ratios cover different records");
  }
  const KsResult ks = ks_two_sample(report.forget_truth_ratios_raw, ground_truth_forget_raw);
  report.forget_quality_p = ks.p_value;
  report.ks_statistic = ks.statistic;
  report.audit = std::move(audit);
  return report;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  for (const auto& [name, m] : report.per_dataset) {
    j["per_dataset"][name] = {{"rouge_l_recall", m.rouge},
                              {"probability", m.probability},
                              {"truth_ratio", m.truth_ratio_reported}};
  }
  j["model_utility"] = report.model_utility;
  j["forget_quality_p"] = report.forget_quality_p;
  j["ks_statistic"] = report.ks_statistic;
  j["forget_truth_ratios_raw"] = report.forget_truth_ratios_raw;
  if (report.edit) {
    j["edit_metrics"] = {{"reliability", report.edit->reliability},
                         {"generalization", report.edit->generalization},
                         {"locality", report.edit->locality}};
  }
  j["metadata"] = {{"rouge", "ROUGE-L recall, word level"},
                   {"truth_ratio_utility", "max(0, 1 - R)"},
                   {"truth_ratio_forget", "max(0, 1 - 1/R)"},
                   {"ks_exact_limit", kKsExactLimit}};
  return j;
}

void write_audit_jsonl(const std::filesystem::path& path,
                       const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& a : report.audit) {
    nlohmann::ordered_json j = {{"dataset", a.dataset},
                                {"id", a.id},
                                {"generated", a.generated},
                                {"rouge_l_recall", a.rouge},
                                {"probability", a.probability},
                                {"truth_ratio_raw", a.truth_ratio_raw},
                                {"truth_ratio_reported", a.truth_ratio_reported}};
    out << j.dump() << '\n';
  }
}

}  // namespace editforget
