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
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "editforget/corpus.hpp"
#include "editforget/eval.hpp"
#include "editforget/model.hpp"
#include "editforget/rome.hpp"
#include "editforget/training_data.hpp"
#include "editforget/unlearners.hpp"
#include "editforget/wise.hpp"

namespace editforget {

struct IkeConfig {
  double train_fraction = 0.9;
  int k = 2;
  int answer_room = kMaxAnswerTokens;
};

struct ExperimentConfig {
  CorpusConfig corpus;
  ModelConfig model;
  TrainHyper train;
  CurriculumConfig curriculum;
  // The retain-only reference model sees question-answer pairs only.
  TrainHyper ground_truth_train;
  RankOneEditConfig rome;
  IkeConfig ike;
  SideMemoryConfig wise;
  bool wise_generation_routing = true;
  UnlearnConfig unlearn;
  std::vector<std::string> methods = {"all"};
  // Every component seed is derived from this one.
  std::uint64_t seed = 1;
  int threads = 1;
  std::filesystem::path out = "runs/default";

  ExperimentConfig();
  void validate() const;
};

// Reads a JSON config on top of `defaults`. Unknown keys are errors.
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  const ExperimentConfig& defaults = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const ExperimentConfig& defaults = {});
nlohmann::ordered_json to_json(const ExperimentConfig& config);

// "rome:dummy" ... "wise:avoidant", then "ga", "gd", "kl", "po".
const std::vector<std::string>& method_registry();
// Expands "all" and checks every name against the registry.
std::vector<std::string> resolve_methods(const std::vector<std::string>& requested);

inline const std::string kGroundTruthColumn = "ground_truth";

struct StageRecord {
  std::string name;
  std::string hash;
  double seconds = 0.0;
  bool resumed = false;
  std::vector<std::string> paths;  // relative to the output directory
};

struct RunManifest {
  std::string config_hash;
  std::vector<StageRecord> stages;
};

nlohmann::ordered_json to_json(const RunManifest& manifest);

struct RunOptions {
  // Recompute stages whose recorded hash no longer matches instead of
  // refusing to continue.
  bool force = false;
  std::ostream* log = nullptr;
};

// The experiment as a set of resumable stages. Each stage records its hash
// under <out>/stages; a matching record with all outputs present is reused.
class Pipeline {
 public:
  Pipeline(ExperimentConfig config, RunOptions options = {});
  ~Pipeline();

  void corpus();
  void train();
  void ground_truth();
  void edit(const std::string& method);
  void unlearn(const std::string& method);
  // Produces the method's model if needed, then evaluates it.
  void evaluate(const std::string& method);
  // Evaluates every configured method and writes matrix.csv, report.json,
  // edit_metrics.csv and manifest.json.
  void matrix();

  const ExperimentConfig& config() const { return config_; }
  const RunManifest& manifest() const { return manifest_; }
  std::filesystem::path method_dir(const std::string& method) const;
  // File name of the method's evaluation report inside method_dir().
  std::string report_name(const std::string& method) const;

 private:
  struct State;
  ExperimentConfig config_;
  RunOptions options_;
  RunManifest manifest_;
  std::unique_ptr<State> s_;

  template <typename Fn>
  void stage(const std::string& name, const std::string& hash,
             const std::vector<std::string>& outputs, Fn&& run);
  std::string method_hash(const std::string& method);
  std::string eval_hash(const std::string& method);
  void evaluate_reference(const std::string& which);
  void produce(const std::string& method);
};

// Results CSV: one row per metric and dataset, one column per method
// plus the ground truth, then best and second-best method of the row.
std::string render_matrix_csv(const std::vector<std::string>& methods,
                              const nlohmann::json& reports);

// Maps an error onto the command-line exit code: 2 config, 3 numeric,
// 4 resume mismatch, 1 anything else.
int exit_code_for(ErrorKind kind);

}  // namespace editforget
