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


#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "editforget/error.hpp"
#include "editforget/pipeline.hpp"
#include "test_support.hpp"

namespace editforget {
namespace {

namespace fs = std::filesystem;

ExperimentConfig tiny_experiment(const fs::path& out) {
  ExperimentConfig c;
  c.corpus = testing_support::tiny_corpus_config();
  c.model = testing_support::tiny_model_config(0);
  c.train.epochs = 2;
  c.train.warmup_steps = 2;
  c.ground_truth_train = c.train;
  c.curriculum.icl_examples = 0;
  c.out = out;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("editforget_pipeline_test_" + name);
  fs::remove_all(p);
  return p;
}


TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c;
  c.train.lr = 0.02;
  c.rome.max_update_norm = 2.5;
  c.methods = {"ga", "rome:dummy"};
  const ExperimentConfig back = config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_DOUBLE_EQ(back.train.lr, 0.02);
}

TEST(ExperimentConfig, UnknownKeyIsConfigError) {
  try {
    config_from_json(nlohmann::json::parse(R"({"train": {"learning_rate": 1}})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"bogus": 1})")), Error);
}

TEST(MethodRegistry, ThirteenMethods) {
  EXPECT_EQ(method_registry().size(), 13u);
  EXPECT_EQ(resolve_methods({"all"}), method_registry());
  // Requested methods come back in registry order.
  EXPECT_EQ(resolve_methods({"ga", "wise:avoidant"}),
            (std::vector<std::string>{"wise:avoidant", "ga"}));
  try {
    resolve_methods({"memit"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("memit"), std::string::npos);
  }
}

nlohmann::json fake_report(double scale, double fq) {
  nlohmann::json r;
  for (const char* d : {"real_authors_analog", "real_world_analog", "retain", "forget"}) {
    r["per_dataset"][d] = {{"rouge_l_recall", 0.5 * scale},
                           {"probability", 0.25 * scale},
                           {"truth_ratio", 0.125 * scale}};
  }
  r["model_utility"] = 0.4 * scale;
  r["forget_quality_p"] = fq;
  return r;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(cells);
  }
  return rows;
}

TEST(MatrixCsv, SingleMethodLayout) {
  nlohmann::json reports;
  reports["ga"] = fake_report(1.0, 0.2);
  reports[kGroundTruthColumn] = fake_report(1.0, 1.0);
  const auto rows = parse_csv(render_matrix_csv({"ga"}, reports));
  ASSERT_EQ(rows.size(), 1u + 12 + 3);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"metric", "dataset", "ga", "ground_truth",
                                                "best", "second"}));
  for (const auto& r : rows) EXPECT_EQ(r.size(), 6u);
  EXPECT_EQ(rows[1][2], "0.500000");
  EXPECT_EQ(rows[1][4], "ga");
  EXPECT_EQ(rows[1][5], "");
  EXPECT_EQ(rows.back()[2], "pass");
  EXPECT_THROW(render_matrix_csv({"gd"}, reports), Error);
}

TEST(MatrixCsv, BestIsArgmaxOverMethodsAndPassRow) {
  nlohmann::json reports;
  reports["ga"] = fake_report(0.5, 0.01);
  reports["gd"] = fake_report(1.5, 0.06);
  reports["kl"] = fake_report(1.0, 0.05);
  reports[kGroundTruthColumn] = fake_report(9.0, 1.0);
  const auto rows = parse_csv(render_matrix_csv({"ga", "gd", "kl"}, reports));
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    EXPECT_EQ(rows[i][6], "gd") << rows[i][0];
    if (rows[i][0] != "forget_quality") EXPECT_EQ(rows[i][7], "kl") << rows[i][0];
  }
  const auto& pass = rows.back();
  EXPECT_EQ(pass[0], "forget_quality_pass");
  EXPECT_EQ(pass[2], "fail");
  EXPECT_EQ(pass[3], "pass");
  EXPECT_EQ(pass[4], "pass");
  EXPECT_EQ(pass[5], "pass");
}

TEST(ExitCodes, ByErrorKind) {
  EXPECT_EQ(exit_code_for(ErrorKind::kConfig), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::kNumeric), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::kResumeMismatch), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::kIo), 1);
}

TEST(Pipeline, ResumeSkipsAndMismatchNeedsForce) {
  const fs::path out = fresh_dir("resume");
  {
    Pipeline p(tiny_experiment(out));
    p.train();
    ASSERT_EQ(p.manifest().stages.size(), 2u);
    EXPECT_FALSE(p.manifest().stages[1].resumed);
  }
  EXPECT_TRUE(fs::exists(out / "models/full.bin"));
  {
    Pipeline p(tiny_experiment(out));
    p.train();
    for (const auto& s : p.manifest().stages) EXPECT_TRUE(s.resumed) << s.name;
  }
  ExperimentConfig changed = tiny_experiment(out);
  changed.train.lr *= 2;
  try {
    Pipeline(changed).train();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kResumeMismatch);
  }
  RunOptions force;
  force.force = true;
  Pipeline p(changed, force);
  p.train();
  EXPECT_TRUE(p.manifest().stages[0].resumed);
  EXPECT_FALSE(p.manifest().stages[1].resumed);
  fs::remove_all(out);
}

}  // namespace
}  // namespace editforget
