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


// Command-line driver for the experiment pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "editforget/error.hpp"
#include "editforget/pipeline.hpp"

namespace ef = editforget;

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> methods;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool resume = false;
  bool force = false;
  bool no_gen_routing = false;
  bool quiet = false;
};

ef::ExperimentConfig build_config(const Flags& f) {
  ef::ExperimentConfig c;
  if (!f.config.empty()) c = ef::load_config(f.config);
  if (const char* env = std::getenv("EDITFORGET_OUT"); env && *env) c.out = env;
  if (const char* env = std::getenv("EDITFORGET_THREADS"); env && *env) {
    try {
      c.threads = std::stoi(env);
    } catch (const std::exception&) {
      ef::fail(ef::ErrorKind::kConfig, "EDITFORGET_THREADS: not an integer");
    }
  }
  if (!f.methods.empty()) c.methods = f.methods;
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  if (f.threads) c.threads = *f.threads;
  if (f.no_gen_routing) c.wise_generation_routing = false;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model editing as unlearning: corpus, training, editors, unlearners, evaluation"};
  app.require_subcommand(1);
  Flags f;
  auto add_common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--method", f.methods, "Method name (e.g. rome:dummy, ga) or 'all'")
        ->delimiter(',');
    sub->add_option("--seed", f.seed, "Master seed");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--threads", f.threads, "Evaluation threads");
    auto* resume = sub->add_flag("--resume", f.resume, "Reuse stages whose hash matches (default)");
    sub->add_flag("--force", f.force, "Recompute stages whose hash no longer matches")
        ->excludes(resume);
    sub->add_flag("--wise-no-gen-routing", f.no_gen_routing,
                  "Decode WISE generations with the main memory only");
    sub->add_flag("-q,--quiet", f.quiet, "No stage progress on stderr");
  };
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"corpus", "Generate and store the synthetic corpus"},
      {"train", "Train the full model and the retain-only ground truth"},
      {"edit", "Apply an editing method"},
      {"unlearn", "Run an unlearning baseline"},
      {"eval", "Evaluate methods (also accepts ground_truth and original)"},
      {"matrix", "Evaluate the configured methods and write the report files"},
      {"all", "Run every stage for every method"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    std::vector<std::string> targets = f.methods;
    Flags g = f;
    // Reference columns are evaluated but are not registry methods.
    std::erase_if(g.methods, [](const std::string& m) {
      return m == ef::kGroundTruthColumn || m == "original";
    });
    if (cmd == "all" && g.methods.empty()) g.methods = {"all"};
    ef::ExperimentConfig config = build_config(g);
    ef::RunOptions opts;
    opts.force = f.force;
    if (!f.quiet) opts.log = &std::cerr;
    ef::Pipeline pipeline(config, opts);
    if (cmd == "corpus") {
      pipeline.corpus();
    } else if (cmd == "train") {
      pipeline.train();
      pipeline.ground_truth();
    } else if (cmd == "edit" || cmd == "unlearn") {
      if (f.methods.empty()) ef::fail(ef::ErrorKind::kConfig, cmd + ": --method is required");
      for (const auto& m : pipeline.config().methods) {
        const bool is_edit = m.find(':') != std::string::npos;
        if (is_edit != (cmd == "edit")) {
          if (f.methods.size() == 1 && f.methods[0] != "all") {
            ef::fail(ef::ErrorKind::kConfig, m + " is not an " +
                                                 (cmd == "edit" ? std::string("editing")
                                                                : std::string("unlearning")) +
                                                 " method");
          }
          continue;
        }
        if (cmd == "edit") pipeline.edit(m); else pipeline.unlearn(m);
      }
    } else if (cmd == "eval") {
      if (targets.empty()) ef::fail(ef::ErrorKind::kConfig, "eval: --method is required");
      for (const auto& m : targets) {
        if (m == ef::kGroundTruthColumn || m == "original") pipeline.evaluate(m);
      }
      if (!g.methods.empty()) {
        for (const auto& m : pipeline.config().methods) pipeline.evaluate(m);
      }
    } else {
      pipeline.matrix();
      std::cout << (pipeline.config().out / "matrix.csv").string() << "\n";
    }
  } catch (const ef::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ef::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
