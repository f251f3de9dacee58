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


#include "editforget/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "editforget/error.hpp"
#include "editforget/ike.hpp"
#include "editforget/rng.hpp"
#include "editforget/targets.hpp"

namespace editforget {

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::kSgd, "sgd"},
                                             {OptimizerKind::kAdam, "adam"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusConfig, n_authors,
                                                questions_per_author, forget_fraction,
                                                n_world_records, perturbed_per_record)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainHyper, lr, epochs, batch, optimizer,
                                                clip_norm, warmup_steps,
                                                final_lr_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CurriculumConfig, include_paraphrases,
                                                icl_examples, max_demos, demo_rate,
                                                hard_negative_rate, novel_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RankOneEditConfig, layer, value_lr,
                                                value_steps, ridge, max_update_norm,
                                                clamp_factor, value_through_update, n_prefixes,
                                                noise_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(IkeConfig, train_fraction, k, answer_room)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SideMemoryConfig, layer, n_shards,
                                                mask_density, lr, steps, edit_margin,
                                                irrelevant_margin, margin_weight)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UnlearnConfig, lr, steps, batch,
                                                retain_weight, clip_norm, non_answer_bank,
                                                checkpoint_steps)

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string hash_of(const json& j) { return hex64(fnv1a(j.dump())); }

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot write " + p.string());
  f << text;
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kParse, p.string() + ": " + e.what());
  }
}

// Every key of `given` must exist in `known` (the serialized defaults).
void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    if (!known.contains(k)) fail(ErrorKind::kConfig, where + k + ": unknown key");
    if (v.is_object() && known[k].is_object()) check_keys(v, known[k], where + k + ".");
  }
}

template <typename T>
T section(const json& j, const char* key, const T& defaults) {
  if (!j.contains(key)) return defaults;
  json merged = defaults;
  merged.merge_patch(j[key]);
  try {
    return merged.get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string(key) + ": " + e.what());
  }
}

struct MethodSpec {
  std::string editor;  // rome, ike, wise; empty for unlearners
  TargetKind target = TargetKind::kDummy;
  UnlearnMethod unlearn = UnlearnMethod::kGa;
};

MethodSpec parse_method(const std::string& name) {
  MethodSpec s;
  const auto colon = name.find(':');
  if (colon == std::string::npos) {
    s.unlearn = parse_unlearn_method(name);
    return s;
  }
  s.editor = name.substr(0, colon);
  s.target = parse_target_kind(name.substr(colon + 1));
  return s;
}

std::string dir_name(const std::string& method) {
  std::string d = method;
  for (auto& c : d) {
    if (c == ':') c = '_';
  }
  return d;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  train.epochs = 16;
  train.lr = 1e-3;
  ground_truth_train = train;
  unlearn.non_answer_bank = standard_non_answers();
}

void ExperimentConfig::validate() const {
  corpus.validate();
  ModelConfig m = model;
  if (m.vocab_size <= 0) m.vocab_size = 16;
  m.validate();
  for (const auto* h : {&train, &ground_truth_train}) {
    if (!(h->lr > 0)) fail(ErrorKind::kConfig, "train.lr: must be > 0");
    if (h->epochs < 0) fail(ErrorKind::kConfig, "train.epochs: must be >= 0");
    if (h->batch < 1) fail(ErrorKind::kConfig, "train.batch: must be >= 1");
  }
  if (!(ike.train_fraction > 0 && ike.train_fraction < 1)) {
    fail(ErrorKind::kConfig, "ike.train_fraction: must be in (0, 1)");
  }
  if (ike.k < 1) fail(ErrorKind::kConfig, "ike.k: must be >= 1");
  if (wise.n_shards < 1) fail(ErrorKind::kConfig, "wise.n_shards: must be >= 1");
  if (!(wise.mask_density > 0 && wise.mask_density <= 1)) {
    fail(ErrorKind::kConfig, "wise.mask_density: must be in (0, 1]");
  }
  UnlearnConfig u = unlearn;
  u.method = UnlearnMethod::kPo;
  u.validate();
  if (threads < 1) fail(ErrorKind::kConfig, "threads: must be >= 1");
  resolve_methods(methods);
}

ojson to_json(const ExperimentConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["methods"] = c.methods;
  j["threads"] = c.threads;
  j["out"] = c.out.string();
  j["corpus"] = json(c.corpus);
  json model = to_json(c.model);
  model.erase("seed");
  model.erase("vocab_size");
  j["model"] = model;
  j["train"] = json(c.train);
  j["curriculum"] = json(c.curriculum);
  j["ground_truth_train"] = json(c.ground_truth_train);
  j["rome"] = json(c.rome);
  j["ike"] = json(c.ike);
  j["wise"] = json(c.wise);
  j["wise_generation_routing"] = c.wise_generation_routing;
  j["unlearn"] = json(c.unlearn);
  return j;
}

ExperimentConfig config_from_json(const json& j, const ExperimentConfig& defaults) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "config: top level must be an object");
  check_keys(j, json(to_json(defaults)), "");
  ExperimentConfig c = defaults;
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("methods")) {
      c.methods = j["methods"].is_string()
                      ? std::vector<std::string>{j["methods"].get<std::string>()}
                      : j["methods"].get<std::vector<std::string>>();
    }
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("wise_generation_routing")) {
      c.wise_generation_routing = j["wise_generation_routing"].get<bool>();
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  c.corpus = section(j, "corpus", c.corpus);
  if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
  c.train = section(j, "train", c.train);
  c.curriculum = section(j, "curriculum", c.curriculum);
  c.ground_truth_train = section(j, "ground_truth_train", c.ground_truth_train);
  c.rome = section(j, "rome", c.rome);
  c.ike = section(j, "ike", c.ike);
  c.wise = section(j, "wise", c.wise);
  c.unlearn = section(j, "unlearn", c.unlearn);
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path, const ExperimentConfig& defaults) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, e.what());
  }
  return config_from_json(j, defaults);
}

const std::vector<std::string>& method_registry() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const char* editor : {"rome", "ike", "wise"}) {
      for (const char* target : {"dummy", "incorrect", "avoidant"}) {
        n.push_back(std::string(editor) + ":" + target);
      }
    }
    for (const char* u : {"ga", "gd", "kl", "po"}) n.emplace_back(u);
    return n;
  }();
  return names;
}

std::vector<std::string> resolve_methods(const std::vector<std::string>& requested) {
  if (requested.empty()) fail(ErrorKind::kConfig, "methods: empty");
  std::set<std::string> wanted;
  for (const auto& m : requested) {
    if (m == "all") {
      wanted.insert(method_registry().begin(), method_registry().end());
      continue;
    }
    const auto& reg = method_registry();
    if (std::find(reg.begin(), reg.end(), m) == reg.end()) {
      fail(ErrorKind::kConfig, "methods: unknown method '" + m + "'");
    }
    wanted.insert(m);
  }
  std::vector<std::string> out;
  for (const auto& m : method_registry()) {
    if (wanted.count(m)) out.push_back(m);
  }
  return out;
}

ojson to_json(const RunManifest& m) {
  ojson j;
  j["config_hash"] = m.config_hash;
  j["stages"] = ojson::array();
  for (const auto& s : m.stages) {
    j["stages"].push_back({{"name", s.name},
                           {"hash", s.hash},
                           {"seconds", s.seconds},
                           {"resumed", s.resumed},
                           {"paths", s.paths}});
  }
  return j;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kNumeric: return 3;
    case ErrorKind::kResumeMismatch: return 4;
    default: return 1;
  }
}

struct Pipeline::State {
  bool loaded_corpus = false;
  std::vector<QaRecord> records;
  std::shared_ptr<const Vocabulary> vocab;
  SplitSets sets;
  EvalData eval_data;
  std::shared_ptr<const ModelState> full, gt;
  std::optional<std::vector<double>> gt_forget_raw;
  std::map<std::string, std::vector<EditDescriptor>> descriptors;
};

Pipeline::Pipeline(ExperimentConfig config, RunOptions options)
    : config_(std::move(config)), options_(options), s_(std::make_unique<State>()) {
  config_.validate();
  config_.methods = resolve_methods(config_.methods);
  const auto seed = config_.seed;
  config_.corpus.seed = derive_seed(seed, "corpus");
  config_.model.seed = derive_seed(seed, "model");
  config_.train.seed = derive_seed(seed, "train");
  config_.ground_truth_train.seed = derive_seed(seed, "ground-truth");
  config_.curriculum.seed = derive_seed(seed, "curriculum");
  config_.rome.seed = derive_seed(seed, "rome");
  config_.wise.seed = derive_seed(seed, "wise");
  config_.unlearn.seed = derive_seed(seed, "unlearn");
  json cj = to_json(config_);
  cj.erase("threads");
  cj.erase("out");
  cj.erase("methods");
  manifest_.config_hash = hash_of(cj);
  fs::create_directories(config_.out);
}

Pipeline::~Pipeline() = default;

fs::path Pipeline::method_dir(const std::string& method) const {
  return config_.out / "methods" / dir_name(method);
}

std::string Pipeline::report_name(const std::string& method) const {
  const bool plain = parse_method(method).editor != "wise" || config_.wise_generation_routing;
  return plain ? "report.json" : "report-no-gen-routing.json";
}

template <typename Fn>
void Pipeline::stage(const std::string& name, const std::string& hash,
                     const std::vector<std::string>& outputs, Fn&& run) {
  for (const auto& s : manifest_.stages) {
    if (s.name == name) return;
  }
  const fs::path record = config_.out / "stages" / (dir_name(name) + ".json");
  StageRecord rec;
  rec.name = name;
  rec.hash = hash;
  rec.paths = outputs;
  if (fs::exists(record)) {
    const json j = read_json(record);
    const std::string old = j.value("hash", "");
    bool complete = true;
    for (const auto& p : outputs) complete = complete && fs::exists(config_.out / p);
    if (old == hash && complete) {
      rec.resumed = true;
      rec.seconds = j.value("seconds", 0.0);
      manifest_.stages.push_back(rec);
      if (options_.log) *options_.log << "[resume] " << name << "\n";
      return;
    }
    if (old != hash && !options_.force) {
      fail(ErrorKind::kResumeMismatch,
           "stage " + name + ": existing outputs in " + config_.out.string() +
               " were produced by a different configuration (hash " + old +
               ", now " + hash + "); rerun with --force to replace them");
    }
  }
  if (options_.log) *options_.log << "[run] " << name << std::flush;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& p : outputs) fs::create_directories((config_.out / p).parent_path());
  try {
    run();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage " + name + ": " + e.what());
  }
  rec.seconds = seconds_since(t0);
  if (options_.log) *options_.log << " (" << rec.seconds << " s)\n";
  write_file(record, json({{"name", name}, {"hash", hash}, {"seconds", rec.seconds},
                           {"paths", outputs}})
                         .dump(2));
  manifest_.stages.push_back(rec);
}

namespace {

// The vocabulary stands in for vocab_size so that a changed token list
// invalidates trained checkpoints.
json model_json(const ModelConfig& m, const Vocabulary& vocab) {
  json j = to_json(m);
  j.erase("vocab_size");
  std::string all;
  for (const auto& t : vocab.tokens()) all += t + '\n';
  j["vocabulary"] = hex64(fnv1a(all));
  return j;
}

std::string corpus_hash(const ExperimentConfig& c) {
  return hash_of({{"corpus", json(c.corpus)}, {"seed", c.corpus.seed}});
}

std::string train_hash(const ExperimentConfig& c, const Vocabulary& vocab) {
  return hash_of({{"corpus", corpus_hash(c)},
                  {"model", model_json(c.model, vocab)},
                  {"train", json(c.train)},
                  {"train_seed", c.train.seed},
                  {"curriculum", json(c.curriculum)},
                  {"curriculum_seed", c.curriculum.seed}});
}

std::string gt_hash(const ExperimentConfig& c, const Vocabulary& vocab) {
  return hash_of({{"corpus", corpus_hash(c)},
                  {"model", model_json(c.model, vocab)},
                  {"train", json(c.ground_truth_train)},
                  {"train_seed", c.ground_truth_train.seed}});
}

}  // namespace

void Pipeline::corpus() {
  stage("corpus", corpus_hash(config_), {"corpus/records.jsonl"}, [&] {
    fs::create_directories(config_.out / "corpus");
    write_jsonl(config_.out / "corpus/records.jsonl", generate_corpus(config_.corpus));
  });
  if (s_->loaded_corpus) return;
  s_->records = read_jsonl(config_.out / "corpus/records.jsonl");
  s_->vocab = std::make_shared<const Vocabulary>(build_vocabulary(s_->records));
  s_->sets = split_sets(s_->records, config_.corpus.forget_fraction);
  s_->eval_data = make_eval_data(s_->records, config_.corpus.forget_fraction,
                                 derive_seed(config_.seed, "eval"));
  config_.model.vocab_size = s_->vocab->size();
  s_->loaded_corpus = true;
}

void Pipeline::train() {
  corpus();
  stage("train", train_hash(config_, *s_->vocab), {"models/full.json", "models/full.bin"}, [&] {
    const auto& vocab = *s_->vocab;
    const auto qa = qa_sequences(s_->records, vocab, config_.curriculum.include_paraphrases);
    std::vector<QaRecord> pool;
    for (const auto& r : s_->records) {
      if (r.split != Split::kForget) pool.push_back(r);
    }
    std::vector<std::string> excluded;
    for (const auto& r : s_->sets.forget) excluded.push_back(r.subject);
    const EpochData data = [&](int epoch) {
      auto seqs = qa;
      auto icl = icl_sequences(pool, vocab, config_.curriculum, epoch,
                               config_.model.context_len, excluded);
      seqs.insert(seqs.end(), icl.begin(), icl.end());
      return seqs;
    };
    TrainReport report;
    const ModelState state =
        editforget::train(ModelState::create(config_.model), data, config_.train, &report);
    save_checkpoint(config_.out / "models/full.json", state);
    write_file(config_.out / "models/full_train.json",
               json({{"epoch_loss", report.epoch_loss}, {"steps", report.steps}}).dump(2));
  });
  if (!s_->full) {
    s_->full = std::make_shared<const ModelState>(
        load_checkpoint(config_.out / "models/full.json").state);
  }
}

void Pipeline::ground_truth() {
  corpus();
  stage("ground_truth", gt_hash(config_, *s_->vocab),
        {"models/ground_truth.json", "models/ground_truth.bin"}, [&] {
          std::vector<QaRecord> kept;
          for (const auto& r : s_->records) {
            if (r.split != Split::kForget) kept.push_back(r);
          }
          const auto seqs =
              qa_sequences(kept, *s_->vocab, config_.curriculum.include_paraphrases);
          TrainReport report;
          const ModelState state = editforget::train(ModelState::create(config_.model), seqs,
                                                     config_.ground_truth_train, &report);
          save_checkpoint(config_.out / "models/ground_truth.json", state);
          write_file(config_.out / "models/ground_truth_train.json",
                     json({{"epoch_loss", report.epoch_loss}, {"steps", report.steps}})
                         .dump(2));
        });
  if (!s_->gt) {
    s_->gt = std::make_shared<const ModelState>(
        load_checkpoint(config_.out / "models/ground_truth.json").state);
  }
}

std::string Pipeline::method_hash(const std::string& method) {
  const MethodSpec spec = parse_method(method);
  json j = {{"method", method}, {"train", train_hash(config_, *s_->vocab)}};
  if (spec.editor == "rome") j["rome"] = json(config_.rome), j["seed"] = config_.rome.seed;
  if (spec.editor == "ike") j["ike"] = json(config_.ike);
  if (spec.editor == "wise") j["wise"] = json(config_.wise), j["seed"] = config_.wise.seed;
  if (spec.editor.empty()) {
    j["unlearn"] = json(config_.unlearn);
    j["seed"] = config_.unlearn.seed;
    if (spec.unlearn == UnlearnMethod::kKl) j["ground_truth"] = gt_hash(config_, *s_->vocab);
  }
  if (!spec.editor.empty()) j["targets_seed"] = derive_seed(config_.seed, "targets");
  return hash_of(j);
}

std::string Pipeline::eval_hash(const std::string& method) {
  json j = {{"ground_truth", gt_hash(config_, *s_->vocab)}, {"max_new_tokens", kMaxAnswerTokens}};
  if (method == kGroundTruthColumn) {
    j["model"] = "ground_truth";
  } else if (method == "original") {
    j["model"] = train_hash(config_, *s_->vocab);
  } else {
    j["model"] = method_hash(method);
    if (parse_method(method).editor == "wise") {
      j["generation_routing"] = config_.wise_generation_routing;
    }
  }
  return hash_of(j);
}

void Pipeline::edit(const std::string& method) {
  const MethodSpec spec = parse_method(method);
  if (spec.editor.empty()) fail(ErrorKind::kConfig, method + " is not an editing method");
  produce(method);
}

void Pipeline::unlearn(const std::string& method) {
  if (!parse_method(method).editor.empty()) {
    fail(ErrorKind::kConfig, method + " is not an unlearning method");
  }
  produce(method);
}

void Pipeline::produce(const std::string& method) {
  const MethodSpec spec = parse_method(method);
  train();
  if (spec.editor.empty() && spec.unlearn == UnlearnMethod::kKl) ground_truth();
  const fs::path dir = method_dir(method);
  const std::string rel = "methods/" + dir_name(method) + "/";
  std::vector<std::string> outputs = {rel + "descriptors.jsonl"};
  if (spec.editor == "rome") {
    outputs.insert(outputs.end(), {rel + "model.json", rel + "model.bin", rel + "edit_log.jsonl"});
  } else if (spec.editor == "ike") {
    outputs.push_back(rel + "split.json");
  } else if (spec.editor == "wise") {
    outputs.insert(outputs.end(), {rel + "side.json", rel + "side.bin"});
  } else {
    outputs = {rel + "model.json", rel + "model.bin", rel + "step_log.jsonl"};
  }
  stage(method, method_hash(method), outputs, [&] {
    fs::create_directories(dir);
    const auto& vocab = *s_->vocab;
    const auto& full = *s_->full;
    if (spec.editor.empty()) {
      UnlearnConfig cfg = config_.unlearn;
      cfg.method = spec.unlearn;
      const ModelState* ref = spec.unlearn == UnlearnMethod::kKl ? s_->gt.get() : nullptr;
      const auto result = run_unlearning(
          full, ref, vocab, s_->sets.forget, s_->sets.retain, cfg,
          [&](int step, const ModelState& st) {
            save_checkpoint(dir / ("checkpoint-" + std::to_string(step) + ".json"), st);
          });
      save_checkpoint(dir / "model.json", result.state);
      write_step_log(dir / "step_log.jsonl", result.log);
      write_file(dir / "summary.json",
                 json({{"initial_forget_nll", result.initial_forget_nll},
                       {"initial_retain_nll", result.initial_retain_nll}})
                     .dump(2));
      return;
    }
    const auto descriptors =
        build_descriptors(s_->sets.forget, s_->sets.retain, spec.target,
                          derive_seed(config_.seed, "targets"));
    write_descriptors(dir / "descriptors.jsonl", descriptors);
    if (spec.editor == "rome") {
      const auto result = edit_rank_one_sequential(full, vocab, descriptors, s_->sets.forget,
                                                   s_->sets.retain, config_.rome);
      save_checkpoint(dir / "model.json", result.state);
      write_edit_log(dir / "edit_log.jsonl", result.log);
      write_file(dir / "summary.json", json({{"layer", result.layer}}).dump(2));
    } else if (spec.editor == "ike") {
      const auto split = split_descriptors(descriptors, config_.ike.train_fraction,
                                           derive_seed(config_.seed, "ike"));
      json j;
      for (const auto& d : split.train) j["train"].push_back(d.record_id);
      for (const auto& d : split.eval) j["eval"].push_back(d.record_id);
      write_file(dir / "split.json", j.dump(2));
    } else {
      std::vector<std::string> irrelevant, other;
      for (const auto& r : s_->sets.retain) {
        irrelevant.push_back(r.question + " " + r.answer);
        other.push_back(r.question);
      }
      std::vector<std::string> edit_prompts;
      for (const auto& d : descriptors) edit_prompts.push_back(d.prompt);
      SideMemory side = merge_shards(
          train_side_memory(full, vocab, descriptors, irrelevant, config_.wise));
      side.threshold = calibrate_router(full, vocab, side, edit_prompts, other);
      save_side_memory(dir / "side.json", full, side, json::object());
    }
  });
}

namespace {

std::vector<EditDescriptor> pick(std::span<const EditDescriptor> all,
                                 const json& ids) {
  std::set<std::string> want;
  for (const auto& id : ids) want.insert(id.get<std::string>());
  std::vector<EditDescriptor> out;
  for (const auto& d : all) {
    if (want.count(d.record_id)) out.push_back(d);
  }
  return out;
}

ojson edit_json(const EditMetrics& m) {
  return {{"reliability", m.reliability},
          {"generalization", m.generalization},
          {"locality", m.locality}};
}

}  // namespace

void Pipeline::evaluate_reference(const std::string& which) {
  ground_truth();
  if (which == "original") {
    train();
    evaluate_reference(kGroundTruthColumn);
  }
  const fs::path dir = config_.out / "reference" / which;
  const std::string rel = "reference/" + which + "/";
  stage("eval:" + which, eval_hash(which), {rel + "report.json", rel + "audit.jsonl"}, [&] {
    fs::create_directories(dir);
    EvalOptions opts;
    opts.threads = config_.threads;
    const PlainModel model(which == "original" ? s_->full : s_->gt, s_->vocab);
    std::vector<double> gt_raw;
    if (which == kGroundTruthColumn) {
      gt_raw = forget_truth_ratios(model, s_->eval_data.forget, opts);
    } else {
      gt_raw = *s_->gt_forget_raw;
    }
    const EvalReport report = evaluate_full(model, s_->eval_data, gt_raw, opts);
    write_file(dir / "report.json", to_json(report).dump(2));
    write_audit_jsonl(dir / "audit.jsonl", report);
  });
  if (which == kGroundTruthColumn && !s_->gt_forget_raw) {
    s_->gt_forget_raw =
        read_json(dir / "report.json")["forget_truth_ratios_raw"].get<std::vector<double>>();
  }
}

void Pipeline::evaluate(const std::string& method) {
  if (method == kGroundTruthColumn || method == "original") {
    evaluate_reference(method);
    return;
  }
  produce(method);
  evaluate_reference(kGroundTruthColumn);
  const MethodSpec spec = parse_method(method);
  const fs::path dir = method_dir(method);
  const std::string rel = "methods/" + dir_name(method) + "/";
  // WISE without generation routing is a separate evaluation so that both
  // variants can live in the same output directory.
  const std::string report_file = report_name(method);
  const bool variant = report_file != "report.json";
  const std::string audit_file = variant ? "audit-no-gen-routing.jsonl" : "audit.jsonl";
  const std::string name = "eval:" + method + (variant ? ":no-gen-routing" : "");
  stage(name, eval_hash(method), {rel + report_file, rel + audit_file}, [&] {
    EvalOptions opts;
    opts.threads = config_.threads;
    auto base = std::make_shared<const PlainModel>(s_->full, s_->vocab);
    std::shared_ptr<const LanguageModel> model;
    ojson extra;
    std::vector<EditDescriptor> descriptors;
    if (!spec.editor.empty()) descriptors = read_descriptors(dir / "descriptors.jsonl");
    if (spec.editor == "ike") {
      const json split = read_json(dir / "split.json");
      const auto train = pick(descriptors, split["train"]);
      const auto held = pick(descriptors, split["eval"]);
      const EmbedFn embed = mean_hidden_embedder(s_->full, s_->vocab);
      auto store = build_demonstration_store(train, s_->sets.retain, embed, config_.ike.k,
                                             derive_seed(config_.seed, "ike"));
      auto ike = std::make_shared<const ContextEditedModel>(base, std::move(store), descriptors,
                                                            embed, config_.ike.answer_room);
      extra["edit_metrics_eval_split"] = edit_json(edit_metrics(*ike, *base, held, opts));
      std::size_t right = 0;
      for (const auto& d : descriptors) {
        right += descriptors[ike->fact_for(d.paraphrase)].record_id == d.record_id;
      }
      extra["paraphrase_fact_retrieval"] =
          static_cast<double>(right) / static_cast<double>(descriptors.size());
      model = ike;
    } else if (spec.editor == "wise") {
      auto side = std::make_shared<const SideMemory>(load_side_memory(dir / "side.json", nullptr));
      auto wise = std::make_shared<const SideMemoryModel>(base, side,
                                                          config_.wise_generation_routing);
      std::size_t forget_side = 0, retain_main = 0;
      for (const auto& r : s_->eval_data.forget) forget_side += wise->routes_to_side(r.question);
      for (const auto& r : s_->eval_data.retain) retain_main += !wise->routes_to_side(r.question);
      extra["routing"] = {
          {"threshold", *side->threshold},
          {"generation_routing", config_.wise_generation_routing},
          {"forget_to_side", static_cast<double>(forget_side) / s_->eval_data.forget.size()},
          {"retain_to_main", static_cast<double>(retain_main) / s_->eval_data.retain.size()}};
      model = wise;
    } else {
      auto state = std::make_shared<const ModelState>(load_checkpoint(dir / "model.json").state);
      model = std::make_shared<const PlainModel>(state, s_->vocab);
    }
    EvalReport report = evaluate_full(*model, s_->eval_data, *s_->gt_forget_raw, opts);
    if (!spec.editor.empty()) report.edit = edit_metrics(*model, *base, descriptors, opts);
    ojson j = to_json(report);
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_file(dir / report_file, j.dump(2));
    write_audit_jsonl(dir / audit_file, report);
  });
}

namespace {

const char* const kDatasets[] = {"real_authors_analog", "real_world_analog", "retain",
                                 "forget"};
const char* const kMetrics[] = {"rouge_l_recall", "probability", "truth_ratio"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Best and second-best column names by value, ties to the earlier column.
std::pair<std::string, std::string> ranks(const std::vector<std::string>& methods,
                                          const std::vector<double>& values) {
  std::vector<std::size_t> idx(methods.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return {idx.size() > 0 ? methods[idx[0]] : "", idx.size() > 1 ? methods[idx[1]] : ""};
}

}  // namespace

std::string render_matrix_csv(const std::vector<std::string>& methods,
                              const json& reports) {
  for (const auto& m : methods) {
    if (!reports.contains(m)) fail(ErrorKind::kValidation, "missing evaluation for " + m);
  }
  if (!reports.contains(kGroundTruthColumn)) {
    fail(ErrorKind::kValidation, "missing evaluation for " + kGroundTruthColumn);
  }
  std::ostringstream out;
  out << "metric,dataset";
  for (const auto& m : methods) out << "," << m;
  out << "," << kGroundTruthColumn << ",best,second\n";
  auto row = [&](const std::string& metric, const std::string& dataset, auto&& get) {
    std::vector<double> values;
    out << metric << "," << dataset;
    for (const auto& m : methods) {
      values.push_back(get(reports[m]));
      out << "," << fmt(values.back());
    }
    out << "," << fmt(get(reports[kGroundTruthColumn]));
    const auto [best, second] = ranks(methods, values);
    out << "," << best << "," << second << "\n";
  };
  for (const char* d : kDatasets) {
    for (const char* metric : kMetrics) {
      row(metric, d, [&](const json& r) {
        return r["per_dataset"][d][metric].get<double>();
      });
    }
  }
  row("model_utility", "all", [](const json& r) { return r["model_utility"].get<double>(); });
  row("forget_quality", "forget",
      [](const json& r) { return r["forget_quality_p"].get<double>(); });
  out << "forget_quality_pass,forget";
  for (const auto& m : methods) {
    out << "," << (reports[m]["forget_quality_p"].get<double>() >= kForgetQualityThreshold
                       ? "pass"
                       : "fail");
  }
  out << ","
      << (reports[kGroundTruthColumn]["forget_quality_p"].get<double>() >=
                  kForgetQualityThreshold
              ? "pass"
              : "fail")
      << ",,\n";
  return out.str();
}

void Pipeline::matrix() {
  for (const auto& m : config_.methods) evaluate(m);
  evaluate_reference("original");
  json reports;
  for (const auto& m : config_.methods) reports[m] = read_json(method_dir(m) / report_name(m));
  reports[kGroundTruthColumn] =
      read_json(config_.out / "reference" / kGroundTruthColumn / "report.json");
  const json original = read_json(config_.out / "reference/original/report.json");
  write_file(config_.out / "matrix.csv", render_matrix_csv(config_.methods, reports));

  std::ostringstream edits;
  edits << "method,reliability,generalization,locality\n";
  for (const auto& m : config_.methods) {
    const auto& r = reports[m];
    if (!r.contains("edit_metrics")) continue;
    edits << m << "," << fmt(r["edit_metrics"]["reliability"].get<double>()) << ","
          << fmt(r["edit_metrics"]["generalization"].get<double>()) << ","
          << fmt(r["edit_metrics"]["locality"].get<double>()) << "\n";
  }
  write_file(config_.out / "edit_metrics.csv", edits.str());

  ojson report;
  report["config"] = to_json(config_);
  report["methods"] = config_.methods;
  for (const auto& m : config_.methods) {
    report["results"][m] = reports[m];
    report["forget_quality_pass"][m] =
        reports[m]["forget_quality_p"].get<double>() >= kForgetQualityThreshold;
  }
  report["results"][kGroundTruthColumn] = reports[kGroundTruthColumn];
  report["reference"]["original"] = original;
  write_file(config_.out / "report.json", report.dump(2));

  ojson man = to_json(manifest_);
  man["outputs"] = {"matrix.csv", "edit_metrics.csv", "report.json"};
  ojson digests;
  for (const auto& s : manifest_.stages) {
    for (const auto& p : s.paths) digests[p] = hex64(fnv1a(read_file(config_.out / p)));
  }
  for (const char* p : {"matrix.csv", "edit_metrics.csv", "report.json"}) {
    digests[p] = hex64(fnv1a(read_file(config_.out / p)));
  }
  man["digests"] = digests;
  write_file(config_.out / "manifest.json", man.dump(2));
}

}  // namespace editforget
