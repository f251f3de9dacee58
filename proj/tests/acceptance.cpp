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


// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. The end-to-end criteria drive the real CLI.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "editforget/error.hpp"
#include "editforget/eval.hpp"
#include "editforget/language_model.hpp"
#include "editforget/model.hpp"
#include "editforget/pipeline.hpp"
#include "editforget/rome.hpp"
#include "editforget/training_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace editforget;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

void print(int n, const std::string& title, const Outcome& o, double secs) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f s", secs);
  std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << " ("
            << buf << ")" << (o.detail.empty() ? "" : "  " + o.detail) << std::endl;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) fail(ErrorKind::kIo, "cannot read " + p.string());
  return json::parse(f);
}

std::vector<json> read_json_lines(const fs::path& p) {
  std::ifstream f(p);
  if (!f) fail(ErrorKind::kIo, "cannot read " + p.string());
  std::vector<json> out;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// 1. Analytic gradients against central differences.
Outcome gradient_check() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.context_len = 16;
  c.vocab_size = 13;
  c.seed = 21;
  Params<double> p = Params<double>::initialize(c);
  std::mt19937_64 gen(99);
  std::normal_distribution<double> n01;
  // Non-trivial norms and head so every tensor carries signal.
  p.visit([&](const std::string&, Mat<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.05 * n01(gen);
  });
  const std::vector<Sequence> batch = {{{1, 5, 6, 7, 8, 2}, 2}, {{1, 9, 4, 10, 12}, 3}};
  const LogitLoss<double> loss = [&](std::size_t i, const Mat<double>& logits, Mat<double>& d) {
    return completion_nll(logits, batch[i], &d);
  };
  auto batch_loss = [&] {
    double total = 0;
    for (const auto& s : batch) total += completion_nll(forward(c, p, s.tokens), s);
    return total / static_cast<double>(batch.size());
  };
  const auto g = gradients<double>(c, p, batch, loss);
  std::vector<Mat<double>*> tensors;
  std::vector<const Mat<double>*> grads;
  p.visit([&](const std::string&, Mat<double>& m) { tensors.push_back(&m); });
  g.grads.visit([&](const std::string&, const Mat<double>& m) { grads.push_back(&m); });

  Outcome o;
  const int samples = 150;
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    const std::size_t t = gen() % tensors.size();
    const Eigen::Index i = static_cast<Eigen::Index>(gen() % tensors[t]->size());
    double& x = tensors[t]->data()[i];
    const double orig = x, h = 1e-4;
    x = orig + h;
    const double up = batch_loss();
    x = orig - h;
    const double down = batch_loss();
    x = orig;
    const double numeric = (up - down) / (2 * h);
    const double analytic = grads[t]->data()[i];
    const double rel =
        std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    worst = std::max(worst, rel);
  }
  o.check(worst < 1e-3, "worst relative error " + num(worst));
  o.detail += (o.detail.empty() ? "" : "; ") + std::to_string(samples) +
              " coordinates, worst relative error " + num(worst);
  return o;
}

// 2. Rank-one update identities.
Outcome rank_one_check() {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> n01;
  auto randn = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(gen);
    return m;
  };
  Outcome o;
  double worst_hit = 0, worst_probe = 0;
  for (int t = 0; t < 50; ++t) {
    const int d = 8 + static_cast<int>(gen() % 9), f = 16 + static_cast<int>(gen() % 17);
    const Eigen::MatrixXd w = randn(d, f);
    const Eigen::VectorXd k = randn(f, 1), v = randn(d, 1);
    const KeyCovariance cov = key_covariance_from_keys(randn(3 * f, f), 0.1);
    const RankOneUpdate u = rank_one_update(w, k, v, cov, 0.0);
    worst_hit = std::max(worst_hit, (u.weight * k - v).cwiseAbs().maxCoeff());
    const KeyCovariance id(Eigen::MatrixXd::Identity(f, f), 0, false);
    const RankOneUpdate ui = rank_one_update(w, k, v, id, 0.0);
    Eigen::VectorXd probe = randn(f, 1);
    probe -= k * (k.dot(probe) / k.squaredNorm());
    worst_probe = std::max(worst_probe, (ui.weight * probe - w * probe).cwiseAbs().maxCoeff());
  }
  o.check(worst_hit < 1e-5, "max |W'k - v| " + num(worst_hit));
  o.check(worst_probe < 1e-5, "orthogonal probe moved " + num(worst_probe));
  if (o.pass) {
    o.detail = "50 instances, max |W'k - v| " + num(worst_hit) + ", max probe change " +
               num(worst_probe);
  }
  return o;
}

long long scaled_d(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> xs = a;
  xs.insert(xs.end(), b.begin(), b.end());
  long long best = 0;
  const long long na = a.size(), nb = b.size();
  for (double x : xs) {
    long long ca = 0, cb = 0;
    for (double y : a) ca += y <= x;
    for (double y : b) cb += y <= x;
    best = std::max(best, std::llabs(ca * nb - cb * na));
  }
  return best;
}

double enumerated_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const int n = static_cast<int>(pooled.size());
  const long long observed = scaled_d(a, b);
  long long total = 0, extreme = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != static_cast<int>(a.size())) continue;
    std::vector<double> x, y;
    for (int i = 0; i < n; ++i) ((mask >> i) & 1 ? x : y).push_back(pooled[i]);
    ++total;
    extreme += scaled_d(x, y) >= observed;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

// 3. Exact KS p-values against brute-force enumeration.
Outcome ks_check() {
  std::mt19937_64 gen(2024);
  Outcome o;
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const int na = 1 + static_cast<int>(gen() % 9);
    const int nb = 1 + static_cast<int>(gen() % (10 - na));
    std::vector<double> a(na), b(nb);
    // Alternate between tie-heavy integers and continuous values.
    for (auto* s : {&a, &b}) {
      for (auto& x : *s) {
        x = t % 2 ? static_cast<double>(gen() % 5) : static_cast<double>(gen() % 100000) / 7.0;
      }
    }
    const KsResult r = ks_two_sample(a, b);
    const double d = static_cast<double>(scaled_d(a, b)) / static_cast<double>(na * nb);
    if (r.statistic != d || r.p_value != enumerated_p(a, b)) ++mismatches;
  }
  o.check(mismatches == 0, std::to_string(mismatches) + " of 200 instances differ");
  if (o.pass) o.detail = "200 instances, |a|+|b| <= 10, exact equality";
  return o;
}

// 4. Metric identities.
Outcome metric_check() {
  Outcome o;
  o.check(model_utility(std::vector<double>(9, 0.5)) == 0.5, "harmonic mean of 0.5s");
  std::vector<double> with_zero(9, 0.7);
  with_zero[2] = 0.0;
  o.check(model_utility(with_zero) == 0.0, "harmonic mean with a zero");
  std::vector<double> mixed(8, 1.0);
  mixed.push_back(0.5);
  o.check(model_utility(mixed) == 0.9, "harmonic mean {1 x8, 0.5}");
  o.check(rouge_l("the cat sat", "the cat sat") == 1.0, "ROUGE identical");
  o.check(rouge_l("dog ran", "the cat sat") == 0.0, "ROUGE disjoint");
  o.check(rouge_l("the cat", "the cat sat") == 2.0 / 3.0, "ROUGE 2/3");
  o.check(report_truth_ratio(1.0, false) == 0.0 && report_truth_ratio(1.0, true) == 0.0,
          "truth ratio R=1");
  o.check(report_truth_ratio(0.5, false) == 0.5, "truth ratio R=0.5 utility");
  o.check(report_truth_ratio(2.0, true) == 0.5, "truth ratio R=2 forget");
  return o;
}

int run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "\"" + cli + "\" " + args + " -q > /dev/null";
  return std::system(cmd.c_str());
}

// 5. The retain-only model evaluated against itself.
Outcome ground_truth_self_test(const fs::path& out) {
  ExperimentConfig config;
  config.out = out;
  Pipeline pipeline(config);
  pipeline.evaluate(kGroundTruthColumn);
  Outcome o;
  const json report = read_json(out / "reference" / kGroundTruthColumn / "report.json");
  const double p = report["forget_quality_p"].get<double>();
  o.check(p == 1.0, "forget quality " + num(p));

  // Score the same model again as a plain candidate, straight from its checkpoint.
  const auto records = read_jsonl(out / "corpus/records.jsonl");
  const auto vocab = std::make_shared<const Vocabulary>(build_vocabulary(records));
  const auto gt =
      std::make_shared<const ModelState>(load_checkpoint(out / "models/ground_truth.json").state);
  const PlainModel model(gt, vocab);
  const EvalData data =
      make_eval_data(records, config.corpus.forget_fraction, derive_seed(config.seed, "eval"));
  const EvalOptions opts;
  const std::vector<double> reference_raw = forget_truth_ratios(model, data.forget, opts);
  const EvalReport candidate = evaluate_full(model, data, reference_raw, opts);
  const MetricTriple& mine = candidate.per_dataset.at("forget");
  const auto& forget = report["per_dataset"]["forget"];
  o.check(forget["rouge_l_recall"].get<double>() == mine.rouge, "forget ROUGE differs between roles");
  o.check(forget["probability"].get<double>() == mine.probability,
          "forget probability differs between roles");
  o.check(candidate.forget_quality_p == 1.0, "candidate-side forget quality " +
                                                 num(candidate.forget_quality_p));
  if (o.pass) {
    o.detail = "p = 1, forget ROUGE " + num(mine.rouge) + " and probability " +
               num(mine.probability) + " identical in both roles";
  }
  return o;
}

const std::vector<std::string> kTargets = {"dummy", "incorrect", "avoidant"};

// 6. Directional trends on the default run.
Outcome trend_checks(const fs::path& out) {
  Outcome o;
  std::vector<std::string> notes;
  const json original = read_json(out / "reference/original/report.json");
  const double orig_rouge = original["per_dataset"]["forget"]["rouge_l_recall"].get<double>();

  const double fq = original["forget_quality_p"].get<double>();
  o.check(fq < 0.05, "a: original forget quality " + num(fq));
  notes.push_back("a: p=" + num(fq));

  const json rome = read_json(out / "methods/rome_dummy/report.json");
  const double rome_rouge = rome["per_dataset"]["forget"]["rouge_l_recall"].get<double>();
  o.check(rome_rouge <= 0.3 * orig_rouge,
          "b: forget ROUGE " + num(rome_rouge) + " vs original " + num(orig_rouge));
  const auto log = read_json_lines(out / "methods/rome_dummy/edit_log.jsonl");
  bool monotone = !log.empty();
  for (std::size_t i = 1; i < log.size(); ++i) {
    monotone &= log[i]["running_locality"].get<double>() <=
                log[i - 1]["running_locality"].get<double>();
  }
  o.check(monotone, "b: logged locality increases somewhere");
  notes.push_back("b: ROUGE " + num(rome_rouge) + "/" + num(orig_rouge) + ", locality " +
                  num(log.front()["running_locality"].get<double>()) + "->" +
                  num(log.back()["running_locality"].get<double>()));

  std::string ike_note = "c:";
  for (const auto& t : kTargets) {
    const json r = read_json(out / ("methods/ike_" + t + "/report.json"));
    const double rel = r["edit_metrics_eval_split"]["reliability"].get<double>();
    const double gen = r["edit_metrics_eval_split"]["generalization"].get<double>();
    o.check(rel >= 0.95, "c: ike:" + t + " reliability " + num(rel));
    o.check(gen >= 0.8, "c: ike:" + t + " generalization " + num(gen));
    ike_note += " " + t + " " + num(rel) + "/" + num(gen);
  }
  notes.push_back(ike_note);

  std::string wise_note = "d:";
  for (const auto& t : kTargets) {
    const fs::path dir = out / ("methods/wise_" + t);
    const double loc = read_json(dir / "report.json")["edit_metrics"]["locality"].get<double>();
    const double quiet = read_json(dir / "report-no-gen-routing.json")["per_dataset"]["forget"]
                                  ["rouge_l_recall"]
                                      .get<double>();
    o.check(loc >= 0.9, "d: wise:" + t + " locality " + num(loc));
    o.check(std::abs(quiet - orig_rouge) <= 0.05,
            "d: wise:" + t + " no-gen-routing forget ROUGE " + num(quiet));
    wise_note += " " + t + " loc " + num(loc) + " rouge " + num(quiet);
  }
  notes.push_back(wise_note);

  auto last = [&](const std::string& m) {
    return read_json_lines(out / ("methods/" + m + "/step_log.jsonl")).back();
  };
  const json ga_sum = read_json(out / "methods/ga/summary.json");
  const json gd_sum = read_json(out / "methods/gd/summary.json");
  const double ga_forget = last("ga")["forget_nll"].get<double>();
  o.check(ga_forget >= ga_sum["initial_forget_nll"].get<double>(),
          "e: GA forget NLL fell to " + num(ga_forget));
  const double ga_drift =
      last("ga")["retain_nll"].get<double>() - ga_sum["initial_retain_nll"].get<double>();
  const double gd_drift =
      last("gd")["retain_nll"].get<double>() - gd_sum["initial_retain_nll"].get<double>();
  o.check(gd_drift <= ga_drift, "e: GD retain drift " + num(gd_drift) + " > GA " + num(ga_drift));
  notes.push_back("e: GA forget NLL " + num(ga_sum["initial_forget_nll"].get<double>()) + "->" +
                  num(ga_forget) + ", retain drift GD " + num(gd_drift) + " GA " +
                  num(ga_drift));
  if (o.pass) {
    for (const auto& n : notes) o.detail += (o.detail.empty() ? "" : "; ") + n;
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"editforget acceptance run"};
  std::string cli;
  std::string work = "acceptance_runs";
  app.add_option("--cli", cli, "path to the editforget binary")->required();
  app.add_option("--work", work, "scratch directory for the two full runs");
  CLI11_PARSE(app, argc, argv);

  const fs::path run_a = fs::path(work) / "run_a";
  const fs::path run_b = fs::path(work) / "run_b";
  fs::remove_all(work);
  fs::create_directories(work);
  bool all_pass = true;
  auto record = [&](int n, const std::string& title, double limit,
                    const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = e.what();
    }
    const double secs = seconds_since(t0);
    o.check(secs < limit, "took longer than " + num(limit) + " s");
    print(n, title, o, secs);
    all_pass &= o.pass;
    return secs;
  };

  record(1, "gradients match central differences", 30, gradient_check);
  record(2, "rank-one update identities", 10, rank_one_check);
  record(3, "exact KS p-values match enumeration", 60, ks_check);
  record(4, "metric identities", 5, metric_check);
  const double gt_secs = record(5, "ground-truth self-test", 120,
                                [&] { return ground_truth_self_test(run_a); });

  // Criterion 6 times the whole default run, including the ground-truth work
  // already done for criterion 5.
  const auto t6 = Clock::now();
  Outcome six;
  const std::string out_a = "--out \"" + run_a.string() + "\"";
  const int rc_all = run_cli(cli, "all " + out_a);
  const int rc_quiet = run_cli(
      cli, "eval --method wise:dummy,wise:incorrect,wise:avoidant --wise-no-gen-routing " + out_a);
  const double secs6 = seconds_since(t6) + gt_secs;
  if (rc_all != 0 || rc_quiet != 0) {
    six.check(false, "pipeline exited with " + std::to_string(rc_all) + "/" +
                         std::to_string(rc_quiet));
  } else {
    try {
      six = trend_checks(run_a);
    } catch (const std::exception& e) {
      six.check(false, e.what());
    }
  }
  six.check(secs6 < 600, "default run took longer than 600 s");
  print(6, "directional trends on the default run", six, secs6);
  all_pass &= six.pass;

  record(7, "two full runs give byte-identical matrix.csv", 1e9, [&] {
    Outcome o;
    const int rc = run_cli(cli, "all --out \"" + run_b.string() + "\"");
    o.check(rc == 0, "second run exited with " + std::to_string(rc));
    if (rc == 0) {
      const std::string a = slurp(run_a / "matrix.csv"), b = slurp(run_b / "matrix.csv");
      o.check(!a.empty() && a == b, "matrix.csv differs");
      if (o.pass) o.detail = std::to_string(a.size()) + " bytes identical";
    }
    return o;
  });
  return all_pass ? 0 : 1;
}
