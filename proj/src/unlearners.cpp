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


#include "editforget/unlearners.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "editforget/error.hpp"
#include "editforget/rng.hpp"
#include "editforget/training_data.hpp"

namespace editforget {

std::string unlearn_method_name(UnlearnMethod method) {
  switch (method) {
    case UnlearnMethod::kGa: return "ga";
    case UnlearnMethod::kGd: return "gd";
    case UnlearnMethod::kKl: return "kl";
    case UnlearnMethod::kPo: return "po";
  }
  return "?";
}

UnlearnMethod parse_unlearn_method(const std::string& name) {
  for (auto m : {UnlearnMethod::kGa, UnlearnMethod::kGd, UnlearnMethod::kKl,
                 UnlearnMethod::kPo}) {
    if (unlearn_method_name(m) == name) return m;
  }
  fail(ErrorKind::kConfig, "unknown unlearning method '" + name + "'");
}

void UnlearnConfig::validate() const {
  if (!(lr > 0)) fail(ErrorKind::kConfig, "unlearn.lr: must be > 0");
  if (steps < 0) fail(ErrorKind::kConfig, "unlearn.steps: must be >= 0");
  if (batch < 1) fail(ErrorKind::kConfig, "unlearn.batch: must be >= 1");
  if (!(retain_weight >= 0)) fail(ErrorKind::kConfig, "unlearn.retain_weight: must be >= 0");
  if (method == UnlearnMethod::kPo && non_answer_bank.empty()) {
    fail(ErrorKind::kConfig, "unlearn.non_answer_bank: po needs at least one non-answer");
  }
}

namespace {

// Mean over completion positions of KL(ref || model); writes the gradient of
// weight * KL with respect to the model logits.
double completion_kl(const Matrix& logits, const Matrix& ref_logits,
                     const Sequence& seq, Matrix* dlogits, double weight) {
  const std::size_t m = seq.completion_len();
  const Matrix lp = log_softmax(logits);
  const Matrix lq = log_softmax(ref_logits);
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t pos = seq.prompt_len - 1; pos + 1 < seq.tokens.size(); ++pos) {
    const auto q = lq.row(pos).array().exp();
    total += static_cast<double>((q * (lq.row(pos).array() - lp.row(pos).array())).sum());
    if (dlogits) {
      dlogits->row(pos) =
          ((lp.row(pos).array().exp() - q) * static_cast<float>(weight / m)).matrix();
    }
  }
  return total / static_cast<double>(m);
}

}  // namespace

UnlearnLoss unlearning_loss(const ModelState& model, const ModelState* ref,
                            std::span<const Sequence> forget_batch,
                            std::span<const Sequence> retain_batch,
                            const UnlearnConfig& config, Params<float>* grads) {
  if (config.method == UnlearnMethod::kKl && ref == nullptr) {
    fail(ErrorKind::kValidation, "kl unlearning needs a reference model");
  }
  if (forget_batch.empty()) fail(ErrorKind::kValidation, "empty forget batch");
  const bool use_retain = config.method != UnlearnMethod::kGa && !retain_batch.empty();
  std::vector<Sequence> batch(forget_batch.begin(), forget_batch.end());
  if (use_retain) batch.insert(batch.end(), retain_batch.begin(), retain_batch.end());
  const double nf = static_cast<double>(forget_batch.size());
  const double nr = static_cast<double>(retain_batch.size());
  const double n = static_cast<double>(batch.size());
  const double forget_sign = config.method == UnlearnMethod::kPo ? 1.0 : -1.0;

  std::vector<Matrix> ref_logits;
  if (config.method == UnlearnMethod::kKl && use_retain) {
    for (const auto& s : retain_batch) {
      ref_logits.push_back(forward<float>(ref->config, ref->params, s.tokens));
    }
  }
  UnlearnLoss out;
  // Each item is scaled by n / (its group size) so that the batch mean
  // gradients() takes comes out as the per-group means.
  const LogitLoss<float> fn = [&](std::size_t i, const Matrix& logits, Matrix& d) {
    if (i < forget_batch.size()) {
      const double w = forget_sign * n / nf;
      const double nll = completion_nll(logits, batch[i], &d, w);
      out.forget_nll += nll / nf;
      return w * nll;
    }
    const std::size_t r = i - forget_batch.size();
    const double w = config.retain_weight * n / nr;
    const double nll = completion_nll(logits, batch[i], &d, w);
    out.retain_nll += nll / nr;
    if (config.method != UnlearnMethod::kKl) return w * nll;
    const double kl = completion_kl(logits, ref_logits[r], batch[i], &d, w);
    out.kl += kl / nr;
    return w * kl;
  };
  if (grads) {
    auto result = gradients(model.config, model.params, std::span<const Sequence>(batch), fn);
    *grads = std::move(result.grads);
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Matrix d;
      fn(i, forward<float>(model.config, model.params, batch[i].tokens), d);
    }
  }
  const double forget_term = forget_sign * out.forget_nll;
  switch (config.method) {
    case UnlearnMethod::kGa: out.loss = forget_term; break;
    case UnlearnMethod::kKl: out.loss = forget_term + config.retain_weight * out.kl; break;
    default: out.loss = forget_term + config.retain_weight * out.retain_nll; break;
  }
  return out;
}

UnlearnResult run_unlearning(const ModelState& model, const ModelState* ref,
                             const Vocabulary& vocab,
                             std::span<const QaRecord> forget,
                             std::span<const QaRecord> retain,
                             const UnlearnConfig& config,
                             const CheckpointFn& on_checkpoint) {
  config.validate();
  if (config.method == UnlearnMethod::kKl && ref == nullptr) {
    fail(ErrorKind::kValidation, "kl unlearning needs a reference model");
  }
  if (forget.empty() || retain.empty()) {
    fail(ErrorKind::kValidation, "unlearning needs non-empty forget and retain sets");
  }
  const auto forget_seqs = qa_sequences(forget, vocab, false);
  const auto retain_seqs = qa_sequences(retain, vocab, false);
  std::vector<Sequence> retain_probe;
  {
    std::vector<std::size_t> idx(retain_seqs.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng pick(derive_seed(config.seed, "unlearn-retain-probe"));
    pick.shuffle(idx);
    idx.resize(std::min(idx.size(), forget_seqs.size()));
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) retain_probe.push_back(retain_seqs[i]);
  }
  UnlearnResult out;
  out.state = model;
  out.initial_forget_nll = mean_completion_nll(model, forget_seqs);
  out.initial_retain_nll = mean_completion_nll(model, retain_probe);

  Rng rng(derive_seed(config.seed, "unlearn:" + unlearn_method_name(config.method)));
  std::vector<std::size_t> f_order(forget.size()), r_order(retain.size());
  std::size_t f_pos = f_order.size(), r_pos = r_order.size();
  auto draw = [&rng](std::vector<std::size_t>& order, std::size_t& pos) {
    if (pos == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      pos = 0;
    }
    return order[pos++];
  };
  Optimizer sgd(OptimizerKind::kSgd, config.lr);
  Params<float> grads;
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<Sequence> fb, rb;
    for (int i = 0; i < config.batch; ++i) {
      const std::size_t f = draw(f_order, f_pos);
      if (config.method == UnlearnMethod::kPo) {
        const auto& bank = config.non_answer_bank;
        fb.push_back(make_sequence(vocab, forget[f].question, bank[rng.below(bank.size())]));
      } else {
        fb.push_back(forget_seqs[f]);
      }
      rb.push_back(retain_seqs[draw(r_order, r_pos)]);
    }
    const UnlearnLoss loss = unlearning_loss(out.state, ref, fb, rb, config, &grads);
    if (!std::isfinite(loss.loss) || !std::isfinite(global_norm(grads))) {
      fail(ErrorKind::kNumeric, "unlearning diverged at step " + std::to_string(step));
    }
    if (config.clip_norm > 0) {
      const double norm = global_norm(grads);
      if (norm > config.clip_norm) {
        scale_params(grads, static_cast<float>(config.clip_norm / norm));
      }
    }
    sgd.step(out.state.params, grads);
    UnlearnStep entry;
    entry.step = step;
    entry.loss = loss.loss;
    entry.forget_nll = mean_completion_nll(out.state, forget_seqs);
    entry.retain_nll = mean_completion_nll(out.state, retain_probe);
    if (!std::isfinite(entry.forget_nll) || !std::isfinite(entry.retain_nll)) {
      fail(ErrorKind::kNumeric, "unlearning diverged at step " + std::to_string(step));
    }
    out.log.push_back(entry);
    if (on_checkpoint) {
      for (int mark : config.checkpoint_steps) {
        if (mark == step) on_checkpoint(step, out.state);
      }
    }
  }
  return out;
}

void write_step_log(const std::filesystem::path& path,
                    std::span<const UnlearnStep> log) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& e : log) {
    nlohmann::json j = {{"step", e.step},
                        {"forget_nll", e.forget_nll},
                        {"retain_nll", e.retain_nll},
                        {"loss", e.loss}};
    f << j.dump() << "\n";
  }
}

}  // namespace editforget
