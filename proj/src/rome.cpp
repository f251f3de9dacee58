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


#include "editforget/rome.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "json.hpp"
#include "editforget/error.hpp"
#include "editforget/eval.hpp"
#include "editforget/language_model.hpp"
#include "editforget/rng.hpp"

namespace editforget {

namespace {

double embedding_std(const ModelState& state) {
  const auto& e = state.params.tok_emb;
  const double mean = e.cast<double>().mean();
  return std::sqrt((e.cast<double>().array() - mean).square().mean());
}

std::vector<int> answer_tokens(const Vocabulary& vocab, std::string_view text) {
  std::vector<int> ids = vocab.encode(text);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

Sequence prompt_with_completion(const Vocabulary& vocab, std::string_view prompt,
                                std::string_view completion) {
  Sequence s;
  s.tokens = vocab.encode_prompt(prompt);
  s.prompt_len = s.tokens.size();
  const auto c = answer_tokens(vocab, completion);
  s.tokens.insert(s.tokens.end(), c.begin(), c.end());
  return s;
}

}  // namespace

KeyCovariance::KeyCovariance(Eigen::MatrixXd c, std::size_t sample_count,
                             bool low_sample)
    : c_(std::move(c)), sample_count_(sample_count), low_sample_(low_sample) {
  ldlt_.compute(c_);
  if (ldlt_.info() != Eigen::Success || !ldlt_.isPositive() ||
      ldlt_.vectorD().minCoeff() <= 0.0) {
    fail(ErrorKind::kLinearAlgebra, "key covariance is not positive definite");
  }
}

Eigen::VectorXd KeyCovariance::solve(const Eigen::VectorXd& k) const {
  return ldlt_.solve(k);
}

KeyCovariance key_covariance_from_keys(const Eigen::MatrixXd& keys, double ridge) {
  if (!(ridge > 0.0)) fail(ErrorKind::kConfig, "ridge: must be > 0");
  const auto d = keys.cols();
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(d, d) * ridge;
  if (keys.rows() > 0) {
    c.noalias() += keys.transpose() * keys / static_cast<double>(keys.rows());
  }
  return KeyCovariance(std::move(c), static_cast<std::size_t>(keys.rows()), false);
}

KeyCovariance estimate_key_covariance(const ModelState& state, int layer,
                                      const Vocabulary& vocab,
                                      std::span<const std::string> texts,
                                      double ridge) {
  std::vector<Matrix> blocks;
  Eigen::Index rows = 0;
  for (const auto& t : texts) {
    auto out = forward(state, vocab.encode_prompt(t), true);
    blocks.push_back(std::move(out.trace->keys[layer]));
    rows += blocks.back().rows();
  }
  Eigen::MatrixXd keys(rows, state.config.d_ffn);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    keys.middleRows(r, b.rows()) = b.cast<double>();
    r += b.rows();
  }
  KeyCovariance c = key_covariance_from_keys(keys, ridge);
  const bool low = texts.size() < static_cast<std::size_t>(state.config.d_ffn / 4);
  return KeyCovariance(c.matrix(), c.sample_count(), low);
}

std::size_t subject_position(const Vocabulary& vocab, std::span<const int> tokens,
                             std::string_view subject) {
  const auto sub = vocab.encode(subject);
  if (sub.empty() || sub.size() > tokens.size()) {
    fail(ErrorKind::kValidation, "subject \"" + std::string(subject) + "\" not found in prompt");
  }
  for (std::size_t start = tokens.size() - sub.size() + 1; start-- > 0;) {
    if (std::equal(sub.begin(), sub.end(), tokens.begin() + start)) {
      return start + sub.size() - 1;
    }
  }
  fail(ErrorKind::kValidation, "subject \"" + std::string(subject) + "\" not found in prompt");
}

int select_trace_layer(std::span<const double> recovery) {
  if (recovery.empty()) fail(ErrorKind::kValidation, "no layers to choose from");
  return static_cast<int>(std::max_element(recovery.begin(), recovery.end()) -
                          recovery.begin());
}

TraceResult locate_edit_layer(const ModelState& state, const Vocabulary& vocab,
                              std::span<const QaRecord> records,
                              double noise_scale, std::uint64_t seed) {
  const int n_layers = state.config.n_layers;
  TraceResult result;
  result.recovery.assign(n_layers, 0.0);
  const PlainModel clean_model(std::make_shared<ModelState>(state),
                               std::make_shared<Vocabulary>(vocab));
  const double sigma = noise_scale * embedding_std(state);
  Rng rng(derive_seed(seed, "trace"));
  for (const auto& r : records) {
    if (generate_greedy(clean_model, r.question, kMaxAnswerTokens) != r.answer) continue;
    const Sequence seq = prompt_with_completion(vocab, r.question, r.answer);
    const std::size_t last = subject_position(
        vocab, std::span<const int>(seq.tokens).first(seq.prompt_len), r.subject);
    const std::size_t first = last + 1 - vocab.encode(r.subject).size();
    ForwardCache<float> clean;
    forward(state.config, state.params, seq.tokens, &clean);
    Matrix noise(static_cast<Eigen::Index>(last - first + 1), state.config.d_model);
    for (Eigen::Index i = 0; i < noise.size(); ++i) {
      noise.data()[i] = static_cast<float>(sigma * rng.normal());
    }
    for (int l = 0; l < n_layers; ++l) {
      const Vector restored = clean.layers[l].ffn.row(last).transpose();
      ForwardHooks<float> hooks;
      hooks.embed_noise = &noise;
      hooks.noise_begin = static_cast<int>(first);
      hooks.ffn_layer = l;
      hooks.ffn_position = static_cast<int>(last);
      hooks.ffn_value = &restored;
      const Matrix logits = forward<float>(state.config, state.params, seq.tokens, nullptr, hooks);
      result.recovery[l] += std::exp(-completion_nll(logits, seq));
    }
    ++result.traced_records;
  }
  if (result.traced_records == 0) {
    fail(ErrorKind::kValidation,
         "causal tracing needs at least one record the model answers correctly");
  }
  for (auto& x : result.recovery) x /= result.traced_records;
  result.layer = select_trace_layer(result.recovery);
  return result;
}

Eigen::VectorXd compute_subject_key(const ModelState& state, int layer,
                                    const Vocabulary& vocab,
                                    std::string_view prompt,
                                    std::string_view subject,
                                    std::span<const std::string> prefixes) {
  std::vector<std::string> contexts;
  for (const auto& p : prefixes) contexts.push_back(p + " " + std::string(prompt));
  if (contexts.empty()) contexts.push_back(std::string(prompt));
  Eigen::VectorXd key = Eigen::VectorXd::Zero(state.config.d_ffn);
  for (const auto& text : contexts) {
    const auto tokens = vocab.encode_prompt(text);
    const std::size_t pos = subject_position(vocab, tokens, subject);
    const auto out = forward(state, tokens, true);
    key += out.trace->keys[layer].row(pos).transpose().cast<double>();
  }
  return key / static_cast<double>(contexts.size());
}

ValueSolution solve_target_value(const ModelState& state, int layer,
                                 const Vocabulary& vocab,
                                 const EditDescriptor& descriptor,
                                 const RankOneEditConfig& config) {
  if (!(config.value_lr > 0.0)) fail(ErrorKind::kConfig, "value_lr: must be > 0");
  const Sequence seq = prompt_with_completion(vocab, descriptor.prompt, descriptor.target);
  const std::size_t pos = subject_position(
      vocab, std::span<const int>(seq.tokens).first(seq.prompt_len), descriptor.subject);
  ForwardCache<float> cache;
  forward(state.config, state.params, seq.tokens, &cache);
  Vector v = cache.layers[layer].ffn.row(pos).transpose();

  ForwardHooks<float> hooks;
  hooks.ffn_layer = layer;
  hooks.ffn_position = static_cast<int>(pos);
  hooks.ffn_value = &v;
  BackwardTaps<float> taps;
  Vector grad;
  taps.ffn_value_grad = &grad;
  taps.stop_layer = layer;

  ValueSolution best;
  Optimizer opt(OptimizerKind::kAdam, config.value_lr);
  Matrix dlogits;
  for (int step = 0;; ++step) {
    const Matrix logits = forward(state.config, state.params, seq.tokens, &cache, hooks);
    const double nll = completion_nll(logits, seq, &dlogits);
    if (!std::isfinite(nll)) {
      fail(ErrorKind::kNumeric, descriptor.record_id + ": value optimization diverged");
    }
    if (step == 0) {
      best.initial_nll = nll;
      best.final_nll = nll;
      best.value = v.cast<double>();
    } else if (nll < best.final_nll) {
      best.final_nll = nll;
      best.value = v.cast<double>();
    }
    if (step == config.value_steps) break;
    backward<float>(state.config, state.params, cache, dlogits, nullptr, taps);
    Matrix v_mat = v.transpose();
    opt.step(v_mat, grad.transpose());
    v = v_mat.transpose();
  }
  return best;
}

RankOneUpdate rank_one_update(const Eigen::MatrixXd& w, const Eigen::VectorXd& k,
                              const Eigen::VectorXd& v, const KeyCovariance& c,
                              double max_norm) {
  if (k.isZero(0.0)) fail(ErrorKind::kValidation, "rank-one update with a zero key");
  const Eigen::VectorXd u = c.solve(k);
  const double denom = k.dot(u);
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    fail(ErrorKind::kLinearAlgebra, "rank-one update: k^T C^-1 k is not positive");
  }
  const Eigen::VectorXd residual = v - w * k;
  RankOneUpdate out;
  out.update_norm = residual.norm() * u.norm() / denom;
  double scale = 1.0 / denom;
  if (max_norm > 0.0 && out.update_norm > max_norm) {
    scale *= max_norm / out.update_norm;
    out.clamped = true;
  }
  out.weight = w;
  out.weight.noalias() += scale * residual * u.transpose();
  return out;
}

double max_update_norm(const ModelState& state, int layer,
                       const RankOneEditConfig& config) {
  if (config.max_update_norm > 0.0) return config.max_update_norm;
  return config.clamp_factor * state.params.layers.at(layer).w_out.cast<double>().norm() /
         std::sqrt(static_cast<double>(state.config.d_model));
}

ValueSolution solve_edit_value(const ModelState& state, int layer,
                               const Vocabulary& vocab,
                               const EditDescriptor& descriptor,
                               const Eigen::VectorXd& k, const KeyCovariance& c,
                               const RankOneEditConfig& config) {
  if (!(config.value_lr > 0.0)) fail(ErrorKind::kConfig, "value_lr: must be > 0");
  if (k.isZero(0.0)) fail(ErrorKind::kValidation, "rank-one update with a zero key");
  const Eigen::VectorXd ck = c.solve(k);
  const double denom = k.dot(ck);
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    fail(ErrorKind::kLinearAlgebra, "rank-one update: k^T C^-1 k is not positive");
  }
  const Vector u = (ck / denom).cast<float>();
  const Matrix& w = state.params.layers.at(layer).w_out;
  const Vector wk = (w.cast<double>() * k).cast<float>();
  // ||W' - W||_F = ||v - W k|| * ||u||.
  const double radius = max_update_norm(state, layer, config) / static_cast<double>(u.norm());

  const Sequence seq = prompt_with_completion(vocab, descriptor.prompt, descriptor.target);
  Vector v = wk;
  Matrix w_edit = w;
  ForwardHooks<float> hooks;
  hooks.w_out_layer = layer;
  hooks.w_out = &w_edit;
  std::vector<Matrix> out_grads;
  BackwardTaps<float> taps;
  taps.ffn_out_grads = &out_grads;
  taps.stop_layer = layer;
  ForwardCache<float> cache;

  ValueSolution best;
  Optimizer opt(OptimizerKind::kAdam, config.value_lr);
  Matrix dlogits;
  for (int step = 0;; ++step) {
    w_edit = w;
    w_edit.noalias() += (v - wk) * u.transpose();
    const Matrix logits = forward(state.config, state.params, seq.tokens, &cache, hooks);
    const double nll = completion_nll(logits, seq, &dlogits);
    if (!std::isfinite(nll)) {
      fail(ErrorKind::kNumeric, descriptor.record_id + ": value optimization diverged");
    }
    if (step == 0) {
      best.initial_nll = nll;
      best.final_nll = nll;
      best.value = v.cast<double>();
    } else if (nll < best.final_nll) {
      best.final_nll = nll;
      best.value = v.cast<double>();
    }
    if (step == config.value_steps) break;
    backward<float>(state.config, state.params, cache, dlogits, nullptr, taps);
    // dL/dv = sum_t dL/dout_t (u . key_t)
    const Vector grad = out_grads[layer].transpose() * (cache.layers[layer].act * u);
    Matrix v_mat = v.transpose();
    opt.step(v_mat, grad.transpose());
    v = v_mat.transpose();
    const double shift = (v - wk).norm();
    if (shift > radius) v = wk + (v - wk) * static_cast<float>(radius / shift);
  }
  return best;
}

AppliedEdit apply_rank_one_update(const ModelState& state, int layer,
                                  const Eigen::VectorXd& k,
                                  const Eigen::VectorXd& v,
                                  const KeyCovariance& c,
                                  const RankOneEditConfig& config) {
  const Eigen::MatrixXd w = state.params.layers.at(layer).w_out.cast<double>();
  RankOneUpdate u = rank_one_update(w, k, v, c, max_update_norm(state, layer, config));
  AppliedEdit out{state, u.update_norm, u.clamped};
  out.state.params.layers[layer].w_out = u.weight.cast<float>();
  return out;
}

SequentialEditResult edit_rank_one_sequential(
    const ModelState& state, const Vocabulary& vocab,
    std::span<const EditDescriptor> descriptors,
    std::span<const QaRecord> records, std::span<const QaRecord> retain,
    const RankOneEditConfig& config) {
  if (descriptors.empty()) fail(ErrorKind::kValidation, "no descriptors to edit");
  if (retain.empty()) fail(ErrorKind::kValidation, "no retain records for the key covariance");
  SequentialEditResult result;
  result.layer = config.layer >= 0
                     ? config.layer
                     : locate_edit_layer(state, vocab, records, config.noise_scale,
                                         config.seed)
                           .layer;
  if (result.layer >= state.config.n_layers) {
    fail(ErrorKind::kConfig, "layer: out of range");
  }
  std::vector<std::string> texts;
  for (const auto& r : retain) texts.push_back(r.question + " " + r.answer);
  const KeyCovariance cov =
      estimate_key_covariance(state, result.layer, vocab, texts, config.ridge);

  const auto shared_vocab = std::make_shared<Vocabulary>(vocab);
  const PlainModel unedited(std::make_shared<ModelState>(state), shared_vocab);
  std::vector<std::vector<int>> references;
  for (const auto& d : descriptors) {
    references.push_back(reference_continuation(unedited, d.locality_prompt));
  }

  ModelState current = state;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    const auto& d = descriptors[i];
    try {
      std::vector<std::string> prefixes;
      Rng rng(derive_seed(config.seed, "prefix:" + d.record_id));
      for (int p = 0; p < config.n_prefixes; ++p) {
        prefixes.push_back(retain[rng.below(retain.size())].question);
      }
      const Eigen::VectorXd k =
          compute_subject_key(current, result.layer, vocab, d.prompt, d.subject, prefixes);
      const ValueSolution v =
          config.value_through_update
              ? solve_edit_value(current, result.layer, vocab, d, k, cov, config)
              : solve_target_value(current, result.layer, vocab, d, config);
      AppliedEdit edit =
          apply_rank_one_update(current, result.layer, k, v.value, cov, config);
      current = std::move(edit.state);

      const PlainModel edited(std::make_shared<ModelState>(current), shared_vocab);
      EditLogEntry e;
      e.edit_index = static_cast<int>(i);
      e.record_id = d.record_id;
      e.reliability = greedy_token_accuracy(edited, d.prompt, vocab.encode(d.target));
      double loc = 0.0;
      for (std::size_t j = 0; j < descriptors.size(); ++j) {
        loc += teacher_forced_agreement(edited, descriptors[j].locality_prompt, references[j]);
      }
      e.running_locality = loc / static_cast<double>(descriptors.size());
      e.update_norm = edit.update_norm;
      e.clamped = edit.clamped;
      result.log.push_back(std::move(e));
    } catch (const Error& err) {
      fail(err.kind(), d.record_id + ": " + err.what());
    }
  }
  result.state = std::move(current);
  return result;
}

void write_edit_log(const std::filesystem::path& path,
                    std::span<const EditLogEntry> log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& e : log) {
    nlohmann::ordered_json j = {{"edit_index", e.edit_index},
                                {"record_id", e.record_id},
                                {"reliability", e.reliability},
                                {"running_locality", e.running_locality},
                                {"update_norm", e.update_norm},
                                {"clamped", e.clamped}};
    out << j.dump() << '\n';
  }
}

}  // namespace editforget
