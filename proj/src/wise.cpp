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


#include "editforget/wise.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "editforget/error.hpp"
#include "editforget/rng.hpp"

namespace editforget {

namespace {

Sequence edit_sequence(const Vocabulary& vocab, const EditDescriptor& d) {
  Sequence s;
  s.tokens = vocab.encode_prompt(d.prompt);
  s.prompt_len = s.tokens.size();
  const auto t = vocab.encode(d.target);
  s.tokens.insert(s.tokens.end(), t.begin(), t.end());
  s.tokens.push_back(Vocabulary::kEos);
  return s;
}

// FFN keys at `layer` for rows [from, to) of each sequence, stacked.
Matrix stacked_keys(const ModelState& state, int layer,
                    const std::vector<std::vector<int>>& seqs,
                    const std::vector<std::pair<std::size_t, std::size_t>>& rows) {
  std::vector<Matrix> parts;
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto out = forward(state, seqs[i], true);
    const auto [from, to] = rows[i];
    parts.push_back(out.trace->keys[layer].middleRows(from, to - from));
    total += parts.back().rows();
  }
  Matrix k(total, state.config.d_ffn);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    k.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return k;
}

// Adds the gradient of mean hinge(sign * (||D k|| - margin)) over the rows of
// `keys` to `grad` and returns the loss.
double margin_loss(const Matrix& delta, const Matrix& keys, double margin,
                   bool push_up, double weight, Matrix& grad) {
  if (keys.rows() == 0) return 0.0;
  const Matrix out = keys * delta.transpose();  // rows: D k
  const Vector norms = out.rowwise().norm();
  double loss = 0.0;
  Matrix coeff = Matrix::Zero(out.rows(), out.cols());
  const double scale = weight / static_cast<double>(keys.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double a = norms(i);
    const double gap = push_up ? margin - a : a - margin;
    if (gap <= 0.0) continue;
    loss += gap;
    if (a > 1e-12) {
      const double sign = push_up ? -1.0 : 1.0;
      coeff.row(i) = out.row(i) * static_cast<float>(sign * scale / a);
    }
  }
  grad.noalias() += coeff.transpose() * keys;
  return loss * scale;
}

}  // namespace

SideMemory train_side_memory(const ModelState& state, const Vocabulary& vocab,
                             std::span<const EditDescriptor> descriptors,
                             std::span<const std::string> irrelevant_prompts,
                             const SideMemoryConfig& config) {
  if (config.n_shards < 1) fail(ErrorKind::kConfig, "wise.n_shards: must be >= 1");
  if (!(config.mask_density > 0.0 && config.mask_density <= 1.0)) {
    fail(ErrorKind::kConfig, "wise.mask_density: must be in (0, 1]");
  }
  if (descriptors.empty()) fail(ErrorKind::kValidation, "no descriptors to edit");
  const ModelConfig& mc = state.config;
  SideMemory side;
  side.layer = config.layer < 0 ? mc.n_layers - 1 : config.layer;
  if (side.layer >= mc.n_layers) fail(ErrorKind::kConfig, "wise.layer: out of range");
  side.w_main = state.params.layers[side.layer].w_out;

  std::vector<std::vector<int>> irr_seqs;
  std::vector<std::pair<std::size_t, std::size_t>> irr_rows;
  for (const auto& p : irrelevant_prompts) {
    irr_seqs.push_back(vocab.encode_prompt(p));
    irr_rows.emplace_back(1, irr_seqs.back().size());
  }
  const Matrix irr_keys = stacked_keys(state, side.layer, irr_seqs, irr_rows);

  Params<float> grads = Params<float>::zeros_like(mc);
  for (int s = 0; s < config.n_shards; ++s) {
    SideShard shard;
    Rng rng(derive_seed(config.seed, "wise-mask:" + std::to_string(s)));
    shard.mask = Matrix::Zero(mc.d_model, mc.d_ffn);
    for (Eigen::Index i = 0; i < shard.mask.size(); ++i) {
      shard.mask.data()[i] = rng.uniform() < config.mask_density ? 1.0f : 0.0f;
    }
    if (shard.mask.sum() == 0.0f) shard.mask.data()[0] = 1.0f;
    shard.delta = Matrix::Zero(mc.d_model, mc.d_ffn);

    std::vector<Sequence> seqs;
    for (std::size_t i = s; i < descriptors.size(); i += config.n_shards) {
      seqs.push_back(edit_sequence(vocab, descriptors[i]));
      shard.record_ids.push_back(descriptors[i].record_id);
    }
    if (seqs.empty()) {
      side.shards.push_back(std::move(shard));
      continue;
    }
    std::vector<std::vector<int>> edit_tokens;
    std::vector<std::pair<std::size_t, std::size_t>> edit_rows;
    std::vector<int> packed;
    std::vector<Segment> segs;
    for (const auto& q : seqs) {
      edit_tokens.push_back(q.tokens);
      edit_rows.emplace_back(q.prompt_len - 1, q.tokens.size() - 1);
      segs.push_back({static_cast<int>(packed.size()), static_cast<int>(q.tokens.size())});
      packed.insert(packed.end(), q.tokens.begin(), q.tokens.end());
    }
    const Matrix edit_keys = stacked_keys(state, side.layer, edit_tokens, edit_rows);

    Optimizer opt(OptimizerKind::kAdam, config.lr);
    Matrix w = side.w_main;
    ForwardHooks<float> hooks;
    hooks.w_out_layer = side.layer;
    hooks.w_out = &w;
    BackwardTaps<float> taps;
    taps.stop_layer = side.layer;
    ForwardCache<float> cache;
    for (int step = 0; step < config.steps; ++step) {
      w = side.w_main + shard.delta;
      const Matrix logits = forward<float>(mc, state.params, packed, &cache, hooks, segs);
      Matrix dlogits = Matrix::Zero(logits.rows(), logits.cols());
      double loss = 0.0;
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        const Matrix block = logits.middleRows(segs[i].start, segs[i].length);
        Matrix d;
        loss += completion_nll(block, seqs[i], &d, 1.0 / static_cast<double>(seqs.size())) /
                static_cast<double>(seqs.size());
        dlogits.middleRows(segs[i].start, segs[i].length) = d;
      }
      grads.set_zero();
      backward<float>(mc, state.params, cache, dlogits, &grads, taps);
      Matrix g = grads.layers[side.layer].w_out;
      loss += margin_loss(shard.delta, edit_keys, config.edit_margin, true,
                          config.margin_weight, g);
      loss += margin_loss(shard.delta, irr_keys, config.irrelevant_margin, false,
                          config.margin_weight, g);
      if (!std::isfinite(loss)) {
        fail(ErrorKind::kNumeric, "side memory shard " + std::to_string(s) +
                                      " diverged at step " + std::to_string(step));
      }
      g.array() *= shard.mask.array();
      opt.step(shard.delta, g);
      shard.delta.array() *= shard.mask.array();
    }
    side.shards.push_back(std::move(shard));
  }
  side.w_side = side.w_main;
  return side;
}

SideMemory merge_shards(SideMemory side) {
  if (side.shards.empty()) fail(ErrorKind::kValidation, "no shards to merge");
  Matrix sum = Matrix::Zero(side.w_main.rows(), side.w_main.cols());
  Matrix count = Matrix::Zero(side.w_main.rows(), side.w_main.cols());
  for (const auto& s : side.shards) {
    sum.array() += s.mask.array() * s.delta.array();
    count += s.mask;
  }
  side.w_side = side.w_main;
  for (Eigen::Index i = 0; i < sum.size(); ++i) {
    if (count.data()[i] > 0.0f) side.w_side.data()[i] += sum.data()[i] / count.data()[i];
  }
  return side;
}

double activation_score(const ModelState& state, const SideMemory& side,
                        std::span<const int> tokens, std::size_t position) {
  const auto out = forward(state, tokens, true);
  const Vector k = out.trace->keys[side.layer].row(position).transpose();
  return static_cast<double>(((side.w_side - side.w_main) * k).norm());
}

double calibrate_threshold(std::span<const double> edit_scores,
                           std::span<const double> other_scores) {
  if (edit_scores.empty() || other_scores.empty()) {
    fail(ErrorKind::kValidation, "router calibration needs both prompt sets");
  }
  const double lo = *std::min_element(edit_scores.begin(), edit_scores.end());
  const double hi = *std::max_element(other_scores.begin(), other_scores.end());
  if (lo > hi) return 0.5 * (lo + hi);
  // Inputs scoring at or above the threshold go to the side memory.
  std::set<double> candidates(edit_scores.begin(), edit_scores.end());
  candidates.insert(other_scores.begin(), other_scores.end());
  double best = 0.0;
  long best_errors = -1;
  for (double t : candidates) {
    long errors = 0;
    for (double e : edit_scores) errors += e < t;
    for (double o : other_scores) errors += o >= t;
    if (best_errors < 0 || errors <= best_errors) {
      best_errors = errors;
      best = t;
    }
  }
  return best;
}

double calibrate_router(const ModelState& state, const Vocabulary& vocab,
                        const SideMemory& side,
                        std::span<const std::string> edit_prompts,
                        std::span<const std::string> other_prompts) {
  auto scores = [&](std::span<const std::string> prompts) {
    std::vector<double> out;
    for (const auto& p : prompts) {
      const auto t = vocab.encode_prompt(p);
      out.push_back(activation_score(state, side, t, t.size() - 1));
    }
    return out;
  };
  const auto e = scores(edit_prompts);
  const auto o = scores(other_prompts);
  return calibrate_threshold(e, o);
}

RoutedLogits route_and_forward(const ModelState& state, const SideMemory& side,
                               std::span<const int> tokens,
                               std::optional<std::size_t> route_position) {
  if (!side.threshold) fail(ErrorKind::kValidation, "router threshold is not calibrated");
  const std::size_t pos = route_position.value_or(tokens.size() - 1);
  ForwardCache<float> cache;
  RoutedLogits out;
  out.logits = forward<float>(state.config, state.params, tokens, &cache);
  const Vector k = cache.layers[side.layer].act.row(pos).transpose();
  out.score = static_cast<double>(((side.w_side - side.w_main) * k).norm());
  out.used_side = out.score >= *side.threshold;
  if (out.used_side) {
    ForwardHooks<float> hooks;
    hooks.w_out_layer = side.layer;
    hooks.w_out = &side.w_side;
    out.logits = forward<float>(state.config, state.params, tokens, nullptr, hooks);
  }
  return out;
}

SideMemoryModel::SideMemoryModel(std::shared_ptr<const PlainModel> base,
                                 std::shared_ptr<const SideMemory> side,
                                 bool route_generation)
    : base_(std::move(base)), side_(std::move(side)), route_generation_(route_generation) {
  if (!side_->threshold) fail(ErrorKind::kValidation, "router threshold is not calibrated");
}

Matrix SideMemoryModel::score_logits(std::span<const int> tokens,
                                     std::size_t prompt_len) const {
  const std::size_t pos = prompt_len == 0 ? 0 : prompt_len - 1;
  return route_and_forward(base_->state(), *side_, tokens, pos).logits;
}

Vector SideMemoryModel::next_logits(std::span<const int> tokens) const {
  if (!route_generation_) return base_->next_logits(tokens);
  const Matrix logits = route_and_forward(base_->state(), *side_, tokens).logits;
  return logits.row(logits.rows() - 1).transpose();
}

bool SideMemoryModel::routes_to_side(std::string_view prompt) const {
  const auto t = condition(prompt);
  return activation_score(base_->state(), *side_, t, t.size() - 1) >= *side_->threshold;
}

void save_side_memory(const std::filesystem::path& manifest_path,
                      const ModelState& state, const SideMemory& side,
                      const nlohmann::json& extra_section) {
  std::vector<NamedTensor> extra = {{"side.w_side", side.w_side}};
  nlohmann::json section = extra_section;
  section["layer"] = side.layer;
  section["threshold"] = side.threshold ? nlohmann::json(*side.threshold) : nlohmann::json();
  section["shards"] = nlohmann::json::array();
  for (std::size_t i = 0; i < side.shards.size(); ++i) {
    extra.push_back({"side.delta." + std::to_string(i), side.shards[i].delta});
    extra.push_back({"side.mask." + std::to_string(i), side.shards[i].mask});
    section["shards"].push_back({{"record_ids", side.shards[i].record_ids}});
  }
  save_checkpoint(manifest_path, state, extra, section);
}

SideMemory load_side_memory(const std::filesystem::path& manifest_path,
                            ModelState* state) {
  Checkpoint ck = load_checkpoint(manifest_path);
  if (ck.section.is_null()) {
    fail(ErrorKind::kValidation, manifest_path.string() + ": no side memory section");
  }
  SideMemory side;
  try {
    side.layer = ck.section.at("layer").get<int>();
    if (!ck.section.at("threshold").is_null()) {
      side.threshold = ck.section.at("threshold").get<double>();
    }
    side.shards.resize(ck.section.at("shards").size());
    for (std::size_t i = 0; i < side.shards.size(); ++i) {
      side.shards[i].record_ids =
          ck.section["shards"][i].at("record_ids").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, manifest_path.string() + ": side section: " + e.what());
  }
  for (auto& t : ck.extra) {
    if (t.name == "side.w_side") {
      side.w_side = std::move(t.value);
      continue;
    }
    const auto dot = t.name.rfind('.');
    const std::size_t idx = std::stoul(t.name.substr(dot + 1));
    if (idx >= side.shards.size()) fail(ErrorKind::kValidation, "stray side tensor " + t.name);
    if (t.name.rfind("side.delta.", 0) == 0) side.shards[idx].delta = std::move(t.value);
    if (t.name.rfind("side.mask.", 0) == 0) side.shards[idx].mask = std::move(t.value);
  }
  side.w_main = ck.state.params.layers.at(side.layer).w_out;
  if (side.w_side.rows() != side.w_main.rows() || side.w_side.cols() != side.w_main.cols()) {
    fail(ErrorKind::kValidation, manifest_path.string() + ": side weight shape mismatch");
  }
  if (state) *state = std::move(ck.state);
  return side;
}

}  // namespace editforget
