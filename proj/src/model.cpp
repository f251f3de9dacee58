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

#include "editforget/model.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "editforget/error.hpp"
#include "editforget/rng.hpp"

namespace editforget {

namespace {

#if defined(__GLIBC__)
// Activations are freed and reallocated on every step; keeping them off mmap
// avoids a page-fault storm.
[[maybe_unused]] const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

ModelState ModelState::create(const ModelConfig& config) {
  config.validate();
  return {config, Params<float>::initialize(config)};
}

std::uint64_t ModelState::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  params.visit([&](const std::string& name, const Matrix& m) {
    h = fnv1a(name, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()),
                               m.size() * sizeof(float)),
              h);
  });
  return h;
}

ForwardOutput forward(const ModelState& state, std::span<const int> tokens,
                      bool want_trace) {
  ForwardOutput out;
  if (!want_trace) {
    out.logits = forward(state.config, state.params, tokens);
    return out;
  }
  ForwardCache<float> cache;
  out.logits = forward(state.config, state.params, tokens, &cache);
  ActivationTrace trace;
  for (auto& lc : cache.layers) {
    trace.keys.push_back(std::move(lc.act));
    trace.values.push_back(std::move(lc.ffn));
  }
  out.trace = std::move(trace);
  return out;
}

Matrix final_hidden(const ModelState& state, std::span<const int> tokens) {
  ForwardCache<float> cache;
  forward(state.config, state.params, tokens, &cache);
  return cache.xf;
}

double nll_loss(const ModelState& state, std::span<const int> prompt,
                std::span<const int> completion) {
  if (completion.empty()) {
    fail(ErrorKind::kValidation, "nll_loss: empty completion");
  }
  Sequence seq;
  seq.tokens.assign(prompt.begin(), prompt.end());
  seq.tokens.insert(seq.tokens.end(), completion.begin(), completion.end());
  seq.prompt_len = prompt.size();
  const Matrix logits = forward(state.config, state.params, seq.tokens);
  return completion_nll(logits, seq);
}

double mean_completion_nll(const ModelState& state, std::span<const Sequence> seqs) {
  if (seqs.empty()) fail(ErrorKind::kValidation, "mean_completion_nll: no sequences");
  double total = 0.0;
  std::size_t i = 0;
  while (i < seqs.size()) {
    std::vector<int> packed;
    std::vector<Segment> segs;
    const std::size_t first = i;
    while (i < seqs.size() &&
           (packed.empty() || packed.size() + seqs[i].tokens.size() <= 2048)) {
      segs.push_back({static_cast<int>(packed.size()),
                      static_cast<int>(seqs[i].tokens.size())});
      packed.insert(packed.end(), seqs[i].tokens.begin(), seqs[i].tokens.end());
      ++i;
    }
    const Matrix logits =
        forward<float>(state.config, state.params, packed, nullptr, {}, segs);
    for (std::size_t j = first; j < i; ++j) {
      const auto& sg = segs[j - first];
      total += completion_nll(Matrix(logits.middleRows(sg.start, sg.length)), seqs[j]);
    }
  }
  return total / static_cast<double>(seqs.size());
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  fail(ErrorKind::kConfig, "optimizer: unknown optimizer \"" + name + "\"");
}

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2,
                     double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(std::span<Matrix* const> params,
                     std::span<const Matrix* const> grads) {
  const auto lr = static_cast<float>(lr_);
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      *params[i] -= lr * *grads[i];
    }
    return;
  }
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto c1 = static_cast<float>(1.0 - std::pow(beta1_, t_));
  const auto c2 = static_cast<float>(1.0 - std::pow(beta2_, t_));
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0f - b1) * *grads[i];
    v_[i] = b2 * v_[i] + (1.0f - b2) * grads[i]->cwiseAbs2();
    params[i]->array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

void Optimizer::step(Matrix& param, const Matrix& grad) {
  Matrix* p[] = {&param};
  const Matrix* g[] = {&grad};
  step(p, g);
}

void Optimizer::step(Params<float>& params, const Params<float>& grads) {
  std::vector<Matrix*> p;
  std::vector<const Matrix*> g;
  params.visit([&](const std::string&, Matrix& m) { p.push_back(&m); });
  grads.visit([&](const std::string&, const Matrix& m) { g.push_back(&m); });
  step(p, g);
}

double global_norm(const Params<float>& grads) {
  double sq = 0.0;
  grads.visit([&](const std::string&, const Matrix& m) {
    sq += m.cast<double>().squaredNorm();
  });
  return std::sqrt(sq);
}

void scale_params(Params<float>& grads, float factor) {
  grads.visit([&](const std::string&, Matrix& m) { m *= factor; });
}

ModelState train(const ModelState& init, const EpochData& data,
                 const TrainHyper& hyper, TrainReport* report) {
  if (hyper.batch < 1) fail(ErrorKind::kConfig, "batch: must be >= 1");
  ModelState state = init;
  if (hyper.epochs <= 0) return state;
  Optimizer opt(hyper.optimizer, hyper.lr);
  Rng rng(derive_seed(hyper.seed, "train"));
  long step = 0;
  long total_steps = 0;
  auto lr_at = [&](long s) {
    if (s < hyper.warmup_steps) {
      return hyper.lr * static_cast<double>(s + 1) / hyper.warmup_steps;
    }
    const double span = std::max<long>(total_steps - hyper.warmup_steps, 1);
    const double progress = std::min(1.0, (s - hyper.warmup_steps) / span);
    const double floor = hyper.final_lr_fraction;
    return hyper.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(M_PI * progress)));
  };
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<Sequence> seqs = data(epoch);
    if (seqs.empty()) fail(ErrorKind::kValidation, "train: no sequences");
    if (epoch == 0) {
      // Later epochs may differ slightly in size; the schedule only needs an
      // estimate.
      total_steps = hyper.epochs *
                    static_cast<long>((seqs.size() + hyper.batch - 1) / hyper.batch);
    }
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      std::vector<Sequence> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(seqs[order[i]]);
      const LogitLoss<float> nll = [&](std::size_t i, const Matrix& logits,
                                       Matrix& dlogits) {
        return completion_nll(logits, batch[i], &dlogits);
      };
      GradientResult<float> result;
      try {
        result = gradients(state.config, state.params,
                           std::span<const Sequence>(batch), nll);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNumeric) throw;
        fail(ErrorKind::kNumeric,
             "training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(result.loss)) {
        fail(ErrorKind::kNumeric,
             "training diverged at step " + std::to_string(step));
      }
      if (hyper.clip_norm > 0) {
        const double norm = global_norm(result.grads);
        if (norm > hyper.clip_norm) {
          scale_params(result.grads, static_cast<float>(hyper.clip_norm / norm));
        }
      }
      opt.set_lr(lr_at(step));
      opt.step(state.params, result.grads);
      epoch_loss += result.loss * static_cast<double>(batch.size());
      ++step;
    }
    if (report) report->epoch_loss.push_back(epoch_loss / seqs.size());
  }
  if (report) report->steps = step;
  return state;
}

ModelState train(const ModelState& init, std::span<const Sequence> data,
                 const TrainHyper& hyper, TrainReport* report) {
  std::vector<Sequence> copy(data.begin(), data.end());
  return train(
      init, [&copy](int) { return copy; }, hyper, report);
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"d_model", c.d_model},
          {"n_heads", c.n_heads},     {"d_ffn", c.d_ffn},
          {"context_len", c.context_len}, {"vocab_size", c.vocab_size},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j,
                                   const ModelConfig& defaults) {
  ModelConfig c = defaults;
  try {
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ffn = j.value("d_ffn", c.d_ffn);
    c.context_len = j.value("context_len", c.context_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("model: ") + e.what());
  }
  return c;
}

namespace {

std::filesystem::path payload_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest_path,
                     const ModelState& state, std::span<const NamedTensor> extra,
                     const nlohmann::json& section) {
  const auto bin = payload_path(manifest_path);
  std::ofstream payload(bin, std::ios::binary);
  if (!payload) fail(ErrorKind::kIo, "cannot write " + bin.string());
  nlohmann::ordered_json manifest;
  manifest["format"] = "editforget-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = to_json(state.config);
  manifest["seed"] = state.config.seed;
  manifest["payload"] = bin.filename().string();
  manifest["dtype"] = "float32-le";
  auto tensors = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  auto write = [&](const std::string& name, const Matrix& m) {
    const std::uint64_t nbytes = m.size() * sizeof(float);
    tensors.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    payload.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(nbytes));
    offset += nbytes;
  };
  state.params.visit(write);
  for (const auto& t : extra) write(t.name, t.value);
  manifest["tensors"] = tensors;
  if (!section.is_null()) manifest["side"] = section;
  if (!payload) fail(ErrorKind::kIo, "write failed for " + bin.string());
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "editforget-checkpoint") {
    fail(ErrorKind::kParse, manifest_path.string() + ": not a checkpoint");
  }
  Checkpoint ck;
  ck.state.config = model_config_from_json(manifest.at("config"));
  ck.state.config.validate();
  ck.state.params = Params<float>::zeros_like(ck.state.config);
  const auto bin =
      manifest_path.parent_path() / manifest.at("payload").get<std::string>();
  std::ifstream payload(bin, std::ios::binary);
  if (!payload) fail(ErrorKind::kIo, "cannot read " + bin.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(payload)),
                          std::istreambuf_iterator<char>());
  auto read_into = [&](const nlohmann::json& t, Matrix& m) {
    const auto shape = t.at("shape").get<std::vector<long>>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto nbytes = t.at("nbytes").get<std::uint64_t>();
    if (shape.size() != 2 || nbytes != shape[0] * shape[1] * sizeof(float) ||
        offset + nbytes > bytes.size()) {
      fail(ErrorKind::kParse, "tensor " + t.at("name").get<std::string>() +
                                  ": inconsistent shape or offset");
    }
    m.resize(shape[0], shape[1]);
    std::memcpy(m.data(), bytes.data() + offset, nbytes);
  };
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : manifest.at("tensors")) {
    by_name[t.at("name").get<std::string>()] = &t;
  }
  ck.state.params.visit([&](const std::string& name, Matrix& m) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      fail(ErrorKind::kParse, "checkpoint lacks tensor " + name);
    }
    const long rows = m.rows(), cols = m.cols();
    read_into(*it->second, m);
    if (m.rows() != rows || m.cols() != cols) {
      fail(ErrorKind::kParse, "tensor " + name + ": shape mismatch with config");
    }
    by_name.erase(it);
  });
  for (const auto& t : manifest.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    if (!by_name.count(name)) continue;
    NamedTensor nt{name, {}};
    read_into(t, nt.value);
    ck.extra.push_back(std::move(nt));
  }
  if (manifest.contains("side")) ck.section = manifest.at("side");
  return ck;
}

}  // namespace editforget
