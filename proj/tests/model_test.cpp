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

#include <cmath>

#include "editforget/model.hpp"
#include "editforget/rng.hpp"

namespace editforget {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.context_len = 16;
  c.vocab_size = 11;
  c.seed = 3;
  return c;
}

std::vector<Sequence> tiny_batch() {
  return {{{1, 5, 6, 7, 8, 2}, 2}, {{1, 9, 4, 10}, 3}};
}

double batch_loss(const ModelConfig& c, const Params<double>& p,
                  std::span<const Sequence> batch) {
  double total = 0.0;
  for (const auto& s : batch) total += completion_nll(forward(c, p, s.tokens), s);
  return total / static_cast<double>(batch.size());
}

TEST(Gradients, MatchCentralDifferences) {
  const ModelConfig c = tiny_config();
  Params<double> p = Params<float>::initialize(c).cast<double>();
  // Non-trivial layer-norm parameters so their gradients are exercised.
  Rng noise(5);
  p.visit([&](const std::string&, Mat<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.05 * noise.normal();
  });
  const auto batch = tiny_batch();
  const LogitLoss<double> loss = [&](std::size_t i, const Mat<double>& logits,
                                     Mat<double>& d) {
    return completion_nll(logits, batch[i], &d);
  };
  const auto g = gradients<double>(c, p, batch, loss);

  std::vector<std::pair<Mat<double>*, const Mat<double>*>> tensors;
  std::vector<std::string> names;
  std::vector<const Mat<double>*> grads;
  g.grads.visit([&](const std::string&, const Mat<double>& m) { grads.push_back(&m); });
  std::size_t t = 0;
  p.visit([&](const std::string& name, Mat<double>& m) {
    tensors.emplace_back(&m, grads[t++]);
    names.push_back(name);
  });

  Rng rng(17);
  int checked = 0;
  for (int trial = 0; trial < 300 && checked < 120; ++trial) {
    const std::size_t ti = rng.below(tensors.size());
    auto [m, gm] = tensors[ti];
    const Eigen::Index idx = static_cast<Eigen::Index>(rng.below(m->size()));
    const double orig = m->data()[idx];
    const double h = 1e-4;
    m->data()[idx] = orig + h;
    const double up = batch_loss(c, p, batch);
    m->data()[idx] = orig - h;
    const double down = batch_loss(c, p, batch);
    m->data()[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    const double analytic = gm->data()[idx];
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    if (std::max(std::abs(numeric), std::abs(analytic)) < 1e-7) continue;
    EXPECT_LT(std::abs(numeric - analytic) / scale, 1e-3)
        << names[ti] << "[" << idx << "] numeric " << numeric << " analytic " << analytic;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Gradients, ConstantLossIsZeroAndScalingIsLinear) {
  const ModelConfig c = tiny_config();
  const Params<double> p = Params<double>::initialize(c);
  const auto batch = tiny_batch();
  const LogitLoss<double> constant = [](std::size_t, const Mat<double>& logits,
                                        Mat<double>& d) {
    d = Mat<double>::Zero(logits.rows(), logits.cols());
    return 1.5;
  };
  const auto z = gradients<double>(c, p, batch, constant);
  EXPECT_DOUBLE_EQ(z.loss, 1.5);
  z.grads.visit([](const std::string& name, const Mat<double>& m) {
    EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0) << name;
  });
  auto scaled_by = [&](double f) {
    const LogitLoss<double> loss = [&, f](std::size_t i, const Mat<double>& logits,
                                          Mat<double>& d) {
      return completion_nll(logits, batch[i], &d, f) * f;
    };
    return gradients<double>(c, p, batch, loss);
  };
  const auto one = scaled_by(1.0);
  const auto two = scaled_by(2.0);
  EXPECT_NEAR(two.loss, 2 * one.loss, 1e-12);
  std::vector<const Mat<double>*> a, b;
  one.grads.visit([&](const std::string&, const Mat<double>& m) { a.push_back(&m); });
  two.grads.visit([&](const std::string&, const Mat<double>& m) { b.push_back(&m); });
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LT((*b[i] - 2 * *a[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, PackedSegmentsMatchSeparatePasses) {
  const ModelConfig c = tiny_config();
  const Params<double> p = Params<float>::initialize(c).cast<double>();
  const std::vector<int> a = {1, 4, 5, 6}, b = {1, 7, 8};
  std::vector<int> packed = a;
  packed.insert(packed.end(), b.begin(), b.end());
  const std::vector<Segment> segs = {{0, 4}, {4, 3}};
  const auto joint = forward<double>(c, p, packed, nullptr, {}, segs);
  const auto la = forward<double>(c, p, a);
  const auto lb = forward<double>(c, p, b);
  EXPECT_LT((joint.topRows(4) - la).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((joint.bottomRows(3) - lb).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace editforget
