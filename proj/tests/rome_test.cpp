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

#include <random>

#include "editforget/error.hpp"
#include "editforget/language_model.hpp"
#include "editforget/rome.hpp"
#include "editforget/targets.hpp"
#include "test_support.hpp"

namespace editforget {
namespace {

using testing_support::tiny_world;

Eigen::MatrixXd random_matrix(std::mt19937_64& gen, int r, int c) {
  std::normal_distribution<double> n01;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(gen);
  return m;
}

TEST(RankOneUpdate, SatisfiesKeyValueIdentity) {
  std::mt19937_64 gen(11);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd w = random_matrix(gen, 12, 20);
    const Eigen::VectorXd k = random_matrix(gen, 20, 1);
    const Eigen::VectorXd v = random_matrix(gen, 12, 1);
    const Eigen::MatrixXd keys = random_matrix(gen, 40, 20);
    const KeyCovariance c = key_covariance_from_keys(keys, 0.1);
    const RankOneUpdate u = rank_one_update(w, k, v, c, 0.0);
    EXPECT_FALSE(u.clamped);
    EXPECT_LT((u.weight * k - v).lpNorm<Eigen::Infinity>(), 1e-5);
  }
}

TEST(RankOneUpdate, IdentityCovarianceLeavesOrthogonalProbes) {
  std::mt19937_64 gen(12);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd w = random_matrix(gen, 8, 16);
    const Eigen::VectorXd k = random_matrix(gen, 16, 1);
    const Eigen::VectorXd v = random_matrix(gen, 8, 1);
    Eigen::VectorXd probe = random_matrix(gen, 16, 1);
    probe -= k * (k.dot(probe) / k.squaredNorm());
    const KeyCovariance c(Eigen::MatrixXd::Identity(16, 16), 0, false);
    const RankOneUpdate u = rank_one_update(w, k, v, c, 0.0);
    EXPECT_LT((u.weight * probe - w * probe).lpNorm<Eigen::Infinity>(), 1e-5);
  }
}

TEST(RankOneUpdate, SatisfiedKeyChangesNothing) {
  std::mt19937_64 gen(13);
  const Eigen::MatrixXd w = random_matrix(gen, 6, 10);
  const Eigen::VectorXd k = random_matrix(gen, 10, 1);
  const KeyCovariance c(Eigen::MatrixXd::Identity(10, 10), 0, false);
  const RankOneUpdate u = rank_one_update(w, k, w * k, c, 0.0);
  EXPECT_LT((u.weight - w).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(u.update_norm, 1e-12);
}

TEST(RankOneUpdate, ClampAndErrors) {
  std::mt19937_64 gen(14);
  const Eigen::MatrixXd w = random_matrix(gen, 6, 10);
  const Eigen::VectorXd k = random_matrix(gen, 10, 1);
  const Eigen::VectorXd v = random_matrix(gen, 6, 1) * 100.0;
  const KeyCovariance c(Eigen::MatrixXd::Identity(10, 10), 0, false);
  const RankOneUpdate u = rank_one_update(w, k, v, c, 0.5);
  EXPECT_TRUE(u.clamped);
  EXPECT_NEAR((u.weight - w).norm(), 0.5, 1e-9);
  EXPECT_THROW(rank_one_update(w, Eigen::VectorXd::Zero(10), v, c, 0.0), Error);
  try {
    KeyCovariance bad(-Eigen::MatrixXd::Identity(3, 3), 0, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLinearAlgebra);
  }
}

TEST(KeyCovariance, Examples) {
  const KeyCovariance none = key_covariance_from_keys(Eigen::MatrixXd(0, 5), 0.3);
  EXPECT_TRUE(none.matrix().isApprox(0.3 * Eigen::MatrixXd::Identity(5, 5)));
  Eigen::MatrixXd one(1, 3);
  one << 1, 2, 3;
  const KeyCovariance c1 = key_covariance_from_keys(one, 0.5);
  const Eigen::MatrixXd expected =
      one.transpose() * one + 0.5 * Eigen::MatrixXd::Identity(3, 3);
  EXPECT_LT((c1.matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
  std::mt19937_64 gen(15);
  const KeyCovariance c = key_covariance_from_keys(random_matrix(gen, 7, 12), 0.2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c.matrix());
  EXPECT_GE(eig.eigenvalues().minCoeff(), 0.2 - 1e-9);
  EXPECT_TRUE(c.matrix().isApprox(c.matrix().transpose()));
}

TEST(KeyCovariance, LowSampleFlag) {
  const auto& w = tiny_world();
  std::vector<std::string> texts = {w.records[0].question};
  const KeyCovariance c = estimate_key_covariance(*w.model, 0, *w.vocab, texts, 0.01);
  EXPECT_TRUE(c.low_sample());
  EXPECT_EQ(c.matrix().rows(), w.model->config.d_ffn);
}

TEST(Tracing, SelectsArgmaxLayer) {
  EXPECT_EQ(select_trace_layer(std::vector<double>{0.1, 0.6, 0.3, 0.2}), 1);
  EXPECT_EQ(select_trace_layer(std::vector<double>{0.4}), 0);
}

TEST(Tracing, RunsOnTrainedModel) {
  const auto& w = tiny_world();
  const TraceResult r = locate_edit_layer(*w.model, *w.vocab, w.records, 3.0, 1);
  EXPECT_GT(r.traced_records, 0);
  EXPECT_EQ(r.recovery.size(), 2u);
  EXPECT_EQ(r.layer, select_trace_layer(r.recovery));
  // A model that answers nothing correctly cannot be traced.
  const ModelState blank = ModelState::create(w.model->config);
  EXPECT_THROW(locate_edit_layer(blank, *w.vocab, w.records, 3.0, 1), Error);
}

TEST(SubjectKey, MatchesTraceAndAveragesPrefixes) {
  const auto& w = tiny_world();
  const QaRecord& r = w.records[0];
  const auto tokens = w.vocab->encode_prompt(r.question);
  const std::size_t pos = subject_position(*w.vocab, tokens, r.subject);
  const auto out = forward(*w.model, tokens, true);
  const Eigen::VectorXd k = compute_subject_key(*w.model, 1, *w.vocab, r.question, r.subject);
  ASSERT_EQ(k.size(), w.model->config.d_ffn);
  EXPECT_LT((k - out.trace->keys[1].row(pos).transpose().cast<double>()).cwiseAbs().maxCoeff(),
            1e-12);
  const std::vector<std::string> one = {"Tell me."};
  const std::vector<std::string> two = {"Tell me.", "Tell me."};
  const auto k1 = compute_subject_key(*w.model, 1, *w.vocab, r.question, r.subject, one);
  const auto k2 = compute_subject_key(*w.model, 1, *w.vocab, r.question, r.subject, two);
  EXPECT_LT((k1 - k2).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(subject_position(*w.vocab, tokens, "Nobody Here"), Error);
}

TEST(TargetValue, ZeroStepsKeepsOutputAndStepsReduceNll) {
  const auto& w = tiny_world();
  const auto descriptors =
      build_descriptors(w.sets.forget, w.sets.retain, TargetKind::kDummy, 1);
  RankOneEditConfig cfg;
  cfg.value_steps = 0;
  const auto& d = descriptors[0];
  const ValueSolution none = solve_target_value(*w.model, 0, *w.vocab, d, cfg);
  const auto tokens = w.vocab->encode_prompt(d.prompt);
  const std::size_t pos = subject_position(*w.vocab, tokens, d.subject);
  ForwardCache<float> cache;
  forward<float>(w.model->config, w.model->params, tokens, &cache);
  EXPECT_LT((none.value - cache.layers[0].ffn.row(pos).transpose().cast<double>())
                .cwiseAbs()
                .maxCoeff(),
            1e-6);
  cfg.value_steps = 20;
  const ValueSolution some = solve_target_value(*w.model, 0, *w.vocab, d, cfg);
  EXPECT_LT(some.final_nll, some.initial_nll);
  cfg.value_steps = 40;
  const ValueSolution more = solve_target_value(*w.model, 0, *w.vocab, d, cfg);
  EXPECT_LE(more.final_nll, some.final_nll + 1e-6);
}

TEST(SequentialEdit, LogCoversEveryDescriptorOnce) {
  const auto& w = tiny_world();
  const auto descriptors =
      build_descriptors(w.sets.forget, w.sets.retain, TargetKind::kDummy, 1);
  RankOneEditConfig cfg;
  cfg.layer = 0;
  const auto a = edit_rank_one_sequential(*w.model, *w.vocab, descriptors, w.sets.forget,
                                          w.sets.retain, cfg);
  ASSERT_EQ(a.log.size(), descriptors.size());
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    EXPECT_EQ(a.log[i].edit_index, static_cast<int>(i));
    EXPECT_EQ(a.log[i].record_id, descriptors[i].record_id);
  }
  // Only the edited matrix moves.
  for (int l = 0; l < 2; ++l) {
    const auto& before = w.model->params.layers[l];
    const auto& after = a.state.params.layers[l];
    EXPECT_EQ(before.w_in, after.w_in);
    if (l == 0) {
      EXPECT_NE(before.w_out, after.w_out);
    } else {
      EXPECT_EQ(before.w_out, after.w_out);
    }
  }
  const auto b = edit_rank_one_sequential(*w.model, *w.vocab, descriptors, w.sets.forget,
                                          w.sets.retain, cfg);
  EXPECT_EQ(a.state.checksum(), b.state.checksum());
}

}  // namespace
}  // namespace editforget
