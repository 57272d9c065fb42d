// Copyright 2026 The oodshift Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "oodshift/adam.hpp"
#include "oodshift/discriminator.hpp"

namespace oodshift {
namespace {

TEST(AdamTest, MatchesHandTrace) {
  const AdamOptions o{0.1, 0.9, 0.999, 1e-8};
  Adam adam(2, o);
  std::vector<double> p{1.0, -2.0};
  const std::vector<std::vector<double>> grads{{2.0, 0.5}, {-1.0, 0.5}, {0.0, -3.0}};
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (std::size_t t = 0; t < grads.size(); ++t) {
    adam.step(p, grads[t]);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t][static_cast<std::size_t>(i)];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, double(t + 1)));
      const double vh = v[i] / (1 - std::pow(0.999, double(t + 1)));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_DOUBLE_EQ(p[static_cast<std::size_t>(i)], ref[i]);
    }
  }
  std::vector<double> wrong(3);
  EXPECT_THROW(adam.step(wrong, wrong), InvalidArgument);
}

TEST(AdamTest, QuadraticThreeStepTrace) {
  // f(x) = x^2 from x = 1 with lr 0.1; values worked out by hand.
  Adam adam(1, {0.1});
  std::vector<double> x{1.0};
  const double expected[] = {0.9000000005, 0.8004122286917927, 0.70158627294603};
  for (double want : expected) {
    adam.step(x, std::vector<double>{2.0 * x[0]});
    EXPECT_NEAR(x[0], want, 1e-12);
  }
  EXPECT_EQ(adam.steps(), 3);
}

TEST(AdamTest, FirstStepIsLearningRateInSignDirection) {
  Adam adam(3, {0.01});
  std::vector<double> p{0, 0, 0};
  adam.step(p, std::vector<double>{5.0, -0.001, 1e3});
  EXPECT_NEAR(p[0], -0.01, 1e-9);
  EXPECT_NEAR(p[1], 0.01, 1e-7);
  EXPECT_NEAR(p[2], -0.01, 1e-9);
}

TEST(BceTest, StableForLargeLogits) {
  VectorT<double> s(4);
  s << 800.0, -800.0, 800.0, 0.0;
  const std::vector<int> e{1, 0, 0, 1};
  const double loss = bce_with_logits<double>(s, e);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, (800.0 + std::log(2.0)) / 4.0, 1e-12);
}

TEST(NetworkTest, ShapesAndLabelConcatenation) {
  MlpConfig cfg;
  cfg.in_dim = 5;
  cfg.hidden_dims = {7};
  cfg.feature_dim = 3;
  cfg.head_hidden = 4;
  cfg.n_classes = 2;
  Network<double> net(cfg);
  ASSERT_EQ(net.layers().size(), 4u);
  EXPECT_EQ(net.n_params(), std::size_t(5 * 7 + 7 + 7 * 3 + 3 + 5 * 4 + 4 + 4 + 1));
  Rng rng(1);
  net.init_glorot(rng);
  Matrix x = Matrix::Random(6, 5);
  EXPECT_EQ(net.features(x).cols(), 3);
  const std::vector<int> a(6, 0), b(6, 1);
  EXPECT_NE(net.logits(x, a), net.logits(x, b));
}

TEST(GradTest, MatchesDoubleCentralDifferences) {
  MlpConfig cfg;
  cfg.in_dim = 3;
  cfg.hidden_dims = {4};
  cfg.feature_dim = 2;
  cfg.head_hidden = 3;
  cfg.n_classes = 3;
  cfg.activation = Activation::kIdentity;
  Network<double> net(cfg);
  Rng rng(4);
  net.init_glorot(rng);
  Matrix x(5, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const std::vector<int> labels{0, 1, 2, 1, 0}, envs{0, 1, 1, 0, 1};
  std::vector<double> grad;
  loss_and_grad(net, x, labels, envs, grad);
  ASSERT_EQ(grad.size(), net.n_params());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    Network<double> plus = net, minus = net;
    plus.params()[i] += 1e-6;
    minus.params()[i] -= 1e-6;
    const double fp = bce_with_logits<double>(plus.logits(x, labels), envs);
    const double fm = bce_with_logits<double>(minus.logits(x, labels), envs);
    EXPECT_NEAR(grad[i], (fp - fm) / 2e-6, 1e-7) << "param " << i;
  }
}

TEST(GradTest, ReluNetworksPassTheCheck) {
  Rng rng(8);
  for (int t = 0; t < 3; ++t) {
    MlpConfig cfg;
    cfg.in_dim = 4 + t;
    cfg.hidden_dims = {6, 5};
    cfg.feature_dim = 3;
    cfg.head_hidden = t == 0 ? 0 : 4;
    const auto r = grad_check(cfg, rng);
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(ConfigTest, ValidateAndJson) {
  MlpConfig c;
  c.in_dim = 10;
  c.n_classes = 2;
  EXPECT_NO_THROW(c.validate());
  MlpConfig bad = c;
  bad.lr = -1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.train_frac = 1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  const nlohmann::json j = c;
  const auto back = j.get<MlpConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(parse_activation(to_string(Activation::kIdentity)), Activation::kIdentity);
}

LabeledDataset two_blobs(double gap, int n, Rng& rng) {
  Matrix f(2 * n, 2);
  std::vector<int> labels(2 * static_cast<std::size_t>(n)), envs(2 * static_cast<std::size_t>(n));
  for (int i = 0; i < 2 * n; ++i) {
    const int e = i < n ? 0 : 1;
    f(i, 0) = rng.normal() + (e == 1 ? gap : 0.0);
    f(i, 1) = rng.normal();
    labels[static_cast<std::size_t>(i)] = i % 2;
    envs[static_cast<std::size_t>(i)] = e;
  }
  return LabeledDataset(f, labels, envs);
}

MlpConfig small_config() {
  MlpConfig cfg;
  cfg.hidden_dims = {16};
  cfg.feature_dim = 4;
  cfg.head_hidden = 8;
  cfg.iters = 400;
  cfg.lr = 1e-2;
  return cfg;
}

TEST(TrainTest, SeparatesShiftedBlobs) {
  Rng rng(3);
  const auto ds = two_blobs(6.0, 300, rng);
  Rng train_rng(1);
  const auto model = train(ds, small_config(), train_rng);
  EXPECT_GT(model.val_accuracy(), 0.97);
  EXPECT_EQ(model.extract(ds).rows(), 600);
  EXPECT_EQ(model.log().loss.size(), 400u);
  EXPECT_EQ(model.log().val_curve.size(), 4u);
  EXPECT_EQ(model.log().n_train + model.log().n_val, 600u);
}

TEST(TrainTest, IdenticalEnvironmentsNearChance) {
  Rng rng(5);
  const auto ds = two_blobs(0.0, 2000, rng);
  Rng train_rng(2);
  const auto model = train(ds, small_config(), train_rng);
  EXPECT_LT(model.val_accuracy(), 0.6);
}

TEST(TrainTest, FinalLossBelowInitial) {
  Rng rng(6);
  const auto ds = two_blobs(2.0, 300, rng);
  const auto model = train(ds, small_config(), rng);
  const auto& loss = model.log().loss;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += loss[i];
    last += loss[loss.size() - 1 - i];
  }
  EXPECT_LT(last, first);
}

TEST(BalancedSamplerTest, CellCountsWithinThreeSigma) {
  Rng rng(7);
  // Deliberately unbalanced cells.
  Matrix f = Matrix::Zero(100, 1);
  std::vector<int> labels(100), envs(100);
  for (int i = 0; i < 100; ++i) {
    envs[static_cast<std::size_t>(i)] = i < 70 ? 0 : 1;
    labels[static_cast<std::size_t>(i)] = (i < 70 ? i < 60 : i < 75) ? 0 : 1;
  }
  const LabeledDataset ds(f, labels, envs);
  const BalancedSampler sampler(ds, 2);
  std::array<std::array<double, 2>, 2> count{};
  std::vector<std::size_t> rows;
  constexpr int batches = 1000, per_env = 32;
  for (int b = 0; b < batches; ++b) {
    sampler.draw(rng, per_env, rows);
    ASSERT_EQ(rows.size(), 2u * per_env);
    for (auto r : rows) count[static_cast<std::size_t>(envs[r])][static_cast<std::size_t>(labels[r])] += 1;
  }
  const double n = 2.0 * batches * per_env;
  const double expect = n / 4.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (const auto& env : count) {
    for (double c : env) EXPECT_LT(std::abs(c - expect), 3.0 * sigma);
  }
}

TEST(TrainTest, AccuracyCeilingOnTwoPointLatents) {
  // Two latent atoms with p = ((1+tv)/2, (1-tv)/2) and q reversed; the best
  // possible accuracy is (1 + tv) / 2.
  for (double tv : {0.0, 0.4}) {
    Rng rng(static_cast<std::uint64_t>(tv * 10) + 1);
    const int n = 4000;
    Matrix f(2 * n, 1);
    std::vector<int> labels(2 * n), envs(2 * n);
    for (int i = 0; i < 2 * n; ++i) {
      const int e = i < n ? 0 : 1;
      const double p_first = e == 0 ? 0.5 + 0.5 * tv : 0.5 - 0.5 * tv;
      f(i, 0) = rng.bernoulli(p_first) ? 0.0 : 1.0;
      labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(2));
      envs[static_cast<std::size_t>(i)] = e;
    }
    const LabeledDataset ds(f, labels, envs);
    const auto model = train(ds, small_config(), rng);
    EXPECT_LE(model.val_accuracy(), 0.5 * (1 + tv) + 0.03) << tv;
  }
}

TEST(TrainTest, DeterministicGivenSeed) {
  Rng rng(5);
  const auto ds = two_blobs(1.0, 200, rng);
  MlpConfig cfg = small_config();
  cfg.iters = 50;
  cfg.seed = 17;
  const auto a = train(ds, cfg);
  const auto b = train(ds, cfg);
  const auto pa = a.network().params(), pb = b.network().params();
  EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  EXPECT_EQ(a.log().loss, b.log().loss);
}

TEST(TrainTest, MissingCellIsRejected) {
  Matrix f = Matrix::Random(8, 2);
  const LabeledDataset ds(f, {0, 0, 0, 0, 0, 0, 1, 1}, {0, 0, 0, 0, 1, 1, 1, 1});
  MlpConfig cfg = small_config();
  Rng rng(0);
  try {
    train(ds, cfg, rng);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("missing (env, class) cell"), std::string::npos);
  }
}

TEST(TrainTest, WidthMismatchIsRejected) {
  Rng rng(1);
  const auto ds = two_blobs(1.0, 20, rng);
  MlpConfig cfg = small_config();
  cfg.in_dim = 3;
  EXPECT_THROW(train(ds, cfg, rng), InvalidArgument);
  const auto model = train(ds, [] {
    MlpConfig c = small_config();
    c.iters = 5;
    return c;
  }());
  EXPECT_THROW(model.extract(Matrix::Zero(2, 5)), InvalidArgument);
}

TEST(ModelJsonTest, RoundTripPreservesFeatures) {
  Rng rng(9);
  const auto ds = two_blobs(2.0, 50, rng);
  MlpConfig cfg = small_config();
  cfg.iters = 20;
  const auto model = train(ds, cfg, rng);
  const nlohmann::json j = model;
  const auto back = model_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.extract(ds), model.extract(ds));
  EXPECT_EQ(back.log().best_step, model.log().best_step);
}

}  // namespace
}  // namespace oodshift
