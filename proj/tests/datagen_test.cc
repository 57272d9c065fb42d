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

#include <cmath>
#include <nlohmann/json.hpp>

#include "oodshift/datagen.hpp"

namespace oodshift {
namespace {

double fraction(const std::vector<int>& a, const std::vector<int>& b, std::size_t lo, std::size_t hi, bool equal) {
  std::size_t hits = 0;
  for (std::size_t i = lo; i < hi; ++i) hits += (a[i] == b[i]) == equal;
  return double(hits) / double(hi - lo);
}

TEST(ColoredTest, ShapeAndEnvLayout) {
  ColoredSpec s = irm_colored_default();
  s.n_per_env = 50;
  Rng rng(1);
  const auto ds = gen_colored(s, rng);
  EXPECT_EQ(ds.rows(), 100u);
  EXPECT_EQ(ds.dims(), static_cast<std::size_t>(3 * 14 * 14));
  EXPECT_EQ(ds.n_classes(), 2);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(ds.envs()[i], i < 50 ? 0 : 1);
  EXPECT_GE(ds.features().minCoeff(), 0.0);
  EXPECT_LE(ds.features().maxCoeff(), 1.0);
}

TEST(ColoredTest, FlipRatesMatchRho) {
  ColoredSpec s = irm_colored_default();
  s.n_per_env = 20000;
  Rng rng(2);
  const auto m = gen_colored_with_metadata(s, DigitBank::synthetic(s.image_side), rng);
  const auto& y = m.data.labels();
  const std::size_t n = 20000;
  EXPECT_NEAR(fraction(m.colors, y, 0, n, false), 0.1, 0.01);
  EXPECT_NEAR(fraction(m.colors, y, n, 2 * n, false), 0.9, 0.01);
  std::vector<int> digit_label(2 * n);
  for (std::size_t i = 0; i < 2 * n; ++i) digit_label[i] = m.digits[i] < 5 ? 0 : 1;
  EXPECT_NEAR(fraction(digit_label, y, 0, 2 * n, false), 0.25, 0.01);
}

TEST(ColoredTest, ColorChannelHoldsTheInk) {
  ColoredSpec s = colored_rho_preset(0.5, 0.5);
  s.n_per_env = 20;
  Rng rng(3);
  const auto m = gen_colored_with_metadata(s, DigitBank::synthetic(s.image_side), rng);
  const Eigen::Index px = s.pixels();
  for (std::size_t i = 0; i < 40; ++i) {
    const auto row = m.data.features().row(static_cast<Eigen::Index>(i));
    const Eigen::Index off = m.colors[i] == 0 ? px : 0;
    EXPECT_EQ(row.segment(off, px).sum(), 0.0);
    EXPECT_EQ(row.segment(2 * px, px).sum(), 0.0);
  }
}

TEST(ColoredTest, BlueShiftMovesInkOnlyInTestEnv) {
  ColoredSpec s = colored_blue_preset();
  s.n_per_env = 500;
  Rng rng(4);
  const auto m = gen_colored_with_metadata(s, DigitBank::synthetic(s.image_side), rng);
  double blue_tr = 0, blue_te = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    ASSERT_GE(m.blue[i], 0.0);
    ASSERT_LE(m.blue[i], 1.0);
    (i < 500 ? blue_tr : blue_te) += m.blue[i];
  }
  EXPECT_LT(blue_tr / 500, 0.15);
  EXPECT_GT(blue_te / 500, 0.85);
  const Eigen::Index px = s.pixels();
  EXPECT_GT(m.data.features().bottomRows(500).middleCols(2 * px, px).sum(),
            5 * m.data.features().topRows(500).middleCols(2 * px, px).sum());
}

TEST(ColoredTest, Deterministic) {
  ColoredSpec s = irm_colored_default();
  s.n_per_env = 30;
  Rng a(11), b(11);
  EXPECT_EQ(gen_colored(s, a).features(), gen_colored(s, b).features());
}

TEST(ColoredTest, ValidationNamesTheField) {
  ColoredSpec s;
  s.rho_tr = 1.5;
  try {
    s.validate();
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("rho_tr"), std::string::npos);
  }
  s = ColoredSpec{};
  s.sigma_te = -1;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = ColoredSpec{};
  s.use_real_mnist = true;
  Rng rng(0);
  EXPECT_THROW(gen_colored(s, rng), InvalidArgument);
}

TEST(ColoredTest, JsonRoundTrip) {
  const ColoredSpec s = colored_blue_preset();
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<ColoredSpec>(), s);
}

TEST(DigitBankTest, FromImagesBlockAverages) {
  Matrix img = Matrix::Zero(1, 16);
  img.block(0, 0, 1, 2).setConstant(1.0);
  img.block(0, 4, 1, 2).setConstant(1.0);
  const LabeledDataset digits(img, {3}, {0});
  const auto bank = DigitBank::from_images(digits, 2);
  RowVector out;
  Rng rng(0);
  EXPECT_EQ(bank.draw(rng, out), 3);
  ASSERT_EQ(out.size(), 4);
  EXPECT_DOUBLE_EQ(out(0), 1.0);
  EXPECT_DOUBLE_EQ(out(1), 0.0);
}

TEST(LatentTest, ValidateRejectsLabelShift) {
  LatentSpec s = latent_spec_a();
  s.q_y_given_z[0] = {0.2, 0.8};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = latent_spec_a();
  s.p_z = {0.5, 0.6, -0.1};
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(LatentTest, RandomSpecsAreValid) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto s = random_latent_spec(rng, 1 + rng.uniform_int(8), 1 + rng.uniform_int(4), 0.3);
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(LatentTest, SampleFrequencies) {
  const LatentSpec s = latent_spec_a();
  Rng rng(6);
  const auto ds = gen_latent(s, 40000, rng);
  std::array<std::array<double, 3>, 2> count{};
  std::array<double, 2> y0_at_a{};
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    const int z = static_cast<int>(std::lround(ds.features()(static_cast<Eigen::Index>(i), 0))) + 1;
    const auto k = static_cast<std::size_t>(z == 1 ? 0 : z == 0 ? 1 : 2);
    const auto e = static_cast<std::size_t>(ds.envs()[i]);
    count[e][k] += 1;
    if (k == 0 && ds.labels()[i] == 0) y0_at_a[e] += 1;
  }
  EXPECT_NEAR(count[0][0] / 40000, 0.5, 0.01);
  EXPECT_EQ(count[0][2], 0.0);
  EXPECT_EQ(count[1][1], 0.0);
  EXPECT_NEAR(y0_at_a[0] / count[0][0], 0.9, 0.01);
  EXPECT_NEAR(y0_at_a[1] / count[1][0], 0.1, 0.01);
}

TEST(ColoredProperty, NoLabelShiftAndBlueInRange) {
  Rng meta(12);
  const DigitBank bank = DigitBank::synthetic(4);
  for (int t = 0; t < 20; ++t) {
    ColoredSpec s;
    s.image_side = 4;
    s.n_per_env = 3000;
    s.rho_tr = meta.uniform();
    s.rho_te = meta.uniform();
    s.mu_tr = meta.uniform();
    s.mu_te = meta.uniform();
    s.sigma_tr = meta.uniform(0.0, 0.5);
    s.sigma_te = meta.uniform(0.0, 0.5);
    s.label_noise = meta.uniform(0.0, 0.5);
    Rng rng(meta.next());
    const auto m = gen_colored_with_metadata(s, bank, rng);
    const auto c = m.data.cell_counts();
    const double n = s.n_per_env;
    const double f0 = double(c[0][1]) / n, f1 = double(c[1][1]) / n;
    // Difference of two binomial proportions.
    const double sigma = std::sqrt(2.0 * 0.25 / n);
    EXPECT_LT(std::abs(f0 - f1), 3.0 * sigma + 1e-12) << "trial " << t;
    for (double b : m.blue) {
      ASSERT_GE(b, 0.0);
      ASSERT_LE(b, 1.0);
    }
  }
}

TEST(LatentProperty, EmpiricalMarginalsConverge) {
  Rng meta(13);
  for (int t = 0; t < 5; ++t) {
    const LatentSpec s = random_latent_spec(meta, 2 + meta.uniform_int(5), 2);
    Rng rng(meta.next());
    const auto ds = gen_latent(s, 50000, rng);
    std::vector<double> p(s.size(), 0.0), q(s.size(), 0.0);
    for (std::size_t i = 0; i < ds.rows(); ++i) {
      const auto z = static_cast<std::size_t>(std::lround(ds.features()(static_cast<Eigen::Index>(i), 0)));
      (ds.envs()[i] == 0 ? p : q)[z] += 1.0 / 50000;
    }
    for (std::size_t z = 0; z < s.size(); ++z) {
      EXPECT_NEAR(p[z], s.p_z[z], 0.01);
      EXPECT_NEAR(q[z], s.q_z[z], 0.01);
    }
  }
}

TEST(LatentTest, JsonRoundTrip) {
  const LatentSpec s = latent_spec_tv(0.3, 2.0, 0.1);
  const nlohmann::json j = s;
  const auto back = j.get<LatentSpec>();
  EXPECT_EQ(back.p_z, s.p_z);
  EXPECT_EQ(back.support, s.support);
  EXPECT_EQ(back.obs_noise, s.obs_noise);
}

}  // namespace
}  // namespace oodshift
