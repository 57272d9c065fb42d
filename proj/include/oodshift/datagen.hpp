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

// Synthetic two-environment generators.
//
// Colored digits: a binary label (digit < 5 vs >= 5, flipped with probability
// `label_noise`) and a red/green color that disagrees with that label with
// probability rho_e in environment e. An optional blue component with
// environment-specific truncated-normal intensity moves ink from the active
// color channel into the blue channel.
//
// Latent specs: explicit discrete distributions p (env 0) and q (env 1) over a
// small support with label conditionals, for which the shift quantities are
// known exactly.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "oodshift/dataset.hpp"
#include "oodshift/error.hpp"
#include "oodshift/rng.hpp"

namespace oodshift {

struct ColoredSpec {
  double rho_tr = 0.1;  ///< P(color disagrees with label), env 0
  double rho_te = 0.9;  ///< P(color disagrees with label), env 1
  double mu_tr = 0.0;   ///< mean blue intensity, env 0
  double mu_te = 0.0;
  double sigma_tr = 0.0;  ///< blue intensity std before truncation to [0,1]
  double sigma_te = 0.0;
  double label_noise = 0.25;
  int n_per_env = 2000;
  bool use_real_mnist = false;
  int image_side = 14;

  int channels() const noexcept { return 3; }
  int pixels() const noexcept { return image_side * image_side; }
  int width() const noexcept { return channels() * pixels(); }

  void validate() const {
    auto unit = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InvalidArgument(std::string(name) + " must be in [0,1] (got " +
                              std::to_string(v) + ")");
      }
    };
    unit(rho_tr, "rho_tr");
    unit(rho_te, "rho_te");
    unit(mu_tr, "mu_tr");
    unit(mu_te, "mu_te");
    unit(label_noise, "label_noise");
    if (!(sigma_tr >= 0.0) || !std::isfinite(sigma_tr)) {
      throw InvalidArgument("sigma_tr must be >= 0 (got " + std::to_string(sigma_tr) + ")");
    }
    if (!(sigma_te >= 0.0) || !std::isfinite(sigma_te)) {
      throw InvalidArgument("sigma_te must be >= 0 (got " + std::to_string(sigma_te) + ")");
    }
    if (n_per_env < 2) {
      throw InvalidArgument("n_per_env must be >= 2 (got " + std::to_string(n_per_env) + ")");
    }
    if (image_side < 1) {
      throw InvalidArgument("image_side must be >= 1 (got " + std::to_string(image_side) + ")");
    }
  }

  bool operator==(const ColoredSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ColoredSpec& s) {
  j = nlohmann::json{{"rho_tr", s.rho_tr},           {"rho_te", s.rho_te},
                     {"mu_tr", s.mu_tr},             {"mu_te", s.mu_te},
                     {"sigma_tr", s.sigma_tr},       {"sigma_te", s.sigma_te},
                     {"label_noise", s.label_noise}, {"n_per_env", s.n_per_env},
                     {"use_real_mnist", s.use_real_mnist}, {"image_side", s.image_side}};
}

/// Missing fields keep their defaults; the result is validated.
inline void from_json(const nlohmann::json& j, ColoredSpec& s) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) {
      try {
        j.at(key).get_to(field);
      } catch (const nlohmann::json::exception&) {
        throw InvalidArgument(std::string(key) + " has the wrong type");
      }
    }
  };
  get("rho_tr", s.rho_tr);
  get("rho_te", s.rho_te);
  get("mu_tr", s.mu_tr);
  get("mu_te", s.mu_te);
  get("sigma_tr", s.sigma_tr);
  get("sigma_te", s.sigma_te);
  get("label_noise", s.label_noise);
  get("n_per_env", s.n_per_env);
  get("use_real_mnist", s.use_real_mnist);
  get("image_side", s.image_side);
  s.validate();
}

/// The single-training-environment configuration commonly used for colored
/// digits: rho_tr = 0.1, rho_te = 0.9, 25% label noise, no blue.
inline ColoredSpec irm_colored_default() {
  ColoredSpec s;
  s.rho_tr = 0.1;
  s.rho_te = 0.9;
  s.label_noise = 0.25;
  s.mu_tr = s.mu_te = 0.0;
  s.sigma_tr = s.sigma_te = 0.0;
  return s;
}

/// Red/green-only spec for the rho sweeps (no label noise).
inline ColoredSpec colored_rho_preset(double rho_tr, double rho_te) {
  ColoredSpec s;
  s.rho_tr = rho_tr;
  s.rho_te = rho_te;
  s.label_noise = 0.0;
  s.validate();
  return s;
}

/// Blue in the test environment only: mu_tr = 0, mu_te = 1, sigma = 0.1,
/// rho_tr = rho_te = 0.1.
inline ColoredSpec colored_blue_preset() {
  ColoredSpec s = irm_colored_default();
  s.rho_te = 0.1;
  s.mu_tr = 0.0;
  s.mu_te = 1.0;
  s.sigma_tr = s.sigma_te = 0.1;
  return s;
}

/// Images with digit classes 0-9 that the colored generator draws from.
class DigitBank {
 public:
  /// Fixed per-class prototypes plus per-draw N(0, 0.1^2) pixel noise clipped
  /// to [0,1]. The prototypes depend only on `side`.
  static DigitBank synthetic(int side) {
    DigitBank bank;
    bank.side_ = side;
    bank.synthetic_ = true;
    const auto pixels = static_cast<Eigen::Index>(side) * side;
    bank.images_.resize(10, pixels);
    Rng proto(0x5EED0D161705ULL + static_cast<std::uint64_t>(side));
    for (Eigen::Index d = 0; d < 10; ++d) {
      for (Eigen::Index p = 0; p < pixels; ++p) {
        bank.images_(d, p) = proto.bernoulli(0.35) ? proto.uniform(0.6, 1.0) : 0.0;
      }
      bank.digits_.push_back(static_cast<int>(d));
    }
    return bank;
  }

  /// Real digits (e.g. from load_idx), block-averaged down to `side` x `side`
  /// when the source side is a multiple of it, nearest-neighbour otherwise.
  static DigitBank from_images(const LabeledDataset& digits, int side) {
    if (digits.empty()) throw InvalidArgument("DigitBank: no digit images");
    const auto src_side = static_cast<int>(std::lround(std::sqrt(double(digits.dims()))));
    if (src_side * src_side != static_cast<int>(digits.dims())) {
      throw InvalidArgument("DigitBank: images are not square");
    }
    DigitBank bank;
    bank.side_ = side;
    bank.synthetic_ = false;
    const auto pixels = static_cast<Eigen::Index>(side) * side;
    bank.images_.resize(static_cast<Eigen::Index>(digits.rows()), pixels);
    const bool block = src_side % side == 0;
    const int factor = block ? src_side / side : 1;
    for (std::size_t i = 0; i < digits.rows(); ++i) {
      const auto src = digits.features().row(static_cast<Eigen::Index>(i));
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
          double v = 0.0;
          if (block) {
            for (int dr = 0; dr < factor; ++dr)
              for (int dc = 0; dc < factor; ++dc)
                v += src((r * factor + dr) * src_side + c * factor + dc);
            v /= factor * factor;
          } else {
            const int sr = std::min(src_side - 1, r * src_side / side);
            const int sc = std::min(src_side - 1, c * src_side / side);
            v = src(sr * src_side + sc);
          }
          bank.images_(static_cast<Eigen::Index>(i), r * side + c) = v;
        }
      }
      const int digit = digits.labels()[i];
      if (digit > 9) throw InvalidArgument("DigitBank: digit label > 9");
      bank.digits_.push_back(digit);
    }
    return bank;
  }

  int side() const noexcept { return side_; }

  /// Draw a digit class and its grayscale image.
  int draw(Rng& rng, RowVector& image) const {
    if (synthetic_) {
      const auto d = static_cast<Eigen::Index>(rng.uniform_int(10));
      image = images_.row(d);
      for (Eigen::Index p = 0; p < image.size(); ++p) {
        image(p) = std::clamp(image(p) + rng.normal(0.0, 0.1), 0.0, 1.0);
      }
      return static_cast<int>(d);
    }
    const auto i = rng.uniform_int(digits_.size());
    image = images_.row(static_cast<Eigen::Index>(i));
    return digits_[i];
  }

 private:
  DigitBank() = default;

  Matrix images_;
  std::vector<int> digits_;
  int side_ = 0;
  bool synthetic_ = true;
};

/// Normal(mu, sigma) truncated to [0,1] by rejection; sigma == 0 yields mu.
inline double truncated_normal_unit(double mu, double sigma, Rng& rng) {
  if (sigma == 0.0) return mu;
  for (;;) {
    const double v = rng.normal(mu, sigma);
    if (v >= 0.0 && v <= 1.0) return v;
  }
}

/// Per-row generation metadata, for tests and diagnostics.
struct ColoredSample {
  LabeledDataset data;
  std::vector<int> digits;
  std::vector<int> colors;  ///< 0 = red, 1 = green
  std::vector<double> blue;
};

/// Rows [0, n) are env 0, rows [n, 2n) env 1. Features are three flattened
/// channels (red, green, blue), each side*side pixels.
inline ColoredSample gen_colored_with_metadata(const ColoredSpec& spec, const DigitBank& bank,
                                               Rng& rng) {
  spec.validate();
  if (bank.side() != spec.image_side) {
    throw InvalidArgument("digit bank side does not match image_side");
  }
  const auto n = static_cast<std::size_t>(spec.n_per_env);
  const Eigen::Index pixels = spec.pixels();
  ColoredSample out;
  Matrix f = Matrix::Zero(static_cast<Eigen::Index>(2 * n), spec.width());
  std::vector<int> labels(2 * n), envs(2 * n);
  out.digits.resize(2 * n);
  out.colors.resize(2 * n);
  out.blue.resize(2 * n);

  RowVector image;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const int env = i < n ? kTrainEnv : kTestEnv;
    const double rho = env == kTrainEnv ? spec.rho_tr : spec.rho_te;
    const double mu = env == kTrainEnv ? spec.mu_tr : spec.mu_te;
    const double sigma = env == kTrainEnv ? spec.sigma_tr : spec.sigma_te;

    const int digit = bank.draw(rng, image);
    int label = digit < 5 ? 0 : 1;
    if (rng.bernoulli(spec.label_noise)) label = 1 - label;
    int color = label;
    if (rng.bernoulli(rho)) color = 1 - color;
    const double b = truncated_normal_unit(mu, sigma, rng);

    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index p = 0; p < pixels; ++p) {
      const double ink = image(p);
      const double moved = std::min(ink, b);  // ink that turns blue
      f(row, color * pixels + p) = ink - moved;
      f(row, 2 * pixels + p) = moved;
    }
    labels[i] = label;
    envs[i] = env;
    out.digits[i] = digit;
    out.colors[i] = color;
    out.blue[i] = b;
  }
  out.data = LabeledDataset(std::move(f), std::move(labels), std::move(envs), 2);
  return out;
}

inline LabeledDataset gen_colored(const ColoredSpec& spec, const DigitBank& bank, Rng& rng) {
  return gen_colored_with_metadata(spec, bank, rng).data;
}

/// Synthetic-digit overload. Throws if the spec asks for real digits.
inline LabeledDataset gen_colored(const ColoredSpec& spec, Rng& rng) {
  if (spec.use_real_mnist) {
    throw InvalidArgument("use_real_mnist is set but no IDX digit images were provided");
  }
  return gen_colored(spec, DigitBank::synthetic(spec.image_side), rng);
}

/// Explicit discrete two-environment distribution over latent points.
struct LatentSpec {
  std::vector<std::vector<double>> support;  ///< coordinates of each latent point
  std::vector<double> p_z;
  std::vector<double> q_z;
  std::vector<std::vector<double>> p_y_given_z;  ///< |support| x n_classes
  std::vector<std::vector<double>> q_y_given_z;
  double obs_noise = 0.0;  ///< std of additive Gaussian noise on emitted features

  std::size_t size() const noexcept { return support.size(); }
  std::size_t n_classes() const noexcept {
    return p_y_given_z.empty() ? 0 : p_y_given_z.front().size();
  }
  std::size_t dims() const noexcept { return support.empty() ? 0 : support.front().size(); }

  /// Checks shapes, normalization (1e-12) and equal class marginals (1e-12).
  void validate() const {
    constexpr double tol = 1e-12;
    const std::size_t k = support.size();
    if (k == 0) throw InvalidArgument("LatentSpec: empty support");
    if (p_z.size() != k || q_z.size() != k || p_y_given_z.size() != k ||
        q_y_given_z.size() != k) {
      throw InvalidArgument("LatentSpec: table sizes do not match the support");
    }
    const std::size_t d = support.front().size();
    if (d == 0) throw InvalidArgument("LatentSpec: zero-dimensional support points");
    for (const auto& z : support) {
      if (z.size() != d) throw InvalidArgument("LatentSpec: ragged support coordinates");
    }
    const std::size_t c = p_y_given_z.front().size();
    if (c == 0) throw InvalidArgument("LatentSpec: no classes");
    auto check_dist = [&](const std::vector<double>& v, const std::string& name) {
      double s = 0.0;
      for (double x : v) {
        if (!(x >= 0.0)) throw InvalidArgument("LatentSpec: " + name + " has a negative entry");
        s += x;
      }
      if (std::abs(s - 1.0) > tol) {
        throw InvalidArgument("LatentSpec: " + name + " does not sum to 1");
      }
    };
    check_dist(p_z, "p_z");
    check_dist(q_z, "q_z");
    for (std::size_t i = 0; i < k; ++i) {
      if (p_y_given_z[i].size() != c || q_y_given_z[i].size() != c) {
        throw InvalidArgument("LatentSpec: ragged conditional table");
      }
      check_dist(p_y_given_z[i], "p(y|z) row " + std::to_string(i));
      check_dist(q_y_given_z[i], "q(y|z) row " + std::to_string(i));
    }
    for (std::size_t y = 0; y < c; ++y) {
      double py = 0.0, qy = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        py += p_z[i] * p_y_given_z[i][y];
        qy += q_z[i] * q_y_given_z[i][y];
      }
      if (std::abs(py - qy) > tol) {
        throw InvalidArgument("LatentSpec: class marginals differ for y=" + std::to_string(y) +
                              " (label shift)");
      }
    }
    if (!(obs_noise >= 0.0)) throw InvalidArgument("LatentSpec: obs_noise must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const LatentSpec& s) {
  j = nlohmann::json{{"support", s.support},         {"p_z", s.p_z},
                     {"q_z", s.q_z},                 {"p_y_given_z", s.p_y_given_z},
                     {"q_y_given_z", s.q_y_given_z}, {"obs_noise", s.obs_noise}};
}

inline void from_json(const nlohmann::json& j, LatentSpec& s) {
  try {
    j.at("support").get_to(s.support);
    j.at("p_z").get_to(s.p_z);
    j.at("q_z").get_to(s.q_z);
    j.at("p_y_given_z").get_to(s.p_y_given_z);
    j.at("q_y_given_z").get_to(s.q_y_given_z);
    s.obs_noise = j.value("obs_noise", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("LatentSpec JSON: ") + e.what());
  }
  s.validate();
}

/// Three latent points a (shared), b (env 0 only), c (env 1 only) at
/// coordinates 0, -1, +1. p(y=0|a) = 0.9 against q(y=0|a) = 0.1; the
/// conditionals on b and c restore equal class marginals. Exact shifts are
/// D_div = 0.5 and D_cor = 0.4.
inline LatentSpec latent_spec_a(double obs_noise = 0.0) {
  LatentSpec s;
  s.support = {{0.0}, {-1.0}, {1.0}};
  s.p_z = {0.5, 0.5, 0.0};
  s.q_z = {0.5, 0.0, 0.5};
  s.p_y_given_z = {{0.9, 0.1}, {0.1, 0.9}, {0.5, 0.5}};
  s.q_y_given_z = {{0.1, 0.9}, {0.5, 0.5}, {0.9, 0.1}};
  s.obs_noise = obs_noise;
  s.validate();
  return s;
}

/// Two latent points `spacing` apart with p = (1+tv, 1-tv)/2, q reversed and
/// labels independent of z, so the total variation between the
/// environments is exactly `tv`.
inline LatentSpec latent_spec_tv(double tv, double spacing = 1.0, double obs_noise = 0.0) {
  if (!(tv >= 0.0 && tv <= 1.0)) throw InvalidArgument("tv must be in [0,1]");
  LatentSpec s;
  s.support = {{0.0}, {spacing}};
  s.p_z = {0.5 + 0.5 * tv, 0.5 - 0.5 * tv};
  s.q_z = {0.5 - 0.5 * tv, 0.5 + 0.5 * tv};
  s.p_y_given_z = {{0.5, 0.5}, {0.5, 0.5}};
  s.q_y_given_z = s.p_y_given_z;
  s.obs_noise = obs_noise;
  s.validate();
  return s;
}

/// Both environments drawn from the same distribution.
inline LatentSpec latent_spec_identical(double obs_noise = 0.0) {
  return latent_spec_tv(0.0, 1.0, obs_noise);
}

/// Random valid spec: random p_z, q_z (each atom zeroed with probability
/// `zero_prob`, at least one nonzero), random p(y|z), and q(y|z) fitted by
/// iterative proportional fitting so the class marginals match p's.
inline LatentSpec random_latent_spec(Rng& rng, std::size_t support_size, std::size_t n_classes,
                                     double zero_prob = 0.3) {
  if (support_size == 0 || n_classes == 0) throw InvalidArgument("random_latent_spec: empty");
  LatentSpec s;
  auto random_dist = [&](std::size_t k, double zp) {
    std::vector<double> v(k);
    double sum = 0.0;
    for (auto& x : v) {
      x = rng.bernoulli(zp) ? 0.0 : -std::log(1.0 - rng.uniform());
      sum += x;
    }
    if (sum == 0.0) {
      v[rng.uniform_int(k)] = 1.0;
      sum = 1.0;
    }
    for (auto& x : v) x /= sum;
    // Push the rounding residue into the largest entry.
    const double residue = 1.0 - std::accumulate(v.begin(), v.end(), 0.0);
    *std::max_element(v.begin(), v.end()) += residue;
    return v;
  };
  for (std::size_t i = 0; i < support_size; ++i) s.support.push_back({double(i)});
  s.p_z = random_dist(support_size, zero_prob);
  s.q_z = random_dist(support_size, zero_prob);
  for (std::size_t i = 0; i < support_size; ++i) {
    s.p_y_given_z.push_back(random_dist(n_classes, 0.0));
  }
  std::vector<double> target(n_classes, 0.0);
  for (std::size_t i = 0; i < support_size; ++i)
    for (std::size_t y = 0; y < n_classes; ++y) target[y] += s.p_z[i] * s.p_y_given_z[i][y];

  // IPF on a random positive seed matrix: rows -> q_z, columns -> target.
  std::vector<std::vector<double>> joint(support_size, std::vector<double>(n_classes));
  for (auto& row : joint)
    for (auto& x : row) x = 0.1 + rng.uniform();
  for (int it = 0; it < 10000; ++it) {
    for (std::size_t i = 0; i < support_size; ++i) {
      double rs = std::accumulate(joint[i].begin(), joint[i].end(), 0.0);
      for (auto& x : joint[i]) x = rs > 0.0 ? x * s.q_z[i] / rs : 0.0;
    }
    double max_err = 0.0;
    for (std::size_t y = 0; y < n_classes; ++y) {
      double cs = 0.0;
      for (std::size_t i = 0; i < support_size; ++i) cs += joint[i][y];
      for (std::size_t i = 0; i < support_size; ++i) joint[i][y] *= target[y] / cs;
      max_err = std::max(max_err, std::abs(cs - target[y]));
    }
    if (max_err < 1e-15) break;
  }
  for (std::size_t i = 0; i < support_size; ++i) {
    std::vector<double> row(n_classes, 1.0 / double(n_classes));
    const double rs = std::accumulate(joint[i].begin(), joint[i].end(), 0.0);
    if (s.q_z[i] > 0.0 && rs > 0.0) {
      for (std::size_t y = 0; y < n_classes; ++y) row[y] = joint[i][y] / rs;
    }
    s.q_y_given_z.push_back(std::move(row));
  }
  return s;
}

/// Env 0 rows are drawn from p, env 1 rows from q; features are the latent
/// coordinates plus N(0, obs_noise^2) per coordinate.
inline LabeledDataset gen_latent(const LatentSpec& spec, int n_per_env, Rng& rng) {
  spec.validate();
  if (n_per_env < 1) throw InvalidArgument("gen_latent: n_per_env must be >= 1");
  const auto n = static_cast<std::size_t>(n_per_env);
  const auto d = static_cast<Eigen::Index>(spec.dims());
  Matrix f(static_cast<Eigen::Index>(2 * n), d);
  std::vector<int> labels(2 * n), envs(2 * n);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const bool train = i < n;
    const auto& pz = train ? spec.p_z : spec.q_z;
    const auto& cond = train ? spec.p_y_given_z : spec.q_y_given_z;
    const std::size_t z = rng.categorical(pz);
    const std::size_t y = rng.categorical(cond[z]);
    for (Eigen::Index j = 0; j < d; ++j) {
      double v = spec.support[z][static_cast<std::size_t>(j)];
      if (spec.obs_noise > 0.0) v += rng.normal(0.0, spec.obs_noise);
      f(static_cast<Eigen::Index>(i), j) = v;
    }
    labels[i] = static_cast<int>(y);
    envs[i] = train ? kTrainEnv : kTestEnv;
  }
  return LabeledDataset(std::move(f), std::move(labels), std::move(envs),
                        static_cast<int>(spec.n_classes()));
}

}  // namespace oodshift
