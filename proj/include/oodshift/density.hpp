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

// Feature standardization and product-Gaussian kernel density estimates.
// All densities are evaluated in log space.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "oodshift/dataset.hpp"
#include "oodshift/error.hpp"
#include "oodshift/rng.hpp"

namespace oodshift {

/// Per-dimension affine map to zero mean and unit (population) variance.
struct Standardizer {
  static constexpr double kStdFloor = 1e-8;

  RowVector mean;
  RowVector std;

  Matrix apply(const Matrix& f) const {
    check_width(f);
    return ((f.rowwise() - mean).array().rowwise() / std.array()).matrix();
  }

  Matrix invert(const Matrix& f) const {
    check_width(f);
    return ((f.array().rowwise() * std.array()).matrix().rowwise() + mean);
  }

 private:
  void check_width(const Matrix& f) const {
    if (f.cols() != mean.size()) {
      throw InvalidArgument("dimension mismatch: standardizer fit on " + std::to_string(mean.size()) +
                            " columns, got " + std::to_string(f.cols()));
    }
  }
};

inline Standardizer fit_standardizer(const Matrix& f) {
  if (f.rows() < 2) throw InvalidArgument("fit_standardizer needs at least 2 rows");
  Standardizer s;
  s.mean = f.colwise().mean();
  const Matrix centered = f.rowwise() - s.mean;
  s.std = (centered.array().square().colwise().sum() / double(f.rows())).sqrt().matrix();
  s.std = s.std.cwiseMax(Standardizer::kStdFloor);
  return s;
}

/// Log-sum-exp of a row. Returns -inf for an all -inf row.
template <typename Row>
double log_sum_exp(const Row& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Product-Gaussian KDE: mean over fit points of N(z; x_i, diag(h^2)).
class KdeModel {
 public:
  static constexpr double kBandwidthFloor = 1e-6;

  KdeModel() = default;

  /// Explicit points and bandwidths (each bandwidth floored at 1e-6).
  KdeModel(Matrix points, RowVector bandwidth) : points_(std::move(points)), bw_(std::move(bandwidth)) {
    if (points_.rows() < 1) throw InvalidArgument("KdeModel needs at least one point");
    if (bw_.size() != points_.cols()) throw InvalidArgument("KdeModel: bandwidth size mismatch");
    bw_ = bw_.cwiseMax(kBandwidthFloor);
    scaled_ = (points_.array().rowwise() / bw_.array()).matrix();
    scaled_sq_ = scaled_.rowwise().squaredNorm();
    const double k = double(points_.rows());
    const double m = double(points_.cols());
    log_norm_ = -std::log(k) - bw_.array().log().sum() - 0.5 * m * std::log(2.0 * std::numbers::pi);
  }

  const Matrix& points() const noexcept { return points_; }
  const RowVector& bandwidth() const noexcept { return bw_; }
  double log_norm_const() const noexcept { return log_norm_; }
  Eigen::Index dims() const noexcept { return points_.cols(); }
  Eigen::Index size() const noexcept { return points_.rows(); }

  /// log density at each row of `z`.
  Vector logpdf(const Matrix& z) const {
    if (z.cols() != dims()) {
      throw InvalidArgument("dimension mismatch: KDE has " + std::to_string(dims()) +
                            " dims, query has " + std::to_string(z.cols()));
    }
    Vector out(z.rows());
    constexpr Eigen::Index kChunk = 256;
    for (Eigen::Index start = 0; start < z.rows(); start += kChunk) {
      const Eigen::Index len = std::min(kChunk, z.rows() - start);
      const Matrix zs = (z.middleRows(start, len).array().rowwise() / bw_.array()).matrix();
      const Vector zs_sq = zs.rowwise().squaredNorm();
      // -0.5 |zs - xs|^2 for every (query, point) pair.
      Matrix e = zs * scaled_.transpose();
      e.array().colwise() -= 0.5 * zs_sq.array();
      e.array().rowwise() -= 0.5 * scaled_sq_.transpose().array();
      e = e.cwiseMin(0.0);
      for (Eigen::Index i = 0; i < len; ++i) out(start + i) = log_sum_exp(e.row(i)) + log_norm_;
    }
    return out;
  }

  double logpdf(const RowVector& z) const { return logpdf(Matrix(z))(0); }
  double pdf(const RowVector& z) const { return std::exp(logpdf(z)); }

  /// Exact draws from the mixture: a uniformly chosen fit point plus
  /// per-dimension Gaussian noise with the model's bandwidth.
  Matrix sample(Eigen::Index n, Rng& rng) const {
    if (n < 1) throw InvalidArgument("kde sample size must be >= 1");
    Matrix out(n, dims());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto src = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(size())));
      for (Eigen::Index j = 0; j < dims(); ++j) out(i, j) = points_(src, j) + bw_(j) * rng.normal();
    }
    return out;
  }

 private:
  Matrix points_;
  RowVector bw_;
  Matrix scaled_;
  Vector scaled_sq_;
  double log_norm_ = 0.0;
};

/// Scott's rule per dimension, h_j = scale * sigma_j * k^(-1/(m+4)), with
/// sigma_j the sample standard deviation of column j.
inline RowVector scott_bandwidth(const Matrix& f, double scale = 1.0) {
  if (f.rows() < 2) throw InvalidArgument("bandwidth selection needs at least 2 rows");
  const double k = double(f.rows());
  const double m = double(f.cols());
  const Matrix centered = f.rowwise() - f.colwise().mean();
  const RowVector sigma = (centered.array().square().colwise().sum() / (k - 1.0)).sqrt().matrix();
  return (scale * std::pow(k, -1.0 / (m + 4.0)) * sigma).cwiseMax(KdeModel::kBandwidthFloor);
}

inline KdeModel kde_fit(const Matrix& f, double bandwidth_scale = 1.0) {
  if (f.rows() < 2) throw InvalidArgument("kde_fit needs at least 2 rows (got " + std::to_string(f.rows()) + ")");
  if (!(bandwidth_scale > 0.0)) throw InvalidArgument("bandwidth_scale must be > 0");
  return KdeModel(f, scott_bandwidth(f, bandwidth_scale));
}

}  // namespace oodshift
