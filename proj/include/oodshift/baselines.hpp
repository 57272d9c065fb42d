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

// Two-sample baseline metrics (MMD, EMD, NI) and the comparison table that
// sets them beside the diversity/correlation estimates.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "oodshift/datagen.hpp"
#include "oodshift/dataset.hpp"
#include "oodshift/discriminator.hpp"
#include "oodshift/error.hpp"
#include "oodshift/estimator.hpp"
#include "oodshift/rng.hpp"

namespace oodshift {

struct Assignment {
  double cost = 0.0;
  std::vector<std::size_t> col_of_row;
};

/// Exact minimum-cost perfect matching on a square cost matrix
/// (Hungarian method with potentials, O(n^3)).
inline Assignment min_cost_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw InvalidArgument("assignment needs a square cost matrix");
  const auto n = static_cast<std::size_t>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; p[j] is the row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.col_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.col_of_row[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) {
    out.cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out.col_of_row[i]));
  }
  return out;
}

namespace detail {

inline bool lex_less(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

inline bool same_points(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

inline Matrix subsample(const Matrix& f, Eigen::Index m, Rng& rng) {
  if (m >= f.rows()) return f;
  const auto perm = rng.permutation(static_cast<std::size_t>(f.rows()));
  Matrix out(m, f.cols());
  for (Eigen::Index i = 0; i < m; ++i) out.row(i) = f.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
  return out;
}

/// Subsamples of both sets, independent of argument order. Identical inputs
/// get identical subsamples.
inline std::pair<Matrix, Matrix> paired_subsamples(const Matrix& a, const Matrix& b, Eigen::Index ma,
                                                   Eigen::Index mb, Rng& rng) {
  Rng sub(rng.next());
  if (same_points(a, b)) {
    Matrix s = subsample(a, std::min(ma, mb), sub);
    return {s, s};
  }
  if (lex_less(b, a)) {
    Matrix sb = subsample(b, mb, sub);
    Matrix sa = subsample(a, ma, sub);
    return {sa, sb};
  }
  Matrix sa = subsample(a, ma, sub);
  Matrix sb = subsample(b, mb, sub);
  return {sa, sb};
}

/// Squared Euclidean distances from explicit differences, so coincident
/// points give exactly 0.
inline Matrix sq_distances(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  }
  return d;
}

}  // namespace detail

/// sqrt(max(0, unbiased MMD^2)) with a Gaussian kernel whose bandwidth is
/// the median pairwise distance of the pooled subsample.
inline double mmd(const Matrix& a, const Matrix& b, Eigen::Index n_sub, Rng& rng) {
  if (n_sub < 2) throw InvalidArgument("mmd: n_sub must be >= 2");
  if (a.rows() < 2 || b.rows() < 2) throw InvalidArgument("mmd: each set needs at least 2 rows");
  if (a.cols() != b.cols()) throw InvalidArgument("mmd: dimension mismatch");
  auto [x, y] = detail::paired_subsamples(a, b, std::min(n_sub, a.rows()), std::min(n_sub, b.rows()), rng);
  // Canonical order so that mmd(a, b) and mmd(b, a) perform the same arithmetic.
  if (detail::lex_less(y, x)) std::swap(x, y);
  if (detail::same_points(x, y)) return 0.0;
  const Eigen::Index m = x.rows(), n = y.rows();

  Matrix pooled(m + n, x.cols());
  pooled << x, y;
  const Matrix d2 = detail::sq_distances(pooled, pooled);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>((m + n) * (m + n - 1) / 2));
  for (Eigen::Index i = 0; i < m + n; ++i) {
    for (Eigen::Index j = i + 1; j < m + n; ++j) dists.push_back(std::sqrt(d2(i, j)));
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double sigma = *mid;
  if (!(sigma > 0.0)) sigma = 1.0;
  const Matrix k = (-d2.array() / (2.0 * sigma * sigma)).exp().matrix();

  const double kxx = (k.topLeftCorner(m, m).sum() - double(m)) / double(m * (m - 1));
  const double kyy = (k.bottomRightCorner(n, n).sum() - double(n)) / double(n * (n - 1));
  const double kxy = k.topRightCorner(m, n).sum() / double(m * n);
  const double mmd2 = kxx + kyy - 2.0 * kxy;
  return std::sqrt(std::max(0.0, mmd2));
}

/// Exact 1-Wasserstein distance between equal-size subsamples (size
/// min(n_sub, |a|, |b|, 512)) under Euclidean cost, divided by sqrt(d).
inline double emd(const Matrix& a, const Matrix& b, Eigen::Index n_sub, Rng& rng) {
  if (n_sub < 1) throw InvalidArgument("emd: n_sub must be >= 1");
  if (a.rows() < 1 || b.rows() < 1) throw InvalidArgument("emd: empty point set");
  if (a.cols() != b.cols()) throw InvalidArgument("emd: dimension mismatch");
  constexpr Eigen::Index kCap = 512;
  const Eigen::Index m = std::min({n_sub, a.rows(), b.rows(), kCap});
  auto [x, y] = detail::paired_subsamples(a, b, m, m, rng);
  if (detail::lex_less(y, x)) std::swap(x, y);
  const Matrix cost = detail::sq_distances(x, y).cwiseSqrt();
  const double total = min_cost_assignment(cost).cost;
  return total / double(m) / std::sqrt(double(a.cols()));
}

/// Class-conditional standardized mean difference: for each class y,
/// ||(mean_tr,y - mean_te,y) / sigma_pool||_2, averaged over classes.
/// sigma_pool is the population std of all pooled rows; dimensions where
/// it is zero carry no difference and are skipped.
inline double ni(const LabeledDataset& ds) {
  if (ds.empty()) throw InvalidArgument("ni: empty dataset");
  const auto counts = ds.cell_counts();
  for (int y = 0; y < ds.n_classes(); ++y) {
    const auto k = static_cast<std::size_t>(y);
    if (counts[0][k] == 0 || counts[1][k] == 0) {
      throw InvalidArgument("ni: class " + std::to_string(y) + " missing in an environment");
    }
  }
  const Matrix& f = ds.features();
  const RowVector mean = f.colwise().mean();
  const RowVector sigma = ((f.rowwise() - mean).array().square().colwise().sum() / double(f.rows())).sqrt().matrix();

  const auto c = static_cast<std::size_t>(ds.n_classes());
  std::vector<RowVector> sums(2 * c, RowVector::Zero(f.cols()));
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    sums[static_cast<std::size_t>(ds.envs()[i]) * c + static_cast<std::size_t>(ds.labels()[i])] +=
        f.row(static_cast<Eigen::Index>(i));
  }
  double total = 0.0;
  for (std::size_t y = 0; y < c; ++y) {
    const RowVector diff = sums[y] / double(counts[0][y]) - sums[c + y] / double(counts[1][y]);
    double sq = 0.0;
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      if (sigma(j) > 0.0) sq += (diff(j) / sigma(j)) * (diff(j) / sigma(j));
    }
    total += std::sqrt(sq);
  }
  return total / double(c);
}

struct MetricReport {
  MeanStderr emd;
  MeanStderr mmd;
  MeanStderr ni;
  Eigen::Index n_sub_emd = 0;
  Eigen::Index n_sub_mmd = 0;
};

struct CompareOptions {
  int n_runs = 5;
  Eigen::Index n_sub_mmd = 1000;
  Eigen::Index n_sub_emd = 512;
  int threads = 1;
};

struct CompareRow {
  std::string label;
  ColoredSpec spec;
  MetricReport metrics;
  ShiftEstimate shift;
};

struct Verdict {
  std::string metric;
  bool correlation_sensitive = false;
  bool diversity_sensitive = false;
};

struct CompareTable {
  std::vector<CompareRow> rows;
  std::vector<Verdict> verdicts;
};

/// A metric reacts to a family of rows when its spread across them exceeds
/// both 0.05 and five times the largest standard error involved.
inline std::vector<Verdict> compare_verdicts(const std::vector<CompareRow>& rows) {
  using Getter = MeanStderr (*)(const CompareRow&);
  const std::vector<std::pair<std::string, Getter>> columns = {
      {"emd", [](const CompareRow& r) { return r.metrics.emd; }},
      {"mmd", [](const CompareRow& r) { return r.metrics.mmd; }},
      {"ni", [](const CompareRow& r) { return r.metrics.ni; }},
      {"d_div", [](const CompareRow& r) { return r.shift.d_div; }},
      {"d_cor", [](const CompareRow& r) { return r.shift.d_cor; }},
  };
  auto is_blue = [](const CompareRow& r) { return r.spec.mu_tr != r.spec.mu_te; };
  std::vector<Verdict> out;
  for (const auto& [name, get] : columns) {
    Verdict v{name};
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, se = 0.0, rho_mean = 0.0;
    int n_rho = 0;
    for (const auto& r : rows) {
      if (is_blue(r)) continue;
      const auto ms = get(r);
      lo = std::min(lo, ms.mean);
      hi = std::max(hi, ms.mean);
      se = std::max(se, ms.stderr_);
      rho_mean += ms.mean;
      ++n_rho;
    }
    if (n_rho >= 2) v.correlation_sensitive = hi - lo > std::max(0.05, 5.0 * se);
    if (n_rho > 0) {
      rho_mean /= n_rho;
      for (const auto& r : rows) {
        if (!is_blue(r)) continue;
        const auto ms = get(r);
        const double gap = std::abs(ms.mean - rho_mean);
        v.diversity_sensitive = v.diversity_sensitive || gap > std::max(0.05, 5.0 * std::max(se, ms.stderr_));
      }
    }
    out.push_back(v);
  }
  return out;
}

/// One row per spec. Every run regenerates the data with its own seed, then
/// computes the three baselines on raw features and one discriminator-based
/// shift estimate. Row i run r uses seed derive_seed(derive_seed(seed, i), r).
inline CompareTable compare_table(const std::vector<std::pair<std::string, ColoredSpec>>& specs,
                                  const MlpConfig& mlp_cfg, EstimatorConfig est_cfg, std::uint64_t seed,
                                  const CompareOptions& opts = {}) {
  if (opts.n_runs < 1) throw InvalidArgument("n_runs must be >= 1");
  for (const auto& [label, spec] : specs) spec.validate();
  est_cfg.n_runs = 1;
  est_cfg.validate();
  const auto n_rows = specs.size();
  const auto n_runs = static_cast<std::size_t>(opts.n_runs);
  struct Unit {
    double emd = 0, mmd = 0, ni = 0;
    RunRecord run;
    std::vector<std::string> warnings;
  };
  std::vector<Unit> units(n_rows * n_runs);
  parallel_for(units.size(), opts.threads, [&](std::size_t u) {
    const std::size_t i = u / n_runs, r = u % n_runs;
    const std::uint64_t s = derive_seed(derive_seed(seed, i), r);
    Rng rng(s);
    const LabeledDataset ds = gen_colored(specs[i].second, rng);
    const auto tr = ds.subset(ds.rows_in_env(kTrainEnv)).features();
    const auto te = ds.subset(ds.rows_in_env(kTestEnv)).features();
    units[u].mmd = mmd(tr, te, opts.n_sub_mmd, rng);
    units[u].emd = emd(tr, te, opts.n_sub_emd, rng);
    units[u].ni = ni(ds);
    const ShiftEstimate est = estimate_pipeline(ds, mlp_cfg, est_cfg, derive_seed(s, 1), 1);
    units[u].run = est.per_run.front();
    units[u].warnings = est.warnings;
  });

  CompareTable table;
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::vector<double> e, m, n;
    std::vector<RunRecord> runs;
    std::vector<std::string> warnings;
    for (std::size_t r = 0; r < n_runs; ++r) {
      const Unit& unit = units[i * n_runs + r];
      e.push_back(unit.emd);
      m.push_back(unit.mmd);
      n.push_back(unit.ni);
      runs.push_back(unit.run);
      warnings.insert(warnings.end(), unit.warnings.begin(), unit.warnings.end());
    }
    CompareRow row{specs[i].first, specs[i].second, {}, aggregate(std::move(runs), std::move(warnings))};
    row.metrics = {mean_stderr(e), mean_stderr(m), mean_stderr(n), opts.n_sub_emd, opts.n_sub_mmd};
    table.rows.push_back(std::move(row));
  }
  table.verdicts = compare_verdicts(table.rows);
  return table;
}

/// The six default rows: rho_te in {0.9, 0.7, 0.5, 0.3, 0.1} with rho_tr =
/// 0.1, then the blue-shifted variant.
inline std::vector<std::pair<std::string, ColoredSpec>> default_compare_specs() {
  std::vector<std::pair<std::string, ColoredSpec>> out;
  for (double rho : {0.9, 0.7, 0.5, 0.3, 0.1}) {
    ColoredSpec s = irm_colored_default();
    s.rho_te = rho;
    std::ostringstream label;
    label << "rho_te=" << rho;
    out.emplace_back(label.str(), s);
  }
  out.emplace_back("blue", colored_blue_preset());
  return out;
}

inline std::string compare_csv(const CompareTable& table) {
  std::string out =
      "label,rho_tr,rho_te,mu_tr,mu_te,sigma_tr,sigma_te,emd,emd_se,mmd,mmd_se,ni,ni_se,"
      "d_div,d_div_se,d_cor,d_cor_se\n";
  for (const auto& r : table.rows) {
    out += r.label;
    for (double v : {r.spec.rho_tr, r.spec.rho_te, r.spec.mu_tr, r.spec.mu_te, r.spec.sigma_tr, r.spec.sigma_te,
                     r.metrics.emd.mean, r.metrics.emd.stderr_, r.metrics.mmd.mean, r.metrics.mmd.stderr_,
                     r.metrics.ni.mean, r.metrics.ni.stderr_, r.shift.d_div.mean, r.shift.d_div.stderr_,
                     r.shift.d_cor.mean, r.shift.d_cor.stderr_}) {
      out += ',';
      detail::append_double(out, v);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json verdicts_json(const CompareTable& table) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : table.verdicts) {
    out.push_back({{"metric", v.metric},
                   {"correlation", v.correlation_sensitive ? "sensitive" : "insensitive"},
                   {"diversity", v.diversity_sensitive ? "sensitive" : "insensitive"}});
  }
  return out;
}

}  // namespace oodshift
