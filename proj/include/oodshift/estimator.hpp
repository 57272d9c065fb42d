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

// Diversity and correlation shift.
//
//   D_div = 1/2 * integral over S of |p(z) - q(z)|
//   D_cor = 1/2 * integral over T of sqrt(p(z) q(z)) * sum_y |p(y|z) - q(y|z)|
//
// where S = {z : p(z) q(z) = 0} and T is its complement. `oracle_shift`
// evaluates these exactly on a discrete LatentSpec; `estimate` approximates
// them from two feature samples with KDEs and importance sampling from the
// pooled density.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "oodshift/datagen.hpp"
#include "oodshift/dataset.hpp"
#include "oodshift/density.hpp"
#include "oodshift/discriminator.hpp"
#include "oodshift/error.hpp"
#include "oodshift/rng.hpp"

namespace oodshift {

/// How the KDE bandwidths are chosen (Scott's rule in every case).
enum class BandwidthRule {
  kPerModel,   ///< each KDE from its own fit set
  kPooled,     ///< one bandwidth from the pooled set, shared by all KDEs
  kWithinCell  ///< one bandwidth from the pooled within-(env, class) spread, shared by all KDEs
};

inline std::string to_string(BandwidthRule r) {
  switch (r) {
    case BandwidthRule::kPerModel: return "per-model";
    case BandwidthRule::kPooled: return "pooled";
    case BandwidthRule::kWithinCell: return "within-cell";
  }
  return "?";
}

inline BandwidthRule parse_bandwidth_rule(const std::string& s) {
  if (s == "per-model") return BandwidthRule::kPerModel;
  if (s == "pooled") return BandwidthRule::kPooled;
  if (s == "within-cell") return BandwidthRule::kWithinCell;
  throw InvalidArgument("unknown bandwidth rule '" + s + "' (per-model, pooled, within-cell)");
}

struct EstimatorConfig {
  int M = 10000;
  double eps_div = 1e-12;
  double eps_cor = 5e-4;
  int n_runs = 5;
  /// Multiplier on the Scott bandwidth of every KDE.
  double bandwidth_scale = 1.0;
  /// Draw a fresh batch of M samples for every class in the correlation
  /// term instead of reusing one batch across classes.
  bool per_class_resample = false;
  /// With a shared rule ŵ is exactly the mixture of p̂ and q̂.
  BandwidthRule bandwidth_rule = BandwidthRule::kWithinCell;

  void validate() const {
    if (M < 1) throw InvalidArgument("M must be >= 1");
    if (!(eps_div > 0.0 && eps_div < eps_cor)) {
      throw InvalidArgument("thresholds must satisfy 0 < eps_div < eps_cor");
    }
    if (n_runs < 1) throw InvalidArgument("n_runs must be >= 1");
    if (!(bandwidth_scale > 0.0)) throw InvalidArgument("bandwidth_scale must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const EstimatorConfig& c) {
  j = nlohmann::json{{"M", c.M},
                     {"eps_div", c.eps_div},
                     {"eps_cor", c.eps_cor},
                     {"n_runs", c.n_runs},
                     {"bandwidth_scale", c.bandwidth_scale},
                     {"per_class_resample", c.per_class_resample},
                     {"bandwidth_rule", to_string(c.bandwidth_rule)}};
}

inline void from_json(const nlohmann::json& j, EstimatorConfig& c) {
  try {
    c.M = j.value("M", c.M);
    c.eps_div = j.value("eps_div", c.eps_div);
    c.eps_cor = j.value("eps_cor", c.eps_cor);
    c.n_runs = j.value("n_runs", c.n_runs);
    c.bandwidth_scale = j.value("bandwidth_scale", c.bandwidth_scale);
    c.per_class_resample = j.value("per_class_resample", c.per_class_resample);
    if (j.contains("bandwidth_rule")) c.bandwidth_rule = parse_bandwidth_rule(j.at("bandwidth_rule").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("EstimatorConfig JSON: ") + e.what());
  }
  c.validate();
}

struct ShiftPair {
  double d_div = 0.0;
  double d_cor = 0.0;
};

/// Exact shifts of a discrete latent distribution.
inline ShiftPair oracle_shift(const LatentSpec& spec) {
  spec.validate();
  ShiftPair out;
  const std::size_t c = spec.n_classes();
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double p = spec.p_z[i];
    const double q = spec.q_z[i];
    if (p * q == 0.0) {
      out.d_div += std::abs(p - q);
    } else {
      double diff = 0.0;
      for (std::size_t y = 0; y < c; ++y) diff += std::abs(spec.p_y_given_z[i][y] - spec.q_y_given_z[i][y]);
      out.d_cor += std::sqrt(p * q) * diff;
    }
  }
  // Rounding in the tables can push a sum one ulp past 1.
  out.d_div = std::clamp(0.5 * out.d_div, 0.0, 1.0);
  out.d_cor = std::clamp(0.5 * out.d_cor, 0.0, 1.0);
  return out;
}

/// One run of the Monte Carlo estimator.
struct RunEstimate {
  double d_div = 0.0;
  double d_cor = 0.0;
  double frac_div = 0.0;  ///< share of draws counted toward D_div
  double frac_cor = 0.0;  ///< share of draws counted toward D_cor
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::vector<Eigen::Index>> rows_by_class(std::span<const int> labels, int n_classes) {
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw InvalidArgument("label out of range");
    out[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

inline Matrix take_rows(const Matrix& f, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), f.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = f.row(rows[i]);
  return out;
}

/// Warns when a label histogram deviates from uniform by more than 2%.
inline std::optional<std::string> prior_warning(const std::vector<std::vector<Eigen::Index>>& by_class,
                                                std::size_t n, const char* env) {
  const double uniform = 1.0 / double(by_class.size());
  for (std::size_t y = 0; y < by_class.size(); ++y) {
    const double share = double(by_class[y].size()) / double(n);
    if (std::abs(share - uniform) > 0.02) {
      return std::string("class prior in ") + env + " environment is not uniform (class " +
             std::to_string(y) + " share " + std::to_string(share) + ")";
    }
  }
  return std::nullopt;
}

/// Scott's rule with sigma_j the pooled within-cell standard deviation
/// (sum of within-cell squared deviations over n - #cells) and k the mean
/// cell size.
inline RowVector within_cell_bandwidth(const std::vector<Matrix>& cells, double scale) {
  RowVector ss = RowVector::Zero(cells.front().cols());
  double n = 0.0;
  for (const auto& c : cells) {
    ss += (c.rowwise() - c.colwise().mean()).array().square().colwise().sum().matrix();
    n += double(c.rows());
  }
  const double m = double(cells.front().cols());
  const double k = n / double(cells.size());
  const RowVector sigma = (ss / (n - double(cells.size()))).cwiseSqrt();
  return (scale * std::pow(k, -1.0 / (m + 4.0)) * sigma).cwiseMax(KdeModel::kBandwidthFloor);
}

}  // namespace detail

/// Monte Carlo estimate of (D_div, D_cor) from two feature samples.
///
/// The pooled features are standardized; ŵ is a KDE of the pooled set, p̂
/// and q̂ of each environment, p̂_y and q̂_y of each environment's class-y
/// subset. With z drawn from ŵ:
///
///   D_div ~ 1/(2M) sum_{p̂<eps_div or q̂<eps_div} |p̂ - q̂| / ŵ
///   D_cor ~ 1/(2M|Y|) sum_y sum_{p̂>eps_cor and q̂>eps_cor}
///             |p̂_y sqrt(q̂/p̂) - q̂_y sqrt(p̂/q̂)| / ŵ
inline RunEstimate estimate(const Matrix& f_tr, const Matrix& f_te, std::span<const int> labels_tr,
                            std::span<const int> labels_te, const EstimatorConfig& cfg, Rng& rng) {
  cfg.validate();
  if (f_tr.cols() != f_te.cols()) throw InvalidArgument("feature dimension differs between environments");
  if (f_tr.rows() < 2 || f_te.rows() < 2) throw InvalidArgument("each environment needs at least 2 rows");
  if (static_cast<std::size_t>(f_tr.rows()) != labels_tr.size() ||
      static_cast<std::size_t>(f_te.rows()) != labels_te.size()) {
    throw InvalidArgument("label count does not match feature rows");
  }
  int n_classes = 0;
  for (int y : labels_tr) n_classes = std::max(n_classes, y + 1);
  for (int y : labels_te) n_classes = std::max(n_classes, y + 1);
  const auto by_tr = detail::rows_by_class(labels_tr, n_classes);
  const auto by_te = detail::rows_by_class(labels_te, n_classes);
  for (int y = 0; y < n_classes; ++y) {
    const auto k = static_cast<std::size_t>(y);
    if (by_tr[k].size() < 2 || by_te[k].size() < 2) {
      throw InvalidArgument("class " + std::to_string(y) + " missing in an environment (need >= 2 rows in each)");
    }
  }

  RunEstimate out;
  if (auto w = detail::prior_warning(by_tr, labels_tr.size(), "training")) out.warnings.push_back(*w);
  if (auto w = detail::prior_warning(by_te, labels_te.size(), "test")) out.warnings.push_back(*w);

  Matrix pooled(f_tr.rows() + f_te.rows(), f_tr.cols());
  pooled << f_tr, f_te;
  const Standardizer scaler = fit_standardizer(pooled);
  const Matrix s_tr = scaler.apply(f_tr);
  const Matrix s_te = scaler.apply(f_te);
  const Matrix s_pooled = scaler.apply(pooled);
  RowVector shared;
  if (cfg.bandwidth_rule == BandwidthRule::kPooled) {
    shared = scott_bandwidth(s_pooled, cfg.bandwidth_scale);
  } else if (cfg.bandwidth_rule == BandwidthRule::kWithinCell) {
    std::vector<Matrix> cells;
    for (int y = 0; y < n_classes; ++y) {
      cells.push_back(detail::take_rows(s_tr, by_tr[static_cast<std::size_t>(y)]));
      cells.push_back(detail::take_rows(s_te, by_te[static_cast<std::size_t>(y)]));
    }
    shared = detail::within_cell_bandwidth(cells, cfg.bandwidth_scale);
  }
  auto fit = [&](const Matrix& f) {
    return cfg.bandwidth_rule == BandwidthRule::kPerModel ? kde_fit(f, cfg.bandwidth_scale) : KdeModel(f, shared);
  };
  const KdeModel w_hat = fit(s_pooled);
  const KdeModel p_hat = fit(s_tr);
  const KdeModel q_hat = fit(s_te);
  std::vector<KdeModel> p_y, q_y;
  for (int y = 0; y < n_classes; ++y) {
    p_y.push_back(fit(detail::take_rows(s_tr, by_tr[static_cast<std::size_t>(y)])));
    q_y.push_back(fit(detail::take_rows(s_te, by_te[static_cast<std::size_t>(y)])));
  }

  const double log_eps_div = std::log(cfg.eps_div);
  const double log_eps_cor = std::log(cfg.eps_cor);
  constexpr double kLogWFloor = -745.0;
  auto check_finite = [](const Vector& v, const char* what) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::isnan(v(i)) || v(i) == std::numeric_limits<double>::infinity()) {
        throw NumericError(std::string("non-finite log density in ") + what);
      }
    }
  };

  struct Draws {
    Matrix z;
    Vector lw, lp, lq;
  };
  auto draw = [&]() {
    Draws d;
    d.z = w_hat.sample(cfg.M, rng);
    d.lw = w_hat.logpdf(d.z).cwiseMax(kLogWFloor);
    d.lp = p_hat.logpdf(d.z);
    d.lq = q_hat.logpdf(d.z);
    check_finite(d.lw, "pooled KDE");
    check_finite(d.lp, "training KDE");
    check_finite(d.lq, "test KDE");
    return d;
  };

  const Draws base = draw();
  double div_sum = 0.0;
  std::size_t n_div = 0, n_cor = 0;
  for (Eigen::Index i = 0; i < cfg.M; ++i) {
    if (base.lp(i) < log_eps_div || base.lq(i) < log_eps_div) {
      div_sum += std::abs(std::exp(base.lp(i) - base.lw(i)) - std::exp(base.lq(i) - base.lw(i)));
      ++n_div;
    } else if (base.lp(i) > log_eps_cor && base.lq(i) > log_eps_cor) {
      ++n_cor;
    }
  }

  double cor_sum = 0.0;
  for (int y = 0; y < n_classes; ++y) {
    const Draws fresh = cfg.per_class_resample && y > 0 ? draw() : Draws{};
    const Draws& d = cfg.per_class_resample && y > 0 ? fresh : base;
    const auto k = static_cast<std::size_t>(y);
    const Vector lpy = p_y[k].logpdf(d.z);
    const Vector lqy = q_y[k].logpdf(d.z);
    for (Eigen::Index i = 0; i < cfg.M; ++i) {
      if (!(d.lp(i) > log_eps_cor && d.lq(i) > log_eps_cor)) continue;
      const double half = 0.5 * (d.lq(i) - d.lp(i));
      cor_sum += std::abs(std::exp(lpy(i) + half - d.lw(i)) - std::exp(lqy(i) - half - d.lw(i)));
    }
  }

  out.d_div = div_sum / (2.0 * cfg.M);
  out.d_cor = cor_sum / (2.0 * cfg.M * n_classes);
  out.frac_div = double(n_div) / cfg.M;
  out.frac_cor = double(n_cor) / cfg.M;
  if (!std::isfinite(out.d_div) || !std::isfinite(out.d_cor)) throw NumericError("non-finite shift estimate");
  return out;
}

/// Estimate from a dataset whose features are already the representation.
inline RunEstimate estimate(const LabeledDataset& ds, const EstimatorConfig& cfg, Rng& rng) {
  const auto tr = ds.subset(ds.rows_in_env(kTrainEnv));
  const auto te = ds.subset(ds.rows_in_env(kTestEnv));
  return estimate(tr.features(), te.features(), tr.labels(), te.labels(), cfg, rng);
}

struct RunRecord {
  std::uint64_t seed = 0;
  double d_div = 0.0;
  double d_cor = 0.0;
  double frac_div = 0.0;
  double frac_cor = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  int best_step = 0;
};

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Mean and standard error (sample std with n-1, over sqrt(n)); stderr is
/// 0 for a single value.
inline MeanStderr mean_stderr(std::span<const double> v) {
  MeanStderr out;
  if (v.empty()) return out;
  double s = 0.0;
  for (double x : v) s += x;
  out.mean = s / double(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.stderr_ = std::sqrt(ss / double(v.size() - 1)) / std::sqrt(double(v.size()));
  return out;
}

struct ShiftEstimate {
  MeanStderr d_div;
  MeanStderr d_cor;
  std::vector<RunRecord> per_run;
  bool over_one_flag = false;
  std::vector<std::string> warnings;
};

inline ShiftEstimate aggregate(std::vector<RunRecord> runs, std::vector<std::string> warnings) {
  ShiftEstimate out;
  std::vector<double> div, cor;
  for (const auto& r : runs) {
    div.push_back(r.d_div);
    cor.push_back(r.d_cor);
    out.over_one_flag = out.over_one_flag || r.d_div > 1.0 || r.d_cor > 1.0;
  }
  out.d_div = mean_stderr(div);
  out.d_cor = mean_stderr(cor);
  out.per_run = std::move(runs);
  std::sort(warnings.begin(), warnings.end());
  warnings.erase(std::unique(warnings.begin(), warnings.end()), warnings.end());
  out.warnings = std::move(warnings);
  return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. The first
/// exception (lowest index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace detail {

template <typename E>
[[noreturn]] void rethrow_annotated(const E& e, int run) {
  throw E("run " + std::to_string(run) + ": " + e.what());
}

}  // namespace detail

/// Train a discriminator, extract features and estimate, once per run with
/// seed base_seed + r. Runs execute on up to `threads` workers; results do
/// not depend on the thread count.
inline ShiftEstimate estimate_pipeline(const LabeledDataset& ds, const MlpConfig& mlp_cfg,
                                       const EstimatorConfig& est_cfg, std::uint64_t base_seed,
                                       int threads = 1) {
  est_cfg.validate();
  if (ds.rows_in_env(kTrainEnv).empty() || ds.rows_in_env(kTestEnv).empty()) {
    throw InvalidArgument("dataset must contain both environments");
  }
  const auto n_runs = static_cast<std::size_t>(est_cfg.n_runs);
  std::vector<RunRecord> runs(n_runs);
  std::vector<std::vector<std::string>> warnings(n_runs);
  parallel_for(n_runs, threads, [&](std::size_t r) {
    const int run = static_cast<int>(r);
    try {
      const std::uint64_t seed = base_seed + r;
      Rng rng(seed);
      MlpConfig cfg = mlp_cfg;
      cfg.seed = seed;
      const ExtractorModel model = train(ds, cfg, rng);
      const LabeledDataset feats(model.extract(ds), ds.labels(), ds.envs(), ds.n_classes());
      const RunEstimate est = estimate(feats, est_cfg, rng);
      runs[r] = {seed, est.d_div, est.d_cor, est.frac_div, est.frac_cor, model.val_accuracy(),
                 model.log().best_step};
      warnings[r] = est.warnings;
    } catch (const ParseError& e) {
      throw;
    } catch (const InvalidArgument& e) {
      detail::rethrow_annotated(e, run);
    } catch (const NumericError& e) {
      detail::rethrow_annotated(e, run);
    }
  });
  std::vector<std::string> all;
  for (auto& w : warnings) all.insert(all.end(), w.begin(), w.end());
  return aggregate(std::move(runs), std::move(all));
}

/// Estimate directly on the dataset's features (no discriminator), once per
/// run with seed base_seed + r.
inline ShiftEstimate estimate_features(const LabeledDataset& ds, const EstimatorConfig& est_cfg,
                                       std::uint64_t base_seed) {
  est_cfg.validate();
  std::vector<RunRecord> runs;
  std::vector<std::string> warnings;
  for (int r = 0; r < est_cfg.n_runs; ++r) {
    Rng rng(base_seed + static_cast<std::uint64_t>(r));
    const RunEstimate est = estimate(ds, est_cfg, rng);
    runs.push_back({base_seed + static_cast<std::uint64_t>(r), est.d_div, est.d_cor, est.frac_div,
                    est.frac_cor});
    warnings.insert(warnings.end(), est.warnings.begin(), est.warnings.end());
  }
  return aggregate(std::move(runs), std::move(warnings));
}

enum class SweepAxis { kRho, kMu };

struct SweepCell {
  double tr = 0.0;  ///< rho_tr or mu_tr
  double te = 0.0;  ///< rho_te or mu_te
  ShiftEstimate estimate;
};

/// One estimate_pipeline per (tr, te) grid cell. Each cell regenerates its
/// data from `base` with the cell's axis values and a seed derived from
/// `seed` and the cell index. Cells run on up to `threads` workers.
inline std::vector<SweepCell> sweep(SweepAxis axis, const std::vector<double>& values, const ColoredSpec& base,
                                    const MlpConfig& mlp_cfg, const EstimatorConfig& est_cfg, std::uint64_t seed,
                                    int threads = 1) {
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("sweep axis values must be in [0,1]");
  }
  est_cfg.validate();
  std::vector<SweepCell> cells;
  for (double tr : values) {
    for (double te : values) cells.push_back({tr, te, {}});
  }
  parallel_for(cells.size(), threads, [&](std::size_t i) {
    ColoredSpec spec = base;
    if (axis == SweepAxis::kRho) {
      spec.rho_tr = cells[i].tr;
      spec.rho_te = cells[i].te;
    } else {
      spec.mu_tr = cells[i].tr;
      spec.mu_te = cells[i].te;
    }
    const std::uint64_t cell_seed = derive_seed(seed, i);
    Rng data_rng(cell_seed);
    const LabeledDataset ds = gen_colored(spec, data_rng);
    cells[i].estimate = estimate_pipeline(ds, mlp_cfg, est_cfg, cell_seed, 1);
  });
  return cells;
}

inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline void to_json(nlohmann::json& j, const ShiftEstimate& e) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : e.per_run) {
    runs.push_back({{"seed", r.seed},
                    {"d_div", r.d_div},
                    {"d_cor", r.d_cor},
                    {"frac_div", r.frac_div},
                    {"frac_cor", r.frac_cor},
                    {"val_accuracy", finite_or_null(r.val_accuracy)},
                    {"best_step", r.best_step}});
  }
  j = nlohmann::json{{"d_div", {{"mean", e.d_div.mean}, {"stderr", e.d_div.stderr_}}},
                     {"d_cor", {{"mean", e.d_cor.mean}, {"stderr", e.d_cor.stderr_}}},
                     {"n_runs", e.per_run.size()},
                     {"per_run", runs},
                     {"over_one_flag", e.over_one_flag},
                     {"warnings", e.warnings}};
}

}  // namespace oodshift
