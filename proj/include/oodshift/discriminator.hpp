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

// Environment discriminator: a feature extractor g (MLP, input -> m features)
// followed by a head h that sees [g(x), one_hot(y)] and emits one logit for
// "this example came from the test environment". Trained with binary
// cross-entropy on class-balanced, environment-balanced mini-batches.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "oodshift/adam.hpp"
#include "oodshift/dataset.hpp"
#include "oodshift/error.hpp"
#include "oodshift/rng.hpp"

namespace oodshift {

enum class Activation { kRelu, kIdentity };

inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "identity" || s == "linear") return Activation::kIdentity;
  throw InvalidArgument("unknown activation '" + s + "'");
}

struct MlpConfig {
  int in_dim = 0;  ///< 0: take from the dataset
  std::vector<int> hidden_dims{256, 256};
  int feature_dim = 8;
  int head_hidden = 64;  ///< 0: the head is a single linear layer
  int n_classes = 0;     ///< 0: take from the dataset
  double lr = 3e-4;
  int iters = 2000;
  int batch_per_env = 32;
  std::uint64_t seed = 0;
  Activation activation = Activation::kRelu;
  double train_frac = 0.9;
  int checkpoint_every = 100;

  void validate() const {
    if (in_dim < 1) throw InvalidArgument("in_dim must be >= 1");
    if (feature_dim < 1) throw InvalidArgument("feature_dim must be >= 1");
    if (n_classes < 1) throw InvalidArgument("n_classes must be >= 1");
    for (int h : hidden_dims) {
      if (h < 1) throw InvalidArgument("hidden_dims entries must be >= 1");
    }
    if (head_hidden < 0) throw InvalidArgument("head_hidden must be >= 0");
    if (!(lr > 0.0)) throw InvalidArgument("lr must be > 0");
    if (iters < 1) throw InvalidArgument("iters must be >= 1");
    if (batch_per_env < 1) throw InvalidArgument("batch_per_env must be >= 1");
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw InvalidArgument("train_frac must be in (0,1)");
    if (checkpoint_every < 1) throw InvalidArgument("checkpoint_every must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const MlpConfig& c) {
  j = nlohmann::json{{"in_dim", c.in_dim},
                     {"hidden_dims", c.hidden_dims},
                     {"feature_dim", c.feature_dim},
                     {"head_hidden", c.head_hidden},
                     {"n_classes", c.n_classes},
                     {"lr", c.lr},
                     {"iters", c.iters},
                     {"batch_per_env", c.batch_per_env},
                     {"seed", c.seed},
                     {"activation", to_string(c.activation)},
                     {"train_frac", c.train_frac},
                     {"checkpoint_every", c.checkpoint_every}};
}

/// Missing keys keep their defaults. Not validated here: in_dim and
/// n_classes may legitimately be 0 until a dataset is known.
inline void from_json(const nlohmann::json& j, MlpConfig& c) {
  try {
    c.in_dim = j.value("in_dim", c.in_dim);
    c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.lr = j.value("lr", c.lr);
    c.iters = j.value("iters", c.iters);
    c.batch_per_env = j.value("batch_per_env", c.batch_per_env);
    c.seed = j.value("seed", c.seed);
    if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
    c.train_frac = j.value("train_frac", c.train_frac);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("MlpConfig JSON: ") + e.what());
  }
}

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One affine layer inside the flat parameter buffer: the row-major
/// `out x in` weight starts at `offset`, the bias follows it.
struct LayerShape {
  Eigen::Index out = 0;
  Eigen::Index in = 0;
  std::size_t offset = 0;
  bool activate = false;       ///< apply the nonlinearity to this layer's output
  bool append_labels = false;  ///< append one_hot(y) after this layer (end of g)

  std::size_t weight_size() const noexcept { return static_cast<std::size_t>(out * in); }
  std::size_t size() const noexcept { return weight_size() + static_cast<std::size_t>(out); }
};

/// Parameters of g and h in one contiguous buffer, so the optimizer and the
/// gradient check can address every parameter by index.
template <typename Scalar>
class Network {
 public:
  using Mat = MatrixT<Scalar>;
  using Vec = VectorT<Scalar>;

  Network() = default;

  explicit Network(const MlpConfig& cfg)
      : in_dim_(cfg.in_dim),
        feature_dim_(cfg.feature_dim),
        n_classes_(cfg.n_classes),
        activation_(cfg.activation) {
    std::size_t offset = 0;
    auto add = [&](Eigen::Index in, Eigen::Index out, bool act, bool labels) {
      layers_.push_back({out, in, offset, act, labels});
      offset += layers_.back().size();
    };
    Eigen::Index width = cfg.in_dim;
    for (int h : cfg.hidden_dims) {
      add(width, h, true, false);
      width = h;
    }
    add(width, cfg.feature_dim, false, true);
    n_extractor_layers_ = layers_.size();
    width = cfg.feature_dim + cfg.n_classes;
    if (cfg.head_hidden > 0) {
      add(width, cfg.head_hidden, true, false);
      width = cfg.head_hidden;
    }
    add(width, 1, false, false);
    params_.assign(offset, Scalar(0));
  }

  template <typename Other>
  Network<Other> cast() const {
    Network<Other> out;
    out.in_dim_ = in_dim_;
    out.feature_dim_ = feature_dim_;
    out.n_classes_ = n_classes_;
    out.activation_ = activation_;
    out.layers_ = layers_;
    out.n_extractor_layers_ = n_extractor_layers_;
    out.params_.assign(params_.begin(), params_.end());
    return out;
  }

  int in_dim() const noexcept { return in_dim_; }
  int feature_dim() const noexcept { return feature_dim_; }
  int n_classes() const noexcept { return n_classes_; }
  Activation activation() const noexcept { return activation_; }
  const std::vector<LayerShape>& layers() const noexcept { return layers_; }
  std::size_t n_extractor_layers() const noexcept { return n_extractor_layers_; }
  std::size_t n_params() const noexcept { return params_.size(); }
  std::span<Scalar> params() noexcept { return params_; }
  std::span<const Scalar> params() const noexcept { return params_; }

  Eigen::Map<Mat> weight(std::size_t l) {
    return {params_.data() + layers_[l].offset, layers_[l].out, layers_[l].in};
  }
  Eigen::Map<const Mat> weight(std::size_t l) const {
    return {params_.data() + layers_[l].offset, layers_[l].out, layers_[l].in};
  }
  Eigen::Map<Vec> bias(std::size_t l) {
    return {params_.data() + layers_[l].offset + layers_[l].weight_size(), layers_[l].out};
  }
  Eigen::Map<const Vec> bias(std::size_t l) const {
    return {params_.data() + layers_[l].offset + layers_[l].weight_size(), layers_[l].out};
  }

  /// Glorot-uniform weights, zero biases.
  void init_glorot(Rng& rng) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const double limit = std::sqrt(6.0 / double(layers_[l].in + layers_[l].out));
      auto w = weight(l);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(rng.uniform(-limit, limit));
      bias(l).setZero();
    }
  }

  /// g(x) for every row of `x`.
  Mat features(const Mat& x) const {
    if (x.cols() != in_dim_) throw InvalidArgument("feature width does not match the model input");
    Mat a = x;
    for (std::size_t l = 0; l < n_extractor_layers_; ++l) {
      Mat z = affine(l, a);
      if (layers_[l].activate) activate_inplace(z);
      a = std::move(z);
    }
    return a;
  }

  /// Inputs and pre-activations of every layer from the last forward pass.
  struct Cache {
    std::vector<Mat> inputs;
    std::vector<Mat> pre;
  };

  Vec logits(const Mat& x, std::span<const int> labels, Cache* cache = nullptr) const {
    if (x.cols() != in_dim_) throw InvalidArgument("feature width does not match the model input");
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    Mat a = x;
    for (std::size_t l = 0;; ++l) {
      Mat z = affine(l, a);
      if (cache) {
        cache->inputs.push_back(std::move(a));
        cache->pre.push_back(z);
      }
      if (l + 1 == layers_.size()) return z.col(0);
      a = post(l, std::move(z), labels);
    }
  }

  /// Resume the forward pass from a given pre-activation of layer `l`.
  /// Appends the pre-activations of layers l, l+1, ... to `pre_out`.
  Vec forward_from(std::size_t l, Mat z, std::span<const int> labels,
                   std::vector<Mat>* pre_out = nullptr) const {
    for (;; ++l) {
      if (pre_out) pre_out->push_back(z);
      if (l + 1 == layers_.size()) return z.col(0);
      Mat a = post(l, std::move(z), labels);
      z = affine(l + 1, a);
    }
  }

  Mat affine(std::size_t l, const Mat& a) const {
    Mat z = a * weight(l).transpose();
    z.rowwise() += bias(l).transpose();
    return z;
  }

  void activate_inplace(Mat& z) const {
    if (activation_ == Activation::kRelu) z = z.cwiseMax(Scalar(0));
  }

  Mat post(std::size_t l, Mat z, std::span<const int> labels) const {
    if (layers_[l].activate) activate_inplace(z);
    if (!layers_[l].append_labels) return z;
    Mat a = Mat::Zero(z.rows(), z.cols() + n_classes_);
    a.leftCols(z.cols()) = z;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      a(i, z.cols() + labels[static_cast<std::size_t>(i)]) = Scalar(1);
    }
    return a;
  }

 private:
  template <typename>
  friend class Network;

  int in_dim_ = 0;
  int feature_dim_ = 0;
  int n_classes_ = 0;
  Activation activation_ = Activation::kRelu;
  std::vector<LayerShape> layers_;
  std::size_t n_extractor_layers_ = 0;
  // Aligned so that Eigen's kernels see the same alignment, and therefore
  // sum in the same order, on every allocation.
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> params_;
};

/// Mean binary cross-entropy of `logits` against environment ids.
template <typename Scalar>
Scalar bce_with_logits(const VectorT<Scalar>& logits, std::span<const int> envs) {
  using std::abs;
  using std::exp;
  using std::log1p;
  Scalar total(0);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const Scalar s = logits(i);
    const Scalar e(envs[static_cast<std::size_t>(i)]);
    total += std::max(s, Scalar(0)) - e * s + log1p(exp(-abs(s)));
  }
  return logits.size() == 0 ? Scalar(0) : total / Scalar(logits.size());
}

/// Loss and its gradient with respect to every parameter (same layout as the
/// network's buffer).
inline double loss_and_grad(const Network<double>& net, const Matrix& x, std::span<const int> labels,
                            std::span<const int> envs, std::vector<double>& grad) {
  using Mat = Network<double>::Mat;
  grad.assign(net.n_params(), 0.0);
  if (x.rows() == 0) return 0.0;
  Network<double>::Cache cache;
  const Vector s = net.logits(x, labels, &cache);
  const double loss = bce_with_logits<double>(s, envs);

  const auto batch = static_cast<double>(x.rows());
  Mat dz(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    dz(i, 0) = (1.0 / (1.0 + std::exp(-s(i))) - envs[static_cast<std::size_t>(i)]) / batch;
  }
  const auto& layers = net.layers();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& shape = layers[l];
    Eigen::Map<Mat> gw(grad.data() + shape.offset, shape.out, shape.in);
    Eigen::Map<Vector> gb(grad.data() + shape.offset + shape.weight_size(), shape.out);
    // Products go through aligned temporaries; `grad` has no alignment guarantee.
    const Mat w_grad = dz.transpose() * cache.inputs[l];
    const Vector b_grad = dz.colwise().sum().transpose();
    gw = w_grad;
    gb = b_grad;
    if (l == 0) break;
    Mat da = dz * net.weight(l);
    const auto& below = layers[l - 1];
    if (below.append_labels) da = da.leftCols(below.out).eval();
    if (below.activate && net.activation() == Activation::kRelu) {
      da = da.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    dz = std::move(da);
  }
  return loss;
}

/// Draws mini-batches with equal mass on the two environments and, inside
/// each environment, on every class.
class BalancedSampler {
 public:
  BalancedSampler(const LabeledDataset& ds, int n_classes) : n_classes_(n_classes) {
    for (auto& env_cells : cells_) env_cells.resize(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < ds.rows(); ++i) {
      cells_[static_cast<std::size_t>(ds.envs()[i])][static_cast<std::size_t>(ds.labels()[i])]
          .push_back(i);
    }
    for (int e = 0; e < 2; ++e) {
      for (int y = 0; y < n_classes; ++y) {
        if (cells_[e][static_cast<std::size_t>(y)].empty()) {
          throw InvalidArgument("missing (env, class) cell: env " + std::to_string(e) +
                                ", class " + std::to_string(y) + " has no training rows");
        }
      }
    }
  }

  /// `per_env` rows from env 0 followed by `per_env` rows from env 1.
  void draw(Rng& rng, int per_env, std::vector<std::size_t>& rows) const {
    rows.clear();
    for (const auto& env_cells : cells_) {
      for (int i = 0; i < per_env; ++i) {
        const auto& cell = env_cells[rng.uniform_int(static_cast<std::uint64_t>(n_classes_))];
        rows.push_back(cell[rng.uniform_int(cell.size())]);
      }
    }
  }

 private:
  int n_classes_;
  std::array<std::vector<std::vector<std::size_t>>, 2> cells_;
};

struct TrainingLog {
  std::vector<double> loss;                        ///< mini-batch loss per step
  std::vector<std::pair<int, double>> val_curve;  ///< (step, validation accuracy)
  int best_step = 0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_train = 0;
  std::size_t n_val = 0;
};

/// Trained g and h plus training metadata. Immutable after training;
/// `extract` is safe to call concurrently.
class ExtractorModel {
 public:
  ExtractorModel() = default;

  /// All-zero parameters.
  explicit ExtractorModel(MlpConfig cfg) : config_(std::move(cfg)), net_(config_) {
    config_.validate();
  }

  ExtractorModel(MlpConfig cfg, Network<double> net, TrainingLog log)
      : config_(std::move(cfg)), net_(std::move(net)), log_(std::move(log)) {}

  const MlpConfig& config() const noexcept { return config_; }
  const Network<double>& network() const noexcept { return net_; }
  Network<double>& network() noexcept { return net_; }
  const TrainingLog& log() const noexcept { return log_; }
  double val_accuracy() const noexcept { return log_.val_accuracy; }

  /// Row i is g(x_i). Processed in chunks to bound memory.
  Matrix extract(const Matrix& x) const {
    if (x.cols() != net_.in_dim()) {
      throw InvalidArgument("dimension mismatch: dataset has " + std::to_string(x.cols()) +
                            " features, model expects " + std::to_string(net_.in_dim()));
    }
    Matrix out(x.rows(), net_.feature_dim());
    constexpr Eigen::Index kChunk = 1024;
    for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
      const Eigen::Index len = std::min(kChunk, x.rows() - start);
      out.middleRows(start, len) = net_.features(x.middleRows(start, len));
    }
    return out;
  }

  Matrix extract(const LabeledDataset& ds) const { return extract(ds.features()); }

  /// Fraction of rows whose environment is predicted correctly (logit > 0
  /// means env 1). NaN for an empty dataset.
  double accuracy(const LabeledDataset& ds) const {
    if (ds.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t correct = 0;
    constexpr Eigen::Index kChunk = 1024;
    const auto& x = ds.features();
    for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
      const Eigen::Index len = std::min(kChunk, x.rows() - start);
      std::span<const int> labels(ds.labels().data() + start, static_cast<std::size_t>(len));
      const Vector s = net_.logits(x.middleRows(start, len), labels);
      for (Eigen::Index i = 0; i < len; ++i) {
        const int pred = s(i) > 0.0 ? 1 : 0;
        if (pred == ds.envs()[static_cast<std::size_t>(start + i)]) ++correct;
      }
    }
    return double(correct) / double(ds.rows());
  }

 private:
  MlpConfig config_;
  Network<double> net_;
  TrainingLog log_;
};

/// Resolve in_dim / n_classes against the dataset and validate.
inline MlpConfig resolve_config(MlpConfig cfg, const LabeledDataset& ds) {
  if (cfg.in_dim == 0) cfg.in_dim = static_cast<int>(ds.dims());
  if (cfg.in_dim != static_cast<int>(ds.dims())) {
    throw InvalidArgument("in_dim " + std::to_string(cfg.in_dim) + " does not match dataset width " +
                          std::to_string(ds.dims()));
  }
  if (cfg.n_classes == 0) cfg.n_classes = ds.n_classes();
  if (cfg.n_classes < ds.n_classes()) throw InvalidArgument("n_classes smaller than dataset labels");
  cfg.validate();
  return cfg;
}

/// Train g and h. The dataset is split train/val (cfg.train_frac) with `rng`;
/// every cfg.checkpoint_every steps (and at the last step) validation
/// accuracy is measured and the best checkpoint is returned.
inline ExtractorModel train(const LabeledDataset& ds, MlpConfig cfg, Rng& rng) {
  cfg = resolve_config(std::move(cfg), ds);
  const auto counts = ds.cell_counts();
  for (int e = 0; e < 2; ++e) {
    for (int y = 0; y < cfg.n_classes; ++y) {
      const auto k = counts[static_cast<std::size_t>(e)][static_cast<std::size_t>(y)];
      if (k < 2) {
        throw InvalidArgument("missing (env, class) cell: env " + std::to_string(e) + ", class " +
                              std::to_string(y) + " has " + std::to_string(k) +
                              " examples (need >= 2)");
      }
    }
  }

  const auto split = split_train_val(ds, cfg.train_frac, rng);
  const BalancedSampler sampler(split.train, cfg.n_classes);

  Network<double> net(cfg);
  net.init_glorot(rng);
  Adam adam(net.n_params(), AdamOptions{cfg.lr});

  TrainingLog log;
  log.n_train = split.train.rows();
  log.n_val = split.val.rows();
  log.loss.reserve(static_cast<std::size_t>(cfg.iters));
  Network<double> best = net;
  double best_acc = -1.0;

  std::vector<std::size_t> rows;
  std::vector<int> labels, envs;
  std::vector<double> grad;
  Matrix xb(2 * cfg.batch_per_env, cfg.in_dim);
  const auto& xs = split.train.features();

  for (int step = 1; step <= cfg.iters; ++step) {
    sampler.draw(rng, cfg.batch_per_env, rows);
    labels.resize(rows.size());
    envs.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      xb.row(static_cast<Eigen::Index>(i)) = xs.row(static_cast<Eigen::Index>(rows[i]));
      labels[i] = split.train.labels()[rows[i]];
      envs[i] = split.train.envs()[rows[i]];
    }
    const double loss = loss_and_grad(net, xb, labels, envs, grad);
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite training loss at step " + std::to_string(step));
    }
    log.loss.push_back(loss);
    adam.step(net.params(), grad);

    if (step % cfg.checkpoint_every == 0 || step == cfg.iters) {
      if (split.val.empty()) {
        best = net;
        log.best_step = step;
        continue;
      }
      const ExtractorModel probe(cfg, net, {});
      const double acc = probe.accuracy(split.val);
      log.val_curve.emplace_back(step, acc);
      if (acc >= best_acc) {
        best_acc = acc;
        best = net;
        log.best_step = step;
      }
    }
  }
  log.val_accuracy = split.val.empty() ? std::numeric_limits<double>::quiet_NaN() : best_acc;
  return ExtractorModel(std::move(cfg), std::move(best), std::move(log));
}

inline ExtractorModel train(const LabeledDataset& ds, const MlpConfig& cfg) {
  Rng rng(cfg.seed);
  return train(ds, cfg, rng);
}

inline void to_json(nlohmann::json& j, const ExtractorModel& m) {
  const auto& net = m.network();
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    layers.push_back({{"out", w.rows()},
                      {"in", w.cols()},
                      {"weight", std::vector<double>(w.data(), w.data() + w.size())},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  j = nlohmann::json{{"config", m.config()},
                     {"layers", layers},
                     {"val_accuracy", std::isfinite(m.val_accuracy())
                                          ? nlohmann::json(m.val_accuracy())
                                          : nlohmann::json(nullptr)},
                     {"best_step", m.log().best_step}};
}

inline ExtractorModel model_from_json(const nlohmann::json& j) {
  MlpConfig cfg = j.at("config").get<MlpConfig>();
  cfg.validate();
  ExtractorModel model(cfg);
  auto& net = model.network();
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers().size()) throw ParseError("model JSON: wrong number of layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto w = layers[l].at("weight").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    auto nw = net.weight(l);
    auto nb = net.bias(l);
    if (layers[l].at("out").get<Eigen::Index>() != nw.rows() ||
        layers[l].at("in").get<Eigen::Index>() != nw.cols() ||
        w.size() != static_cast<std::size_t>(nw.size()) ||
        b.size() != static_cast<std::size_t>(nb.size())) {
      throw ParseError("model JSON: layer " + std::to_string(l) + " shape mismatch");
    }
    std::copy(w.begin(), w.end(), nw.data());
    std::copy(b.begin(), b.end(), nb.data());
  }
  TrainingLog log;
  if (j.contains("val_accuracy") && j.at("val_accuracy").is_number()) {
    log.val_accuracy = j.at("val_accuracy").get<double>();
  }
  log.best_step = j.value("best_step", 0);
  return ExtractorModel(cfg, net, std::move(log));
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Parameters whose +/- step moved a ReLU pre-activation across zero; the
  /// finite difference is meaningless there, so they are excluded.
  std::size_t skipped_kinks = 0;
};

/// Compare the analytic gradient of the discriminator loss with central
/// differences (step 1e-5) for every parameter, on a random network and a
/// random batch of `batch` rows. Differences are evaluated in long double.
///
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheckReport grad_check(MlpConfig cfg, Rng& rng, int batch = 8) {
  if (cfg.n_classes == 0) cfg.n_classes = 2;
  cfg.validate();
  GradCheckReport report;
  if (batch <= 0) return report;

  Network<double> net(cfg);
  net.init_glorot(rng);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto b = net.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.normal(0.0, 0.1);
  }
  Matrix x(batch, cfg.in_dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<int> labels(static_cast<std::size_t>(batch)), envs(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.n_classes)));
    envs[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(2));
  }

  std::vector<double> analytic;
  loss_and_grad(net, x, labels, envs, analytic);

  using LD = long double;
  using MatL = MatrixT<LD>;
  const Network<LD> netl = net.cast<LD>();
  const MatL xl = x.cast<LD>();
  typename Network<LD>::Cache cache;
  netl.logits(xl, labels, &cache);
  const auto& layers = netl.layers();
  const bool relu = cfg.activation == Activation::kRelu;
  const LD h = 1e-5L;

  auto kinked = [&](std::size_t l, const std::vector<MatL>& pre) {
    if (!relu) return false;
    for (std::size_t k = 0; k < pre.size(); ++k) {
      const std::size_t layer = l + k;
      if (!layers[layer].activate) continue;
      const auto& base = cache.pre[layer];
      for (Eigen::Index i = 0; i < base.size(); ++i) {
        if ((base.data()[i] > 0) != (pre[k].data()[i] > 0)) return true;
      }
    }
    return false;
  };

  std::vector<MatL> pre_plus, pre_minus;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& shape = layers[l];
    const auto& input = cache.inputs[l];
    for (Eigen::Index i = 0; i < shape.out; ++i) {
      // Index in == bias, otherwise weight (i, j).
      for (Eigen::Index j = 0; j <= shape.in; ++j) {
        VectorT<LD> delta = j < shape.in ? VectorT<LD>(input.col(j) * h)
                                         : VectorT<LD>::Constant(batch, h);
        MatL zp = cache.pre[l];
        MatL zm = cache.pre[l];
        zp.col(i) += delta;
        zm.col(i) -= delta;
        pre_plus.clear();
        pre_minus.clear();
        const LD lp = bce_with_logits<LD>(netl.forward_from(l, std::move(zp), labels, &pre_plus), envs);
        const LD lm = bce_with_logits<LD>(netl.forward_from(l, std::move(zm), labels, &pre_minus), envs);
        if (kinked(l, pre_plus) || kinked(l, pre_minus)) {
          ++report.skipped_kinks;
          continue;
        }
        const double numeric = static_cast<double>((lp - lm) / (2 * h));
        const std::size_t idx = j < shape.in
                                    ? shape.offset + static_cast<std::size_t>(i * shape.in + j)
                                    : shape.offset + shape.weight_size() + static_cast<std::size_t>(i);
        const double a = analytic[idx];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
        report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
        ++report.checked;
      }
    }
  }
  return report;
}

}  // namespace oodshift
