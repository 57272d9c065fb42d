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

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oodshift/error.hpp"
#include "oodshift/rng.hpp"

namespace oodshift {

/// Row-major dense matrix; one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kTrainEnv = 0;
inline constexpr int kTestEnv = 1;

/// Rows of (feature vector, class label, environment id).
///
/// Labels lie in [0, n_classes); environments are 0 (training) or 1 (test).
/// A dataset may be empty (e.g. the validation half of a tiny split); the
/// loaders reject empty input.
class LabeledDataset {
 public:
  LabeledDataset() = default;

  /// `n_classes == 0` infers max(label) + 1.
  LabeledDataset(Matrix features, std::vector<int> labels, std::vector<int> envs,
                 int n_classes = 0)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        envs_(std::move(envs)),
        n_classes_(n_classes) {
    if (static_cast<std::size_t>(features_.rows()) != labels_.size() ||
        labels_.size() != envs_.size()) {
      throw InvalidArgument("dataset columns have different row counts");
    }
    int max_label = -1;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] < 0) throw InvalidArgument("negative label at row " + std::to_string(i));
      if (envs_[i] != kTrainEnv && envs_[i] != kTestEnv) {
        throw InvalidArgument("env out of range at row " + std::to_string(i));
      }
      max_label = std::max(max_label, labels_[i]);
    }
    if (n_classes_ == 0) n_classes_ = max_label + 1;
    if (max_label >= n_classes_) {
      throw InvalidArgument("label " + std::to_string(max_label) + " >= n_classes " +
                            std::to_string(n_classes_));
    }
  }

  std::size_t rows() const noexcept { return labels_.size(); }
  std::size_t dims() const noexcept { return static_cast<std::size_t>(features_.cols()); }
  int n_classes() const noexcept { return n_classes_; }
  bool empty() const noexcept { return labels_.empty(); }

  const Matrix& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<int>& envs() const noexcept { return envs_; }

  LabeledDataset subset(std::span<const std::size_t> rows) const {
    Matrix f(static_cast<Eigen::Index>(rows.size()), features_.cols());
    std::vector<int> l(rows.size()), e(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      f.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
      l[i] = labels_[rows[i]];
      e[i] = envs_[rows[i]];
    }
    return LabeledDataset(std::move(f), std::move(l), std::move(e), n_classes_);
  }

  std::vector<std::size_t> rows_in_env(int env) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < envs_.size(); ++i) {
      if (envs_[i] == env) out.push_back(i);
    }
    return out;
  }

  /// counts[env][label]
  std::array<std::vector<std::size_t>, 2> cell_counts() const {
    std::array<std::vector<std::size_t>, 2> counts;
    counts[0].assign(static_cast<std::size_t>(n_classes_), 0);
    counts[1].assign(static_cast<std::size_t>(n_classes_), 0);
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      ++counts[static_cast<std::size_t>(envs_[i])][static_cast<std::size_t>(labels_[i])];
    }
    return counts;
  }

 private:
  Matrix features_;
  std::vector<int> labels_;
  std::vector<int> envs_;
  int n_classes_ = 0;
};

/// Concatenate two datasets with the same width.
inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (!a.empty() && !b.empty() && a.dims() != b.dims()) {
    throw InvalidArgument("concat: feature widths differ");
  }
  const auto cols = static_cast<Eigen::Index>(a.empty() ? b.dims() : a.dims());
  Matrix f(static_cast<Eigen::Index>(a.rows() + b.rows()), cols);
  if (!a.empty()) f.topRows(static_cast<Eigen::Index>(a.rows())) = a.features();
  if (!b.empty()) f.bottomRows(static_cast<Eigen::Index>(b.rows())) = b.features();
  std::vector<int> l = a.labels(), e = a.envs();
  l.insert(l.end(), b.labels().begin(), b.labels().end());
  e.insert(e.end(), b.envs().begin(), b.envs().end());
  return LabeledDataset(std::move(f), std::move(l), std::move(e),
                        std::max(a.n_classes(), b.n_classes()));
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  out.append(buf, ptr);
}

}  // namespace detail

/// Parse CSV text with header `env,label,x0,...,x{d-1}`.
inline LabeledDataset parse_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool have_header = false;
  std::vector<double> values;
  std::vector<int> labels, envs;

  while (std::getline(in, line)) {
    ++line_no;
    const auto view = detail::trim(line);
    if (view.empty()) continue;
    auto cells = detail::split_commas(view);
    if (!have_header) {
      if (cells.size() < 3 || detail::trim(cells[0]) != "env" ||
          detail::trim(cells[1]) != "label") {
        throw ParseError("malformed header: expected env,label,x0,...", line_no);
      }
      for (std::size_t j = 2; j < cells.size(); ++j) {
        if (detail::trim(cells[j]) != "x" + std::to_string(j - 2)) {
          throw ParseError("malformed header: column " + std::to_string(j + 1) +
                               " should be x" + std::to_string(j - 2),
                           line_no);
        }
      }
      width = cells.size() - 2;
      have_header = true;
      continue;
    }
    if (cells.size() != width + 2) {
      throw ParseError("inconsistent width: expected " + std::to_string(width + 2) +
                           " cells, found " + std::to_string(cells.size()),
                       line_no);
    }
    int env = 0, label = 0;
    if (!detail::parse_number(cells[0], env)) throw ParseError("non-numeric env", line_no);
    if (env != kTrainEnv && env != kTestEnv) throw ParseError("env out of range", line_no);
    if (!detail::parse_number(cells[1], label)) throw ParseError("non-numeric label", line_no);
    if (label < 0) throw ParseError("label out of range", line_no);
    for (std::size_t j = 0; j < width; ++j) {
      double v = 0.0;
      if (!detail::parse_number(cells[j + 2], v)) {
        throw ParseError("non-numeric cell in column x" + std::to_string(j), line_no);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite cell in column x" + std::to_string(j), line_no);
      values.push_back(v);
    }
    envs.push_back(env);
    labels.push_back(label);
  }
  if (labels.empty()) throw ParseError("no rows");
  Matrix f(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(width));
  std::copy(values.begin(), values.end(), f.data());
  return LabeledDataset(std::move(f), std::move(labels), std::move(envs));
}

inline LabeledDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  return parse_csv(in);
}

/// Floats are written with 17 significant digits so a reload is exact.
inline std::string to_csv(const LabeledDataset& ds) {
  std::string out = "env,label";
  for (std::size_t j = 0; j < ds.dims(); ++j) out += ",x" + std::to_string(j);
  out += '\n';
  const auto& f = ds.features();
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    out += std::to_string(ds.envs()[i]);
    out += ',';
    out += std::to_string(ds.labels()[i]);
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      out += ',';
      detail::append_double(out, f(static_cast<Eigen::Index>(i), j));
    }
    out += '\n';
  }
  return out;
}

inline void save_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path);
  out << to_csv(ds);
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw ParseError(std::string("truncated IDX header (") + what + ")");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Read an MNIST-style IDX image/label pair. Pixels are scaled to [0, 1] and
/// every row is assigned to env 0.
inline LabeledDataset load_idx(std::istream& images, std::istream& labels) {
  const auto img_magic = detail::read_be32(images, "magic");
  if (img_magic != kIdxImagesMagic) throw ParseError("unexpected IDX magic in image file");
  const auto lbl_magic = detail::read_be32(labels, "magic");
  if (lbl_magic != kIdxLabelsMagic) throw ParseError("unexpected IDX magic in label file");

  const std::size_t n_images = detail::read_be32(images, "count");
  const std::size_t n_rows = detail::read_be32(images, "rows");
  const std::size_t n_cols = detail::read_be32(images, "cols");
  const std::size_t n_labels = detail::read_be32(labels, "count");
  if (n_images != n_labels) {
    throw ParseError("count mismatch: " + std::to_string(n_images) + " images, " +
                     std::to_string(n_labels) + " labels");
  }
  if (n_images == 0) throw ParseError("no rows");

  const std::size_t pixels = n_rows * n_cols;
  std::vector<unsigned char> buf(n_images * pixels);
  if (!images.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(buf.size()))) {
    throw ParseError("truncated IDX image payload");
  }
  std::vector<unsigned char> lbuf(n_labels);
  if (!labels.read(reinterpret_cast<char*>(lbuf.data()),
                   static_cast<std::streamsize>(lbuf.size()))) {
    throw ParseError("truncated IDX label payload");
  }

  Matrix f(static_cast<Eigen::Index>(n_images), static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < buf.size(); ++i) f.data()[i] = buf[i] / 255.0;
  std::vector<int> l(lbuf.begin(), lbuf.end());
  std::vector<int> e(n_images, kTrainEnv);
  return LabeledDataset(std::move(f), std::move(l), std::move(e));
}

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw InvalidArgument("cannot open " + images_path);
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw InvalidArgument("cannot open " + labels_path);
  return load_idx(images, labels);
}

struct TrainValSplit {
  LabeledDataset train;
  LabeledDataset val;
  /// Set when either side came out empty.
  bool degenerate = false;
};

/// Shuffle rows with `rng`, then cut at ceil(frac * n).
inline TrainValSplit split_train_val(const LabeledDataset& ds, double frac, Rng& rng) {
  if (ds.empty()) throw InvalidArgument("split_train_val: empty dataset");
  if (!(frac > 0.0 && frac < 1.0)) throw InvalidArgument("split_train_val: frac must be in (0,1)");
  const std::size_t n = ds.rows();
  // The epsilon keeps e.g. 0.7 * 10 = 7.000000000000001 from rounding up to 8.
  auto n_train = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n);
  const auto perm = rng.permutation(n);
  std::span<const std::size_t> all(perm);
  TrainValSplit out{ds.subset(all.first(n_train)), ds.subset(all.subspan(n_train)), false};
  out.degenerate = out.train.empty() || out.val.empty();
  return out;
}

}  // namespace oodshift
