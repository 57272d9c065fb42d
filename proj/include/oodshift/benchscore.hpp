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

// Ranking scores of benchmark accuracy tables against a reference
// algorithm's error band.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oodshift/dataset.hpp"
#include "oodshift/error.hpp"

namespace oodshift {

/// +1 above ref_mean + ref_stderr, -1 below ref_mean - ref_stderr, else 0.
/// Values on the band edge score 0. Comparisons allow 1e-9 relative slack
/// so that decimal table entries such as 94.6 against 94.7 +/- 0.1 land on
/// the edge rather than one ulp outside it.
inline int cell_score(double mean, double ref_mean, double ref_stderr) {
  const double tol = 1e-9 * std::max({1.0, std::abs(ref_mean), std::abs(mean)});
  if (mean > ref_mean + ref_stderr + tol) return 1;
  if (mean < ref_mean - ref_stderr - tol) return -1;
  return 0;
}

struct AccuracyCell {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::optional<int> printed;  ///< arrow printed in the source table, if recorded
};

class AccuracyTable {
 public:
  std::string reference = "ERM";

  const std::vector<std::string>& algorithms() const noexcept { return algorithms_; }
  const std::vector<std::string>& datasets() const noexcept { return datasets_; }

  void add(const std::string& algorithm, const std::string& dataset, AccuracyCell cell) {
    if (!(cell.mean >= 0.0 && cell.mean <= 100.0)) {
      throw InvalidArgument("accuracy for " + algorithm + "/" + dataset + " outside [0,100]");
    }
    if (!(cell.stderr_ >= 0.0)) throw InvalidArgument("negative stderr for " + algorithm + "/" + dataset);
    if (std::find(algorithms_.begin(), algorithms_.end(), algorithm) == algorithms_.end()) {
      algorithms_.push_back(algorithm);
    }
    if (std::find(datasets_.begin(), datasets_.end(), dataset) == datasets_.end()) {
      datasets_.push_back(dataset);
    }
    if (!cells_.emplace(std::make_pair(algorithm, dataset), cell).second) {
      throw InvalidArgument("duplicate cell " + algorithm + "/" + dataset);
    }
  }

  const AccuracyCell* find(const std::string& algorithm, const std::string& dataset) const {
    auto it = cells_.find({algorithm, dataset});
    return it == cells_.end() ? nullptr : &it->second;
  }

  void validate() const {
    if (std::find(algorithms_.begin(), algorithms_.end(), reference) == algorithms_.end()) {
      throw InvalidArgument("reference algorithm '" + reference + "' not in table");
    }
    for (const auto& d : datasets_) {
      if (!find(reference, d)) throw InvalidArgument("reference has no entry for dataset " + d);
    }
  }

 private:
  std::vector<std::string> algorithms_;
  std::vector<std::string> datasets_;
  std::map<std::pair<std::string, std::string>, AccuracyCell> cells_;
};

/// CSV with header `algorithm,dataset,mean,stderr` and an optional fifth
/// column `arrow` holding `up`, `down` or empty.
inline AccuracyTable parse_accuracy_csv(std::istream& in, const std::string& reference = "ERM") {
  AccuracyTable table;
  table.reference = reference;
  std::string line;
  std::size_t line_no = 0;
  bool has_arrow = false;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_commas(line);
    if (!header) {
      if (fields.size() < 4 || detail::trim(fields[0]) != "algorithm" || detail::trim(fields[1]) != "dataset" ||
          detail::trim(fields[2]) != "mean" || detail::trim(fields[3]) != "stderr" ||
          (fields.size() == 5 && detail::trim(fields[4]) != "arrow") || fields.size() > 5) {
        throw ParseError("malformed header (expected algorithm,dataset,mean,stderr[,arrow])", line_no);
      }
      has_arrow = fields.size() == 5;
      header = true;
      continue;
    }
    if (fields.size() != (has_arrow ? 5u : 4u)) throw ParseError("inconsistent width", line_no);
    AccuracyCell cell;
    if (!detail::parse_number(fields[2], cell.mean) || !detail::parse_number(fields[3], cell.stderr_)) {
      throw ParseError("non-numeric mean or stderr", line_no);
    }
    if (has_arrow) {
      const auto a = detail::trim(fields[4]);
      if (a == "up") cell.printed = 1;
      else if (a == "down") cell.printed = -1;
      else if (a.empty()) cell.printed = 0;
      else throw ParseError("arrow must be up, down or empty", line_no);
    }
    try {
      table.add(std::string(detail::trim(fields[0])), std::string(detail::trim(fields[1])), cell);
    } catch (const ParseError&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!header) throw ParseError("no rows");
  table.validate();
  return table;
}

inline AccuracyTable load_accuracy_csv(const std::string& path, const std::string& reference = "ERM") {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  return parse_accuracy_csv(in, reference);
}

struct RankingRow {
  std::string algorithm;
  std::vector<int> cells;  ///< one score per dataset, table order; 0 for a missing cell
  int score = 0;
};

/// Score of every algorithm, in table order.
inline std::vector<RankingRow> ranking_scores(const AccuracyTable& table) {
  table.validate();
  std::vector<RankingRow> out;
  for (const auto& alg : table.algorithms()) {
    RankingRow row{alg, {}, 0};
    for (const auto& d : table.datasets()) {
      const auto* ref = table.find(table.reference, d);
      const auto* cell = table.find(alg, d);
      const int s = cell ? cell_score(cell->mean, ref->mean, ref->stderr_) : 0;
      row.cells.push_back(s);
      row.score += s;
    }
    out.push_back(std::move(row));
  }
  return out;
}

/// Cells whose computed score disagrees with the recorded arrow.
inline std::vector<std::string> arrow_discrepancies(const AccuracyTable& table) {
  std::vector<std::string> out;
  const auto rows = ranking_scores(table);
  for (const auto& row : rows) {
    for (std::size_t d = 0; d < table.datasets().size(); ++d) {
      const auto* cell = table.find(row.algorithm, table.datasets()[d]);
      if (cell && cell->printed && *cell->printed != row.cells[d]) {
        out.push_back(row.algorithm + "/" + table.datasets()[d] + ": printed " + std::to_string(*cell->printed) +
                      ", computed " + std::to_string(row.cells[d]));
      }
    }
  }
  return out;
}

inline std::string arrow_symbol(int score) { return score > 0 ? "↑" : score < 0 ? "↓" : " "; }

inline nlohmann::json ranking_json(const AccuracyTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : ranking_scores(table)) {
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t d = 0; d < table.datasets().size(); ++d) cells[table.datasets()[d]] = r.cells[d];
    rows.push_back({{"algorithm", r.algorithm}, {"cells", cells}, {"score", r.score}});
  }
  return {{"reference", table.reference}, {"datasets", table.datasets()}, {"rows", rows}};
}

}  // namespace oodshift
