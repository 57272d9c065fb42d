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

// Command-line front end: generate, estimate, sweep, compare, score.
//
// Every command is a pure function of (config file, flags, seed). Result
// files never contain timestamps; wall-clock times go to <out>/run.log.
//
// Exit codes: 0 success, 1 numeric failure, 2 user or configuration error.

#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "oodshift/oodshift.hpp"

namespace oodshift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumeric = 1;
inline constexpr int kExitUsage = 2;

/// Data source named by --preset.
struct Preset {
  std::string name = "irm-cmnist";
  std::optional<ColoredSpec> colored;
  std::optional<LatentSpec> latent;
  int n_per_env = 2000;
};

inline Preset make_preset(const std::vector<std::string>& args) {
  if (args.empty()) throw InvalidArgument("--preset needs a name");
  Preset p;
  p.name = args[0];
  auto expect = [&](std::size_t n) {
    if (args.size() != n + 1) {
      throw InvalidArgument("preset '" + p.name + "' takes " + std::to_string(n) + " argument(s)");
    }
  };
  if (p.name == "iid") {
    expect(0);
    ColoredSpec s = irm_colored_default();
    s.rho_te = s.rho_tr;
    p.colored = s;
  } else if (p.name == "irm-cmnist") {
    expect(0);
    p.colored = irm_colored_default();
  } else if (p.name == "cmnist-rho") {
    expect(2);
    double a = 0.0, b = 0.0;
    if (!detail::parse_number(args[1], a) || !detail::parse_number(args[2], b)) {
      throw InvalidArgument("cmnist-rho arguments must be numbers");
    }
    ColoredSpec s = irm_colored_default();
    s.rho_tr = a;
    s.rho_te = b;
    s.validate();
    p.colored = s;
  } else if (p.name == "cmnist-blue") {
    expect(0);
    p.colored = colored_blue_preset();
  } else if (p.name == "latent-a") {
    expect(0);
    p.latent = latent_spec_a(0.05);
  } else {
    throw InvalidArgument("unknown preset '" + p.name + "' (iid, irm-cmnist, cmnist-rho <a> <b>, cmnist-blue, latent-a)");
  }
  if (p.colored) p.n_per_env = p.colored->n_per_env;
  return p;
}

/// Flags shared by every subcommand.
struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> threads;
  std::optional<int> runs;
  std::vector<std::string> preset;
};

/// Effective configuration: defaults, then the JSON file, then flags.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out = "out";
  Preset preset;
  MlpConfig mlp;
  EstimatorConfig estimator;
  bool runs_set = false;  ///< n_runs came from the file or --runs
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j{{"seed", seed},
                     {"threads", threads},
                     {"preset", preset.name},
                     {"n_per_env", preset.n_per_env},
                     {"mlp", mlp},
                     {"estimator", estimator}};
    if (preset.colored) j["data"] = *preset.colored;
    if (preset.latent) j["latent"] = *preset.latent;
    for (auto& [k, v] : extra.items()) j[k] = v;
    return j;
  }
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("config " + path + ": " + e.what());
  }
}

inline RunConfig resolve(const CommonFlags& flags) {
  RunConfig cfg;
  nlohmann::json file = nlohmann::json::object();
  if (!flags.config_path.empty()) file = read_json_file(flags.config_path);
  try {
    cfg.seed = file.value("seed", cfg.seed);
    cfg.threads = file.value("threads", cfg.threads);
    cfg.out = file.value("out", cfg.out);
    if (file.contains("preset")) {
      const auto& pj = file.at("preset");
      cfg.preset = make_preset(pj.is_array() ? pj.get<std::vector<std::string>>()
                                             : std::vector<std::string>{pj.get<std::string>()});
    } else {
      cfg.preset = make_preset({"irm-cmnist"});
    }
    if (file.contains("mlp")) cfg.mlp = file.at("mlp").get<MlpConfig>();
    if (file.contains("estimator")) {
      cfg.estimator = file.at("estimator").get<EstimatorConfig>();
      cfg.runs_set = file.at("estimator").contains("n_runs");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.threads) cfg.threads = *flags.threads;
  if (flags.runs) {
    cfg.estimator.n_runs = *flags.runs;
    cfg.runs_set = true;
  }
  if (!flags.out.empty()) cfg.out = flags.out;
  if (!flags.preset.empty()) cfg.preset = make_preset(flags.preset);
  // Data fields in the file refine the preset.
  if (file.contains("data") && cfg.preset.colored) {
    nlohmann::json merged = *cfg.preset.colored;
    merged.update(file.at("data"));
    cfg.preset.colored = merged.get<ColoredSpec>();
    cfg.preset.n_per_env = cfg.preset.colored->n_per_env;
  }
  if (file.contains("n_per_env")) cfg.preset.n_per_env = file.at("n_per_env").get<int>();
  if (cfg.threads < 1) throw InvalidArgument("threads must be >= 1");
  cfg.estimator.validate();
  return cfg;
}

inline LabeledDataset generate_data(const RunConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0xDA7A));
  if (cfg.preset.latent) return gen_latent(*cfg.preset.latent, cfg.preset.n_per_env, rng);
  ColoredSpec spec = *cfg.preset.colored;
  spec.n_per_env = cfg.preset.n_per_env;
  return gen_colored(spec, rng);
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot write " + path.string());
  f << text;
  if (!f) throw InvalidArgument("failed writing " + path.string());
}

inline std::filesystem::path prepare_out(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw InvalidArgument("cannot create output directory " + out + ": " + ec.message());
  return out;
}

/// Appends timestamped lines to <out>/run.log.
class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& dir) : file_(dir / "run.log", std::ios::app), start_(clock::now()) {}

  void line(const std::string& msg) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    file_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << msg << '\n';
    file_.flush();
  }

  double elapsed() const { return std::chrono::duration<double>(clock::now() - start_).count(); }

 private:
  using clock = std::chrono::steady_clock;
  std::ofstream file_;
  clock::time_point start_;
};

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  const auto dir = prepare_out(cfg.out);
  RunLog log(dir);
  const LabeledDataset ds = generate_data(cfg);
  save_csv(ds, (dir / "data.csv").string());
  nlohmann::json side{{"seed", cfg.seed}, {"preset", cfg.preset.name}, {"n_per_env", cfg.preset.n_per_env}};
  if (cfg.preset.colored) side["spec"] = *cfg.preset.colored;
  if (cfg.preset.latent) side["spec"] = *cfg.preset.latent;
  write_file(dir / "spec.json", dump(side));
  log.line("generate preset=" + cfg.preset.name + " rows=" + std::to_string(ds.rows()) +
           " wall=" + std::to_string(log.elapsed()) + "s");
  out << "wrote " << (dir / "data.csv").string() << " (" << ds.rows() << " rows)\n";
  return kExitOk;
}

inline int cmd_estimate(RunConfig cfg, const std::string& data_path, bool no_extractor, std::ostream& out) {
  const auto dir = prepare_out(cfg.out);
  RunLog log(dir);
  LabeledDataset ds;
  if (!data_path.empty()) {
    if (!std::filesystem::exists(data_path)) throw InvalidArgument("data file not found: " + data_path);
    ds = load_csv(data_path);
    cfg.extra["data_file"] = data_path;
  } else {
    ds = generate_data(cfg);
  }
  cfg.extra["extractor"] = !no_extractor;
  write_file(dir / "config.json", dump(cfg.to_json()));
  const ShiftEstimate est = no_extractor ? estimate_features(ds, cfg.estimator, cfg.seed)
                                         : estimate_pipeline(ds, cfg.mlp, cfg.estimator, cfg.seed, cfg.threads);
  nlohmann::json result{{"config", cfg.to_json()}, {"estimate", est}};
  write_file(dir / "result.json", dump(result));
  log.line("estimate runs=" + std::to_string(est.per_run.size()) + " wall=" + std::to_string(log.elapsed()) + "s");
  out << std::setprecision(4) << "d_div " << est.d_div.mean << " +/- " << est.d_div.stderr_ << "\n"
      << "d_cor " << est.d_cor.mean << " +/- " << est.d_cor.stderr_ << "\n";
  for (const auto& w : est.warnings) out << "warning: " << w << "\n";
  return kExitOk;
}

inline int cmd_sweep(RunConfig cfg, const std::string& axis_name, const std::vector<double>& values,
                     std::ostream& out) {
  if (!cfg.preset.colored) throw InvalidArgument("sweep needs a colored-digit preset");
  SweepAxis axis;
  if (axis_name == "rho") axis = SweepAxis::kRho;
  else if (axis_name == "mu") axis = SweepAxis::kMu;
  else throw InvalidArgument("--axis must be rho or mu");
  // Sweep cells run once unless asked otherwise.
  if (!cfg.runs_set) cfg.estimator.n_runs = 1;
  const auto dir = prepare_out(cfg.out);
  RunLog log(dir);
  cfg.extra["axis"] = axis_name;
  cfg.extra["values"] = values;
  write_file(dir / "config.json", dump(cfg.to_json()));
  ColoredSpec base = *cfg.preset.colored;
  base.n_per_env = cfg.preset.n_per_env;
  const auto cells = sweep(axis, values, base, cfg.mlp, cfg.estimator, cfg.seed, cfg.threads);
  if (cells.size() != values.size() * values.size()) throw NumericError("sweep produced a wrong number of cells");
  std::string csv = axis_name + "_tr," + axis_name + "_te,d_div,d_div_se,d_cor,d_cor_se\n";
  for (const auto& c : cells) {
    for (double v : {c.tr, c.te, c.estimate.d_div.mean, c.estimate.d_div.stderr_, c.estimate.d_cor.mean,
                     c.estimate.d_cor.stderr_}) {
      detail::append_double(csv, v);
      csv += ',';
    }
    csv.back() = '\n';
  }
  write_file(dir / "sweep.csv", csv);
  log.line("sweep cells=" + std::to_string(cells.size()) + " wall=" + std::to_string(log.elapsed()) + "s");
  out << "wrote " << (dir / "sweep.csv").string() << " (" << cells.size() << " cells)\n";
  return kExitOk;
}

inline int cmd_compare(RunConfig cfg, std::ostream& out) {
  const auto dir = prepare_out(cfg.out);
  RunLog log(dir);
  write_file(dir / "config.json", dump(cfg.to_json()));
  auto specs = default_compare_specs();
  if (cfg.preset.colored) {
    for (auto& [label, s] : specs) s.n_per_env = cfg.preset.n_per_env;
  }
  CompareOptions opts;
  opts.n_runs = cfg.estimator.n_runs;
  opts.threads = cfg.threads;
  const CompareTable table = compare_table(specs, cfg.mlp, cfg.estimator, cfg.seed, opts);
  write_file(dir / "compare.csv", compare_csv(table));
  write_file(dir / "verdicts.json", dump(verdicts_json(table)));
  log.line("compare rows=" + std::to_string(table.rows.size()) + " wall=" + std::to_string(log.elapsed()) + "s");
  out << compare_csv(table);
  for (const auto& v : table.verdicts) {
    out << v.metric << ": correlation " << (v.correlation_sensitive ? "sensitive" : "insensitive") << ", diversity "
        << (v.diversity_sensitive ? "sensitive" : "insensitive") << "\n";
  }
  return kExitOk;
}

inline int cmd_score(const std::string& table_path, const std::string& ref, bool json, const std::string& out_dir,
                     std::ostream& out) {
  const AccuracyTable table = load_accuracy_csv(table_path, ref);
  const auto rows = ranking_scores(table);
  if (json) {
    out << dump(ranking_json(table));
  } else {
    out << std::left << std::setw(12) << "algorithm";
    for (const auto& d : table.datasets()) out << std::setw(16) << d;
    out << "score\n";
    for (const auto& r : rows) {
      out << std::setw(12) << r.algorithm;
      for (std::size_t d = 0; d < table.datasets().size(); ++d) {
        const auto* cell = table.find(r.algorithm, table.datasets()[d]);
        std::ostringstream c;
        if (cell) c << std::fixed << std::setprecision(1) << cell->mean << "+/-" << cell->stderr_ << arrow_symbol(r.cells[d]);
        // setw counts bytes; the arrows are three bytes wide.
        out << std::setw(r.cells[d] != 0 ? 18 : 16) << c.str();
      }
      out << std::showpos << r.score << std::noshowpos << "\n";
    }
  }
  for (const auto& d : arrow_discrepancies(table)) out << "note: " << d << "\n";
  if (!out_dir.empty()) {
    const auto dir = prepare_out(out_dir);
    write_file(dir / "score.json", dump(ranking_json(table)));
  }
  return kExitOk;
}

/// Entry point. Never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Quantify diversity and correlation shift between two environments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "oodshift 0.1.0");

  CommonFlags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "base seed");
    sub->add_option("-o,--out", flags.out, "output directory");
    sub->add_option("--threads", flags.threads, "parallel workers across runs or cells");
    sub->add_option("--runs", flags.runs, "runs per estimate");
    sub->add_option("--preset", flags.preset, "iid | irm-cmnist | cmnist-rho <a> <b> | cmnist-blue | latent-a")
        ->expected(1, 3);
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset and its spec");
  add_common(gen);

  std::string data_path;
  bool no_extractor = false;
  std::optional<int> iters;
  std::optional<int> samples;
  std::string bw_rule;
  auto* est = app.add_subcommand("estimate", "estimate diversity and correlation shift");
  add_common(est);
  est->add_option("--data", data_path, "dataset CSV (env,label,x0..); default: generate from the preset");
  est->add_flag("--no-extractor", no_extractor, "estimate on the raw features without training a discriminator");
  for (auto* sub : {est}) {
    sub->add_option("--iters", iters, "discriminator training steps");
    sub->add_option("--samples", samples, "importance samples M");
    sub->add_option("--bandwidth-rule", bw_rule, "per-model | pooled | within-cell");
  }

  std::string axis = "rho";
  std::vector<double> values{0.0, 0.25, 0.5, 0.75, 1.0};
  auto* sw = app.add_subcommand("sweep", "grid of estimates over (tr, te) values of rho or mu");
  add_common(sw);
  sw->add_option("--axis", axis, "rho or mu");
  sw->add_option("--values", values, "axis values in [0,1]");

  auto* cmp = app.add_subcommand("compare", "baseline metrics beside the shift estimates");
  add_common(cmp);

  std::string table_path, ref = "ERM";
  bool json = false;
  std::string score_out;
  auto* sc = app.add_subcommand("score", "ranking scores of an accuracy table");
  sc->add_option("--table", table_path, "CSV: algorithm,dataset,mean,stderr[,arrow]")->required();
  sc->add_option("--ref", ref, "reference algorithm");
  sc->add_flag("--json", json, "print JSON");
  sc->add_option("-o,--out", score_out, "also write score.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (sc->parsed()) return cmd_score(table_path, ref, json, score_out, out);
    RunConfig cfg = resolve(flags);
    if (iters) cfg.mlp.iters = *iters;
    if (samples) cfg.estimator.M = *samples;
    if (!bw_rule.empty()) cfg.estimator.bandwidth_rule = parse_bandwidth_rule(bw_rule);
    cfg.estimator.validate();
    if (gen->parsed()) return cmd_generate(cfg, out);
    if (est->parsed()) return cmd_estimate(cfg, data_path, no_extractor, out);
    if (sw->parsed()) return cmd_sweep(cfg, axis, values, out);
    if (cmp->parsed()) return cmd_compare(cfg, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}

}  // namespace oodshift::cli
