#pragma once

// Command implementations behind the `kgcbm` executable. Each command takes a
// plain options struct so tests can drive it without a process boundary.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "kgcbm/align.hpp"
#include "kgcbm/cbm.hpp"
#include "kgcbm/data.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/eval.hpp"
#include "kgcbm/knowledge.hpp"
#include "kgcbm/trainer.hpp"

namespace kgcbm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kOutputRootEnv = "KGCBM_OUTPUT_ROOT";

// $KGCBM_OUTPUT_ROOT/<leaf>, or ./runs/<leaf> when the variable is unset.
inline std::string default_output(const std::string& leaf) {
  const char* root = std::getenv(kOutputRootEnv);
  return (fs::path(root && *root ? root : "runs") / leaf).string();
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create directory '" + dir + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

// ---- synth -----------------------------------------------------------------

struct SynthOptions {
  std::string config_path;  // empty: built-in defaults
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

struct SynthFiles {
  static constexpr const char* scheme = "scheme.json";
  static constexpr const char* knowledge = "knowledge.json";
  static constexpr const char* config = "synth_config.json";
  static constexpr const char* train = "train.csv";
  static constexpr const char* val = "val.csv";
  static constexpr const char* test_in = "test_in.csv";
  static constexpr const char* test_ood = "test_ood.csv";
};

inline void cmd_synth(const SynthOptions& o, std::ostream& log = std::cout) {
  SynthConfig cfg = o.config_path.empty() ? SynthConfig::defaults()
                                          : synth_config_from_json(read_json_file(o.config_path));
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  const std::string out = o.out_dir.empty() ? default_output("synth") : o.out_dir;
  ensure_dir(out);
  const ConceptScheme scheme = synth_scheme(cfg);
  auto path = [&](const char* f) { return (fs::path(out) / f).string(); };
  write_json_file(path(SynthFiles::config), to_json(cfg));
  save_scheme(path(SynthFiles::scheme), scheme);
  save_importance(path(SynthFiles::knowledge), synth_importance(cfg), scheme);
  const std::pair<const char*, std::pair<Domain, Split>> parts[] = {
      {SynthFiles::train, {Domain::InDomain, Split::Train}},
      {SynthFiles::val, {Domain::InDomain, Split::Val}},
      {SynthFiles::test_in, {Domain::InDomain, Split::Test}},
      {SynthFiles::test_ood, {Domain::OutOfDomain, Split::Test}}};
  for (const auto& [file, tag] : parts) {
    const Dataset d = generate(cfg, tag.first, tag.second);
    save_dataset(path(file), d);
    log << "wrote " << path(file) << " (" << d.size() << " rows)\n";
  }
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  std::string data_dir;        // holds scheme.json, train.csv, val.csv
  std::string knowledge_base;  // matrix permuted by random:<seed>; default <data>/knowledge.json
  std::string out_dir;
  TrainConfig config;
};

// Variant label used to group runs: baseline, random, or aligned.
inline std::string variant_of(const std::string& knowledge) {
  if (knowledge == "none") return "baseline";
  if (knowledge.rfind("random:", 0) == 0) return "random";
  return "aligned";
}

inline std::optional<ImportanceMatrix> resolve_knowledge(const std::string& spec, const std::string& base_path,
                                                         const ConceptScheme& scheme) {
  if (spec == "none") return std::nullopt;
  if (spec.rfind("random:", 0) == 0) {
    const std::string seed_text = spec.substr(7);
    std::uint64_t seed = 0;
    const auto [end, ec] = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), seed);
    if (seed_text.empty() || ec != std::errc() || end != seed_text.data() + seed_text.size())
      throw ConfigError("--knowledge random:<seed> needs an integer seed, got '" + spec + "'");
    return randomize_importance(load_importance(base_path, scheme), seed);
  }
  return load_importance(spec, scheme);
}

inline void cmd_train(const TrainOptions& o, std::ostream& log = std::cout) {
  o.config.validate();
  if (o.data_dir.empty()) throw ConfigError("--data is required");
  const fs::path data(o.data_dir);
  const ConceptScheme scheme = load_scheme((data / SynthFiles::scheme).string());
  const Dataset train_set = load_dataset((data / SynthFiles::train).string(), scheme);
  const Dataset val_set = load_dataset((data / SynthFiles::val).string(), scheme);
  const std::string base = o.knowledge_base.empty() ? (data / SynthFiles::knowledge).string() : o.knowledge_base;
  const auto matrix = resolve_knowledge(o.config.knowledge, base, scheme);

  TrainConfig resolved = o.config;
  if (!matrix) resolved.lambda = 0.0;
  const std::string out = o.out_dir.empty() ? default_output("run") : o.out_dir;
  ensure_dir(out);

  const TrainResult result = train(resolved, train_set, val_set, matrix);

  json snapshot{{"format_version", kFormatVersion},
                {"train_config", to_json(resolved)},
                {"variant", variant_of(resolved.knowledge)},
                {"data", o.data_dir},
                {"knowledge_base", matrix && resolved.knowledge.rfind("random:", 0) == 0 ? json(base) : json(nullptr)},
                {"importance", matrix ? to_json(*matrix, scheme) : json(nullptr)},
                {"best_epoch", result.record.best_epoch}};
  write_json_file((fs::path(out) / "config.json").string(), snapshot);
  write_text((fs::path(out) / "run.jsonl").string(), run_record_jsonl(result.record));
  save_model((fs::path(out) / "model.json").string(), result.model, snapshot);
  const auto& last = result.record.epochs.back();
  log << "trained " << variant_of(resolved.knowledge) << " (seed " << resolved.seed << ", lambda "
      << resolved.lambda << "): final total loss " << last.total << ", best epoch " << result.record.best_epoch
      << ", val macro F1 " << result.record.epochs[result.record.best_epoch - 1].val_macro_f1 << "\n"
      << "wrote " << out << "/{model.json,run.jsonl,config.json}\n";
}

// ---- eval / audit ----------------------------------------------------------

struct EvalOptions {
  std::string model_path;
  std::string data_path;
  std::string report_path;  // empty: no file
  bool json_output = false;
};

inline json model_config(const std::string& model_path) {
  const json j = read_json_file(model_path);
  return j.contains("config") ? j.at("config") : json(nullptr);
}

inline MetricsReport cmd_eval(const EvalOptions& o, std::ostream& out = std::cout) {
  const CbmModel model = load_model(o.model_path);
  const json cfg = model_config(o.model_path);
  const Dataset d = load_dataset(o.data_path, model.scheme());
  std::uint64_t seed = 0;
  if (cfg.is_object() && cfg.contains("train_config")) seed = cfg["train_config"].value("seed", std::uint64_t{0});
  const MetricsReport r = evaluate(model, d, seed);
  json report = to_json(r);
  report["data"] = o.data_path;
  report["model_config"] = cfg;
  if (!o.report_path.empty()) {
    const auto parent = fs::path(o.report_path).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
    write_json_file(o.report_path, report);
  }
  if (o.json_output) {
    out << report.dump(2) << '\n';
  } else {
    out << std::fixed << std::setprecision(4);
    out << "data      " << o.data_path << " (" << to_string(r.domain) << ", n=" << r.n << ")\n";
    out << "macro F1  " << r.macro_f1 << '\n';
    for (std::size_t k = 0; k < r.per_class_f1.size(); ++k)
      out << "  F1[" << model.scheme().class_names()[k] << "] " << r.per_class_f1[k] << '\n';
    for (std::size_t l = 0; l < r.concept_accuracy.size(); ++l)
      out << "  acc[" << model.scheme().concept_at(l).name << "] " << r.concept_accuracy[l] << '\n';
    out.unsetf(std::ios::fixed);
  }
  return r;
}

struct AuditOptions {
  std::string model_path;
  std::string data_path;
  std::string knowledge_path;
  std::string out_dir;
  bool json_output = false;
};

inline HeatmapReport cmd_audit(const AuditOptions& o, std::ostream& out = std::cout) {
  const CbmModel model = load_model(o.model_path);
  const Dataset d = load_dataset(o.data_path, model.scheme());
  const ImportanceMatrix m = load_importance(o.knowledge_path, model.scheme());
  const HeatmapReport r = audit_delta_y(model, d, m);
  const std::string dir = o.out_dir.empty() ? default_output("audit") : o.out_dir;
  ensure_dir(dir);
  json report = to_json(r, model.scheme());
  report["data"] = o.data_path;
  report["knowledge"] = o.knowledge_path;
  report["model_config"] = model_config(o.model_path);
  write_json_file((fs::path(dir) / "heatmap.json").string(), report);
  write_text((fs::path(dir) / "heatmap.csv").string(), heatmap_csv(r, model.scheme()));
  if (o.json_output) {
    out << report.dump(2) << '\n';
  } else {
    const auto& s = model.scheme();
    out << "mean DeltaY (rows: classes, cols: concepts; * High, . Low)\n";
    out << std::fixed << std::setprecision(2);
    for (std::size_t k = 0; k < s.num_classes(); ++k) {
      out << std::setw(14) << s.class_names()[k];
      for (std::size_t l = 0; l < s.num_concepts(); ++l) {
        const char mark = m.at(k, l) == Importance::High ? '*' : m.at(k, l) == Importance::Low ? '.' : ' ';
        out << ' ' << r.mean_delta_y.at(k, l) << mark;
      }
      out << '\n';
    }
    out << std::setprecision(4) << "alignment score " << r.alignment_score << '\n';
    out.unsetf(std::ios::fixed);
  }
  return r;
}

// ---- compare ---------------------------------------------------------------

struct RunSummary {
  std::string dir;
  std::string variant;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> macro_f1_by_domain;
};

inline RunSummary summarize_run(const std::string& dir) {
  const json snap = read_json_file((fs::path(dir) / "config.json").string());
  check_format_version(snap, "run config");
  RunSummary s;
  s.dir = dir;
  try {
    s.variant = snap.at("variant").get<std::string>();
    s.lambda = snap.at("train_config").at("lambda").get<double>();
    s.seed = snap.at("train_config").at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError("'" + dir + "/config.json': " + e.what());
  }
  std::vector<fs::path> reports;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("metrics", 0) == 0 && entry.path().extension() == ".json") reports.push_back(entry.path());
  }
  std::sort(reports.begin(), reports.end());
  for (const auto& p : reports) {
    const MetricsReport r = metrics_from_json(read_json_file(p.string()));
    const auto domain = to_string(r.domain);
    if (s.macro_f1_by_domain.count(domain))
      throw ConfigError("run '" + dir + "' has more than one " + domain + " metrics report");
    s.macro_f1_by_domain[domain] = r.macro_f1;
  }
  if (s.macro_f1_by_domain.empty()) throw ConfigError("run '" + dir + "' has no metrics*.json reports");
  return s;
}

struct CompareCell {
  ConfidenceInterval ci;
  std::vector<double> values;
};

struct CompareRow {
  std::string variant;
  double lambda = 0.0;
  std::map<std::string, CompareCell> by_domain;
};

inline std::vector<CompareRow> aggregate(const std::vector<RunSummary>& runs) {
  auto variant_rank = [](const std::string& v) { return v == "baseline" ? 0 : v == "random" ? 1 : 2; };
  std::map<std::tuple<int, double, std::string>, std::map<std::string, std::vector<double>>> groups;
  for (const auto& r : runs)
    for (const auto& [domain, f1] : r.macro_f1_by_domain)
      groups[{variant_rank(r.variant), r.lambda, r.variant}][domain].push_back(f1);
  std::vector<CompareRow> rows;
  for (const auto& [key, domains] : groups) {
    CompareRow row{std::get<2>(key), std::get<1>(key), {}};
    for (const auto& [domain, values] : domains) {
      if (values.size() < 2) {
        throw UsageError("group " + row.variant + " (lambda " + format_double(row.lambda) + ", " + domain +
                         ") has " + std::to_string(values.size()) + " run; a confidence interval needs at least 2 seeds");
      }
      row.by_domain[domain] = {confidence_interval(values), values};
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const std::vector<CompareRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json cells = json::object();
    for (const auto& [domain, c] : r.by_domain)
      cells[domain] = {{"mean", c.ci.mean}, {"half_width", c.ci.half_width}, {"values", c.values}};
    out.push_back({{"variant", r.variant}, {"lambda", r.lambda}, {"macro_f1", cells}});
  }
  return out;
}

inline void print_table(const std::vector<CompareRow>& rows, std::ostream& out) {
  std::set<std::string> domains;
  for (const auto& r : rows)
    for (const auto& [d, c] : r.by_domain) domains.insert(d);
  out << std::left << std::setw(22) << "variant";
  for (const auto& d : domains) out << std::setw(22) << d;
  out << "\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    std::ostringstream label;
    label << r.variant << " (lambda=" << format_double(r.lambda) << ")";
    out << std::setw(22) << label.str();
    for (const auto& d : domains) {
      std::ostringstream cell;
      if (auto it = r.by_domain.find(d); it != r.by_domain.end())
        cell << std::fixed << std::setprecision(2) << 100.0 * it->second.ci.mean << " +- "
             << 100.0 * it->second.ci.half_width << " (n=" << it->second.values.size() << ")";
      else
        cell << "-";
      out << std::setw(22) << cell.str();
    }
    out << "\n";
  }
  out << "macro F1 x 100, mean +- 95% CI (" << kCiMethod << ")\n";
  out.unsetf(std::ios::fixed);
  out << std::right;
}

// A manifest lists runs to execute (train then eval) before aggregation:
//   {"format_version": 1,
//    "output_dir": "runs/bench",          // holds one directory per run
//    "synth_config": "synth.json",        // optional: data is synthesized into <output_dir>/data
//    "defaults": {...TrainConfig fields...},
//    "runs": [{"name": "...", "data": "<dir>", "knowledge": "none",
//              "config": {...}, "eval": ["test_in.csv", "test_ood.csv"]}]}
// output_dir, synth_config and data resolve against the manifest's directory.
// A run without "data" uses the synthesized set. Relative knowledge paths and
// eval files resolve against the run's data directory, since synth writes the
// matrix next to the CSVs.
struct ManifestRun {
  std::string name;
  std::string data_dir;
  std::string knowledge_base;
  TrainConfig config;
  std::vector<std::string> eval_files;
};

struct Manifest {
  std::string output_dir;
  std::string synth_config;  // empty: no synthesis step
  std::vector<ManifestRun> runs;
};

inline bool is_file_knowledge(const std::string& k) { return k != "none" && k.rfind("random:", 0) != 0; }

inline Manifest load_manifest(const std::string& path, const std::string& output_override = "") {
  const json j = read_json_file(path);
  check_format_version(j, "manifest");
  check_known_keys(j, {"format_version", "output_dir", "synth_config", "defaults", "runs"}, "manifest");
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [](const fs::path& root, const fs::path& p) {
    return (p.is_absolute() ? p : root / p).lexically_normal().string();
  };
  Manifest m;
  std::set<std::string> names;
  try {
    m.output_dir = !output_override.empty() ? output_override : resolve(base, j.at("output_dir").get<std::string>());
    if (j.contains("synth_config")) m.synth_config = resolve(base, j.at("synth_config").get<std::string>());
    const json defaults = j.value("defaults", json::object());
    if (j.at("runs").empty()) throw ConfigError("manifest '" + path + "' lists no runs");
    for (const auto& r : j.at("runs")) {
      check_known_keys(r, {"name", "data", "knowledge", "knowledge_base", "config", "eval"}, "manifest run");
      ManifestRun run;
      run.name = r.at("name").get<std::string>();
      if (run.name.empty() || run.name.find('/') != std::string::npos)
        throw ConfigError("manifest: run name '" + run.name + "' must be a plain directory name");
      if (!names.insert(run.name).second) throw ConfigError("manifest: duplicate run name '" + run.name + "'");
      if (r.contains("data")) run.data_dir = resolve(base, r.at("data").get<std::string>());
      else if (!m.synth_config.empty()) run.data_dir = (fs::path(m.output_dir) / "data").string();
      else throw ConfigError("manifest run '" + run.name + "' has no data directory");
      json cfg = defaults;
      const json overrides = r.value("config", json::object());
      for (const auto& [key, value] : overrides.items()) cfg[key] = value;
      if (r.contains("knowledge")) cfg["knowledge"] = r.at("knowledge");
      if (cfg.contains("knowledge") && is_file_knowledge(cfg["knowledge"].get<std::string>()))
        cfg["knowledge"] = resolve(run.data_dir, cfg["knowledge"].get<std::string>());
      run.config = train_config_from_json(cfg);
      if (r.contains("knowledge_base")) run.knowledge_base = resolve(run.data_dir, r.at("knowledge_base").get<std::string>());
      for (const auto& e : r.value("eval", std::vector<std::string>{SynthFiles::test_in, SynthFiles::test_ood}))
        run.eval_files.push_back(resolve(run.data_dir, e));
      m.runs.push_back(std::move(run));
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest '" + path + "': " + e.what());
  }
  // Everything not produced by the synthesis step must exist before any training starts.
  const std::string synth_dir = m.synth_config.empty() ? "" : (fs::path(m.output_dir) / "data").string();
  if (!m.synth_config.empty() && !fs::exists(m.synth_config))
    throw ConfigError("manifest: missing synth config " + m.synth_config);
  for (const auto& r : m.runs) {
    if (r.data_dir == synth_dir) continue;
    for (const char* f : {SynthFiles::scheme, SynthFiles::train, SynthFiles::val})
      if (!fs::exists(fs::path(r.data_dir) / f))
        throw ConfigError("manifest run '" + r.name + "': missing " + (fs::path(r.data_dir) / f).string());
    for (const auto& e : r.eval_files)
      if (!fs::exists(e)) throw ConfigError("manifest run '" + r.name + "': missing " + e);
    if (is_file_knowledge(r.config.knowledge) && !fs::exists(r.config.knowledge))
      throw ConfigError("manifest run '" + r.name + "': missing knowledge file " + r.config.knowledge);
  }
  return m;
}

struct CompareOptions {
  std::vector<std::string> run_dirs;
  std::string manifest_path;
  std::string output_dir;  // overrides the manifest's output_dir
  std::string out_path;  // optional JSON file
  bool json_output = false;
};

inline std::vector<CompareRow> cmd_compare(const CompareOptions& o, std::ostream& out = std::cout,
                                           std::ostream& log = std::cerr) {
  std::vector<std::string> dirs = o.run_dirs;
  if (!o.manifest_path.empty()) {
    const Manifest m = load_manifest(o.manifest_path, o.output_dir);
    if (!m.synth_config.empty()) {
      const std::string data = (fs::path(m.output_dir) / "data").string();
      if (!fs::exists(fs::path(data) / SynthFiles::test_ood)) {
        log << "synthesizing " << data << "\n";
        std::ostringstream sink;
        cmd_synth({m.synth_config, data, std::nullopt}, sink);
      }
    }
    for (const auto& run : m.runs) {
      const std::string dir = (fs::path(m.output_dir) / run.name).string();
      if (!fs::exists(fs::path(dir) / "model.json")) {
        log << "[" << run.name << "] training\n";
        std::ostringstream sink;
        cmd_train({run.data_dir, run.knowledge_base, dir, run.config}, sink);
        log << sink.str();
      }
      for (const auto& e : run.eval_files) {
        const std::string report =
            (fs::path(dir) / ("metrics_" + fs::path(e).stem().string() + ".json")).string();
        std::ostringstream sink;
        cmd_eval({(fs::path(dir) / "model.json").string(), e, report, false}, sink);
      }
      dirs.push_back(dir);
    }
  }
  if (dirs.empty()) throw UsageError("compare needs run directories or --manifest");
  std::vector<RunSummary> runs;
  for (const auto& d : dirs) runs.push_back(summarize_run(d));
  const auto rows = aggregate(runs);
  json doc{{"format_version", kFormatVersion}, {"ci_method", kCiMethod}, {"runs", dirs}, {"rows", to_json(rows)}};
  if (!o.out_path.empty()) write_json_file(o.out_path, doc);
  if (o.json_output) out << doc.dump(2) << '\n';
  else print_table(rows, out);
  return rows;
}

}  // namespace kgcbm::cli
