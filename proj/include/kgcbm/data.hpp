#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/knowledge.hpp"
#include "kgcbm/scheme.hpp"
#include "kgcbm/tensor.hpp"

namespace kgcbm {

enum class Domain { InDomain, OutOfDomain };
enum class Split { Train, Val, Test };

inline std::string to_string(Domain d) { return d == Domain::InDomain ? "in_domain" : "out_of_domain"; }
inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}
inline Domain parse_domain(std::string_view s) {
  if (s == "in_domain") return Domain::InDomain;
  if (s == "out_of_domain") return Domain::OutOfDomain;
  throw ParseError("unknown domain '" + std::string(s) + "'");
}
inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

struct Sample {
  std::vector<double> features;
  std::vector<int> concepts;  // value index per concept
  int label = 0;
};

struct Dataset {
  ConceptScheme scheme;
  std::vector<Sample> samples;
  Domain domain = Domain::InDomain;
  Split split = Split::Train;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t feature_width() const noexcept {
    return samples.empty() ? 0 : samples.front().features.size();
  }

  void validate() const {
    if (samples.empty()) throw ConfigError("dataset has no samples");
    const std::size_t F = feature_width();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      auto where = [&] { return "sample " + std::to_string(i) + ": "; };
      if (s.features.size() != F) throw ConfigError(where() + "ragged feature vector");
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= scheme.num_classes())
        throw ConfigError(where() + "class index out of range");
      if (s.concepts.size() != scheme.num_concepts())
        throw ConfigError(where() + "wrong number of concept values");
      for (std::size_t l = 0; l < s.concepts.size(); ++l)
        if (s.concepts[l] < 0 ||
            static_cast<std::size_t>(s.concepts[l]) >= scheme.concept_at(l).cardinality())
          throw ConfigError(where() + "value index out of range for concept '" +
                            scheme.concept_at(l).name + "'");
      for (double f : s.features)
        if (!std::isfinite(f)) throw ConfigError(where() + "non-finite feature");
    }
  }
};

// ---- seeding ---------------------------------------------------------------

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Independent stream key for (seed, a, b, c); used so each sample draws from
// its own generator and results do not depend on generation order.
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                std::uint64_t c = 0) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ a);
  h = detail::splitmix64(h ^ b);
  return detail::splitmix64(h ^ c);
}

// ---- mini-batches ----------------------------------------------------------

// Shuffled index batches, deterministic in (seed, epoch); the last batch may be short.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw UsageError("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(stream_key(seed, 0xba7c4, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size)
    out.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& d, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  return batches(d.size(), batch_size, seed, epoch);
}

// ---- batch assembly --------------------------------------------------------

// Features of the selected samples as a batch x F matrix.
inline Tensor feature_matrix(const Dataset& d, std::span<const std::size_t> idx) {
  const std::size_t F = d.feature_width();
  Tensor out(Shape{idx.size(), F});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& f = d.samples.at(idx[r]).features;
    std::copy(f.begin(), f.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * F));
  }
  return out;
}

// Ground-truth concept blocks (batch x D), one 1 per concept segment.
inline Tensor concept_onehot(const Dataset& d, std::span<const std::size_t> idx) {
  Tensor out(Shape{idx.size(), d.scheme.bottleneck_width()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& c = d.samples.at(idx[r]).concepts;
    for (std::size_t l = 0; l < c.size(); ++l)
      out.at(r, d.scheme.segment(l).offset + static_cast<std::size_t>(c[l])) = 1.0;
  }
  return out;
}

inline std::vector<int> labels_of(const Dataset& d, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(d.samples.at(i).label);
  return out;
}

// Row-major batch x L concept value indices.
inline std::vector<int> concept_labels_of(const Dataset& d, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size() * d.scheme.num_concepts());
  for (auto i : idx) {
    const auto& c = d.samples.at(i).concepts;
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

inline std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// ---- synthetic benchmark ---------------------------------------------------

enum class ConceptRole { High, Mid, Low };

inline std::string to_string(ConceptRole r) {
  switch (r) {
    case ConceptRole::High: return "high";
    case ConceptRole::Mid: return "mid";
    case ConceptRole::Low: return "low";
  }
  return "?";
}

struct SynthConcept {
  std::string name;
  std::size_t cardinality = 2;
  ConceptRole role = ConceptRole::Mid;
};

// High concepts are a function of the class. Mid concepts follow the class
// with probability `mid_agreement`, else uniform. Low concepts take their
// class-linked value with probability rho (rho_in in-domain, rho_out out of
// domain), otherwise one of the other values uniformly; rho = 1/N makes them
// independent of the class. Features are the concatenated one-hot blocks
// plus Gaussian noise; out-of-domain features also get a per-dimension affine
// jitter drawn once from the seed.
struct SynthConfig {
  std::size_t num_classes = 5;
  std::vector<SynthConcept> concepts;
  std::size_t n_train = 8000;
  std::size_t n_val = 600;
  std::size_t n_test_in = 1500;
  std::size_t n_test_ood = 1500;
  double noise_sigma = 0.1;
  double rho_in = 0.9;
  std::optional<double> rho_out;  // unset: 1 / N_l for each Low concept
  double mid_agreement = 0.7;
  double jitter_scale_min = 0.9;
  double jitter_scale_max = 1.1;
  double jitter_offset_min = -0.05;
  double jitter_offset_max = 0.05;
  std::uint64_t seed = 2024;

  // K=5, L=11: three binary High, four binary Mid and four ternary Low concepts.
  static SynthConfig defaults() {
    SynthConfig c;
    const std::pair<ConceptRole, std::size_t> layout[] = {
        {ConceptRole::High, 2}, {ConceptRole::High, 2}, {ConceptRole::High, 2},
        {ConceptRole::Mid, 2},  {ConceptRole::Mid, 2},  {ConceptRole::Mid, 2},
        {ConceptRole::Mid, 2},  {ConceptRole::Low, 3},  {ConceptRole::Low, 3},
        {ConceptRole::Low, 3},  {ConceptRole::Low, 3}};
    std::size_t counts[3] = {0, 0, 0};
    for (auto [role, card] : layout) {
      const auto r = static_cast<std::size_t>(role);
      c.concepts.push_back({to_string(role) + "_" + std::to_string(counts[r]++), card, role});
    }
    return c;
  }

  std::size_t count(Domain d, Split s) const {
    if (d == Domain::OutOfDomain) return n_test_ood;
    switch (s) {
      case Split::Train: return n_train;
      case Split::Val: return n_val;
      case Split::Test: return n_test_in;
    }
    return 0;
  }

  double rho(Domain d, std::size_t cardinality) const {
    if (d == Domain::InDomain) return rho_in;
    return rho_out ? *rho_out : 1.0 / static_cast<double>(cardinality);
  }

  void validate() const {
    if (num_classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (concepts.empty()) throw ConfigError("synth: need at least 1 concept");
    for (const auto& c : concepts)
      if (c.cardinality < 2) throw ConfigError("synth: concept '" + c.name + "' needs cardinality >= 2");
    auto unit = [](double v, const char* what) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("synth: ") + what + " must lie in [0, 1]");
    };
    unit(rho_in, "rho_in");
    if (rho_out) unit(*rho_out, "rho_out");
    unit(mid_agreement, "mid_agreement");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise sigma must be nonnegative");
    if (n_train < 1 || n_val < 1 || n_test_in < 1 || n_test_ood < 1)
      throw ConfigError("synth: every split count must be at least 1");
    if (jitter_scale_min > jitter_scale_max || jitter_offset_min > jitter_offset_max)
      throw ConfigError("synth: jitter ranges must be ordered");
  }
};

inline nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& s : c.concepts)
    concepts.push_back({{"name", s.name}, {"cardinality", s.cardinality}, {"role", to_string(s.role)}});
  return {{"format_version", kFormatVersion},
          {"num_classes", c.num_classes},
          {"concepts", concepts},
          {"counts", {{"train", c.n_train}, {"val", c.n_val}, {"test_in", c.n_test_in}, {"test_ood", c.n_test_ood}}},
          {"noise_sigma", c.noise_sigma},
          {"rho_in", c.rho_in},
          {"rho_out", c.rho_out ? nlohmann::json(*c.rho_out) : nlohmann::json(nullptr)},
          {"mid_agreement", c.mid_agreement},
          {"jitter_scale", {c.jitter_scale_min, c.jitter_scale_max}},
          {"jitter_offset", {c.jitter_offset_min, c.jitter_offset_max}},
          {"seed", c.seed}};
}

// Missing keys keep their defaults, so a config file may override only what it needs.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  check_format_version(j, "synth config");
  check_known_keys(j,
                   {"format_version", "num_classes", "concepts", "counts", "noise_sigma", "rho_in", "rho_out",
                    "mid_agreement", "jitter_scale", "jitter_offset", "seed"},
                   "synth config");
  if (j.contains("counts")) check_known_keys(j.at("counts"), {"train", "val", "test_in", "test_ood"}, "synth config counts");
  SynthConfig c = SynthConfig::defaults();
  try {
    c.num_classes = j.value("num_classes", c.num_classes);
    if (j.contains("concepts")) {
      c.concepts.clear();
      for (const auto& s : j.at("concepts")) {
        const auto role = s.at("role").get<std::string>();
        ConceptRole r;
        if (role == "high") r = ConceptRole::High;
        else if (role == "mid") r = ConceptRole::Mid;
        else if (role == "low") r = ConceptRole::Low;
        else throw ParseError("synth config: unknown role '" + role + "'");
        c.concepts.push_back({s.at("name").get<std::string>(), s.at("cardinality").get<std::size_t>(), r});
      }
    }
    if (j.contains("counts")) {
      const auto& n = j.at("counts");
      c.n_train = n.value("train", c.n_train);
      c.n_val = n.value("val", c.n_val);
      c.n_test_in = n.value("test_in", c.n_test_in);
      c.n_test_ood = n.value("test_ood", c.n_test_ood);
    }
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.rho_in = j.value("rho_in", c.rho_in);
    if (j.contains("rho_out")) {
      if (j.at("rho_out").is_null()) c.rho_out.reset();
      else c.rho_out = j.at("rho_out").get<double>();
    }
    c.mid_agreement = j.value("mid_agreement", c.mid_agreement);
    if (j.contains("jitter_scale")) {
      c.jitter_scale_min = j.at("jitter_scale").at(0).get<double>();
      c.jitter_scale_max = j.at("jitter_scale").at(1).get<double>();
    }
    if (j.contains("jitter_offset")) {
      c.jitter_offset_min = j.at("jitter_offset").at(0).get<double>();
      c.jitter_offset_max = j.at("jitter_offset").at(1).get<double>();
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ConceptScheme synth_scheme(const SynthConfig& c) {
  std::vector<std::string> classes;
  for (std::size_t k = 0; k < c.num_classes; ++k) classes.push_back("class_" + std::to_string(k));
  std::vector<Concept> concepts;
  for (const auto& s : c.concepts) {
    Concept con{s.name, {}};
    for (std::size_t v = 0; v < s.cardinality; ++v) con.values.push_back("v" + std::to_string(v));
    concepts.push_back(std::move(con));
  }
  return ConceptScheme(std::move(classes), std::move(concepts));
}

// Every class row marks High concepts High, Mid Mid and Low Low.
inline ImportanceMatrix synth_importance(const SynthConfig& c) {
  std::vector<Importance> levels;
  for (std::size_t k = 0; k < c.num_classes; ++k)
    for (const auto& s : c.concepts)
      levels.push_back(s.role == ConceptRole::High  ? Importance::High
                       : s.role == ConceptRole::Mid ? Importance::Mid
                                                    : Importance::Low);
  return {c.num_classes, c.concepts.size(), std::move(levels)};
}

// Value of each High concept for each class (K x #High). Codes are picked
// greedily in lexicographic order, asking for the largest Hamming distance
// between classes that still yields K codes, so a single misread High concept
// lands on as few other classes as the cardinalities allow.
inline std::vector<std::vector<int>> high_value_table(const SynthConfig& c) {
  std::vector<std::size_t> cards;
  for (const auto& s : c.concepts)
    if (s.role == ConceptRole::High) cards.push_back(s.cardinality);
  std::size_t space = 1;
  for (auto n : cards) space *= n;
  auto code = [&](std::size_t index) {
    std::vector<int> v(cards.size());
    for (std::size_t h = cards.size(); h-- > 0;) {
      v[h] = static_cast<int>(index % cards[h]);
      index /= cards[h];
    }
    return v;
  };
  auto distance = [](const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
  };
  for (std::size_t min_dist = cards.size(); min_dist >= 1; --min_dist) {
    std::vector<std::vector<int>> table;
    for (std::size_t i = 0; i < space && table.size() < c.num_classes; ++i) {
      auto v = code(i);
      bool ok = true;
      for (const auto& t : table) ok = ok && distance(t, v) >= min_dist;
      if (ok) table.push_back(std::move(v));
    }
    if (table.size() == c.num_classes) return table;
  }
  throw ConfigError("synth: High concepts cannot encode " + std::to_string(c.num_classes) +
                    " classes injectively");
}

inline Dataset generate(const SynthConfig& cfg, Domain domain, Split split = Split::Test) {
  cfg.validate();
  const auto table = high_value_table(cfg);
  ConceptScheme scheme = synth_scheme(cfg);
  const std::size_t L = cfg.concepts.size();
  const std::size_t F = scheme.bottleneck_width();

  std::vector<double> jitter_scale(F, 1.0), jitter_offset(F, 0.0);
  if (domain == Domain::OutOfDomain) {
    std::mt19937_64 rng(stream_key(cfg.seed, 0x57a1, 0));
    std::uniform_real_distribution<double> sd(cfg.jitter_scale_min, cfg.jitter_scale_max);
    std::uniform_real_distribution<double> od(cfg.jitter_offset_min, cfg.jitter_offset_max);
    for (std::size_t j = 0; j < F; ++j) {
      jitter_scale[j] = cfg.jitter_scale_max > cfg.jitter_scale_min ? sd(rng) : cfg.jitter_scale_min;
      jitter_offset[j] = cfg.jitter_offset_max > cfg.jitter_offset_min ? od(rng) : cfg.jitter_offset_min;
    }
  }

  Dataset ds{scheme, {}, domain, split};
  const std::size_t n = cfg.count(domain, split);
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(stream_key(cfg.seed, static_cast<std::uint64_t>(domain) + 1,
                                   static_cast<std::uint64_t>(split) + 1, i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    Sample s;
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, cfg.num_classes - 1)(rng);
    s.label = static_cast<int>(k);
    s.concepts.resize(L);
    std::size_t h = 0;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& c = cfg.concepts[l];
      const int N = static_cast<int>(c.cardinality);
      const int linked = static_cast<int>((k + l) % c.cardinality);
      switch (c.role) {
        case ConceptRole::High:
          s.concepts[l] = table[k][h++];
          break;
        case ConceptRole::Mid:
          s.concepts[l] = unit(rng) < cfg.mid_agreement ? linked
                                                        : std::uniform_int_distribution<int>(0, N - 1)(rng);
          break;
        case ConceptRole::Low: {
          if (unit(rng) < cfg.rho(domain, c.cardinality)) {
            s.concepts[l] = linked;
          } else {
            const int other = std::uniform_int_distribution<int>(0, N - 2)(rng);
            s.concepts[l] = other >= linked ? other + 1 : other;
          }
          break;
        }
      }
    }
    s.features.assign(F, 0.0);
    for (std::size_t l = 0; l < L; ++l)
      s.features[scheme.segment(l).offset + static_cast<std::size_t>(s.concepts[l])] = 1.0;
    for (std::size_t j = 0; j < F; ++j) {
      if (cfg.noise_sigma > 0.0) s.features[j] += cfg.noise_sigma * noise(rng);
      s.features[j] = jitter_scale[j] * s.features[j] + jitter_offset[j];
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---- CSV -------------------------------------------------------------------
//
//   # format_version=1 domain=in_domain
//   split,class,concept_1,...,concept_L,f_0,...,f_{F-1}
//   train,3,0,2,...,0.93,...
//
// class and concept columns hold 0-based indices into the scheme.

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "# format_version=" << kFormatVersion << " domain=" << to_string(d.domain) << '\n';
  out << "split,class";
  for (std::size_t l = 0; l < d.scheme.num_concepts(); ++l) out << ",concept_" << l + 1;
  for (std::size_t j = 0; j < d.feature_width(); ++j) out << ",f_" << j;
  out << '\n';
  const std::string split = to_string(d.split);
  for (const auto& s : d.samples) {
    out << split << ',' << s.label;
    for (int v : s.concepts) out << ',' << v;
    for (double f : s.features) out << ',' << format_double(f);
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

namespace detail {
inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}
}  // namespace detail

inline Dataset load_dataset(const std::string& path, const ConceptScheme& scheme) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  auto fail = [&](std::size_t line, const std::string& msg) -> ParseError {
    return ParseError("'" + path + "' line " + std::to_string(line) + ": " + msg);
  };
  Dataset d{scheme, {}, Domain::InDomain, Split::Train};
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t F = 0;
  std::optional<Split> split;
  const std::size_t L = scheme.num_concepts();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string kv;
      while (meta >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "format_version" && val != std::to_string(kFormatVersion))
          throw fail(lineno, "unsupported format_version " + val);
        if (key == "domain") {
          try {
            d.domain = parse_domain(val);
          } catch (const ParseError& e) {
            throw fail(lineno, e.what());
          }
        }
      }
      continue;
    }
    const auto cells = detail::split_csv(line);
    if (!have_header) {
      if (cells.size() < 2 + L || cells[0] != "split" || cells[1] != "class")
        throw fail(lineno, "header must start with split,class and list " + std::to_string(L) + " concept columns");
      for (std::size_t l = 0; l < L; ++l)
        if (cells[2 + l] != "concept_" + std::to_string(l + 1))
          throw fail(lineno, "expected column concept_" + std::to_string(l + 1));
      F = cells.size() - 2 - L;
      if (F == 0) throw fail(lineno, "no feature columns");
      have_header = true;
      continue;
    }
    if (cells.size() != 2 + L + F) {
      throw fail(lineno, "expected " + std::to_string(2 + L + F) + " fields, got " + std::to_string(cells.size()));
    }
    Split row_split;
    try {
      row_split = parse_split(cells[0]);
    } catch (const ParseError& e) {
      throw fail(lineno, e.what());
    }
    if (split && *split != row_split) throw fail(lineno, "rows from several splits in one file");
    split = row_split;
    Sample s;
    if (!detail::parse_number(cells[1], s.label) || s.label < 0 ||
        static_cast<std::size_t>(s.label) >= scheme.num_classes())
      throw fail(lineno, "unknown class index '" + std::string(cells[1]) + "'");
    s.concepts.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      int v = -1;
      if (!detail::parse_number(cells[2 + l], v) || v < 0 ||
          static_cast<std::size_t>(v) >= scheme.concept_at(l).cardinality())
        throw fail(lineno, "unknown value index '" + std::string(cells[2 + l]) + "' for concept '" +
                               scheme.concept_at(l).name + "'");
      s.concepts[l] = v;
    }
    s.features.resize(F);
    for (std::size_t j = 0; j < F; ++j) {
      if (!detail::parse_number(cells[2 + L + j], s.features[j]) || !std::isfinite(s.features[j]))
        throw fail(lineno, "non-numeric feature f_" + std::to_string(j) + " '" +
                               std::string(cells[2 + L + j]) + "'");
    }
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty()) throw ParseError("'" + path + "': no samples");
  d.split = *split;
  return d;
}

inline Dataset load_dataset(const std::string& data_path, const std::string& scheme_path) {
  return load_dataset(data_path, load_scheme(scheme_path));
}

}  // namespace kgcbm
