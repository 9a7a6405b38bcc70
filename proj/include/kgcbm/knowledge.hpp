#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/scheme.hpp"

namespace kgcbm {

enum class Importance { High, Mid, Low };

inline std::string to_string(Importance i) {
  switch (i) {
    case Importance::High: return "High";
    case Importance::Mid: return "Mid";
    case Importance::Low: return "Low";
  }
  return "?";
}

inline Importance parse_importance(const std::string& s) {
  if (s == "High") return Importance::High;
  if (s == "Mid") return Importance::Mid;
  if (s == "Low") return Importance::Low;
  throw ParseError("invalid importance level '" + s + "' (expected High, Mid or Low)");
}

// (class, concept) cell of an importance matrix, 0-based.
struct Cell {
  std::size_t cls = 0;
  std::size_t concept_index = 0;
  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell&) const = default;
};

// Expert importance level of each concept for each class (K x L).
class ImportanceMatrix {
 public:
  ImportanceMatrix() = default;
  ImportanceMatrix(std::size_t classes, std::size_t concepts, std::vector<Importance> levels)
      : classes_(classes), concepts_(concepts), levels_(std::move(levels)) {
    if (levels_.size() != classes_ * concepts_) {
      throw ConfigError("importance matrix needs " + std::to_string(classes_ * concepts_) +
                        " cells, got " + std::to_string(levels_.size()));
    }
  }
  static ImportanceMatrix filled(std::size_t classes, std::size_t concepts, Importance level) {
    return {classes, concepts, std::vector<Importance>(classes * concepts, level)};
  }

  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t num_concepts() const noexcept { return concepts_; }
  Importance at(std::size_t k, std::size_t l) const { return levels_.at(k * concepts_ + l); }
  Importance& at(std::size_t k, std::size_t l) { return levels_.at(k * concepts_ + l); }

  void check_matches(const ConceptScheme& s) const {
    if (classes_ != s.num_classes() || concepts_ != s.num_concepts()) {
      throw ConfigError("importance matrix is " + std::to_string(classes_) + "x" +
                        std::to_string(concepts_) + " but scheme has " +
                        std::to_string(s.num_classes()) + " classes and " +
                        std::to_string(s.num_concepts()) + " concepts");
    }
  }

  bool operator==(const ImportanceMatrix&) const = default;

 private:
  std::size_t classes_ = 0;
  std::size_t concepts_ = 0;
  std::vector<Importance> levels_;
};

// Cells at the given level in row-major order.
inline std::vector<Cell> pairs(const ImportanceMatrix& m, Importance level) {
  std::vector<Cell> out;
  for (std::size_t k = 0; k < m.num_classes(); ++k)
    for (std::size_t l = 0; l < m.num_concepts(); ++l)
      if (m.at(k, l) == level) out.push_back({k, l});
  return out;
}

// Ablation control: shuffle each row independently. Row level counts are
// preserved, only the concepts they land on change.
inline ImportanceMatrix randomize_importance(const ImportanceMatrix& m, std::uint64_t seed) {
  ImportanceMatrix out = m;
  std::mt19937_64 rng(seed);
  std::vector<Importance> row(m.num_concepts());
  for (std::size_t k = 0; k < m.num_classes(); ++k) {
    for (std::size_t l = 0; l < m.num_concepts(); ++l) row[l] = m.at(k, l);
    std::shuffle(row.begin(), row.end(), rng);
    for (std::size_t l = 0; l < m.num_concepts(); ++l) out.at(k, l) = row[l];
  }
  return out;
}

inline nlohmann::json to_json(const ImportanceMatrix& m, const ConceptScheme& s) {
  m.check_matches(s);
  std::vector<std::string> concepts;
  for (const auto& c : s.concepts()) concepts.push_back(c.name);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < m.num_classes(); ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t l = 0; l < m.num_concepts(); ++l) row.push_back(to_string(m.at(k, l)));
    rows.push_back(row);
  }
  return {{"format_version", kFormatVersion},
          {"classes", s.class_names()},
          {"concepts", concepts},
          {"importance", rows}};
}

// Rows and columns are matched by name, so file order may differ from the
// scheme; the result is always in scheme order.
inline ImportanceMatrix importance_from_json(const nlohmann::json& j, const ConceptScheme& s) {
  check_format_version(j, "knowledge");
  try {
    const auto classes = j.at("classes").get<std::vector<std::string>>();
    const auto concepts = j.at("concepts").get<std::vector<std::string>>();
    const auto& rows = j.at("importance");
    if (classes.size() != s.num_classes())
      throw ParseError("knowledge: " + std::to_string(classes.size()) + " classes, scheme has " +
                       std::to_string(s.num_classes()));
    if (concepts.size() != s.num_concepts())
      throw ParseError("knowledge: " + std::to_string(concepts.size()) + " concepts, scheme has " +
                       std::to_string(s.num_concepts()));
    if (!rows.is_array() || rows.size() != classes.size())
      throw ParseError("knowledge: expected " + std::to_string(classes.size()) + " importance rows");

    std::vector<std::size_t> col_of(concepts.size());
    std::vector<bool> seen_col(s.num_concepts(), false);
    for (std::size_t c = 0; c < concepts.size(); ++c) {
      col_of[c] = s.concept_index(concepts[c]);
      if (seen_col[col_of[c]]) throw ParseError("knowledge: duplicate concept '" + concepts[c] + "'");
      seen_col[col_of[c]] = true;
    }
    std::vector<Importance> levels(s.num_classes() * s.num_concepts());
    std::vector<bool> seen_row(s.num_classes(), false);
    for (std::size_t r = 0; r < classes.size(); ++r) {
      const std::size_t k = s.class_index(classes[r]);
      if (seen_row[k]) throw ParseError("knowledge: duplicate class '" + classes[r] + "'");
      seen_row[k] = true;
      const auto& row = rows[r];
      if (!row.is_array() || row.size() != concepts.size()) {
        throw ParseError("knowledge: row for class '" + classes[r] + "' has " +
                         std::to_string(row.is_array() ? row.size() : 0) + " cells, expected " +
                         std::to_string(concepts.size()));
      }
      for (std::size_t c = 0; c < concepts.size(); ++c) {
        if (!row[c].is_string())
          throw ParseError("knowledge: cell (" + classes[r] + ", " + concepts[c] + ") is not a string");
        levels[k * s.num_concepts() + col_of[c]] = parse_importance(row[c].get<std::string>());
      }
    }
    return {s.num_classes(), s.num_concepts(), std::move(levels)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("knowledge: ") + e.what());
  }
}

inline ImportanceMatrix load_importance(const std::string& path, const ConceptScheme& s) {
  try {
    return importance_from_json(read_json_file(path), s);
  } catch (const ParseError& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

inline void save_importance(const std::string& path, const ImportanceMatrix& m, const ConceptScheme& s) {
  write_json_file(path, to_json(m, s));
}

}  // namespace kgcbm
