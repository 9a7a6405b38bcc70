#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kgcbm/autodiff.hpp"
#include "kgcbm/errors.hpp"

namespace kgcbm {

inline constexpr int kFormatVersion = 1;

struct Concept {
  std::string name;
  std::vector<std::string> values;

  std::size_t cardinality() const noexcept { return values.size(); }
  bool operator==(const Concept&) const = default;
};

// Class names plus the ordered concepts whose one-hot/probability blocks are
// concatenated into the bottleneck vector.
class ConceptScheme {
 public:
  ConceptScheme() = default;
  ConceptScheme(std::vector<std::string> class_names, std::vector<Concept> concepts)
      : classes_(std::move(class_names)), concepts_(std::move(concepts)) {
    validate();
    std::size_t off = 0;
    for (const auto& c : concepts_) {
      segments_.push_back({off, c.cardinality()});
      off += c.cardinality();
    }
  }

  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t num_concepts() const noexcept { return concepts_.size(); }
  std::size_t bottleneck_width() const noexcept {
    return segments_.empty() ? 0 : segments_.back().offset + segments_.back().width;
  }

  const std::vector<std::string>& class_names() const noexcept { return classes_; }
  const std::vector<Concept>& concepts() const noexcept { return concepts_; }
  const Concept& concept_at(std::size_t l) const { return concepts_.at(l); }
  const std::vector<ad::Segment>& segments() const noexcept { return segments_; }
  ad::Segment segment(std::size_t l) const {
    if (l >= segments_.size()) {
      throw UsageError("concept index " + std::to_string(l) + " outside [0, " +
                       std::to_string(segments_.size()) + ")");
    }
    return segments_[l];
  }

  std::size_t class_index(const std::string& name) const {
    for (std::size_t k = 0; k < classes_.size(); ++k)
      if (classes_[k] == name) return k;
    throw ParseError("unknown class '" + name + "'");
  }
  std::size_t concept_index(const std::string& name) const {
    for (std::size_t l = 0; l < concepts_.size(); ++l)
      if (concepts_[l].name == name) return l;
    throw ParseError("unknown concept '" + name + "'");
  }

  bool operator==(const ConceptScheme& o) const {
    return classes_ == o.classes_ && concepts_ == o.concepts_;
  }

 private:
  void validate() const {
    if (classes_.size() < 2) throw ConfigError("scheme needs at least 2 classes");
    if (concepts_.empty()) throw ConfigError("scheme needs at least 1 concept");
    if (std::set<std::string>(classes_.begin(), classes_.end()).size() != classes_.size())
      throw ConfigError("class names must be unique");
    std::set<std::string> seen;
    for (const auto& c : concepts_) {
      if (c.cardinality() < 2)
        throw ConfigError("concept '" + c.name + "' needs at least 2 values");
      if (!seen.insert(c.name).second) throw ConfigError("duplicate concept '" + c.name + "'");
    }
  }

  std::vector<std::string> classes_;
  std::vector<Concept> concepts_;
  std::vector<ad::Segment> segments_;
};

inline nlohmann::json to_json(const ConceptScheme& s) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& c : s.concepts()) concepts.push_back({{"name", c.name}, {"values", c.values}});
  return {{"format_version", kFormatVersion}, {"classes", s.class_names()}, {"concepts", concepts}};
}

inline void check_format_version(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw ParseError(what + ": expected a JSON object");
  if (j.contains("format_version") && j.at("format_version") != kFormatVersion) {
    throw ParseError(what + ": unsupported format_version " + j.at("format_version").dump());
  }
}

// Rejects keys outside `known` so a misspelled field fails loudly instead of
// silently keeping its default.
inline void check_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                             const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ParseError(what + ": unknown key '" + key + "'");
  }
}

inline ConceptScheme scheme_from_json(const nlohmann::json& j) {
  check_format_version(j, "scheme");
  try {
    std::vector<Concept> concepts;
    for (const auto& c : j.at("concepts"))
      concepts.push_back({c.at("name").get<std::string>(), c.at("values").get<std::vector<std::string>>()});
    return ConceptScheme(j.at("classes").get<std::vector<std::string>>(), std::move(concepts));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scheme: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

inline ConceptScheme load_scheme(const std::string& path) {
  return scheme_from_json(read_json_file(path));
}

inline void save_scheme(const std::string& path, const ConceptScheme& s) {
  write_json_file(path, to_json(s));
}

}  // namespace kgcbm
