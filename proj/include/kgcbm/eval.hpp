#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgcbm/align.hpp"
#include "kgcbm/cbm.hpp"
#include "kgcbm/data.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/knowledge.hpp"

namespace kgcbm {

struct F1Scores {
  double macro = 0.0;
  std::vector<double> per_class;
};

// Per-class F1 from a one-vs-rest count; F1 = 0 when precision + recall = 0.
// The macro average runs over all K classes, including ones absent from both
// label vectors.
inline F1Scores macro_f1(std::span<const int> y_true, std::span<const int> y_pred, std::size_t num_classes) {
  if (y_true.size() != y_pred.size()) throw UsageError("macro_f1: label vectors differ in length");
  if (y_true.empty()) throw UsageError("macro_f1: no labels");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes)
      throw UsageError("macro_f1: label outside [0, " + std::to_string(num_classes) + ")");
    if (t == p) {
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  F1Scores out;
  out.per_class.resize(num_classes, 0.0);
  double sum = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double precision = tp[k] + fp[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fp[k]) : 0.0;
    const double recall = tp[k] + fn[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fn[k]) : 0.0;
    out.per_class[k] = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    sum += out.per_class[k];
  }
  out.macro = sum / static_cast<double>(num_classes);
  return out;
}

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

inline constexpr const char* kCiMethod = "normal approximation: mean +- 1.96 * sample_std / sqrt(n)";

inline ConfidenceInterval confidence_interval(std::span<const double> values) {
  if (values.size() < 2) throw UsageError("confidence interval needs at least 2 runs");
  const double n = static_cast<double>(values.size());
  // Shifted by the first value so identical inputs give exactly zero spread.
  const double ref = values[0];
  double shift = 0.0;
  for (double v : values) shift += v - ref;
  const double mean = ref + shift / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n)};
}

// ---- model evaluation ------------------------------------------------------

struct Predictions {
  Tensor concepts;  // n x D
  Tensor classes;   // n x K
};

inline Predictions predict(const CbmModel& model, const Dataset& d, std::size_t batch_size = 512) {
  if (d.scheme != model.scheme()) throw ConfigError("dataset scheme does not match the model");
  const std::size_t n = d.size(), D = model.scheme().bottleneck_width(), K = model.scheme().num_classes();
  Predictions out{Tensor(Shape{n, D}), Tensor(Shape{n, K})};
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    ad::Graph g;
    const auto bound = model.bind(g);
    ad::Var c = model.predict_concepts(g, bound, g.constant(feature_matrix(d, idx)));
    ad::Var y = model.predict_class(g, bound, c);
    const auto& cv = g.value(c).values();
    const auto& yv = g.value(y).values();
    std::copy(cv.begin(), cv.end(), out.concepts.values().begin() + static_cast<std::ptrdiff_t>(start * D));
    std::copy(yv.begin(), yv.end(), out.classes.values().begin() + static_cast<std::ptrdiff_t>(start * K));
  }
  return out;
}

inline std::vector<int> argmax_rows(const Tensor& t, ad::Segment seg) {
  std::vector<int> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < seg.width; ++j)
      if (t.at(r, seg.offset + j) > t.at(r, seg.offset + best)) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

struct MetricsReport {
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<double> concept_accuracy;
  std::size_t n = 0;
  Domain domain = Domain::InDomain;
  std::uint64_t seed = 0;
};

inline MetricsReport evaluate(const CbmModel& model, const Dataset& d, std::uint64_t seed = 0) {
  const auto pred = predict(model, d);
  const auto& scheme = model.scheme();
  std::vector<int> truth(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) truth[i] = d.samples[i].label;
  const auto yhat = argmax_rows(pred.classes, {0, scheme.num_classes()});
  const auto f1 = macro_f1(truth, yhat, scheme.num_classes());
  MetricsReport r{f1.macro, f1.per_class, {}, d.size(), d.domain, seed};
  for (std::size_t l = 0; l < scheme.num_concepts(); ++l) {
    const auto chat = argmax_rows(pred.concepts, scheme.segment(l));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) hits += chat[i] == d.samples[i].concepts[l];
    r.concept_accuracy.push_back(static_cast<double>(hits) / static_cast<double>(d.size()));
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"format_version", kFormatVersion}, {"macro_f1", r.macro_f1},
          {"per_class_f1", r.per_class_f1},   {"concept_accuracy", r.concept_accuracy},
          {"n", r.n},                         {"domain", to_string(r.domain)},
          {"seed", r.seed}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  check_format_version(j, "metrics report");
  try {
    MetricsReport r;
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
    r.concept_accuracy = j.at("concept_accuracy").get<std::vector<double>>();
    r.n = j.at("n").get<std::size_t>();
    r.domain = parse_domain(j.at("domain").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
}

// ---- importance audit ------------------------------------------------------

struct HeatmapReport {
  Tensor mean_delta_y;  // K x L
  ImportanceMatrix importance;
  double alignment_score = 0.0;  // mean over High cells - mean over Low cells
  std::size_t n = 0;
};

// Mean DeltaY over High cells minus mean over Low cells; a level with no cells contributes 0.
inline double alignment_score(const Tensor& mean_delta_y, const ImportanceMatrix& m) {
  auto level_mean = [&](Importance level) {
    const auto cells = pairs(m, level);
    if (cells.empty()) return 0.0;
    double s = 0.0;
    for (const auto& c : cells) s += mean_delta_y.at(c.cls, c.concept_index);
    return s / static_cast<double>(cells.size());
  };
  return level_mean(Importance::High) - level_mean(Importance::Low);
}

inline HeatmapReport audit_delta_y(const CbmModel& model, const Dataset& d, const ImportanceMatrix& m,
                                   std::size_t batch_size = 512) {
  if (d.scheme != model.scheme()) throw ConfigError("audit: dataset scheme does not match the model");
  m.check_matches(model.scheme());
  if (d.size() == 0) throw ConfigError("audit: empty dataset");
  const std::size_t K = model.scheme().num_classes(), L = model.scheme().num_concepts();
  Tensor sum(Shape{K, L});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor c = model.predict_concepts(feature_matrix(d, idx));
    const DeltaY dy = delta_y(model, c);
    for (std::size_t i = 0; i < dy.samples(); ++i)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < L; ++l) sum.at(k, l) += dy.at(i, k, l);
  }
  for (auto& v : sum.values()) v /= static_cast<double>(d.size());
  HeatmapReport r{sum, m, 0.0, d.size()};
  r.alignment_score = alignment_score(r.mean_delta_y, m);
  return r;
}

inline nlohmann::json to_json(const HeatmapReport& r, const ConceptScheme& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < r.mean_delta_y.rows(); ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t l = 0; l < r.mean_delta_y.cols(); ++l) row.push_back(r.mean_delta_y.at(k, l));
    rows.push_back(row);
  }
  std::vector<std::string> concepts;
  for (const auto& c : s.concepts()) concepts.push_back(c.name);
  return {{"format_version", kFormatVersion},
          {"classes", s.class_names()},
          {"concepts", concepts},
          {"mean_delta_y", rows},
          {"importance", to_json(r.importance, s).at("importance")},
          {"alignment_score", r.alignment_score},
          {"n", r.n}};
}

// Rows are classes, columns concepts.
inline std::string heatmap_csv(const HeatmapReport& r, const ConceptScheme& s) {
  std::string out = "class";
  for (const auto& c : s.concepts()) out += "," + c.name;
  out += '\n';
  for (std::size_t k = 0; k < s.num_classes(); ++k) {
    out += s.class_names()[k];
    for (std::size_t l = 0; l < s.num_concepts(); ++l) out += "," + format_double(r.mean_delta_y.at(k, l));
    out += '\n';
  }
  return out;
}

}  // namespace kgcbm
