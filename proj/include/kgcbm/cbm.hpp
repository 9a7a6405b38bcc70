#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgcbm/autodiff.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/nn.hpp"
#include "kgcbm/scheme.hpp"
#include "kgcbm/tensor.hpp"

namespace kgcbm {

// Class head over the bottleneck: a single linear map, or one rectified hidden
// layer of width 20 or 128.
enum class ClassifierKind { Linear, Mlp20, Mlp128 };

inline std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::Linear: return "linear";
    case ClassifierKind::Mlp20: return "mlp20";
    case ClassifierKind::Mlp128: return "mlp128";
  }
  return "?";
}

inline ClassifierKind parse_classifier(const std::string& s) {
  if (s == "linear" || s == "Linear") return ClassifierKind::Linear;
  if (s == "mlp20" || s == "MLP(20)") return ClassifierKind::Mlp20;
  if (s == "mlp128" || s == "MLP(128)") return ClassifierKind::Mlp128;
  throw ConfigError("unknown classifier '" + s + "' (expected linear, mlp20 or mlp128)");
}

inline std::size_t hidden_width(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::Linear: return 0;
    case ClassifierKind::Mlp20: return 20;
    case ClassifierKind::Mlp128: return 128;
  }
  return 0;
}

class CbmModel {
 public:
  struct Bound {
    std::vector<nn::BoundDense> predictor;
    std::vector<nn::BoundDense> classifier;

    // Same order as CbmModel::parameters().
    std::vector<ad::Var> vars() const {
      std::vector<ad::Var> out;
      for (const auto& p : predictor) out.insert(out.end(), {p.weight, p.bias});
      for (const auto& p : classifier) out.insert(out.end(), {p.weight, p.bias});
      return out;
    }
  };

  CbmModel(ConceptScheme scheme, std::size_t input_width, ClassifierKind kind,
           std::vector<nn::DenseLayer> predictor, std::vector<nn::DenseLayer> classifier)
      : scheme_(std::move(scheme)),
        input_width_(input_width),
        kind_(kind),
        predictor_(std::move(predictor)),
        classifier_(std::move(classifier)) {
    validate();
  }

  // Glorot-initialised model. `predictor_hidden` lists the rectified hidden
  // widths of the concept predictor; its output layer always has width D.
  static CbmModel create(ConceptScheme scheme, std::size_t input_width, ClassifierKind kind,
                         std::uint64_t seed, const std::vector<std::size_t>& predictor_hidden = {64}) {
    std::mt19937_64 rng(seed);
    std::vector<nn::DenseLayer> pred;
    std::size_t in = input_width;
    for (std::size_t h : predictor_hidden) {
      pred.push_back(nn::DenseLayer::glorot(in, h, rng));
      in = h;
    }
    const std::size_t d = scheme.bottleneck_width();
    pred.push_back(nn::DenseLayer::glorot(in, d, rng));
    std::vector<nn::DenseLayer> cls;
    if (const std::size_t h = hidden_width(kind); h > 0) {
      cls.push_back(nn::DenseLayer::glorot(d, h, rng));
      cls.push_back(nn::DenseLayer::glorot(h, scheme.num_classes(), rng));
    } else {
      cls.push_back(nn::DenseLayer::glorot(d, scheme.num_classes(), rng));
    }
    return CbmModel(std::move(scheme), input_width, kind, std::move(pred), std::move(cls));
  }

  const ConceptScheme& scheme() const noexcept { return scheme_; }
  std::size_t input_width() const noexcept { return input_width_; }
  ClassifierKind classifier_kind() const noexcept { return kind_; }
  const std::vector<nn::DenseLayer>& predictor_layers() const noexcept { return predictor_; }
  const std::vector<nn::DenseLayer>& classifier_layers() const noexcept { return classifier_; }
  std::vector<nn::DenseLayer>& predictor_layers() noexcept { return predictor_; }
  std::vector<nn::DenseLayer>& classifier_layers() noexcept { return classifier_; }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : predictor_) out.insert(out.end(), {&l.weight, &l.bias});
    for (auto& l : classifier_) out.insert(out.end(), {&l.weight, &l.bias});
    return out;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < predictor_.size(); ++i) {
      out.push_back("predictor." + std::to_string(i) + ".weight");
      out.push_back("predictor." + std::to_string(i) + ".bias");
    }
    for (std::size_t i = 0; i < classifier_.size(); ++i) {
      out.push_back("classifier." + std::to_string(i) + ".weight");
      out.push_back("classifier." + std::to_string(i) + ".bias");
    }
    return out;
  }

  Bound bind(ad::Graph& g) const {
    Bound b;
    for (const auto& l : predictor_) b.predictor.push_back(nn::bind(g, l));
    for (const auto& l : classifier_) b.classifier.push_back(nn::bind(g, l));
    return b;
  }

  // x (batch x F) -> batch x D, each concept segment a probability vector.
  ad::Var predict_concepts(ad::Graph& g, const Bound& b, ad::Var x) const {
    if (g.value(x).rank() != 2 || g.value(x).cols() != input_width_) {
      throw ConfigError("predict_concepts: input of shape " + shape_string(g.value(x).shape()) +
                        ", model expects width " + std::to_string(input_width_));
    }
    ad::Var h = x;
    for (std::size_t i = 0; i + 1 < b.predictor.size(); ++i) h = g.relu(nn::dense(g, b.predictor[i], h));
    ad::Var logits = nn::dense(g, b.predictor.back(), h);
    return g.softmax(logits, scheme_.segments());
  }

  // bottleneck (batch x D) -> batch x K class probabilities.
  ad::Var predict_class(ad::Graph& g, const Bound& b, ad::Var bottleneck) const {
    if (g.value(bottleneck).rank() != 2 || g.value(bottleneck).cols() != scheme_.bottleneck_width()) {
      throw ConfigError("predict_class: bottleneck of shape " +
                        shape_string(g.value(bottleneck).shape()) + ", model expects width " +
                        std::to_string(scheme_.bottleneck_width()));
    }
    ad::Var h = bottleneck;
    for (std::size_t i = 0; i + 1 < b.classifier.size(); ++i) h = g.relu(nn::dense(g, b.classifier[i], h));
    return g.softmax(nn::dense(g, b.classifier.back(), h));
  }

  Tensor predict_concepts(const Tensor& x) const {
    ad::Graph g;
    const Bound b = bind(g);
    return g.value(predict_concepts(g, b, g.constant(x)));
  }

  Tensor predict_class(const Tensor& bottleneck) const {
    ad::Graph g;
    const Bound b = bind(g);
    return g.value(predict_class(g, b, g.constant(bottleneck)));
  }

 private:
  void validate() const {
    if (predictor_.empty() || classifier_.empty()) throw ConfigError("model needs predictor and classifier layers");
    std::size_t in = input_width_;
    for (const auto& l : predictor_) {
      check_layer(l, in, "predictor");
      in = l.out();
    }
    if (in != scheme_.bottleneck_width()) {
      throw ConfigError("predictor output width " + std::to_string(in) + " != bottleneck width " +
                        std::to_string(scheme_.bottleneck_width()));
    }
    const std::size_t expected_layers = hidden_width(kind_) > 0 ? 2 : 1;
    if (classifier_.size() != expected_layers) {
      throw ConfigError("classifier '" + to_string(kind_) + "' needs " +
                        std::to_string(expected_layers) + " layers");
    }
    for (const auto& l : classifier_) {
      check_layer(l, in, "classifier");
      in = l.out();
    }
    if (hidden_width(kind_) > 0 && classifier_[0].out() != hidden_width(kind_)) {
      throw ConfigError("classifier '" + to_string(kind_) + "' hidden width mismatch");
    }
    if (in != scheme_.num_classes()) throw ConfigError("classifier output width != number of classes");
  }

  static void check_layer(const nn::DenseLayer& l, std::size_t in, const char* where) {
    if (l.weight.rank() != 2 || l.in() != in || l.bias.size() != l.out() || l.bias.rank() != 1) {
      throw ConfigError(std::string(where) + " layer shapes inconsistent: weight " +
                        shape_string(l.weight.shape()) + ", bias " + shape_string(l.bias.shape()) +
                        ", expected input width " + std::to_string(in));
    }
    if (!l.weight.all_finite() || !l.bias.all_finite()) {
      throw NumericError(std::string(where) + " layer has non-finite parameters");
    }
  }

  ConceptScheme scheme_;
  std::size_t input_width_ = 0;
  ClassifierKind kind_ = ClassifierKind::Linear;
  std::vector<nn::DenseLayer> predictor_;
  std::vector<nn::DenseLayer> classifier_;
};

// Zero-fill the l-th concept's segment (0-based) of a bottleneck batch.
inline ad::Var remove_concept(ad::Graph& g, ad::Var bottleneck, const ConceptScheme& scheme,
                              std::size_t l) {
  return g.zero_mask(bottleneck, scheme.segment(l));
}

inline Tensor remove_concept(const Tensor& bottleneck, const ConceptScheme& scheme, std::size_t l) {
  ad::Graph g;
  return g.value(remove_concept(g, g.constant(bottleneck), scheme, l));
}

// ---- persistence -----------------------------------------------------------

inline nlohmann::json to_json(const CbmModel& m, const nlohmann::json& config = nullptr) {
  auto layer_json = [](const std::string& name, const nn::DenseLayer& l) {
    return nlohmann::json{{"name", name},
                          {"in", l.in()},
                          {"out", l.out()},
                          {"weight", l.weight.data()},
                          {"bias", l.bias.data()}};
  };
  nlohmann::json layers = nlohmann::json::array();
  std::vector<std::size_t> hidden;
  for (std::size_t i = 0; i < m.predictor_layers().size(); ++i) {
    layers.push_back(layer_json("predictor." + std::to_string(i), m.predictor_layers()[i]));
    if (i + 1 < m.predictor_layers().size()) hidden.push_back(m.predictor_layers()[i].out());
  }
  for (std::size_t i = 0; i < m.classifier_layers().size(); ++i)
    layers.push_back(layer_json("classifier." + std::to_string(i), m.classifier_layers()[i]));
  nlohmann::json j{{"format_version", kFormatVersion},
                   {"scheme", to_json(m.scheme())},
                   {"input_width", m.input_width()},
                   {"classifier", to_string(m.classifier_kind())},
                   {"predictor_hidden", hidden},
                   {"layers", layers}};
  if (!config.is_null()) j["config"] = config;
  return j;
}

inline CbmModel model_from_json(const nlohmann::json& j) {
  check_format_version(j, "model");
  try {
    ConceptScheme scheme = scheme_from_json(j.at("scheme"));
    const auto kind = parse_classifier(j.at("classifier").get<std::string>());
    std::vector<nn::DenseLayer> pred, cls;
    for (const auto& lj : j.at("layers")) {
      const auto name = lj.at("name").get<std::string>();
      const auto in = lj.at("in").get<std::size_t>();
      const auto out = lj.at("out").get<std::size_t>();
      nn::DenseLayer layer{Tensor(Shape{out, in}, lj.at("weight").get<std::vector<double>>()),
                           Tensor(Shape{out}, lj.at("bias").get<std::vector<double>>())};
      if (name.rfind("predictor.", 0) == 0) pred.push_back(std::move(layer));
      else if (name.rfind("classifier.", 0) == 0) cls.push_back(std::move(layer));
      else throw ParseError("model: unknown layer '" + name + "'");
    }
    return CbmModel(std::move(scheme), j.at("input_width").get<std::size_t>(), kind, std::move(pred),
                    std::move(cls));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

inline void save_model(const std::string& path, const CbmModel& m, const nlohmann::json& config = nullptr) {
  write_json_file(path, to_json(m, config));
}

inline CbmModel load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

}  // namespace kgcbm
