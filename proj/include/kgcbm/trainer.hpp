#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgcbm/align.hpp"
#include "kgcbm/cbm.hpp"
#include "kgcbm/data.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/eval.hpp"
#include "kgcbm/knowledge.hpp"
#include "kgcbm/nn.hpp"

namespace kgcbm {

// Joint: the class head consumes predicted concepts. Sequential: it consumes
// the ground-truth concept blocks while the predictor learns from L_c alone.
enum class TrainMode { Joint, Sequential };

inline std::string to_string(TrainMode m) { return m == TrainMode::Joint ? "joint" : "sequential"; }
inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "joint") return TrainMode::Joint;
  if (s == "sequential") return TrainMode::Sequential;
  throw ConfigError("unknown training mode '" + s + "' (expected joint or sequential)");
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double phi = 1.0;
  double lambda = 1.0;
  double label_smoothing = 0.3;
  bool smooth_concepts = false;  // also smooth the concept targets
  ClassifierKind classifier = ClassifierKind::Mlp128;
  AlignMode align_mode = AlignMode::Pairwise;
  TrainMode mode = TrainMode::Joint;
  std::vector<std::size_t> predictor_hidden{64};
  std::uint64_t seed = 0;
  std::string knowledge = "none";  // path, "none", or "random:<seed>"

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("lr and weight decay must be nonnegative");
    if (!(label_smoothing >= 0.0 && label_smoothing <= 1.0)) throw ConfigError("label smoothing must lie in [0, 1]");
    LossWeights{phi, lambda}.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"phi", c.phi},
          {"lambda", c.lambda},
          {"label_smoothing", c.label_smoothing},
          {"smooth_concepts", c.smooth_concepts},
          {"classifier", to_string(c.classifier)},
          {"align_mode", to_string(c.align_mode)},
          {"mode", to_string(c.mode)},
          {"predictor_hidden", c.predictor_hidden},
          {"seed", c.seed},
          {"knowledge", c.knowledge},
          {"optimizer", {{"name", "AdamW"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("train config: expected a JSON object");
  check_known_keys(j,
                   {"format_version", "epochs", "batch_size", "lr", "weight_decay", "phi", "lambda", "label_smoothing",
                    "smooth_concepts", "classifier", "align_mode", "mode", "predictor_hidden", "seed", "knowledge",
                    "optimizer"},
                   "train config");
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.phi = j.value("phi", c.phi);
    c.lambda = j.value("lambda", c.lambda);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    c.smooth_concepts = j.value("smooth_concepts", c.smooth_concepts);
    if (j.contains("classifier")) c.classifier = parse_classifier(j.at("classifier").get<std::string>());
    if (j.contains("align_mode")) c.align_mode = parse_align_mode(j.at("align_mode").get<std::string>());
    if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
    c.predictor_hidden = j.value("predictor_hidden", c.predictor_hidden);
    c.seed = j.value("seed", c.seed);
    c.knowledge = j.value("knowledge", c.knowledge);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double concept_loss = 0.0;
  double class_loss = 0.0;
  double align_high = 0.0;
  double align_low = 0.0;
  double total = 0.0;
  double val_macro_f1 = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based

  bool operator==(const RunRecord&) const = default;
};

inline nlohmann::json to_json(const EpochRecord& e, bool is_best) {
  return {{"epoch", e.epoch},       {"concept_loss", e.concept_loss}, {"class_loss", e.class_loss},
          {"align_high", e.align_high}, {"align_low", e.align_low}, {"total", e.total},
          {"val_macro_f1", e.val_macro_f1}, {"is_best", is_best}};
}

// One JSON object per line, one line per epoch.
inline std::string run_record_jsonl(const RunRecord& r) {
  std::string out;
  for (const auto& e : r.epochs) out += to_json(e, e.epoch == r.best_epoch).dump() + '\n';
  return out;
}

// Per-step view handed to an optional observer.
struct StepRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  LossComponents components;
  double total = 0.0;
  LossWeights weights;
};

struct TrainResult {
  CbmModel model;  // parameters at the best validation macro F1
  RunRecord record;
};

namespace detail {

struct StepOutput {
  LossComponents components;
  double total = 0.0;
};

inline StepOutput train_step(CbmModel& model, nn::AdamW& opt, const Dataset& data,
                             std::span<const std::size_t> idx, const TrainConfig& cfg,
                             const ImportanceMatrix* matrix, const LossWeights& weights) {
  const auto& scheme = model.scheme();
  ad::Graph g;
  const auto bound = model.bind(g);
  ad::Var x = g.constant(feature_matrix(data, idx));
  ad::Var c_hat = model.predict_concepts(g, bound, x);
  ad::Var head_in = cfg.mode == TrainMode::Joint ? c_hat : g.constant(concept_onehot(data, idx));
  ad::Var y_hat = model.predict_class(g, bound, head_in);

  const auto labels = labels_of(data, idx);
  const auto concept_labels = concept_labels_of(data, idx);
  ad::Var lc = nn::segmented_cross_entropy(g, c_hat, concept_labels, scheme.segments(),
                                           cfg.smooth_concepts ? cfg.label_smoothing : 0.0);
  ad::Var ly = nn::cross_entropy(g, y_hat, labels, cfg.label_smoothing, scheme.num_classes());
  ad::Var high = g.constant(Tensor::scalar(0.0));
  ad::Var low = high;
  if (matrix) {
    const auto deltas = delta_y(g, model, bound, head_in, y_hat);
    high = align_loss_high(g, deltas, *matrix, cfg.align_mode, labels);
    low = align_loss_low(g, deltas, *matrix, cfg.align_mode, labels);
  }
  ad::Var total = total_loss(g, lc, ly, high, low, weights);
  const auto grads = g.backward(total);

  const auto vars = bound.vars();
  std::vector<const Tensor*> grad_ptrs;
  grad_ptrs.reserve(vars.size());
  for (ad::Var v : vars) grad_ptrs.push_back(&grads.of(v));
  const auto params = model.parameters();
  const auto names = model.parameter_names();
  opt.step(params, grad_ptrs, names);

  return {{g.value(lc).item(), g.value(ly).item(), g.value(high).item(), g.value(low).item()},
          g.value(total).item()};
}

}  // namespace detail

// Seeded end-to-end training. Without a matrix the alignment weight is 0.
// Every source of randomness derives from cfg.seed, so repeated calls with the
// same inputs are bitwise identical.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                         const std::optional<ImportanceMatrix>& matrix = std::nullopt,
                         const std::function<void(const StepRecord&)>& observer = {}) {
  cfg.validate();
  if (train_set.scheme != val_set.scheme) throw ConfigError("train and validation schemes differ");
  if (train_set.feature_width() != val_set.feature_width())
    throw ConfigError("train and validation feature widths differ");
  train_set.validate();
  val_set.validate();
  if (matrix) matrix->check_matches(train_set.scheme);
  const LossWeights weights{cfg.phi, matrix ? cfg.lambda : 0.0};

  CbmModel model = CbmModel::create(train_set.scheme, train_set.feature_width(), cfg.classifier,
                                    stream_key(cfg.seed, 0x1417), cfg.predictor_hidden);
  nn::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const std::uint64_t shuffle_seed = stream_key(cfg.seed, 0x5bff);
  const ImportanceMatrix* m = matrix ? &*matrix : nullptr;

  RunRecord record;
  std::optional<CbmModel> best;
  double best_f1 = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord er;
    er.epoch = epoch;
    const auto plan = batches(train_set, cfg.batch_size, shuffle_seed, epoch);
    for (std::size_t b = 0; b < plan.size(); ++b) {
      detail::StepOutput out;
      try {
        out = detail::train_step(model, opt, train_set, plan[b], cfg, m, weights);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
      er.concept_loss += out.components.concept_loss;
      er.class_loss += out.components.class_loss;
      er.align_high += out.components.align_high;
      er.align_low += out.components.align_low;
      er.total += out.total;
      if (observer) observer({epoch, b + 1, out.components, out.total, weights});
    }
    const double nb = static_cast<double>(plan.size());
    er.concept_loss /= nb;
    er.class_loss /= nb;
    er.align_high /= nb;
    er.align_low /= nb;
    er.total /= nb;
    er.val_macro_f1 = evaluate(model, val_set).macro_f1;
    if (er.val_macro_f1 > best_f1) {
      best_f1 = er.val_macro_f1;
      best = model;
      record.best_epoch = epoch;
    }
    record.epochs.push_back(er);
  }
  return {std::move(*best), std::move(record)};
}

}  // namespace kgcbm
