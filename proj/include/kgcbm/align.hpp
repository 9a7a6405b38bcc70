#pragma once

// Perturbation-based concept importance and the losses that pull it toward an
// expert importance matrix.
//
// DeltaY[k][l] = | yhat_k - yhat_k(concept l zero-filled) |, per sample.
// High cells are pushed toward 1, Low cells toward 0, Mid cells are free.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kgcbm/autodiff.hpp"
#include "kgcbm/cbm.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/knowledge.hpp"
#include "kgcbm/tensor.hpp"

namespace kgcbm {

// Which cells enter the alignment sums.
//   Pairwise: every (k, l) whose level matches, independent of the sample.
//   Column:   for a sample of true class k*, every concept l with
//             alpha[k*][l] at the level contributes its whole column sum_k.
enum class AlignMode { Pairwise, Column };

inline std::string to_string(AlignMode m) { return m == AlignMode::Pairwise ? "pairwise" : "column"; }

inline AlignMode parse_align_mode(const std::string& s) {
  if (s == "pairwise") return AlignMode::Pairwise;
  if (s == "column") return AlignMode::Column;
  throw ConfigError("unknown align mode '" + s + "' (expected pairwise or column)");
}

struct LossWeights {
  double phi = 1.0;     // concept loss
  double lambda = 0.0;  // alignment loss

  void validate() const {
    if (!(phi >= 0.0) || !(lambda >= 0.0) || !std::isfinite(phi) || !std::isfinite(lambda)) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
};

// Per-sample K x L importance matrices, stored sample-major.
class DeltaY {
 public:
  DeltaY(std::size_t samples, std::size_t classes, std::size_t concepts)
      : n_(samples), k_(classes), l_(concepts), values_(samples * classes * concepts, 0.0) {}

  std::size_t samples() const noexcept { return n_; }
  std::size_t classes() const noexcept { return k_; }
  std::size_t concepts() const noexcept { return l_; }
  double at(std::size_t i, std::size_t k, std::size_t l) const { return values_[(i * k_ + k) * l_ + l]; }
  double& at(std::size_t i, std::size_t k, std::size_t l) { return values_[(i * k_ + k) * l_ + l]; }

  // Batch-mean K x L matrix.
  Tensor mean() const {
    Tensor out(Shape{k_, l_});
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < k_ * l_; ++j) out[j] += values_[i * k_ * l_ + j];
    for (auto& v : out.values()) v /= static_cast<double>(n_);
    return out;
  }

  // Column l as a batch x K tensor.
  Tensor column(std::size_t l) const {
    Tensor out(Shape{n_, k_});
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < k_; ++k) out.at(i, k) = at(i, k, l);
    return out;
  }

 private:
  std::size_t n_, k_, l_;
  std::vector<double> values_;
};

// One batch x K node per concept: |yhat - yhat(concept l removed)|.
// Both branches stay differentiable.
inline std::vector<ad::Var> delta_y(ad::Graph& g, const CbmModel& model, const CbmModel::Bound& bound,
                                    ad::Var bottleneck, ad::Var class_probs) {
  const auto& scheme = model.scheme();
  std::vector<ad::Var> out;
  out.reserve(scheme.num_concepts());
  for (std::size_t l = 0; l < scheme.num_concepts(); ++l) {
    ad::Var removed = model.predict_class(g, bound, remove_concept(g, bottleneck, scheme, l));
    out.push_back(g.abs(g.sub(class_probs, removed)));
  }
  return out;
}

inline DeltaY delta_y(const CbmModel& model, const Tensor& bottleneck) {
  ad::Graph g;
  const auto bound = model.bind(g);
  ad::Var c = g.constant(bottleneck);
  ad::Var y = model.predict_class(g, bound, c);
  const auto cols = delta_y(g, model, bound, c, y);
  const std::size_t n = bottleneck.rows(), K = model.scheme().num_classes();
  DeltaY out(n, K, cols.size());
  for (std::size_t l = 0; l < cols.size(); ++l) {
    const Tensor& d = g.value(cols[l]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k) out.at(i, k, l) = d.at(i, k);
  }
  return out;
}

namespace detail {

inline void check_alignment_inputs(std::span<const ad::Var> deltas, const ad::Graph& g,
                                   const ImportanceMatrix& m, AlignMode mode,
                                   std::span<const int> labels) {
  if (deltas.size() != m.num_concepts()) {
    throw ConfigError("alignment: " + std::to_string(deltas.size()) + " concept columns, matrix has " +
                      std::to_string(m.num_concepts()));
  }
  for (ad::Var d : deltas) {
    if (g.value(d).rank() != 2 || g.value(d).cols() != m.num_classes()) {
      throw ConfigError("alignment: DeltaY column of shape " + shape_string(g.value(d).shape()) +
                        " for " + std::to_string(m.num_classes()) + " classes");
    }
  }
  if (mode == AlignMode::Column) {
    const std::size_t n = deltas.empty() ? 0 : g.value(deltas[0]).rows();
    if (labels.size() != n) throw ConfigError("alignment: column mode needs one label per sample");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= m.num_classes())
        throw ConfigError("alignment: label " + std::to_string(y) + " out of range");
  }
}

// Batch-averaged sum over selected cells of |deltas - target|.
inline ad::Var alignment_term(ad::Graph& g, std::span<const ad::Var> deltas, const ImportanceMatrix& m,
                              AlignMode mode, std::span<const int> labels, Importance level,
                              double target) {
  check_alignment_inputs(deltas, g, m, mode, labels);
  const std::size_t K = m.num_classes();
  ad::Var total = g.constant(Tensor::scalar(0.0));
  bool any = false;
  std::size_t n = 1;
  for (std::size_t l = 0; l < deltas.size(); ++l) {
    n = g.value(deltas[l]).rows();
    Tensor mask(Shape{n, K});
    bool used = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        const bool on = mode == AlignMode::Pairwise
                            ? m.at(k, l) == level
                            : m.at(static_cast<std::size_t>(labels[i]), l) == level;
        if (on) {
          mask.at(i, k) = 1.0;
          used = true;
        }
      }
    }
    if (!used) continue;
    ad::Var dev = target == 0.0 ? g.abs(deltas[l]) : g.abs(g.add_scalar(deltas[l], -target));
    ad::Var term = g.sum(g.mul(g.constant(std::move(mask)), dev));
    total = any ? g.add(total, term) : term;
    any = true;
  }
  if (!any) return total;
  return g.scale(total, 1.0 / static_cast<double>(n));
}

inline std::vector<ad::Var> columns_as_constants(ad::Graph& g, const DeltaY& d) {
  std::vector<ad::Var> out;
  for (std::size_t l = 0; l < d.concepts(); ++l) out.push_back(g.constant(d.column(l)));
  return out;
}

}  // namespace detail

// Sum of |1 - DeltaY| over High cells, averaged over the batch.
inline ad::Var align_loss_high(ad::Graph& g, std::span<const ad::Var> deltas, const ImportanceMatrix& m,
                               AlignMode mode, std::span<const int> labels = {}) {
  return detail::alignment_term(g, deltas, m, mode, labels, Importance::High, 1.0);
}

// Sum of |DeltaY| over Low cells, averaged over the batch.
inline ad::Var align_loss_low(ad::Graph& g, std::span<const ad::Var> deltas, const ImportanceMatrix& m,
                              AlignMode mode, std::span<const int> labels = {}) {
  return detail::alignment_term(g, deltas, m, mode, labels, Importance::Low, 0.0);
}

inline double align_loss_high(const DeltaY& d, const ImportanceMatrix& m, AlignMode mode,
                              std::span<const int> labels = {}) {
  ad::Graph g;
  const auto cols = detail::columns_as_constants(g, d);
  return g.value(align_loss_high(g, cols, m, mode, labels)).item();
}

inline double align_loss_low(const DeltaY& d, const ImportanceMatrix& m, AlignMode mode,
                             std::span<const int> labels = {}) {
  ad::Graph g;
  const auto cols = detail::columns_as_constants(g, d);
  return g.value(align_loss_low(g, cols, m, mode, labels)).item();
}

struct LossComponents {
  double concept_loss = 0.0;
  double class_loss = 0.0;
  double align_high = 0.0;
  double align_low = 0.0;
};

namespace detail {
inline void require_finite_components(const LossComponents& c) {
  const std::pair<const char*, double> named[] = {
      {"concept loss", c.concept_loss}, {"class loss", c.class_loss},
      {"High alignment loss", c.align_high}, {"Low alignment loss", c.align_low}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name);
}
}  // namespace detail

// phi * L_c + L_y + lambda * (L_low + L_high)
inline double total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  detail::require_finite_components(c);
  return w.phi * c.concept_loss + c.class_loss + w.lambda * (c.align_low + c.align_high);
}

inline ad::Var total_loss(ad::Graph& g, ad::Var concept_loss, ad::Var class_loss, ad::Var high,
                          ad::Var low, const LossWeights& w) {
  w.validate();
  detail::require_finite_components({g.value(concept_loss).item(), g.value(class_loss).item(),
                                     g.value(high).item(), g.value(low).item()});
  ad::Var base = g.add(g.scale(concept_loss, w.phi), class_loss);
  return g.add(base, g.scale(g.add(low, high), w.lambda));
}

}  // namespace kgcbm
