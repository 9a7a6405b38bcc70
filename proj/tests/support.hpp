#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kgcbm/align.hpp"
#include "kgcbm/cbm.hpp"
#include "kgcbm/data.hpp"
#include "kgcbm/knowledge.hpp"
#include "kgcbm/nn.hpp"

namespace kgcbm::testing {

namespace fs = std::filesystem;

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("kgcbm_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// Worst |analytic - fd| / max(1, |fd|) over every parameter entry of `model`,
// where loss(model) rebuilds the graph from scratch and grads come from one
// backward pass. If the two one-sided slopes disagree a ReLU or |.| kink sits
// inside +-h, so that entry is redone with h/10 (up to three times).
struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

inline GradCheck check_gradients(CbmModel& model,
                                 const std::function<double(const CbmModel&, std::vector<Tensor>*)>& loss,
                                 double h = 1e-5, double kink_tol = 1e-4) {
  std::vector<Tensor> analytic;
  const double base = loss(model, &analytic);
  GradCheck out;
  auto params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p]->values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      double fd = 0.0;
      for (int attempt = 0; attempt < 4; ++attempt) {
        const double step = h * std::pow(0.1, attempt);
        values[j] = saved + step;
        const double up = loss(model, nullptr);
        values[j] = saved - step;
        const double down = loss(model, nullptr);
        values[j] = saved;
        fd = (up - down) / (2.0 * step);
        const double skew = std::abs((up - base) - (base - down)) / step;
        if (skew <= kink_tol * std::max(1.0, std::abs(fd))) break;
        if (attempt == 0) ++out.kinks;
      }
      const double err = std::abs(analytic[p][j] - fd) / std::max(1.0, std::abs(fd));
      out.worst = std::max(out.worst, err);
      ++out.checked;
    }
  }
  return out;
}

// Full training objective on one batch, mirroring the trainer's step.
inline double full_loss(const CbmModel& model, const Dataset& d, const ImportanceMatrix& m, const LossWeights& w,
                        double smoothing, AlignMode mode, std::vector<Tensor>* grads) {
  ad::Graph g;
  const auto bound = model.bind(g);
  const auto idx = all_indices(d);
  ad::Var c = model.predict_concepts(g, bound, g.constant(feature_matrix(d, idx)));
  ad::Var y = model.predict_class(g, bound, c);
  const auto labels = labels_of(d, idx);
  ad::Var lc = nn::segmented_cross_entropy(g, c, concept_labels_of(d, idx), model.scheme().segments(), 0.0);
  ad::Var ly = nn::cross_entropy(g, y, labels, smoothing, model.scheme().num_classes());
  const auto deltas = delta_y(g, model, bound, c, y);
  ad::Var high = align_loss_high(g, deltas, m, mode, labels);
  ad::Var low = align_loss_low(g, deltas, m, mode, labels);
  ad::Var total = total_loss(g, lc, ly, high, low, w);
  if (grads) {
    const auto gr = g.backward(total);
    grads->clear();
    for (ad::Var v : bound.vars()) grads->push_back(gr.of(v));
  }
  return g.value(total).item();
}

// Small random scheme/model/data/matrix bundle for gradient checks.
struct RandomProblem {
  ConceptScheme scheme;
  Dataset data;
  ImportanceMatrix matrix;
};

inline RandomProblem random_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int K = pick(2, 4), L = pick(2, 4);
  std::vector<std::string> classes;
  for (int k = 0; k < K; ++k) classes.push_back("c" + std::to_string(k));
  std::vector<Concept> concepts;
  for (int l = 0; l < L; ++l) {
    Concept c{"x" + std::to_string(l), {}};
    for (int v = 0, n = pick(2, 3); v < n; ++v) c.values.push_back("v" + std::to_string(v));
    concepts.push_back(c);
  }
  ConceptScheme scheme(classes, concepts);
  Dataset d{scheme, {}, Domain::InDomain, Split::Train};
  const std::size_t F = scheme.bottleneck_width() + 1;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0, n = pick(3, 6); i < n; ++i) {
    Sample s;
    s.label = pick(0, K - 1);
    for (int l = 0; l < L; ++l) s.concepts.push_back(pick(0, static_cast<int>(concepts[l].values.size()) - 1));
    for (std::size_t f = 0; f < F; ++f) s.features.push_back(normal(rng));
    d.samples.push_back(s);
  }
  std::vector<Importance> levels(static_cast<std::size_t>(K * L));
  for (auto& v : levels) v = static_cast<Importance>(pick(0, 2));
  levels[0] = Importance::High;
  levels[1] = Importance::Low;
  return {scheme, d, ImportanceMatrix(K, L, levels)};
}

// Independent macro F1: build the full confusion matrix, then read P and R off it.
inline std::vector<double> brute_force_f1(const std::vector<int>& t, const std::vector<int>& p, std::size_t K) {
  std::vector<std::vector<double>> cm(K, std::vector<double>(K, 0.0));
  for (std::size_t i = 0; i < t.size(); ++i) cm[t[i]][p[i]] += 1.0;
  std::vector<double> f1(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double col = 0.0, row = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      col += cm[j][k];
      row += cm[k][j];
    }
    const double precision = col == 0.0 ? 0.0 : cm[k][k] / col;
    const double recall = row == 0.0 ? 0.0 : cm[k][k] / row;
    f1[k] = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
  }
  return f1;
}

// The K=2, two-binary-concept hand case used by several tests.
inline CbmModel hand_model() {
  ConceptScheme scheme({"a", "b"}, {{"first", {"u", "v"}}, {"second", {"u", "v"}}});
  nn::DenseLayer pred{Tensor(Shape{4, 1}), Tensor(Shape{4})};
  nn::DenseLayer cls{Tensor::matrix(2, 4, {2, 0, 0, 0, 0, 2, 0, 0}), Tensor(Shape{2})};
  return CbmModel(scheme, 1, ClassifierKind::Linear, {pred}, {cls});
}

inline Tensor hand_bottleneck() { return Tensor::matrix(1, 4, {0.9, 0.1, 0.2, 0.8}); }

// Small but otherwise default synthetic task for end-to-end tests.
inline SynthConfig small_synth(std::size_t n_train = 400) {
  SynthConfig c = SynthConfig::defaults();
  c.n_train = n_train;
  c.n_val = 100;
  c.n_test_in = 200;
  c.n_test_ood = 200;
  return c;
}

}  // namespace kgcbm::testing
