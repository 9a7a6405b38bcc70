#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kgcbm/autodiff.hpp"
#include "kgcbm/errors.hpp"
#include "kgcbm/tensor.hpp"

namespace kgcbm::nn {

// Probabilities are clamped here before the log in every cross-entropy.
inline constexpr double kProbabilityFloor = 1e-12;

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;    // out

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }

  // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
  static DenseLayer glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    DenseLayer layer{Tensor(Shape{out, in}), Tensor(Shape{out})};
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : layer.weight.values()) w = dist(rng);
    return layer;
  }
};

// A DenseLayer's parameters registered in a particular graph.
struct BoundDense {
  ad::Var weight;
  ad::Var bias;
};

inline BoundDense bind(ad::Graph& g, const DenseLayer& layer) {
  return {g.parameter(layer.weight), g.parameter(layer.bias)};
}

// x (batch x in) -> batch x out
inline ad::Var dense(ad::Graph& g, const BoundDense& p, ad::Var x) {
  return g.add(g.matmul(x, p.weight, /*transpose_b=*/true), p.bias);
}

// Smoothed one-hot targets: (1 - s) * onehot + s / width, per segment.
inline Tensor smoothed_targets(std::span<const int> labels, std::span<const ad::Segment> segments,
                               double smoothing) {
  if (smoothing < 0.0 || smoothing > 1.0) {
    throw ConfigError("label smoothing must lie in [0, 1], got " + std::to_string(smoothing));
  }
  std::size_t width = 0;
  for (const auto& s : segments) width = std::max(width, s.offset + s.width);
  const std::size_t batch = labels.size() / segments.size();
  Tensor q(Shape{batch, width});
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t l = 0; l < segments.size(); ++l) {
      const auto& s = segments[l];
      const int y = labels[i * segments.size() + l];
      if (y < 0 || static_cast<std::size_t>(y) >= s.width) {
        throw ConfigError("target index " + std::to_string(y) + " outside [0, " +
                          std::to_string(s.width) + ")");
      }
      const double base = smoothing / static_cast<double>(s.width);
      for (std::size_t j = 0; j < s.width; ++j) q.at(i, s.offset + j) = base;
      q.at(i, s.offset + static_cast<std::size_t>(y)) += 1.0 - smoothing;
    }
  }
  return q;
}

// Sum over segments of the batch-averaged cross-entropy of each segment.
// `labels` is row-major batch x segments.size().
inline ad::Var segmented_cross_entropy(ad::Graph& g, ad::Var probabilities,
                                       std::span<const int> labels,
                                       std::span<const ad::Segment> segments, double smoothing) {
  const Tensor& p = g.value(probabilities);
  if (segments.empty() || labels.size() != p.rows() * segments.size()) {
    throw ConfigError("cross_entropy: " + std::to_string(labels.size()) + " targets for " +
                      std::to_string(p.rows()) + " rows x " + std::to_string(segments.size()) +
                      " segments");
  }
  const auto& last = segments.back();
  if (last.offset + last.width != p.cols()) {
    throw ConfigError("cross_entropy: segments cover " + std::to_string(last.offset + last.width) +
                      " columns, probabilities have " + std::to_string(p.cols()));
  }
  const std::size_t rows = p.rows();
  ad::Var q = g.constant(smoothed_targets(labels, segments, smoothing));
  ad::Var logp = g.log(probabilities, kProbabilityFloor);
  return g.scale(g.sum(g.mul(q, logp)), -1.0 / static_cast<double>(rows));
}

// Batch-mean of -sum_k q_k log p_k with q = (1 - s) onehot + s / K.
inline ad::Var cross_entropy(ad::Graph& g, ad::Var probabilities, std::span<const int> targets,
                             double smoothing, std::size_t num_classes) {
  if (g.value(probabilities).cols() != num_classes) {
    throw ConfigError("cross_entropy: expected " + std::to_string(num_classes) +
                      " classes, probabilities have " +
                      std::to_string(g.value(probabilities).cols()));
  }
  const ad::Segment whole{0, num_classes};
  return segmented_cross_entropy(g, probabilities, targets, std::span<const ad::Segment>(&whole, 1),
                                 smoothing);
}

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
class AdamW {
 public:
  explicit AdamW(AdamWOptions opts = {}) : opts_(opts) {}

  const AdamWOptions& options() const noexcept { return opts_; }
  std::uint64_t steps() const noexcept { return t_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  // params[i] is updated from grads[i]; names are only used in error messages.
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
            std::span<const std::string> names = {}) {
    if (params.size() != grads.size()) throw ConfigError("optimizer: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->shape(), 0.0);
        v_.emplace_back(p->shape(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ConfigError("optimizer: parameter set changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i]->shape() != params[i]->shape()) {
        throw ConfigError("optimizer: gradient shape " + shape_string(grads[i]->shape()) +
                          " for parameter of shape " + shape_string(params[i]->shape()));
      }
      if (!grads[i]->all_finite()) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw NumericError("non-finite gradient for parameter " + name);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto theta = params[i]->values();
      auto g = grads[i]->values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      for (std::size_t j = 0; j < theta.size(); ++j) {
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        theta[j] = theta[j] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps) -
                   opts_.lr * opts_.weight_decay * theta[j];
      }
    }
  }

 private:
  AdamWOptions opts_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

}  // namespace kgcbm::nn
