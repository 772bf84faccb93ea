#pragma once

#include <vector>

#include "fedta/numkit.hpp"

namespace fedta {

struct TrainHistory {
  /// Mean loss over the training data before training and after each epoch.
  std::vector<double> epoch_loss;
};

/// Linear classification head: logits = W f + b over the full label space.
struct LinearHead {
  Mat weights;  // classes x d
  Vec bias;     // classes

  LinearHead() = default;
  LinearHead(std::size_t classes, std::size_t dim) : weights(classes, dim), bias(classes, 0.0) {}

  std::size_t num_classes() const { return weights.rows; }
  std::size_t dim() const { return weights.cols; }

  Vec logits(ConstSpan feature) const {
    Vec out = matvec(weights, feature);
    axpy(1.0, bias, out);
    return out;
  }

  friend bool operator==(const LinearHead&, const LinearHead&) = default;
};

struct HeadGrad {
  Mat weights;
  Vec bias;

  explicit HeadGrad(const LinearHead& head)
      : weights(head.weights.rows, head.weights.cols), bias(head.bias.size(), 0.0) {}

  /// Accumulate the contribution of one sample given dL/dlogits.
  void accumulate(ConstSpan grad_logits, ConstSpan feature, double weight = 1.0) {
    for (std::size_t r = 0; r < weights.rows; ++r) {
      const double g = weight * grad_logits[r];
      if (g == 0.0) continue;
      auto row = weights.row(r);
      for (std::size_t c = 0; c < weights.cols; ++c) row[c] += g * feature[c];
      bias[r] += g;
    }
  }
};

inline void sgd_step(LinearHead& head, const HeadGrad& grad, double lr) {
  axpy(-lr, grad.weights.data, head.weights.data);
  axpy(-lr, grad.bias, head.bias);
}

/// Cross-entropy through a linear head: returns the loss, accumulates the
/// head gradient into `grad`, and returns dL/dfeature.
struct HeadLoss {
  double loss = 0.0;
  Vec grad_feature;
};

inline HeadLoss head_cross_entropy(const LinearHead& head, ConstSpan feature, std::size_t label,
                                   HeadGrad* grad, double weight = 1.0) {
  const LossAndGrad ce = softmax_cross_entropy(head.logits(feature), label);
  if (grad != nullptr) grad->accumulate(ce.grad, feature, weight);
  return {ce.loss, matvec_transposed(head.weights, ce.grad)};
}

/// Argmax over `allowed` classes only (all classes when empty); ties go to the lowest label.
inline std::size_t head_predict(const LinearHead& head, ConstSpan feature,
                                std::span<const int> allowed = {}) {
  const Vec z = head.logits(feature);
  std::size_t best = 0;
  bool have = false;
  auto consider = [&](std::size_t c) {
    if (!have || z[c] > z[best]) {
      best = c;
      have = true;
    }
  };
  if (allowed.empty()) {
    for (std::size_t c = 0; c < z.size(); ++c) consider(c);
  } else {
    for (int c : allowed) consider(static_cast<std::size_t>(c));
  }
  return best;
}

}  // namespace fedta
