#pragma once

// Adversarial losses expressed on discriminator logits z, where D = sigmoid(z).
// All losses are means over the batch; gradients are dL/dz.

#include <cmath>

#include "porogan/tensor.hpp"

namespace porogan {

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor5<T> grad;
};

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Binary cross-entropy -[t log D + (1-t) log(1-D)] with a constant target.
template <typename T>
LossResult<T> bce_with_logits(const Tensor5<T>& logits, double target) {
  LossResult<T> r{0.0, Tensor5<T>(logits.shape())};
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = static_cast<double>(logits[i]);
    // -t log s(z) - (1-t) log(1 - s(z)) = softplus(z) - t z
    r.value += softplus(z) - target * z;
    r.grad[i] = static_cast<T>((sigmoid(z) - target) / n);
  }
  r.value /= n;
  return r;
}

/// Non-saturating generator loss -log D(G(z)).
template <typename T>
LossResult<T> generator_loss_non_saturating(const Tensor5<T>& fake_logits) {
  return bce_with_logits(fake_logits, 1.0);
}

/// Saturating (minimax) generator objective log(1 - D(G(z))), to be minimised.
template <typename T>
LossResult<T> generator_loss_saturating(const Tensor5<T>& fake_logits) {
  LossResult<T> r{0.0, Tensor5<T>(fake_logits.shape())};
  const double n = static_cast<double>(fake_logits.size());
  for (std::size_t i = 0; i < fake_logits.size(); ++i) {
    const double z = static_cast<double>(fake_logits[i]);
    r.value += -softplus(z);
    r.grad[i] = static_cast<T>(-sigmoid(z) / n);
  }
  r.value /= n;
  return r;
}

}  // namespace porogan
