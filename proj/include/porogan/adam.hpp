#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "porogan/error.hpp"
#include "porogan/tensor.hpp"

namespace porogan {

struct AdamSettings {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam step on every parameter, then zeroes the gradients.
/// Nothing is modified if any gradient is non-finite.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamSettings& s) {
  for (const auto* p : params)
    require(p->grad.all_finite(), Errc::divergence, "non-finite gradient");
  for (auto* p : params) {
    ++p->step_count;
    const double t = static_cast<double>(p->step_count);
    const double c1 = 1.0 - std::pow(s.beta1, t);
    const double c2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = static_cast<double>(p->grad[i]);
      const double m = s.beta1 * static_cast<double>(p->adam_m[i]) + (1.0 - s.beta1) * g;
      const double v = s.beta2 * static_cast<double>(p->adam_v[i]) + (1.0 - s.beta2) * g * g;
      p->adam_m[i] = static_cast<T>(m);
      p->adam_v[i] = static_cast<T>(v);
      const double update = s.learning_rate * (m / c1) / (std::sqrt(v / c2) + s.epsilon);
      p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
    }
    p->zero_grad();
  }
}

template <typename T>
void adam_step(const std::vector<std::pair<std::string, Parameter<T>*>>& named, const AdamSettings& s) {
  std::vector<Parameter<T>*> params;
  for (const auto& [name, p] : named) params.push_back(p);
  adam_step(params, s);
}

}  // namespace porogan
