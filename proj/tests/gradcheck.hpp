#pragma once

// Central finite-difference check of Sequential<double> gradients against a
// random linear functional L(y) = <y, R>.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "porogan/layers.hpp"

namespace porogan::test {

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

inline double relative_error(double a, double n) {
  const double scale = std::max({std::abs(a), std::abs(n), 1e-8});
  return std::abs(a - n) / scale;
}

/// Checks `coords` randomly chosen coordinates spread over the input and all
/// parameters of `net`. Inputs for relu-family layers should avoid |x| < step.
inline GradCheckResult grad_check(Sequential<double>& net, Tensor5<double> x, std::size_t coords, std::uint64_t seed,
                                  double step = 1e-4, Mode mode = Mode::train) {
  std::mt19937_64 rng(seed);
  const Shape5 out_shape = net.output_shape(x.shape());
  Tensor5<double> r(out_shape);
  fill_normal(r, rng);

  auto loss = [&](const Tensor5<double>& in) { return dot(net.forward(in, mode), r); };

  net.zero_grad();
  net.forward(x, mode);
  const Tensor5<double> dx = net.backward(r);

  struct Slot {
    std::string name;
    Tensor5<double>* value;
    std::vector<double> grad;
  };
  std::vector<Slot> slots;
  slots.push_back({"input", &x, std::vector<double>(dx.values().begin(), dx.values().end())});
  for (auto& [name, p] : net.parameters())
    slots.push_back({name, &p->value, std::vector<double>(p->grad.values().begin(), p->grad.values().end())});

  std::size_t total = 0;
  for (const auto& s : slots) total += s.value->size();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  GradCheckResult result;
  for (std::size_t c = 0; c < coords; ++c) {
    std::size_t k = pick(rng);
    std::size_t si = 0;
    while (k >= slots[si].value->size()) k -= slots[si++].value->size();
    Slot& s = slots[si];
    const double orig = (*s.value)[k];
    (*s.value)[k] = orig + step;
    const double lp = loss(x);
    (*s.value)[k] = orig - step;
    const double lm = loss(x);
    (*s.value)[k] = orig;
    const double numeric = (lp - lm) / (2.0 * step);
    const double err = relative_error(s.grad[k], numeric);
    ++result.checked;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = s.name + "[" + std::to_string(k) + "] analytic " + std::to_string(s.grad[k]) + " numeric " +
                     std::to_string(numeric);
    }
  }
  return result;
}

/// Uniform values in [-1, 1] pushed away from zero by at least `gap`.
inline Tensor5<double> random_input(Shape5 shape, std::uint64_t seed, double gap = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor5<double> t(shape);
  for (auto& v : t.values()) {
    double a = u(rng);
    if (gap > 0.0) a = a < 0 ? a - gap : a + gap;
    v = a;
  }
  return t;
}

template <typename Rng>
void randomize_parameters(Sequential<double>& net, Rng& rng, double stddev = 0.5) {
  for (auto& [name, p] : net.parameters()) {
    const bool gamma = name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
    fill_normal(p->value, rng, gamma ? 1.0 : 0.0, stddev);
  }
}

}  // namespace porogan::test
