#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "impnet/autograd.hpp"

namespace impnet {

/// Coordinates of one variable to probe; empty means all of them.
template <class T>
struct GradProbe {
  Variable<T> var;
  std::vector<std::size_t> coords;
};

/// Max over probed coordinates of |analytic - central difference| / max(1, |analytic|).
/// `f(tape)` must rebuild the scalar from the probed variables each call.
/// A NaN anywhere is reported as +inf.
template <class T, class F>
T grad_check(F&& f, std::vector<GradProbe<T>> probes, T h) {
  for (auto& p : probes) p.var.zero_grad();
  {
    Tape<T> tape;
    const Variable<T> root = f(tape);
    tape.backward(root);
  }
  auto eval = [&f]() {
    Tape<T> tape = Tape<T>::inference();
    return f(tape).value()[0];
  };
  T worst{0};
  for (auto& p : probes) {
    const bool has = p.var.has_grad();
    std::vector<std::size_t> coords = p.coords;
    if (coords.empty()) {
      coords.resize(p.var.value().size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }
    for (std::size_t i : coords) {
      T& slot = p.var.mutable_value()[i];
      const T saved = slot;
      slot = saved + h;
      const T plus = eval();
      slot = saved - h;
      const T minus = eval();
      slot = saved;
      const T numeric = (plus - minus) / (T{2} * h);
      const T analytic = has ? p.var.grad()[i] : T{0};
      const T err = std::abs(analytic - numeric) / std::max(T{1}, std::abs(analytic));
      if (std::isnan(err)) return std::numeric_limits<T>::infinity();
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <class T, class F>
T grad_check(F&& f, const Variable<T>& x, T h) {
  return grad_check<T>(std::forward<F>(f), std::vector<GradProbe<T>>{{x, {}}}, h);
}

}  // namespace impnet
