#pragma once

// Finite-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "advnav/diffcore/params.hpp"
#include "advnav/diffcore/tape.hpp"

namespace advnav::testing {

using DTape = BasicTape<double>;
using DStore = BasicParamStore<double>;

/// Builds a scalar loss on the given tape from the store's parameters.
using LossBuilder = std::function<Var(DTape&, DStore&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "tensor[index]"
  int checked = 0;
};

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

inline double eval_loss(const LossBuilder& f, DStore& store) {
  DTape tape;
  const Var l = f(tape, store);
  return tape.scalar(l);
}

/// Compares reverse-mode gradients of every parameter entry with a
/// five-point central difference, step h.
inline GradCheckResult check_gradients(const LossBuilder& f, DStore& store, double h = 1e-3) {
  store.zero_grad();
  {
    DTape tape;
    const Var l = f(tape, store);
    tape.backward(l);
  }
  GradCheckResult out;
  for (auto& [name, t] : store.tensors()) {
    t.ensure_grad();
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double x = t.values[i];
      auto at = [&](double v) {
        t.values[i] = v;
        return eval_loss(f, store);
      };
      const double numeric =
          (-at(x + 2 * h) + 8 * at(x + h) - 8 * at(x - h) + at(x - 2 * h)) / (12 * h);
      t.values[i] = x;
      const double e = rel_error(t.grad[i], numeric);
      ++out.checked;
      if (e > out.max_rel_error) {
        out.max_rel_error = e;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(t.grad[i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace advnav::testing
