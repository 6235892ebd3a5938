#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "advnav/diffcore/params.hpp"

namespace advnav {

enum class OptimizerKind { Sgd, Adam };

/// Gradient-descent step over the tensors of a store whose names start with
/// a given prefix. Adam keeps its moments keyed by tensor name.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::string prefix)
      : kind_(kind), lr_(lr), prefix_(std::move(prefix)) {}

  void step(ParamStore& store) {
    ++t_;
    for (auto& [name, p] : store.tensors()) {
      if (name.rfind(prefix_, 0) != 0 || p.grad.empty()) continue;
      if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < p.values.size(); ++i) {
          p.values[i] = static_cast<float>(p.values[i] - lr_ * p.grad[i]);
        }
        continue;
      }
      auto& m = moments_[name];
      if (m.first.size() != p.values.size()) {
        m.first.assign(p.values.size(), 0.0);
        m.second.assign(p.values.size(), 0.0);
      }
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double g = p.grad[i];
        m.first[i] = kBeta1 * m.first[i] + (1.0 - kBeta1) * g;
        m.second[i] = kBeta2 * m.second[i] + (1.0 - kBeta2) * g * g;
        const double update = lr_ * (m.first[i] / c1) / (std::sqrt(m.second[i] / c2) + kEps);
        p.values[i] = static_cast<float>(p.values[i] - update);
      }
    }
  }

  const std::string& prefix() const { return prefix_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  double lr_;
  std::string prefix_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace advnav
