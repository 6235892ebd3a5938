#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "advnav/instruct/instruction.hpp"

namespace advnav {

enum class BaselineKind { Static, Random, Heuristic, Pwws };

inline std::string baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::Static: return "static";
    case BaselineKind::Random: return "random";
    case BaselineKind::Heuristic: return "heuristic";
    case BaselineKind::Pwws: return "pwws";
  }
  return "unknown";
}

/// What the navigator would do on a given token sequence at the current
/// timestep, without advancing its state.
struct NavigatorProbe {
  std::vector<double> alpha_w;  // over the L tokens
  std::vector<double> p_n;      // over the J+1 candidates
};

using ProbeFn = std::function<NavigatorProbe(const std::vector<int>& tokens)>;

struct BaselineContext {
  const Instruction* instruction = nullptr;
  int timestep = 0;
  ProbeFn probe;                               // heuristic, pwws
  std::function<AttackAction()> first_action;  // static: the DR-Attacker's choice at t = 0
};

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

/// Non-learned attacks used for comparison. One instance covers one
/// episode; reset() before the next.
class BaselineAttacker {
 public:
  BaselineAttacker(BaselineKind kind, std::uint64_t seed) : kind_(kind), rng_(seed) {}

  BaselineKind kind() const { return kind_; }
  void reset() { fixed_.reset(); }
  /// True when the last call could not attack (heuristic on empty targets).
  bool flagged() const { return flagged_; }

  std::optional<AttackAction> choose(const BaselineContext& ctx) {
    flagged_ = false;
    const Instruction& instr = *ctx.instruction;
    if (instr.valid_cells() == 0) {
      flagged_ = true;
      return std::nullopt;
    }
    const int k_max = instr.max_candidates();
    switch (kind_) {
      case BaselineKind::Static: {
        if (!fixed_) {
          if (!ctx.first_action) throw std::invalid_argument("static baseline needs a first action");
          fixed_ = ctx.first_action();
        }
        return fixed_;
      }
      case BaselineKind::Random: {
        const auto cells = valid_cells(instr);
        std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
        return cells[pick(rng_)];
      }
      case BaselineKind::Heuristic: {
        if (!ctx.probe) throw std::invalid_argument("heuristic baseline needs a navigator probe");
        const auto probe = ctx.probe(instr.tokens);
        int best = -1;
        for (int j = 0; j < instr.target_count(); ++j) {
          if (instr.candidates[static_cast<std::size_t>(j)].empty()) continue;
          const double w = probe.alpha_w.at(static_cast<std::size_t>(instr.targets[static_cast<std::size_t>(j)]));
          if (best < 0 || w > probe.alpha_w[static_cast<std::size_t>(instr.targets[static_cast<std::size_t>(best)])]) best = j;
        }
        if (best < 0) {
          flagged_ = true;
          return std::nullopt;
        }
        const auto kj = instr.candidates[static_cast<std::size_t>(best)].size();
        std::uniform_int_distribution<std::size_t> pick(0, kj - 1);
        return AttackAction::at(best, static_cast<int>(pick(rng_)), k_max);
      }
      case BaselineKind::Pwws: {
        if (!ctx.probe) throw std::invalid_argument("pwws baseline needs a navigator probe");
        return pwws_choice(instr, ctx.probe);
      }
    }
    return std::nullopt;
  }

  /// Exhaustive search for the substitution whose perturbed action
  /// distribution is furthest (total variation) from the clean one; lowest
  /// flat index on ties.
  static AttackAction pwws_choice(const Instruction& instr, const ProbeFn& probe) {
    const auto clean = probe(instr.tokens).p_n;
    std::optional<AttackAction> best;
    double best_change = -1.0;
    for (const auto& a : valid_cells(instr)) {
      const auto perturbed = apply_perturbation(instr, a, 0);
      const double change = total_variation(clean, probe(perturbed.tokens).p_n);
      if (change > best_change) {
        best_change = change;
        best = a;
      }
    }
    return *best;
  }

  static std::vector<AttackAction> valid_cells(const Instruction& instr) {
    std::vector<AttackAction> out;
    const int k_max = instr.max_candidates();
    for (int j = 0; j < instr.target_count(); ++j) {
      const auto kj = static_cast<int>(instr.candidates[static_cast<std::size_t>(j)].size());
      for (int k = 0; k < kj; ++k) out.push_back(AttackAction::at(j, k, k_max));
    }
    return out;
  }

 private:
  BaselineKind kind_;
  std::mt19937_64 rng_;
  std::optional<AttackAction> fixed_;
  bool flagged_ = false;
};

}  // namespace advnav
