#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "advnav/diffcore/optim.hpp"
#include "advnav/diffcore/params.hpp"
#include "advnav/diffcore/tape.hpp"

namespace advnav {

/// Two affine layers with tanh between, state summary -> scalar value.
template <class T>
void init_value_params(BasicParamStore<T>& store, const std::string& prefix, int state_dim,
                       int hidden_dim, std::mt19937_64& rng) {
  store.add(prefix + ".w1", static_cast<std::size_t>(state_dim), static_cast<std::size_t>(hidden_dim), rng);
  store.add_zeros(prefix + ".b1", 1, static_cast<std::size_t>(hidden_dim));
  store.add(prefix + ".w2", static_cast<std::size_t>(hidden_dim), 1, rng);
  store.add_zeros(prefix + ".b2", 1, 1);
}

template <class T>
class ValueGraph {
 public:
  ValueGraph(BasicTape<T>& tape, BasicParamStore<T>& store, const std::string& prefix)
      : tape_(tape),
        w1_(store.bind(tape, prefix + ".w1")),
        b1_(store.bind(tape, prefix + ".b1")),
        w2_(store.bind(tape, prefix + ".w2")),
        b2_(store.bind(tape, prefix + ".b2")) {}

  Var operator()(Var state) {
    Var hidden = tape_.tanh(tape_.add(tape_.matmul(state, w1_), b1_));
    return tape_.add(tape_.matmul(hidden, w2_), b2_);
  }

 private:
  BasicTape<T>& tape_;
  Var w1_, b1_, w2_, b2_;
};

/// One (s_t, a_t, r_t) record. The Var handles are set only for the player
/// being trained and refer to that rollout's tape.
struct Transition {
  std::vector<float> state;
  int action = 0;
  double reward = 0.0;
  double value = 0.0;
  double log_prob = 0.0;
  double entropy = 0.0;
  std::optional<int> attacked_target;
  Var log_prob_var;
  Var entropy_var;
  Var value_var;
};

struct RolloutBuffer {
  std::vector<Transition> steps;
  double terminal_value = 0.0;  // V(s_{N+1}); zero for terminated episodes
  bool success = false;
};

struct Returns {
  std::vector<double> returns;
  std::vector<double> advantages;
};

/// R_t = sum_{i=t..N} gamma^{i-t} r_i + gamma^{N-t} V(s_{N+1}),
/// A_t = R_t - V(s_t).
inline Returns compute_returns(const RolloutBuffer& buf, double gamma) {
  if (buf.steps.empty()) throw std::invalid_argument("compute_returns: empty buffer");
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("compute_returns: gamma must be in [0, 1)");
  const std::size_t n = buf.steps.size();
  Returns out;
  out.returns.assign(n, 0.0);
  out.advantages.assign(n, 0.0);
  // Backward recursion on the reward part; the bootstrap carries gamma^{N-t}.
  double acc = 0.0;
  double boot = buf.terminal_value;
  for (std::size_t t = n; t-- > 0;) {
    acc = buf.steps[t].reward + gamma * acc;
    if (t + 1 < n) boot *= gamma;
    out.returns[t] = acc + boot;
    out.advantages[t] = out.returns[t] - buf.steps[t].value;
  }
  return out;
}

struct LossWeights {
  double entropy = 0.01;
  double value = 0.5;
};

struct A2cDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  bool aborted = false;
};

/// Sum over steps of -A_t log pi(a_t|s_t) - w_h H(pi(s_t)) + w_v (V(s_t) - R_t)^2,
/// with A_t and R_t treated as constants.
template <class T>
Var a2c_loss(BasicTape<T>& tape, const RolloutBuffer& buf, const Returns& ret,
             const LossWeights& w, A2cDiagnostics* diag = nullptr) {
  std::vector<Var> terms;
  for (std::size_t t = 0; t < buf.steps.size(); ++t) {
    const auto& s = buf.steps[t];
    if (!s.log_prob_var.valid() || !s.value_var.valid() || !s.entropy_var.valid()) {
      throw std::invalid_argument("a2c_loss: transition has no recorded graph");
    }
    terms.push_back(tape.scale(s.log_prob_var, -ret.advantages[t]));
    terms.push_back(tape.scale(s.entropy_var, -w.entropy));
    BasicTensor<T> target(1, 1, static_cast<T>(-ret.returns[t]));
    Var err = tape.add(s.value_var, tape.constant(std::move(target)));
    terms.push_back(tape.scale(tape.mul(err, err), w.value));
    if (diag) {
      diag->policy_loss += -ret.advantages[t] * s.log_prob;
      diag->entropy += s.entropy;
      const double e = s.value - ret.returns[t];
      diag->value_loss += e * e;
    }
  }
  return tape.sum(tape.concat(std::move(terms), 0));
}

/// Averages accumulated gradients over `batch`, rejects non-finite
/// gradients, clips to `clip` (0 disables) and applies one optimizer step.
/// Returns false, leaving parameters untouched, when the update is aborted.
inline bool apply_update(ParamStore& store, Optimizer& opt, int batch, double clip) {
  if (batch > 1) store.scale_grads(1.0 / batch);
  if (!store.grads_finite()) {
    store.zero_grad();
    return false;
  }
  if (clip > 0.0) {
    const double norm = store.grad_norm();
    if (norm > clip) store.scale_grads(clip / norm);
  }
  opt.step(store);
  store.zero_grad();
  return true;
}

}  // namespace advnav
