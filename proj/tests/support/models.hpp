#pragma once

// Small model fixtures shared by the model tests and the acceptance binary.

#include <cstdint>
#include <random>
#include <vector>

#include "advnav/attacker/attacker.hpp"
#include "advnav/instruct/instruction.hpp"
#include "advnav/navigator/navigator.hpp"
#include "advnav/trainer/a2c.hpp"
#include "advnav/trainer/stages.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace advnav::testing {

inline ModelDims tiny_dims() {
  ModelDims d;
  d.word_dim = 6;
  d.view_dim = 5;
  d.proj_dim = 4;
  d.hidden_dim = 4;
  d.attack_logit_scale = 3.0;
  return d;
}

/// A world, a multi-hop episode on it and its attackable instruction.
struct ModelFixture {
  WorldGraph world;
  int start = 0;
  int goal = 0;
  Instruction instr;

  Episode episode() const { return Episode::begin(world, start, goal, world.config.max_steps); }
};

inline ModelFixture make_fixture(std::uint64_t seed, const ModelDims& d, int min_hops = 2) {
  ModelFixture f;
  WorldConfig wc;
  wc.node_count = 8;
  wc.view_dim = d.view_dim;
  wc.seed = seed;
  f.world = generate_world(wc);
  std::mt19937_64 rng(mix_seed(seed, 77));
  for (int tries = 0;; ++tries) {
    f.start = static_cast<int>(rng() % 8);
    f.goal = static_cast<int>(rng() % 8);
    const auto hops = static_cast<int>(f.world.shortest_path(f.start, f.goal).size()) - 1;
    if (hops >= min_hops || tries > 200) break;
  }
  f.instr = generate_instruction(f.world, f.episode(), seed);
  return f;
}

/// Fresh parameters for every model, widened from float to double.
inline DStore double_params(const ModelDims& d, std::uint64_t seed, int value_hidden = 4) {
  DStore s = init_all_params(d, value_hidden, seed).cast<double>();
  // Spread the values so the nonlinearities leave their linear regime.
  for (auto& [name, t] : s.tensors()) {
    for (auto& v : t.values) v *= 2.0;
  }
  return s;
}

/// Deterministic weights for turning a tensor into a scalar.
template <class T>
Var weighted_sum(BasicTape<T>& t, Var y) {
  const std::size_t n = t.rows(y) * t.cols(y);
  std::vector<T> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<T>(0.25 + 0.13 * static_cast<double>(i % 5));
  return t.sum(t.mul(y, t.constant(BasicTensor<T>::from(t.rows(y), t.cols(y), std::move(c)))));
}

/// Navigator loss over the teacher trajectory touching every output:
/// action CE, attacked-word CE, and weighted sums of both attentions and
/// both attended features.
inline LossBuilder navigator_loss(const ModelFixture& f, const ModelDims& d, int max_steps = 3) {
  return [&f, d, max_steps](DTape& t, DStore& s) {
    NavigatorGraph<double> nav(t, s, d);
    const auto enc = nav.encode(f.instr.tokens, f.instr.targets);
    auto state = nav.initial_state();
    Episode ep = f.episode();
    std::vector<Var> terms;
    for (int k = 0; k < max_steps && !ep.done; ++k) {
      const Var views = t.constant(f.world.views(ep.current).cast<double>());
      const auto out = nav.decode_step(enc, views, state);
      const int a = ep.teacher_action();
      terms.push_back(t.cross_entropy(out.logits, a));
      if (out.pc_logits.valid()) {
        terms.push_back(t.scale(t.cross_entropy(out.pc_logits, k % f.instr.target_count()), 0.5));
      }
      terms.push_back(weighted_sum(t, out.alpha_w));
      terms.push_back(weighted_sum(t, out.alpha_v));
      terms.push_back(weighted_sum(t, out.fw));
      terms.push_back(weighted_sum(t, out.fv));
      state = nav.next_state(out, views, a);
      ep = step(ep, a);
    }
    return t.sum(t.concat(std::move(terms), 0));
  };
}

/// Attacker loss on a fixed view feature: CE on one cell, the policy
/// entropy, and weighted sums of beta and every gamma.
inline LossBuilder attacker_loss(const ModelFixture& f, const ModelDims& d, std::vector<double> fv, int cell) {
  return [&f, d, fv = std::move(fv), cell](DTape& t, DStore& s) {
    AttackerGraph<double> att(t, s, d.attack_logit_scale);
    const auto feats = att.prepare(f.instr);
    const auto sc = att.score(f.instr, feats, t.constant(BasicTensor<double>::row(fv)));
    std::vector<Var> terms{t.cross_entropy(sc.logits, cell), t.scale(t.softmax_entropy(sc.logits), 0.3),
                           weighted_sum(t, sc.beta)};
    for (const auto& g : sc.gamma) {
      if (g.valid()) terms.push_back(weighted_sum(t, g));
    }
    return t.sum(t.concat(std::move(terms), 0));
  };
}

/// Squared error of a value net against a fixed return.
inline LossBuilder value_loss(const char* prefix, std::vector<double> state, double target) {
  return [prefix, state = std::move(state), target](DTape& t, DStore& s) {
    ValueGraph<double> v(t, s, prefix);
    const Var err = t.add(v(t.constant(BasicTensor<double>::row(state))),
                          t.constant(BasicTensor<double>(1, 1, -target)));
    return t.sum(t.mul(err, err));
  };
}

inline std::vector<double> random_row(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = nd(rng);
  return v;
}

}  // namespace advnav::testing
