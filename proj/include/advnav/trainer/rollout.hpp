#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "advnav/attacker/attacker.hpp"
#include "advnav/evalkit/baselines.hpp"
#include "advnav/navigator/navigator.hpp"
#include "advnav/trainer/a2c.hpp"
#include "advnav/trainer/corpus.hpp"

namespace advnav {

inline constexpr const char* kNavValuePrefix = "nav.value";
inline constexpr const char* kAttValuePrefix = "att.value";

enum class Player { Navigator, Attacker };
enum class AttackSource { None, DrAttacker, Baseline };
enum class NavigatorReward { ZeroSum, BaseAgent };

struct RolloutOptions {
  std::optional<Player> learner;  // the player whose graph is kept for an update
  AttackSource attack = AttackSource::None;
  SelectMode attacker_mode = SelectMode::Greedy;
  SelectMode navigator_mode = SelectMode::Greedy;
  BaselineAttacker* baseline = nullptr;
  NavigatorReward navigator_reward = NavigatorReward::ZeroSum;
  bool record_trace = false;
  std::uint64_t seed = 0;
};

/// Per-timestep record used by traces and tests.
struct StepTrace {
  int timestep = 0;
  std::optional<AttackAction> attack;
  int attacked_position = -1;
  int original_token = -1;
  int substitute_token = -1;
  std::vector<int> navigator_tokens;
  std::vector<double> alpha_w;
  std::vector<double> p_n;
  std::vector<double> p_c;
  int predicted_target = -1;
  int action = 0;
};

struct Rollout {
  Episode episode;
  RolloutBuffer navigator;
  RolloutBuffer attacker;
  std::vector<StepTrace> steps;
  std::vector<Var> imitation_terms;
  std::vector<Var> aux_terms;
  std::unique_ptr<Tape> tape;
  bool attack_skipped = false;  // attacker present but instruction not attackable
  int aux_correct = 0;
  int aux_total = 0;
  double aux_chance = 0.0;  // sum of 1/L' over the counted steps
};

namespace detail {

inline std::vector<double> to_doubles(std::span<const float> v) { return {v.begin(), v.end()}; }

inline int argmax(std::span<const float> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline int sample_index(std::span<const float> p, std::mt19937_64& rng) {
  double total = 0.0;
  for (float x : p) total += x;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace detail

/// Plays one episode. At each step the navigator attends the views with its
/// previous state, the attacker (DR-Attacker or a baseline) substitutes one
/// word of the original instruction given that attended feature, and the
/// navigator decodes on the perturbed tokens and acts. Rewards are recorded
/// for both players. Graph handles are kept only for the learning player.
inline Rollout rollout_episode(ParamStore& params, const ModelDims& dims, const Corpus& corpus,
                               const EpisodeSpec& spec, const RolloutOptions& opt) {
  Rollout r;
  r.tape = std::make_unique<Tape>();
  Tape& tape = *r.tape;
  std::mt19937_64 rng(opt.seed);
  const auto& world = corpus.worlds.at(static_cast<std::size_t>(spec.world));
  const Instruction& instr = spec.instruction;
  const bool nav_learns = opt.learner == Player::Navigator;
  const bool att_learns = opt.learner == Player::Attacker;

  NavigatorGraph<float> nav(tape, params, dims);
  std::optional<AttackerGraph<float>> att;
  std::optional<AttackFeatures> att_feats;
  std::optional<ValueGraph<float>> nav_value, att_value;
  if (nav_learns) nav_value.emplace(tape, params, kNavValuePrefix);

  const bool wants_attack = opt.attack != AttackSource::None;
  const bool can_attack = instr.attackable && instr.valid_cells() > 0;
  r.attack_skipped = wants_attack && !can_attack;
  const bool need_dr = can_attack && (opt.attack == AttackSource::DrAttacker ||
                                      (opt.attack == AttackSource::Baseline && opt.baseline &&
                                       opt.baseline->kind() == BaselineKind::Static));
  if (need_dr) {
    att.emplace(tape, params, dims.attack_logit_scale);
    att_feats = att->prepare(instr);
    if (att_learns) att_value.emplace(tape, params, kAttValuePrefix);
  }
  if (opt.baseline) opt.baseline->reset();

  std::map<std::vector<int>, EncodedInstruction> encodings;
  auto encoding_for = [&](const std::vector<int>& tokens) -> const EncodedInstruction& {
    auto it = encodings.find(tokens);
    if (it == encodings.end()) it = encodings.emplace(tokens, nav.encode(tokens, instr.targets)).first;
    return it->second;
  };

  Episode ep = corpus.begin(spec);
  NavState state = nav.initial_state();
  int t = 0;
  while (!ep.done) {
    const Var views = tape.constant(world.views(ep.current));
    const VisualAttention va = nav.attend_views(views, state);
    const auto fv_values = tape.value(va.fv);
    const std::vector<float> fv_state(fv_values.begin(), fv_values.end());
    const Var fv_detached = tape.constant_row(std::span<const float>(fv_state));

    std::optional<AttackAction> attack;
    std::optional<AttackScoreVars> score_vars;
    if (can_attack && opt.attack == AttackSource::DrAttacker) {
      score_vars = att->score(instr, *att_feats, fv_detached);
      const auto numeric = att->numeric(instr, *score_vars);
      attack = select_attack(numeric, opt.attacker_mode, rng);
    } else if (can_attack && opt.attack == AttackSource::Baseline) {
      if (!opt.baseline) throw std::invalid_argument("baseline attack requested without a baseline");
      BaselineContext ctx;
      ctx.instruction = &instr;
      ctx.timestep = t;
      ctx.first_action = [&]() {
        auto sv = att->score(instr, *att_feats, fv_detached);
        return select_attack(att->numeric(instr, sv), SelectMode::Greedy, rng);
      };
      const NavState probe_state = state;
      ctx.probe = [&](const std::vector<int>& tokens) {
        Tape scratch;
        NavigatorGraph<float> g(scratch, params, dims);
        const Var v = scratch.constant(world.views(ep.current));
        const NavState s{scratch.constant(tape.tensor(probe_state.h_tilde)),
                         scratch.constant(tape.tensor(probe_state.cell)),
                         scratch.constant(tape.tensor(probe_state.prev_action))};
        const auto enc = g.encode(tokens, instr.targets);
        const auto out = g.decode_step(enc, v, s);
        return NavigatorProbe{detail::to_doubles(scratch.value(out.alpha_w)),
                              detail::to_doubles(scratch.value(out.p_n))};
      };
      attack = opt.baseline->choose(ctx);
    }

    StepTrace trace;
    trace.timestep = t;
    std::vector<int> tokens = instr.tokens;
    if (attack) {
      const auto p = apply_perturbation(instr, *attack, t);
      tokens = p.tokens;
      trace.attack = attack;
      trace.attacked_position = p.substituted_position;
      trace.original_token = instr.tokens[static_cast<std::size_t>(p.substituted_position)];
      trace.substitute_token = p.substitute_token;
    }

    const auto& enc = encoding_for(tokens);
    const NavStepOutput out = nav.advance(enc, views, va, state);
    const auto p_n = tape.value(out.p_n);
    const int action = opt.navigator_mode == SelectMode::Sample ? detail::sample_index(p_n, rng)
                                                                : detail::argmax(p_n);
    const int teacher = ep.teacher_action();

    if (out.p_c.valid()) {
      const auto pc = tape.value(out.p_c);
      trace.p_c = detail::to_doubles(pc);
      trace.predicted_target = detail::argmax(pc);
      if (attack) {
        ++r.aux_total;
        r.aux_chance += 1.0 / instr.target_count();
        if (trace.predicted_target == attack->target_index) ++r.aux_correct;
      }
    }
    if (opt.record_trace) {
      trace.alpha_w = detail::to_doubles(tape.value(out.alpha_w));
      trace.p_n = detail::to_doubles(p_n);
      trace.navigator_tokens = tokens;
    }
    trace.action = action;

    const Episode next = step(ep, action);
    const int att_reward = attacker_reward(ep, next);
    double nav_reward = -att_reward;
    if (opt.navigator_reward == NavigatorReward::BaseAgent && !next.done) {
      nav_reward = world.distance(ep.current, ep.goal) - world.distance(next.current, next.goal);
    }

    Transition nt;
    nt.state = fv_state;
    nt.action = action;
    nt.reward = nav_reward;
    if (attack) nt.attacked_target = attack->target_index;
    if (nav_learns) {
      const Var ce = tape.cross_entropy(out.logits, action);
      nt.log_prob_var = tape.scale(ce, -1.0);
      nt.log_prob = -tape.scalar(ce);
      nt.entropy_var = tape.softmax_entropy(out.logits);
      nt.entropy = tape.scalar(nt.entropy_var);
      nt.value_var = (*nav_value)(fv_detached);
      nt.value = tape.scalar(nt.value_var);
      r.imitation_terms.push_back(tape.cross_entropy(out.logits, teacher));
      if (attack && out.pc_logits.valid()) {
        r.aux_terms.push_back(tape.cross_entropy(out.pc_logits, attack->target_index));
      }
    }
    r.navigator.steps.push_back(std::move(nt));

    if (attack) {
      Transition at;
      at.state = fv_state;
      at.action = attack->flat_index;
      at.reward = att_reward;
      at.attacked_target = attack->target_index;
      if (att_learns && score_vars) {
        const int cell = cell_position(*score_vars, *attack);
        const Var ce = tape.cross_entropy(score_vars->logits, cell);
        at.log_prob_var = tape.scale(ce, -1.0);
        at.log_prob = -tape.scalar(ce);
        at.entropy_var = tape.softmax_entropy(score_vars->logits);
        at.entropy = tape.scalar(at.entropy_var);
        at.value_var = (*att_value)(fv_detached);
        at.value = tape.scalar(at.value_var);
      }
      r.attacker.steps.push_back(std::move(at));
    }

    r.steps.push_back(std::move(trace));
    state = nav.next_state(out, views, action);
    ep = next;
    ++t;
  }
  const auto& g = world;
  r.navigator.success = g.distance(ep.current, ep.goal) <= g.config.success_radius;
  r.attacker.success = !r.navigator.success;
  r.episode = std::move(ep);
  return r;
}

}  // namespace advnav
