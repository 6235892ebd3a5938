#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advnav/evalkit/baselines.hpp"
#include "advnav/evalkit/metrics.hpp"
#include "advnav/trainer/stages.hpp"

namespace advnav {

enum class AttackKind { None, Dr, Static, Random, Heuristic, Pwws };

inline const std::vector<AttackKind>& all_attack_kinds() {
  static const std::vector<AttackKind> k{AttackKind::None,   AttackKind::Dr,        AttackKind::Static,
                                         AttackKind::Random, AttackKind::Heuristic, AttackKind::Pwws};
  return k;
}

inline std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::Dr: return "dr";
    case AttackKind::Static: return "static";
    case AttackKind::Random: return "random";
    case AttackKind::Heuristic: return "heuristic";
    case AttackKind::Pwws: return "pwws";
  }
  return "unknown";
}

inline AttackKind parse_attack(const std::string& s) {
  for (AttackKind k : all_attack_kinds()) {
    if (attack_name(k) == s) return k;
  }
  throw std::invalid_argument("unknown attack '" + s + "' (expected none|dr|static|random|heuristic|pwws)");
}

inline Split parse_split(const std::string& s) {
  for (Split sp : {Split::Train, Split::Seen, Split::Unseen}) {
    if (split_name(sp) == s) return sp;
  }
  throw std::invalid_argument("unknown split '" + s + "' (expected train|seen|unseen)");
}

inline std::optional<BaselineKind> baseline_of(AttackKind k) {
  switch (k) {
    case AttackKind::Static: return BaselineKind::Static;
    case AttackKind::Random: return BaselineKind::Random;
    case AttackKind::Heuristic: return BaselineKind::Heuristic;
    case AttackKind::Pwws: return BaselineKind::Pwws;
    default: return std::nullopt;
  }
}

struct PerturbationRecord {
  std::string episode_id;
  int timestep = 0;
  int position = 0;
  int original_token = 0;
  int substitute_token = 0;
};

struct EvalResult {
  MetricsReport report;
  std::vector<PerturbationRecord> perturbations;
  int flagged = 0;  // episodes whose instruction could not be attacked
  int aux_correct = 0;
  int aux_total = 0;
  double aux_chance = 0.0;

  double aux_accuracy() const { return aux_total ? static_cast<double>(aux_correct) / aux_total : 0.0; }
  /// Mean of 1/L' over the counted steps.
  double aux_chance_level() const { return aux_total ? aux_chance / aux_total : 0.0; }
};

/// Plays every episode of a split with the greedy navigator under `attack`.
inline Rollout evaluate_episode(ParamStore& params, const ModelDims& dims, const Corpus& corpus,
                                const EpisodeSpec& spec, AttackKind attack, std::uint64_t seed,
                                bool record_trace = false) {
  RolloutOptions o;
  o.navigator_mode = SelectMode::Greedy;
  o.attacker_mode = SelectMode::Greedy;
  o.record_trace = record_trace;
  o.seed = seed;
  std::optional<BaselineAttacker> baseline;
  if (attack == AttackKind::Dr) {
    o.attack = AttackSource::DrAttacker;
  } else if (const auto b = baseline_of(attack)) {
    baseline.emplace(*b, mix_seed(seed, 0xBA5E));
    o.attack = AttackSource::Baseline;
    o.baseline = &*baseline;
  }
  Rollout r = rollout_episode(params, dims, corpus, spec, o);
  r.tape.reset();
  return r;
}

inline EvalResult evaluate_split(ParamStore& params, const ModelDims& dims, const Corpus& corpus,
                                 Split split, AttackKind attack, std::uint64_t seed, int workers = 1) {
  const auto& specs = corpus.split(split);
  std::vector<Rollout> rollouts(specs.size());
  detail::parallel_for(static_cast<int>(specs.size()), workers, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    rollouts[k] = evaluate_episode(params, dims, corpus, specs[k], attack,
                                   mix_seed(seed, static_cast<std::uint64_t>(i)));
  });
  EvalResult out;
  std::vector<EpisodeMetrics> rows;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& r = rollouts[i];
    rows.push_back(episode_metrics(r.episode, corpus.worlds.at(static_cast<std::size_t>(specs[i].world)),
                                   specs[i].id));
    if (r.attack_skipped) ++out.flagged;
    out.aux_correct += r.aux_correct;
    out.aux_total += r.aux_total;
    out.aux_chance += r.aux_chance;
    for (const auto& s : r.steps) {
      if (!s.attack) continue;
      out.perturbations.push_back(
          {specs[i].id, s.timestep, s.attacked_position, s.original_token, s.substitute_token});
    }
  }
  out.report = aggregate(std::move(rows));
  return out;
}

}  // namespace advnav
