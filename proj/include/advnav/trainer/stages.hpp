#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "advnav/diffcore/optim.hpp"
#include "advnav/diffcore/params.hpp"
#include "advnav/trainer/rollout.hpp"

namespace advnav {

struct TrainConfig {
  double gamma = 0.9;
  double learning_rate = 0.003;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double entropy_weight = 0.01;
  double value_weight = 0.5;
  double imitation_weight = 1.0;
  double aux_weight = 0.5;
  double grad_clip = 5.0;
  int batch_size = 8;            // navigator updates
  int attacker_batch_size = 32;  // attacker updates
  int value_hidden = 32;
  int pretrain_nav_iterations = 2000;
  int pretrain_att_iterations = 1000;
  int n_eta = 75;
  int n_pi = 25;
  int n_iter = 15;
  int finetune_iterations = 1500;
  NavigatorReward navigator_reward = NavigatorReward::ZeroSum;
  std::uint64_t seed = 1;

  int adversarial_iterations() const { return n_iter * (n_eta + n_pi); }

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in [0, 1)");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
    if (entropy_weight < 0.0 || value_weight < 0.0 || imitation_weight < 0.0 || aux_weight < 0.0) {
      throw std::invalid_argument("loss weights must be non-negative");
    }
    if (batch_size < 1 || attacker_batch_size < 1) throw std::invalid_argument("batch sizes must be at least 1");
    if (pretrain_nav_iterations < 0 || pretrain_att_iterations < 0 || finetune_iterations < 0 ||
        n_eta < 0 || n_pi < 0 || n_iter < 0) {
      throw std::invalid_argument("iteration counts must be non-negative");
    }
  }
};

enum class Stage { PretrainNav, PretrainAtt, Adversarial, Finetune };

inline const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::PretrainNav, Stage::PretrainAtt, Stage::Adversarial,
                                    Stage::Finetune};
  return s;
}

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::PretrainNav: return "pretrain_nav";
    case Stage::PretrainAtt: return "pretrain_att";
    case Stage::Adversarial: return "adversarial";
    case Stage::Finetune: return "finetune";
  }
  return "unknown";
}

inline Stage parse_stage(const std::string& s) {
  for (Stage st : all_stages()) {
    if (stage_name(st) == s) return st;
  }
  throw std::invalid_argument("unknown stage '" + s + "'");
}

/// Stage whose checkpoint must exist before `s` can run.
inline std::optional<Stage> prerequisite(Stage s) {
  switch (s) {
    case Stage::PretrainNav: return std::nullopt;
    case Stage::PretrainAtt: return Stage::PretrainNav;
    case Stage::Adversarial: return Stage::PretrainAtt;
    case Stage::Finetune: return Stage::Adversarial;
  }
  return std::nullopt;
}

struct MissingPrerequisite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fresh parameters for both players and both critics.
inline ParamStore init_all_params(const ModelDims& dims, int value_hidden, std::uint64_t seed) {
  dims.validate();
  ParamStore store;
  std::mt19937_64 rng(mix_seed(seed, 0x5EED));
  const int vocab = Vocabulary::standard().size();
  init_navigator_params(store, dims, vocab, rng);
  init_attacker_params(store, dims, vocab, rng);
  init_value_params(store, kNavValuePrefix, dims.view_dim, value_hidden, rng);
  init_value_params(store, kAttValuePrefix, dims.view_dim, value_hidden, rng);
  return store;
}

struct UpdateStats {
  Player player = Player::Navigator;
  A2cDiagnostics a2c;
  double imitation = 0.0;
  double aux = 0.0;
  double mean_reward = 0.0;  // learner's undiscounted episode return, batch mean
  double success_rate = 0.0; // navigator success in the batch
  bool aborted = false;
};

/// Everything a training stage needs besides its parameters.
struct TrainContext {
  const Corpus* corpus = nullptr;
  ModelDims dims;
  TrainConfig config;
  int workers = 1;
  std::ostream* log = nullptr;                       // JSON lines
  std::function<void(const UpdateStats&)> on_update; // observers (tests)
};

namespace detail {

inline std::uint64_t stage_tag(Stage s) { return 0x1000 + static_cast<std::uint64_t>(s); }

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. Each index is
/// handled by exactly one thread and results are written by index, so the
/// outcome does not depend on scheduling.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline double episode_return(const RolloutBuffer& b) {
  double s = 0.0;
  for (const auto& t : b.steps) s += t.reward;
  return s;
}

}  // namespace detail

/// One parameter update for `learner`: a batch of rollouts, per-episode
/// losses with backward on worker threads, then serial gradient
/// accumulation in batch order and an optimizer step restricted to the
/// learner's parameters.
inline UpdateStats train_update(ParamStore& params, Optimizer& opt, const TrainContext& ctx,
                                Player learner, AttackSource attack, std::uint64_t update_seed) {
  const auto& cfg = ctx.config;
  const auto& train = ctx.corpus->train;
  if (train.empty()) throw std::invalid_argument("training split is empty");
  const int batch = learner == Player::Navigator ? cfg.batch_size : cfg.attacker_batch_size;
  std::vector<std::size_t> picks(static_cast<std::size_t>(batch));
  {
    std::mt19937_64 rng(update_seed);
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    for (auto& p : picks) p = pick(rng);
  }
  std::vector<Rollout> rollouts(static_cast<std::size_t>(batch));
  std::vector<UpdateStats> parts(static_cast<std::size_t>(batch));
  std::vector<bool> has_loss(static_cast<std::size_t>(batch), false);
  const LossWeights weights{cfg.entropy_weight, cfg.value_weight};

  detail::parallel_for(batch, ctx.workers, [&](int b) {
    const auto i = static_cast<std::size_t>(b);
    RolloutOptions o;
    o.learner = learner;
    o.attack = attack;
    o.navigator_mode = learner == Player::Navigator ? SelectMode::Sample : SelectMode::Greedy;
    o.attacker_mode = learner == Player::Attacker ? SelectMode::Sample : SelectMode::Greedy;
    o.navigator_reward = cfg.navigator_reward;
    o.seed = mix_seed(update_seed, static_cast<std::uint64_t>(b) + 1);
    rollouts[i] = rollout_episode(params, ctx.dims, *ctx.corpus, train[picks[i]], o);
    Rollout& r = rollouts[i];
    UpdateStats& s = parts[i];
    s.success_rate = r.navigator.success ? 1.0 : 0.0;
    const RolloutBuffer& buf = learner == Player::Navigator ? r.navigator : r.attacker;
    s.mean_reward = detail::episode_return(buf);
    if (buf.steps.empty()) return;  // attacker on a non-attackable instruction
    Tape& tape = *r.tape;
    const Returns ret = compute_returns(buf, cfg.gamma);
    std::vector<Var> terms{a2c_loss(tape, buf, ret, weights, &s.a2c)};
    if (learner == Player::Navigator) {
      for (Var v : r.imitation_terms) {
        s.imitation += tape.scalar(v);
        terms.push_back(tape.scale(v, cfg.imitation_weight));
      }
      for (Var v : r.aux_terms) {
        s.aux += tape.scalar(v);
        terms.push_back(tape.scale(v, cfg.aux_weight));
      }
    }
    const Var loss = tape.sum(tape.concat(std::move(terms), 0));
    tape.backward(loss, false);
    has_loss[i] = true;
  });

  UpdateStats total;
  total.player = learner;
  int contributing = 0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const auto& s = parts[i];
    total.success_rate += s.success_rate / batch;
    total.mean_reward += s.mean_reward / batch;
    total.a2c.policy_loss += s.a2c.policy_loss / batch;
    total.a2c.value_loss += s.a2c.value_loss / batch;
    total.a2c.entropy += s.a2c.entropy / batch;
    total.imitation += s.imitation / batch;
    total.aux += s.aux / batch;
    if (has_loss[i]) {
      rollouts[i].tape->accumulate_param_grads();
      ++contributing;
    }
  }
  if (contributing > 0) {
    total.aborted = !apply_update(params, opt, contributing, cfg.grad_clip);
  } else {
    params.zero_grad();
  }
  total.a2c.aborted = total.aborted;
  return total;
}

inline std::string player_tag(Player p) { return p == Player::Navigator ? "nav" : "att"; }

inline nlohmann::json update_log_line(Stage stage, int iteration, const UpdateStats& s) {
  return {{"stage", stage_name(stage)},
          {"iteration", iteration},
          {"player", player_tag(s.player)},
          {"losses",
           {{"policy", s.a2c.policy_loss},
            {"value", s.a2c.value_loss},
            {"entropy", s.a2c.entropy},
            {"imitation", s.imitation},
            {"aux", s.aux}}},
          {"reward", s.mean_reward},
          {"sr", s.success_rate},
          {"aborted", s.aborted}};
}

struct StageReport {
  Stage stage = Stage::PretrainNav;
  std::vector<Player> update_log;  // one entry per parameter update, in order
  std::vector<double> rewards;     // learner's batch-mean return per update
  bool diverged = false;
};

class NavigationDiverged : public std::runtime_error {
 public:
  explicit NavigationDiverged(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline Optimizer make_optimizer(const TrainConfig& cfg, Player p) {
  return Optimizer(cfg.optimizer, cfg.learning_rate, p == Player::Navigator ? "nav." : "att.");
}

inline void emit(const TrainContext& ctx, Stage stage, int iteration, const UpdateStats& s) {
  if (ctx.log) *ctx.log << update_log_line(stage, iteration, s).dump() << '\n';
  if (ctx.on_update) ctx.on_update(s);
}

inline StageReport single_player_stage(ParamStore& params, const TrainContext& ctx, Stage stage,
                                       Player learner, AttackSource attack, int iterations) {
  ctx.config.validate();
  StageReport rep;
  rep.stage = stage;
  Optimizer opt = make_optimizer(ctx.config, learner);
  for (int it = 0; it < iterations; ++it) {
    const auto seed = mix_seed(mix_seed(ctx.config.seed, stage_tag(stage)), static_cast<std::uint64_t>(it));
    const UpdateStats s = train_update(params, opt, ctx, learner, attack, seed);
    rep.update_log.push_back(learner);
    rep.rewards.push_back(s.mean_reward);
    emit(ctx, stage, it, s);
    if (s.aborted) {
      rep.diverged = true;
      break;
    }
  }
  return rep;
}

}  // namespace detail

/// Navigator trained without an attacker on mixed imitation and RL losses.
inline StageReport pretrain_navigator(ParamStore& params, const TrainContext& ctx) {
  return detail::single_player_stage(params, ctx, Stage::PretrainNav, Player::Navigator,
                                     AttackSource::None, ctx.config.pretrain_nav_iterations);
}

/// Attacker trained by A2C against the frozen navigator.
inline StageReport pretrain_attacker(ParamStore& params, const TrainContext& ctx) {
  return detail::single_player_stage(params, ctx, Stage::PretrainAtt, Player::Attacker,
                                     AttackSource::DrAttacker, ctx.config.pretrain_att_iterations);
}

/// Clean navigator training continued from the adversarial checkpoint.
inline StageReport finetune_navigator(ParamStore& params, const TrainContext& ctx) {
  return detail::single_player_stage(params, ctx, Stage::Finetune, Player::Navigator,
                                     AttackSource::None, ctx.config.finetune_iterations);
}

/// The alternating loop: for each of n_iter rounds, n_eta navigator updates
/// against the frozen attacker, then n_pi attacker updates against the
/// frozen navigator. On divergence the parameters are restored to the state
/// before the failed update and the stage stops.
inline StageReport adversarial_train(ParamStore& params, const TrainContext& ctx) {
  const auto& cfg = ctx.config;
  cfg.validate();
  StageReport rep;
  rep.stage = Stage::Adversarial;
  Optimizer nav_opt = detail::make_optimizer(cfg, Player::Navigator);
  Optimizer att_opt = detail::make_optimizer(cfg, Player::Attacker);
  int it = 0;
  for (int round = 0; round < cfg.n_iter && !rep.diverged; ++round) {
    for (Player p : {Player::Navigator, Player::Attacker}) {
      const int count = p == Player::Navigator ? cfg.n_eta : cfg.n_pi;
      Optimizer& opt = p == Player::Navigator ? nav_opt : att_opt;
      for (int k = 0; k < count; ++k, ++it) {
        const auto seed = mix_seed(mix_seed(cfg.seed, detail::stage_tag(Stage::Adversarial)),
                                   static_cast<std::uint64_t>(it));
        const UpdateStats s = train_update(params, opt, ctx, p, AttackSource::DrAttacker, seed);
        rep.update_log.push_back(p);
        rep.rewards.push_back(s.mean_reward);
        detail::emit(ctx, Stage::Adversarial, it, s);
        if (s.aborted) {
          rep.diverged = true;
          break;
        }
      }
      if (rep.diverged) break;
    }
  }
  return rep;
}

inline StageReport run_stage(Stage stage, ParamStore& params, const TrainContext& ctx) {
  switch (stage) {
    case Stage::PretrainNav: return pretrain_navigator(params, ctx);
    case Stage::PretrainAtt: return pretrain_attacker(params, ctx);
    case Stage::Adversarial: return adversarial_train(params, ctx);
    case Stage::Finetune: return finetune_navigator(params, ctx);
  }
  throw std::invalid_argument("unknown stage");
}

inline std::filesystem::path stage_checkpoint(const std::filesystem::path& dir, Stage s) {
  return dir / ("ckpt_" + stage_name(s));
}

/// Loads the checkpoint that `stage` starts from, or throws
/// MissingPrerequisite naming it.
inline ParamStore load_stage_input(const std::filesystem::path& dir, Stage stage) {
  const auto pre = prerequisite(stage);
  if (!pre) throw std::invalid_argument(stage_name(stage) + " has no prerequisite checkpoint");
  const auto path = stage_checkpoint(dir, *pre);
  if (!checkpoint_exists(path)) {
    throw MissingPrerequisite(stage_name(stage) + " requires the " + stage_name(*pre) +
                              " checkpoint at " + path.string());
  }
  return load_checkpoint(path).params;
}

}  // namespace advnav
