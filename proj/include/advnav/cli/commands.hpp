#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "advnav/cli/config.hpp"

namespace advnav {

namespace fs = std::filesystem;

class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws CheckpointMismatch unless `store` has exactly the tensors, with the
/// same shapes, that freshly initialized models of these dims would have.
inline void verify_checkpoint_shapes(const ParamStore& store, const ModelDims& dims, int value_hidden) {
  const ParamStore ref = init_all_params(dims, value_hidden, 0);
  for (const auto& [name, t] : ref.tensors()) {
    if (!store.contains(name)) throw CheckpointMismatch("checkpoint is missing tensor '" + name + "'");
    const auto& got = store.at(name);
    if (got.shape != t.shape) {
      throw CheckpointMismatch("tensor '" + name + "' has shape " + std::to_string(got.rows()) + "x" +
                               std::to_string(got.cols()) + ", model dims require " +
                               std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
    }
  }
  for (const auto& [name, t] : store.tensors()) {
    if (!ref.contains(name)) throw CheckpointMismatch("checkpoint has unexpected tensor '" + name + "'");
  }
}

struct LoadedExperiment {
  ExperimentConfig config;
  ParamStore params;
  std::string stage;
};

/// Loads a stage checkpoint together with the experiment config stored in
/// its metadata. When `override_config` is given its dims must agree.
inline LoadedExperiment load_experiment(const fs::path& checkpoint,
                                        const std::optional<ExperimentConfig>& override_config = {}) {
  if (!checkpoint_exists(checkpoint)) {
    throw std::runtime_error("checkpoint not found: " + checkpoint.string() + ".{json,bin}");
  }
  auto loaded = load_checkpoint(checkpoint);
  LoadedExperiment out;
  if (override_config) {
    out.config = *override_config;
  } else {
    if (!loaded.meta.contains("config")) throw std::runtime_error("checkpoint metadata has no config");
    out.config = parse_experiment_config(loaded.meta.at("config"));
  }
  out.stage = loaded.meta.value("stage", "");
  verify_checkpoint_shapes(loaded.params, out.config.model, out.config.train.value_hidden);
  out.params = std::move(loaded.params);
  return out;
}

inline nlohmann::json checkpoint_meta(const ExperimentConfig& c, Stage stage, const StageReport& rep) {
  std::string schedule;
  for (Player p : rep.update_log) schedule += p == Player::Navigator ? 'n' : 'a';
  return {{"stage", stage_name(stage)},
          {"config", config_to_json(c)},
          {"updates", rep.update_log.size()},
          {"schedule", schedule},
          {"diverged", rep.diverged}};
}

/// The two evaluated models of a run and the checkpoints they come from.
/// "base" is the clean-trained navigator with the attacker pretrained
/// against it; "final" is the finetuned navigator with the adversarially
/// trained attacker.
inline const std::vector<std::pair<std::string, Stage>>& evaluated_models() {
  static const std::vector<std::pair<std::string, Stage>> m{{"base", Stage::PretrainAtt},
                                                            {"final", Stage::Finetune}};
  return m;
}

struct RunOptions {
  std::optional<Stage> from_stage;  // resume point; earlier stages are loaded from disk
  int workers = 1;
  std::ostream* progress = nullptr;
};

class StageDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_metrics_csv_header(std::ostream& os) { os << kMetricsCsvHeader << '\n'; }

/// Evaluates one checkpoint under every attack on both validation splits,
/// appending CSV rows and returning a JSON summary.
inline nlohmann::json evaluate_model(const std::string& model, ParamStore& params, const ExperimentConfig& c,
                                     const Corpus& corpus, int workers, std::ostream& csv) {
  nlohmann::json summary = nlohmann::json::object();
  for (AttackKind a : all_attack_kinds()) {
    for (Split s : {Split::Seen, Split::Unseen}) {
      const auto res = evaluate_split(params, c.model, corpus, s, a, mix_seed(c.seed, 0xE7A1), workers);
      write_metrics_rows(csv, res.report, model, attack_name(a), split_name(s));
      auto& j = summary[attack_name(a)][split_name(s)];
      j = metrics_to_json(res.report.mean);
      j.erase("episode_id");
      j["count"] = res.report.count;
      j["perturbed_steps"] = res.perturbations.size();
      j["flagged"] = res.flagged;
      j["aux_accuracy"] = res.aux_accuracy();
      j["aux_chance"] = res.aux_chance_level();
    }
  }
  return summary;
}

/// Executes the four stages (from `from_stage` on), writing per-stage
/// checkpoints, the training log and the final metrics into the output
/// directory.
inline void cmd_run(const ExperimentConfig& c, const RunOptions& opt) {
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  const Stage first = opt.from_stage.value_or(Stage::PretrainNav);
  ParamStore params = first == Stage::PretrainNav ? init_all_params(c.model, c.train.value_hidden, c.seed)
                                                  : load_stage_input(dir, first);
  if (first != Stage::PretrainNav) verify_checkpoint_shapes(params, c.model, c.train.value_hidden);
  const Corpus corpus = build_experiment_corpus(c);
  std::ofstream log(dir / "train_log.jsonl", first == Stage::PretrainNav ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());

  TrainContext ctx;
  ctx.corpus = &corpus;
  ctx.dims = c.model;
  ctx.config = c.train;
  ctx.workers = opt.workers;
  ctx.log = &log;
  bool started = false;
  for (Stage s : all_stages()) {
    if (s == first) started = true;
    if (!started) continue;
    if (opt.progress) *opt.progress << "stage " << stage_name(s) << '\n' << std::flush;
    const StageReport rep = run_stage(s, params, ctx);
    log.flush();
    save_checkpoint(stage_checkpoint(dir, s), params, checkpoint_meta(c, s, rep));
    if (rep.diverged) {
      throw StageDiverged(stage_name(s) + " diverged (non-finite gradient); last good parameters saved to " +
                          stage_checkpoint(dir, s).string());
    }
  }

  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  write_metrics_csv_header(csv);
  nlohmann::json summary;
  for (const auto& [model, stage] : evaluated_models()) {
    if (opt.progress) *opt.progress << "evaluate " << model << '\n' << std::flush;
    ParamStore p = load_checkpoint(stage_checkpoint(dir, stage)).params;
    summary[model] = evaluate_model(model, p, c, corpus, opt.workers, csv);
  }
  std::ofstream js(dir / "metrics.json", std::ios::trunc);
  js << summary.dump(2) << '\n';
}

struct EvalRequest {
  fs::path checkpoint;
  AttackKind attack = AttackKind::None;
  Split split = Split::Unseen;
  std::optional<std::uint64_t> seed;
  std::optional<ExperimentConfig> config;
  int workers = 1;
};

struct EvalOutput {
  ExperimentConfig config;
  EvalResult result;
};

inline EvalOutput cmd_eval(const EvalRequest& req) {
  auto ex = load_experiment(req.checkpoint, req.config);
  const Corpus corpus = build_experiment_corpus(ex.config);
  EvalOutput out;
  out.result = evaluate_split(ex.params, ex.config.model, corpus, req.split, req.attack,
                              req.seed.value_or(mix_seed(ex.config.seed, 0xE7A1)), req.workers);
  out.config = std::move(ex.config);
  return out;
}

inline nlohmann::json eval_summary_json(const EvalRequest& req, const EvalOutput& out) {
  nlohmann::json j = report_to_json(out.result.report);
  j.erase("episodes");
  j["attack"] = attack_name(req.attack);
  j["split"] = split_name(req.split);
  j["perturbed_steps"] = out.result.perturbations.size();
  j["flagged"] = out.result.flagged;
  j["aux_accuracy"] = out.result.aux_accuracy();
  j["aux_chance"] = out.result.aux_chance_level();
  return j;
}

struct TraceRequest {
  fs::path checkpoint;
  std::string episode_id;
  AttackKind attack = AttackKind::Dr;
  std::optional<std::uint64_t> seed;
};

/// One JSON object per timestep: the substitution made, the navigator's
/// guess of the attacked word, its five most attended tokens and its action.
inline std::vector<nlohmann::json> cmd_trace(const TraceRequest& req) {
  auto ex = load_experiment(req.checkpoint);
  const Corpus corpus = build_experiment_corpus(ex.config);
  const EpisodeSpec* spec = corpus.find(req.episode_id);
  if (!spec) throw std::invalid_argument("episode '" + req.episode_id + "' not found in any split");
  const auto& vocab = Vocabulary::standard();
  const auto& instr = spec->instruction;
  const Rollout r = evaluate_episode(ex.params, ex.config.model, corpus, *spec, req.attack,
                                     req.seed.value_or(mix_seed(ex.config.seed, 0x7ACE)), true);
  std::vector<nlohmann::json> lines;
  for (const auto& s : r.steps) {
    nlohmann::json j;
    j["episode_id"] = spec->id;
    j["timestep"] = s.timestep;
    if (s.attack) {
      j["attacked_position"] = s.attacked_position;
      j["attacked_word"] = vocab.word(s.original_token);
      j["substitute_word"] = vocab.word(s.substitute_token);
      j["target_index"] = s.attack->target_index;
      j["candidate_index"] = s.attack->candidate_index;
    } else {
      j["attacked_position"] = nullptr;
      j["attacked_word"] = nullptr;
      j["substitute_word"] = nullptr;
    }
    if (s.predicted_target >= 0) {
      const int pos = instr.targets[static_cast<std::size_t>(s.predicted_target)];
      j["predicted_target"] = s.predicted_target;
      j["predicted_word"] = vocab.word(instr.tokens[static_cast<std::size_t>(pos)]);
      j["p_c"] = s.p_c;
    } else {
      j["predicted_target"] = nullptr;
      j["predicted_word"] = nullptr;
      j["p_c"] = nlohmann::json::array();
    }
    std::vector<std::size_t> order(s.alpha_w.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.alpha_w[a] > s.alpha_w[b]; });
    nlohmann::json top = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(5, order.size()); ++i) {
      top.push_back({{"position", order[i]},
                     {"word", vocab.word(s.navigator_tokens[order[i]])},
                     {"weight", s.alpha_w[order[i]]}});
    }
    j["top_attention"] = top;
    j["instruction"] = vocab.decode(s.navigator_tokens);
    j["action"] = s.action;
    j["p_n"] = s.p_n;
    lines.push_back(std::move(j));
  }
  return lines;
}

/// Writes the corpus as JSON lines: one record per world, then one per
/// episode with its split.
inline void cmd_gen_corpus(const ExperimentConfig& c, std::ostream& os) {
  const Corpus corpus = build_experiment_corpus(c);
  for (std::size_t i = 0; i < corpus.worlds.size(); ++i) {
    nlohmann::json j;
    j["kind"] = "world";
    j["index"] = i;
    j["unseen"] = static_cast<bool>(corpus.unseen_world[i]);
    j["world"] = world_to_json(corpus.worlds[i]);
    os << j.dump() << '\n';
  }
  for (Split s : {Split::Train, Split::Seen, Split::Unseen}) {
    for (const auto& e : corpus.split(s)) {
      auto j = corpus_record_to_json({e.id, e.world, e.start, e.goal, e.instruction});
      j["kind"] = "episode";
      j["split"] = split_name(s);
      os << j.dump() << '\n';
    }
  }
}

}  // namespace advnav
