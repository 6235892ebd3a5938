#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "advnav/evalkit/evaluate.hpp"
#include "advnav/trainer/stages.hpp"

namespace advnav {

/// A config problem located by its JSON path, e.g. "train.gamma".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::invalid_argument(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct ExperimentConfig {
  WorldConfig world;
  ModelDims model;
  TrainConfig train;
  CorpusConfig corpus;
  AttackKind attack = AttackKind::Dr;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 1;
};

namespace detail {

/// Reads the members of one JSON object, remembering which keys were used
/// so leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) throw ConfigError(child(key), "expected a number");
      out = v->get<double>();
    }
  }

  void integer(const std::string& key, int& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(child(key), "expected an integer");
      out = v->get<int>();
    }
  }

  void unsigned_integer(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(child(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(child(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) throw ConfigError(child(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()), "unknown field");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw ConfigError(path, message);
}

}  // namespace detail

/// Parses and validates an experiment config. Missing fields keep their
/// defaults; unknown fields and out-of-range values are rejected with the
/// offending path.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  using detail::require;
  ExperimentConfig c;
  ObjectReader root(j, "");
  root.unsigned_integer("seed", c.seed);
  root.string("output_dir", c.output_dir);
  if (const auto* v = root.find("attack")) {
    if (!v->is_string()) throw ConfigError("attack", "expected a string");
    try {
      c.attack = parse_attack(v->get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("attack", e.what());
    }
  }
  if (const auto* v = root.find("world")) {
    ObjectReader r(*v, "world");
    auto& w = c.world;
    r.integer("node_count", w.node_count);
    r.number("edge_density", w.edge_density);
    r.integer("view_dim", w.view_dim);
    r.number("success_radius", w.success_radius);
    r.integer("max_steps", w.max_steps);
    r.integer("max_degree", w.max_degree);
    r.number("spacing", w.spacing);
    r.number("feature_noise", w.feature_noise);
    r.finish();
  }
  if (const auto* v = root.find("model")) {
    ObjectReader r(*v, "model");
    r.integer("word_dim", c.model.word_dim);
    r.integer("view_dim", c.model.view_dim);
    r.integer("proj_dim", c.model.proj_dim);
    r.integer("hidden_dim", c.model.hidden_dim);
    r.number("attack_logit_scale", c.model.attack_logit_scale);
    r.finish();
  }
  if (const auto* v = root.find("train")) {
    ObjectReader r(*v, "train");
    auto& t = c.train;
    r.number("gamma", t.gamma);
    r.number("learning_rate", t.learning_rate);
    std::string opt = t.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
    r.string("optimizer", opt);
    require(opt == "sgd" || opt == "adam", r.child("optimizer"), "expected \"sgd\" or \"adam\"");
    t.optimizer = opt == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
    r.number("entropy_weight", t.entropy_weight);
    r.number("value_weight", t.value_weight);
    r.number("imitation_weight", t.imitation_weight);
    r.number("aux_weight", t.aux_weight);
    r.number("grad_clip", t.grad_clip);
    r.integer("batch_size", t.batch_size);
    r.integer("attacker_batch_size", t.attacker_batch_size);
    r.integer("value_hidden", t.value_hidden);
    r.integer("pretrain_nav_iterations", t.pretrain_nav_iterations);
    r.integer("pretrain_att_iterations", t.pretrain_att_iterations);
    r.integer("finetune_iterations", t.finetune_iterations);
    r.integer("n_eta", t.n_eta);
    r.integer("n_pi", t.n_pi);
    r.integer("n_iter", t.n_iter);
    std::string reward = t.navigator_reward == NavigatorReward::BaseAgent ? "base_agent" : "zero_sum";
    r.string("navigator_reward", reward);
    require(reward == "zero_sum" || reward == "base_agent", r.child("navigator_reward"),
            "expected \"zero_sum\" or \"base_agent\"");
    t.navigator_reward = reward == "base_agent" ? NavigatorReward::BaseAgent : NavigatorReward::ZeroSum;
    r.finish();
    require(t.gamma >= 0.0 && t.gamma < 1.0, "train.gamma", "must be in [0, 1)");
    require(t.learning_rate > 0.0, "train.learning_rate", "must be positive");
    for (auto [name, w] : {std::pair{"entropy_weight", t.entropy_weight}, {"value_weight", t.value_weight},
                           {"imitation_weight", t.imitation_weight}, {"aux_weight", t.aux_weight},
                           {"grad_clip", t.grad_clip}}) {
      require(w >= 0.0, std::string("train.") + name, "must be non-negative");
    }
    require(t.batch_size >= 1, "train.batch_size", "must be at least 1");
    require(t.attacker_batch_size >= 1, "train.attacker_batch_size", "must be at least 1");
    require(t.value_hidden >= 1, "train.value_hidden", "must be at least 1");
    for (auto [name, n] : {std::pair{"pretrain_nav_iterations", t.pretrain_nav_iterations},
                           {"pretrain_att_iterations", t.pretrain_att_iterations},
                           {"finetune_iterations", t.finetune_iterations}, {"n_eta", t.n_eta},
                           {"n_pi", t.n_pi}, {"n_iter", t.n_iter}}) {
      require(n >= 0, std::string("train.") + name, "must be non-negative");
    }
  }
  if (const auto* v = root.find("corpus")) {
    ObjectReader r(*v, "corpus");
    auto& k = c.corpus;
    r.integer("train_worlds", k.train_worlds);
    r.integer("train_episodes_per_world", k.train_episodes_per_world);
    r.integer("seen_episodes_per_world", k.seen_episodes_per_world);
    r.integer("unseen_worlds", k.unseen_worlds);
    r.integer("unseen_episodes_per_world", k.unseen_episodes_per_world);
    r.integer("min_hops", k.min_hops);
    r.integer("max_hops", k.max_hops);
    r.boolean("same_class_candidates", k.instruction.same_class_candidates);
    r.boolean("mask_final_sentence", k.instruction.mask_final_sentence);
    r.finish();
    require(k.train_worlds >= 1, "corpus.train_worlds", "must be at least 1");
    require(k.train_episodes_per_world >= 1, "corpus.train_episodes_per_world", "must be at least 1");
    require(k.seen_episodes_per_world >= 0, "corpus.seen_episodes_per_world", "must be non-negative");
    require(k.unseen_worlds >= 0, "corpus.unseen_worlds", "must be non-negative");
    require(k.unseen_episodes_per_world >= 0, "corpus.unseen_episodes_per_world", "must be non-negative");
    require(k.min_hops >= 1, "corpus.min_hops", "must be at least 1");
    require(k.max_hops >= k.min_hops, "corpus.max_hops", "must be at least corpus.min_hops");
  }
  root.finish();

  const auto& w = c.world;
  require(w.node_count >= 4, "world.node_count", "must be at least 4");
  require(w.edge_density > 0.0, "world.edge_density", "must be positive");
  require(w.view_dim >= 1, "world.view_dim", "must be positive");
  require(w.success_radius > 0.0, "world.success_radius", "must be positive");
  require(w.max_steps >= 1, "world.max_steps", "must be positive");
  require(w.max_degree >= 2, "world.max_degree", "must be at least 2");
  require(w.spacing > 0.0, "world.spacing", "must be positive");
  require(w.feature_noise >= 0.0, "world.feature_noise", "must be non-negative");
  require(c.corpus.max_hops + 1 <= w.max_steps, "corpus.max_hops", "must be below world.max_steps");
  const auto& m = c.model;
  for (auto [name, d] : {std::pair{"word_dim", m.word_dim}, {"view_dim", m.view_dim},
                         {"proj_dim", m.proj_dim}, {"hidden_dim", m.hidden_dim}}) {
    require(d >= 1, std::string("model.") + name, "must be positive");
  }
  require(m.word_dim % 2 == 0, "model.word_dim", "must be even");
  require(m.attack_logit_scale > 0.0, "model.attack_logit_scale", "must be positive");
  require(m.view_dim == w.view_dim, "model.view_dim", "must equal world.view_dim");
  c.train.seed = c.seed;
  c.world.seed = c.seed;
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_experiment_config(j);
}

/// Canonical JSON form; parse_experiment_config(config_to_json(c)) == c.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& w = c.world;
  const auto& t = c.train;
  const auto& k = c.corpus;
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"attack", attack_name(c.attack)},
          {"world",
           {{"node_count", w.node_count},
            {"edge_density", w.edge_density},
            {"view_dim", w.view_dim},
            {"success_radius", w.success_radius},
            {"max_steps", w.max_steps},
            {"max_degree", w.max_degree},
            {"spacing", w.spacing},
            {"feature_noise", w.feature_noise}}},
          {"model",
           {{"word_dim", c.model.word_dim},
            {"view_dim", c.model.view_dim},
            {"proj_dim", c.model.proj_dim},
            {"hidden_dim", c.model.hidden_dim},
            {"attack_logit_scale", c.model.attack_logit_scale}}},
          {"train",
           {{"gamma", t.gamma},
            {"learning_rate", t.learning_rate},
            {"optimizer", t.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
            {"entropy_weight", t.entropy_weight},
            {"value_weight", t.value_weight},
            {"imitation_weight", t.imitation_weight},
            {"aux_weight", t.aux_weight},
            {"grad_clip", t.grad_clip},
            {"batch_size", t.batch_size},
            {"attacker_batch_size", t.attacker_batch_size},
            {"value_hidden", t.value_hidden},
            {"pretrain_nav_iterations", t.pretrain_nav_iterations},
            {"pretrain_att_iterations", t.pretrain_att_iterations},
            {"finetune_iterations", t.finetune_iterations},
            {"n_eta", t.n_eta},
            {"n_pi", t.n_pi},
            {"n_iter", t.n_iter},
            {"navigator_reward", t.navigator_reward == NavigatorReward::BaseAgent ? "base_agent" : "zero_sum"}}},
          {"corpus",
           {{"train_worlds", k.train_worlds},
            {"train_episodes_per_world", k.train_episodes_per_world},
            {"seen_episodes_per_world", k.seen_episodes_per_world},
            {"unseen_worlds", k.unseen_worlds},
            {"unseen_episodes_per_world", k.unseen_episodes_per_world},
            {"min_hops", k.min_hops},
            {"max_hops", k.max_hops},
            {"same_class_candidates", k.instruction.same_class_candidates},
            {"mask_final_sentence", k.instruction.mask_final_sentence}}}};
}

inline Corpus build_experiment_corpus(const ExperimentConfig& c) {
  return build_corpus(c.world, c.corpus, c.seed);
}

}  // namespace advnav
