#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advnav/instruct/vocabulary.hpp"
#include "advnav/world/world.hpp"

namespace advnav {

struct Candidate {
  int position = 0;  // first position of the candidate word in the instruction
  int token = 0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Half-open token range that restricts where targets may be taken from.
struct TokenRange {
  int begin = 0;
  int end = 0;
  bool contains(int i) const { return i >= begin && i < end; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct Instruction {
  std::vector<int> tokens;
  std::vector<int> targets;                        // positions into tokens, sentence order
  std::vector<std::vector<Candidate>> candidates;  // one list per target
  std::optional<TokenRange> attackable_range;
  bool attackable = false;

  int length() const { return static_cast<int>(tokens.size()); }
  int target_count() const { return static_cast<int>(targets.size()); }
  int max_candidates() const {
    std::size_t k = 0;
    for (const auto& c : candidates) k = std::max(k, c.size());
    return static_cast<int>(k);
  }
  int valid_cells() const {
    std::size_t n = 0;
    for (const auto& c : candidates) n += c.size();
    return static_cast<int>(n);
  }
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

/// One attack: replace target j with its k-th candidate. The flat index
/// addresses the L' x K_max score matrix.
struct AttackAction {
  int target_index = 0;
  int candidate_index = 0;
  int flat_index = 0;

  static AttackAction at(int j, int k, int k_max) { return {j, k, j * k_max + k}; }
  friend bool operator==(const AttackAction&, const AttackAction&) = default;
};

struct PerturbedInstruction {
  const Instruction* base = nullptr;
  int substituted_position = 0;
  int substitute_token = 0;
  int timestep = 0;
  std::vector<int> tokens;
};

struct InstructionOptions {
  bool same_class_candidates = false;
  bool mask_final_sentence = false;
};

/// Positions of object/location tokens in sentence order, limited to
/// `range` when given.
inline std::vector<int> build_target_set(const std::vector<int>& tokens, const Vocabulary& vocab,
                                         std::optional<TokenRange> range = std::nullopt) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (range && !range->contains(i)) continue;
    if (vocab.is_landmark(tokens[static_cast<std::size_t>(i)])) out.push_back(i);
  }
  return out;
}

/// For each target, the distinct token ids of the other targets in sentence
/// order, never the target's own id. Marks the instruction attackable when
/// at least one candidate exists and L' >= 2.
inline void build_candidate_sets(Instruction& instr, const Vocabulary& vocab,
                                 bool same_class = false) {
  instr.candidates.assign(instr.targets.size(), {});
  for (std::size_t j = 0; j < instr.targets.size(); ++j) {
    const int own = instr.tokens[static_cast<std::size_t>(instr.targets[j])];
    auto& list = instr.candidates[j];
    for (std::size_t o = 0; o < instr.targets.size(); ++o) {
      if (o == j) continue;
      const int pos = instr.targets[o];
      const int tok = instr.tokens[static_cast<std::size_t>(pos)];
      if (tok == own) continue;
      if (same_class && vocab.word_class(tok) != vocab.word_class(own)) continue;
      const bool dup = std::any_of(list.begin(), list.end(),
                                   [tok](const Candidate& c) { return c.token == tok; });
      if (!dup) list.push_back({pos, tok});
    }
  }
  instr.attackable = instr.targets.size() >= 2 && instr.valid_cells() > 0;
}

inline bool action_valid(const Instruction& instr, const AttackAction& a) {
  return a.target_index >= 0 && a.target_index < instr.target_count() && a.candidate_index >= 0 &&
         a.candidate_index <
             static_cast<int>(instr.candidates[static_cast<std::size_t>(a.target_index)].size());
}

/// Substitutes one target word of the original tokens.
inline PerturbedInstruction apply_perturbation(const Instruction& instr, const AttackAction& a,
                                               int timestep) {
  if (!action_valid(instr, a)) {
    throw std::out_of_range("attack (" + std::to_string(a.target_index) + ", " +
                            std::to_string(a.candidate_index) + ") is not valid for instruction");
  }
  PerturbedInstruction p;
  p.base = &instr;
  p.substituted_position = instr.targets[static_cast<std::size_t>(a.target_index)];
  p.substitute_token = instr.candidates[static_cast<std::size_t>(a.target_index)]
                                       [static_cast<std::size_t>(a.candidate_index)]
                                           .token;
  p.timestep = timestep;
  p.tokens = instr.tokens;
  p.tokens[static_cast<std::size_t>(p.substituted_position)] = p.substitute_token;
  return p;
}

namespace detail {

inline const char* direction_word(const WorldGraph& g, int prev, int from, int to) {
  const auto& a = g.nodes[static_cast<std::size_t>(prev)];
  const auto& b = g.nodes[static_cast<std::size_t>(from)];
  const auto& c = g.nodes[static_cast<std::size_t>(to)];
  const double hx = b.x - a.x, hy = b.y - a.y;
  const double nx = c.x - b.x, ny = c.y - b.y;
  const double angle = std::atan2(hx * ny - hy * nx, hx * nx + hy * ny) * 180.0 / 3.14159265358979323846;
  if (std::abs(angle) > 150.0) return "around";
  if (angle > 30.0) return "left";
  if (angle < -30.0) return "right";
  return "forward";
}

// O, L and D are replaced by the object, location and direction words.
inline const std::vector<std::vector<std::string>>& first_hop_templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"walk", "to", "the", "O", "in", "the", "L"},
      {"go", "to", "the", "O", "in", "the", "L"},
      {"head", "toward", "the", "L", "with", "the", "O"},
      {"enter", "the", "L", "by", "the", "O"},
  };
  return t;
}

inline const std::vector<std::vector<std::string>>& hop_templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"turn", "D", "and", "walk", "to", "the", "O", "in", "the", "L"},
      {"go", "D", "past", "the", "O", "in", "the", "L"},
      {"head", "D", "toward", "the", "L", "with", "the", "O"},
      {"continue", "D", "to", "the", "O", "near", "the", "L"},
      {"walk", "D", "into", "the", "L", "by", "the", "O"},
      {"then", "go", "D", "to", "the", "O", "in", "the", "L"},
  };
  return t;
}

inline const std::vector<std::vector<std::string>>& final_templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"and", "stop"}, {"then", "stop"}, {"then", "wait"}, {"and", "wait"}};
  return t;
}

}  // namespace detail

/// Templated instruction walking the ground-truth path. Each node after the
/// start contributes one clause naming its object and location words, with
/// a direction word from the turn geometry; a short stop clause closes it.
/// Deterministic in (world, episode, seed).
inline Instruction generate_instruction(const WorldGraph& g, const Episode& ep, std::uint64_t seed,
                                        const InstructionOptions& opts = {}) {
  const auto& path = ep.ground_truth_path;
  if (path.empty()) throw std::invalid_argument("episode has no ground-truth path");
  const auto& vocab = Vocabulary::standard();
  std::mt19937_64 rng(mix_seed(seed, 0x1257ULL));
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  };
  Instruction instr;
  int last_clause_begin = 0;
  auto emit = [&](const std::vector<std::string>& tmpl, const WorldNode& node, const char* dir) {
    last_clause_begin = instr.length();
    for (const auto& w : tmpl) {
      if (w == "O") instr.tokens.push_back(node.object_word);
      else if (w == "L") instr.tokens.push_back(node.location_word);
      else if (w == "D") instr.tokens.push_back(vocab.id(dir));
      else instr.tokens.push_back(vocab.id(w));
    }
  };
  for (std::size_t i = 1; i < path.size(); ++i) {
    const auto& node = g.nodes[static_cast<std::size_t>(path[i])];
    if (i == 1) {
      const auto& t = detail::first_hop_templates();
      emit(t[pick(t.size())], node, "forward");
    } else {
      const auto& t = detail::hop_templates();
      emit(t[pick(t.size())], node, detail::direction_word(g, path[i - 2], path[i - 1], path[i]));
    }
  }
  if (path.size() == 1) {
    // no hop to describe: name the goal's landmarks directly
    emit({"stop", "at", "the", "O", "in", "the", "L"}, g.nodes[static_cast<std::size_t>(path[0])],
         "forward");
  } else {
    const auto& t = detail::final_templates();
    const auto& tail = t[pick(t.size())];
    for (const auto& w : tail) instr.tokens.push_back(vocab.id(w));
  }
  if (opts.mask_final_sentence) instr.attackable_range = TokenRange{last_clause_begin, instr.length()};
  instr.targets = build_target_set(instr.tokens, vocab, instr.attackable_range);
  build_candidate_sets(instr, vocab, opts.same_class_candidates);
  return instr;
}

// ---- corpus records -----------------------------------------------------------

struct CorpusRecord {
  std::string episode_id;
  int world = 0;
  int start = 0;
  int goal = 0;
  Instruction instruction;
};

inline nlohmann::json corpus_record_to_json(const CorpusRecord& r) {
  const auto& vocab = Vocabulary::standard();
  nlohmann::json j;
  j["episode_id"] = r.episode_id;
  j["world"] = r.world;
  j["start"] = r.start;
  j["goal"] = r.goal;
  j["tokens"] = r.instruction.tokens;
  j["text"] = vocab.decode(r.instruction.tokens);
  j["targets"] = r.instruction.targets;
  auto cands = nlohmann::json::array();
  for (const auto& list : r.instruction.candidates) {
    auto row = nlohmann::json::array();
    for (const auto& c : list) row.push_back({c.position, c.token});
    cands.push_back(row);
  }
  j["candidates"] = cands;
  j["mask"] = r.instruction.attackable_range
                  ? nlohmann::json{r.instruction.attackable_range->begin, r.instruction.attackable_range->end}
                  : nlohmann::json(nullptr);
  j["attackable"] = r.instruction.attackable;
  return j;
}

inline CorpusRecord corpus_record_from_json(const nlohmann::json& j) {
  CorpusRecord r;
  r.episode_id = j.at("episode_id").get<std::string>();
  r.world = j.at("world").get<int>();
  r.start = j.at("start").get<int>();
  r.goal = j.at("goal").get<int>();
  r.instruction.tokens = j.at("tokens").get<std::vector<int>>();
  r.instruction.targets = j.at("targets").get<std::vector<int>>();
  for (const auto& row : j.at("candidates")) {
    std::vector<Candidate> list;
    for (const auto& c : row) list.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    r.instruction.candidates.push_back(std::move(list));
  }
  if (!j.at("mask").is_null()) {
    r.instruction.attackable_range = TokenRange{j.at("mask").at(0).get<int>(), j.at("mask").at(1).get<int>()};
  }
  r.instruction.attackable = j.at("attackable").get<bool>();
  return r;
}

}  // namespace advnav
