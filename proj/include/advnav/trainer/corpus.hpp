#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "advnav/instruct/instruction.hpp"
#include "advnav/world/world.hpp"

namespace advnav {

struct EpisodeSpec {
  std::string id;
  int world = 0;  // index into Corpus::worlds
  int start = 0;
  int goal = 0;
  Instruction instruction;
};

struct CorpusConfig {
  int train_worlds = 20;
  int train_episodes_per_world = 40;
  int seen_episodes_per_world = 10;
  int unseen_worlds = 10;
  int unseen_episodes_per_world = 20;
  int min_hops = 2;
  int max_hops = 4;
  InstructionOptions instruction;
};

enum class Split { Train, Seen, Unseen };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Seen: return "seen";
    case Split::Unseen: return "unseen";
  }
  return "unknown";
}

/// Training worlds carry the train and seen-validation episodes; unseen
/// worlds are generated from a disjoint seed set.
struct Corpus {
  std::vector<WorldGraph> worlds;
  std::vector<bool> unseen_world;
  std::vector<EpisodeSpec> train, seen, unseen;

  const std::vector<EpisodeSpec>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Seen: return seen;
      case Split::Unseen: return unseen;
    }
    throw std::invalid_argument("unknown split");
  }

  const EpisodeSpec* find(const std::string& id) const {
    for (const auto* list : {&train, &seen, &unseen}) {
      for (const auto& e : *list) {
        if (e.id == id) return &e;
      }
    }
    return nullptr;
  }

  Episode begin(const EpisodeSpec& spec) const {
    const auto& g = worlds.at(static_cast<std::size_t>(spec.world));
    return Episode::begin(g, spec.start, spec.goal, g.config.max_steps);
  }
};

inline std::uint64_t train_world_seed(std::uint64_t master, int i) {
  return mix_seed(master, 100000 + static_cast<std::uint64_t>(i));
}
inline std::uint64_t unseen_world_seed(std::uint64_t master, int i) {
  return mix_seed(master ^ 0xA5A5A5A5ULL, 900000 + static_cast<std::uint64_t>(i));
}

namespace detail {

inline std::vector<EpisodeSpec> sample_episodes(const WorldGraph& g, int world_index,
                                                const std::string& prefix, int count,
                                                const CorpusConfig& cc, std::mt19937_64& rng) {
  std::vector<std::pair<int, int>> pairs;
  for (int s = 0; s < g.size(); ++s) {
    for (int t = 0; t < g.size(); ++t) {
      if (s == t) continue;
      const int hops = static_cast<int>(g.shortest_path(s, t).size()) - 1;
      if (hops >= cc.min_hops && hops <= cc.max_hops && hops + 1 <= g.config.max_steps) {
        pairs.emplace_back(s, t);
      }
    }
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  std::vector<EpisodeSpec> out;
  for (int i = 0; i < count && !pairs.empty(); ++i) {
    const auto [s, t] = pairs[static_cast<std::size_t>(i) % pairs.size()];
    EpisodeSpec e;
    e.id = prefix + "-" + std::to_string(i);
    e.world = world_index;
    e.start = s;
    e.goal = t;
    const auto ep = Episode::begin(g, s, t, g.config.max_steps);
    e.instruction = generate_instruction(g, ep, mix_seed(g.config.seed, static_cast<std::uint64_t>(i)),
                                         cc.instruction);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace detail

inline Corpus build_corpus(const WorldConfig& base, const CorpusConfig& cc, std::uint64_t master_seed) {
  if (cc.train_worlds < 1 || cc.min_hops < 1 || cc.max_hops < cc.min_hops) {
    throw std::invalid_argument("corpus: invalid sizes");
  }
  Corpus c;
  c.worlds.reserve(static_cast<std::size_t>(cc.train_worlds + cc.unseen_worlds));
  std::set<std::uint64_t> train_seeds;
  for (int i = 0; i < cc.train_worlds; ++i) train_seeds.insert(train_world_seed(master_seed, i));
  std::mt19937_64 rng(mix_seed(master_seed, 77));
  for (int i = 0; i < cc.train_worlds; ++i) {
    WorldConfig wc = base;
    wc.seed = train_world_seed(master_seed, i);
    c.worlds.push_back(generate_world(wc));
    c.unseen_world.push_back(false);
    const int idx = static_cast<int>(c.worlds.size()) - 1;
    auto eps = detail::sample_episodes(c.worlds.back(), idx, "w" + std::to_string(i),
                                       cc.train_episodes_per_world + cc.seen_episodes_per_world, cc, rng);
    for (std::size_t k = 0; k < eps.size(); ++k) {
      auto& dst = static_cast<int>(k) < cc.train_episodes_per_world ? c.train : c.seen;
      eps[k].id = (static_cast<int>(k) < cc.train_episodes_per_world ? "train-" : "seen-") + eps[k].id;
      dst.push_back(std::move(eps[k]));
    }
  }
  for (int i = 0; i < cc.unseen_worlds; ++i) {
    WorldConfig wc = base;
    wc.seed = unseen_world_seed(master_seed, i);
    if (train_seeds.count(wc.seed)) throw std::logic_error("unseen world seed collides with a training seed");
    c.worlds.push_back(generate_world(wc));
    c.unseen_world.push_back(true);
    const int idx = static_cast<int>(c.worlds.size()) - 1;
    auto eps = detail::sample_episodes(c.worlds.back(), idx, "unseen-u" + std::to_string(i),
                                       cc.unseen_episodes_per_world, cc, rng);
    for (auto& e : eps) c.unseen.push_back(std::move(e));
  }
  return c;
}

}  // namespace advnav
