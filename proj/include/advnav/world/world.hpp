#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "advnav/diffcore/tensor.hpp"
#include "advnav/instruct/vocabulary.hpp"

namespace advnav {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct WorldConfig {
  int node_count = 12;
  double edge_density = 0.35;
  int view_dim = 32;
  double success_radius = 3.0;  // Z, meters
  int max_steps = 10;           // N_max
  int max_degree = 4;           // J_max
  double spacing = 5.0;         // grid pitch of node placement, meters
  double feature_noise = 0.3;   // std-dev of the per-view random base
  std::uint64_t seed = 1;
};

struct WorldNode {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  int object_word = 0;
  int location_word = 0;
};

struct WorldEdge {
  int a = 0;
  int b = 0;
  double length = 0.0;
};

/// Navigation graph with landmark words and synthetic view features.
///
/// For node n with sorted neighbours m_1..m_J, views(n) is a (J+1) x D_v
/// matrix: row 0 is the stop view, row k the view towards m_k. Views carry
/// the fixed visual signature of the landmark words they look at, so
/// instructions can be grounded in them.
class WorldGraph {
 public:
  WorldConfig config;
  std::vector<WorldNode> nodes;
  std::vector<WorldEdge> edges;

  int size() const { return static_cast<int>(nodes.size()); }
  const std::vector<int>& neighbors(int n) const { return neighbors_.at(check(n)); }
  int neighbor_count(int n) const { return static_cast<int>(neighbors(n).size()); }
  const Tensor& views(int n) const { return views_.at(check(n)); }
  double distance(int a, int b) const { return dist_.at(check(a)).at(check(b)); }
  bool adjacent(int a, int b) const {
    const auto& nb = neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  }
  double edge_length(int a, int b) const {
    if (!adjacent(a, b)) throw std::invalid_argument("nodes are not adjacent");
    return std::hypot(nodes[static_cast<std::size_t>(a)].x - nodes[static_cast<std::size_t>(b)].x,
                      nodes[static_cast<std::size_t>(a)].y - nodes[static_cast<std::size_t>(b)].y);
  }

  /// Node ids along the shortest path from a to b, both inclusive.
  std::vector<int> shortest_path(int a, int b) const {
    check(a);
    check(b);
    std::vector<int> path{a};
    while (path.back() != b) path.push_back(next_hop_[static_cast<std::size_t>(path.back())][static_cast<std::size_t>(b)]);
    return path;
  }

  /// First node after `a` on the shortest path to `b`; `a` itself if a == b.
  int next_hop(int a, int b) const { return next_hop_.at(check(a)).at(check(b)); }

  /// Recomputes adjacency, distances and view features from nodes/edges.
  void finalize() {
    const auto n = nodes.size();
    neighbors_.assign(n, {});
    for (const auto& e : edges) {
      if (e.a == e.b || e.length <= 0.0) throw std::invalid_argument("degenerate edge");
      neighbors_.at(static_cast<std::size_t>(e.a)).push_back(e.b);
      neighbors_.at(static_cast<std::size_t>(e.b)).push_back(e.a);
    }
    for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
    const double inf = std::numeric_limits<double>::infinity();
    dist_.assign(n, std::vector<double>(n, inf));
    next_hop_.assign(n, std::vector<int>(n, -1));
    for (std::size_t i = 0; i < n; ++i) {
      dist_[i][i] = 0.0;
      next_hop_[i][i] = static_cast<int>(i);
    }
    for (const auto& e : edges) {
      const auto a = static_cast<std::size_t>(e.a);
      const auto b = static_cast<std::size_t>(e.b);
      if (e.length < dist_[a][b]) {
        dist_[a][b] = dist_[b][a] = e.length;
        next_hop_[a][b] = e.b;
        next_hop_[b][a] = e.a;
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double via = dist_[i][k] + dist_[k][j];
          if (via < dist_[i][j]) {
            dist_[i][j] = via;
            next_hop_[i][j] = next_hop_[i][k];
          }
        }
      }
    }
    build_views();
  }

  /// Fixed visual signature of a word, independent of any world.
  static std::vector<float> signature(int word, int dim) {
    std::mt19937_64 rng(mix_seed(0x5157A7B3ULL, static_cast<std::uint64_t>(word)));
    std::normal_distribution<double> nd(0.0, 0.5);
    std::vector<float> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = static_cast<float>(nd(rng));
    return v;
  }

  /// Word id of the marker added to every stop view.
  static constexpr int kStopSignature = Vocabulary::kStopWord;

 private:
  std::size_t check(int n) const {
    if (n < 0 || n >= size()) throw std::out_of_range("unknown node id " + std::to_string(n));
    return static_cast<std::size_t>(n);
  }

  std::vector<float> view_base(int from, int to) const {
    std::mt19937_64 rng(mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(from) + 7),
                                 static_cast<std::uint64_t>(to + 1)));
    std::normal_distribution<double> nd(0.0, config.feature_noise);
    std::vector<float> v(static_cast<std::size_t>(config.view_dim));
    for (auto& x : v) x = static_cast<float>(nd(rng));
    return v;
  }

  void plant(std::vector<float>& v, int word) const {
    const auto s = signature(word, config.view_dim);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += s[i];
  }

  void build_views() {
    views_.clear();
    const auto d = static_cast<std::size_t>(config.view_dim);
    for (int n = 0; n < size(); ++n) {
      const auto& nb = neighbors_[static_cast<std::size_t>(n)];
      Tensor t(nb.size() + 1, d);
      auto stop = view_base(n, -1);
      plant(stop, nodes[static_cast<std::size_t>(n)].object_word);
      plant(stop, nodes[static_cast<std::size_t>(n)].location_word);
      plant(stop, kStopSignature);
      std::copy(stop.begin(), stop.end(), t.values.begin());
      for (std::size_t k = 0; k < nb.size(); ++k) {
        auto v = view_base(n, nb[k]);
        plant(v, nodes[static_cast<std::size_t>(nb[k])].object_word);
        plant(v, nodes[static_cast<std::size_t>(nb[k])].location_word);
        std::copy(v.begin(), v.end(), t.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
      }
      views_.push_back(std::move(t));
    }
  }

  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<double>> dist_;
  std::vector<std::vector<int>> next_hop_;
  std::vector<Tensor> views_;
};

namespace detail {

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[static_cast<std::size_t>(b)] = a;
    return true;
  }
};

}  // namespace detail

inline constexpr int kWorldGenerationAttempts = 16;

/// Procedural world: nodes on a jittered grid, short edges added with
/// probability `edge_density` (all pairs when density >= 1) under the
/// degree cap, then components joined by the shortest admissible edges.
/// A layout that cannot be connected under the cap is redrawn from a
/// derived seed, up to kWorldGenerationAttempts times.
inline WorldGraph generate_world(const WorldConfig& config) {
  if (config.node_count < 4) throw std::invalid_argument("world needs at least 4 nodes");
  if (config.success_radius <= 0.0) throw std::invalid_argument("success radius must be positive");
  if (config.max_degree < 2) throw std::invalid_argument("max degree must be at least 2");
  if (config.view_dim <= 0) throw std::invalid_argument("view dimension must be positive");
  const auto& vocab = Vocabulary::standard();
  const auto objects = vocab.ids_of(WordClass::Object);
  const auto locations = vocab.ids_of(WordClass::Location);
  const int n = config.node_count;

  for (int attempt = 0; attempt < kWorldGenerationAttempts; ++attempt) {
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(attempt)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    WorldGraph g;
    g.config = config;
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::vector<int> cells(static_cast<std::size_t>(side * side));
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    std::vector<int> obj_order = objects;
    std::shuffle(obj_order.begin(), obj_order.end(), rng);
    const double jitter = 0.15 * config.spacing;
    for (int i = 0; i < n; ++i) {
      WorldNode node;
      node.id = i;
      const int cell = cells[static_cast<std::size_t>(i)];
      node.x = (cell % side) * config.spacing + (2.0 * unit(rng) - 1.0) * jitter;
      node.y = (cell / side) * config.spacing + (2.0 * unit(rng) - 1.0) * jitter;
      node.object_word = obj_order[static_cast<std::size_t>(i) % obj_order.size()];
      node.location_word = locations[static_cast<std::size_t>(unit(rng) * static_cast<double>(locations.size())) % locations.size()];
      g.nodes.push_back(node);
    }

    struct Pair {
      int a, b;
      double d;
    };
    std::vector<Pair> pairs;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        pairs.push_back({a, b, std::hypot(g.nodes[static_cast<std::size_t>(a)].x - g.nodes[static_cast<std::size_t>(b)].x,
                                          g.nodes[static_cast<std::size_t>(a)].y - g.nodes[static_cast<std::size_t>(b)].y)});
      }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& p, const Pair& q) { return p.d < q.d; });

    std::vector<int> degree(static_cast<std::size_t>(n), 0);
    detail::DisjointSets sets(n);
    auto link = [&](const Pair& p) {
      g.edges.push_back({p.a, p.b, p.d});
      ++degree[static_cast<std::size_t>(p.a)];
      ++degree[static_cast<std::size_t>(p.b)];
      sets.unite(p.a, p.b);
    };
    auto has_room = [&](const Pair& p) {
      return degree[static_cast<std::size_t>(p.a)] < config.max_degree &&
             degree[static_cast<std::size_t>(p.b)] < config.max_degree;
    };
    const bool full = config.edge_density >= 1.0;
    const double link_radius = 1.6 * config.spacing;
    std::vector<bool> used(pairs.size(), false);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double u = unit(rng);
      if (!full && pairs[i].d > link_radius) continue;
      if (u < config.edge_density && has_room(pairs[i])) {
        link(pairs[i]);
        used[i] = true;
      }
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (used[i] || !has_room(pairs[i])) continue;
      if (sets.find(pairs[i].a) != sets.find(pairs[i].b)) link(pairs[i]);
    }
    bool connected = true;
    for (int i = 1; i < n; ++i) connected = connected && sets.find(i) == sets.find(0);
    if (!connected) continue;
    g.finalize();
    return g;
  }
  throw std::runtime_error("could not generate a connected world within the degree cap after " +
                           std::to_string(kWorldGenerationAttempts) + " attempts");
}

inline double geodesic_distance(const WorldGraph& g, int a, int b) { return g.distance(a, b); }

// ---- episodes ---------------------------------------------------------------

struct Episode {
  const WorldGraph* world = nullptr;
  int start = 0;
  int goal = 0;
  int current = 0;
  std::vector<int> trajectory;
  std::vector<int> ground_truth_path;
  int step_index = 0;
  bool done = false;
  int horizon = 0;

  static Episode begin(const WorldGraph& g, int start, int goal, int horizon) {
    Episode ep;
    ep.world = &g;
    ep.start = start;
    ep.goal = goal;
    ep.current = start;
    ep.trajectory = {start};
    ep.ground_truth_path = g.shortest_path(start, goal);
    ep.horizon = horizon;
    if (horizon < static_cast<int>(ep.ground_truth_path.size())) {
      throw std::invalid_argument("horizon shorter than the ground-truth path");
    }
    return ep;
  }

  /// Number of candidate actions at the current node (stop + J moves).
  int action_count() const { return world->neighbor_count(current) + 1; }

  /// Shortest-path teacher action: 0 at the goal, else the index of the
  /// next hop towards the goal.
  int teacher_action() const {
    if (current == goal) return 0;
    const int nxt = world->next_hop(current, goal);
    const auto& nb = world->neighbors(current);
    return static_cast<int>(std::lower_bound(nb.begin(), nb.end(), nxt) - nb.begin()) + 1;
  }
};

/// Action 0 stops; action k in 1..J moves to the k-th neighbour by id.
inline Episode step(const Episode& ep, int action) {
  if (ep.done) throw std::logic_error("step on a finished episode");
  const auto& nb = ep.world->neighbors(ep.current);
  if (action < 0 || action > static_cast<int>(nb.size())) {
    throw std::out_of_range("action " + std::to_string(action) + " exceeds " +
                            std::to_string(nb.size()) + " neighbours");
  }
  Episode out = ep;
  if (action == 0) {
    out.done = true;
    return out;
  }
  out.current = nb[static_cast<std::size_t>(action - 1)];
  out.trajectory.push_back(out.current);
  ++out.step_index;
  if (out.step_index >= out.horizon) out.done = true;
  return out;
}

inline constexpr int kFinalReward = 3;
inline constexpr int kStepReward = 1;

/// Attacker reward for the transition before -> after. The final step pays
/// -3 when the navigator ends within Z of the goal and +3 otherwise; a
/// non-final move pays -1 when it strictly reduces the distance to the goal
/// and +1 otherwise.
inline int attacker_reward(const Episode& before, const Episode& after) {
  const bool stopped = !before.done && after.done && after.trajectory == before.trajectory &&
                       after.step_index == before.step_index;
  const bool moved = !before.done && after.trajectory.size() == before.trajectory.size() + 1 &&
                     std::equal(before.trajectory.begin(), before.trajectory.end(),
                                after.trajectory.begin()) &&
                     after.step_index == before.step_index + 1 &&
                     before.world->adjacent(before.current, after.current);
  if (before.world != after.world || before.goal != after.goal || !(stopped || moved)) {
    throw std::invalid_argument("episodes are not one step apart");
  }
  const auto& g = *after.world;
  if (after.done) {
    return g.distance(after.current, after.goal) <= g.config.success_radius ? -kFinalReward
                                                                              : kFinalReward;
  }
  return g.distance(after.current, after.goal) < g.distance(before.current, before.goal)
             ? -kStepReward
             : kStepReward;
}

/// Zero-sum counterpart of attacker_reward.
inline int navigator_reward(const Episode& before, const Episode& after) {
  return -attacker_reward(before, after);
}

// ---- serialisation ------------------------------------------------------------

inline nlohmann::json world_to_json(const WorldGraph& g) {
  nlohmann::json j;
  const auto& c = g.config;
  j["seed"] = c.seed;
  j["config"] = {{"node_count", c.node_count}, {"edge_density", c.edge_density},
                 {"view_dim", c.view_dim},     {"success_radius", c.success_radius},
                 {"max_steps", c.max_steps},   {"max_degree", c.max_degree},
                 {"spacing", c.spacing},       {"feature_noise", c.feature_noise}};
  const auto& vocab = Vocabulary::standard();
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    j["nodes"].push_back({{"id", n.id},
                          {"x", n.x},
                          {"y", n.y},
                          {"object", vocab.word(n.object_word)},
                          {"location", vocab.word(n.location_word)}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) j["edges"].push_back({e.a, e.b});
  return j;
}

inline WorldGraph world_from_json(const nlohmann::json& j) {
  WorldGraph g;
  const auto& c = j.at("config");
  g.config.node_count = c.at("node_count").get<int>();
  g.config.edge_density = c.at("edge_density").get<double>();
  g.config.view_dim = c.at("view_dim").get<int>();
  g.config.success_radius = c.at("success_radius").get<double>();
  g.config.max_steps = c.at("max_steps").get<int>();
  g.config.max_degree = c.at("max_degree").get<int>();
  g.config.spacing = c.at("spacing").get<double>();
  g.config.feature_noise = c.at("feature_noise").get<double>();
  g.config.seed = j.at("seed").get<std::uint64_t>();
  const auto& vocab = Vocabulary::standard();
  for (const auto& n : j.at("nodes")) {
    g.nodes.push_back({n.at("id").get<int>(), n.at("x").get<double>(), n.at("y").get<double>(),
                       vocab.id(n.at("object").get<std::string>()),
                       vocab.id(n.at("location").get<std::string>())});
  }
  for (const auto& e : j.at("edges")) {
    const int a = e.at(0).get<int>();
    const int b = e.at(1).get<int>();
    const auto& na = g.nodes.at(static_cast<std::size_t>(a));
    const auto& nb = g.nodes.at(static_cast<std::size_t>(b));
    g.edges.push_back({a, b, std::hypot(na.x - nb.x, na.y - nb.y)});
  }
  g.finalize();
  return g;
}

}  // namespace advnav
