#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "advnav/diffcore/lstm.hpp"
#include "advnav/diffcore/params.hpp"
#include "advnav/instruct/instruction.hpp"
#include "advnav/navigator/model_dims.hpp"

namespace advnav {

/// Creates every attacker tensor under the "att." prefix. The attacker has
/// its own embedding and BiLSTM; nothing is shared with the navigator.
template <class T>
void init_attacker_params(BasicParamStore<T>& store, const ModelDims& d, int vocab_size,
                          std::mt19937_64& rng) {
  d.validate();
  const auto w = static_cast<std::size_t>(d.word_dim);
  const auto half = w / 2;
  store.add("att.embedding", static_cast<std::size_t>(vocab_size), w, rng);
  store.add("att.enc_fwd.weight", w + half, 4 * half, rng);
  store.add_zeros("att.enc_fwd.bias", 1, 4 * half);
  store.add("att.enc_bwd.weight", w + half, 4 * half, rng);
  store.add_zeros("att.enc_bwd.bias", 1, 4 * half);
  store.add("att.W_w", w, static_cast<std::size_t>(d.proj_dim), rng);
  store.add("att.W_v", static_cast<std::size_t>(d.view_dim), static_cast<std::size_t>(d.proj_dim), rng);
  store.add("att.W_wp", w, static_cast<std::size_t>(d.proj_dim), rng);
}

/// Per-episode attacker features of the original instruction.
struct AttackFeatures {
  Var u;                               // L x D_w
  Var target_feats;                    // L' x D_w
  Var target_proj;                     // L' x D_p, f^w W_w
  std::vector<Var> candidate_proj;     // per target K_j x D_p, invalid when K_j = 0
};

struct AttackScoreVars {
  Var beta;                    // L' x 1 word importance
  std::vector<Var> gamma;      // per target K_j x 1 substitution impact
  Var logits;                  // cells x 1, beta_j * gamma_jk over valid cells
  Var p_a;                     // cells x 1
  std::vector<AttackAction> cells;
};

/// Numeric attack score with the L' x K_max layout; invalid cells are zero.
struct AttackScore {
  int targets = 0;
  int k_max = 0;
  std::vector<double> beta;
  std::vector<double> gamma;  // L' x K_max
  std::vector<double> p_a;    // L' x K_max
  std::vector<bool> mask;     // L' x K_max
};

enum class SelectMode { Greedy, Sample };

template <class T>
class AttackerGraph {
 public:
  AttackerGraph(BasicTape<T>& tape, BasicParamStore<T>& store, double logit_scale = 1.0)
      : tape_(tape), logit_scale_(logit_scale) {
    embedding_ = store.bind(tape, "att.embedding");
    fwd_ = {store.bind(tape, "att.enc_fwd.weight"), store.bind(tape, "att.enc_fwd.bias")};
    bwd_ = {store.bind(tape, "att.enc_bwd.weight"), store.bind(tape, "att.enc_bwd.bias")};
    w_w_ = store.bind(tape, "att.W_w");
    w_v_ = store.bind(tape, "att.W_v");
    w_wp_ = store.bind(tape, "att.W_wp");
  }

  /// Encodes the original instruction and projects the target and
  /// candidate features; reused for every timestep of an episode.
  AttackFeatures prepare(const Instruction& instr) {
    if (instr.targets.empty()) throw std::invalid_argument("attacker: instruction has no targets");
    AttackFeatures f;
    f.u = bilstm_encode(tape_, embedding_, fwd_, bwd_, instr.tokens);
    f.target_feats = tape_.gather(f.u, instr.targets);
    f.target_proj = tape_.matmul(f.target_feats, w_w_);
    f.candidate_proj.resize(instr.candidates.size());
    for (std::size_t j = 0; j < instr.candidates.size(); ++j) {
      if (instr.candidates[j].empty()) continue;
      std::vector<int> rows;
      for (const auto& c : instr.candidates[j]) rows.push_back(c.position);
      f.candidate_proj[j] = tape_.matmul(tape_.gather(f.u, rows), w_wp_);
    }
    return f;
  }

  /// beta = softmax((f^w W_w)(f^v W_v)^T); gamma_j = softmax over the
  /// candidates of (f^w_j W_w)(f^w'_j W_w')^T; p_a = softmax of beta
  /// broadcast along each gamma row, flattened over the valid cells, with
  /// the logits multiplied by the configured scale.
  AttackScoreVars score(const Instruction& instr, const AttackFeatures& f, Var fv) {
    if (instr.valid_cells() == 0) throw std::invalid_argument("attacker: no valid candidates");
    AttackScoreVars s;
    const int k_max = instr.max_candidates();
    s.beta = tape_.softmax(tape_.matmul(f.target_proj, tape_.matmul(fv, w_v_), false, true));
    s.gamma.resize(instr.candidates.size());
    std::vector<Var> parts;
    for (std::size_t j = 0; j < instr.candidates.size(); ++j) {
      const auto kj = instr.candidates[j].size();
      if (kj == 0) continue;
      const int jj = static_cast<int>(j);
      Var own = tape_.gather(f.target_proj, {jj});
      s.gamma[j] = tape_.softmax(tape_.matmul(f.candidate_proj[j], own, false, true));
      Var beta_j = tape_.gather(s.beta, std::vector<int>(kj, jj));
      parts.push_back(tape_.mul(beta_j, s.gamma[j]));
      for (std::size_t k = 0; k < kj; ++k) {
        s.cells.push_back(AttackAction::at(jj, static_cast<int>(k), k_max));
      }
    }
    s.logits = parts.size() == 1 ? parts.front() : tape_.concat(std::move(parts), 0);
    if (logit_scale_ != 1.0) s.logits = tape_.scale(s.logits, logit_scale_);
    s.p_a = tape_.softmax(s.logits);
    return s;
  }

  AttackScore numeric(const Instruction& instr, const AttackScoreVars& s) const {
    AttackScore out;
    out.targets = instr.target_count();
    out.k_max = instr.max_candidates();
    const auto cells = static_cast<std::size_t>(out.targets * out.k_max);
    out.gamma.assign(cells, 0.0);
    out.p_a.assign(cells, 0.0);
    out.mask.assign(cells, false);
    const auto beta = tape_.value(s.beta);
    out.beta.assign(beta.begin(), beta.end());
    const auto p = tape_.value(s.p_a);
    for (std::size_t c = 0; c < s.cells.size(); ++c) {
      const auto& a = s.cells[c];
      const auto flat = static_cast<std::size_t>(a.flat_index);
      out.mask[flat] = true;
      out.p_a[flat] = p[c];
      out.gamma[flat] = tape_.value(s.gamma[static_cast<std::size_t>(a.target_index)])
                            [static_cast<std::size_t>(a.candidate_index)];
    }
    return out;
  }

 private:
  BasicTape<T>& tape_;
  double logit_scale_;
  Var embedding_;
  LstmVars fwd_, bwd_;
  Var w_w_, w_v_, w_wp_;
};

/// Greedy picks the most probable valid cell, lowest flat index on ties;
/// Sample draws from p_a.
inline AttackAction select_attack(const AttackScore& score, SelectMode mode, std::mt19937_64& rng) {
  double total = 0.0;
  int best = -1;
  for (std::size_t i = 0; i < score.p_a.size(); ++i) {
    if (!score.mask[i]) continue;
    total += score.p_a[i];
    if (best < 0 || score.p_a[i] > score.p_a[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  if (best < 0) throw std::invalid_argument("select_attack: no valid cell");
  int chosen = best;
  if (mode == SelectMode::Sample) {
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    int last_valid = best;
    chosen = -1;
    for (std::size_t i = 0; i < score.p_a.size(); ++i) {
      if (!score.mask[i]) continue;
      last_valid = static_cast<int>(i);
      acc += score.p_a[i];
      if (u < acc) {
        chosen = static_cast<int>(i);
        break;
      }
    }
    if (chosen < 0) chosen = last_valid;
  }
  return AttackAction::at(chosen / score.k_max, chosen % score.k_max, score.k_max);
}

/// Position of `a` in the cell list of a score (the index into p_a / logits).
inline int cell_position(const AttackScoreVars& s, const AttackAction& a) {
  for (std::size_t i = 0; i < s.cells.size(); ++i) {
    if (s.cells[i] == a) return static_cast<int>(i);
  }
  throw std::invalid_argument("attack action is not a valid cell");
}

}  // namespace advnav
