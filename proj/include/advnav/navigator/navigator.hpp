#pragma once

#include <random>
#include <string>
#include <vector>

#include "advnav/diffcore/lstm.hpp"
#include "advnav/diffcore/params.hpp"
#include "advnav/navigator/model_dims.hpp"

namespace advnav {

/// Creates every navigator tensor under the "nav." prefix.
template <class T>
void init_navigator_params(BasicParamStore<T>& store, const ModelDims& d, int vocab_size,
                           std::mt19937_64& rng) {
  d.validate();
  const auto w = static_cast<std::size_t>(d.word_dim);
  const auto v = static_cast<std::size_t>(d.view_dim);
  const auto p = static_cast<std::size_t>(d.proj_dim);
  const auto h = static_cast<std::size_t>(d.hidden_dim);
  const auto half = w / 2;
  store.add("nav.embedding", static_cast<std::size_t>(vocab_size), w, rng);
  store.add("nav.enc_fwd.weight", w + half, 4 * half, rng);
  store.add_zeros("nav.enc_fwd.bias", 1, 4 * half);
  store.add("nav.enc_bwd.weight", w + half, 4 * half, rng);
  store.add_zeros("nav.enc_bwd.bias", 1, 4 * half);
  store.add("nav.dec.weight", 2 * v + h, 4 * h, rng);
  store.add_zeros("nav.dec.bias", 1, 4 * h);
  store.add("nav.W_u", w, h, rng);
  store.add("nav.W_vp", v, h, rng);
  store.add("nav.W_hp", w + h, h, rng);
  store.add("nav.W_a", v, h, rng);
  store.add("nav.W_e", w, p, rng);
  store.add("nav.W_h", h, p, rng);
  store.add("nav.start_action", 1, v, rng);
}

/// Decoder state carried between timesteps: the fused state h~, the LSTM
/// cell, and the feature of the previously chosen candidate.
struct NavState {
  Var h_tilde;
  Var cell;
  Var prev_action;
};

struct EncodedInstruction {
  Var u;             // L x D_w contextual token features
  Var target_feats;  // L' x D_w rows of u at the target positions; invalid when L' = 0
};

struct VisualAttention {
  Var alpha_v;  // views x 1
  Var fv;       // 1 x D_v attended view feature
};

struct NavStepOutput {
  Var alpha_w;    // L x 1
  Var fw;         // 1 x D_w attended language feature
  Var alpha_v;
  Var fv;
  Var h;          // decoder LSTM output
  Var h_tilde;    // fused state
  Var cell;
  Var logits;     // (J+1) x 1 action scores
  Var p_n;        // (J+1) x 1
  Var pc_logits;  // L' x 1, invalid when there are no targets
  Var p_c;
};

/// Navigator forward pass recorded on one tape.
///
/// Language and visual attention, the fused state and both output heads
/// follow the attentive seq2seq agent: the LSTM consumes
/// [attended view; previous action feature] with h~_{t-1} as its recurrent
/// input, the views are attended with h~_{t-1} before the update, and the
/// attacked-word head scores target features against h~_t.
template <class T>
class NavigatorGraph {
 public:
  NavigatorGraph(BasicTape<T>& tape, BasicParamStore<T>& store, const ModelDims& dims)
      : tape_(tape), dims_(dims) {
    embedding_ = store.bind(tape, "nav.embedding");
    fwd_ = {store.bind(tape, "nav.enc_fwd.weight"), store.bind(tape, "nav.enc_fwd.bias")};
    bwd_ = {store.bind(tape, "nav.enc_bwd.weight"), store.bind(tape, "nav.enc_bwd.bias")};
    dec_ = {store.bind(tape, "nav.dec.weight"), store.bind(tape, "nav.dec.bias")};
    w_u_ = store.bind(tape, "nav.W_u");
    w_vp_ = store.bind(tape, "nav.W_vp");
    w_hp_ = store.bind(tape, "nav.W_hp");
    w_a_ = store.bind(tape, "nav.W_a");
    w_e_ = store.bind(tape, "nav.W_e");
    w_h_ = store.bind(tape, "nav.W_h");
    start_action_ = store.bind(tape, "nav.start_action");
  }

  BasicTape<T>& tape() { return tape_; }

  EncodedInstruction encode(const std::vector<int>& tokens, const std::vector<int>& targets) {
    EncodedInstruction e;
    e.u = bilstm_encode(tape_, embedding_, fwd_, bwd_, tokens);
    if (!targets.empty()) e.target_feats = tape_.gather(e.u, targets);
    return e;
  }

  NavState initial_state() {
    const Var zero = tape_.constant(BasicTensor<T>(1, static_cast<std::size_t>(dims_.hidden_dim)));
    return {zero, zero, start_action_};
  }

  /// Visual attention over the candidate views with h~_{t-1}.
  VisualAttention attend_views(Var views, const NavState& s) {
    if (tape_.rows(views) == 0) throw ShapeError("navigator: no views to attend");
    Var query = tape_.matmul(s.h_tilde, w_vp_, false, true);
    Var alpha = tape_.softmax(tape_.matmul(views, query, false, true));
    return {alpha, tape_.matmul(alpha, views, true, false)};
  }

  /// Recurrent update, language attention, fused state and both heads.
  NavStepOutput advance(const EncodedInstruction& enc, Var views, const VisualAttention& va,
                        const NavState& s) {
    if (tape_.rows(views) == 0) throw ShapeError("navigator: no candidate views");
    NavStepOutput out;
    out.alpha_v = va.alpha_v;
    out.fv = va.fv;
    const auto next = lstm_cell(tape_, tape_.concat({va.fv, s.prev_action}, 1), s.h_tilde, s.cell, dec_);
    out.h = next.h;
    out.cell = next.c;
    Var query = tape_.matmul(out.h, w_u_, false, true);
    out.alpha_w = tape_.softmax(tape_.matmul(enc.u, query, false, true));
    out.fw = tape_.matmul(out.alpha_w, enc.u, true, false);
    out.h_tilde = tape_.tanh(tape_.matmul(tape_.concat({out.fw, out.h}, 1), w_hp_));
    out.logits = tape_.matmul(views, tape_.matmul(out.h_tilde, w_a_, false, true), false, true);
    out.p_n = tape_.softmax(out.logits);
    if (enc.target_feats.valid()) {
      out.pc_logits = attacked_word_logits(out.h_tilde, enc.target_feats);
      out.p_c = tape_.softmax(out.pc_logits);
    }
    return out;
  }

  /// attend_views followed by advance; pair with next_state once an action
  /// is chosen.
  NavStepOutput decode_step(const EncodedInstruction& enc, Var views, const NavState& s) {
    return advance(enc, views, attend_views(views, s), s);
  }

  /// Scores (f^w W_e)(h~ W_h)^T over the L' targets.
  Var attacked_word_logits(Var h_tilde, Var target_feats) {
    return tape_.matmul(tape_.matmul(target_feats, w_e_), tape_.matmul(h_tilde, w_h_), false, true);
  }

  Var predict_attacked_word(Var h_tilde, Var target_feats) {
    return tape_.softmax(attacked_word_logits(h_tilde, target_feats));
  }

  /// State after taking `action`; the chosen candidate's view feature
  /// becomes the previous-action feature.
  NavState next_state(const NavStepOutput& out, Var views, int action) {
    return {out.h_tilde, out.cell, tape_.gather(views, {action})};
  }

 private:
  BasicTape<T>& tape_;
  ModelDims dims_;
  Var embedding_;
  LstmVars fwd_, bwd_, dec_;
  Var w_u_, w_vp_, w_hp_, w_a_, w_e_, w_h_, start_action_;
};

}  // namespace advnav
