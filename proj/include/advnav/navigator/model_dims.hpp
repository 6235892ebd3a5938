#pragma once

#include <stdexcept>

namespace advnav {

/// Feature widths shared by the navigator, attacker and value networks.
/// A full-scale setting would be 512 / 2052 / 512 / 512.
struct ModelDims {
  int word_dim = 32;    // D_w, also the BiLSTM output width (two halves)
  int view_dim = 32;    // D_v
  int proj_dim = 32;    // D_p
  int hidden_dim = 32;  // D_h
  // Multiplies the attacker's beta*gamma logits before the softmax. At 1 the
  // cell distribution is nearly flat (logits lie in [0, 1]).
  double attack_logit_scale = 10.0;

  void validate() const {
    if (word_dim <= 0 || view_dim <= 0 || proj_dim <= 0 || hidden_dim <= 0) {
      throw std::invalid_argument("model dimensions must be positive");
    }
    if (!(attack_logit_scale > 0.0)) throw std::invalid_argument("attack_logit_scale must be positive");
    if (word_dim % 2 != 0) throw std::invalid_argument("word_dim must be even (two LSTM directions)");
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

}  // namespace advnav
