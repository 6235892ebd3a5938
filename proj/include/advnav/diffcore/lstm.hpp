#pragma once

#include <stdexcept>
#include <string>
#include <vector>
#include <utility>

#include "advnav/diffcore/tape.hpp"

namespace advnav {

/// Tape handles for one LSTM layer. `weight` is (input + hidden) x 4*hidden,
/// `bias` is 1 x 4*hidden; gate blocks are ordered input, forget, cell, output.
struct LstmVars {
  Var weight;
  Var bias;
};

struct LstmState {
  Var h;
  Var c;
};

/// One step of the standard gated recurrence on row vectors.
template <class T>
LstmState lstm_cell(BasicTape<T>& tape, Var x, Var h_prev, Var c_prev, const LstmVars& p) {
  const std::size_t hidden = tape.cols(h_prev);
  const std::size_t in_dim = tape.cols(x);
  if (tape.rows(x) != 1 || tape.rows(h_prev) != 1 || tape.rows(c_prev) != 1) {
    throw ShapeError("lstm_cell: x, h and c must be row vectors");
  }
  if (tape.cols(c_prev) != hidden) {
    throw ShapeError("lstm_cell: cell state width " + std::to_string(tape.cols(c_prev)) +
                     " differs from hidden width " + std::to_string(hidden));
  }
  if (tape.rows(p.weight) != in_dim + hidden || tape.cols(p.weight) != 4 * hidden ||
      tape.cols(p.bias) != 4 * hidden) {
    throw ShapeError("lstm_cell: parameter shapes do not match input " +
                     std::to_string(in_dim) + " / hidden " + std::to_string(hidden));
  }
  const int hd = static_cast<int>(hidden);
  Var xh = tape.concat({x, h_prev}, 1);
  Var z = tape.add(tape.matmul(xh, p.weight), p.bias);
  Var i = tape.sigmoid(tape.slice_cols(z, 0, hd));
  Var f = tape.sigmoid(tape.slice_cols(z, hd, 2 * hd));
  Var g = tape.tanh(tape.slice_cols(z, 2 * hd, 3 * hd));
  Var o = tape.sigmoid(tape.slice_cols(z, 3 * hd, 4 * hd));
  Var c = tape.add(tape.mul(f, c_prev), tape.mul(i, g));
  Var h = tape.mul(o, tape.tanh(c));
  return {h, c};
}

/// Bidirectional encoder over token ids: embeds each token, runs a forward
/// and a backward LSTM, and stacks [h_fwd; h_bwd] per position into an
/// L x (2 * hidden) matrix.
template <class T>
Var bilstm_encode(BasicTape<T>& tape, Var embedding, const LstmVars& fwd, const LstmVars& bwd,
                  const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("cannot encode an empty token sequence");
  const std::size_t hidden = tape.cols(fwd.bias) / 4;
  const std::size_t n = tokens.size();
  std::vector<Var> inputs;
  inputs.reserve(n);
  for (int tok : tokens) inputs.push_back(tape.gather(embedding, {tok}));
  const Var zero = tape.constant(BasicTensor<T>(1, hidden));
  std::vector<Var> forward(n), backward(n);
  LstmState s{zero, zero};
  for (std::size_t i = 0; i < n; ++i) {
    s = lstm_cell(tape, inputs[i], s.h, s.c, fwd);
    forward[i] = s.h;
  }
  s = {zero, zero};
  for (std::size_t i = n; i-- > 0;) {
    s = lstm_cell(tape, inputs[i], s.h, s.c, bwd);
    backward[i] = s.h;
  }
  std::vector<Var> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(tape.concat({forward[i], backward[i]}, 1));
  return tape.concat(std::move(rows), 0);
}

}  // namespace advnav
