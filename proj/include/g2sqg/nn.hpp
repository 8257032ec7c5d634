#pragma once

// Recurrent cells and dropout composed from tape primitives.

#include <string>
#include <vector>

#include "g2sqg/random.hpp"
#include "g2sqg/tape.hpp"

namespace g2s {

/// Gate order in the packed matrices: input, forget, candidate, output.
template <typename Scalar>
struct LstmWeights {
  Var<Scalar> wx;  // 4H x in
  Var<Scalar> wh;  // 4H x H
  Var<Scalar> b;   // 4H x 1

  Eigen::Index hidden() const { return wh.cols(); }
};

template <typename Scalar>
struct LstmState {
  Var<Scalar> h;
  Var<Scalar> c;
};

inline void add_lstm_parameters(ParameterStore<float>& store, const std::string& prefix,
                                Eigen::Index input, Eigen::Index hidden, Rng& rng) {
  store.add_weight(prefix + ".wx", 4 * hidden, input, rng);
  store.add_weight(prefix + ".wh", 4 * hidden, hidden, rng);
  store.add_zeros(prefix + ".b", 4 * hidden, 1);
}

template <typename Scalar>
LstmWeights<Scalar> lstm_weights(Tape<Scalar>& tape, const ParameterStore<Scalar>& store,
                                 const std::string& prefix) {
  return {tape.parameter(store, prefix + ".wx"), tape.parameter(store, prefix + ".wh"),
          tape.parameter(store, prefix + ".b")};
}

/// One LSTM step given the already-projected input gates (Wx x + b).
template <typename Scalar>
LstmState<Scalar> lstm_step(const Var<Scalar>& input_gates, const LstmState<Scalar>& prev,
                            const Var<Scalar>& wh) {
  const Eigen::Index h = wh.cols();
  if (input_gates.rows() != 4 * h || prev.h.rows() != h || prev.c.rows() != h)
    throw ShapeError("lstm: gates " + shape_string(input_gates.rows(), input_gates.cols()) +
                     " incompatible with hidden size " + std::to_string(h));
  auto gates = add(input_gates, matmul(wh, prev.h));
  auto i = sigmoid(slice_rows(gates, 0, h));
  auto f = sigmoid(slice_rows(gates, h, h));
  auto g = tanh(slice_rows(gates, 2 * h, h));
  auto o = sigmoid(slice_rows(gates, 3 * h, h));
  auto c = add(hadamard(f, prev.c), hadamard(i, g));
  return {hadamard(o, tanh(c)), c};
}

template <typename Scalar>
LstmState<Scalar> lstm_cell(const Var<Scalar>& x, const LstmState<Scalar>& prev,
                            const LstmWeights<Scalar>& w) {
  if (w.wx.cols() != x.rows())
    throw ShapeError("lstm_cell: input " + shape_string(x.rows(), x.cols()) + " does not match weights " +
                     shape_string(w.wx.rows(), w.wx.cols()));
  return lstm_step(affine(w.wx, x, w.b), prev, w.wh);
}

template <typename Scalar>
LstmState<Scalar> zero_lstm_state(Tape<Scalar>& tape, Eigen::Index hidden) {
  return {tape.constant(Matrix<Scalar>::Zero(hidden, 1)), tape.constant(Matrix<Scalar>::Zero(hidden, 1))};
}

/// Runs an LSTM over the columns of `xs`, optionally right to left. Output
/// column t is the hidden state after consuming column t.
template <typename Scalar>
Var<Scalar> run_lstm(const Var<Scalar>& xs, const LstmWeights<Scalar>& w, bool reverse) {
  auto& tape = xs.tape();
  const Eigen::Index n = xs.cols();
  const Eigen::Index h = w.hidden();
  auto projected = affine(w.wx, xs, w.b);
  std::vector<Var<Scalar>> outputs(static_cast<std::size_t>(n));
  LstmState<Scalar> state = zero_lstm_state(tape, h);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index t = reverse ? n - 1 - k : k;
    state = lstm_step(slice_cols(projected, t, 1), state, w.wh);
    outputs[static_cast<std::size_t>(t)] = state.h;
  }
  return hcat(outputs);
}

/// Bidirectional LSTM: per-position [forward; backward] hidden states.
template <typename Scalar>
Var<Scalar> bilstm(const Var<Scalar>& xs, const LstmWeights<Scalar>& forward,
                   const LstmWeights<Scalar>& backward) {
  if (xs.cols() == 0) throw EmptyInputError("bilstm: empty sequence");
  return vcat({run_lstm(xs, forward, false), run_lstm(xs, backward, true)});
}

/// Packed GRU weights: w acts on the incoming message (rows: update, reset,
/// candidate), u on the previous state for update/reset, uh on the reset-gated
/// previous state for the candidate.
template <typename Scalar>
struct GruWeights {
  Var<Scalar> w;   // 3d x d
  Var<Scalar> u;   // 2d x d
  Var<Scalar> uh;  // d x d
  Var<Scalar> b;   // 3d x 1
};

inline void add_gru_parameters(ParameterStore<float>& store, const std::string& prefix, Eigen::Index d,
                               Rng& rng) {
  store.add_weight(prefix + ".w", 3 * d, d, rng);
  store.add_weight(prefix + ".u", 2 * d, d, rng);
  store.add_weight(prefix + ".uh", d, d, rng);
  store.add_zeros(prefix + ".b", 3 * d, 1);
}

template <typename Scalar>
GruWeights<Scalar> gru_weights(Tape<Scalar>& tape, const ParameterStore<Scalar>& store,
                               const std::string& prefix) {
  return {tape.parameter(store, prefix + ".w"), tape.parameter(store, prefix + ".u"),
          tape.parameter(store, prefix + ".uh"), tape.parameter(store, prefix + ".b")};
}

/// GRU update applied column-wise: h' = (1 - z) * h + z * candidate.
template <typename Scalar>
Var<Scalar> gru_cell(const Var<Scalar>& h_prev, const Var<Scalar>& message, const GruWeights<Scalar>& p) {
  const Eigen::Index d = p.uh.rows();
  if (h_prev.rows() != d || message.rows() != d || h_prev.cols() != message.cols())
    throw ShapeError("gru_cell: state " + shape_string(h_prev.rows(), h_prev.cols()) + " and message " +
                     shape_string(message.rows(), message.cols()) + " do not match size " +
                     std::to_string(d));
  auto wa = affine(p.w, message, p.b);
  auto uh = matmul(p.u, h_prev);
  auto z = sigmoid(add(slice_rows(wa, 0, d), slice_rows(uh, 0, d)));
  auto r = sigmoid(add(slice_rows(wa, d, d), slice_rows(uh, d, d)));
  auto candidate = tanh(add(slice_rows(wa, 2 * d, d), matmul(p.uh, hadamard(r, h_prev))));
  return add(h_prev, hadamard(z, sub(candidate, h_prev)));
}

/// Inverted dropout with one Bernoulli draw per feature row, shared by every
/// column (time step) of `x`. Identity outside training or at rate 0.
template <typename Scalar>
Var<Scalar> variational_dropout(const Var<Scalar>& x, double rate, bool training, Rng& rng) {
  if (rate < 0 || rate >= 1) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0) return x;
  Matrix<Scalar> mask(x.rows(), 1);
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Eigen::Index r = 0; r < x.rows(); ++r) mask(r, 0) = rng.bernoulli(1.0 - rate) ? keep_scale : Scalar(0);
  return hadamard(x, x.tape().constant(std::move(mask)));
}

}  // namespace g2s
