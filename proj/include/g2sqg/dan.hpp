#pragma once

// Answer-aware passage encoding by soft alignment at the word level and again
// at the contextualized hidden-state level.

#include <string>

#include "g2sqg/nn.hpp"
#include "g2sqg/tape.hpp"

namespace g2s {

template <typename Scalar>
struct Alignment {
  Var<Scalar> aligned;  // [X~p ; X~a beta^T]
  Var<Scalar> beta;     // N x L, rows sum to 1
};

/// beta = row-softmax(ReLU(W Xp)^T ReLU(W Xa)) over the answer positions.
template <typename Scalar>
Alignment<Scalar> align(const Var<Scalar>& xp, const Var<Scalar>& xa, const Var<Scalar>& xp_tilde,
                        const Var<Scalar>& xa_tilde, const Var<Scalar>& w) {
  if (xp.cols() == 0 || xa.cols() == 0) throw EmptyInputError("align: passage and answer must be nonempty");
  if (xp.rows() != xa.rows() || w.cols() != xp.rows())
    throw ShapeError("align: W " + shape_string(w.rows(), w.cols()) + ", Xp " + shape_string(xp.rows(), xp.cols()) +
                     ", Xa " + shape_string(xa.rows(), xa.cols()));
  if (xp_tilde.cols() != xp.cols() || xa_tilde.cols() != xa.cols())
    throw ShapeError("align: aligned-side inputs have the wrong number of columns");
  auto scores = matmul(transpose(relu(matmul(w, xp))), relu(matmul(w, xa)));
  auto beta = softmax(scores, 1);
  return {vcat({xp_tilde, matmul(xa_tilde, transpose(beta))}), beta};
}

template <typename Scalar>
Var<Scalar> contextualize(const Var<Scalar>& h, const ParameterStore<Scalar>& params, const std::string& prefix) {
  auto& tape = h.tape();
  const auto fw = lstm_weights(tape, params, prefix + ".fw");
  const auto bw = lstm_weights(tape, params, prefix + ".bw");
  if (fw.wx.cols() != h.rows())
    throw ShapeError("contextualize: input has " + std::to_string(h.rows()) + " rows, " + prefix + " expects " +
                     std::to_string(fw.wx.cols()));
  return bilstm(h, fw, bw);
}

struct DanDims {
  int word = 300;      // F, fixed word vectors
  int context = 0;     // contextual embedding rows, 0 when absent
  int features = 23;   // case + POS + NER embedding rows
  int hidden = 300;    // d; each LSTM direction has d/2 units
  bool use_dan = true;

  int passage_embed() const { return word + context + features; }
  int answer_embed() const { return word + context; }
};

inline void add_dan_parameters(ParameterStore<float>& store, const DanDims& dims, Rng& rng) {
  if (dims.hidden % 2 != 0) throw ConfigError("model.hidden must be even");
  const int half = dims.hidden / 2;
  auto add_bilstm = [&](const std::string& prefix, int input) {
    add_lstm_parameters(store, prefix + ".fw", input, half, rng);
    add_lstm_parameters(store, prefix + ".bw", input, half, rng);
  };
  if (dims.use_dan) {
    store.add_weight("dan.word.W", dims.hidden, dims.word, rng);
    store.add_weight("dan.hidden.W", dims.hidden, dims.answer_embed() + dims.hidden, rng);
    add_bilstm("dan.lstm_p", dims.passage_embed() + dims.word);
    add_bilstm("dan.lstm_a", dims.answer_embed());
    add_bilstm("dan.lstm_x", 2 * dims.hidden);
  } else {
    add_bilstm("dan.lstm_p", dims.passage_embed());
    add_bilstm("dan.lstm_x", dims.hidden);
  }
}

/// Embedded passage and answer. `bp`/`ba` are left default-constructed when no
/// contextual embeddings exist.
template <typename Scalar>
struct DanInputs {
  Var<Scalar> gp;  // F x N
  Var<Scalar> ga;  // F x L
  Var<Scalar> bp;
  Var<Scalar> ba;
  Var<Scalar> lp;  // feature embeddings, features x N
};

struct DanSettings {
  bool use_dan = true;
  double dropout_embed = 0.4;
  double dropout_rnn = 0.3;
  bool training = false;
};

template <typename Scalar>
struct DanOutput {
  Var<Scalar> h_tilde;      // word-level aligned passage
  Var<Scalar> h_bar_p;      // contextualized passage
  Var<Scalar> h_bar_a;      // contextualized answer (unset without alignment)
  Var<Scalar> x;            // final passage embedding, d x N
  Var<Scalar> beta_word;    // N x L
  Var<Scalar> beta_hidden;  // N x L
};

template <typename Scalar>
DanOutput<Scalar> dan_forward(const DanInputs<Scalar>& in, const ParameterStore<Scalar>& params,
                              const DanSettings& s, Rng& rng) {
  auto& tape = in.gp.tape();
  const bool has_context = in.bp.valid();
  auto with_context = [&](const Var<Scalar>& g, const Var<Scalar>& b) { return has_context ? vcat({g, b}) : g; };
  auto drop_embed = [&](const Var<Scalar>& v) { return variational_dropout(v, s.dropout_embed, s.training, rng); };
  auto drop_rnn = [&](const Var<Scalar>& v) { return variational_dropout(v, s.dropout_rnn, s.training, rng); };

  DanOutput<Scalar> out;
  auto xp_tilde = drop_embed(vcat({with_context(in.gp, in.bp), in.lp}));
  if (!s.use_dan) {
    out.h_tilde = xp_tilde;
    out.h_bar_p = drop_rnn(contextualize(out.h_tilde, params, "dan.lstm_p"));
    out.x = drop_rnn(contextualize(out.h_bar_p, params, "dan.lstm_x"));
    return out;
  }
  auto word = align(in.gp, in.ga, xp_tilde, in.ga, tape.parameter(params, "dan.word.W"));
  out.h_tilde = word.aligned;
  out.beta_word = word.beta;
  out.h_bar_p = drop_rnn(contextualize(out.h_tilde, params, "dan.lstm_p"));
  out.h_bar_a = drop_rnn(contextualize(drop_embed(with_context(in.ga, in.ba)), params, "dan.lstm_a"));
  auto hidden = align(vcat({with_context(in.gp, in.bp), out.h_bar_p}), vcat({with_context(in.ga, in.ba), out.h_bar_a}),
                      out.h_bar_p, out.h_bar_a, tape.parameter(params, "dan.hidden.W"));
  out.beta_hidden = hidden.beta;
  out.x = drop_rnn(contextualize(hidden.aligned, params, "dan.lstm_x"));
  return out;
}

}  // namespace g2s
