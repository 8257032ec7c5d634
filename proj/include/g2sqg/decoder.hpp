#pragma once

// Attention LSTM decoder with a copy switch and coverage, plus greedy,
// sampled, teacher-forced and beam decoding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

#include "g2sqg/corpus.hpp"
#include "g2sqg/nn.hpp"
#include "g2sqg/random.hpp"
#include "g2sqg/tape.hpp"

namespace g2s {

inline constexpr int kDefaultBeamWidth = 5;
inline constexpr int kDefaultMaxLen = 30;
inline constexpr double kProbFloor = 1e-12;

inline void add_decoder_parameters(ParameterStore<float>& store, int word_dim, int d, int vocab, Rng& rng) {
  add_lstm_parameters(store, "dec.lstm", word_dim, d, rng);
  store.add_weight("att.Wh", d, d, rng);
  store.add_weight("att.Ws", d, d, rng);
  store.add_weight("att.wc", d, 1, rng);
  store.add_zeros("att.b", d, 1);
  store.add_weight("att.v", 1, d, rng);
  store.add_weight("pgen.wh", 1, d, rng);
  store.add_weight("pgen.ws", 1, d, rng);
  store.add_weight("pgen.wx", 1, word_dim, rng);
  store.add_zeros("pgen.b", 1, 1);
  store.add_weight("out.W", vocab, 2 * d, rng);
  store.add_zeros("out.b", vocab, 1);
}

template <typename Scalar>
struct DecoderWeights {
  LstmWeights<Scalar> lstm;
  Var<Scalar> att_wh, att_ws, att_wc, att_b, att_v;
  Var<Scalar> pgen_h, pgen_s, pgen_x, pgen_b;
  Var<Scalar> out_w, out_b;

  static DecoderWeights load(Tape<Scalar>& tape, const ParameterStore<Scalar>& p) {
    return {lstm_weights(tape, p, "dec.lstm"),
            tape.parameter(p, "att.Wh"),
            tape.parameter(p, "att.Ws"),
            tape.parameter(p, "att.wc"),
            tape.parameter(p, "att.b"),
            tape.parameter(p, "att.v"),
            tape.parameter(p, "pgen.wh"),
            tape.parameter(p, "pgen.ws"),
            tape.parameter(p, "pgen.wx"),
            tape.parameter(p, "pgen.b"),
            tape.parameter(p, "out.W"),
            tape.parameter(p, "out.b")};
  }
};

/// Everything a decode step reads but never changes.
template <typename Scalar>
struct DecoderContext {
  DecoderWeights<Scalar> w;
  Var<Scalar> memory;       // d x N encoder node states
  Var<Scalar> memory_proj;  // att.Wh * memory, shared by every step
  const Matrix<Scalar>* glove = nullptr;
  std::vector<int> source_ids;  // extended id per passage position
  std::size_t extended_size = 0;

  std::size_t vocab_size() const { return static_cast<std::size_t>(w.out_b.rows()); }
};

template <typename Scalar>
DecoderContext<Scalar> make_decoder_context(Tape<Scalar>& tape, const ParameterStore<Scalar>& params,
                                            const Var<Scalar>& memory, const Matrix<Scalar>& glove,
                                            std::vector<int> source_ids, std::size_t extended_size) {
  if (static_cast<Eigen::Index>(source_ids.size()) != memory.cols())
    throw ShapeError("decoder: " + std::to_string(source_ids.size()) + " source ids for " +
                     std::to_string(memory.cols()) + " memory columns");
  DecoderContext<Scalar> ctx{DecoderWeights<Scalar>::load(tape, params), memory, {}, &glove, std::move(source_ids),
                             extended_size};
  ctx.memory_proj = matmul(ctx.w.att_wh, memory);
  return ctx;
}

template <typename Scalar>
struct DecoderState {
  LstmState<Scalar> lstm;  // h is s_t
  Var<Scalar> coverage;    // 1 x N, sum of earlier attention rows
  int step = 0;
};

template <typename Scalar>
DecoderState<Scalar> initial_state(const Var<Scalar>& s0, const Var<Scalar>& c0, Eigen::Index n) {
  return {{s0, c0}, s0.tape().constant(Matrix<Scalar>::Zero(1, n)), 0};
}

template <typename Scalar>
struct AttentionResult {
  Var<Scalar> attention;  // 1 x N
  Var<Scalar> context;    // d x 1
};

/// e_i = v^T tanh(Wh h_i + Ws s + wc c_i + b); a = softmax(e); h* = sum_i a_i h_i.
template <typename Scalar>
AttentionResult<Scalar> attention_step(const Var<Scalar>& s, const Var<Scalar>& memory,
                                       const Var<Scalar>& memory_proj, const Var<Scalar>& coverage,
                                       const DecoderWeights<Scalar>& w) {
  if (coverage.rows() != 1 || coverage.cols() != memory.cols())
    throw ShapeError("attention: coverage " + shape_string(coverage.rows(), coverage.cols()) + " for " +
                     std::to_string(memory.cols()) + " memory columns");
  auto pre = add(memory_proj, add(matmul(w.att_ws, s), w.att_b));
  pre = add(pre, matmul(w.att_wc, coverage));
  auto a = softmax(matmul(w.att_v, tanh(pre)), 1);
  return {a, matmul(memory, transpose(a))};
}

/// P(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum of attention on source positions holding w.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> copy_distribution(Scalar p_gen, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& vocab,
                                                           const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& attention,
                                                           std::span<const int> source_ids, std::size_t extended_size) {
  if (static_cast<std::size_t>(vocab.size()) > extended_size)
    throw ShapeError("copy_distribution: extended vocabulary smaller than base");
  if (static_cast<std::size_t>(attention.size()) != source_ids.size())
    throw ShapeError("copy_distribution: attention and source lengths differ");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(
      static_cast<Eigen::Index>(extended_size));
  out.head(vocab.size()) = p_gen * vocab;
  for (std::size_t i = 0; i < source_ids.size(); ++i) {
    const int id = source_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= extended_size) throw ShapeError("copy_distribution: bad source id");
    out(id) += (Scalar(1) - p_gen) * attention(static_cast<Eigen::Index>(i));
  }
  return out;
}

template <typename Scalar>
struct StepResult {
  Var<Scalar> attention;  // 1 x N
  Var<Scalar> context;    // d x 1
  Var<Scalar> vocab;      // |V| x 1
  Var<Scalar> p_gen;      // 1 x 1
  Var<Scalar> covloss;    // 1 x 1, against the coverage before this step
  DecoderState<Scalar> next;

  /// Numeric distribution over the extended vocabulary.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> distribution(const DecoderContext<Scalar>& ctx) const {
    return copy_distribution<Scalar>(p_gen.value()(0, 0), vocab.value().col(0), attention.value().row(0),
                                     ctx.source_ids, ctx.extended_size);
  }
};

/// Fixed word vector of a decoder input; extended-only ids read as UNK.
template <typename Scalar>
Var<Scalar> embed_token(const DecoderContext<Scalar>& ctx, int id) {
  const int row = (id >= 0 && static_cast<std::size_t>(id) < ctx.vocab_size()) ? id : Vocabulary::kUnk;
  return ctx.memory.tape().constant(ctx.glove->row(row).transpose());
}

template <typename Scalar>
StepResult<Scalar> decode_step(const DecoderContext<Scalar>& ctx, const DecoderState<Scalar>& state, int y_prev) {
  const auto& w = ctx.w;
  auto x = embed_token(ctx, y_prev);
  auto lstm = lstm_cell(x, state.lstm, w.lstm);
  auto att = attention_step(lstm.h, ctx.memory, ctx.memory_proj, state.coverage, w);
  auto p_gen = sigmoid(add(add(matmul(w.pgen_h, att.context), matmul(w.pgen_s, lstm.h)),
                           add(matmul(w.pgen_x, x), w.pgen_b)));
  auto vocab = softmax(affine(w.out_w, vcat({lstm.h, att.context}), w.out_b), 0);
  auto covloss = sum(elementwise_min(att.attention, state.coverage));
  DecoderState<Scalar> next{lstm, add(state.coverage, att.attention), state.step + 1};
  return {att.attention, att.context, vocab, p_gen, covloss, next};
}

/// P(y) for one extended id, on the tape.
template <typename Scalar>
Var<Scalar> token_probability(const DecoderContext<Scalar>& ctx, const StepResult<Scalar>& step, int y) {
  auto& tape = ctx.memory.tape();
  const auto n = static_cast<Eigen::Index>(ctx.source_ids.size());
  Matrix<Scalar> indicator = Matrix<Scalar>::Zero(n, 1);
  bool copyable = false;
  for (Eigen::Index i = 0; i < n; ++i)
    if (ctx.source_ids[static_cast<std::size_t>(i)] == y) {
      indicator(i, 0) = 1;
      copyable = true;
    }
  const bool in_vocab = y >= 0 && static_cast<std::size_t>(y) < ctx.vocab_size();
  Var<Scalar> total;
  if (in_vocab) total = hadamard(step.p_gen, slice_rows(step.vocab, y, 1));
  if (copyable) {
    auto copy = hadamard(rsub(Scalar(1), step.p_gen), matmul(step.attention, tape.constant(std::move(indicator))));
    total = total.valid() ? add(total, copy) : copy;
  }
  if (!total.valid()) total = tape.constant(Matrix<Scalar>::Zero(1, 1));
  return total;
}

template <typename Scalar>
int argmax(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dist) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < dist.size(); ++i)
    if (dist(i) > dist(best)) best = i;
  return static_cast<int>(best);
}

/// Per-step terms of a decoded or teacher-forced sequence.
template <typename Scalar>
struct Rollout {
  std::vector<int> tokens;           // emitted ids; the last is EOS when the sequence finished
  std::vector<Var<Scalar>> log_probs;  // log P(token_t), floored
  std::vector<Var<Scalar>> covloss;
  std::size_t floored = 0;           // steps whose probability fell below the floor

  Var<Scalar> total_log_prob(Tape<Scalar>& tape) const {
    if (log_probs.empty()) return tape.constant(Matrix<Scalar>::Zero(1, 1));
    return sum(vcat(log_probs));
  }
};

template <typename Scalar>
void append_step(Rollout<Scalar>& r, const DecoderContext<Scalar>& ctx, const StepResult<Scalar>& step, int y) {
  auto p = token_probability(ctx, step, y);
  if (p.value()(0, 0) < kProbFloor) ++r.floored;
  r.tokens.push_back(y);
  r.log_probs.push_back(log(p, static_cast<Scalar>(kProbFloor)));
  r.covloss.push_back(step.covloss);
}

/// Scores `targets` (which should end in EOS). At each step after the first,
/// the gold previous token is fed with probability `forcing`, otherwise the
/// argmax of the previous step's distribution.
template <typename Scalar>
Rollout<Scalar> teacher_forced(const DecoderContext<Scalar>& ctx, DecoderState<Scalar> state,
                               std::span<const int> targets, double forcing, Rng& rng) {
  Rollout<Scalar> r;
  int prev = Vocabulary::kSos;
  for (int y : targets) {
    auto step = decode_step(ctx, state, prev);
    append_step(r, ctx, step, y);
    state = step.next;
    if (forcing >= 1 || rng.bernoulli(forcing)) prev = y;
    else prev = argmax<Scalar>(step.distribution(ctx));
  }
  return r;
}

enum class SampleMode { Greedy, Multinomial };

SampleMode parse_sample_mode(std::string_view s);

/// Decodes until EOS or `max_len` tokens; the tape records every log-probability.
template <typename Scalar>
Rollout<Scalar> sample_sequence(const DecoderContext<Scalar>& ctx, DecoderState<Scalar> state, SampleMode mode,
                                int max_len, Rng& rng) {
  Rollout<Scalar> r;
  int prev = Vocabulary::kSos;
  for (int t = 0; t < max_len; ++t) {
    auto step = decode_step(ctx, state, prev);
    const auto dist = step.distribution(ctx);
    const int y = mode == SampleMode::Greedy
                      ? argmax<Scalar>(dist)
                      : static_cast<int>(rng.categorical(std::span<const Scalar>(dist.data(), static_cast<std::size_t>(dist.size()))));
    append_step(r, ctx, step, y);
    state = step.next;
    prev = y;
    if (y == Vocabulary::kEos) break;
  }
  return r;
}

struct BeamResult {
  std::vector<int> tokens;  // includes the final EOS when one was emitted
  double log_prob = 0;
  double score = 0;         // log_prob / tokens.size()
};

/// Beam search over the extended vocabulary. Candidates are ranked by
/// accumulated log-probability (ties: earlier hypothesis, then lower id);
/// finished hypotheses are ranked by log-probability per emitted token.
template <typename Scalar>
BeamResult beam_search(const DecoderContext<Scalar>& ctx, const DecoderState<Scalar>& start, int width, int max_len) {
  if (width < 1) throw ConfigError("decode.beam_width must be at least 1");
  if (max_len < 1) throw ConfigError("decode.max_len must be at least 1");
  struct Hyp {
    std::vector<int> tokens;
    double log_prob = 0;
    DecoderState<Scalar> state;
  };
  struct Candidate {
    double log_prob;
    std::size_t hyp;
    int token;
  };
  std::vector<Hyp> live{Hyp{{}, 0.0, start}};
  std::vector<BeamResult> finished;
  auto finish = [&](std::vector<int> tokens, double lp) {
    const double len = static_cast<double>(std::max<std::size_t>(tokens.size(), 1));
    finished.push_back({std::move(tokens), lp, lp / len});
  };
  for (int t = 0; t < max_len && !live.empty() && finished.size() < static_cast<std::size_t>(width); ++t) {
    std::vector<Candidate> cands;
    std::vector<StepResult<Scalar>> steps;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const int prev = live[h].tokens.empty() ? Vocabulary::kSos : live[h].tokens.back();
      steps.push_back(decode_step(ctx, live[h].state, prev));
      const auto dist = steps.back().distribution(ctx);
      for (Eigen::Index y = 0; y < dist.size(); ++y) {
        const double p = std::max(static_cast<double>(dist(y)), kProbFloor);
        cands.push_back({live[h].log_prob + std::log(p), h, static_cast<int>(y)});
      }
    }
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(width) - finished.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<Hyp> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = cands[k];
      std::vector<int> tokens = live[c.hyp].tokens;
      tokens.push_back(c.token);
      if (c.token == Vocabulary::kEos) finish(std::move(tokens), c.log_prob);
      else next.push_back({std::move(tokens), c.log_prob, steps[c.hyp].next});
    }
    live = std::move(next);
  }
  for (auto& h : live) finish(std::move(h.tokens), h.log_prob);  // force-finished at max_len
  auto best = std::max_element(finished.begin(), finished.end(), [](const BeamResult& a, const BeamResult& b) {
    return a.score < b.score;
  });
  return *best;
}

}  // namespace g2s
