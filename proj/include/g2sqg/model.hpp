#pragma once

// The full graph-to-sequence model: embeddings, alignment encoder, passage
// graph, graph encoder, readout and decoder wiring.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "g2sqg/biggnn.hpp"
#include "g2sqg/corpus.hpp"
#include "g2sqg/dan.hpp"
#include "g2sqg/decoder.hpp"
#include "g2sqg/textgraph.hpp"

namespace g2s {

inline constexpr int kCaseDim = 3;
inline constexpr int kPosDim = 12;
inline constexpr int kNerDim = 8;

struct ModelConfig {
  int word_dim = 300;
  int context_dim = 0;
  int hidden = 300;
  int vocab_size = 0;
  int pos_tags = 0;
  int ner_tags = 0;
  GraphKind graph = GraphKind::Static;
  int knn_k = kDefaultNeighbours;
  int hops = kDefaultHops;
  DirectionOrder direction_order = DirectionOrder::IncomingFirst;
  bool use_dan = true;
  double dropout_embed = 0.4;
  double dropout_rnn = 0.3;

  DanDims dan_dims() const {
    return {word_dim, context_dim, kCaseDim + kPosDim + kNerDim, hidden, use_dan};
  }
  /// Rows of the word-level aligned passage matrix (input of the dynamic graph learner).
  int aligned_rows() const {
    const auto d = dan_dims();
    return use_dan ? d.passage_embed() + d.word : d.passage_embed();
  }
  void validate() const;
};

ParameterStore<float> init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Throws FormatError if `params` does not have exactly the tensors and
/// shapes `config` implies.
void check_parameters(const ModelConfig& config, const ParameterStore<float>& params);

/// An example with every id the model needs resolved.
struct PreparedExample {
  const PassageExample* example = nullptr;
  std::vector<int> passage_ids;  // base ids (UNK for OOV)
  std::vector<int> answer_ids;
  std::vector<int> case_ids, pos_ids, ner_ids;
  std::vector<int> source_ids;   // extended ids of passage tokens
  std::vector<int> target_ids;   // resolved question ids followed by EOS; empty without a question
  StaticGraph graph;
  const ContextPair* context = nullptr;
  std::shared_ptr<const BatchExtension> extension;

  std::size_t extended_size() const { return extension->vocab.size(); }
  /// Token strings for decoded ids, stopping at EOS.
  std::vector<std::string> tokens(std::span<const int> ids) const;
};

/// Question token id for the loss: base id, else the extended id of a
/// passage token, else UNK.
int resolve_target(std::string_view token, const PassageExample& example, const ExtendedVocab& vocab);

std::vector<PreparedExample> prepare_batch(std::span<const PassageExample> batch, const VocabBundle& vocab,
                                           const EmbeddingBank& bank);

template <typename Scalar>
struct Encoded {
  DanOutput<Scalar> dan;
  GraphOperator<Scalar> graph;
  Var<Scalar> adjacency;  // dynamic graphs only
  Var<Scalar> nodes;      // h^n, d x N
  Readout<Scalar> readout;
  DecoderContext<Scalar> decoder;

  DecoderState<Scalar> start() const { return initial_state(readout.s0, readout.c0, nodes.cols()); }
};

template <typename Scalar>
Var<Scalar> word_vectors(Tape<Scalar>& tape, const Matrix<Scalar>& glove, std::span<const int> ids) {
  Matrix<Scalar> m(glove.cols(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = glove.row(ids[i]).transpose();
  return tape.constant(std::move(m));
}

/// Runs the encoder and prepares the decoder for one example. `rng` drives
/// dropout and is untouched when `training` is false.
template <typename Scalar>
Encoded<Scalar> encode(Tape<Scalar>& tape, const ParameterStore<Scalar>& params, const Matrix<Scalar>& glove,
                       const ModelConfig& config, const PreparedExample& ex, bool training, Rng& rng) {
  if (glove.rows() != config.vocab_size || glove.cols() != config.word_dim)
    throw ShapeError("word vectors " + shape_string(glove.rows(), glove.cols()) + " do not match the model");
  DanInputs<Scalar> in;
  in.gp = word_vectors(tape, glove, ex.passage_ids);
  in.ga = word_vectors(tape, glove, ex.answer_ids);
  if (config.context_dim > 0) {
    if (!ex.context) throw ValidationError("example '" + ex.example->id + "': contextual embeddings required");
    in.bp = tape.constant(ex.context->passage.template cast<Scalar>());
    in.ba = tape.constant(ex.context->answer.template cast<Scalar>());
  }
  in.lp = vcat({transpose(gather_rows(tape.parameter(params, "emb.case"), std::span<const int>(ex.case_ids))),
                transpose(gather_rows(tape.parameter(params, "emb.pos"), std::span<const int>(ex.pos_ids))),
                transpose(gather_rows(tape.parameter(params, "emb.ner"), std::span<const int>(ex.ner_ids)))});
  const DanSettings settings{config.use_dan, config.dropout_embed, config.dropout_rnn, training};

  Encoded<Scalar> out;
  out.dan = dan_forward(in, params, settings, rng);
  if (config.graph == GraphKind::Static) {
    out.graph.incoming = tape.constant(mean_aggregation_matrix<Scalar>(ex.graph, true));
    out.graph.outgoing = tape.constant(mean_aggregation_matrix<Scalar>(ex.graph, false));
  } else {
    out.adjacency = dynamic_adjacency(out.dan.h_tilde, tape.parameter(params, "graph.U"));
    auto g = sparsify_normalize(out.adjacency, config.knn_k);
    out.graph.incoming = g.incoming;
    out.graph.outgoing = g.outgoing;
  }
  out.nodes = graph_encode(out.dan.x, out.graph, config.hops, params, config.direction_order);
  out.readout = graph_readout(out.nodes, params);
  out.decoder = make_decoder_context(tape, params, out.nodes, glove, ex.source_ids, ex.extended_size());
  return out;
}

}  // namespace g2s
