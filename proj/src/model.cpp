#include "g2sqg/model.hpp"

#include <algorithm>

#include "g2sqg/errors.hpp"

namespace g2s {

void ModelConfig::validate() const {
  if (word_dim < 1) throw ConfigError("model.word_dim must be positive");
  if (context_dim < 0) throw ConfigError("model.context_dim must be nonnegative");
  if (hidden < 2 || hidden % 2 != 0) throw ConfigError("model.hidden must be a positive even number");
  if (vocab_size < 5) throw ConfigError("vocabulary is too small");
  if (pos_tags < 1 || ner_tags < 1) throw ConfigError("tag sets must be nonempty");
  if (knn_k < 1) throw ConfigError("knn.k must be at least 1");
  if (hops < 0) throw ConfigError("gnn.hops must be nonnegative");
  if (dropout_embed < 0 || dropout_embed >= 1) throw ConfigError("dropout.embed must lie in [0, 1)");
  if (dropout_rnn < 0 || dropout_rnn >= 1) throw ConfigError("dropout.rnn must lie in [0, 1)");
}

ParameterStore<float> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParameterStore<float> store;
  store.add_uniform("emb.case", kCaseClasses, kCaseDim, 0.1, rng);
  store.add_uniform("emb.pos", config.pos_tags, kPosDim, 0.1, rng);
  store.add_uniform("emb.ner", config.ner_tags, kNerDim, 0.1, rng);
  add_dan_parameters(store, config.dan_dims(), rng);
  if (config.graph == GraphKind::Dynamic) store.add_weight("graph.U", config.hidden, config.aligned_rows(), rng);
  add_biggnn_parameters(store, config.hidden, rng);
  add_decoder_parameters(store, config.word_dim, config.hidden, config.vocab_size, rng);
  return store;
}

void check_parameters(const ModelConfig& config, const ParameterStore<float>& params) {
  const auto expected = init_parameters(config, 0);
  for (const auto& [name, m] : expected) {
    if (!params.contains(name)) throw FormatError("checkpoint lacks parameter '" + name + "'");
    const auto& got = params.at(name);
    if (got.rows() != m.rows() || got.cols() != m.cols())
      throw FormatError("parameter '" + name + "' is " + shape_string(got.rows(), got.cols()) + ", model expects " +
                        shape_string(m.rows(), m.cols()));
  }
  if (params.size() != expected.size()) throw FormatError("checkpoint has parameters the model does not use");
}

std::vector<std::string> PreparedExample::tokens(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    out.push_back(extension->vocab.token(id));
  }
  return out;
}

int resolve_target(std::string_view token, const PassageExample& example, const ExtendedVocab& vocab) {
  const auto& base = vocab.base();
  if (base.contains(token)) return base.id(token);
  const bool in_passage =
      std::find(example.passage_tokens.begin(), example.passage_tokens.end(), token) != example.passage_tokens.end();
  if (in_passage) {
    if (auto ext = vocab.extended_id(token)) return *ext;
  }
  return Vocabulary::kUnk;
}

std::vector<PreparedExample> prepare_batch(std::span<const PassageExample> batch, const VocabBundle& vocab,
                                           const EmbeddingBank& bank) {
  if (batch.empty()) throw EmptyInputError("prepare_batch: empty batch");
  auto ext = std::make_shared<const BatchExtension>(extend_vocab(batch, vocab.words));
  std::vector<PreparedExample> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    PreparedExample p;
    p.example = &ex;
    for (const auto& t : ex.passage_tokens) p.passage_ids.push_back(vocab.words.id(t));
    for (const auto& t : ex.answer_tokens) p.answer_ids.push_back(vocab.words.id(t));
    for (const auto& t : ex.passage_tokens) p.case_ids.push_back(static_cast<int>(case_class(t)));
    for (const auto& t : ex.pos) p.pos_ids.push_back(vocab.pos.id(t));
    for (const auto& t : ex.ner) p.ner_ids.push_back(vocab.ner.id(t));
    p.source_ids = ext->passage_ids[b];
    if (!ex.question_tokens.empty()) {
      for (const auto& t : ex.question_tokens) p.target_ids.push_back(resolve_target(t, ex, ext->vocab));
      p.target_ids.push_back(Vocabulary::kEos);
    }
    p.graph = build_static_graph(ex);
    p.context = bank.context_for(ex);
    p.extension = ext;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace g2s
