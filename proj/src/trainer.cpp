#include "g2sqg/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "g2sqg/errors.hpp"

namespace g2s {

void LossConfig::validate() const {
  if (lambda < 0) throw ConfigError("loss.lambda must be nonnegative");
  if (gamma < 0 || gamma > 1) throw ConfigError("loss.gamma must lie in [0, 1]");
  if (alpha < 0) throw ConfigError("loss.alpha must be nonnegative");
  if (forcing_base < 0 || forcing_base > 1) throw ConfigError("forcing.base must lie in [0, 1]");
  if (forcing_decay <= 0 || forcing_decay > 1) throw ConfigError("forcing.decay must lie in (0, 1]");
  if (clip <= 0) throw ConfigError("optim.clip must be positive");
  if (lr_pretrain < 0 || lr_finetune < 0) throw ConfigError("learning rates must be nonnegative");
  if (plateau_factor <= 0 || plateau_factor > 1) throw ConfigError("optim.plateau_factor must lie in (0, 1]");
  if (plateau_patience < 1) throw ConfigError("optim.plateau_patience must be at least 1");
  if (early_stop < 1) throw ConfigError("optim.early_stop must be at least 1");
}

Stage parse_stage(std::string_view s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "finetune") return Stage::Finetune;
  throw ConfigError("stage must be pretrain or finetune, got '" + std::string(s) + "'");
}

std::string_view stage_name(Stage stage) { return stage == Stage::Pretrain ? "pretrain" : "finetune"; }

double teacher_forcing_prob(std::uint64_t step, const LossConfig& config) {
  return config.forcing_base * std::pow(config.forcing_decay, static_cast<double>(step));
}

double clip_global_norm(GradientStore<float>& grads, double clip) {
  double sq = 0;
  for (const auto& [_, g] : grads) sq += g.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > clip) {
    const auto factor = static_cast<float>(clip / norm);
    for (auto& [_, g] : grads) g *= factor;
  }
  return norm;
}

void adam_step(ParameterStore<float>& params, GradientStore<float> grads, OptimizerState& state, double lr,
               double clip) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ConfigError("gradient for unknown parameter '" + name + "'");
    const auto& p = params.at(name);
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeError("gradient shape mismatch for '" + name + "'");
  }
  clip_global_norm(grads, clip);
  const std::uint64_t t = state.step + 1;
  const double c1 = 1 - std::pow(OptimizerState::kBeta1, static_cast<double>(t));
  const double c2 = 1 - std::pow(OptimizerState::kBeta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    if (!state.first_moment.contains(name)) state.first_moment.add_zeros(name, p.rows(), p.cols());
    if (!state.second_moment.contains(name)) state.second_moment.add_zeros(name, p.rows(), p.cols());
    auto& m = state.first_moment.at(name);
    auto& v = state.second_moment.at(name);
    const bool has_grad = grads.contains(name);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grads.at(name).data()[i]) : 0.0;
      const double mi = OptimizerState::kBeta1 * m.data()[i] + (1 - OptimizerState::kBeta1) * g;
      const double vi = OptimizerState::kBeta2 * v.data()[i] + (1 - OptimizerState::kBeta2) * g * g;
      m.data()[i] = static_cast<float>(mi);
      v.data()[i] = static_cast<float>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + OptimizerState::kEpsilon);
      p.data()[i] = static_cast<float>(p.data()[i] - update);
    }
  }
  state.step = t;
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, int early_stop)
    : lr_(lr), factor_(factor), patience_(patience), early_stop_(early_stop),
      best_(-std::numeric_limits<double>::infinity()) {}

PlateauScheduler::Decision PlateauScheduler::observe(double score) {
  Decision d;
  if (score > best_) {
    best_ = score;
    stale_ = 0;
    since_reduction_ = 0;
    d.improved = true;
    return d;
  }
  ++stale_;
  ++since_reduction_;
  if (since_reduction_ >= patience_) {
    lr_ *= factor_;
    since_reduction_ = 0;
    d.reduced = true;
  }
  d.stop = stale_ >= early_stop_;
  return d;
}

Checkpoint Model::checkpoint() const { return {params, optimizer, bank.glove.vectors, config_hash}; }

void Model::restore(const Checkpoint& ck) {
  check_parameters(config, ck.params);
  if (ck.glove.rows() != bank.glove.vectors.rows() || ck.glove.cols() != bank.glove.vectors.cols())
    throw FormatError("checkpoint word vectors do not match the vocabulary");
  params = ck.params;
  optimizer = ck.optimizer;
  bank.glove.vectors = ck.glove;
  from_checkpoint = true;
}

ModelConfig sized_config(ModelConfig config, const VocabBundle& vocab, const EmbeddingBank& bank) {
  config.vocab_size = static_cast<int>(vocab.words.size());
  config.pos_tags = static_cast<int>(vocab.pos.size());
  config.ner_tags = static_cast<int>(vocab.ner.size());
  config.word_dim = bank.glove_dim();
  config.context_dim = bank.context_dim;
  config.validate();
  return config;
}

bool RlRecord::sign_holds() const {
  if (!(sample_log_prob < 0)) return true;
  auto sign = [](double x) { return (x > 0) - (x < 0); };
  return sign(loss) == sign(sample_reward - baseline_reward);
}

StepReport train_step(Model& model, std::span<const PassageExample> batch, Stage stage, const LossConfig& loss,
                      double lr, Rng& rng, int max_len) {
  const auto prepared = prepare_batch(batch, model.vocab, model.bank);
  const auto embed = model.embedder();
  const auto weight = 1.0f / static_cast<float>(prepared.size());
  GradientStore<float> grads;
  StepReport report;
  for (const auto& p : prepared) {
    if (p.target_ids.empty()) throw ValidationError("example '" + p.example->id + "' has no question to train on");
    Tape<float> tape;
    auto enc = encode(tape, model.params, model.bank.glove.vectors, model.config, p, true, rng);
    Var<float> objective;
    if (stage == Stage::Pretrain) {
      const double forcing = teacher_forcing_prob(model.optimizer.step, loss);
      auto r = teacher_forced(enc.decoder, enc.start(), p.target_ids, forcing, rng);
      objective = sequence_lm_loss(tape, r, loss.lambda);
      report.floored += r.floored;
      report.lm += objective.value()(0, 0) / static_cast<double>(prepared.size());
    } else {
      auto r = teacher_forced(enc.decoder, enc.start(), p.target_ids, 1.0, rng);
      auto lm = sequence_lm_loss(tape, r, loss.lambda);
      report.floored += r.floored;
      const auto greedy = sample_sequence(enc.decoder, enc.start(), SampleMode::Greedy, max_len, rng);
      const auto sample = sample_sequence(enc.decoder, enc.start(), SampleMode::Multinomial, max_len, rng);
      const auto& gold = p.example->question_tokens;
      RlRecord rec;
      rec.baseline_reward = total_reward(p.tokens(greedy.tokens), gold, embed, loss.alpha).total;
      rec.sample_reward = total_reward(p.tokens(sample.tokens), gold, embed, loss.alpha).total;
      auto log_prob = sample.total_log_prob(tape);
      rec.sample_log_prob = log_prob.value()(0, 0);
      rec.loss = (rec.baseline_reward - rec.sample_reward) * rec.sample_log_prob;
      auto rl = rl_loss(log_prob, rec.baseline_reward, rec.sample_reward);
      objective = mixed_loss(rl, lm, loss.gamma);
      report.lm += lm.value()(0, 0) / static_cast<double>(prepared.size());
      report.rl += rec.loss / static_cast<double>(prepared.size());
      report.rl_records.push_back(rec);
    }
    report.loss += objective.value()(0, 0) / static_cast<double>(prepared.size());
    tape.backward(objective);
    tape.accumulate_gradients(grads, weight);
  }
  adam_step(model.params, std::move(grads), model.optimizer, lr, loss.clip);
  return report;
}

namespace {

constexpr std::size_t kDecodeChunk = 32;

/// Decoded ids (EOS kept when emitted) for every example, in order.
template <typename Fn>
void for_each_decoded(const Model& model, std::span<const PassageExample> examples, int beam_width, int max_len,
                      Fn&& fn) {
  Rng unused(0);
  for (std::size_t start = 0; start < examples.size(); start += kDecodeChunk) {
    const auto chunk = examples.subspan(start, std::min(kDecodeChunk, examples.size() - start));
    const auto prepared = prepare_batch(chunk, model.vocab, model.bank);
    for (const auto& p : prepared) {
      Tape<float> tape;
      auto enc = encode(tape, model.params, model.bank.glove.vectors, model.config, p, false, unused);
      std::vector<int> ids;
      if (beam_width <= 0)
        ids = sample_sequence(enc.decoder, enc.start(), SampleMode::Greedy, max_len, unused).tokens;
      else
        ids = beam_search(enc.decoder, enc.start(), beam_width, max_len).tokens;
      fn(p, ids);
    }
  }
}

}  // namespace

std::vector<Tokens> generate(const Model& model, std::span<const PassageExample> examples, int beam_width,
                             int max_len) {
  std::vector<Tokens> out;
  for_each_decoded(model, examples, beam_width, max_len,
                   [&](const PreparedExample& p, const std::vector<int>& ids) { out.push_back(p.tokens(ids)); });
  return out;
}

DecodeEval evaluate_greedy(const Model& model, std::span<const PassageExample> examples, double alpha, int max_len) {
  if (examples.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  DecodeEval eval;
  const auto embed = model.embedder();
  std::vector<Tokens> refs;
  double correct_tokens = 0, gold_tokens = 0, exact = 0, reward = 0, rouge = 0;
  for_each_decoded(model, examples, 0, max_len, [&](const PreparedExample& p, const std::vector<int>& ids) {
    const auto& gold = p.example->question_tokens;
    if (gold.empty()) throw ValidationError("example '" + p.example->id + "' has no reference question");
    auto pred = p.tokens(ids);
    for (std::size_t t = 0; t < p.target_ids.size(); ++t)
      if (t < ids.size() && ids[t] == p.target_ids[t]) correct_tokens += 1;
    gold_tokens += static_cast<double>(p.target_ids.size());
    if (pred == gold) exact += 1;
    const auto r = total_reward(pred, gold, embed, alpha);
    reward += r.total;
    rouge += r.rouge_l;
    refs.push_back(gold);
    eval.predictions.push_back(std::move(pred));
  });
  const auto n = static_cast<double>(examples.size());
  eval.exact_match = exact / n;
  eval.token_accuracy = correct_tokens / gold_tokens;
  eval.corpus_bleu4 = corpus_bleu4(eval.predictions, refs);
  eval.mean_reward = reward / n;
  eval.mean_rouge_l = rouge / n;
  return eval;
}

std::string EpochRecord::to_json_line() const {
  nlohmann::json j{{"epoch", epoch}, {"train_loss", train_loss}, {"val_bleu4", val_bleu4}, {"lr", lr},
                   {"stage", stage_name(stage)}};
  return j.dump();
}

std::vector<EpochRecord> fit(Model& model, std::span<const PassageExample> train,
                             std::span<const PassageExample> validation, const FitOptions& options) {
  options.loss.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  if (options.batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (options.stage == Stage::Finetune && !model.from_checkpoint)
    throw ConfigError("fine-tuning needs a model loaded from a stage-1 checkpoint");
  const auto val = validation.empty() ? train : validation;
  const double lr0 = options.stage == Stage::Pretrain ? options.loss.lr_pretrain : options.loss.lr_finetune;
  PlateauScheduler scheduler(lr0, options.loss.plateau_factor, options.loss.plateau_patience, options.loss.early_stop);

  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log.open(*options.out_dir / "training.jsonl", std::ios::trunc);
    if (!log) throw ConfigError("cannot write training log in " + options.out_dir->string());
  }

  Rng rng(options.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochRecord> records;
  std::vector<PassageExample> batch;
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
    const double lr = scheduler.lr();
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(options.batch_size)); ++k)
        batch.push_back(train[order[k]]);
      const auto report = train_step(model, batch, options.stage, options.loss, lr, rng, options.max_len);
      loss_sum += report.loss;
      ++steps;
      if (options.on_step) options.on_step(report);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(steps);
    rec.lr = lr;
    rec.stage = options.stage;
    std::vector<Tokens> refs;
    for (const auto& ex : val) refs.push_back(ex.question_tokens);
    rec.val_bleu4 = corpus_bleu4(generate(model, val, 0, options.max_len), refs);
    const auto decision = scheduler.observe(rec.val_bleu4);
    if (decision.improved && options.out_dir) save_checkpoint(*options.out_dir / "best.ckpt", model.checkpoint());
    if (log) log << rec.to_json_line() << '\n' << std::flush;
    records.push_back(rec);
    if (options.on_epoch && !options.on_epoch(rec, model)) break;
    if (decision.stop) break;
  }
  if (options.out_dir) save_checkpoint(*options.out_dir / "last.ckpt", model.checkpoint());
  return records;
}

GradCheckReport check_model_gradients(const Model& model, std::span<const PassageExample> examples,
                                      const LossConfig& loss, const GradCheckOptions& options, bool training) {
  if (examples.empty()) throw ConfigError("gradient check needs at least one example");
  const auto prepared = prepare_batch(examples, model.vocab, model.bank);
  const Matrix<double> glove = model.bank.glove.vectors.cast<double>();
  auto objective = [&](Tape<double>& tape, const ParameterStore<double>& params) {
    Rng rng(options.seed);
    std::vector<Var<double>> terms;
    for (const auto& p : prepared) {
      if (p.target_ids.empty()) throw ValidationError("example '" + p.example->id + "' has no question");
      auto enc = encode(tape, params, glove, model.config, p, training, rng);
      auto r = teacher_forced(enc.decoder, enc.start(), p.target_ids, 1.0, rng);
      terms.push_back(sequence_lm_loss(tape, r, loss.lambda));
    }
    return scale(sum(vcat(terms)), 1.0 / static_cast<double>(terms.size()));
  };
  return grad_check(objective, model.params.cast<double>(), options);
}

}  // namespace g2s
