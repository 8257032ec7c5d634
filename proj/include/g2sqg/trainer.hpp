#pragma once

// Losses, optimizer, schedules and the two-stage training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "g2sqg/checkpoint.hpp"
#include "g2sqg/gradcheck.hpp"
#include "g2sqg/model.hpp"
#include "g2sqg/rewards.hpp"

namespace g2s {

struct LossConfig {
  double lambda = 0.4;   // coverage loss weight
  double gamma = 0.99;   // weight of the RL loss in the mixed objective
  double alpha = kDefaultRewardAlpha;
  double forcing_base = 0.75;
  double forcing_decay = 0.9999;
  double clip = 10;
  double lr_pretrain = 1e-3;
  double lr_finetune = 1e-5;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  int early_stop = 10;

  void validate() const;
};

enum class Stage { Pretrain, Finetune };
Stage parse_stage(std::string_view s);
std::string_view stage_name(Stage stage);

/// base * decay^step.
double teacher_forcing_prob(std::uint64_t step, const LossConfig& config = {});

/// Sum over steps of -log P(y_t) + lambda * covloss_t.
template <typename Scalar>
Var<Scalar> sequence_lm_loss(Tape<Scalar>& tape, const Rollout<Scalar>& r, double lambda) {
  auto nll = scale(r.total_log_prob(tape), Scalar(-1));
  if (lambda == 0 || r.covloss.empty()) return nll;
  return add(nll, scale(sum(vcat(r.covloss)), static_cast<Scalar>(lambda)));
}

/// (r_baseline - r_sample) * sum_t log P(y^s_t); the rewards are constants.
template <typename Scalar>
Var<Scalar> rl_loss(const Var<Scalar>& sample_log_prob, double baseline_reward, double sample_reward) {
  return scale(sample_log_prob, static_cast<Scalar>(baseline_reward - sample_reward));
}

template <typename Scalar>
Var<Scalar> mixed_loss(const Var<Scalar>& rl, const Var<Scalar>& lm, double gamma) {
  if (gamma < 0 || gamma > 1) throw ConfigError("loss.gamma must lie in [0, 1]");
  if (gamma == 1) return rl;
  if (gamma == 0) return lm;
  return add(scale(rl, static_cast<Scalar>(gamma)), scale(lm, static_cast<Scalar>(1 - gamma)));
}

/// Rescales `grads` in place so their global L2 norm is at most `clip`;
/// returns the norm before clipping.
double clip_global_norm(GradientStore<float>& grads, double clip);

/// Global-norm clipping followed by one bias-corrected Adam update. Throws
/// NumericError (leaving everything untouched) on a non-finite gradient.
void adam_step(ParameterStore<float>& params, GradientStore<float> grads, OptimizerState& state, double lr,
               double clip);

/// Learning-rate reduction on plateau plus early stopping, driven by a
/// validation score where larger is better.
class PlateauScheduler {
 public:
  struct Decision {
    bool improved = false;
    bool reduced = false;
    bool stop = false;
  };

  PlateauScheduler(double lr, double factor = 0.5, int patience = 3, int early_stop = 10);
  Decision observe(double score);
  double lr() const { return lr_; }
  int stale_epochs() const { return stale_; }
  double best() const { return best_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  int early_stop_;
  double best_;
  int stale_ = 0;
  int since_reduction_ = 0;
};

/// Everything needed to run the model on new data.
struct Model {
  ModelConfig config;
  VocabBundle vocab;
  EmbeddingBank bank;
  ParameterStore<float> params;
  OptimizerState optimizer;
  std::uint64_t config_hash = 0;
  bool from_checkpoint = false;

  WordEmbedder embedder() const { return WordEmbedder(vocab.words, bank.glove.vectors); }
  Checkpoint checkpoint() const;
  /// Replaces parameters, optimizer state and word vectors from `ck`.
  void restore(const Checkpoint& ck);
};

/// Vocabulary-sized model configuration with the given settings applied.
ModelConfig sized_config(ModelConfig config, const VocabBundle& vocab, const EmbeddingBank& bank);

struct RlRecord {
  double baseline_reward = 0;
  double sample_reward = 0;
  double sample_log_prob = 0;
  double loss = 0;  // (baseline - sample) * log prob

  /// sign(loss) == sign(sample - baseline) whenever log prob < 0.
  bool sign_holds() const;
};

struct StepReport {
  double loss = 0;  // batch mean of the optimized objective
  double lm = 0;
  double rl = 0;
  std::size_t floored = 0;
  std::vector<RlRecord> rl_records;
};

/// One optimizer step on a batch. Stage 1 uses scheduled teacher forcing;
/// stage 2 mixes the self-critical loss with the exactly teacher-forced LM loss.
StepReport train_step(Model& model, std::span<const PassageExample> batch, Stage stage, const LossConfig& loss,
                      double lr, Rng& rng, int max_len = kDefaultMaxLen);

/// Greedy (width 0) or beam decoding; returns tokens without EOS.
std::vector<Tokens> generate(const Model& model, std::span<const PassageExample> examples, int beam_width,
                             int max_len = kDefaultMaxLen);

struct DecodeEval {
  double exact_match = 0;
  double token_accuracy = 0;  // position-wise matches over gold length (EOS included)
  double corpus_bleu4 = 0;
  double mean_reward = 0;     // mean sentence-level total reward
  double mean_rouge_l = 0;
  std::vector<Tokens> predictions;
};

DecodeEval evaluate_greedy(const Model& model, std::span<const PassageExample> examples, double alpha,
                           int max_len = kDefaultMaxLen);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_bleu4 = 0;
  double lr = 0;
  Stage stage = Stage::Pretrain;

  std::string to_json_line() const;
};

struct FitOptions {
  Stage stage = Stage::Pretrain;
  LossConfig loss;
  int batch_size = 8;
  int max_epochs = 100;
  int max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;
  /// When set, receives training.jsonl, best.ckpt and last.ckpt.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every epoch; returning false ends training.
  std::function<bool(const EpochRecord&, const Model&)> on_epoch;
  /// Called after every optimizer step.
  std::function<void(const StepReport&)> on_step;
};

/// Epoch loop with shuffling, per-epoch validation corpus BLEU-4 on greedy
/// decodes, plateau learning-rate reduction and early stopping.
std::vector<EpochRecord> fit(Model& model, std::span<const PassageExample> train,
                             std::span<const PassageExample> validation, const FitOptions& options);

/// Finite-difference check of the stage-1 loss (exact teacher forcing, batch
/// mean) in 64-bit arithmetic. With `training`, dropout masks are redrawn from
/// the same seed on every evaluation.
GradCheckReport check_model_gradients(const Model& model, std::span<const PassageExample> examples,
                                      const LossConfig& loss, const GradCheckOptions& options, bool training);

}  // namespace g2s
