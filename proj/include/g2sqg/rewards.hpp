#pragma once

// Generation metrics and the sequence-level reward used for fine-tuning.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "g2sqg/corpus.hpp"

namespace g2s {

using Tokens = std::vector<std::string>;

enum class BleuMode { Sentence, Corpus };

struct NgramStats {
  std::array<double, 4> matches{};  // clipped
  std::array<double, 4> totals{};   // candidate n-grams
  double candidate_length = 0;
  double reference_length = 0;

  NgramStats& operator+=(const NgramStats& o);
};

NgramStats ngram_stats(std::span<const std::string> candidate, std::span<const std::string> reference);

/// Sentence mode: add-one smoothing on the 2..4-gram precisions.
double bleu4(std::span<const std::string> candidate, std::span<const std::string> reference,
             BleuMode mode = BleuMode::Sentence);

/// Unsmoothed BLEU-4 from counts pooled over all pairs.
double corpus_bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references);

inline constexpr double kRougeBeta = 1.2;

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference,
               double beta = kRougeBeta);

/// Fixed word vector lookup; tokens outside the vocabulary use the UNK row.
class WordEmbedder {
 public:
  WordEmbedder(const Vocabulary& vocab, const Matrix<float>& vectors) : vocab_(&vocab), vectors_(&vectors) {}
  Eigen::VectorXd operator()(const std::string& token) const;

 private:
  const Vocabulary* vocab_;
  const Matrix<float>* vectors_;
};

/// Minimum-cost transport between two discrete distributions. `cost` is
/// supply.size() x demand.size(); both masses must sum to the same total.
double transport_cost(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand, const Eigen::MatrixXd& cost);

/// Word mover's distance between normalized bags of words under Euclidean
/// ground distance. Throws MetricError on empty input.
double wmd(std::span<const std::string> candidate, std::span<const std::string> reference, const WordEmbedder& embed);

inline constexpr double kDefaultRewardAlpha = 0.1;

struct RewardReport {
  double bleu4 = 0;
  double rouge_l = 0;
  double wmd = 0;
  double f_sem = 0;
  double total = 0;
  double alpha = kDefaultRewardAlpha;
};

/// total = sentence BLEU-4 + alpha / (1 + WMD). An empty candidate is scored
/// as a single unknown word so the semantic term stays defined.
RewardReport total_reward(std::span<const std::string> candidate, std::span<const std::string> reference,
                          const WordEmbedder& embed, double alpha = kDefaultRewardAlpha);

}  // namespace g2s
