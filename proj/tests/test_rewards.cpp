#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "g2sqg/rewards.hpp"
#include "support/examples.hpp"
#include "support/metric_fixtures.hpp"
#include "support/random_matrix.hpp"
#include "support/transport_oracle.hpp"

using namespace g2s;
using namespace g2s::testing;

namespace {

struct Embeddings {
  Vocabulary vocab;
  Matrix<float> vectors;

  Embeddings() {
    std::vector<PassageExample> ds;
    for (const auto& p : metric_pairs()) ds.push_back(make_example("m", p.candidate, p.reference));
    vocab = Vocabulary::build(ds, 1000);
    vectors = random_glove(vocab, 5, 17).vectors;
  }
  WordEmbedder embedder() const { return WordEmbedder(vocab, vectors); }
};

}  // namespace

TEST_CASE("BLEU-4") {
  for (const auto& p : metric_pairs()) {
    CAPTURE(p.candidate.size());
    CHECK(std::abs(bleu4(p.candidate, p.reference) - p.sentence_bleu) < 1e-9);
    CHECK(std::abs(bleu4(p.candidate, p.reference, BleuMode::Corpus) - p.corpus_bleu) < 1e-9);
    const std::vector<Tokens> c{p.candidate}, r{p.reference};
    CHECK(std::abs(corpus_bleu4(c, r) - p.corpus_bleu) < 1e-9);
  }
  SUBCASE("empty candidate scores 0, empty reference is an error") {
    CHECK(bleu4(Tokens{}, words("a b")) == 0.0);
    CHECK_THROWS_AS(bleu4(words("a"), Tokens{}), MetricError);
  }
  SUBCASE("corpus counts are pooled before the geometric mean") {
    std::vector<Tokens> c{words("a b c d e"), words("x y z w")}, r{words("a b c d f"), words("x y z w")};
    // matches 4+4, 3+3, 2+2, 1+1 over totals 5+4, 4+3, 3+2, 2+1
    const double expect = std::pow((8.0 / 9) * (6.0 / 7) * (4.0 / 5) * (2.0 / 3), 0.25);
    CHECK(std::abs(corpus_bleu4(c, r) - expect) < 1e-12);
  }
  SUBCASE("range and identity") {
    for (const auto& p : metric_pairs()) {
      for (auto mode : {BleuMode::Sentence, BleuMode::Corpus}) {
        const double b = bleu4(p.candidate, p.reference, mode);
        CHECK(b >= 0);
        CHECK(b <= 1 + 1e-15);
        if (mode == BleuMode::Corpus) CHECK((b == 1.0) == (p.candidate == p.reference));
      }
    }
  }
}

TEST_CASE("ROUGE-L") {
  CHECK(kRougeBeta == 1.2);
  for (const auto& p : metric_pairs()) {
    const double r = rouge_l(p.candidate, p.reference);
    CHECK(std::abs(r - p.rouge_l) < 1e-9);
    CHECK((r == 1.0) == (p.candidate == p.reference));
  }
  CHECK(lcs_length(words("a b c d"), words("a c d")) == 3);
  CHECK(lcs_length(words("a b a b"), words("b a b a")) == 3);
  CHECK(rouge_l(Tokens{}, words("a")) == 0.0);
}

TEST_CASE("transport") {
  Rng rng(3);
  SUBCASE("matches vertex enumeration on random instances") {
    for (int trial = 0; trial < 100; ++trial) {
      const int m = 1 + static_cast<int>(rng.next() % 4), n = 1 + static_cast<int>(rng.next() % 4);
      Eigen::VectorXd s = random_matrix(m, 1, rng, 0.05, 1), d = random_matrix(n, 1, rng, 0.05, 1);
      s /= s.sum();
      d /= d.sum();
      Eigen::MatrixXd cost = random_matrix(m, n, rng, 0, 3);
      CHECK(std::abs(transport_cost(s, d, cost) - brute_force_transport(s, d, cost)) < 1e-9);
    }
  }
  SUBCASE("unbalanced masses") {
    CHECK_THROWS_AS(transport_cost(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(3), Eigen::MatrixXd::Zero(2, 3)),
                    MetricError);
  }
}

TEST_CASE("word mover's distance") {
  Embeddings e;
  const auto embed = e.embedder();
  SUBCASE("identity and single words") {
    CHECK(wmd(words("a b c"), words("c b a"), embed) < 1e-12);
    const double direct = (embed("a") - embed("x")).norm();
    CHECK(std::abs(wmd(words("a"), words("x"), embed) - direct) < 1e-12);
    CHECK_THROWS_AS(wmd(Tokens{}, words("a"), embed), MetricError);
  }
  SUBCASE("fixture pairs against the brute-force oracle, both directions") {
    for (const auto& p : metric_pairs()) {
      const auto [cw, cm] = bag_of_words(p.candidate);
      const auto [rw, rm] = bag_of_words(p.reference);
      if (cw.size() > 4 || rw.size() > 4) continue;
      Eigen::MatrixXd cost(cm.size(), rm.size());
      for (std::size_t i = 0; i < cw.size(); ++i)
        for (std::size_t j = 0; j < rw.size(); ++j)
          cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (embed(cw[i]) - embed(rw[j])).norm();
      const double w = wmd(p.candidate, p.reference, embed);
      CHECK(std::abs(w - brute_force_transport(cm, rm, cost)) < 1e-6);
      CHECK(std::abs(w - wmd(p.reference, p.candidate, embed)) < 1e-9);
    }
  }
}

TEST_CASE("total reward") {
  Embeddings e;
  const auto embed = e.embedder();
  CHECK(kDefaultRewardAlpha == 0.1);
  SUBCASE("perfect candidate") {
    auto r = total_reward(words("a b c d"), words("a b c d"), embed);
    CHECK(r.total == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(r.f_sem == 1.0);
  }
  SUBCASE("components combine exactly") {
    for (const auto& p : metric_pairs()) {
      auto r = total_reward(p.candidate, p.reference, embed, 0.3);
      CHECK(r.total == r.bleu4 + 0.3 * r.f_sem);
      CHECK(r.f_sem == 1.0 / (1.0 + r.wmd));
      CHECK(r.f_sem > 0);
      CHECK(r.f_sem <= 1);
      CHECK(total_reward(p.candidate, p.reference, embed, 0.0).total == r.bleu4);
    }
    CHECK_THROWS_AS(total_reward(words("a"), words("a"), embed, -1), ConfigError);
  }
  SUBCASE("empty candidate is scored as one unknown word") {
    auto r = total_reward(Tokens{}, words("a b"), embed);
    CHECK(r.bleu4 == 0.0);
    CHECK(r.wmd == doctest::Approx(wmd(words("<unk>"), words("a b"), embed)));
  }
}
