#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "g2sqg/decoder.hpp"
#include "g2sqg/gradcheck.hpp"
#include "support/random_matrix.hpp"

using namespace g2s;
using g2s::testing::random_matrix;
using Md = Matrix<double>;
using Vd = Eigen::Matrix<double, Eigen::Dynamic, 1>;
using Rd = Eigen::Matrix<double, 1, Eigen::Dynamic>;

namespace {

constexpr int kWord = 4, kHidden = 5, kVocab = 9;

struct Setup {
  ParameterStore<double> params;
  Md glove;
  Md memory;
  Md s0, c0;
  std::vector<int> source_ids;
  std::size_t extended = 0;
};

// Passage of 4 tokens: two in vocabulary (one repeated) and one extended-only.
Setup make_setup(std::uint64_t seed, double scale = 1.0) {
  Setup s;
  Rng rng(seed);
  ParameterStore<float> pf;
  add_decoder_parameters(pf, kWord, kHidden, kVocab, rng);
  s.params = pf.cast<double>();
  for (auto& [_, m] : s.params) m = random_matrix(m.rows(), m.cols(), rng, -scale, scale);
  s.glove = random_matrix(kVocab, kWord, rng);
  s.memory = random_matrix(kHidden, 4, rng);
  s.s0 = random_matrix(kHidden, 1, rng);
  s.c0 = random_matrix(kHidden, 1, rng);
  s.source_ids = {5, 6, 5, kVocab};
  s.extended = kVocab + 1;
  return s;
}

struct Live {
  Tape<double> tape;
  DecoderContext<double> ctx;
  DecoderState<double> start;

  explicit Live(const Setup& s) {
    ctx = make_decoder_context(tape, s.params, tape.constant(s.memory), s.glove, s.source_ids, s.extended);
    start = initial_state(tape.constant(s.s0), tape.constant(s.c0), s.memory.cols());
  }
};

}  // namespace

TEST_CASE("attention") {
  Rng rng(1);
  auto s = make_setup(1);
  Tape<double> t;
  auto w = DecoderWeights<double>::load(t, s.params);
  SUBCASE("equal memory columns give that column") {
    Md v = random_matrix(kHidden, 1, rng);
    auto mem = t.constant(Md(v.replicate(1, 4)));
    auto r = attention_step(t.constant(s.s0), mem, matmul(w.att_wh, mem), t.constant(random_matrix(1, 4, rng, 0, 1)), w);
    CHECK((r.context.value() - v).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("zero coverage matches coverage-free additive attention") {
    auto mem = t.constant(s.memory);
    auto r = attention_step(t.constant(s.s0), mem, matmul(w.att_wh, mem), t.constant(Md::Zero(1, 4)), w);
    Vd e(4);
    for (int i = 0; i < 4; ++i)
      e(i) = (s.params.at("att.v") *
              (s.params.at("att.Wh") * s.memory.col(i) + s.params.at("att.Ws") * s.s0 + s.params.at("att.b"))
                  .array()
                  .tanh()
                  .matrix())(0, 0);
    Vd a = e.array().exp() / e.array().exp().sum();
    CHECK((r.attention.value().transpose() - a).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((r.context.value() - s.memory * a).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("random attention rows sum to one") {
    for (int trial = 0; trial < 50; ++trial) {
      auto mem = t.constant(random_matrix(kHidden, 6, rng, -3, 3));
      auto r = attention_step(t.constant(random_matrix(kHidden, 1, rng)), mem, matmul(w.att_wh, mem),
                              t.constant(random_matrix(1, 6, rng, 0, 2)), w);
      CHECK(std::abs(r.attention.value().sum() - 1) < 1e-12);
    }
  }
  SUBCASE("coverage length is checked") {
    auto mem = t.constant(s.memory);
    CHECK_THROWS_AS(attention_step(t.constant(s.s0), mem, matmul(w.att_wh, mem), t.constant(Md::Zero(1, 3)), w),
                    ShapeError);
  }
}

TEST_CASE("copy distribution") {
  Vd vocab(4);
  vocab << 0.1, 0.2, 0.3, 0.4;
  Rd att(3);
  att << 0.2, 0.5, 0.3;
  const std::vector<int> src{4, 1, 4};
  SUBCASE("p_gen = 1 is the vocabulary distribution") {
    Vd out = copy_distribution<double>(1.0, vocab, att, src, 5);
    CHECK(out.head(4) == vocab);
    CHECK(out(4) == 0.0);
  }
  SUBCASE("p_gen = 0 sums attention over repeated tokens") {
    Vd out = copy_distribution<double>(0.0, vocab, att, src, 5);
    CHECK(out(4) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out(1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out(0) == 0.0);
  }
  SUBCASE("mixtures sum to one") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      Vd v = random_matrix(6, 1, rng, 0, 1);
      v /= v.sum();
      Rd a = random_matrix(1, 5, rng, 0, 1);
      a /= a.sum();
      std::vector<int> ids;
      for (int i = 0; i < 5; ++i) ids.push_back(static_cast<int>(rng.next() % 9));
      Vd out = copy_distribution<double>(rng.uniform(), v, a, ids, 9);
      CHECK(std::abs(out.sum() - 1) < 1e-12);
      CHECK(out.minCoeff() >= 0);
    }
  }
  SUBCASE("bad source id") { CHECK_THROWS_AS(copy_distribution<double>(0.5, vocab, att, std::vector<int>{0, 1, 7}, 5), ShapeError); }
}

TEST_CASE("decode_step") {
  auto s = make_setup(3);
  SUBCASE("coverage loss: zero first, one for repeated uniform attention") {
    auto flat = s;
    flat.params.at("att.v").setZero();
    Live live(flat);
    auto first = decode_step(live.ctx, live.start, Vocabulary::kSos);
    CHECK(first.covloss.value()(0, 0) == 0.0);
    auto second = decode_step(live.ctx, first.next, 5);
    CHECK(second.covloss.value()(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("coverage is the running sum and distributions are normalized") {
    Live live(s);
    auto state = live.start;
    Rd total = Rd::Zero(4);
    int prev = Vocabulary::kSos;
    for (int step = 0; step < 6; ++step) {
      auto r = decode_step(live.ctx, state, prev);
      CHECK((r.next.coverage.value() - (total + r.attention.value())).cwiseAbs().maxCoeff() < 1e-15);
      const double cov = r.covloss.value()(0, 0);
      CHECK(cov >= 0);
      CHECK(cov <= 1 + 1e-12);
      total += r.attention.value();
      Vd dist = r.distribution(live.ctx);
      CHECK(dist.size() == kVocab + 1);
      CHECK(std::abs(dist.sum() - 1) < 1e-6);
      CHECK(dist.minCoeff() >= 0);
      for (int y = 0; y < dist.size(); ++y)
        CHECK(token_probability(live.ctx, r, y).value()(0, 0) == doctest::Approx(dist(y)).epsilon(1e-12));
      state = r.next;
      prev = argmax<double>(dist);
    }
  }
  SUBCASE("extended-only inputs read the UNK row") {
    Live live(s);
    CHECK(embed_token(live.ctx, kVocab).value() == embed_token(live.ctx, Vocabulary::kUnk).value());
  }
  SUBCASE("two-step gradients") {
    ParameterStore<double> p = s.params;
    p.set("memory", s.memory);
    p.set("s0", s.s0);
    p.set("c0", s.c0);
    auto report = grad_check(
        [&](Tape<double>& t, const ParameterStore<double>& ps) {
          auto ctx = make_decoder_context(t, ps, t.parameter(ps, "memory"), s.glove, s.source_ids, s.extended);
          auto st = initial_state(t.parameter(ps, "s0"), t.parameter(ps, "c0"), 4);
          Rng rng(0);
          const std::vector<int> targets{5, kVocab, Vocabulary::kEos};
          auto r = teacher_forced(ctx, st, targets, 1.0, rng);
          return add(r.total_log_prob(t), scale(sum(vcat(r.covloss)), 0.4));
        },
        p);
    CHECK(report.checked > 0);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("sampling and rescoring") {
  CHECK(parse_sample_mode("greedy") == SampleMode::Greedy);
  CHECK(parse_sample_mode("multinomial") == SampleMode::Multinomial);
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    auto s = make_setup(seed, 2.0);
    Live live(s);
    Rng r1(seed), r2(seed);
    auto g1 = sample_sequence(live.ctx, live.start, SampleMode::Greedy, 8, r1);
    auto g2 = sample_sequence(live.ctx, live.start, SampleMode::Greedy, 8, r2);
    CHECK(g1.tokens == g2.tokens);
    Rng m1(seed), m2(seed);
    auto a = sample_sequence(live.ctx, live.start, SampleMode::Multinomial, 8, m1);
    auto b = sample_sequence(live.ctx, live.start, SampleMode::Multinomial, 8, m2);
    CHECK(a.tokens == b.tokens);
    Rng unused(0);
    auto again = teacher_forced(live.ctx, live.start, a.tokens, 1.0, unused);
    CHECK(std::abs(again.total_log_prob(live.tape).value()(0, 0) - a.total_log_prob(live.tape).value()(0, 0)) < 1e-6);
    CHECK(a.tokens.size() <= 8);
    if (a.tokens.size() < 8) CHECK(a.tokens.back() == Vocabulary::kEos);
  }
}

TEST_CASE("beam search") {
  CHECK(kDefaultBeamWidth == 5);
  CHECK(kDefaultMaxLen == 30);
  for (std::uint64_t seed = 30; seed < 50; ++seed) {
    auto s = make_setup(seed, 2.0);
    Live live(s);
    Rng rng(0);
    auto greedy = sample_sequence(live.ctx, live.start, SampleMode::Greedy, 7, rng);
    auto beam1 = beam_search(live.ctx, live.start, 1, 7);
    CHECK(beam1.tokens == greedy.tokens);
    CHECK(beam1.log_prob == doctest::Approx(greedy.total_log_prob(live.tape).value()(0, 0)).epsilon(1e-9));
    auto b5 = beam_search(live.ctx, live.start, 5, 7);
    auto b5again = beam_search(live.ctx, live.start, 5, 7);
    CHECK(b5.tokens == b5again.tokens);
    CHECK(b5.score == doctest::Approx(b5.log_prob / static_cast<double>(b5.tokens.size())));
    CHECK(b5.tokens.size() <= 7);
    // the reported log-probability is what teacher forcing assigns
    Rng unused(0);
    auto rescored = teacher_forced(live.ctx, live.start, b5.tokens, 1.0, unused);
    CHECK(std::abs(rescored.total_log_prob(live.tape).value()(0, 0) - b5.log_prob) < 1e-9);
  }
  SUBCASE("hypotheses are force-finished at max_len") {
    auto s = make_setup(5);
    s.params.at("out.b")(Vocabulary::kEos, 0) = -50;  // never emit EOS from the vocabulary
    Live live(s);
    auto r = beam_search(live.ctx, live.start, 3, 4);
    CHECK(r.tokens.size() == 4);
    CHECK(r.tokens.back() != Vocabulary::kEos);
  }
  SUBCASE("invalid width") {
    auto s = make_setup(6);
    Live live(s);
    CHECK_THROWS_AS(beam_search(live.ctx, live.start, 0, 4), ConfigError);
  }
}
