#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "g2sqg/cli.hpp"
#include "g2sqg/trainer.hpp"
#include "json.hpp"
#include "support/examples.hpp"
#include "support/random_matrix.hpp"

using namespace g2s;
using g2s::testing::data_path;
using g2s::testing::random_matrix;
using Md = Matrix<double>;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.set("model.word_dim", "6");
  cfg.set("model.hidden", "4");
  cfg.set("gnn.hops", "2");
  cfg.set("knn.k", "3");
  cfg.set("seed", "5");
  return cfg;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("g2sqg-trainer-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

double forward_loss(const Model& model, const PassageExample& ex, std::uint64_t seed, bool training) {
  const std::vector<PassageExample> one{ex};
  const auto prepared = prepare_batch(one, model.vocab, model.bank);
  Tape<float> tape;
  Rng rng(seed);
  auto enc = encode(tape, model.params, model.bank.glove.vectors, model.config, prepared[0], training, rng);
  auto r = teacher_forced(enc.decoder, enc.start(), prepared[0].target_ids, 1.0, rng);
  return sequence_lm_loss(tape, r, 0.4).value()(0, 0);
}

}  // namespace

TEST_CASE("defaults") {
  LossConfig c;
  CHECK(c.lambda == 0.4);
  CHECK(c.gamma == 0.99);
  CHECK(c.alpha == 0.1);
  CHECK(c.clip == 10);
  CHECK(c.lr_pretrain == 1e-3);
  CHECK(c.lr_finetune == 1e-5);
  CHECK(c.plateau_factor == 0.5);
  CHECK(c.plateau_patience == 3);
  CHECK(c.early_stop == 10);
  c.gamma = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("teacher forcing schedule") {
  CHECK(teacher_forcing_prob(0) == 0.75);
  const double expect = 0.75 * std::exp(10000 * std::log1p(-1e-4));
  CHECK(std::abs(teacher_forcing_prob(10000) - expect) < 1e-12);
  CHECK(std::abs(teacher_forcing_prob(10000) - 0.2759) < 5e-5);
  CHECK(teacher_forcing_prob(1000000) < 1e-40);
}

TEST_CASE("sequence losses") {
  Tape<double> t;
  SUBCASE("uniform over 8 words, two steps, no coverage term") {
    const int vocab = 8, word = 3, hidden = 2;
    Rng rng(1);
    ParameterStore<float> pf;
    add_decoder_parameters(pf, word, hidden, vocab, rng);
    auto p = pf.cast<double>();
    p.at("out.W").setZero();
    p.at("out.b").setZero();
    p.at("pgen.wh").setZero();
    p.at("pgen.ws").setZero();
    p.at("pgen.wx").setZero();
    p.at("pgen.b")(0, 0) = 60;  // p_gen rounds to exactly 1
    Md glove = random_matrix(vocab, word, rng);
    auto ctx = make_decoder_context(t, p, t.constant(random_matrix(hidden, 3, rng)), glove, {4, 5, 6}, vocab);
    auto start = initial_state(t.constant(Md::Zero(hidden, 1)), t.constant(Md::Zero(hidden, 1)), 3);
    Rng unused(0);
    const std::vector<int> targets{5, Vocabulary::kEos};
    auto r = teacher_forced(ctx, start, targets, 1.0, unused);
    CHECK(sequence_lm_loss(t, r, 0.0).value()(0, 0) == doctest::Approx(2 * std::log(8.0)).epsilon(1e-12));
    CHECK(sequence_lm_loss(t, r, 0.4).value()(0, 0) >= sequence_lm_loss(t, r, 0.0).value()(0, 0));
  }
  SUBCASE("a certain copy gives zero loss") {
    Rng rng(2);
    ParameterStore<float> pf;
    add_decoder_parameters(pf, 3, 2, 6, rng);
    auto p = pf.cast<double>();
    p.at("pgen.b")(0, 0) = -60;
    p.at("pgen.wh").setZero();
    p.at("pgen.ws").setZero();
    p.at("pgen.wx").setZero();
    Md glove = random_matrix(6, 3, rng);
    auto ctx = make_decoder_context(t, p, t.constant(random_matrix(2, 1, rng)), glove, {6}, 7);
    auto start = initial_state(t.constant(Md::Zero(2, 1)), t.constant(Md::Zero(2, 1)), 1);
    Rng unused(0);
    const std::vector<int> targets{6};
    auto r = teacher_forced(ctx, start, targets, 1.0, unused);
    CHECK(std::abs(sequence_lm_loss(t, r, 0.4).value()(0, 0)) < 1e-15);
  }
  SUBCASE("self-critical loss") {
    auto lp = t.variable(Md::Constant(1, 1, -10.0));
    auto loss = rl_loss(lp, 0.5, 0.7);
    CHECK(loss.value()(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(rl_loss(lp, 0.6, 0.6).value()(0, 0) == 0.0);
    t.backward(loss);
    CHECK(t.grad(lp)(0, 0) == doctest::Approx(-0.2).epsilon(1e-12));
    RlRecord rec{0.5, 0.7, -10, 2.0};
    CHECK(rec.sign_holds());
    RlRecord wrong{0.5, 0.7, -10, -2.0};
    CHECK_FALSE(wrong.sign_holds());
  }
  SUBCASE("mixed loss is a convex combination") {
    auto rl = t.constant(Md::Constant(1, 1, 3.0));
    auto lm = t.constant(Md::Constant(1, 1, 5.0));
    CHECK(mixed_loss(rl, lm, 0.0).value()(0, 0) == 5.0);
    CHECK(mixed_loss(rl, lm, 1.0).value()(0, 0) == 3.0);
    CHECK(mixed_loss(rl, lm, 0.99).value()(0, 0) == doctest::Approx(0.99 * 3 + 0.01 * 5).epsilon(1e-14));
    CHECK_THROWS_AS(mixed_loss(rl, lm, 1.1), ConfigError);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters alone") {
    ParameterStore<float> p;
    p.set("w", Matrix<float>::Constant(2, 2, 0.3f));
    auto before = p;
    GradientStore<float> g;
    g.set("w", Matrix<float>::Zero(2, 2));
    OptimizerState s;
    adam_step(p, g, s, 0.1, 10);
    CHECK(p == before);
    CHECK(s.step == 1);
  }
  SUBCASE("closed-form first step") {
    ParameterStore<float> p;
    p.set("w", Matrix<float>::Constant(1, 1, 1.0f));
    GradientStore<float> g;
    g.set("w", Matrix<float>::Constant(1, 1, 1.0f));
    OptimizerState s;
    adam_step(p, g, s, 0.1, 10);
    // m_hat = 1 and v_hat = 1 after bias correction
    CHECK(p.at("w")(0, 0) == static_cast<float>(1.0 - 0.1 / (1 + 1e-8)));
    CHECK(s.first_moment.at("w")(0, 0) == doctest::Approx(0.1));
    CHECK(s.second_moment.at("w")(0, 0) == doctest::Approx(0.001));
  }
  SUBCASE("clipping halves a norm-20 gradient") {
    GradientStore<float> g;
    g.set("a", Matrix<float>::Constant(1, 1, 12.0f));
    g.set("b", Matrix<float>::Constant(1, 1, 16.0f));
    CHECK(clip_global_norm(g, 10) == doctest::Approx(20.0));
    CHECK(g.at("a")(0, 0) == doctest::Approx(6.0));
    CHECK(g.at("b")(0, 0) == doctest::Approx(8.0));
  }
  SUBCASE("non-finite gradient aborts the step") {
    ParameterStore<float> p;
    p.set("w", Matrix<float>::Constant(1, 2, 1.0f));
    auto before = p;
    GradientStore<float> g;
    g.set("w", Matrix<float>::Constant(1, 2, std::numeric_limits<float>::infinity()));
    OptimizerState s;
    CHECK_THROWS_AS(adam_step(p, g, s, 0.1, 10), NumericError);
    CHECK(p == before);
    CHECK(s.step == 0);
    CHECK(s.first_moment.size() == 0);
  }
}

TEST_CASE("plateau scheduler") {
  SUBCASE("four equal scores reduce once, after the fourth") {
    PlateauScheduler s(1.0);
    std::vector<bool> reduced;
    for (int i = 0; i < 4; ++i) reduced.push_back(s.observe(10).reduced);
    CHECK(reduced == std::vector<bool>{false, false, false, true});
    CHECK(s.lr() == 0.5);
  }
  SUBCASE("improving scores never reduce or stop") {
    PlateauScheduler s(1.0);
    for (int i = 0; i < 30; ++i) {
      auto d = s.observe(i);
      CHECK(d.improved);
      CHECK_FALSE(d.reduced);
      CHECK_FALSE(d.stop);
    }
    CHECK(s.lr() == 1.0);
  }
  SUBCASE("ten stale epochs stop training") {
    PlateauScheduler s(1.0);
    s.observe(1);
    for (int i = 1; i < 10; ++i) CHECK_FALSE(s.observe(0.5).stop);
    CHECK(s.observe(0.5).stop);
    CHECK(s.stale_epochs() == 10);
    CHECK(s.lr() == 0.125);  // reductions after 3, 6 and 9 stale epochs
  }
}

TEST_CASE("checkpoints") {
  const auto ds = load_dataset(data_path("fixture/fixture.jsonl"));
  auto cfg = tiny_config();
  Model model = build_model(cfg, ds);
  Rng rng(1);
  train_step(model, ds, Stage::Pretrain, LossConfig{}, 1e-3, rng, 8);
  const auto dir = scratch("ckpt");
  const auto path = dir / "m.ckpt";
  save_checkpoint(path, model.checkpoint());
  SUBCASE("roundtrip is bitwise and reproduces the forward pass") {
    auto ck = load_checkpoint(path, model.config_hash);
    CHECK(ck.params == model.params);
    CHECK(ck.optimizer.first_moment == model.optimizer.first_moment);
    CHECK(ck.optimizer.second_moment == model.optimizer.second_moment);
    CHECK(ck.optimizer.step == model.optimizer.step);
    CHECK(ck.glove == model.bank.glove.vectors);
    CHECK(ck.config_hash == model.config_hash);
    Model resumed = build_model(cfg, ds);
    resumed.restore(ck);
    for (const auto& ex : ds) CHECK(forward_loss(resumed, ex, 3, true) == forward_loss(model, ex, 3, true));
  }
  SUBCASE("large step counters survive") {
    auto ck = model.checkpoint();
    ck.optimizer.step = 0x0123456789abcdefULL;
    save_checkpoint(dir / "big.ckpt", ck);
    CHECK(load_checkpoint(dir / "big.ckpt").optimizer.step == 0x0123456789abcdefULL);
  }
  SUBCASE("configuration hash mismatch only warns") {
    std::vector<std::string> warnings;
    auto ck = load_checkpoint(path, model.config_hash + 1, &warnings);
    CHECK(warnings.size() == 1);
    CHECK(ck.params == model.params);
  }
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto read_bytes = [](const std::string& b) {
    std::istringstream s(b);
    return read_container(s);
  };
  SUBCASE("corruption is detected") {
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(read_bytes(bad_magic), IntegrityError);
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(read_bytes(flipped), IntegrityError);
    CHECK_THROWS_AS(read_bytes(bytes.substr(0, bytes.size() - 9)), IntegrityError);
    auto version = bytes;
    version[5] = 9;
    CHECK_THROWS_AS(read_bytes(version), FormatError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("training loop") {
  const auto ds = load_dataset(data_path("fixture/fixture.jsonl"));
  auto cfg = tiny_config();
  SUBCASE("an epoch at learning rate zero changes nothing") {
    Model model = build_model(cfg, ds);
    const auto before = model.params;
    const auto glove = model.bank.glove.vectors;
    FitOptions o;
    o.loss.lr_pretrain = 0;
    o.batch_size = 1;
    o.max_epochs = 1;
    o.max_len = 8;
    fit(model, ds, {}, o);
    CHECK(model.params == before);
    CHECK(model.bank.glove.vectors == glove);
    CHECK(model.optimizer.step == 2);
  }
  SUBCASE("word vectors never move") {
    Model model = build_model(cfg, ds);
    const auto glove = model.bank.glove.vectors;
    const auto before = model.params;
    Rng rng(0);
    for (int i = 0; i < 3; ++i) train_step(model, ds, Stage::Pretrain, LossConfig{}, 1e-2, rng, 8);
    CHECK(model.bank.glove.vectors == glove);
    CHECK_FALSE(model.params == before);
  }
  SUBCASE("exact teacher forcing gives the same loss under any seed") {
    Model model = build_model(cfg, ds);
    for (const auto& ex : ds) CHECK(forward_loss(model, ex, 1, false) == forward_loss(model, ex, 987, false));
  }
  SUBCASE("log and checkpoints are written") {
    Model model = build_model(cfg, ds);
    const auto dir = scratch("fit");
    FitOptions o;
    o.batch_size = 2;
    o.max_epochs = 2;
    o.max_len = 8;
    o.out_dir = dir;
    auto records = fit(model, ds, {}, o);
    CHECK(records.size() == 2);
    CHECK(std::filesystem::exists(dir / "best.ckpt"));
    CHECK(std::filesystem::exists(dir / "last.ckpt"));
    std::ifstream log(dir / "training.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      auto j = nlohmann::json::parse(line);
      for (const char* key : {"epoch", "train_loss", "val_bleu4", "lr", "stage"}) CHECK(j.contains(key));
      CHECK(j["stage"] == "pretrain");
      ++lines;
    }
    CHECK(lines == 2);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("fine-tuning needs a checkpoint and logs the sign property") {
    Model model = build_model(cfg, ds);
    FitOptions o;
    o.stage = Stage::Finetune;
    o.max_epochs = 1;
    CHECK_THROWS_AS(fit(model, ds, {}, o), ConfigError);
    model.restore(model.checkpoint());
    o.max_len = 8;
    std::vector<RlRecord> seen;
    o.on_step = [&](const StepReport& r) { seen.insert(seen.end(), r.rl_records.begin(), r.rl_records.end()); };
    fit(model, ds, {}, o);
    CHECK(seen.size() == ds.size());
    for (const auto& r : seen) CHECK(r.sign_holds());
  }
  SUBCASE("empty training set") {
    Model model = build_model(cfg, ds);
    CHECK_THROWS_AS(fit(model, std::vector<PassageExample>{}, {}, FitOptions{}), ConfigError);
  }
}
