#include "g2sqg/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

namespace g2s {

namespace {

const std::set<std::string, std::less<>> kCommands = {"build-vocab", "train",      "finetune",     "generate",
                                                      "evaluate",    "gradcheck",  "hop-sweep",    "import-conllu"};

std::string require(const RunConfig& cfg, const char* key) {
  const auto& v = cfg.raw(key);
  if (v.empty()) throw UsageError(std::string("this command needs '") + key + "'");
  return v;
}

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + a + "'");
    std::string key = a.substr(2);
    std::string value;
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw UsageError("option --" + key + " needs a value");
      value = extras[++i];
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

FitOptions fit_options(const RunConfig& cfg, Stage stage, const std::filesystem::path& out) {
  FitOptions o;
  o.stage = stage;
  o.loss = loss_settings(cfg);
  o.batch_size = static_cast<int>(cfg.integer("train.batch_size"));
  o.max_epochs = static_cast<int>(cfg.integer("train.epochs"));
  o.max_len = static_cast<int>(cfg.integer("decode.max_len"));
  o.seed = derive_seed(cfg.seed(), stage == Stage::Pretrain ? "train" : "finetune");
  o.out_dir = out;
  return o;
}

std::vector<PassageExample> optional_dataset(const RunConfig& cfg, const char* key) {
  const auto& path = cfg.raw(key);
  if (path.empty()) return {};
  return load_dataset(path);
}

void validate_settings(const RunConfig& cfg, const std::string& command) {
  cfg.check_types();
  try {
    ModelConfig probe = model_settings(cfg);
    probe.vocab_size = 5;
    probe.pos_tags = probe.ner_tags = 1;
    probe.validate();
    loss_settings(cfg).validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (cfg.integer("vocab.max_size") < 5) throw UsageError("vocab.max_size must be at least 5");
  if (cfg.integer("train.batch_size") < 1) throw UsageError("train.batch_size must be at least 1");
  if (cfg.integer("train.epochs") < 0) throw UsageError("train.epochs must be nonnegative");
  if (cfg.integer("decode.beam_width") < 1) throw UsageError("decode.beam_width must be at least 1");
  if (cfg.integer("decode.max_len") < 1) throw UsageError("decode.max_len must be at least 1");
  if (cfg.real("gradcheck.step") <= 0 || cfg.real("gradcheck.tolerance") <= 0)
    throw UsageError("gradcheck.step and gradcheck.tolerance must be positive");
  if (cfg.integer("hopsweep.min") < 0 || cfg.integer("hopsweep.max") < cfg.integer("hopsweep.min"))
    throw UsageError("hop sweep range is empty or negative");

  if (command == "build-vocab" || command == "train" || command == "gradcheck" || command == "hop-sweep")
    require(cfg, "data.train");
  if (command == "finetune") {
    require(cfg, "data.train");
    require(cfg, "checkpoint");
  }
  if (command == "generate") {
    require(cfg, "data.test");
    require(cfg, "checkpoint");
  }
  if (command == "evaluate") {
    require(cfg, "data.test");
    require(cfg, "data.predictions");
  }
  if (command == "import-conllu") {
    require(cfg, "data.conllu");
    require(cfg, "data.alignment");
  }
}

EmbeddingBank make_bank(const RunConfig& cfg, const VocabBundle& vocab) {
  EmbeddingBank bank;
  const int dim = static_cast<int>(cfg.integer("model.word_dim"));
  const auto seed = derive_seed(cfg.seed(), "glove");
  const auto& glove = cfg.raw("data.glove");
  bank.glove = glove.empty() ? random_glove(vocab.words, dim, seed) : load_glove(glove, vocab.words, dim, seed);
  if (const auto& ctx = cfg.raw("data.context"); !ctx.empty()) {
    bank.context = load_context(ctx);
    if (!bank.context.empty()) bank.context_dim = static_cast<int>(bank.context.begin()->second.passage.rows());
  }
  return bank;
}

int run_build_vocab(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  const auto train = load_dataset(require(cfg, "data.train"));
  const auto vocab = VocabBundle::build(train, static_cast<std::size_t>(cfg.integer("vocab.max_size")));
  vocab.save(out / "vocab.json");
  os << "vocabulary: " << vocab.words.size() << " words, " << vocab.pos.size() << " POS tags, " << vocab.ner.size()
     << " NER tags\n";
  return kExitOk;
}

int run_train(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os, Stage stage) {
  const auto train = load_dataset(require(cfg, "data.train"));
  const auto valid = optional_dataset(cfg, "data.valid");
  std::vector<std::string> warnings;
  Model model = stage == Stage::Pretrain ? build_model(cfg, train) : load_model(cfg, &warnings);
  for (const auto& w : warnings) os << "warning: " << w << '\n';
  model.vocab.save(out / "vocab.json");
  const auto records = fit(model, train, valid, fit_options(cfg, stage, out));
  double best = 0;
  for (const auto& r : records) best = std::max(best, r.val_bleu4);
  os << stage_name(stage) << ": " << records.size() << " epochs, best validation BLEU-4 " << std::setprecision(4)
     << best << '\n';
  return kExitOk;
}

int run_generate(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  std::vector<std::string> warnings;
  const Model model = load_model(cfg, &warnings);
  for (const auto& w : warnings) os << "warning: " << w << '\n';
  const auto test = load_dataset(require(cfg, "data.test"));
  const int width = cfg.boolean("decode.greedy") ? 0 : static_cast<int>(cfg.integer("decode.beam_width"));
  const auto predictions = generate(model, test, width, static_cast<int>(cfg.integer("decode.max_len")));
  std::ofstream f(out / "predictions.jsonl");
  if (!f) throw Error("cannot write predictions in " + out.string());
  for (std::size_t i = 0; i < test.size(); ++i)
    f << nlohmann::json{{"id", test[i].id}, {"question_tokens", predictions[i]}}.dump() << '\n';
  os << "generated " << predictions.size() << " questions\n";
  return kExitOk;
}

int run_evaluate(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  const auto test = load_dataset(require(cfg, "data.test"));
  std::map<std::string, Tokens> predicted;
  std::ifstream in(require(cfg, "data.predictions"));
  if (!in) throw Error("cannot open predictions " + cfg.raw("data.predictions"));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      predicted[id] = j.at("question_tokens").get<Tokens>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<Tokens> candidates, references;
  double rouge = 0;
  for (const auto& ex : test) {
    auto it = predicted.find(ex.id);
    if (it == predicted.end()) throw ValidationError("no prediction for example '" + ex.id + "'");
    if (ex.question_tokens.empty()) throw ValidationError("example '" + ex.id + "' has no reference question");
    candidates.push_back(it->second);
    references.push_back(ex.question_tokens);
    rouge += rouge_l(it->second, ex.question_tokens);
  }
  nlohmann::json report{{"bleu4", corpus_bleu4(candidates, references)},
                        {"rouge_l", rouge / static_cast<double>(test.size())},
                        {"n", test.size()}};
  write_json(out / "metrics.json", report);
  os << report.dump() << '\n';
  return kExitOk;
}

int run_gradcheck(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  const auto train = load_dataset(require(cfg, "data.train"));
  const Model model = build_model(cfg, train);
  GradCheckOptions options;
  options.step = cfg.real("gradcheck.step");
  options.tolerance = cfg.real("gradcheck.tolerance");
  options.seed = derive_seed(cfg.seed(), "gradcheck");
  const auto report = check_model_gradients(model, train, loss_settings(cfg), options, true);
  write_json(out / "gradcheck.json", {{"max_rel_error", report.max_rel_error},
                                      {"checked", report.checked},
                                      {"skipped", report.skipped},
                                      {"worst_parameter", report.worst_name},
                                      {"worst_index", report.worst_index},
                                      {"worst_analytic", report.worst_analytic},
                                      {"worst_numeric", report.worst_numeric},
                                      {"tolerance", options.tolerance}});
  os << "max relative error " << std::scientific << std::setprecision(3) << report.max_rel_error << " over "
     << report.checked << " coordinates (" << report.skipped << " skipped at kinks)";
  if (!report.worst_name.empty()) os << ", worst " << report.worst_name << "[" << report.worst_index << "]";
  os << '\n' << std::defaultfloat;
  return report.passed(options.tolerance) ? kExitOk : kExitFailure;
}

int run_hop_sweep(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  const auto train = load_dataset(require(cfg, "data.train"));
  const auto valid = optional_dataset(cfg, "data.valid");
  std::ofstream table(out / "hop_sweep.tsv");
  if (!table) throw Error("cannot write hop sweep table in " + out.string());
  table << "hops\tval_bleu4\n";
  os << "hops  val_bleu4\n";
  for (auto hops = cfg.integer("hopsweep.min"); hops <= cfg.integer("hopsweep.max"); ++hops) {
    RunConfig run = cfg;
    run.set("gnn.hops", std::to_string(hops));
    Model model = build_model(run, train);
    auto options = fit_options(run, Stage::Pretrain, out / ("hops-" + std::to_string(hops)));
    double best = 0;
    for (const auto& r : fit(model, train, valid, options)) best = std::max(best, r.val_bleu4);
    table << hops << '\t' << best << '\n';
    os << std::setw(4) << hops << "  " << std::fixed << std::setprecision(4) << best << std::defaultfloat << '\n';
  }
  return kExitOk;
}

int run_import(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  std::ifstream conllu(require(cfg, "data.conllu"));
  std::ifstream alignment(require(cfg, "data.alignment"));
  if (!conllu || !alignment) throw Error("cannot open CoNLL-U or alignment input");
  const auto examples = import_conllu(conllu, alignment);
  save_dataset(out / "dataset.jsonl", examples);
  os << "imported " << examples.size() << " examples\n";
  return kExitOk;
}

void usage(std::ostream& err) {
  err << "usage: g2sqg <command> --config <path> [--key value ...] --out <dir>\n"
         "commands: build-vocab, train, finetune, generate, evaluate, gradcheck, hop-sweep, import-conllu\n";
}

}  // namespace

RunConfig resolve_config(const std::filesystem::path& config_file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!config_file.empty()) cfg.read_file(config_file);
  if (const char* env = std::getenv("G2SQG_SEED"); env && *env) cfg.set("seed", env);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  return cfg;
}

ModelConfig model_settings(const RunConfig& cfg) {
  ModelConfig m;
  m.word_dim = static_cast<int>(cfg.integer("model.word_dim"));
  m.hidden = static_cast<int>(cfg.integer("model.hidden"));
  m.use_dan = cfg.boolean("model.use_dan");
  try {
    m.graph = parse_graph_kind(cfg.raw("graph.kind"));
    m.direction_order = parse_direction_order(cfg.raw("gnn.direction_order"));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  m.knn_k = static_cast<int>(cfg.integer("knn.k"));
  m.hops = static_cast<int>(cfg.integer("gnn.hops"));
  m.dropout_embed = cfg.real("dropout.embed");
  m.dropout_rnn = cfg.real("dropout.rnn");
  return m;
}

LossConfig loss_settings(const RunConfig& cfg) {
  LossConfig l;
  l.lambda = cfg.real("loss.lambda");
  l.gamma = cfg.real("loss.gamma");
  l.alpha = cfg.real("loss.alpha");
  l.forcing_base = cfg.real("forcing.base");
  l.forcing_decay = cfg.real("forcing.decay");
  l.clip = cfg.real("optim.clip");
  l.lr_pretrain = cfg.real("optim.lr_pretrain");
  l.lr_finetune = cfg.real("optim.lr_finetune");
  l.plateau_factor = cfg.real("optim.plateau_factor");
  l.plateau_patience = static_cast<int>(cfg.integer("optim.plateau_patience"));
  l.early_stop = static_cast<int>(cfg.integer("optim.early_stop"));
  return l;
}

Model build_model(const RunConfig& cfg, std::span<const PassageExample> train) {
  Model model;
  const auto& vocab_path = cfg.raw("data.vocab");
  model.vocab = vocab_path.empty() ? VocabBundle::build(train, static_cast<std::size_t>(cfg.integer("vocab.max_size")))
                                   : VocabBundle::load(vocab_path);
  model.bank = make_bank(cfg, model.vocab);
  model.config = sized_config(model_settings(cfg), model.vocab, model.bank);
  model.params = init_parameters(model.config, derive_seed(cfg.seed(), "params"));
  model.config_hash = cfg.model_hash();
  return model;
}

Model load_model(const RunConfig& cfg, std::vector<std::string>* warnings) {
  const std::filesystem::path ckpt = require(cfg, "checkpoint");
  std::filesystem::path vocab_path = cfg.raw("data.vocab");
  if (vocab_path.empty()) vocab_path = ckpt.parent_path() / "vocab.json";
  Model model;
  model.vocab = VocabBundle::load(vocab_path);
  model.bank = make_bank(cfg, model.vocab);
  model.config = sized_config(model_settings(cfg), model.vocab, model.bank);
  model.config_hash = cfg.model_hash();
  model.restore(load_checkpoint(ckpt, model.config_hash, warnings));
  return model;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    usage(err);
    return kExitUsage;
  }
  CLI::App app{"Graph-to-sequence question generation"};
  std::string command, config_path, out_dir;
  app.add_option("command", command, "command to run")->required();
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--out", out_dir, "output directory");
  app.allow_extras();
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    usage(out);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    usage(err);
    return kExitUsage;
  }

  RunConfig cfg;
  try {
    if (!kCommands.contains(command)) throw UsageError("unknown command '" + command + "'");
    cfg = resolve_config(config_path, parse_overrides(app.remaining()));
    validate_settings(cfg, command);
    if (out_dir.empty()) throw UsageError("--out is required");
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    usage(err);
    return kExitUsage;
  }

  try {
    const std::filesystem::path out_path(out_dir);
    std::filesystem::create_directories(out_path);
    if (command == "build-vocab") return run_build_vocab(cfg, out_path, out);
    if (command == "train") return run_train(cfg, out_path, out, Stage::Pretrain);
    if (command == "finetune") return run_train(cfg, out_path, out, Stage::Finetune);
    if (command == "generate") return run_generate(cfg, out_path, out);
    if (command == "evaluate") return run_evaluate(cfg, out_path, out);
    if (command == "gradcheck") return run_gradcheck(cfg, out_path, out);
    if (command == "hop-sweep") return run_hop_sweep(cfg, out_path, out);
    return run_import(cfg, out_path, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace g2s
