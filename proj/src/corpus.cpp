#include "g2sqg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "g2sqg/checkpoint.hpp"
#include "g2sqg/errors.hpp"
#include "g2sqg/random.hpp"

namespace g2s {

CaseClass case_class(std::string_view token) {
  bool first_upper = false;
  bool rest_upper = false;
  for (std::size_t i = 0; i < token.size(); ++i) {
    const bool upper = std::isupper(static_cast<unsigned char>(token[i])) != 0;
    if (i == 0) first_upper = upper;
    else rest_upper = rest_upper || upper;
  }
  if (!first_upper && !rest_upper) return CaseClass::Lower;
  if (first_upper && !rest_upper) return CaseClass::Capitalized;
  return CaseClass::Other;
}

namespace {

[[noreturn]] void invalid(const PassageExample& ex, const std::string& field, const std::string& what) {
  throw ValidationError("example '" + ex.id + "': field '" + field + "' " + what);
}

}  // namespace

void validate(const PassageExample& ex) {
  const auto n = static_cast<int>(ex.passage_tokens.size());
  if (n < 1) invalid(ex, "passage_tokens", "is empty");
  if (ex.answer_tokens.empty()) invalid(ex, "answer_tokens", "is empty");
  if (static_cast<int>(ex.pos.size()) != n) invalid(ex, "pos", "length differs from passage length");
  if (static_cast<int>(ex.ner.size()) != n) invalid(ex, "ner", "length differs from passage length");
  if (static_cast<int>(ex.dep_head.size()) != n) invalid(ex, "dep_head", "length differs from passage length");
  if (ex.sent_bounds.empty()) invalid(ex, "sent_bounds", "is empty");
  int cursor = 0;
  for (const auto& [begin, end] : ex.sent_bounds) {
    if (begin != cursor) invalid(ex, "sent_bounds", "has a gap or overlap at token " + std::to_string(cursor));
    if (end <= begin) invalid(ex, "sent_bounds", "has an empty or reversed range");
    cursor = end;
  }
  if (cursor != n) invalid(ex, "sent_bounds", "does not end at the passage length");
  for (const auto& [begin, end] : ex.sent_bounds) {
    for (int i = begin; i < end; ++i) {
      const int h = ex.dep_head[static_cast<std::size_t>(i)];
      if (h == -1) continue;
      if (h < begin || h >= end || h == i)
        invalid(ex, "dep_head", "entry " + std::to_string(i) + " points outside its sentence");
    }
  }
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'");
  return j.at(key).get<T>();
}

}  // namespace

PassageExample example_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("expected a JSON object");
  PassageExample ex;
  try {
    ex.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    ex.passage_tokens = field<std::vector<std::string>>(j, "passage_tokens");
    ex.answer_tokens = field<std::vector<std::string>>(j, "answer_tokens");
    if (j.contains("question_tokens") && !j.at("question_tokens").is_null())
      ex.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
    ex.pos = field<std::vector<std::string>>(j, "pos");
    ex.ner = field<std::vector<std::string>>(j, "ner");
    ex.dep_head = field<std::vector<int>>(j, "dep_head");
    for (const auto& b : field<std::vector<std::vector<int>>>(j, "sent_bounds")) {
      if (b.size() != 2) throw ParseError("sent_bounds entries must be [begin, end] pairs");
      ex.sent_bounds.emplace_back(b[0], b[1]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
  for (const auto& t : ex.passage_tokens) ex.case_classes.push_back(case_class(t));
  return ex;
}

nlohmann::json example_to_json(const PassageExample& ex) {
  nlohmann::json j;
  j["id"] = ex.id;
  j["passage_tokens"] = ex.passage_tokens;
  j["answer_tokens"] = ex.answer_tokens;
  if (!ex.question_tokens.empty()) j["question_tokens"] = ex.question_tokens;
  j["pos"] = ex.pos;
  j["ner"] = ex.ner;
  j["dep_head"] = ex.dep_head;
  nlohmann::json bounds = nlohmann::json::array();
  for (const auto& [b, e] : ex.sent_bounds) bounds.push_back({b, e});
  j["sent_bounds"] = bounds;
  return j;
}

std::vector<PassageExample> read_dataset(std::istream& in) {
  std::vector<PassageExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    PassageExample ex;
    try {
      ex = example_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    validate(ex);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<PassageExample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  return read_dataset(in);
}

void save_dataset(const std::filesystem::path& path, std::span<const PassageExample> examples) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>(kSpecials.begin(), kSpecials.end())) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kSpecials.size()) throw FormatError("vocabulary lacks the special tokens");
  for (std::size_t i = 0; i < kSpecials.size(); ++i)
    if (tokens_[i] != kSpecials[i]) throw FormatError("vocabulary special token " + std::to_string(i) + " is wrong");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
}

Vocabulary Vocabulary::build(std::span<const PassageExample> dataset, std::size_t max_size) {
  if (max_size < 5) throw ConfigError("vocab.max_size must be at least 5");
  if (dataset.empty()) throw ConfigError("cannot build a vocabulary from an empty dataset");
  struct Count {
    std::size_t freq = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Count> counts;
  std::vector<std::string> order;
  auto see = [&](const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) {
      if (std::find(kSpecials.begin(), kSpecials.end(), t) != kSpecials.end()) continue;
      auto [it, fresh] = counts.try_emplace(t, Count{0, order.size()});
      if (fresh) order.push_back(t);
      ++it->second.freq;
    }
  };
  for (const auto& ex : dataset) {
    see(ex.passage_tokens);
    see(ex.answer_tokens);
    see(ex.question_tokens);
  }
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return counts[a].freq > counts[b].freq;
  });
  std::vector<std::string> tokens(kSpecials.begin(), kSpecials.end());
  for (const auto& t : order) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(t);
  }
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ShapeError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

TagSet::TagSet() : TagSet(std::vector<std::string>{std::string(kUnknown)}) {}

TagSet::TagSet(std::vector<std::string> tags) : tags_(std::move(tags)) {
  if (tags_.empty() || tags_[0] != kUnknown) throw FormatError("tag set must start with " + std::string(kUnknown));
  for (std::size_t i = 0; i < tags_.size(); ++i) ids_.emplace(tags_[i], static_cast<int>(i));
}

TagSet TagSet::build(std::span<const PassageExample> dataset, bool ner) {
  std::vector<std::string> tags{std::string(kUnknown)};
  std::unordered_map<std::string, int> seen{{tags[0], 0}};
  for (const auto& ex : dataset)
    for (const auto& t : ner ? ex.ner : ex.pos)
      if (seen.emplace(t, static_cast<int>(tags.size())).second) tags.push_back(t);
  return TagSet(std::move(tags));
}

int TagSet::id(std::string_view tag) const {
  auto it = ids_.find(std::string(tag));
  return it == ids_.end() ? 0 : it->second;
}

VocabBundle VocabBundle::build(std::span<const PassageExample> dataset, std::size_t max_size) {
  return {Vocabulary::build(dataset, max_size), TagSet::build(dataset, false), TagSet::build(dataset, true)};
}

nlohmann::json VocabBundle::to_json() const {
  return {{"tokens", words.tokens()}, {"pos", pos.tags()}, {"ner", ner.tags()}};
}

VocabBundle VocabBundle::from_json(const nlohmann::json& j) {
  try {
    return {Vocabulary(j.at("tokens").get<std::vector<std::string>>()),
            TagSet(j.at("pos").get<std::vector<std::string>>()), TagSet(j.at("ner").get<std::vector<std::string>>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("vocabulary file: ") + e.what());
  }
}

void VocabBundle::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write vocabulary " + path.string());
  out << to_json().dump(1) << '\n';
}

VocabBundle VocabBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocabulary " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("vocabulary file " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

int ExtendedVocab::add(const std::string& token) {
  if (base_->contains(token)) return base_->id(token);
  auto [it, fresh] = extra_ids_.try_emplace(token, static_cast<int>(size()));
  if (fresh) extra_.push_back(token);
  return it->second;
}

int ExtendedVocab::resolve(std::string_view token) const {
  if (base_->contains(token)) return base_->id(token);
  if (auto ext = extended_id(token)) return *ext;
  return Vocabulary::kUnk;
}

std::optional<int> ExtendedVocab::extended_id(std::string_view token) const {
  auto it = extra_ids_.find(std::string(token));
  if (it == extra_ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& ExtendedVocab::token(int id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < base_->size()) return base_->token(id);
  const auto k = static_cast<std::size_t>(id) - base_->size();
  if (id < 0 || k >= extra_.size()) throw ShapeError("extended id " + std::to_string(id) + " out of range");
  return extra_[k];
}

BatchExtension extend_vocab(std::span<const PassageExample> batch, const Vocabulary& vocab) {
  BatchExtension out{ExtendedVocab(vocab), {}, {}};
  for (const auto& ex : batch) {
    std::vector<int> p, a;
    for (const auto& t : ex.passage_tokens) p.push_back(out.vocab.add(t));
    for (const auto& t : ex.answer_tokens) a.push_back(out.vocab.add(t));
    out.passage_ids.push_back(std::move(p));
    out.answer_ids.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------

GloveTable random_glove(const Vocabulary& vocab, int dim, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
  GloveTable table;
  table.vectors.resize(static_cast<Eigen::Index>(vocab.size()), dim);
  Rng rng(seed);
  for (Eigen::Index r = 0; r < table.vectors.rows(); ++r)
    for (Eigen::Index c = 0; c < dim; ++c) table.vectors(r, c) = static_cast<float>(rng.uniform(-0.1, 0.1));
  table.vectors.row(Vocabulary::kPad).setZero();
  table.from_file.assign(vocab.size(), false);
  return table;
}

GloveTable read_glove(std::istream& in, const Vocabulary& vocab, int dim, std::uint64_t seed) {
  GloveTable table = random_glove(vocab, dim, seed);
  std::string line;
  std::size_t line_no = 0;
  std::vector<float> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw FormatError("glove line " + std::to_string(line_no) + " has no values");
    const std::string token = line.substr(0, space);
    values.clear();
    const char* p = line.data() + space;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      float v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw FormatError("glove line " + std::to_string(line_no) + " has a malformed number");
      values.push_back(v);
      p = next;
    }
    if (static_cast<int>(values.size()) != dim)
      throw FormatError("glove line " + std::to_string(line_no) + " has " + std::to_string(values.size()) +
                        " values, expected " + std::to_string(dim));
    if (!vocab.contains(token)) continue;
    const int id = vocab.id(token);
    if (table.from_file[static_cast<std::size_t>(id)]) continue;
    for (int c = 0; c < dim; ++c) table.vectors(id, c) = values[static_cast<std::size_t>(c)];
    table.from_file[static_cast<std::size_t>(id)] = true;
  }
  return table;
}

GloveTable load_glove(const std::filesystem::path& path, const Vocabulary& vocab, int dim, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open glove file " + path.string());
  return read_glove(in, vocab, dim, seed);
}

std::map<std::string, ContextPair> load_context(const std::filesystem::path& path) {
  std::map<std::string, ContextPair> out;
  for (const auto& rec : load_container(path)) {
    if (rec.name.rfind("ctx/", 0) != 0) continue;
    const auto slash = rec.name.rfind('/');
    const std::string id = rec.name.substr(4, slash - 4);
    const std::string part = rec.name.substr(slash + 1);
    if (part == "passage") out[id].passage = rec.to_matrix();
    else if (part == "answer") out[id].answer = rec.to_matrix();
    else throw FormatError("context sidecar: unexpected tensor '" + rec.name + "'");
  }
  return out;
}

const ContextPair* EmbeddingBank::context_for(const PassageExample& ex) const {
  if (context_dim == 0) return nullptr;
  auto it = context.find(ex.id);
  if (it == context.end()) throw ValidationError("example '" + ex.id + "': no contextual embeddings in sidecar");
  const auto& c = it->second;
  if (c.passage.rows() != context_dim || c.passage.cols() != static_cast<Eigen::Index>(ex.passage_tokens.size()))
    throw ValidationError("example '" + ex.id + "': contextual passage matrix has wrong shape");
  if (c.answer.rows() != context_dim || c.answer.cols() != static_cast<Eigen::Index>(ex.answer_tokens.size()))
    throw ValidationError("example '" + ex.id + "': contextual answer matrix has wrong shape");
  return &c;
}

// ---------------------------------------------------------------------------

namespace {

struct ConlluToken {
  std::string form;
  std::string upos;
  int head = 0;
};

std::vector<std::vector<ConlluToken>> read_conllu(std::istream& in) {
  std::vector<std::vector<ConlluToken>> sentences;
  std::vector<ConlluToken> current;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!current.empty()) sentences.push_back(std::move(current));
    current.clear();
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() < 7) throw ParseError("conllu line " + std::to_string(line_no) + ": expected 10 columns");
    if (cols[0].find_first_of("-.") != std::string::npos) continue;  // multiword ranges and empty nodes
    ConlluToken tok{cols[1], cols[3], 0};
    try {
      tok.head = std::stoi(cols[6]);
    } catch (const std::exception&) {
      throw ParseError("conllu line " + std::to_string(line_no) + ": bad HEAD column");
    }
    current.push_back(std::move(tok));
  }
  flush();
  return sentences;
}

}  // namespace

std::vector<PassageExample> import_conllu(std::istream& conllu, std::istream& alignment) {
  const auto sentences = read_conllu(conllu);
  std::size_t next = 0;
  std::vector<PassageExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(alignment, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("alignment line " + std::to_string(line_no) + ": " + e.what());
    }
    PassageExample ex;
    ex.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    const auto count = j.at("sentences").get<std::size_t>();
    if (next + count > sentences.size())
      throw ParseError("alignment line " + std::to_string(line_no) + ": not enough sentences in the stream");
    ex.answer_tokens = j.at("answer_tokens").get<std::vector<std::string>>();
    if (j.contains("question_tokens")) ex.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
    for (std::size_t s = 0; s < count; ++s) {
      const auto& sent = sentences[next + s];
      const int offset = static_cast<int>(ex.passage_tokens.size());
      for (const auto& tok : sent) {
        ex.passage_tokens.push_back(tok.form);
        ex.pos.push_back(tok.upos);
        ex.ner.push_back("O");
        ex.dep_head.push_back(tok.head == 0 ? -1 : offset + tok.head - 1);
        ex.case_classes.push_back(case_class(tok.form));
      }
      ex.sent_bounds.emplace_back(offset, static_cast<int>(ex.passage_tokens.size()));
    }
    next += count;
    validate(ex);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace g2s
