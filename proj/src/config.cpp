#include "g2sqg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>

namespace g2s {

namespace {

enum class Kind { Int, Real, Bool, Text };

struct KeySpec {
  const char* key;
  const char* value;
  Kind kind;
};

// clang-format off
constexpr KeySpec kKeys[] = {
  {"seed", "0", Kind::Int},
  {"data.train", "", Kind::Text},
  {"data.valid", "", Kind::Text},
  {"data.test", "", Kind::Text},
  {"data.vocab", "", Kind::Text},
  {"data.glove", "", Kind::Text},
  {"data.context", "", Kind::Text},
  {"data.predictions", "", Kind::Text},
  {"data.conllu", "", Kind::Text},
  {"data.alignment", "", Kind::Text},
  {"checkpoint", "", Kind::Text},
  {"model.word_dim", "300", Kind::Int},
  {"model.hidden", "300", Kind::Int},
  {"model.use_dan", "true", Kind::Bool},
  {"graph.kind", "static", Kind::Text},
  {"knn.k", "10", Kind::Int},
  {"gnn.hops", "3", Kind::Int},
  {"gnn.direction_order", "in_out", Kind::Text},
  {"dropout.embed", "0.4", Kind::Real},
  {"dropout.rnn", "0.3", Kind::Real},
  {"vocab.max_size", "70000", Kind::Int},
  {"decode.beam_width", "5", Kind::Int},
  {"decode.max_len", "30", Kind::Int},
  {"decode.greedy", "false", Kind::Bool},
  {"loss.lambda", "0.4", Kind::Real},
  {"loss.gamma", "0.99", Kind::Real},
  {"loss.alpha", "0.1", Kind::Real},
  {"forcing.base", "0.75", Kind::Real},
  {"forcing.decay", "0.9999", Kind::Real},
  {"optim.lr_pretrain", "0.001", Kind::Real},
  {"optim.lr_finetune", "0.00001", Kind::Real},
  {"optim.clip", "10", Kind::Real},
  {"optim.plateau_factor", "0.5", Kind::Real},
  {"optim.plateau_patience", "3", Kind::Int},
  {"optim.early_stop", "10", Kind::Int},
  {"train.batch_size", "8", Kind::Int},
  {"train.epochs", "100", Kind::Int},
  {"gradcheck.step", "1e-5", Kind::Real},
  {"gradcheck.tolerance", "1e-4", Kind::Real},
  {"hopsweep.min", "0", Kind::Int},
  {"hopsweep.max", "6", Kind::Int},
};
// clang-format on

constexpr const char* kModelKeys[] = {"model.word_dim", "model.hidden",  "model.use_dan", "graph.kind",
                                      "knn.k",          "gnn.hops",      "gnn.direction_order",
                                      "dropout.embed",  "dropout.rnn",   "vocab.max_size"};

const KeySpec* find_key(std::string_view key) {
  for (const auto& k : kKeys)
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_.emplace(k.key, k.value);
}

const std::vector<std::pair<std::string, std::string>>& RunConfig::defaults() {
  static const auto table = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : kKeys) out.emplace_back(k.key, k.value);
    return out;
  }();
  return table;
}

bool RunConfig::known(std::string_view key) const { return find_key(key) != nullptr; }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw UsageError("unknown configuration key '" + key + "'");
  values_[key] = value;
}

void RunConfig::read(std::istream& in, std::string_view source, const std::filesystem::path& base_dir) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw UsageError(std::string(source) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (!known(key))
      throw UsageError(std::string(source) + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!base_dir.empty() && !value.empty() && (key.rfind("data.", 0) == 0 || key == "checkpoint") &&
        std::filesystem::path(value).is_relative())
      value = (base_dir / value).lexically_normal().string();
    values_[key] = std::move(value);
  }
}

void RunConfig::read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  read(in, path.string(), path.parent_path());
}

const std::string& RunConfig::raw(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown configuration key '" + std::string(key) + "'");
  return it->second;
}

long long RunConfig::integer(std::string_view key) const {
  const auto& v = raw(key);
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError("'" + std::string(key) + "' must be an integer, got '" + v + "'");
  return out;
}

double RunConfig::real(std::string_view key) const {
  const auto& v = raw(key);
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError("'" + std::string(key) + "' must be a number, got '" + v + "'");
  return out;
}

bool RunConfig::boolean(std::string_view key) const {
  const auto& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("'" + std::string(key) + "' must be true or false, got '" + v + "'");
}

std::uint64_t RunConfig::seed() const {
  const auto& v = raw("seed");
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError("'seed' must be a nonnegative integer, got '" + v + "'");
  return out;
}

void RunConfig::check_types() const {
  for (const auto& k : kKeys) {
    switch (k.kind) {
      case Kind::Int: (void)integer(k.key); break;
      case Kind::Real: (void)real(k.key); break;
      case Kind::Bool: (void)boolean(k.key); break;
      case Kind::Text: break;
    }
  }
  (void)seed();
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::uint64_t RunConfig::model_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char* key : kModelKeys) {
    h = fnv1a(h, key);
    h = fnv1a(h, "=");
    h = fnv1a(h, raw(key));
    h = fnv1a(h, "\n");
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = fnv1a(1469598103934665603ULL, label);
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace g2s
