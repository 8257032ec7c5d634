#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "g2sqg/params.hpp"

namespace g2s {

enum class CaseClass : int { Lower = 0, Capitalized = 1, Other = 2 };
inline constexpr int kCaseClasses = 3;

/// Lower: no uppercase letters. Capitalized: only the first character is
/// uppercase. Anything else is Other.
CaseClass case_class(std::string_view token);

struct PassageExample {
  std::string id;
  std::vector<std::string> passage_tokens;
  std::vector<std::string> answer_tokens;
  std::vector<std::string> question_tokens;  // empty at inference
  std::vector<std::string> pos;
  std::vector<std::string> ner;
  std::vector<int> dep_head;                  // -1 marks a sentence root
  std::vector<std::pair<int, int>> sent_bounds;  // half-open [begin, end)
  std::vector<CaseClass> case_classes;        // derived from passage_tokens

  std::size_t size() const { return passage_tokens.size(); }
};

/// Throws ValidationError naming the field and example id.
void validate(const PassageExample& example);

PassageExample example_from_json(const nlohmann::json& j);
nlohmann::json example_to_json(const PassageExample& example);

/// One JSON object per line; blank lines are ignored.
std::vector<PassageExample> read_dataset(std::istream& in);
std::vector<PassageExample> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, std::span<const PassageExample> examples);

/// Word vocabulary with PAD/UNK/SOS/EOS at ids 0-3, then tokens by
/// descending frequency (ties by first occurrence).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr std::size_t kDefaultMaxSize = 70000;
  static constexpr std::array<std::string_view, 4> kSpecials = {"<pad>", "<unk>", "<s>", "</s>"};

  Vocabulary();
  /// Tokens must start with the four specials in order.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Counts tokens over passages, answers and questions.
  static Vocabulary build(std::span<const PassageExample> dataset, std::size_t max_size = kDefaultMaxSize);

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Closed tag inventory (POS or NER) with an unknown tag at id 0.
class TagSet {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  TagSet();
  explicit TagSet(std::vector<std::string> tags);

  /// Tags in order of first occurrence.
  static TagSet build(std::span<const PassageExample> dataset, bool ner);

  int id(std::string_view tag) const;
  std::size_t size() const { return tags_.size(); }
  const std::vector<std::string>& tags() const { return tags_; }

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> ids_;
};

/// Everything `build-vocab` persists.
struct VocabBundle {
  Vocabulary words;
  TagSet pos;
  TagSet ner;

  static VocabBundle build(std::span<const PassageExample> dataset, std::size_t max_size);
  nlohmann::json to_json() const;
  static VocabBundle from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static VocabBundle load(const std::filesystem::path& path);
};

/// Base vocabulary plus the out-of-vocabulary source tokens of one batch.
class ExtendedVocab {
 public:
  explicit ExtendedVocab(const Vocabulary& base) : base_(&base) {}

  /// Appends `token` if it is neither in the base nor already extended.
  int add(const std::string& token);

  /// Base id if in vocabulary, else extended id if extended, else UNK.
  int resolve(std::string_view token) const;
  std::optional<int> extended_id(std::string_view token) const;

  const std::string& token(int id) const;
  std::size_t size() const { return base_->size() + extra_.size(); }
  std::size_t extension_size() const { return extra_.size(); }
  const Vocabulary& base() const { return *base_; }

 private:
  const Vocabulary* base_;
  std::vector<std::string> extra_;
  std::unordered_map<std::string, int> extra_ids_;
};

struct BatchExtension {
  ExtendedVocab vocab;
  /// Extended id of every passage / answer token, per example.
  std::vector<std::vector<int>> passage_ids;
  std::vector<std::vector<int>> answer_ids;
};

/// OOV passage and answer tokens appended in first-occurrence order.
BatchExtension extend_vocab(std::span<const PassageExample> batch, const Vocabulary& vocab);

/// Fixed word vectors, one row per vocabulary id.
struct GloveTable {
  Matrix<float> vectors;       // |V| x dim
  std::vector<bool> from_file;  // row came from the file rather than the seeded fallback
};

/// Reads "token v1 ... v_dim" lines. Vocabulary tokens missing from the file
/// get uniform(-0.1, 0.1) vectors from `seed`.
GloveTable load_glove(const std::filesystem::path& path, const Vocabulary& vocab, int dim, std::uint64_t seed);
GloveTable read_glove(std::istream& in, const Vocabulary& vocab, int dim, std::uint64_t seed);
/// Table with every row drawn from the seeded fallback.
GloveTable random_glove(const Vocabulary& vocab, int dim, std::uint64_t seed);

/// Precomputed contextual embeddings for one example (columns = tokens).
struct ContextPair {
  Matrix<float> passage;
  Matrix<float> answer;
};

/// Reads a sidecar in the checkpoint container format keyed
/// "ctx/<example-id>/passage" and "ctx/<example-id>/answer".
std::map<std::string, ContextPair> load_context(const std::filesystem::path& path);

/// Fixed embedding sources shared by every example.
struct EmbeddingBank {
  GloveTable glove;
  std::map<std::string, ContextPair> context;
  int context_dim = 0;

  int glove_dim() const { return static_cast<int>(glove.vectors.cols()); }
  /// Context for `example`, validated against its token counts; nullptr when absent.
  const ContextPair* context_for(const PassageExample& example) const;
};

/// Converts a CoNLL-U stream into examples. Each line of `alignment` is a JSON
/// object {"id", "sentences", "answer_tokens", "question_tokens"?} that claims
/// the next `sentences` sentences of the stream as one passage. Columns ID,
/// FORM, UPOS and HEAD are used; HEAD 0 becomes -1. NER tags are set to "O".
std::vector<PassageExample> import_conllu(std::istream& conllu, std::istream& alignment);

}  // namespace g2s
