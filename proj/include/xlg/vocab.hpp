#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace xlg {

using TokenId = int;
using Sequence = std::vector<TokenId>;

/// Reserved ids. Order is fixed so checkpoints stay stable.
namespace special {
inline constexpr TokenId kMask = 0;
inline constexpr TokenId kPad = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kBos = 3;
inline constexpr TokenId kEos = 4;
inline constexpr TokenId kUnk = 5;
inline constexpr int kCount = 6;

inline constexpr const char* kNames[kCount] = {"[M]", "[P]", "[S]", "<s>", "</s>", "<unk>"};

inline bool is_special(TokenId id) { return id >= 0 && id < kCount; }
}  // namespace special

struct LanguageTag {
  int id = 0;
  std::string name;
  friend bool operator==(const LanguageTag&, const LanguageTag&) = default;
};

/// Dense, ordered set of language tags (ids 0..n-1).
class LanguageSet {
 public:
  LanguageSet() = default;
  explicit LanguageSet(std::vector<std::string> names);

  int size() const { return static_cast<int>(names_.size()); }
  LanguageTag at(int id) const;
  LanguageTag tag(std::string_view name) const;  // throws on unknown name
  int id(std::string_view name) const { return tag(name).id; }
  bool contains(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const LanguageSet&, const LanguageSet&) = default;

 private:
  std::vector<std::string> names_;
};

/// How raw text is split before merges apply.
enum class BaseUnit {
  Symbol,  // whitespace-separated symbols are the base units
  Char,    // characters of each word plus an end-of-word unit
};

inline constexpr std::string_view kEndOfWord = "</w>";

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using MergeRule = std::pair<std::string, std::string>;

/// Shared subword vocabulary. Immutable after construction.
class Vocab {
 public:
  /// One token stream = a list of sentences, each a whitespace-separated string.
  using TokenStream = std::vector<std::string>;

  Vocab() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  BaseUnit base_unit() const { return base_unit_; }
  const LanguageSet& languages() const { return languages_; }
  const std::vector<MergeRule>& merges() const { return merges_; }

  const std::string& token(TokenId id) const;
  /// kUnk if absent.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const { return token_to_id_.count(std::string(token)) != 0; }

  Sequence encode(std::string_view text) const;
  std::string decode(const Sequence& ids) const;

  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static Vocab load(const std::filesystem::path& path);
  static Vocab parse(std::string_view contents);

  friend bool operator==(const Vocab&, const Vocab&) = default;

  friend Vocab learn_vocab(const std::vector<TokenStream>&, int, BaseUnit, const LanguageSet&);

 private:
  void add_token(const std::string& token);
  std::vector<std::string> split_units(std::string_view word_or_sentence) const;

  BaseUnit base_unit_ = BaseUnit::Symbol;
  LanguageSet languages_;
  std::vector<std::string> id_to_token_;
  std::map<std::string, TokenId> token_to_id_;
  std::vector<MergeRule> merges_;
};

/// Learns base symbols plus up to `num_merges` BPE merges. Ties in pair
/// frequency go to the lexicographically smallest pair.
Vocab learn_vocab(const std::vector<Vocab::TokenStream>& corpora, int num_merges,
                  BaseUnit base_unit = BaseUnit::Symbol, const LanguageSet& languages = {});

/// Splits on ASCII whitespace.
std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace xlg
