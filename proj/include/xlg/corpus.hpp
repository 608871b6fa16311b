#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xlg/vocab.hpp"

namespace xlg {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MonolingualCorpus {
  std::string lang;
  std::vector<Sequence> sentences;
  friend bool operator==(const MonolingualCorpus&, const MonolingualCorpus&) = default;
};

struct ParallelCorpus {
  std::string src_lang;
  std::string tgt_lang;
  std::vector<std::pair<Sequence, Sequence>> pairs;
  friend bool operator==(const ParallelCorpus&, const ParallelCorpus&) = default;
};

/// input = context ⊕ [S] ⊕ answer span; target = reversed span ⊕ task marker.
struct TaskExample {
  Sequence input;
  Sequence target;
  std::string lang;
  friend bool operator==(const TaskExample&, const TaskExample&) = default;
};

using TaskDataset = std::vector<TaskExample>;

struct SynthConfig {
  int vocab_size_per_lang = 50;
  int min_len = 4;
  int max_len = 10;
  int mono_size = 5000;       // per language
  int parallel_size = 5000;
  int task_pool_size = 2000;  // held-out sentences per language for task data
  int reorder_window = 3;
  double bigram_bias = 0.5;   // probability of following the preferred successor
  double marker_rate = 0.2;   // probability a sentence ends with its language's marker
  std::uint64_t seed = 1;
  std::string lang_a = "la";
  std::string lang_b = "lb";

  void validate() const;
};

/// Twin languages in symbol space. Language B is the image of language A
/// under a tokenwise bijection followed by a fixed local reordering.
struct TwinLanguages {
  SynthConfig config;
  std::vector<std::string> lexicon_a;  // last entry is the task marker
  std::vector<std::string> lexicon_b;
  std::vector<int> sigma;              // lexicon_a index -> lexicon_b index

  std::vector<std::vector<int>> mono_a;  // sentences as lexicon indices
  std::vector<std::vector<int>> mono_b;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> parallel;
  std::vector<std::vector<int>> task_pool_a;
  std::vector<std::vector<int>> task_pool_b;

  int marker_index() const { return config.vocab_size_per_lang; }
  std::vector<int> translate(const std::vector<int>& a) const;
  std::vector<int> translate_inverse(const std::vector<int>& b) const;

  /// Whitespace-joined text, one line per sentence.
  std::vector<std::string> render_a(const std::vector<std::vector<int>>& s) const;
  std::vector<std::string> render_b(const std::vector<std::vector<int>>& s) const;

  /// Token streams for vocabulary learning: full lexicons followed by the monolingual text.
  std::vector<Vocab::TokenStream> token_streams() const;
};

/// Swaps adjacent tokens at even offsets inside each window-sized block.
/// A trailing marker (if `keep_last` is set) stays in place. Self-inverse.
template <typename T>
std::vector<T> local_reorder(std::vector<T> s, int window, bool keep_last) {
  const std::size_t n = keep_last && !s.empty() ? s.size() - 1 : s.size();
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t block = 0; block < n; block += w) {
    const std::size_t end = std::min(block + w, n);
    for (std::size_t i = block; i + 1 < end; i += 2) std::swap(s[i], s[i + 1]);
  }
  return s;
}

TwinLanguages generate_twin_languages(const SynthConfig& cfg);

/// Id-space view of a twin pair against a concrete vocabulary.
struct TwinLexicon {
  std::string lang_a;
  std::string lang_b;
  Sequence ids_a;  // lexicon index -> token id
  Sequence ids_b;
  TokenId marker_a = special::kUnk;
  TokenId marker_b = special::kUnk;
  int reorder_window = 1;
  std::vector<TokenId> sigma;  // token id -> token id, identity outside lexicon A

  Sequence translate(const Sequence& a) const;
  Sequence translate_inverse(const Sequence& b) const;
  TokenId marker(const std::string& lang) const;
  /// Token ids (marker included) that belong to `lang`.
  std::vector<TokenId> lexicon(const std::string& lang) const;
};

TwinLexicon make_twin_lexicon(const TwinLanguages& twins, const Vocab& vocab);

MonolingualCorpus encode_monolingual(const std::vector<std::vector<int>>& sentences,
                                     const Sequence& lexicon_ids, const std::string& lang);
ParallelCorpus encode_parallel(const TwinLanguages& twins, const TwinLexicon& lex);

/// Builds `n` examples from distinct sentences; each span has length 1..3 and
/// never covers a trailing marker.
TaskDataset make_task_dataset(const MonolingualCorpus& corpus, TokenId marker, int n, std::uint64_t seed);

/// Recomputes the target of a task input: reversed span after [S], then marker.
Sequence task_target_for(const Sequence& input, TokenId marker);

/// Maps an A-language example to its B-language twin.
TaskExample translate_task_example(const TaskExample& ex, const TwinLexicon& lex);

void save_jsonl(const std::filesystem::path& path, const MonolingualCorpus& corpus);
void save_jsonl(const std::filesystem::path& path, const ParallelCorpus& corpus);
void save_jsonl(const std::filesystem::path& path, const TaskDataset& dataset);
MonolingualCorpus load_monolingual_jsonl(const std::filesystem::path& path);
ParallelCorpus load_parallel_jsonl(const std::filesystem::path& path);
TaskDataset load_task_jsonl(const std::filesystem::path& path);

}  // namespace xlg
