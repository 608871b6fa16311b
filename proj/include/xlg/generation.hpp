#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "xlg/corpus.hpp"
#include "xlg/model.hpp"

namespace xlg {

class DecodeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DecodeConfig {
  int beam_size = 3;
  int max_len = 80;  // decode steps, EOS included
  std::optional<std::set<TokenId>> allowed_vocab;
  int tgt_lang = 0;

  void validate() const;
};

struct BeamHypothesis {
  Sequence ids;  // starts with BOS
  double score = 0.0;
  bool finished = false;
};

struct DecodeResult {
  Sequence output;  // BOS/EOS stripped
  double score = 0.0;
  bool finished = false;
};

/// Token ids seen in the corpus plus EOS, minus [M], [P] and BOS.
std::set<TokenId> restrict_vocab(const MonolingualCorpus& corpus);

/// Ids a hypothesis may emit: the restriction if set, else every id except
/// [M], [P] and BOS.
std::vector<TokenId> candidate_tokens(const DecodeConfig& cfg, int vocab_size);

/// Beam search without length normalisation. Finished hypotheses stay in the
/// beam and compete with live ones; ties go to the lexicographically smaller
/// id sequence.
template <typename T>
DecodeResult beam_search(Seq2SeqModel<T>& model, const Sequence& input, int src_lang, const DecodeConfig& cfg);

}  // namespace xlg
