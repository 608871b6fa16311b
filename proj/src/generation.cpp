#include "xlg/generation.hpp"

#include <algorithm>
#include <numeric>

namespace xlg {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw DecodeError("beam_size must be >= 1");
  if (max_len < 1) throw DecodeError("max_len must be >= 1");
  if (tgt_lang < 0) throw DecodeError("tgt_lang must be a valid language id");
  if (allowed_vocab) {
    if (!allowed_vocab->contains(special::kEos)) throw DecodeError("allowed_vocab must contain EOS");
    for (TokenId t : *allowed_vocab) {
      if (t == special::kMask || t == special::kPad || t == special::kBos) {
        throw DecodeError("allowed_vocab may not contain [M], [P] or BOS");
      }
    }
  }
}

std::set<TokenId> restrict_vocab(const MonolingualCorpus& corpus) {
  if (corpus.sentences.empty()) throw DecodeError("restrict_vocab: empty corpus");
  std::set<TokenId> out;
  for (const auto& s : corpus.sentences) out.insert(s.begin(), s.end());
  out.erase(special::kMask);
  out.erase(special::kPad);
  out.erase(special::kBos);
  out.insert(special::kEos);
  return out;
}

std::vector<TokenId> candidate_tokens(const DecodeConfig& cfg, int vocab_size) {
  std::vector<TokenId> out;
  if (cfg.allowed_vocab) {
    for (TokenId t : *cfg.allowed_vocab) {
      if (t < 0 || t >= vocab_size) throw DecodeError("allowed_vocab id " + std::to_string(t) + " outside the vocabulary");
      out.push_back(t);
    }
    return out;
  }
  for (TokenId t = 0; t < vocab_size; ++t) {
    if (t != special::kMask && t != special::kPad && t != special::kBos) out.push_back(t);
  }
  return out;
}

namespace {

bool better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.ids < b.ids;
}

}  // namespace

template <typename T>
DecodeResult beam_search(Seq2SeqModel<T>& model, const Sequence& input, int src_lang, const DecodeConfig& cfg) {
  cfg.validate();
  if (input.empty()) throw DecodeError("beam_search: empty input");
  const ModelConfig& mc = model.config();
  if (src_lang < 0 || src_lang >= mc.num_languages || cfg.tgt_lang >= mc.num_languages) {
    throw DecodeError("beam_search: language id outside the model's tag table");
  }
  const auto tokens = candidate_tokens(cfg, mc.vocab_size);

  SeqBatch source;
  const auto truncated = static_cast<std::ptrdiff_t>(std::min<std::size_t>(input.size(), mc.max_positions));
  source.add(Sequence(input.begin(), input.begin() + truncated), src_lang);

  const std::vector<bool> frozen(model.params().size(), false);
  Matrix<T> memory;
  {
    Tape<T> tape;
    ForwardPass<T> fp(model, tape, frozen);
    memory = tape.value(fp.encode(source));
  }

  // The decoder input BOS + prefix must fit the position table.
  const int steps = std::min(cfg.max_len, mc.max_positions);
  std::vector<BeamHypothesis> beam{{Sequence{special::kBos}, 0.0, false}};
  for (int step = 0; step < steps; ++step) {
    std::vector<int> live;
    for (std::size_t i = 0; i < beam.size(); ++i) {
      if (!beam[i].finished) live.push_back(static_cast<int>(i));
    }
    if (live.empty()) break;

    Tape<T> tape;
    ForwardPass<T> fp(model, tape, frozen);
    SeqBatch targets;
    std::vector<int> last_rows;
    for (int i : live) {
      targets.add(beam[static_cast<std::size_t>(i)].ids, cfg.tgt_lang);
      last_rows.push_back(targets.rows() - 1);
    }
    const auto mem = tape.input(memory);
    const auto h = fp.decode(mem, source, targets, std::vector<int>(live.size(), 0));
    const Matrix<T> logp = log_softmax_rows<T>(tape.value(fp.project(h, last_rows)));

    std::vector<BeamHypothesis> cand;
    for (const auto& b : beam) {
      if (b.finished) cand.push_back(b);
    }
    for (std::size_t r = 0; r < live.size(); ++r) {
      const auto& parent = beam[static_cast<std::size_t>(live[r])];
      for (TokenId t : tokens) {
        BeamHypothesis next{parent.ids, parent.score + static_cast<double>(logp(static_cast<Eigen::Index>(r), t)),
                            t == special::kEos};
        next.ids.push_back(t);
        cand.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(cand.size(), static_cast<std::size_t>(cfg.beam_size));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
    cand.resize(keep);
    beam = std::move(cand);
  }

  const BeamHypothesis* best = nullptr;
  for (const auto& b : beam) {
    if (b.finished && (!best || better(b, *best))) best = &b;
  }
  if (!best) {
    for (const auto& b : beam) {
      if (!best || better(b, *best)) best = &b;
    }
  }
  DecodeResult out;
  out.score = best->score;
  out.finished = best->finished;
  out.output.assign(best->ids.begin() + 1, best->ids.end() - (best->finished ? 1 : 0));
  return out;
}

template DecodeResult beam_search(Seq2SeqModel<float>&, const Sequence&, int, const DecodeConfig&);
template DecodeResult beam_search(Seq2SeqModel<double>&, const Sequence&, int, const DecodeConfig&);

}  // namespace xlg
