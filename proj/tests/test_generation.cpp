#include <doctest.h>

#include <cmath>
#include <limits>

#include "xlg/generation.hpp"
#include "support/oracles.hpp"

using namespace xlg;

namespace {

ModelConfig gen_config() {
  ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 16;
  c.max_positions = 12;
  c.vocab_size = 10;
  c.num_languages = 2;
  return c;
}

}  // namespace

TEST_CASE("beam with full width equals exhaustive search") {
  Rng rng(17, "beam-oracle");
  for (int trial = 0; trial < 12; ++trial) {
    Seq2SeqModel<double> m(gen_config(), 100 + static_cast<std::uint64_t>(trial));
    const std::vector<TokenId> alphabet{special::kEos, 6, 7, 8};
    DecodeConfig dc;
    dc.max_len = 3;
    dc.beam_size = 64;
    dc.allowed_vocab = std::set<TokenId>(alphabet.begin(), alphabet.end());
    dc.tgt_lang = static_cast<int>(rng.below(2));
    Sequence src;
    for (int i = 0; i < 4; ++i) src.push_back(6 + static_cast<TokenId>(rng.below(4)));
    const auto got = beam_search(m, src, 0, dc);

    const auto want = oracle::exhaustive_decode(m, src, alphabet, dc.max_len, dc.tgt_lang);
    CHECK(got.output == want.ids);
    CHECK(got.finished == want.finished);
    CHECK(got.score == doctest::Approx(want.score).epsilon(1e-9));
  }
}

TEST_CASE("beam 1 is greedy") {
  Seq2SeqModel<double> m(gen_config(), 5);
  const Sequence src{6, 7, 8};
  DecodeConfig dc;
  dc.beam_size = 1;
  dc.max_len = 6;
  const auto got = beam_search(m, src, 1, dc);

  const auto enc = m.encode(src, {1, 1, 1});
  Sequence in{special::kBos};
  Sequence out;
  for (int step = 0; step < dc.max_len; ++step) {
    const auto lp = log_softmax_rows<double>(m.decode_forward(enc, {}, in, 0));
    TokenId best = -1;
    for (TokenId t = 0; t < 10; ++t) {
      if (t == special::kMask || t == special::kPad || t == special::kBos) continue;
      if (best < 0 || lp(lp.rows() - 1, t) > lp(lp.rows() - 1, best)) best = t;
    }
    if (best == special::kEos) break;
    out.push_back(best);
    in.push_back(best);
  }
  CHECK(got.output == out);
}

TEST_CASE("property: outputs respect the restriction and the length cap") {
  Rng rng(2, "beam-prop");
  Seq2SeqModel<float> m(gen_config(), 8);
  for (int trial = 0; trial < 20; ++trial) {
    DecodeConfig dc;
    dc.beam_size = 1 + static_cast<int>(rng.below(4));
    dc.max_len = 1 + static_cast<int>(rng.below(6));
    std::set<TokenId> allowed{special::kEos};
    for (TokenId t = special::kCount; t < 10; ++t) {
      if (rng.uniform() < 0.5) allowed.insert(t);
    }
    dc.allowed_vocab = allowed;
    const auto r = beam_search(m, Sequence{6, 7}, 0, dc);
    CHECK(static_cast<int>(r.output.size()) <= dc.max_len);
    for (TokenId t : r.output) CHECK((allowed.contains(t) && t != special::kEos));
    if (!r.finished) CHECK(static_cast<int>(r.output.size()) == dc.max_len);
  }
}

TEST_CASE("wider beams never score below beam 1 within the same length cap") {
  // Beam scores are not monotone in width in general; greedy is a lower
  // bound and the exhaustive optimum an upper bound.
  Seq2SeqModel<double> m(gen_config(), 11);
  DecodeConfig dc;
  dc.max_len = 3;
  dc.allowed_vocab = std::set<TokenId>{special::kEos, 6, 7, 8};
  dc.beam_size = 1;
  const auto greedy = beam_search(m, Sequence{7, 8}, 0, dc);
  dc.beam_size = 64;
  const auto full = beam_search(m, Sequence{7, 8}, 0, dc);
  if (greedy.finished == full.finished) CHECK(full.score >= greedy.score - 1e-12);
}

TEST_CASE("decoding is deterministic") {
  Seq2SeqModel<float> m(gen_config(), 3);
  DecodeConfig dc;
  dc.beam_size = 4;
  dc.max_len = 8;
  const auto a = beam_search(m, Sequence{6, 7, 8, 9}, 1, dc);
  const auto b = beam_search(m, Sequence{6, 7, 8, 9}, 1, dc);
  CHECK(a.output == b.output);
  CHECK(a.score == b.score);
}

TEST_CASE("over-long inputs are truncated and max_len is clamped to the position table") {
  Seq2SeqModel<float> m(gen_config(), 4);
  DecodeConfig dc;
  dc.max_len = 100;
  dc.allowed_vocab = std::set<TokenId>{special::kEos, 6};
  const auto r = beam_search(m, Sequence(40, 7), 0, dc);
  CHECK(static_cast<int>(r.output.size()) <= gen_config().max_positions);
}

TEST_CASE("invalid decode requests") {
  Seq2SeqModel<float> m(gen_config(), 4);
  DecodeConfig dc;
  CHECK_THROWS_AS(beam_search(m, Sequence{}, 0, dc), DecodeError);
  CHECK_THROWS_AS(beam_search(m, Sequence{6}, 5, dc), DecodeError);
  dc.beam_size = 0;
  CHECK_THROWS_AS(dc.validate(), DecodeError);
  dc = DecodeConfig{};
  dc.allowed_vocab = std::set<TokenId>{6, 7};
  CHECK_THROWS_WITH_AS(dc.validate(), doctest::Contains("EOS"), DecodeError);
  dc.allowed_vocab = std::set<TokenId>{special::kEos, special::kPad};
  CHECK_THROWS_AS(dc.validate(), DecodeError);
  dc.allowed_vocab = std::set<TokenId>{special::kEos, 99};
  CHECK_THROWS_AS(beam_search(m, Sequence{6}, 0, dc), DecodeError);
}

TEST_CASE("restrict_vocab keeps corpus ids and EOS") {
  MonolingualCorpus c;
  c.lang = "la";
  c.sentences = {{7, 8}, {8, 9}};
  CHECK(restrict_vocab(c) == std::set<TokenId>{special::kEos, 7, 8, 9});
  CHECK_THROWS_AS(restrict_vocab(MonolingualCorpus{}), DecodeError);
  DecodeConfig dc;
  const auto all = candidate_tokens(dc, 10);
  CHECK(all.size() == 7);
  CHECK(std::find(all.begin(), all.end(), special::kBos) == all.end());
}
