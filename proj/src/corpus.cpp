#include "xlg/corpus.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "xlg/json.hpp"
#include "xlg/rng.hpp"

namespace xlg {

void SynthConfig::validate() const {
  const auto fail = [](const std::string& m) { throw CorpusError("invalid synth config: " + m); };
  if (vocab_size_per_lang < 1) fail("vocab_size_per_lang must be >= 1 for a bijection to exist");
  if (min_len < 1) fail("min_len must be >= 1");
  if (max_len < min_len) fail("max_len must be >= min_len");
  if (reorder_window < 1) fail("reorder_window must be >= 1");
  if (mono_size < 0 || parallel_size < 0 || task_pool_size < 0) fail("corpus sizes must be >= 0");
  if (bigram_bias < 0.0 || bigram_bias > 1.0) fail("bigram_bias must be in [0,1]");
  if (marker_rate < 0.0 || marker_rate > 1.0) fail("marker_rate must be in [0,1]");
  if (lang_a.empty() || lang_b.empty() || lang_a == lang_b) fail("language names must be distinct and non-empty");
}

namespace {

std::vector<std::string> make_lexicon(const std::string& lang, int n) {
  const int width = static_cast<int>(std::to_string(std::max(n - 1, 0)).size());
  std::vector<std::string> lex;
  lex.reserve(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i < n; ++i) {
    std::string digits = std::to_string(i);
    lex.push_back(lang + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits);
  }
  lex.push_back(lang + "?");
  return lex;
}

// Upper bound on distinct sentences the generator can emit, saturating at 2^62.
double sentence_capacity(const SynthConfig& cfg) {
  double total = 0.0;
  for (int len = cfg.min_len; len <= cfg.max_len; ++len) {
    total += std::pow(static_cast<double>(cfg.vocab_size_per_lang), len);
    if (total > 4.6e18) return 4.6e18;
  }
  return total;
}

class SentenceSampler {
 public:
  SentenceSampler(const SynthConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {
    const auto n = static_cast<std::uint64_t>(cfg.vocab_size_per_lang);
    successor_.resize(n);
    for (auto& s : successor_) s = static_cast<int>(rng_.below(n));
  }

  std::vector<int> draw() {
    const auto n = static_cast<std::uint64_t>(cfg_.vocab_size_per_lang);
    const int len = cfg_.min_len + static_cast<int>(rng_.below(static_cast<std::uint64_t>(cfg_.max_len - cfg_.min_len + 1)));
    const bool marker = len >= 2 && rng_.uniform() < cfg_.marker_rate;
    const int content = marker ? len - 1 : len;
    std::vector<int> s;
    s.reserve(static_cast<std::size_t>(len));
    s.push_back(static_cast<int>(rng_.below(n)));
    for (int i = 1; i < content; ++i) {
      if (rng_.uniform() < cfg_.bigram_bias) {
        s.push_back(successor_[static_cast<std::size_t>(s.back())]);
      } else {
        s.push_back(static_cast<int>(rng_.below(n)));
      }
    }
    if (marker) s.push_back(cfg_.vocab_size_per_lang);
    return s;
  }

  std::vector<int> draw_unique(std::set<std::vector<int>>& seen) {
    while (true) {
      auto s = draw();
      if (seen.insert(s).second) return s;
    }
  }

 private:
  const SynthConfig& cfg_;
  Rng& rng_;
  std::vector<int> successor_;
};

std::vector<std::string> render(const std::vector<std::vector<int>>& sentences, const std::vector<std::string>& lex) {
  std::vector<std::string> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    std::string line;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) line += ' ';
      line += lex[static_cast<std::size_t>(s[i])];
    }
    out.push_back(std::move(line));
  }
  return out;
}

bool ends_with_marker(const std::vector<int>& s, int marker) { return !s.empty() && s.back() == marker; }

}  // namespace

std::vector<int> TwinLanguages::translate(const std::vector<int>& a) const {
  std::vector<int> b;
  b.reserve(a.size());
  for (int t : a) b.push_back(sigma.at(static_cast<std::size_t>(t)));
  return local_reorder(std::move(b), config.reorder_window, ends_with_marker(a, marker_index()));
}

std::vector<int> TwinLanguages::translate_inverse(const std::vector<int>& b) const {
  std::vector<int> inv(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) inv[static_cast<std::size_t>(sigma[i])] = static_cast<int>(i);
  auto a = local_reorder(b, config.reorder_window, ends_with_marker(b, marker_index()));
  for (int& t : a) t = inv.at(static_cast<std::size_t>(t));
  return a;
}

std::vector<std::string> TwinLanguages::render_a(const std::vector<std::vector<int>>& s) const {
  return render(s, lexicon_a);
}

std::vector<std::string> TwinLanguages::render_b(const std::vector<std::vector<int>>& s) const {
  return render(s, lexicon_b);
}

std::vector<Vocab::TokenStream> TwinLanguages::token_streams() const {
  std::string all_a, all_b;
  for (const auto& t : lexicon_a) all_a += t + " ";
  for (const auto& t : lexicon_b) all_b += t + " ";
  Vocab::TokenStream a{all_a}, b{all_b};
  for (auto& line : render_a(mono_a)) a.push_back(std::move(line));
  for (auto& line : render_b(mono_b)) b.push_back(std::move(line));
  return {a, b};
}

TwinLanguages generate_twin_languages(const SynthConfig& cfg) {
  cfg.validate();
  const double needed = static_cast<double>(cfg.parallel_size) + cfg.mono_size * 2.0 + cfg.task_pool_size * 2.0;
  if (needed > sentence_capacity(cfg) / 2.0) {
    throw CorpusError("vocabulary too small to generate " + std::to_string(static_cast<long long>(needed)) +
                      " distinct sentences");
  }

  TwinLanguages tw;
  tw.config = cfg;
  tw.lexicon_a = make_lexicon(cfg.lang_a, cfg.vocab_size_per_lang);
  tw.lexicon_b = make_lexicon(cfg.lang_b, cfg.vocab_size_per_lang);

  Rng rng(cfg.seed, "synth");
  tw.sigma.resize(static_cast<std::size_t>(cfg.vocab_size_per_lang));
  for (std::size_t i = 0; i < tw.sigma.size(); ++i) tw.sigma[i] = static_cast<int>(i);
  rng.shuffle(tw.sigma.begin(), tw.sigma.end());
  tw.sigma.push_back(cfg.vocab_size_per_lang);  // marker maps to marker

  SentenceSampler sampler(cfg, rng);
  // All base (language-A) sentences are distinct, which keeps the splits disjoint.
  std::set<std::vector<int>> seen;
  for (int i = 0; i < cfg.parallel_size; ++i) {
    auto a = sampler.draw_unique(seen);
    auto b = tw.translate(a);
    tw.parallel.emplace_back(std::move(a), std::move(b));
  }
  for (int i = 0; i < cfg.mono_size; ++i) tw.mono_a.push_back(sampler.draw_unique(seen));
  for (int i = 0; i < cfg.mono_size; ++i) tw.mono_b.push_back(tw.translate(sampler.draw_unique(seen)));
  for (int i = 0; i < cfg.task_pool_size; ++i) tw.task_pool_a.push_back(sampler.draw_unique(seen));
  for (int i = 0; i < cfg.task_pool_size; ++i) tw.task_pool_b.push_back(tw.translate(sampler.draw_unique(seen)));
  return tw;
}

Sequence TwinLexicon::translate(const Sequence& a) const {
  Sequence b;
  b.reserve(a.size());
  for (TokenId t : a) b.push_back(sigma.at(static_cast<std::size_t>(t)));
  return local_reorder(std::move(b), reorder_window, !a.empty() && a.back() == marker_a);
}

Sequence TwinLexicon::translate_inverse(const Sequence& b) const {
  std::vector<TokenId> inv(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) inv[static_cast<std::size_t>(sigma[i])] = static_cast<TokenId>(i);
  auto a = local_reorder(b, reorder_window, !b.empty() && b.back() == marker_b);
  for (TokenId& t : a) t = inv.at(static_cast<std::size_t>(t));
  return a;
}

TokenId TwinLexicon::marker(const std::string& lang) const {
  if (lang == lang_a) return marker_a;
  if (lang == lang_b) return marker_b;
  throw CorpusError("language '" + lang + "' is not part of this twin pair");
}

std::vector<TokenId> TwinLexicon::lexicon(const std::string& lang) const {
  if (lang == lang_a) return ids_a;
  if (lang == lang_b) return ids_b;
  throw CorpusError("language '" + lang + "' is not part of this twin pair");
}

TwinLexicon make_twin_lexicon(const TwinLanguages& twins, const Vocab& vocab) {
  TwinLexicon lex;
  lex.lang_a = twins.config.lang_a;
  lex.lang_b = twins.config.lang_b;
  lex.reorder_window = twins.config.reorder_window;
  const auto lookup = [&](const std::string& t) {
    if (!vocab.contains(t)) throw CorpusError("vocabulary lacks lexicon symbol '" + t + "'");
    return vocab.id(t);
  };
  for (const auto& t : twins.lexicon_a) lex.ids_a.push_back(lookup(t));
  for (const auto& t : twins.lexicon_b) lex.ids_b.push_back(lookup(t));
  lex.marker_a = lex.ids_a.back();
  lex.marker_b = lex.ids_b.back();
  lex.sigma.resize(static_cast<std::size_t>(vocab.size()));
  for (std::size_t i = 0; i < lex.sigma.size(); ++i) lex.sigma[i] = static_cast<TokenId>(i);
  for (std::size_t i = 0; i < twins.sigma.size(); ++i) {
    const TokenId a = lex.ids_a[i];
    const TokenId b = lex.ids_b[static_cast<std::size_t>(twins.sigma[i])];
    lex.sigma[static_cast<std::size_t>(a)] = b;
    lex.sigma[static_cast<std::size_t>(b)] = a;
  }
  return lex;
}

MonolingualCorpus encode_monolingual(const std::vector<std::vector<int>>& sentences, const Sequence& lexicon_ids,
                                     const std::string& lang) {
  MonolingualCorpus c;
  c.lang = lang;
  c.sentences.reserve(sentences.size());
  for (const auto& s : sentences) {
    Sequence ids;
    ids.reserve(s.size());
    for (int t : s) ids.push_back(lexicon_ids.at(static_cast<std::size_t>(t)));
    c.sentences.push_back(std::move(ids));
  }
  return c;
}

ParallelCorpus encode_parallel(const TwinLanguages& twins, const TwinLexicon& lex) {
  ParallelCorpus p;
  p.src_lang = lex.lang_a;
  p.tgt_lang = lex.lang_b;
  for (const auto& [a, b] : twins.parallel) {
    Sequence x, y;
    for (int t : a) x.push_back(lex.ids_a.at(static_cast<std::size_t>(t)));
    for (int t : b) y.push_back(lex.ids_b.at(static_cast<std::size_t>(t)));
    p.pairs.emplace_back(std::move(x), std::move(y));
  }
  return p;
}

Sequence task_target_for(const Sequence& input, TokenId marker) {
  std::size_t sep = input.size();
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (input[i] == special::kSep) {
      if (sep != input.size()) throw CorpusError("task input holds more than one [S]");
      sep = i;
    }
  }
  if (sep == input.size()) throw CorpusError("task input lacks [S]");
  Sequence target(input.rbegin(), input.rend() - static_cast<std::ptrdiff_t>(sep) - 1);
  target.push_back(marker);
  return target;
}

TaskDataset make_task_dataset(const MonolingualCorpus& corpus, TokenId marker, int n, std::uint64_t seed) {
  if (n < 0) throw CorpusError("task dataset size must be >= 0");
  if (static_cast<std::size_t>(n) > corpus.sentences.size()) {
    throw CorpusError("requested " + std::to_string(n) + " task examples but corpus has only " +
                      std::to_string(corpus.sentences.size()) + " sentences");
  }
  Rng rng(seed, "task:" + corpus.lang);
  std::vector<std::size_t> order(corpus.sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  TaskDataset out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
    const Sequence& s = corpus.sentences[order[k]];
    const std::size_t content = !s.empty() && s.back() == marker ? s.size() - 1 : s.size();
    if (content == 0) throw CorpusError("sentence too short to carve an answer span");
    const std::size_t span = 1 + rng.below(std::min<std::size_t>(3, content));
    const std::size_t start = rng.below(content - span + 1);
    TaskExample ex;
    ex.lang = corpus.lang;
    ex.input = s;
    ex.input.push_back(special::kSep);
    ex.input.insert(ex.input.end(), s.begin() + static_cast<std::ptrdiff_t>(start),
                    s.begin() + static_cast<std::ptrdiff_t>(start + span));
    ex.target = task_target_for(ex.input, marker);
    out.push_back(std::move(ex));
  }
  return out;
}

TaskExample translate_task_example(const TaskExample& ex, const TwinLexicon& lex) {
  if (ex.lang != lex.lang_a) throw CorpusError("can only translate language-A examples");
  const auto sep = std::find(ex.input.begin(), ex.input.end(), special::kSep);
  if (sep == ex.input.end()) throw CorpusError("task input lacks [S]");
  TaskExample out;
  out.lang = lex.lang_b;
  out.input = lex.translate(Sequence(ex.input.begin(), sep));
  out.input.push_back(special::kSep);
  // The answer span is a phrase; it is relabelled but not reordered.
  for (auto it = sep + 1; it != ex.input.end(); ++it) out.input.push_back(lex.sigma.at(static_cast<std::size_t>(*it)));
  out.target = task_target_for(out.input, lex.marker_b);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence

namespace {

template <typename Fn>
void write_lines(const std::filesystem::path& path, std::size_t n, Fn&& record) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < n; ++i) out << record(i).dump() << '\n';
  if (!out) throw CorpusError("failed writing " + path.string());
}

template <typename Fn>
void read_lines(const std::filesystem::path& path, Fn&& on_record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      on_record(Json::parse(line));
    } catch (const std::exception& e) {
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
}

Sequence ids_from(const Json& j) {
  if (!j.is_array()) throw CorpusError("expected an array of ids");
  Sequence s;
  s.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw CorpusError("ids must be integers");
    s.push_back(v.get<TokenId>());
  }
  return s;
}

void require_keys(const Json& j, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw CorpusError("record is not a JSON object");
  for (const char* k : keys) {
    if (!j.contains(k)) throw CorpusError(std::string("missing key '") + k + "'");
  }
  if (j.size() != keys.size()) throw CorpusError("unexpected keys in record");
}

}  // namespace

void save_jsonl(const std::filesystem::path& path, const MonolingualCorpus& corpus) {
  write_lines(path, corpus.sentences.size(), [&](std::size_t i) {
    Json j;
    j["lang"] = corpus.lang;
    j["ids"] = corpus.sentences[i];
    return j;
  });
}

void save_jsonl(const std::filesystem::path& path, const ParallelCorpus& corpus) {
  write_lines(path, corpus.pairs.size(), [&](std::size_t i) {
    Json j;
    j["src"] = corpus.pairs[i].first;
    j["tgt"] = corpus.pairs[i].second;
    j["src_lang"] = corpus.src_lang;
    j["tgt_lang"] = corpus.tgt_lang;
    return j;
  });
}

void save_jsonl(const std::filesystem::path& path, const TaskDataset& dataset) {
  write_lines(path, dataset.size(), [&](std::size_t i) {
    Json j;
    j["input"] = dataset[i].input;
    j["target"] = dataset[i].target;
    j["lang"] = dataset[i].lang;
    return j;
  });
}

MonolingualCorpus load_monolingual_jsonl(const std::filesystem::path& path) {
  MonolingualCorpus c;
  bool first = true;
  read_lines(path, [&](const Json& j) {
    require_keys(j, {"lang", "ids"});
    const auto lang = j.at("lang").get<std::string>();
    if (first) c.lang = lang;
    else if (lang != c.lang) throw CorpusError("mixed languages in monolingual corpus");
    first = false;
    auto ids = ids_from(j.at("ids"));
    if (ids.empty()) throw CorpusError("empty sentence");
    c.sentences.push_back(std::move(ids));
  });
  return c;
}

ParallelCorpus load_parallel_jsonl(const std::filesystem::path& path) {
  ParallelCorpus c;
  bool first = true;
  read_lines(path, [&](const Json& j) {
    require_keys(j, {"src", "tgt", "src_lang", "tgt_lang"});
    const auto sl = j.at("src_lang").get<std::string>();
    const auto tl = j.at("tgt_lang").get<std::string>();
    if (first) {
      c.src_lang = sl;
      c.tgt_lang = tl;
    } else if (sl != c.src_lang || tl != c.tgt_lang) {
      throw CorpusError("mixed language pairs in parallel corpus");
    }
    first = false;
    auto x = ids_from(j.at("src"));
    auto y = ids_from(j.at("tgt"));
    if (x.empty() || y.empty()) throw CorpusError("empty side in parallel pair");
    c.pairs.emplace_back(std::move(x), std::move(y));
  });
  return c;
}

TaskDataset load_task_jsonl(const std::filesystem::path& path) {
  TaskDataset d;
  read_lines(path, [&](const Json& j) {
    require_keys(j, {"input", "target", "lang"});
    d.push_back({ids_from(j.at("input")), ids_from(j.at("target")), j.at("lang").get<std::string>()});
  });
  return d;
}

}  // namespace xlg
