#include "xlg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace xlg {

namespace {

using NgramCounts = std::map<Sequence, int>;

NgramCounts ngrams(const Sequence& s, int n) {
  NgramCounts out;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= s.size(); ++i) ++out[Sequence(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                                  s.begin() + static_cast<std::ptrdiff_t>(i + un))];
  return out;
}

int clipped_overlap(const NgramCounts& hyp, const NgramCounts& ref) {
  int m = 0;
  for (const auto& [g, c] : hyp) {
    const auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

int total(const NgramCounts& c) {
  int t = 0;
  for (const auto& kv : c) t += kv.second;
  return t;
}

double f1(double overlap, double hyp_total, double ref_total) {
  if (overlap <= 0.0) return 0.0;
  const double p = overlap / hyp_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

}  // namespace

double bleu4(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references) {
  if (hypotheses.size() != references.size()) {
    throw MetricError("bleu4: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                      std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw MetricError("bleu4: empty corpus");
  long long matches[4] = {0, 0, 0, 0};
  long long totals[4] = {0, 0, 0, 0};
  long long c = 0, r = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    c += static_cast<long long>(hypotheses[i].size());
    r += static_cast<long long>(references[i].size());
    for (int n = 1; n <= 4; ++n) {
      const auto h = ngrams(hypotheses[i], n);
      matches[n - 1] += clipped_overlap(h, ngrams(references[i], n));
      totals[n - 1] += total(h);
    }
  }
  if (c == 0 || matches[0] == 0) return 0.0;
  double log_p = std::log(static_cast<double>(matches[0]) / static_cast<double>(totals[0]));
  for (int n = 1; n < 4; ++n) {
    log_p += std::log((static_cast<double>(matches[n]) + 1.0) / (static_cast<double>(totals[n]) + 1.0));
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_p / 4.0);
}

double rouge_n(const Sequence& hyp, const Sequence& ref, int n) {
  if (n < 1) throw MetricError("rouge_n: n must be >= 1");
  if (ref.empty()) throw MetricError("rouge_n: empty reference");
  const auto rg = ngrams(ref, n);
  // A reference too short for any n-gram can only be matched exactly.
  if (rg.empty()) return hyp == ref ? 1.0 : 0.0;
  const auto hg = ngrams(hyp, n);
  if (hg.empty()) return 0.0;
  return f1(clipped_overlap(hg, rg), total(hg), total(rg));
}

double rouge_l(const Sequence& hyp, const Sequence& ref) {
  if (ref.empty()) throw MetricError("rouge_l: empty reference");
  if (hyp.empty()) return 0.0;
  std::vector<int> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
  for (TokenId h : hyp) {
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      cur[j] = h == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return f1(prev.back(), static_cast<double>(hyp.size()), static_cast<double>(ref.size()));
}

Membership lang_membership(const Sequence& tokens, const std::set<TokenId>& lexicon) {
  return lang_membership(std::vector<Sequence>{tokens}, lexicon);
}

Membership lang_membership(const std::vector<Sequence>& outputs, const std::set<TokenId>& lexicon) {
  std::size_t hit = 0, n = 0;
  for (const auto& s : outputs) {
    n += s.size();
    for (TokenId t : s) hit += lexicon.contains(t) ? 1 : 0;
  }
  if (n == 0) return {0.0, true};
  return {static_cast<double>(hit) / static_cast<double>(n), false};
}

MetricReport evaluate(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references,
                      const std::set<TokenId>& lexicon) {
  MetricReport rep;
  rep.bleu4 = bleu4(hypotheses, references);
  rep.n_examples = static_cast<int>(hypotheses.size());
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    rep.rouge1 += rouge_n(hypotheses[i], references[i], 1);
    rep.rouge2 += rouge_n(hypotheses[i], references[i], 2);
    rep.rougeL += rouge_l(hypotheses[i], references[i]);
    rep.empty_outputs += hypotheses[i].empty() ? 1 : 0;
  }
  const double n = static_cast<double>(hypotheses.size());
  rep.rouge1 /= n;
  rep.rouge2 /= n;
  rep.rougeL /= n;
  if (!lexicon.empty()) rep.lang_membership = lang_membership(hypotheses, lexicon).fraction;
  return rep;
}

Json to_json(const MetricReport& r) {
  return Json{{"bleu4", r.bleu4},   {"rouge1", r.rouge1},
              {"rouge2", r.rouge2}, {"rougeL", r.rougeL},
              {"lang_membership", r.lang_membership}, {"n_examples", r.n_examples},
              {"empty_outputs", r.empty_outputs}};
}

Json metric_settings() {
  return Json{{"bleu", {{"max_order", 4}, {"smoothing", "add-one on orders 2-4"}, {"aggregation", "corpus"}}},
              {"rouge", {{"aggregation", "macro-average of per-example F1"}}},
              {"membership", {{"aggregation", "pooled over emitted tokens"}, {"empty_output", 0.0}}}};
}

}  // namespace xlg
