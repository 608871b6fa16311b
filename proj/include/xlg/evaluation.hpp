#pragma once

#include <filesystem>
#include <set>
#include <stdexcept>
#include <vector>

#include "xlg/json.hpp"
#include "xlg/vocab.hpp"

namespace xlg {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Corpus BLEU-4: clipped n-gram precisions (add-one on orders 2..4) and
/// brevity penalty over summed lengths.
double bleu4(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references);

/// n-gram overlap F1.
double rouge_n(const Sequence& hyp, const Sequence& ref, int n);
/// Longest-common-subsequence F1.
double rouge_l(const Sequence& hyp, const Sequence& ref);

struct Membership {
  double fraction = 0.0;
  bool empty = false;  // no tokens at all; fraction is then 0
};

Membership lang_membership(const Sequence& tokens, const std::set<TokenId>& lexicon);
/// Pooled over every emitted token of a corpus.
Membership lang_membership(const std::vector<Sequence>& outputs, const std::set<TokenId>& lexicon);

struct MetricReport {
  double bleu4 = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double lang_membership = 0.0;
  int n_examples = 0;
  int empty_outputs = 0;
};

/// ROUGE scores are averaged per example. Membership is skipped (left 0)
/// when `lexicon` is empty.
MetricReport evaluate(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references,
                      const std::set<TokenId>& lexicon = {});

Json to_json(const MetricReport& r);

/// Smoothing and other settings echoed into every report.
Json metric_settings();

}  // namespace xlg
