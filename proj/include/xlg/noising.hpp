#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlg/rng.hpp"
#include "xlg/vocab.hpp"

namespace xlg {

class NoiseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NoiseConfig {
  double mask_rate = 0.15;
  double p_mask_token = 0.8;
  double p_random = 0.1;
  double p_keep = 0.1;
  int shuffle_window = 3;
  double p_drop = 0.1;
  double p_pad = 0.1;

  void validate() const {
    const auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw NoiseError(std::string(name) + " must be in [0,1]");
    };
    prob(mask_rate, "mask_rate");
    prob(p_mask_token, "p_mask_token");
    prob(p_random, "p_random");
    prob(p_keep, "p_keep");
    prob(p_drop, "p_drop");
    prob(p_pad, "p_pad");
    if (std::abs(p_mask_token + p_random + p_keep - 1.0) > 1e-9) {
      throw NoiseError("p_mask_token + p_random + p_keep must equal 1");
    }
    if (mask_rate <= 0.0) throw NoiseError("mask_rate must be positive");
    if (shuffle_window < 1) throw NoiseError("shuffle_window must be >= 1");
  }
};

enum class MaskAction : std::uint8_t { Mask, Random, Keep };

/// Corrupted sequence plus the masked positions and their original ids.
struct MaskedExample {
  Sequence corrupted;
  std::vector<int> mask_positions;  // strictly increasing
  Sequence targets;                 // original ids at mask_positions
  std::vector<int> lang_tags;       // per position
  std::vector<MaskAction> actions;  // per masked position
};

struct NoisedExample {
  Sequence source;  // x̂
  Sequence target;  // pristine x
  int src_lang = 0;
  int tgt_lang = 0;
};

namespace detail {

inline void require_plain(const Sequence& x, const char* what) {
  if (x.empty()) throw NoiseError(std::string(what) + ": empty sentence");
  for (TokenId t : x) {
    if (special::is_special(t)) throw NoiseError(std::string(what) + ": sentence contains a special id");
  }
}

}  // namespace detail

/// Selects each position with probability mask_rate (at least one), then
/// applies [M] / random non-special token / keep.
template <RandomSource R>
MaskedExample mask_mlm(const Sequence& x, int lang, const NoiseConfig& cfg, R& rng, int vocab_size) {
  detail::require_plain(x, "mask_mlm");
  if (vocab_size <= special::kCount) throw NoiseError("mask_mlm: vocabulary has no ordinary tokens");
  MaskedExample ex;
  do {
    ex.mask_positions.clear();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (rng.uniform() < cfg.mask_rate) ex.mask_positions.push_back(static_cast<int>(i));
    }
  } while (ex.mask_positions.empty());

  ex.corrupted = x;
  ex.lang_tags.assign(x.size(), lang);
  for (int pos : ex.mask_positions) {
    const auto p = static_cast<std::size_t>(pos);
    ex.targets.push_back(x[p]);
    const double u = rng.uniform();
    if (u < cfg.p_mask_token) {
      ex.corrupted[p] = special::kMask;
      ex.actions.push_back(MaskAction::Mask);
    } else if (u < cfg.p_mask_token + cfg.p_random) {
      const auto span = static_cast<std::uint64_t>(vocab_size - special::kCount);
      ex.corrupted[p] = special::kCount + static_cast<TokenId>(rng.below(span));
      ex.actions.push_back(MaskAction::Random);
    } else {
      ex.actions.push_back(MaskAction::Keep);
    }
  }
  return ex;
}

/// Local shuffle (index + U[0,k) sort keys), then token drop, then [P] substitution.
template <RandomSource R>
NoisedExample noise_dae(const Sequence& x, int lang, const NoiseConfig& cfg, R& rng) {
  if (x.empty()) throw NoiseError("noise_dae: empty sentence");
  const std::size_t n = x.size();

  std::vector<double> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = static_cast<double>(i) + rng.uniform() * cfg.shuffle_window;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  std::vector<bool> keep(n);
  bool any = false;
  while (!any) {
    for (std::size_t i = 0; i < n; ++i) {
      keep[i] = !(rng.uniform() < cfg.p_drop);
      any = any || keep[i];
    }
  }

  NoisedExample ex;
  ex.target = x;
  ex.src_lang = ex.tgt_lang = lang;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) ex.source.push_back(x[order[i]]);
  }
  for (TokenId& t : ex.source) {
    if (rng.uniform() < cfg.p_pad) t = special::kPad;
  }
  return ex;
}

/// Masks both sides independently and joins them as x ⊕ [S] ⊕ y. [S]
/// carries the source language tag.
template <RandomSource R>
MaskedExample build_xmlm(const Sequence& x, const Sequence& y, int src_lang, int tgt_lang, const NoiseConfig& cfg,
                         R& rng, int vocab_size) {
  if (x.empty() || y.empty()) throw NoiseError("build_xmlm: both sides must be non-empty");
  MaskedExample mx = mask_mlm(x, src_lang, cfg, rng, vocab_size);
  MaskedExample my = mask_mlm(y, tgt_lang, cfg, rng, vocab_size);

  MaskedExample ex;
  ex.corrupted = std::move(mx.corrupted);
  ex.corrupted.push_back(special::kSep);
  ex.corrupted.insert(ex.corrupted.end(), my.corrupted.begin(), my.corrupted.end());
  ex.lang_tags = std::move(mx.lang_tags);
  ex.lang_tags.push_back(src_lang);
  ex.lang_tags.insert(ex.lang_tags.end(), my.lang_tags.begin(), my.lang_tags.end());
  ex.mask_positions = std::move(mx.mask_positions);
  const int offset = static_cast<int>(x.size()) + 1;
  for (int p : my.mask_positions) ex.mask_positions.push_back(p + offset);
  ex.targets = std::move(mx.targets);
  ex.targets.insert(ex.targets.end(), my.targets.begin(), my.targets.end());
  ex.actions = std::move(mx.actions);
  ex.actions.insert(ex.actions.end(), my.actions.begin(), my.actions.end());
  return ex;
}

}  // namespace xlg
