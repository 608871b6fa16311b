#include "xlg/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace xlg {

namespace {

constexpr std::string_view kModeHeader = "#MODE";
constexpr std::string_view kLanguagesHeader = "#LANGUAGES";
constexpr std::string_view kMergesHeader = "#MERGES";

bool is_special_name(std::string_view s) {
  for (const char* name : special::kNames) {
    if (s == name) return true;
  }
  return false;
}

std::string join_units(const std::string& left, const std::string& right, BaseUnit unit) {
  return unit == BaseUnit::Symbol ? left + " " + right : left + right;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

// Merges every left-to-right occurrence of `pair` in place.
void apply_merge(std::vector<std::string>& units, const MergeRule& pair, const std::string& merged) {
  std::vector<std::string> out;
  out.reserve(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i + 1 < units.size() && units[i] == pair.first && units[i + 1] == pair.second) {
      out.push_back(merged);
      ++i;
    } else {
      out.push_back(units[i]);
    }
  }
  units = std::move(out);
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

LanguageSet::LanguageSet(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw VocabError("language name must be non-empty");
    if (n.find_first_of(" \t\n") != std::string::npos) {
      throw VocabError("language name contains whitespace: '" + n + "'");
    }
    if (!seen.insert(n).second) throw VocabError("duplicate language name '" + n + "'");
  }
}

LanguageTag LanguageSet::at(int id) const {
  if (id < 0 || id >= size()) throw VocabError("language id out of range: " + std::to_string(id));
  return {id, names_[static_cast<std::size_t>(id)]};
}

LanguageTag LanguageSet::tag(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return {static_cast<int>(i), names_[i]};
  }
  throw VocabError("unknown language '" + std::string(name) + "'");
}

bool LanguageSet::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw VocabError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                     std::to_string(size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenId Vocab::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

void Vocab::add_token(const std::string& token) {
  if (token_to_id_.count(token)) return;
  token_to_id_.emplace(token, static_cast<TokenId>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

std::vector<std::string> Vocab::split_units(std::string_view text) const {
  std::vector<std::string> units;
  for (const auto& word : split_whitespace(text)) {
    if (base_unit_ == BaseUnit::Symbol) {
      units.push_back(word);
    } else {
      for (char c : word) units.emplace_back(1, c);
      units.emplace_back(kEndOfWord);
    }
  }
  return units;
}

Sequence Vocab::encode(std::string_view text) const {
  std::map<MergeRule, std::size_t> rank;
  for (std::size_t i = 0; i < merges_.size(); ++i) rank.emplace(merges_[i], i);

  // Merges never cross sentence (symbol mode) or word (char mode) boundaries.
  std::vector<std::vector<std::string>> pieces;
  if (base_unit_ == BaseUnit::Symbol) {
    pieces.push_back(split_units(text));
  } else {
    for (const auto& word : split_whitespace(text)) pieces.push_back(split_units(word));
  }

  Sequence ids;
  for (auto& units : pieces) {
    while (units.size() > 1 && !rank.empty()) {
      std::size_t best = std::numeric_limits<std::size_t>::max();
      for (std::size_t i = 0; i + 1 < units.size(); ++i) {
        const auto it = rank.find({units[i], units[i + 1]});
        if (it != rank.end()) best = std::min(best, it->second);
      }
      if (best == std::numeric_limits<std::size_t>::max()) break;
      const auto& rule = merges_[best];
      apply_merge(units, rule, join_units(rule.first, rule.second, base_unit_));
    }
    for (const auto& u : units) {
      ids.push_back(is_special_name(u) ? special::kUnk : id(u));
    }
  }
  return ids;
}

std::string Vocab::decode(const Sequence& ids) const {
  std::string out;
  if (base_unit_ == BaseUnit::Symbol) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }
  for (TokenId id : ids) {
    const std::string& t = token(id);
    if (special::is_special(id)) {
      out += t;
      out += ' ';
      continue;
    }
    std::size_t start = 0;
    while (true) {
      const auto pos = t.find(kEndOfWord, start);
      if (pos == std::string::npos) {
        out.append(t, start);
        break;
      }
      out.append(t, start, pos - start);
      out += ' ';
      start = pos + kEndOfWord.size();
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

Vocab learn_vocab(const std::vector<Vocab::TokenStream>& corpora, int num_merges, BaseUnit base_unit,
                  const LanguageSet& languages) {
  if (num_merges < 0) throw VocabError("num_merges must be non-negative");
  bool any = false;
  for (const auto& c : corpora) {
    for (const auto& s : c) {
      if (!split_whitespace(s).empty()) any = true;
    }
  }
  if (!any) throw VocabError("empty training data");

  Vocab v;
  v.base_unit_ = base_unit;
  v.languages_ = languages;
  for (const char* name : special::kNames) v.add_token(name);

  // Unit sequences with multiplicities; map order keeps counting deterministic.
  std::map<std::vector<std::string>, long long> seqs;
  std::set<std::string> base;
  for (const auto& corpus : corpora) {
    for (const auto& sentence : corpus) {
      if (base_unit == BaseUnit::Symbol) {
        auto units = v.split_units(sentence);
        if (units.empty()) continue;
        for (const auto& u : units) base.insert(u);
        ++seqs[std::move(units)];
      } else {
        for (const auto& word : split_whitespace(sentence)) {
          auto units = v.split_units(word);
          for (const auto& u : units) base.insert(u);
          ++seqs[std::move(units)];
        }
      }
    }
  }
  for (const auto& b : base) {
    if (!is_special_name(b)) v.add_token(b);
  }

  for (int m = 0; m < num_merges; ++m) {
    std::map<MergeRule, long long> counts;
    for (const auto& [units, n] : seqs) {
      for (std::size_t i = 0; i + 1 < units.size(); ++i) counts[{units[i], units[i + 1]}] += n;
    }
    // Strictly-greater keeps the lexicographically first pair on ties.
    const MergeRule* best = nullptr;
    long long best_count = 1;
    for (const auto& [pair, n] : counts) {
      if (n > best_count) {
        best = &pair;
        best_count = n;
      }
    }
    if (!best) break;
    const MergeRule rule = *best;
    const std::string merged = join_units(rule.first, rule.second, base_unit);
    std::map<std::vector<std::string>, long long> next;
    for (const auto& [units, n] : seqs) {
      auto copy = units;
      apply_merge(copy, rule, merged);
      next[std::move(copy)] += n;
    }
    seqs = std::move(next);
    v.merges_.push_back(rule);
    v.add_token(merged);
  }
  return v;
}

std::string Vocab::serialize() const {
  std::ostringstream os;
  os << kModeHeader << '\t' << (base_unit_ == BaseUnit::Symbol ? "symbol" : "char") << '\n';
  os << kLanguagesHeader;
  for (const auto& n : languages_.names()) os << '\t' << n;
  os << '\n';
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) os << id_to_token_[i] << '\t' << i << '\n';
  os << kMergesHeader << '\n';
  for (const auto& [l, r] : merges_) os << l << '\t' << r << '\n';
  return os.str();
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VocabError("cannot open " + path.string() + " for writing");
  out << serialize();
  if (!out) throw VocabError("failed writing " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabError("cannot open vocabulary file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str());
  } catch (const VocabError& e) {
    throw VocabError(path.string() + ": " + e.what());
  }
}

Vocab Vocab::parse(std::string_view contents) {
  Vocab v;
  enum class Section { Header, Tokens, Merges } section = Section::Header;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool saw_mode = false;
  std::vector<std::size_t> merge_lines;
  while (start < contents.size()) {
    auto end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    const std::string_view line = contents.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const auto fail = [&](const std::string& why) {
      throw VocabError("line " + std::to_string(line_no) + ": " + why);
    };
    const auto fields = split_tabs(line);
    if (section != Section::Merges && fields[0] == kModeHeader) {
      if (fields.size() != 2 || (fields[1] != "symbol" && fields[1] != "char")) fail("bad #MODE line");
      v.base_unit_ = fields[1] == "symbol" ? BaseUnit::Symbol : BaseUnit::Char;
      saw_mode = true;
      continue;
    }
    if (section != Section::Merges && fields[0] == kLanguagesHeader) {
      v.languages_ = LanguageSet(std::vector<std::string>(fields.begin() + 1, fields.end()));
      continue;
    }
    if (fields[0] == kMergesHeader && fields.size() == 1) {
      section = Section::Merges;
      continue;
    }
    if (section == Section::Merges) {
      if (fields.size() != 2) fail("merge line must hold exactly two tab-separated units");
      v.merges_.emplace_back(fields[0], fields[1]);
      merge_lines.push_back(line_no);
      continue;
    }
    section = Section::Tokens;
    if (fields.size() != 2) fail("token line must be token<TAB>id");
    std::size_t pos = 0;
    long long parsed = -1;
    try {
      parsed = std::stoll(fields[1], &pos);
    } catch (const std::exception&) {
      fail("bad id '" + fields[1] + "'");
    }
    if (pos != fields[1].size() || parsed != static_cast<long long>(v.id_to_token_.size())) {
      fail("ids must be dense and in order; expected " + std::to_string(v.id_to_token_.size()));
    }
    if (v.token_to_id_.count(fields[0])) fail("duplicate token '" + fields[0] + "'");
    v.add_token(fields[0]);
  }
  if (!saw_mode) throw VocabError("missing #MODE header");
  if (v.size() < special::kCount) throw VocabError("vocabulary lacks the special tokens");
  for (int i = 0; i < special::kCount; ++i) {
    if (v.id_to_token_[static_cast<std::size_t>(i)] != special::kNames[i]) {
      throw VocabError("special token at id " + std::to_string(i) + " must be " + special::kNames[i]);
    }
  }
  for (std::size_t i = 0; i < v.merges_.size(); ++i) {
    const auto& [l, r] = v.merges_[i];
    if (!v.contains(join_units(l, r, v.base_unit_))) {
      throw VocabError("line " + std::to_string(merge_lines[i]) + ": merge output '" + join_units(l, r, v.base_unit_) +
                       "' missing from vocabulary");
    }
  }
  return v;
}

}  // namespace xlg
