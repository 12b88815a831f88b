#pragma once

// Corpus ingestion: tab-separated annotated sentences, a tag inventory shared
// across splits, a vocabulary over word types, the empirical tag distribution
// and seeded training-set subsampling.
//
// File format: one token per line, tab-separated columns named by a schema
// (default "index,form,tag,head"), sentences separated by a single blank
// line, lines starting with '#' ignored. A blank line that would close an
// empty sentence is an error rather than being skipped, so representation
// files can never silently fall out of alignment with the corpus.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "probeforge/rng.hpp"

namespace probeforge {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Token {
  std::string form;
  int tag_id = 0;  // 1..K
  int head = 0;    // 0 = root; 1..T otherwise
};

struct Sentence {
  std::vector<Token> tokens;
  int length() const { return static_cast<int>(tokens.size()); }
};

using Split = std::vector<Sentence>;

enum class SplitId { train = 0, dev = 1, test = 2 };

inline const char* split_name(SplitId s) {
  switch (s) {
    case SplitId::train: return "train";
    case SplitId::dev: return "dev";
    default: return "test";
  }
}

// Tag label <-> id bimap. Ids are dense 1..K in first-occurrence order
// (train, then dev, then test), so the inventory is the union over splits.
class TagInventory {
 public:
  int id_or_add(const std::string& label) {
    auto it = ids_.find(label);
    if (it != ids_.end()) return it->second;
    labels_.push_back(label);
    const int id = static_cast<int>(labels_.size());
    ids_.emplace(label, id);
    return id;
  }

  int id(const std::string& label) const {
    auto it = ids_.find(label);
    return it == ids_.end() ? 0 : it->second;
  }

  const std::string& label(int id) const {
    if (id < 1 || id > static_cast<int>(labels_.size()))
      throw std::out_of_range("TagInventory::label: id " + std::to_string(id));
    return labels_[static_cast<std::size_t>(id) - 1];
  }

  int size() const { return static_cast<int>(labels_.size()); }

  bool operator==(const TagInventory& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> ids_;
};

// Word type <-> id bimap with per-split membership flags. Ids are dense
// 0..|V|-1 in first-occurrence order over train, then dev, then test. Types
// are case-sensitive and not normalized.
class Vocabulary {
 public:
  void add(const std::string& type, SplitId split) {
    auto it = ids_.find(type);
    std::int32_t id;
    if (it == ids_.end()) {
      id = static_cast<std::int32_t>(types_.size());
      types_.push_back(type);
      flags_.push_back(0);
      ids_.emplace(type, id);
    } else {
      id = it->second;
    }
    flags_[static_cast<std::size_t>(id)] |= flag_of(split);
  }

  // -1 when the type is unknown.
  std::int32_t id(const std::string& type) const {
    auto it = ids_.find(type);
    return it == ids_.end() ? -1 : it->second;
  }

  const std::string& type(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= types_.size())
      throw std::out_of_range("Vocabulary::type: id " + std::to_string(id));
    return types_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return types_.size(); }

  bool seen_in(std::int32_t id, SplitId split) const {
    return (flags_.at(static_cast<std::size_t>(id)) & flag_of(split)) != 0;
  }

  bool operator==(const Vocabulary& other) const {
    return types_ == other.types_ && flags_ == other.flags_;
  }

 private:
  static std::uint8_t flag_of(SplitId split) {
    return static_cast<std::uint8_t>(1u << static_cast<int>(split));
  }

  std::vector<std::string> types_;
  std::vector<std::uint8_t> flags_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

struct Corpus {
  Split train, dev, test;
  TagInventory tags;

  const Split& split(SplitId s) const {
    switch (s) {
      case SplitId::train: return train;
      case SplitId::dev: return dev;
      default: return test;
    }
  }
};

// Column layout of a corpus file. Recognized names: index, form, tag, head;
// "_" or "ignore" skips a column. form and tag are required, head optional.
struct ColumnSchema {
  int index_col = -1;
  int form_col = -1;
  int tag_col = -1;
  int head_col = -1;
  int column_count = 0;
  std::string text;

  bool has_head() const { return head_col >= 0; }

  static ColumnSchema parse(const std::string& spec) {
    ColumnSchema schema;
    schema.text = spec;
    std::stringstream ss(spec);
    std::string name;
    int col = 0;
    while (std::getline(ss, name, ',')) {
      if (name == "index") schema.index_col = col;
      else if (name == "form") schema.form_col = col;
      else if (name == "tag") schema.tag_col = col;
      else if (name == "head") schema.head_col = col;
      else if (name == "_" || name == "ignore") {}
      else throw ParseError("unknown schema column '" + name + "' in '" + spec + "'");
      ++col;
    }
    schema.column_count = col;
    if (schema.form_col < 0 || schema.tag_col < 0)
      throw ParseError("schema '" + spec + "' must name form and tag columns");
    return schema;
  }
};

inline ColumnSchema default_schema() { return ColumnSchema::parse("index,form,tag,head"); }

namespace detail {

inline bool parse_int(const std::string& text, long& out) {
  if (text.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stol(text, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == text.size();
}

inline void finish_sentence(Sentence& sentence, Split& split, const ColumnSchema& schema,
                            const std::string& where, long line_no) {
  const int t = sentence.length();
  if (schema.has_head()) {
    int roots = 0;
    for (int i = 0; i < t; ++i) {
      const Token& tok = sentence.tokens[static_cast<std::size_t>(i)];
      if (tok.head > t)
        throw ParseError(where + ": head " + std::to_string(tok.head) + " of token " +
                         std::to_string(i + 1) + " exceeds sentence length " + std::to_string(t) +
                         " (sentence ending before line " + std::to_string(line_no) + ")");
      if (tok.head == 0) ++roots;
    }
    if (roots != 1)
      throw ParseError(where + ": sentence ending before line " + std::to_string(line_no) +
                       " has " + std::to_string(roots) + " root tokens (expected exactly 1)");
  }
  split.push_back(std::move(sentence));
  sentence = Sentence{};
}

}  // namespace detail

// Parses one split. Tags are interned into the shared inventory in order of
// first occurrence. Errors carry the offending line number.
inline Split parse_corpus(std::istream& in, const ColumnSchema& schema, TagInventory& tags,
                          const std::string& where = "<stream>") {
  Split split;
  Sentence current;
  long line_no = 0;
  std::string line;
  std::vector<std::string> fields;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == '#') continue;
    if (line.empty()) {
      if (current.tokens.empty())
        throw ParseError(where + ": empty sentence at line " + std::to_string(line_no));
      detail::finish_sentence(current, split, schema, where, line_no);
      continue;
    }

    fields.clear();
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (static_cast<int>(fields.size()) < schema.column_count)
      throw ParseError(where + ": line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " columns, schema '" + schema.text +
                       "' needs " + std::to_string(schema.column_count));

    Token token;
    token.form = fields[static_cast<std::size_t>(schema.form_col)];
    if (token.form.empty())
      throw ParseError(where + ": empty form at line " + std::to_string(line_no));
    token.tag_id = tags.id_or_add(fields[static_cast<std::size_t>(schema.tag_col)]);

    if (schema.index_col >= 0) {
      long index = 0;
      const std::string& text = fields[static_cast<std::size_t>(schema.index_col)];
      if (!detail::parse_int(text, index))
        throw ParseError(where + ": non-integer token index '" + text + "' at line " +
                         std::to_string(line_no));
      const long expected = current.length() + 1;
      if (index != expected) {
        const bool duplicate = index >= 1 && index <= current.length();
        throw ParseError(where + ": " + (duplicate ? "duplicate" : "non-consecutive") +
                         " token index " + std::to_string(index) + " at line " +
                         std::to_string(line_no) + " (expected " + std::to_string(expected) + ")");
      }
    }

    if (schema.has_head()) {
      long head = 0;
      const std::string& text = fields[static_cast<std::size_t>(schema.head_col)];
      if (!detail::parse_int(text, head) || head < 0)
        throw ParseError(where + ": non-integer head '" + text + "' at line " +
                         std::to_string(line_no));
      token.head = static_cast<int>(head);
    }

    current.tokens.push_back(std::move(token));
  }

  if (!current.tokens.empty())
    detail::finish_sentence(current, split, schema, where, line_no + 1);
  return split;
}

// Inverse of parse_corpus for the logical content: one token per line in the
// schema's column order, blank line between sentences.
inline void emit_split(std::ostream& out, const Split& split, const TagInventory& tags,
                       const ColumnSchema& schema) {
  std::vector<std::string> fields;
  for (std::size_t s = 0; s < split.size(); ++s) {
    if (s > 0) out << '\n';
    const Sentence& sentence = split[s];
    for (int i = 0; i < sentence.length(); ++i) {
      const Token& token = sentence.tokens[static_cast<std::size_t>(i)];
      fields.assign(static_cast<std::size_t>(schema.column_count), "_");
      if (schema.index_col >= 0) fields[static_cast<std::size_t>(schema.index_col)] = std::to_string(i + 1);
      fields[static_cast<std::size_t>(schema.form_col)] = token.form;
      fields[static_cast<std::size_t>(schema.tag_col)] = tags.label(token.tag_id);
      if (schema.head_col >= 0) fields[static_cast<std::size_t>(schema.head_col)] = std::to_string(token.head);
      for (std::size_t f = 0; f < fields.size(); ++f) {
        if (f > 0) out << '\t';
        out << fields[f];
      }
      out << '\n';
    }
  }
}

enum class VocabScope { all_splits, train_only };

// Word types over the corpus. The default scope covers every split so control
// behaviors are defined for all tokens; train_only implements the narrower
// reading where V holds only training types.
inline Vocabulary build_vocabulary(const Corpus& corpus, VocabScope scope = VocabScope::all_splits) {
  Vocabulary vocab;
  for (SplitId s : {SplitId::train, SplitId::dev, SplitId::test}) {
    if (scope == VocabScope::train_only && s != SplitId::train) continue;
    for (const Sentence& sentence : corpus.split(s))
      for (const Token& token : sentence.tokens) vocab.add(token.form, s);
  }
  return vocab;
}

// P(tag k) over training tokens; entry [k-1] belongs to tag id k.
inline std::vector<double> empirical_tag_distribution(const Split& train, int num_tags) {
  std::vector<double> counts(static_cast<std::size_t>(num_tags), 0.0);
  double total = 0.0;
  for (const Sentence& sentence : train)
    for (const Token& token : sentence.tokens) {
      if (token.tag_id < 1 || token.tag_id > num_tags)
        throw std::out_of_range("empirical_tag_distribution: tag id out of range");
      counts[static_cast<std::size_t>(token.tag_id) - 1] += 1.0;
      total += 1.0;
    }
  if (total == 0.0)
    throw std::invalid_argument("empirical_tag_distribution: empty train split");
  for (double& c : counts) c /= total;
  return counts;
}

// Uniformly random n-subset of 0..total-1 in increasing order; deterministic
// in the seed. Shared by corpus and representation subsampling so both pick
// the same sentences.
inline std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t n,
                                                  std::uint64_t seed) {
  if (n > total)
    throw std::invalid_argument("subsample_indices: n=" + std::to_string(n) +
                                " exceeds population size " + std::to_string(total));
  std::vector<std::size_t> indices(total);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  Rng rng(derive_stream(seed, 0x5ab5a17ull));
  rng.shuffle(indices);
  indices.resize(n);
  std::sort(indices.begin(), indices.end());
  return indices;
}

// Uniformly random n-subset of training sentences, file order preserved.
// Deterministic in the seed; dev/test pass through untouched.
inline Corpus subsample_train(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  const std::vector<std::size_t> indices = subsample_indices(corpus.train.size(), n, seed);
  Corpus out;
  out.tags = corpus.tags;
  out.dev = corpus.dev;
  out.test = corpus.test;
  out.train.reserve(n);
  for (std::size_t idx : indices) out.train.push_back(corpus.train[idx]);
  return out;
}

}  // namespace probeforge
