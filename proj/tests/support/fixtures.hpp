#pragma once

// Deterministic synthetic corpora and filesystem helpers shared by the unit
// and acceptance suites.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "probeforge/control_task.hpp"
#include "probeforge/corpus.hpp"
#include "probeforge/rng.hpp"

namespace fixtures {

using probeforge::Corpus;
using probeforge::Rng;
using probeforge::Sentence;
using probeforge::Split;
using probeforge::Token;

struct SynthSpec {
  std::size_t num_types = 100;      // training type pool w0..w(n-1)
  int num_tags = 10;
  std::size_t train_sentences = 50;
  std::size_t dev_sentences = 20;
  int train_len_min = 4;
  int train_len_max = 9;
  int dev_len = 10;
  int unseen_per_dev_sentence = 0;  // dev tokens per sentence from a held-out pool
  std::size_t held_out_types = 0;   // size of that pool (u0..)
  std::uint64_t seed = 123;
};

inline std::string type_form(std::size_t id, bool held_out) {
  std::ostringstream name;
  name << (held_out ? 'u' : 'w');
  name << id;
  return name.str();
}

// Gold tag of a type: round-robin over the tagset, so the empirical tag
// distribution is near-uniform. Gold heads form a flat tree (root at 1).
inline Token make_token(std::size_t type_id, bool held_out, int position, int num_tags) {
  Token token;
  token.form = type_form(type_id, held_out);
  token.tag_id = static_cast<int>(type_id % static_cast<std::size_t>(num_tags)) + 1;
  token.head = position == 1 ? 0 : 1;
  return token;
}

inline Corpus make_synthetic_corpus(const SynthSpec& spec) {
  Corpus corpus;
  for (int k = 1; k <= spec.num_tags; ++k) {
    std::ostringstream label;
    label << 'T' << k;
    corpus.tags.id_or_add(label.str());
  }

  Rng rng(probeforge::derive_stream(spec.seed, 0xf1f1));
  std::vector<bool> seen(spec.num_types, false);
  for (std::size_t s = 0; s < spec.train_sentences; ++s) {
    const int len = spec.train_len_min +
                    static_cast<int>(rng.next_below(
                        static_cast<std::uint64_t>(spec.train_len_max - spec.train_len_min + 1)));
    Sentence sentence;
    for (int i = 1; i <= len; ++i) {
      const std::size_t type_id = rng.next_below(spec.num_types);
      seen[type_id] = true;
      sentence.tokens.push_back(make_token(type_id, false, i, spec.num_tags));
    }
    corpus.train.push_back(std::move(sentence));
  }

  // Seen dev tokens draw only from types that actually occurred in training,
  // so coverage is exactly 1 - unseen_per_dev_sentence / dev_len.
  std::vector<std::size_t> seen_pool;
  for (std::size_t t = 0; t < spec.num_types; ++t)
    if (seen[t]) seen_pool.push_back(t);

  for (std::size_t s = 0; s < spec.dev_sentences; ++s) {
    Sentence sentence;
    std::vector<bool> unseen_slot(static_cast<std::size_t>(spec.dev_len), false);
    int placed = 0;
    while (placed < spec.unseen_per_dev_sentence) {
      const std::size_t slot = rng.next_below(static_cast<std::uint64_t>(spec.dev_len));
      if (unseen_slot[slot]) continue;
      unseen_slot[slot] = true;
      ++placed;
    }
    for (int i = 1; i <= spec.dev_len; ++i) {
      if (unseen_slot[static_cast<std::size_t>(i - 1)]) {
        const std::size_t type_id = rng.next_below(spec.held_out_types);
        sentence.tokens.push_back(make_token(type_id, true, i, spec.num_tags));
      } else {
        const std::size_t type_id = seen_pool[rng.next_below(seen_pool.size())];
        sentence.tokens.push_back(make_token(type_id, false, i, spec.num_tags));
      }
    }
    corpus.dev.push_back(std::move(sentence));
  }
  return corpus;
}

// Unique scratch directory under the build tree's temp space.
inline std::filesystem::path scratch_dir(const std::string& label) {
  static std::uint64_t counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("probeforge_" + label + "_" + std::to_string(++counter));
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_corpus_files(const Corpus& corpus, const std::filesystem::path& dir,
                               const probeforge::ColumnSchema& schema) {
  auto emit = [&](const Split& split, const char* name) {
    std::ofstream out(dir / (std::string(name) + ".tsv"), std::ios::trunc);
    probeforge::emit_split(out, split, corpus.tags, schema);
  };
  emit(corpus.train, "train");
  emit(corpus.dev, "dev");
  if (!corpus.test.empty()) emit(corpus.test, "test");
}

}  // namespace fixtures
