#include <catch_amalgamated.hpp>

#include <map>
#include <sstream>

#include "probeforge/control_task.hpp"
#include "support/fixtures.hpp"

using namespace probeforge;

namespace {

Vocabulary word_vocab(const std::vector<std::string>& words) {
  Vocabulary vocab;
  for (const std::string& w : words) vocab.add(w, SplitId::train);
  return vocab;
}

Sentence sentence_of(const std::vector<std::string>& words) {
  Sentence s;
  for (const std::string& w : words) s.tokens.push_back({w, 1, 0});
  return s;
}

}  // namespace

TEST_CASE("single-outcome distribution maps every type to tag 1") {
  const Vocabulary vocab = word_vocab({"a", "b", "c"});
  const std::vector<double> dist{1.0};
  const PosControlSpec spec = sample_pos_control(vocab, dist, 9);
  for (int behavior : spec.behavior) REQUIRE(behavior == 1);
}

TEST_CASE("invalid distributions are rejected") {
  const Vocabulary vocab = word_vocab({"a"});
  REQUIRE_THROWS_AS(sample_pos_control(vocab, std::vector<double>{0.5, -0.5, 1.0}, 1),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(sample_pos_control(vocab, std::vector<double>{0.5, 0.4}, 1),
                    std::invalid_argument);
}

TEST_CASE("control output is a fixed per-type label at every occurrence") {
  // behaviors as in the running two-sentence example
  const Vocabulary vocab = word_vocab({"The", "dog", "ran", "after", "!"});
  PosControlSpec spec;
  spec.source_dist.assign(45, 1.0 / 45.0);
  spec.behavior = {10, 15, 10, 42, 42};
  const std::vector<int> labels =
      apply_control_pos(sentence_of({"The", "dog", "ran", "after", "!"}), vocab, spec);
  REQUIRE(labels == std::vector<int>{10, 15, 10, 42, 42});
}

TEST_CASE("single-token sentence maps through its behavior") {
  const Vocabulary vocab = word_vocab({"x"});
  PosControlSpec spec;
  spec.source_dist.assign(10, 0.1);
  spec.behavior = {7};
  REQUIRE(apply_control_pos(sentence_of({"x"}), vocab, spec) == std::vector<int>{7});
}

TEST_CASE("pos control application equals a brute-force map lookup") {
  const Corpus corpus = fixtures::make_synthetic_corpus(
      {.num_types = 60, .num_tags = 9, .train_sentences = 40, .dev_sentences = 10});
  const Vocabulary vocab = build_vocabulary(corpus);
  const std::vector<double> dist = empirical_tag_distribution(corpus.train, corpus.tags.size());
  const PosControlSpec spec = sample_pos_control(vocab, dist, 31);
  for (const Sentence& sentence : corpus.train) {
    const std::vector<int> got = apply_control_pos(sentence, vocab, spec);
    for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
      const int expected = spec.behavior[size_t(vocab.id(sentence.tokens[i].form))];
      REQUIRE(got[i] == expected);
    }
  }
}

TEST_CASE("missing type signals a vocabulary/spec mismatch") {
  const Vocabulary vocab = word_vocab({"a"});
  PosControlSpec spec;
  spec.source_dist = {1.0};
  spec.behavior = {1};
  REQUIRE_THROWS_WITH(apply_control_pos(sentence_of({"zzz"}), vocab, spec),
                      Catch::Matchers::ContainsSubstring("no behavior for type 'zzz'"));
  DepControlSpec dspec;
  dspec.behavior = {DepBehavior::attach_self};
  REQUIRE_THROWS_AS(apply_control_dep(sentence_of({"zzz"}), vocab, dspec), std::out_of_range);
}

TEST_CASE("dependency behaviors expand to self/first/last heads") {
  std::vector<std::string> words(15);
  for (int i = 0; i < 15; ++i) words[size_t(i)] = "w" + std::to_string(i);
  words[5] = "will";  // position 6
  words[7] = "a";     // position 8
  const Vocabulary vocab = word_vocab(words);
  DepControlSpec spec;
  spec.behavior.assign(vocab.size(), DepBehavior::attach_self);
  spec.behavior[size_t(vocab.id("will"))] = DepBehavior::attach_last;
  spec.behavior[size_t(vocab.id("a"))] = DepBehavior::attach_first;
  const std::vector<int> heads = apply_control_dep(sentence_of(words), vocab, spec);
  REQUIRE(heads[5] == 15);  // "will" at position 6 attaches to the last token
  REQUIRE(heads[7] == 1);   // "a" at position 8 attaches to the first token
  REQUIRE(heads[0] == 1);   // self
  REQUIRE(heads[14] == 15);
}

TEST_CASE("all three behaviors coincide on a one-token sentence") {
  const Vocabulary vocab = word_vocab({"x"});
  for (DepBehavior b :
       {DepBehavior::attach_self, DepBehavior::attach_first, DepBehavior::attach_last}) {
    DepControlSpec spec;
    spec.behavior = {b};
    REQUIRE(apply_control_dep(sentence_of({"x"}), vocab, spec) == std::vector<int>{1});
  }
}

TEST_CASE("dependency control equals the i/1/T oracle on random sentences") {
  const Corpus corpus = fixtures::make_synthetic_corpus(
      {.num_types = 50, .num_tags = 5, .train_sentences = 200, .dev_sentences = 0, .seed = 77});
  const Vocabulary vocab = build_vocabulary(corpus);
  const DepControlSpec spec = sample_dep_control(vocab, 13);
  for (const Sentence& sentence : corpus.train) {
    const std::vector<int> heads = apply_control_dep(sentence, vocab, spec);
    const int t = sentence.length();
    for (int i = 1; i <= t; ++i) {
      int expected = 0;
      switch (spec.behavior[size_t(vocab.id(sentence.tokens[size_t(i - 1)].form))]) {
        case DepBehavior::attach_self: expected = i; break;
        case DepBehavior::attach_first: expected = 1; break;
        case DepBehavior::attach_last: expected = t; break;
      }
      REQUIRE(heads[size_t(i - 1)] == expected);
      const bool in_set = heads[size_t(i - 1)] == i || heads[size_t(i - 1)] == 1 ||
                          heads[size_t(i - 1)] == t;
      REQUIRE(in_set);
    }
  }
}

TEST_CASE("same seed reproduces specs exactly, different seeds differ") {
  std::vector<std::string> words(200);
  for (int i = 0; i < 200; ++i) words[size_t(i)] = "t" + std::to_string(i);
  const Vocabulary vocab = word_vocab(words);
  const std::vector<double> dist{0.3, 0.3, 0.2, 0.2};

  const PosControlSpec p1 = sample_pos_control(vocab, dist, 55);
  const PosControlSpec p2 = sample_pos_control(vocab, dist, 55);
  const PosControlSpec p3 = sample_pos_control(vocab, dist, 56);
  REQUIRE(p1.behavior == p2.behavior);
  REQUIRE(to_json(p1, vocab).dump() == to_json(p2, vocab).dump());
  REQUIRE(p1.behavior != p3.behavior);

  const DepControlSpec d1 = sample_dep_control(vocab, 55);
  const DepControlSpec d2 = sample_dep_control(vocab, 55);
  const DepControlSpec d3 = sample_dep_control(vocab, 56);
  REQUIRE(d1.behavior == d2.behavior);
  REQUIRE(d1.behavior != d3.behavior);
}

TEST_CASE("pos behavior marginals track the source distribution") {
  std::vector<std::string> words(50000);
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = "t" + std::to_string(i);
  const Vocabulary vocab = word_vocab(words);
  const std::vector<double> dist(45, 1.0 / 45.0);
  const PosControlSpec spec = sample_pos_control(vocab, dist, 2024);
  std::vector<double> freq(45, 0.0);
  for (int b : spec.behavior) freq[size_t(b - 1)] += 1.0 / double(words.size());
  for (double f : freq) REQUIRE_THAT(f, Catch::Matchers::WithinAbs(1.0 / 45.0, 0.01));
}

TEST_CASE("dep behavior marginals are near-uniform over the three options") {
  std::vector<std::string> words(30000);
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = "t" + std::to_string(i);
  const Vocabulary vocab = word_vocab(words);
  const DepControlSpec spec = sample_dep_control(vocab, 2025);
  std::vector<double> freq(3, 0.0);
  for (DepBehavior b : spec.behavior) freq[size_t(b)] += 1.0 / double(words.size());
  for (double f : freq) REQUIRE_THAT(f, Catch::Matchers::WithinAbs(1.0 / 3.0, 0.01));
}

TEST_CASE("ceiling arithmetic") {
  REQUIRE(control_ceiling(1.0, 0.5) == 1.0);
  REQUIRE_THAT(control_ceiling(0.0, 1.0 / 45.0), Catch::Matchers::WithinAbs(1.0 / 45.0, 1e-15));
  REQUIRE_THAT(control_ceiling(0.9, 1.0 / 45.0), Catch::Matchers::WithinAbs(0.9022222222, 1e-9));
  REQUIRE_THROWS_AS(control_ceiling(0.5, 1.5), std::invalid_argument);
}

TEST_CASE("coverage-based ceiling on a corpus with held-out dev types") {
  const Corpus corpus = fixtures::make_synthetic_corpus({.num_types = 50,
                                                         .num_tags = 5,
                                                         .train_sentences = 60,
                                                         .dev_sentences = 20,
                                                         .dev_len = 10,
                                                         .unseen_per_dev_sentence = 1,
                                                         .held_out_types = 10});
  const Vocabulary vocab = build_vocabulary(corpus);
  const std::vector<bool> seen = train_seen_types(corpus.train, vocab);
  const double coverage = train_type_coverage(corpus.dev, vocab, seen);
  REQUIRE_THAT(coverage, Catch::Matchers::WithinAbs(0.9, 1e-12));
  const double ceiling = control_ceiling(corpus.dev, vocab, seen, 0.2);
  REQUIRE_THAT(ceiling, Catch::Matchers::WithinAbs(0.9 + 0.2 * 0.1, 1e-12));
  REQUIRE_THROWS_AS(train_type_coverage(Split{}, vocab, seen), std::invalid_argument);
}

TEST_CASE("chance accuracy conventions") {
  REQUIRE(pos_chance_accuracy(std::vector<double>{0.5, 0.3, 0.2}) == 0.5);
  Split eval;
  eval.push_back(sentence_of({"a", "b"}));                 // T=2 -> 1/2 per token
  eval.push_back(sentence_of({"a", "b", "c", "d"}));       // T=4 -> 1/4 per token
  // token-averaged: (2*(1/2) + 4*(1/4)) / 6 = 1/3
  REQUIRE_THAT(dep_chance_accuracy(eval), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
}

TEST_CASE("control specs round-trip through JSON exactly") {
  std::vector<std::string> words(40);
  for (int i = 0; i < 40; ++i) words[size_t(i)] = "t" + std::to_string(i);
  const Vocabulary vocab = word_vocab(words);

  const std::vector<double> dist{0.25, 0.25, 0.25, 0.25};
  const PosControlSpec pos = sample_pos_control(vocab, dist, 321);
  const nlohmann::json pos_doc = to_json(pos, vocab);
  const PosControlSpec pos_back = pos_control_from_json(pos_doc, vocab);
  REQUIRE(pos_back.seed == pos.seed);
  REQUIRE(pos_back.behavior == pos.behavior);
  REQUIRE(to_json(pos_back, vocab).dump() == pos_doc.dump());

  const DepControlSpec dep = sample_dep_control(vocab, 321);
  const nlohmann::json dep_doc = to_json(dep, vocab);
  const DepControlSpec dep_back = dep_control_from_json(dep_doc, vocab);
  REQUIRE(dep_back.behavior == dep.behavior);
  REQUIRE(to_json(dep_back, vocab).dump() == dep_doc.dump());

  SECTION("unknown types and missing types are rejected") {
    const Vocabulary small = word_vocab({"t0"});
    REQUIRE_THROWS_WITH(pos_control_from_json(pos_doc, small),
                        Catch::Matchers::ContainsSubstring("unknown type"));
    nlohmann::json pruned = pos_doc;
    pruned["behavior"].erase("t3");
    REQUIRE_THROWS_WITH(pos_control_from_json(pruned, vocab),
                        Catch::Matchers::ContainsSubstring("missing behavior"));
  }
}
