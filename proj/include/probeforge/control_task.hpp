#pragma once

// Control tasks: per-word-type behaviors sampled independently at random,
// expanded into per-token labels. A control task shares the linguistic task's
// output space but is learnable only by memorizing the type-to-behavior map,
// which makes it the yardstick behind selectivity.
//
// Sampling draws one behavior per type from the sub-stream
// derive_stream(seed, type_id), so a spec is a pure function of
// (vocabulary, distribution, seed) and independent of iteration order.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "probeforge/corpus.hpp"
#include "probeforge/rng.hpp"

namespace probeforge {

// POS control: each type is pinned to one tag drawn from a source
// distribution (typically the empirical training tag distribution).
struct PosControlSpec {
  std::uint64_t seed = 0;
  std::vector<int> behavior;        // type id -> tag id in 1..K
  std::vector<double> source_dist;  // size K; entry [k-1] is P(tag k)

  int num_tags() const { return static_cast<int>(source_dist.size()); }
};

enum class DepBehavior : std::uint8_t { attach_self = 0, attach_first = 1, attach_last = 2 };

inline const char* dep_behavior_name(DepBehavior b) {
  switch (b) {
    case DepBehavior::attach_self: return "self";
    case DepBehavior::attach_first: return "first";
    default: return "last";
  }
}

inline DepBehavior dep_behavior_from_name(const std::string& name) {
  if (name == "self") return DepBehavior::attach_self;
  if (name == "first") return DepBehavior::attach_first;
  if (name == "last") return DepBehavior::attach_last;
  throw std::invalid_argument("unknown dependency behavior '" + name + "'");
}

// Dependency control: each type always attaches to itself, the first token,
// or the last token. Length-independent, yet it fully specifies the head.
struct DepControlSpec {
  std::uint64_t seed = 0;
  std::vector<DepBehavior> behavior;  // type id -> behavior
};

inline void validate_distribution(std::span<const double> dist) {
  if (dist.empty()) throw std::invalid_argument("control distribution is empty");
  double sum = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw std::invalid_argument("control distribution has a negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("control distribution sums to " + std::to_string(sum) +
                                ", expected 1");
}

inline PosControlSpec sample_pos_control(const Vocabulary& vocab, std::span<const double> dist,
                                         std::uint64_t seed) {
  validate_distribution(dist);
  PosControlSpec spec;
  spec.seed = seed;
  spec.source_dist.assign(dist.begin(), dist.end());
  spec.behavior.resize(vocab.size());
  for (std::size_t type_id = 0; type_id < vocab.size(); ++type_id) {
    Rng rng(derive_stream(seed, type_id));
    spec.behavior[type_id] = static_cast<int>(sample_categorical(rng, dist)) + 1;
  }
  return spec;
}

inline DepControlSpec sample_dep_control(const Vocabulary& vocab, std::uint64_t seed) {
  DepControlSpec spec;
  spec.seed = seed;
  spec.behavior.resize(vocab.size());
  for (std::size_t type_id = 0; type_id < vocab.size(); ++type_id) {
    Rng rng(derive_stream(seed, type_id));
    spec.behavior[type_id] = static_cast<DepBehavior>(rng.next_below(3));
  }
  return spec;
}

namespace detail {

inline std::int32_t spec_type_id(const Vocabulary& vocab, const std::string& form,
                                 std::size_t spec_size) {
  const std::int32_t id = vocab.id(form);
  if (id < 0 || static_cast<std::size_t>(id) >= spec_size)
    throw std::out_of_range("control spec has no behavior for type '" + form +
                            "' (vocabulary/spec mismatch)");
  return id;
}

}  // namespace detail

// Per-token control labels: output_i = behavior(type(x_i)).
inline std::vector<int> apply_control_pos(const Sentence& sentence, const Vocabulary& vocab,
                                          const PosControlSpec& spec) {
  std::vector<int> labels;
  labels.reserve(sentence.tokens.size());
  for (const Token& token : sentence.tokens)
    labels.push_back(spec.behavior[static_cast<std::size_t>(
        detail::spec_type_id(vocab, token.form, spec.behavior.size()))]);
  return labels;
}

// Per-token control heads, each in 1..T: self -> i, first -> 1, last -> T.
inline std::vector<int> apply_control_dep(const Sentence& sentence, const Vocabulary& vocab,
                                          const DepControlSpec& spec) {
  const int t = sentence.length();
  std::vector<int> heads;
  heads.reserve(sentence.tokens.size());
  for (int i = 1; i <= t; ++i) {
    const Token& token = sentence.tokens[static_cast<std::size_t>(i - 1)];
    switch (spec.behavior[static_cast<std::size_t>(
        detail::spec_type_id(vocab, token.form, spec.behavior.size()))]) {
      case DepBehavior::attach_self: heads.push_back(i); break;
      case DepBehavior::attach_first: heads.push_back(1); break;
      case DepBehavior::attach_last: heads.push_back(t); break;
    }
  }
  return heads;
}

// Word types that occur in the given training split, as flags by type id.
inline std::vector<bool> train_seen_types(const Split& train, const Vocabulary& vocab) {
  std::vector<bool> seen(vocab.size(), false);
  for (const Sentence& sentence : train)
    for (const Token& token : sentence.tokens) {
      const std::int32_t id = vocab.id(token.form);
      if (id >= 0) seen[static_cast<std::size_t>(id)] = true;
    }
  return seen;
}

// Fraction of eval tokens whose type occurs in the training set.
inline double train_type_coverage(const Split& eval_split, const Vocabulary& vocab,
                                  const std::vector<bool>& seen) {
  long long covered = 0, total = 0;
  for (const Sentence& sentence : eval_split)
    for (const Token& token : sentence.tokens) {
      ++total;
      const std::int32_t id = vocab.id(token.form);
      if (id >= 0 && static_cast<std::size_t>(id) < seen.size() &&
          seen[static_cast<std::size_t>(id)])
        ++covered;
    }
  if (total == 0) throw std::invalid_argument("train_type_coverage: empty eval split");
  return static_cast<double>(covered) / static_cast<double>(total);
}

// Maximum control accuracy: coverage + chance * (1 - coverage).
inline double control_ceiling(double coverage, double chance_accuracy) {
  if (chance_accuracy < 0.0 || chance_accuracy > 1.0)
    throw std::invalid_argument("control_ceiling: chance accuracy outside [0,1]");
  return coverage + chance_accuracy * (1.0 - coverage);
}

inline double control_ceiling(const Split& eval_split, const Vocabulary& vocab,
                              const std::vector<bool>& seen, double chance_accuracy) {
  return control_ceiling(train_type_coverage(eval_split, vocab, seen), chance_accuracy);
}

// Chance accuracy conventions. POS: the best blind guess, the most probable
// label of the source distribution. Dependencies: 1/T per sentence,
// token-averaged over the split.
inline double pos_chance_accuracy(std::span<const double> dist) {
  validate_distribution(dist);
  double best = 0.0;
  for (double p : dist) best = std::max(best, p);
  return best;
}

inline double dep_chance_accuracy(const Split& eval_split) {
  double acc = 0.0;
  long long total = 0;
  for (const Sentence& sentence : eval_split) {
    const int t = sentence.length();
    acc += static_cast<double>(t) * (1.0 / static_cast<double>(t));
    total += t;
  }
  if (total == 0) throw std::invalid_argument("dep_chance_accuracy: empty eval split");
  return acc / static_cast<double>(total);
}

// --- serialization -----------------------------------------------------
//
// One JSON document per spec: {"task", "seed", "k" or "behaviors", and a
// type-string -> behavior map}. Round-trips exactly against the same
// vocabulary.

inline nlohmann::json to_json(const PosControlSpec& spec, const Vocabulary& vocab) {
  nlohmann::json doc;
  doc["task"] = "pos";
  doc["seed"] = spec.seed;
  doc["k"] = spec.num_tags();
  doc["distribution"] = spec.source_dist;
  nlohmann::json map = nlohmann::json::object();
  for (std::size_t id = 0; id < spec.behavior.size(); ++id)
    map[vocab.type(static_cast<std::int32_t>(id))] = spec.behavior[id];
  doc["behavior"] = std::move(map);
  return doc;
}

inline nlohmann::json to_json(const DepControlSpec& spec, const Vocabulary& vocab) {
  nlohmann::json doc;
  doc["task"] = "dep";
  doc["seed"] = spec.seed;
  doc["behaviors"] = {"self", "first", "last"};
  nlohmann::json map = nlohmann::json::object();
  for (std::size_t id = 0; id < spec.behavior.size(); ++id)
    map[vocab.type(static_cast<std::int32_t>(id))] = dep_behavior_name(spec.behavior[id]);
  doc["behavior"] = std::move(map);
  return doc;
}

inline PosControlSpec pos_control_from_json(const nlohmann::json& doc, const Vocabulary& vocab) {
  if (doc.at("task").get<std::string>() != "pos")
    throw std::invalid_argument("control spec task is not 'pos'");
  PosControlSpec spec;
  spec.seed = doc.at("seed").get<std::uint64_t>();
  spec.source_dist = doc.at("distribution").get<std::vector<double>>();
  const int k = doc.at("k").get<int>();
  if (k != spec.num_tags())
    throw std::invalid_argument("control spec k does not match its distribution length");
  spec.behavior.assign(vocab.size(), 0);
  for (const auto& [type, value] : doc.at("behavior").items()) {
    const std::int32_t id = vocab.id(type);
    if (id < 0)
      throw std::invalid_argument("control spec names unknown type '" + type + "'");
    const int tag = value.get<int>();
    if (tag < 1 || tag > k)
      throw std::invalid_argument("control spec behavior for '" + type + "' outside 1..k");
    spec.behavior[static_cast<std::size_t>(id)] = tag;
  }
  for (std::size_t id = 0; id < spec.behavior.size(); ++id)
    if (spec.behavior[id] == 0)
      throw std::invalid_argument("control spec missing behavior for type '" +
                                  vocab.type(static_cast<std::int32_t>(id)) + "'");
  return spec;
}

inline DepControlSpec dep_control_from_json(const nlohmann::json& doc, const Vocabulary& vocab) {
  if (doc.at("task").get<std::string>() != "dep")
    throw std::invalid_argument("control spec task is not 'dep'");
  DepControlSpec spec;
  spec.seed = doc.at("seed").get<std::uint64_t>();
  std::vector<std::uint8_t> present(vocab.size(), 0);
  spec.behavior.assign(vocab.size(), DepBehavior::attach_self);
  for (const auto& [type, value] : doc.at("behavior").items()) {
    const std::int32_t id = vocab.id(type);
    if (id < 0)
      throw std::invalid_argument("control spec names unknown type '" + type + "'");
    spec.behavior[static_cast<std::size_t>(id)] = dep_behavior_from_name(value.get<std::string>());
    present[static_cast<std::size_t>(id)] = 1;
  }
  for (std::size_t id = 0; id < present.size(); ++id)
    if (!present[id])
      throw std::invalid_argument("control spec missing behavior for type '" +
                                  vocab.type(static_cast<std::int32_t>(id)) + "'");
  return spec;
}

}  // namespace probeforge
