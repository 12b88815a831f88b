#pragma once

// Evaluation: token accuracies with the dependency root-exclusion protocol,
// selectivity, and confusion matrices. Pure functions over prediction and
// gold sequences; accuracies are fractions in [0,1] here and reported x100
// with two decimals at the output layer.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace probeforge {

using LabelSeqs = std::vector<std::vector<int>>;

namespace detail {

inline void check_aligned(const LabelSeqs& predictions, const LabelSeqs& gold) {
  if (predictions.size() != gold.size())
    throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) +
                                " predicted sentences vs " + std::to_string(gold.size()));
  for (std::size_t s = 0; s < gold.size(); ++s)
    if (predictions[s].size() != gold[s].size())
      throw std::invalid_argument("accuracy: sentence " + std::to_string(s) +
                                  " has misaligned predictions");
}

}  // namespace detail

// Token accuracy over all tokens.
inline double accuracy_pos(const LabelSeqs& predictions, const LabelSeqs& gold) {
  detail::check_aligned(predictions, gold);
  long long correct = 0, total = 0;
  for (std::size_t s = 0; s < gold.size(); ++s)
    for (std::size_t i = 0; i < gold[s].size(); ++i) {
      ++total;
      if (predictions[s][i] == gold[s][i]) ++correct;
    }
  if (total == 0) throw std::invalid_argument("accuracy_pos: no tokens to evaluate");
  return static_cast<double>(correct) / static_cast<double>(total);
}

// Head accuracy, each prediction scored independently. With exclude_root set,
// tokens whose gold head is 0 leave both numerator and denominator; every
// sentence must then contain exactly one such token.
inline double accuracy_dep(const LabelSeqs& predictions, const LabelSeqs& gold_heads,
                           bool exclude_root) {
  detail::check_aligned(predictions, gold_heads);
  long long correct = 0, total = 0;
  for (std::size_t s = 0; s < gold_heads.size(); ++s) {
    if (exclude_root) {
      int roots = 0;
      for (int head : gold_heads[s])
        if (head == 0) ++roots;
      if (roots != 1)
        throw std::invalid_argument("accuracy_dep: sentence " + std::to_string(s) + " has " +
                                    std::to_string(roots) + " root tokens (expected exactly 1)");
    }
    for (std::size_t i = 0; i < gold_heads[s].size(); ++i) {
      if (exclude_root && gold_heads[s][i] == 0) continue;
      ++total;
      if (predictions[s][i] == gold_heads[s][i]) ++correct;
    }
  }
  if (total == 0) throw std::invalid_argument("accuracy_dep: no tokens to evaluate");
  return static_cast<double>(correct) / static_cast<double>(total);
}

// Linguistic task accuracy minus control task accuracy; may be negative.
inline double selectivity(double linguistic_accuracy, double control_accuracy) {
  return linguistic_accuracy - control_accuracy;
}

// counts[g-1][p-1] = number of tokens with gold label g predicted as p.
inline std::vector<std::vector<long long>> confusion_matrix(const LabelSeqs& predictions,
                                                            const LabelSeqs& gold, int num_labels) {
  detail::check_aligned(predictions, gold);
  std::vector<std::vector<long long>> counts(
      static_cast<std::size_t>(num_labels),
      std::vector<long long>(static_cast<std::size_t>(num_labels), 0));
  for (std::size_t s = 0; s < gold.size(); ++s)
    for (std::size_t i = 0; i < gold[s].size(); ++i) {
      const int g = gold[s][i], p = predictions[s][i];
      if (g < 1 || g > num_labels || p < 1 || p > num_labels)
        throw std::out_of_range("confusion_matrix: label outside 1.." + std::to_string(num_labels));
      ++counts[static_cast<std::size_t>(g) - 1][static_cast<std::size_t>(p) - 1];
    }
  return counts;
}

// Accuracy/selectivity values are reported x100 with two decimals everywhere.
inline double as_percent(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

struct EvalReport {
  double accuracy = 0.0;  // fraction in [0,1]
  long long evaluated_tokens = 0;
  double ceiling = 1.0;  // fraction in [0,1]
  std::vector<std::vector<long long>> confusion;  // empty unless requested (POS)
};

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["accuracy"] = as_percent(report.accuracy);
  doc["evaluated_tokens"] = report.evaluated_tokens;
  doc["ceiling"] = as_percent(report.ceiling);
  if (!report.confusion.empty()) doc["confusion"] = report.confusion;
  return doc;
}

inline void write_confusion_csv(std::ostream& out,
                                const std::vector<std::vector<long long>>& counts,
                                const std::vector<std::string>& labels) {
  out << "gold\\pred";
  for (const std::string& label : labels) out << ',' << label;
  out << '\n';
  for (std::size_t g = 0; g < counts.size(); ++g) {
    out << labels.at(g);
    for (long long c : counts[g]) out << ',' << c;
    out << '\n';
  }
}

}  // namespace probeforge
