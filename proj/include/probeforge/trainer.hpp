#pragma once

// Adam training with annealing-based early stopping.
//
// Protocol: sentences are shuffled each epoch (seeded), batches hold
// batch_size sentences (POS: their tokens; dependencies: all head decisions
// of each sentence). After every epoch the full dev loss is computed; each
// epoch that fails to set a new running minimum halves the learning rate,
// and four such epochs in a row stop training. Training also halts at
// max_steps gradient steps, whichever comes first, and the parameters from
// the epoch with minimum dev loss are returned.
//
// Hyperparameters the protocol does not fix (learning rate, batch size,
// initialization) have defaults here and are configurable; they are echoed
// verbatim into every result.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "probeforge/matrix.hpp"
#include "probeforge/probes.hpp"
#include "probeforge/rng.hpp"

namespace probeforge {

struct AdamState {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<Matrix> m, v;
};

inline AdamState make_adam_state(const ProbeParams& params, double alpha) {
  AdamState state;
  state.alpha = alpha;
  state.m.reserve(params.tensors.size());
  state.v.reserve(params.tensors.size());
  for (const Matrix& tensor : params.tensors) {
    state.m.emplace_back(tensor.rows(), tensor.cols());
    state.v.emplace_back(tensor.rows(), tensor.cols());
  }
  return state;
}

// One bias-corrected Adam update using the state's current alpha.
inline void adam_step(AdamState& state, std::vector<Matrix>& tensors,
                      const std::vector<Matrix>& grads) {
  if (tensors.size() != grads.size() || tensors.size() != state.m.size())
    throw std::invalid_argument("adam_step: tensor/gradient count mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (!tensors[t].same_shape(grads[t]))
      throw std::invalid_argument("adam_step: gradient shape mismatch for tensor " +
                                  std::to_string(t));
    auto theta = tensors[t].flat();
    auto g = grads[t].flat();
    auto m = state.m[t].flat();
    auto v = state.v[t].flat();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= state.alpha * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

struct AnnealDecision {
  double multiplier = 1.0;
  bool stop = false;
};

// Scans a dev-loss history: every epoch that is not a new running minimum
// multiplies the learning rate by `factor`; `patience` such epochs in a row
// request a stop.
inline AnnealDecision anneal_and_stop(std::span<const double> dev_losses, double factor = 0.5,
                                      int patience = 4) {
  if (dev_losses.empty()) throw std::invalid_argument("anneal_and_stop: empty history");
  AnnealDecision decision;
  double best = std::numeric_limits<double>::infinity();
  int streak = 0;
  for (double loss : dev_losses) {
    if (loss < best) {
      best = loss;
      streak = 0;
    } else {
      decision.multiplier *= factor;
      ++streak;
    }
  }
  decision.stop = streak >= patience;
  return decision;
}

struct TrainSeeds {
  std::uint64_t init = 1;
  std::uint64_t dropout = 2;
  std::uint64_t shuffle = 3;
  std::uint64_t subsample = 4;
  std::uint64_t control = 5;
};

struct TrainConfig {
  long long max_steps = 100000;
  double anneal_factor = 0.5;
  int patience = 4;
  double dropout = 0.0;
  double weight_decay = 0.0;
  int rank = 0;             // 0 = family default: min(k,d) linear, 1000 otherwise
  long long train_n = -1;   // -1 = full training split
  int batch_size = 32;      // sentences per gradient step
  double learning_rate = 1e-3;
  TrainSeeds seeds;
};

inline int resolve_rank(ProbeFamily family, int k, int d, int configured) {
  if (configured > 0) return configured;
  if (family == ProbeFamily::linear) return std::min(k, d);
  return 1000;
}

struct TrainResult {
  ProbeParams params;                  // parameters from the best dev epoch
  std::vector<double> dev_losses;      // one entry per epoch
  std::vector<double> lr_multipliers;  // multiplier in effect during each epoch
  std::string stop_reason;             // "annealing-patience" | "max-steps"
  long long steps = 0;
  int best_epoch = 0;  // 1-based; 0 when no epoch ran
};

// Sentence-aligned training data: one T x d matrix and one label sequence per
// sentence. Labels are 1-based; for dependency data a 0 marks a token with no
// head decision (the gold root), which is skipped.
struct ProbeDataset {
  std::vector<Matrix> reprs;
  std::vector<std::vector<int>> labels;

  std::size_t sentences() const { return reprs.size(); }
};

inline void validate_dataset(const ProbeDataset& data, const std::string& what) {
  if (data.reprs.size() != data.labels.size())
    throw std::invalid_argument(what + ": " + std::to_string(data.reprs.size()) +
                                " repr sentences vs " + std::to_string(data.labels.size()) +
                                " label sequences");
  for (std::size_t s = 0; s < data.reprs.size(); ++s)
    if (data.reprs[s].rows() != data.labels[s].size())
      throw std::invalid_argument(what + ": sentence " + std::to_string(s) +
                                  " has misaligned representations and labels");
}

namespace detail {

inline std::size_t example_count(TaskKind task, const ProbeDataset& data) {
  std::size_t n = 0;
  for (const auto& labels : data.labels)
    for (int label : labels)
      if (task == TaskKind::pos || label != 0) ++n;
  return n;
}

inline PosBatch gather_pos_batch(const ProbeDataset& data, std::span<const std::size_t> order) {
  std::size_t tokens = 0, d = 0;
  for (std::size_t s : order) {
    tokens += data.reprs[s].rows();
    d = data.reprs[s].cols();
  }
  PosBatch batch;
  batch.x = Matrix(tokens, d);
  batch.gold.reserve(tokens);
  std::size_t row = 0;
  for (std::size_t s : order) {
    const Matrix& h = data.reprs[s];
    for (std::size_t i = 0; i < h.rows(); ++i, ++row) {
      std::copy(h.row(i), h.row(i) + d, batch.x.row(row));
      batch.gold.push_back(data.labels[s][i]);
    }
  }
  return batch;
}

inline std::vector<DepSentenceExamples> gather_dep_batch(const ProbeDataset& data,
                                                         std::span<const std::size_t> order) {
  std::vector<DepSentenceExamples> batch;
  batch.reserve(order.size());
  for (std::size_t s : order) {
    DepSentenceExamples sent;
    sent.h = &data.reprs[s];
    const auto& labels = data.labels[s];
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] != 0) sent.decisions.emplace_back(static_cast<int>(i) + 1, labels[i]);
    if (!sent.decisions.empty()) batch.push_back(std::move(sent));
  }
  return batch;
}

inline double xent_from_logits(std::span<const double> logits, int gold) {
  double m = logits[0];
  for (double x : logits) m = std::max(m, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - m);
  return m + std::log(sum) - logits[static_cast<std::size_t>(gold) - 1];
}

}  // namespace detail

// Mean eval-mode cross-entropy over every example of the dataset.
inline double dataset_loss(TaskKind task, const ProbeParams& probe, const ProbeDataset& data) {
  double loss_sum = 0.0;
  std::size_t count = 0;
  if (task == TaskKind::pos) {
    constexpr std::size_t kChunk = 512;  // sentences per forward block
    std::vector<std::size_t> order(data.sentences());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t start = 0; start < order.size(); start += kChunk) {
      const std::size_t stop = std::min(order.size(), start + kChunk);
      const PosBatch chunk = detail::gather_pos_batch(
          data, std::span(order).subspan(start, stop - start));
      const Matrix logits = batched_forward_pos(probe, chunk.x);
      for (std::size_t row = 0; row < logits.rows(); ++row) {
        loss_sum += detail::xent_from_logits(
            std::span(logits.row(row), logits.cols()), chunk.gold[row]);
        ++count;
      }
    }
  } else {
    std::vector<double> column;
    for (std::size_t s = 0; s < data.sentences(); ++s) {
      const auto& labels = data.labels[s];
      if (std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0; })) continue;
      const Matrix scores = batched_forward_dep_scores(probe, data.reprs[s]);
      const std::size_t t = scores.rows();
      column.resize(t);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0) continue;
        for (std::size_t j = 0; j < t; ++j) column[j] = scores(j, i);
        loss_sum += detail::xent_from_logits(column, labels[i]);
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("dataset_loss: no examples");
  return loss_sum / static_cast<double>(count);
}

// Eval-mode predictions for every token. POS: argmax class per token.
// Dependencies: argmax head for every position, including gold roots;
// the metrics layer decides which tokens count.
inline std::vector<std::vector<int>> predict_dataset(TaskKind task, const ProbeParams& probe,
                                                     const ProbeDataset& data) {
  std::vector<std::vector<int>> out(data.sentences());
  if (task == TaskKind::pos) {
    for (std::size_t s = 0; s < data.sentences(); ++s) {
      const Matrix logits = batched_forward_pos(probe, data.reprs[s]);
      out[s].reserve(logits.rows());
      for (std::size_t row = 0; row < logits.rows(); ++row)
        out[s].push_back(predict(std::span(logits.row(row), logits.cols())));
    }
  } else {
    std::vector<double> column;
    for (std::size_t s = 0; s < data.sentences(); ++s) {
      const Matrix scores = batched_forward_dep_scores(probe, data.reprs[s]);
      const std::size_t t = scores.rows();
      column.resize(t);
      out[s].reserve(t);
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) column[j] = scores(j, i);
        out[s].push_back(predict(column));
      }
    }
  }
  return out;
}

// Full training loop for one probe. `num_classes` is K for POS tasks and
// ignored for dependency tasks.
inline TrainResult train_probe(TaskKind task, ProbeFamily family, const ProbeDataset& train,
                               const ProbeDataset& dev, int num_classes, const TrainConfig& config) {
  validate_dataset(train, "train split");
  validate_dataset(dev, "dev split");
  if (train.sentences() == 0 || detail::example_count(task, train) == 0)
    throw std::invalid_argument("train_probe: empty train split (no training examples)");
  if (dev.sentences() == 0 || detail::example_count(task, dev) == 0)
    throw std::invalid_argument("train_probe: empty dev split");
  const int d = static_cast<int>(train.reprs.front().cols());

  ProbeDims dims;
  dims.k = task == TaskKind::pos ? num_classes : 0;
  dims.d = d;
  dims.l = resolve_rank(family, dims.k, d, config.rank);

  TrainResult result;
  result.params = init_params(family, task, dims, config.seeds.init);
  result.stop_reason = "max-steps";
  if (config.max_steps <= 0) return result;

  AdamState adam = make_adam_state(result.params, config.learning_rate);
  Rng dropout_rng(config.seeds.dropout);
  const DropoutSpec dropout{config.dropout, true};

  ProbeParams best_params = result.params;
  double best_loss = std::numeric_limits<double>::infinity();
  double multiplier = 1.0;
  std::vector<std::size_t> order(train.sentences());
  std::iota(order.begin(), order.end(), std::size_t{0});

  bool stopped = false;
  for (int epoch = 1; !stopped; ++epoch) {
    Rng shuffle_rng(derive_stream(config.seeds.shuffle, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    bool hit_max_steps = false;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto slice = std::span(order).subspan(start, stop - start);
      LossAndGrads step;
      if (task == TaskKind::pos) {
        const PosBatch batch = detail::gather_pos_batch(train, slice);
        step = loss_and_grad(result.params, batch, dropout, config.weight_decay, &dropout_rng);
      } else {
        const std::vector<DepSentenceExamples> batch = detail::gather_dep_batch(train, slice);
        if (batch.empty()) continue;  // every sentence in the slice was root-only
        step = loss_and_grad(result.params, batch, dropout, config.weight_decay, &dropout_rng);
      }
      if (!std::isfinite(step.loss))
        throw std::runtime_error("train_probe: non-finite training loss at step " +
                                 std::to_string(result.steps + 1) + " (epoch " +
                                 std::to_string(epoch) + ")");
      adam_step(adam, result.params.tensors, step.grads);
      ++result.steps;
      if (result.steps >= config.max_steps) {
        hit_max_steps = true;
        break;
      }
    }

    const double dev_loss = dataset_loss(task, result.params, dev);
    result.dev_losses.push_back(dev_loss);
    result.lr_multipliers.push_back(multiplier);
    if (dev_loss < best_loss) {
      best_loss = dev_loss;
      best_params = result.params;
      result.best_epoch = epoch;
    }
    const AnnealDecision decision =
        anneal_and_stop(result.dev_losses, config.anneal_factor, config.patience);
    multiplier = decision.multiplier;
    adam.alpha = config.learning_rate * multiplier;
    if (hit_max_steps) {
      result.stop_reason = "max-steps";
      stopped = true;
    } else if (decision.stop) {
      result.stop_reason = "annealing-patience";
      stopped = true;
    }
  }

  result.params = std::move(best_params);
  return result;
}

inline nlohmann::json to_json(const TrainConfig& config) {
  return {{"max_steps", config.max_steps},
          {"anneal_factor", config.anneal_factor},
          {"patience", config.patience},
          {"dropout", config.dropout},
          {"weight_decay", config.weight_decay},
          {"rank", config.rank},
          {"train_n", config.train_n},
          {"batch_size", config.batch_size},
          {"learning_rate", config.learning_rate},
          {"seeds",
           {{"init", config.seeds.init},
            {"dropout", config.seeds.dropout},
            {"shuffle", config.seeds.shuffle},
            {"subsample", config.seeds.subsample},
            {"control", config.seeds.control}}}};
}

inline nlohmann::json to_json(const TrainResult& result, const TrainConfig& config) {
  nlohmann::json doc;
  doc["config"] = to_json(config);
  doc["task"] = task_name(result.params.task);
  doc["family"] = family_name(result.params.family);
  doc["dims"] = {{"k", result.params.dims.k},
                 {"d", result.params.dims.d},
                 {"l", result.params.dims.l}};
  doc["dev_losses"] = result.dev_losses;
  doc["lr_multipliers"] = result.lr_multipliers;
  doc["stop_reason"] = result.stop_reason;
  doc["steps"] = result.steps;
  doc["best_epoch"] = result.best_epoch;
  return doc;
}

}  // namespace probeforge
