#pragma once

// Experiment orchestration: one config point trains a linguistic probe and an
// identically configured, freshly initialized control probe, evaluates both
// on dev, and joins them into a selectivity row. A sweep runs the Cartesian
// product of the grid axes and emits report.csv plus report.json.
//
// Reports are pure functions of (corpus files, representation files, config,
// seeds): reruns are byte-identical, so all recorded cost measures are step
// counts rather than wall-clock times. Per-point failures are recorded in the
// JSON report without aborting the sweep.

#include <cstdio>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "probeforge/control_task.hpp"
#include "probeforge/corpus.hpp"
#include "probeforge/metrics.hpp"
#include "probeforge/probes.hpp"
#include "probeforge/repr_store.hpp"
#include "probeforge/rng.hpp"
#include "probeforge/trainer.hpp"

namespace probeforge {

// Hyperparameter sweep values; an empty axis means "defaults only".
struct GridAxes {
  std::vector<int> ranks;
  std::vector<double> dropouts;
  std::vector<double> weight_decays;
  std::vector<long long> train_ns;  // -1 = full split
  std::vector<long long> max_steps;

  bool empty() const {
    return ranks.empty() && dropouts.empty() && weight_decays.empty() && train_ns.empty() &&
           max_steps.empty();
  }

  // An entirely empty grid has no points; otherwise unspecified axes run at
  // their defaults.
  std::size_t points() const {
    if (empty()) return 0;
    auto dim = [](std::size_t n) { return n == 0 ? std::size_t{1} : n; };
    return dim(ranks.size()) * dim(dropouts.size()) * dim(weight_decays.size()) *
           dim(train_ns.size()) * dim(max_steps.size());
  }
};

// Stock sweep values for each axis.
inline std::vector<int> default_rank_sweep(TaskKind task) {
  return task == TaskKind::pos ? std::vector<int>{2, 4, 10, 45} : std::vector<int>{5, 10, 50, 100};
}
inline std::vector<double> default_dropout_sweep() { return {0.2, 0.4, 0.6, 0.8}; }
inline std::vector<double> default_weight_decay_sweep() { return {0.01, 0.1, 1.0, 10.0}; }
inline std::vector<long long> default_train_n_sweep() { return {-1, 4000, 400}; }
inline std::vector<long long> default_max_steps_sweep() {
  return {100000, 50000, 25000, 12500, 6000, 3000, 1500};
}

struct ExperimentConfig {
  TaskKind task = TaskKind::pos;
  ProbeFamily family = ProbeFamily::linear;
  std::string corpus_train, corpus_dev, corpus_test;
  std::string schema = "index,form,tag,head";
  VocabScope vocab_scope = VocabScope::all_splits;
  std::string reprs_train, reprs_dev;
  std::uint64_t control_seed = 7;  // one sampled control task per sweep
  std::uint64_t base_seed = 42;    // per-point streams derive from this
  TrainConfig defaults;
  GridAxes grid;
};

struct PointOutcome {
  std::size_t config_index = 0;
  TrainConfig config;       // resolved per-point configuration
  int resolved_rank = 0;
  long long resolved_train_n = 0;
  bool ok = false;
  std::string error;
  double accuracy_linguistic = 0.0, accuracy_control = 0.0;  // fractions
  double selectivity_value = 0.0, ceiling = 0.0;
  long long eval_tokens_linguistic = 0, eval_tokens_control = 0;
  long long steps_linguistic = 0, steps_control = 0;
  std::string stop_linguistic, stop_control;
  std::vector<double> dev_losses_linguistic, dev_losses_control;
  std::vector<double> lr_multipliers_linguistic, lr_multipliers_control;
  int best_epoch_linguistic = 0, best_epoch_control = 0;
};

struct SweepResult {
  std::vector<PointOutcome> points;
  bool all_ok = true;
  std::string csv;
  nlohmann::json json;
};

// Corpus, vocabulary, representations and labels shared by all points.
struct Workspace {
  Corpus corpus;
  Vocabulary vocab;
  std::vector<Matrix> train_reprs, dev_reprs;
  LabelSeqs gold_train, gold_dev;      // task labels; dep roots stay 0
  LabelSeqs control_train, control_dev;
  std::vector<double> control_distribution;  // POS control source distribution
  double chance_accuracy = 0.0;
  std::optional<PosControlSpec> pos_spec;
  std::optional<DepControlSpec> dep_spec;
};

namespace detail {

constexpr std::uint64_t kSaltSubsample = 0x50b5;

inline std::vector<Matrix> reprs_to_matrices(const ReprFile& file) {
  std::vector<Matrix> out;
  out.reserve(file.size());
  for (const SentenceReprs& s : file) out.push_back(to_matrix(s));
  return out;
}

inline LabelSeqs gold_labels(TaskKind task, const Split& split) {
  LabelSeqs out;
  out.reserve(split.size());
  for (const Sentence& sentence : split) {
    std::vector<int> labels;
    labels.reserve(sentence.tokens.size());
    for (const Token& token : sentence.tokens)
      labels.push_back(task == TaskKind::pos ? token.tag_id : token.head);
    out.push_back(std::move(labels));
  }
  return out;
}

}  // namespace detail

inline Workspace load_workspace(const ExperimentConfig& config) {
  Workspace ws;
  const ColumnSchema schema = ColumnSchema::parse(config.schema);
  auto load_split = [&](const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(std::string("cannot open ") + what + " corpus: " + path);
    return parse_corpus(in, schema, ws.corpus.tags, path);
  };
  ws.corpus.train = load_split(config.corpus_train, "train");
  ws.corpus.dev = load_split(config.corpus_dev, "dev");
  if (!config.corpus_test.empty()) ws.corpus.test = load_split(config.corpus_test, "test");
  ws.vocab = build_vocabulary(ws.corpus, config.vocab_scope);

  const ReprFile train_file = read_repr_file(config.reprs_train);
  const ReprFile dev_file = read_repr_file(config.reprs_dev);
  check_alignment(train_file, ws.corpus.train, "train representations");
  check_alignment(dev_file, ws.corpus.dev, "dev representations");
  ws.train_reprs = detail::reprs_to_matrices(train_file);
  ws.dev_reprs = detail::reprs_to_matrices(dev_file);

  ws.gold_train = detail::gold_labels(config.task, ws.corpus.train);
  ws.gold_dev = detail::gold_labels(config.task, ws.corpus.dev);

  if (config.task == TaskKind::pos) {
    ws.control_distribution = empirical_tag_distribution(ws.corpus.train, ws.corpus.tags.size());
    ws.pos_spec = sample_pos_control(ws.vocab, ws.control_distribution, config.control_seed);
    ws.chance_accuracy = pos_chance_accuracy(ws.control_distribution);
    auto apply = [&](const Split& split, LabelSeqs& out) {
      out.reserve(split.size());
      for (const Sentence& sentence : split)
        out.push_back(apply_control_pos(sentence, ws.vocab, *ws.pos_spec));
    };
    apply(ws.corpus.train, ws.control_train);
    apply(ws.corpus.dev, ws.control_dev);
  } else {
    ws.dep_spec = sample_dep_control(ws.vocab, config.control_seed);
    ws.chance_accuracy = dep_chance_accuracy(ws.corpus.dev);
    auto apply = [&](const Split& split, LabelSeqs& out) {
      out.reserve(split.size());
      for (const Sentence& sentence : split)
        out.push_back(apply_control_dep(sentence, ws.vocab, *ws.dep_spec));
    };
    apply(ws.corpus.train, ws.control_train);
    apply(ws.corpus.dev, ws.control_dev);
  }
  return ws;
}

// Trains the linguistic and control probes for one resolved config point.
// The two runs share every hyperparameter and differ only in labels and in
// the initialization seed stream.
inline PointOutcome run_point(const Workspace& ws, const ExperimentConfig& config,
                              TrainConfig point_config, std::size_t config_index) {
  PointOutcome out;
  out.config_index = config_index;

  point_config.seeds.init = derive_stream(config.base_seed, 4 * config_index);
  point_config.seeds.dropout = derive_stream(config.base_seed, 4 * config_index + 2);
  point_config.seeds.shuffle = derive_stream(config.base_seed, 4 * config_index + 3);
  point_config.seeds.subsample = derive_stream(config.base_seed, detail::kSaltSubsample);
  point_config.seeds.control = config.control_seed;
  out.config = point_config;

  // Resolve the training subset once; corpus sentences and representation
  // matrices select the same indices.
  const std::size_t full = ws.corpus.train.size();
  std::vector<std::size_t> selected(full);
  std::iota(selected.begin(), selected.end(), std::size_t{0});
  out.resolved_train_n = static_cast<long long>(full);
  if (point_config.train_n >= 0) {
    selected = subsample_indices(full, static_cast<std::size_t>(point_config.train_n),
                                 point_config.seeds.subsample);
    out.resolved_train_n = point_config.train_n;
  }

  Split train_split;
  ProbeDataset train_ling, train_ctl;
  train_split.reserve(selected.size());
  for (std::size_t idx : selected) {
    train_split.push_back(ws.corpus.train[idx]);
    train_ling.reprs.push_back(ws.train_reprs[idx]);
    train_ling.labels.push_back(ws.gold_train[idx]);
    train_ctl.reprs.push_back(ws.train_reprs[idx]);
    train_ctl.labels.push_back(ws.control_train[idx]);
  }
  ProbeDataset dev_ling{ws.dev_reprs, ws.gold_dev};
  ProbeDataset dev_ctl{ws.dev_reprs, ws.control_dev};

  const int k = ws.corpus.tags.size();
  const int d = ws.dev_reprs.empty() ? 0 : static_cast<int>(ws.dev_reprs.front().cols());
  out.resolved_rank = resolve_rank(config.family, config.task == TaskKind::pos ? k : 0, d,
                                   point_config.rank);

  const std::vector<bool> seen = train_seen_types(train_split, ws.vocab);
  out.ceiling = control_ceiling(ws.corpus.dev, ws.vocab, seen, ws.chance_accuracy);

  TrainConfig ling_config = point_config;
  TrainConfig ctl_config = point_config;
  ctl_config.seeds.init = derive_stream(config.base_seed, 4 * config_index + 1);

  const TrainResult ling =
      train_probe(config.task, config.family, train_ling, dev_ling, k, ling_config);
  const TrainResult ctl =
      train_probe(config.task, config.family, train_ctl, dev_ctl, k, ctl_config);

  const LabelSeqs pred_ling = predict_dataset(config.task, ling.params, dev_ling);
  const LabelSeqs pred_ctl = predict_dataset(config.task, ctl.params, dev_ctl);

  long long dev_tokens = 0;
  for (const Sentence& s : ws.corpus.dev) dev_tokens += s.length();
  if (config.task == TaskKind::pos) {
    out.accuracy_linguistic = accuracy_pos(pred_ling, ws.gold_dev);
    out.accuracy_control = accuracy_pos(pred_ctl, ws.control_dev);
    out.eval_tokens_linguistic = dev_tokens;
    out.eval_tokens_control = dev_tokens;
  } else {
    // Root exclusion applies to the linguistic task; the control task has no
    // root concept, so every token is evaluated there.
    out.accuracy_linguistic = accuracy_dep(pred_ling, ws.gold_dev, true);
    out.accuracy_control = accuracy_dep(pred_ctl, ws.control_dev, false);
    out.eval_tokens_linguistic = dev_tokens - static_cast<long long>(ws.corpus.dev.size());
    out.eval_tokens_control = dev_tokens;
  }
  out.selectivity_value = selectivity(out.accuracy_linguistic, out.accuracy_control);

  out.steps_linguistic = ling.steps;
  out.steps_control = ctl.steps;
  out.stop_linguistic = ling.stop_reason;
  out.stop_control = ctl.stop_reason;
  out.dev_losses_linguistic = ling.dev_losses;
  out.dev_losses_control = ctl.dev_losses;
  out.lr_multipliers_linguistic = ling.lr_multipliers;
  out.lr_multipliers_control = ctl.lr_multipliers;
  out.best_epoch_linguistic = ling.best_epoch;
  out.best_epoch_control = ctl.best_epoch;
  out.ok = true;
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string format_percent(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", as_percent(fraction));
  return buf;
}

inline void append_csv_row(std::string& csv, const PointOutcome& p, const char* task_label,
                           ProbeFamily family, std::uint64_t base_seed, double accuracy,
                           long long steps, const std::string& stop_reason) {
  csv += std::to_string(p.config_index);
  csv += ',';
  csv += task_label;
  csv += ',';
  csv += family_name(family);
  csv += ',';
  csv += std::to_string(p.resolved_rank);
  csv += ',';
  csv += format_double(p.config.dropout);
  csv += ',';
  csv += format_double(p.config.weight_decay);
  csv += ',';
  csv += std::to_string(p.resolved_train_n);
  csv += ',';
  csv += std::to_string(p.config.max_steps);
  csv += ',';
  csv += std::to_string(base_seed);
  csv += ',';
  csv += format_percent(accuracy);
  csv += ',';
  csv += format_percent(p.ceiling);
  csv += ',';
  csv += format_percent(p.selectivity_value);
  csv += ',';
  csv += std::to_string(steps);
  csv += ',';
  csv += stop_reason;
  csv += '\n';
}

inline nlohmann::json point_to_json(const PointOutcome& p, const ExperimentConfig& config) {
  nlohmann::json doc;
  doc["config_index"] = p.config_index;
  doc["ok"] = p.ok;
  if (!p.ok) {
    doc["error"] = p.error;
    doc["config"] = to_json(p.config);
    return doc;
  }
  doc["config"] = to_json(p.config);
  doc["resolved_rank"] = p.resolved_rank;
  doc["resolved_train_n"] = p.resolved_train_n;
  doc["task"] = task_name(config.task);
  doc["probe"] = family_name(config.family);
  doc["ceiling"] = as_percent(p.ceiling);
  doc["selectivity"] = as_percent(p.selectivity_value);
  doc["linguistic"] = {{"accuracy", as_percent(p.accuracy_linguistic)},
                       {"evaluated_tokens", p.eval_tokens_linguistic},
                       {"steps", p.steps_linguistic},
                       {"stop_reason", p.stop_linguistic},
                       {"best_epoch", p.best_epoch_linguistic},
                       {"dev_losses", p.dev_losses_linguistic},
                       {"lr_multipliers", p.lr_multipliers_linguistic}};
  doc["control"] = {{"accuracy", as_percent(p.accuracy_control)},
                    {"evaluated_tokens", p.eval_tokens_control},
                    {"steps", p.steps_control},
                    {"stop_reason", p.stop_control},
                    {"best_epoch", p.best_epoch_control},
                    {"dev_losses", p.dev_losses_control},
                    {"lr_multipliers", p.lr_multipliers_control}};
  if (config.task == TaskKind::dep) {
    // the control task has no root concept, so its evaluation keeps all tokens
    doc["linguistic"]["root_excluded"] = true;
    doc["control"]["root_excluded"] = false;
  }
  return doc;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& config) {
  return {{"task", task_name(config.task)},
          {"probe", family_name(config.family)},
          {"corpus", {{"train", config.corpus_train},
                      {"dev", config.corpus_dev},
                      {"test", config.corpus_test},
                      {"schema", config.schema},
                      {"vocab", config.vocab_scope == VocabScope::all_splits ? "all" : "train"}}},
          {"representations", {{"train", config.reprs_train}, {"dev", config.reprs_dev}}},
          {"control_seed", config.control_seed},
          {"base_seed", config.base_seed},
          {"defaults", to_json(config.defaults)},
          {"grid", {{"rank", config.grid.ranks},
                    {"dropout", config.grid.dropouts},
                    {"weight_decay", config.grid.weight_decays},
                    {"train_n", config.grid.train_ns},
                    {"max_steps", config.grid.max_steps}}}};
}

// Fills config fields present in the document; absent fields keep their
// current values. The seeds block is runner-managed and not read here.
inline void train_config_from_json(const nlohmann::json& doc, TrainConfig& config) {
  if (doc.contains("max_steps")) config.max_steps = doc.at("max_steps").get<long long>();
  if (doc.contains("anneal_factor")) config.anneal_factor = doc.at("anneal_factor").get<double>();
  if (doc.contains("patience")) config.patience = doc.at("patience").get<int>();
  if (doc.contains("dropout")) config.dropout = doc.at("dropout").get<double>();
  if (doc.contains("weight_decay")) config.weight_decay = doc.at("weight_decay").get<double>();
  if (doc.contains("rank")) config.rank = doc.at("rank").get<int>();
  if (doc.contains("train_n")) config.train_n = doc.at("train_n").get<long long>();
  if (doc.contains("batch_size")) config.batch_size = doc.at("batch_size").get<int>();
  if (doc.contains("learning_rate")) config.learning_rate = doc.at("learning_rate").get<double>();
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& doc) {
  ExperimentConfig config;
  config.task = task_from_name(doc.at("task").get<std::string>());
  config.family = family_from_name(doc.at("probe").get<std::string>());
  const auto& corpus = doc.at("corpus");
  config.corpus_train = corpus.at("train").get<std::string>();
  config.corpus_dev = corpus.at("dev").get<std::string>();
  if (corpus.contains("test")) config.corpus_test = corpus.at("test").get<std::string>();
  if (corpus.contains("schema")) config.schema = corpus.at("schema").get<std::string>();
  if (corpus.contains("vocab")) {
    const std::string scope = corpus.at("vocab").get<std::string>();
    if (scope == "all") config.vocab_scope = VocabScope::all_splits;
    else if (scope == "train") config.vocab_scope = VocabScope::train_only;
    else throw std::invalid_argument("vocab scope must be 'all' or 'train', got '" + scope + "'");
  }
  const auto& reprs = doc.at("representations");
  config.reprs_train = reprs.at("train").get<std::string>();
  config.reprs_dev = reprs.at("dev").get<std::string>();
  if (doc.contains("control_seed")) config.control_seed = doc.at("control_seed").get<std::uint64_t>();
  if (doc.contains("base_seed")) config.base_seed = doc.at("base_seed").get<std::uint64_t>();
  if (doc.contains("defaults")) train_config_from_json(doc.at("defaults"), config.defaults);
  if (doc.contains("grid")) {
    const auto& grid = doc.at("grid");
    // each axis is either an explicit list or the string "default"
    auto read_axis = [&grid](const char* key, auto& target, auto defaults) {
      if (!grid.contains(key)) return;
      const auto& axis = grid.at(key);
      if (axis.is_string()) {
        if (axis.get<std::string>() != "default")
          throw std::invalid_argument(std::string("grid axis '") + key +
                                      "' must be a list or \"default\"");
        target = defaults;
        return;
      }
      target = axis.get<std::decay_t<decltype(target)>>();
    };
    read_axis("rank", config.grid.ranks, default_rank_sweep(config.task));
    read_axis("dropout", config.grid.dropouts, default_dropout_sweep());
    read_axis("weight_decay", config.grid.weight_decays, default_weight_decay_sweep());
    read_axis("train_n", config.grid.train_ns, default_train_n_sweep());
    read_axis("max_steps", config.grid.max_steps, default_max_steps_sweep());
  }
  return config;
}

constexpr const char* kReportCsvHeader =
    "config_index,task,probe,rank,dropout,weight_decay,train_n,max_steps,seed,accuracy,ceiling,"
    "selectivity,steps,stop_reason\n";

// Cartesian product of the grid axes, nested rank > dropout > weight decay >
// train_n > max_steps; points run in config-index order and failures are
// recorded without aborting the sweep.
inline SweepResult run_sweep(const ExperimentConfig& config) {
  SweepResult result;
  result.csv = kReportCsvHeader;
  if (config.grid.empty()) {
    result.json["config"] = to_json(config);
    result.json["points"] = nlohmann::json::array();
    return result;
  }

  std::optional<Workspace> ws;
  std::string load_error;
  try {
    ws.emplace(load_workspace(config));
  } catch (const std::exception& e) {
    load_error = e.what();
  }

  auto axis_or = [](const auto& axis, auto fallback) {
    using Vec = std::decay_t<decltype(axis)>;
    return axis.empty() ? Vec{fallback} : axis;
  };
  const std::vector<int> ranks = axis_or(config.grid.ranks, config.defaults.rank);
  const std::vector<double> dropouts = axis_or(config.grid.dropouts, config.defaults.dropout);
  const std::vector<double> decays = axis_or(config.grid.weight_decays, config.defaults.weight_decay);
  const std::vector<long long> train_ns = axis_or(config.grid.train_ns, config.defaults.train_n);
  const std::vector<long long> steps = axis_or(config.grid.max_steps, config.defaults.max_steps);

  std::size_t config_index = 0;
  for (int rank : ranks)
    for (double dropout : dropouts)
      for (double decay : decays)
        for (long long train_n : train_ns)
          for (long long max_steps : steps) {
            TrainConfig point = config.defaults;
            point.rank = rank;
            point.dropout = dropout;
            point.weight_decay = decay;
            point.train_n = train_n;
            point.max_steps = max_steps;

            PointOutcome outcome;
            if (!load_error.empty()) {
              outcome.config_index = config_index;
              outcome.config = point;
              outcome.error = "config point " + std::to_string(config_index) + ": " + load_error;
            } else {
              try {
                outcome = run_point(*ws, config, point, config_index);
              } catch (const std::exception& e) {
                outcome = PointOutcome{};
                outcome.config_index = config_index;
                outcome.config = point;
                outcome.error =
                    "config point " + std::to_string(config_index) + ": " + e.what();
              }
            }
            if (outcome.ok) {
              detail::append_csv_row(result.csv, outcome, "linguistic", config.family,
                                     config.base_seed, outcome.accuracy_linguistic,
                                     outcome.steps_linguistic, outcome.stop_linguistic);
              detail::append_csv_row(result.csv, outcome, "control", config.family,
                                     config.base_seed, outcome.accuracy_control,
                                     outcome.steps_control, outcome.stop_control);
            } else {
              result.all_ok = false;
            }
            result.points.push_back(std::move(outcome));
            ++config_index;
          }

  result.json["config"] = to_json(config);
  nlohmann::json points = nlohmann::json::array();
  for (const PointOutcome& p : result.points) points.push_back(detail::point_to_json(p, config));
  result.json["points"] = std::move(points);
  return result;
}

inline void write_sweep_outputs(const SweepResult& result, const std::string& csv_path,
                                const std::string& json_path) {
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open " + csv_path);
  csv << result.csv;
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw std::runtime_error("cannot open " + json_path);
  js << result.json.dump(2) << '\n';
}

// --- representation comparison ---------------------------------------------

struct CompareRow {
  std::string point;  // hyperparameter summary of the matched config point
  double accuracy_a = 0.0, selectivity_a = 0.0;
  double accuracy_b = 0.0, selectivity_b = 0.0;
  double delta_accuracy = 0.0, delta_selectivity = 0.0;
};

// Side-by-side accuracy/selectivity deltas (B - A) for two reports produced
// on the same task, probe family and grid but different representations.
inline std::vector<CompareRow> compare_representations(const nlohmann::json& report_a,
                                                       const nlohmann::json& report_b) {
  const auto& config_a = report_a.at("config");
  const auto& config_b = report_b.at("config");
  if (config_a.at("task") != config_b.at("task"))
    throw std::invalid_argument("compare_representations: task mismatch (" +
                                config_a.at("task").get<std::string>() + " vs " +
                                config_b.at("task").get<std::string>() + ")");
  if (config_a.at("probe") != config_b.at("probe"))
    throw std::invalid_argument("compare_representations: probe family mismatch (" +
                                config_a.at("probe").get<std::string>() + " vs " +
                                config_b.at("probe").get<std::string>() + ")");
  const auto& points_a = report_a.at("points");
  const auto& points_b = report_b.at("points");
  if (points_a.size() != points_b.size())
    throw std::invalid_argument("compare_representations: reports have different point counts");

  std::vector<CompareRow> rows;
  rows.reserve(points_a.size());
  for (std::size_t i = 0; i < points_a.size(); ++i) {
    const auto& a = points_a.at(i);
    const auto& b = points_b.at(i);
    if (!a.at("ok").get<bool>() || !b.at("ok").get<bool>())
      throw std::invalid_argument("compare_representations: point " + std::to_string(i) +
                                  " failed in one of the reports");
    for (const char* key : {"resolved_rank", "resolved_train_n"})
      if (a.at(key) != b.at(key))
        throw std::invalid_argument(std::string("compare_representations: ") + key +
                                    " differs at point " + std::to_string(i));
    const auto& ca = a.at("config");
    const auto& cb = b.at("config");
    for (const char* key : {"dropout", "weight_decay", "max_steps"})
      if (ca.at(key) != cb.at(key))
        throw std::invalid_argument(std::string("compare_representations: ") + key +
                                    " differs at point " + std::to_string(i));

    CompareRow row;
    row.point = a.at("probe").get<std::string>() + " rank=" +
                std::to_string(a.at("resolved_rank").get<int>()) +
                " p=" + detail::format_double(ca.at("dropout").get<double>()) +
                " wd=" + detail::format_double(ca.at("weight_decay").get<double>());
    row.accuracy_a = a.at("linguistic").at("accuracy").get<double>();
    row.selectivity_a = a.at("selectivity").get<double>();
    row.accuracy_b = b.at("linguistic").at("accuracy").get<double>();
    row.selectivity_b = b.at("selectivity").get<double>();
    row.delta_accuracy = row.accuracy_b - row.accuracy_a;
    row.delta_selectivity = row.selectivity_b - row.selectivity_a;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_comparison(const std::vector<CompareRow>& rows, const std::string& name_a,
                                     const std::string& name_b) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-40s  %10s %10s  %10s %10s  %8s %8s\n", "point",
                (name_a + " acc").c_str(), "select.", (name_b + " acc").c_str(), "select.",
                "d(acc)", "d(sel)");
  out << line;
  for (const CompareRow& row : rows) {
    std::snprintf(line, sizeof line, "%-40s  %10.2f %10.2f  %10.2f %10.2f  %+8.2f %+8.2f\n",
                  row.point.c_str(), row.accuracy_a, row.selectivity_a, row.accuracy_b,
                  row.selectivity_b, row.delta_accuracy, row.delta_selectivity);
    out << line;
  }
  return out.str();
}

// Table-style rendering of a sweep report: one block per config point with
// linguistic accuracy, control accuracy and selectivity.
inline std::string format_report(const nlohmann::json& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%5s  %-8s %6s %8s %8s %8s %10s  %10s %10s %10s\n", "point",
                "probe", "rank", "dropout", "wdecay", "train_n", "max_steps", "ling acc",
                "ctl acc", "select.");
  out << line;
  for (const auto& p : report.at("points")) {
    if (!p.at("ok").get<bool>()) {
      std::snprintf(line, sizeof line, "%5lld  FAILED: %s\n",
                    p.at("config_index").get<long long>(),
                    p.at("error").get<std::string>().c_str());
      out << line;
      continue;
    }
    const auto& c = p.at("config");
    std::snprintf(line, sizeof line,
                  "%5lld  %-8s %6d %8.2f %8.3g %8lld %10lld  %10.2f %10.2f %10.2f\n",
                  p.at("config_index").get<long long>(), p.at("probe").get<std::string>().c_str(),
                  p.at("resolved_rank").get<int>(), c.at("dropout").get<double>(),
                  c.at("weight_decay").get<double>(), p.at("resolved_train_n").get<long long>(),
                  c.at("max_steps").get<long long>(), p.at("linguistic").at("accuracy").get<double>(),
                  p.at("control").at("accuracy").get<double>(), p.at("selectivity").get<double>());
    out << line;
  }
  return out.str();
}

}  // namespace probeforge
