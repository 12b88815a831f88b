// probeforge command line: corpus ingestion, control task construction,
// synthetic representation fixtures, probe training, hyperparameter sweeps
// and report tooling.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "probeforge/probeforge.hpp"

namespace pf = probeforge;
using nlohmann::json;

namespace {

struct CorpusArgs {
  std::string train, dev, test;
  std::string schema = "index,form,tag,head";
  std::string vocab = "all";
};

void add_corpus_options(CLI::App* cmd, CorpusArgs& args, bool need_test) {
  cmd->add_option("--train", args.train, "training split file")->required();
  cmd->add_option("--dev", args.dev, "development split file")->required();
  auto* test = cmd->add_option("--test", args.test, "test split file");
  if (need_test) test->required();
  cmd->add_option("--schema", args.schema, "column schema, e.g. index,form,tag,head");
  cmd->add_option("--vocab", args.vocab, "vocabulary scope: all | train")
      ->check(CLI::IsMember({"all", "train"}));
}

pf::Corpus load_corpus(const CorpusArgs& args) {
  const pf::ColumnSchema schema = pf::ColumnSchema::parse(args.schema);
  pf::Corpus corpus;
  auto load = [&](const std::string& path, pf::Split& split) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    split = pf::parse_corpus(in, schema, corpus.tags, path);
  };
  load(args.train, corpus.train);
  load(args.dev, corpus.dev);
  load(args.test, corpus.test);
  return corpus;
}

pf::VocabScope vocab_scope(const CorpusArgs& args) {
  return args.vocab == "train" ? pf::VocabScope::train_only : pf::VocabScope::all_splits;
}

json split_summary(const pf::Split& split) {
  long long tokens = 0;
  for (const pf::Sentence& s : split) tokens += s.length();
  return {{"sentences", split.size()}, {"tokens", tokens}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << text;
}

int run(int argc, char** argv) {
  CLI::App app{"probeforge: control tasks and selectivity for representation probes"};
  app.require_subcommand(1);

  // --- ingest ---------------------------------------------------------
  CorpusArgs ingest_args;
  std::string emit_dir;
  auto* ingest = app.add_subcommand("ingest", "parse and validate a corpus, print summary");
  add_corpus_options(ingest, ingest_args, false);
  ingest->add_option("--emit-dir", emit_dir, "re-emit normalized splits into this directory");
  ingest->callback([&] {
    const pf::Corpus corpus = load_corpus(ingest_args);
    const pf::Vocabulary vocab = pf::build_vocabulary(corpus, vocab_scope(ingest_args));
    json summary;
    summary["train"] = split_summary(corpus.train);
    summary["dev"] = split_summary(corpus.dev);
    summary["test"] = split_summary(corpus.test);
    summary["tags"] = corpus.tags.size();
    summary["vocabulary"] = vocab.size();
    if (!corpus.train.empty()) {
      const std::vector<double> dist =
          pf::empirical_tag_distribution(corpus.train, corpus.tags.size());
      json tag_dist = json::object();
      for (int k = 1; k <= corpus.tags.size(); ++k)
        tag_dist[corpus.tags.label(k)] = dist[static_cast<std::size_t>(k) - 1];
      summary["train_tag_distribution"] = std::move(tag_dist);
    }
    if (!emit_dir.empty()) {
      const pf::ColumnSchema schema = pf::ColumnSchema::parse(ingest_args.schema);
      std::filesystem::create_directories(emit_dir);
      auto emit = [&](const pf::Split& split, const char* name) {
        if (split.empty()) return;
        std::ofstream out(emit_dir + "/" + name + ".tsv", std::ios::trunc);
        pf::emit_split(out, split, corpus.tags, schema);
      };
      emit(corpus.train, "train");
      emit(corpus.dev, "dev");
      emit(corpus.test, "test");
    }
    std::cout << summary.dump(2) << '\n';
  });

  // --- make-control ----------------------------------------------------
  CorpusArgs control_args;
  std::string control_task_name = "pos";
  std::uint64_t control_seed = 7;
  std::string control_out;
  auto* make_control = app.add_subcommand("make-control", "sample a control task spec");
  add_corpus_options(make_control, control_args, false);
  make_control->add_option("--task", control_task_name, "pos | dep")
      ->check(CLI::IsMember({"pos", "dep"}));
  make_control->add_option("--seed", control_seed, "control sampling seed");
  make_control->add_option("--out", control_out, "output spec path (default: stdout)");
  make_control->callback([&] {
    const pf::Corpus corpus = load_corpus(control_args);
    const pf::Vocabulary vocab = pf::build_vocabulary(corpus, vocab_scope(control_args));
    json doc;
    if (control_task_name == "pos") {
      const std::vector<double> dist =
          pf::empirical_tag_distribution(corpus.train, corpus.tags.size());
      doc = pf::to_json(pf::sample_pos_control(vocab, dist, control_seed), vocab);
    } else {
      doc = pf::to_json(pf::sample_dep_control(vocab, control_seed), vocab);
    }
    if (control_out.empty()) std::cout << doc.dump(2) << '\n';
    else write_text(control_out, doc.dump(2) + "\n");
  });

  // --- gen-fixture -------------------------------------------------------
  CorpusArgs fixture_args;
  std::string fixture_kind = "type-identity";
  std::string out_prefix = "fixture";
  std::string base_prefix;
  std::uint64_t fixture_seed = 11;
  std::size_t fixture_d = 64;
  double sigma = 0.1, identity_weight = 1.0;
  std::size_t identity_dims = 8;
  int window = 1;
  auto* gen = app.add_subcommand("gen-fixture", "generate synthetic representation files");
  add_corpus_options(gen, fixture_args, false);
  gen->add_option("--kind", fixture_kind, "type-identity | label-oracle | contextual-mix")
      ->check(CLI::IsMember({"type-identity", "label-oracle", "contextual-mix"}));
  gen->add_option("--out-prefix", out_prefix, "writes <prefix>.<split>.rpr");
  gen->add_option("--seed", fixture_seed, "generator seed");
  gen->add_option("--d", fixture_d, "representation dimensionality");
  gen->add_option("--sigma", sigma, "label-oracle: noise channel scale");
  gen->add_option("--identity-weight", identity_weight, "label-oracle: identity channel weight");
  gen->add_option("--identity-dims", identity_dims, "label-oracle: identity channel width");
  gen->add_option("--base-prefix", base_prefix, "contextual-mix: base representations prefix");
  gen->add_option("--window", window, "contextual-mix: window radius");
  gen->callback([&] {
    const pf::Corpus corpus = load_corpus(fixture_args);
    const pf::Vocabulary vocab = pf::build_vocabulary(corpus, vocab_scope(fixture_args));
    auto out_path = [&](pf::SplitId s) {
      return out_prefix + "." + pf::split_name(s) + ".rpr";
    };
    const pf::SplitId split_ids[] = {pf::SplitId::train, pf::SplitId::dev, pf::SplitId::test};

    if (fixture_kind == "type-identity") {
      pf::SplitReprs reprs = pf::gen_type_identity_reprs(corpus, vocab, fixture_d, fixture_seed);
      for (pf::SplitId s : split_ids)
        if (!corpus.split(s).empty())
          pf::write_repr_file(reprs.of(s), out_path(s), static_cast<std::uint32_t>(fixture_d));
    } else if (fixture_kind == "label-oracle") {
      for (pf::SplitId s : split_ids) {
        const pf::Split& split = corpus.split(s);
        if (split.empty()) continue;
        pf::LabelSeqs labels;
        labels.reserve(split.size());
        for (const pf::Sentence& sentence : split) {
          std::vector<int> seq;
          for (const pf::Token& token : sentence.tokens) seq.push_back(token.tag_id);
          labels.push_back(std::move(seq));
        }
        const pf::ReprFile file = pf::gen_label_oracle_reprs(
            split, s, labels, corpus.tags.size(), sigma, identity_weight, identity_dims,
            fixture_d, vocab, fixture_seed);
        pf::write_repr_file(file, out_path(s), static_cast<std::uint32_t>(fixture_d));
      }
    } else {
      if (base_prefix.empty())
        throw CLI::ValidationError("--base-prefix is required for contextual-mix");
      for (pf::SplitId s : split_ids) {
        const pf::Split& split = corpus.split(s);
        if (split.empty()) continue;
        const pf::ReprFile base =
            pf::read_repr_file(base_prefix + "." + pf::split_name(s) + ".rpr");
        const pf::ReprFile mixed = pf::gen_contextual_mix_reprs(split, base, window, fixture_seed);
        pf::write_repr_file(mixed, out_path(s));
      }
    }
  });

  // --- train ------------------------------------------------------------
  CorpusArgs train_args;
  std::string train_task = "pos", train_probe = "linear", train_labels = "gold";
  std::string reprs_train, reprs_dev, control_spec_path, train_out = "trainresult";
  std::string confusion_csv;
  std::optional<std::uint64_t> train_control_seed;
  pf::TrainConfig train_config;
  auto* train = app.add_subcommand("train", "train one probe and write result + checkpoint");
  add_corpus_options(train, train_args, false);
  train->add_option("--task", train_task, "pos | dep")->check(CLI::IsMember({"pos", "dep"}));
  train->add_option("--probe", train_probe, "linear | bilinear | mlp1 | mlp2")
      ->check(CLI::IsMember({"linear", "bilinear", "mlp1", "mlp2"}));
  train->add_option("--labels", train_labels, "gold | control")
      ->check(CLI::IsMember({"gold", "control"}));
  train->add_option("--reprs-train", reprs_train, "training representations (.rpr)")->required();
  train->add_option("--reprs-dev", reprs_dev, "dev representations (.rpr)")->required();
  train->add_option("--control-spec", control_spec_path, "control spec JSON (for --labels control)");
  train->add_option("--control-seed", train_control_seed,
                    "sample the control task with this seed instead of loading a spec");
  train->add_option("--rank", train_config.rank, "rank / hidden width (0 = family default)");
  train->add_option("--dropout", train_config.dropout, "dropout probability");
  train->add_option("--weight-decay", train_config.weight_decay, "L2 coefficient");
  train->add_option("--train-n", train_config.train_n, "training sentences (-1 = all)");
  train->add_option("--max-steps", train_config.max_steps, "maximum gradient steps");
  train->add_option("--batch-size", train_config.batch_size, "sentences per step");
  train->add_option("--lr", train_config.learning_rate, "initial Adam learning rate");
  train->add_option("--anneal-factor", train_config.anneal_factor, "learning rate anneal factor");
  train->add_option("--patience", train_config.patience, "non-improving epochs before stopping");
  train->add_option("--seed-init", train_config.seeds.init, "parameter init seed");
  train->add_option("--seed-dropout", train_config.seeds.dropout, "dropout mask seed");
  train->add_option("--seed-shuffle", train_config.seeds.shuffle, "epoch shuffle seed");
  train->add_option("--seed-subsample", train_config.seeds.subsample, "train subsample seed");
  train->add_option("--out", train_out, "output prefix for result JSON and checkpoint");
  train->add_option("--confusion", confusion_csv, "write the dev confusion matrix (POS) as CSV");
  train->callback([&] {
    const pf::TaskKind task = pf::task_from_name(train_task);
    const pf::ProbeFamily family = pf::family_from_name(train_probe);
    const pf::Corpus corpus = load_corpus(train_args);
    const pf::Vocabulary vocab = pf::build_vocabulary(corpus, vocab_scope(train_args));

    const pf::ReprFile train_file = pf::read_repr_file(reprs_train);
    const pf::ReprFile dev_file = pf::read_repr_file(reprs_dev);
    pf::check_alignment(train_file, corpus.train, "train representations");
    pf::check_alignment(dev_file, corpus.dev, "dev representations");

    pf::LabelSeqs train_labels_seq, dev_labels_seq;
    if (train_labels == "gold") {
      for (const pf::Split* split : {&corpus.train, &corpus.dev}) {
        pf::LabelSeqs& out = split == &corpus.train ? train_labels_seq : dev_labels_seq;
        for (const pf::Sentence& sentence : *split) {
          std::vector<int> seq;
          for (const pf::Token& token : sentence.tokens)
            seq.push_back(task == pf::TaskKind::pos ? token.tag_id : token.head);
          out.push_back(std::move(seq));
        }
      }
    } else {
      json spec_doc;
      if (!control_spec_path.empty()) {
        std::ifstream in(control_spec_path);
        if (!in) throw std::runtime_error("cannot open control spec: " + control_spec_path);
        spec_doc = json::parse(in);
      }
      if (task == pf::TaskKind::pos) {
        pf::PosControlSpec spec;
        if (!control_spec_path.empty()) {
          spec = pf::pos_control_from_json(spec_doc, vocab);
        } else if (train_control_seed) {
          const std::vector<double> dist =
              pf::empirical_tag_distribution(corpus.train, corpus.tags.size());
          spec = pf::sample_pos_control(vocab, dist, *train_control_seed);
        } else {
          throw CLI::ValidationError("--labels control needs --control-spec or --control-seed");
        }
        for (const pf::Sentence& s : corpus.train)
          train_labels_seq.push_back(pf::apply_control_pos(s, vocab, spec));
        for (const pf::Sentence& s : corpus.dev)
          dev_labels_seq.push_back(pf::apply_control_pos(s, vocab, spec));
      } else {
        pf::DepControlSpec spec;
        if (!control_spec_path.empty()) {
          spec = pf::dep_control_from_json(spec_doc, vocab);
        } else if (train_control_seed) {
          spec = pf::sample_dep_control(vocab, *train_control_seed);
        } else {
          throw CLI::ValidationError("--labels control needs --control-spec or --control-seed");
        }
        for (const pf::Sentence& s : corpus.train)
          train_labels_seq.push_back(pf::apply_control_dep(s, vocab, spec));
        for (const pf::Sentence& s : corpus.dev)
          dev_labels_seq.push_back(pf::apply_control_dep(s, vocab, spec));
      }
    }

    std::vector<std::size_t> selected(corpus.train.size());
    std::iota(selected.begin(), selected.end(), std::size_t{0});
    if (train_config.train_n >= 0)
      selected = pf::subsample_indices(corpus.train.size(),
                                       static_cast<std::size_t>(train_config.train_n),
                                       train_config.seeds.subsample);

    pf::ProbeDataset train_set, dev_set;
    for (std::size_t idx : selected) {
      train_set.reprs.push_back(pf::to_matrix(train_file[idx]));
      train_set.labels.push_back(train_labels_seq[idx]);
    }
    for (std::size_t s = 0; s < dev_file.size(); ++s) {
      dev_set.reprs.push_back(pf::to_matrix(dev_file[s]));
      dev_set.labels.push_back(dev_labels_seq[s]);
    }

    const pf::TrainResult result =
        pf::train_probe(task, family, train_set, dev_set, corpus.tags.size(), train_config);

    json doc = pf::to_json(result, train_config);
    const pf::LabelSeqs predictions = pf::predict_dataset(task, result.params, dev_set);
    double accuracy;
    if (task == pf::TaskKind::pos) {
      accuracy = pf::accuracy_pos(predictions, dev_labels_seq);
      if (!confusion_csv.empty()) {
        const auto counts =
            pf::confusion_matrix(predictions, dev_labels_seq, corpus.tags.size());
        std::vector<std::string> labels;
        for (int k = 1; k <= corpus.tags.size(); ++k) labels.push_back(corpus.tags.label(k));
        std::ofstream out(confusion_csv, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + confusion_csv);
        pf::write_confusion_csv(out, counts, labels);
      }
    } else {
      if (!confusion_csv.empty())
        throw CLI::ValidationError("--confusion applies to POS tasks only");
      // gold dependency labels carry the root (head 0); control labels do not
      const bool exclude_root = train_labels == "gold";
      accuracy = pf::accuracy_dep(predictions, dev_labels_seq, exclude_root);
      doc["root_excluded_from_eval"] = exclude_root;
    }
    doc["dev_accuracy"] = pf::as_percent(accuracy);
    doc["checkpoint"] = train_out + ".checkpoint";
    write_text(train_out + ".json", doc.dump(2) + "\n");
    pf::save_checkpoint(result.params, train_out + ".checkpoint");
    std::cout << doc.dump(2) << '\n';
  });

  // --- sweep -------------------------------------------------------------
  std::string sweep_config_path, sweep_out_dir = ".";
  std::optional<std::uint64_t> sweep_base_seed, sweep_control_seed;
  auto* sweep = app.add_subcommand("sweep", "run a hyperparameter grid and write reports");
  sweep->add_option("--config", sweep_config_path, "sweep config JSON")->required();
  sweep->add_option("--out-dir", sweep_out_dir, "directory for report.csv / report.json");
  sweep->add_option("--base-seed", sweep_base_seed, "override the config base seed");
  sweep->add_option("--control-seed", sweep_control_seed, "override the config control seed");
  sweep->callback([&] {
    std::ifstream in(sweep_config_path);
    if (!in) throw std::runtime_error("cannot open sweep config: " + sweep_config_path);
    pf::ExperimentConfig config = pf::experiment_config_from_json(json::parse(in));
    if (sweep_base_seed) config.base_seed = *sweep_base_seed;
    if (sweep_control_seed) config.control_seed = *sweep_control_seed;

    const pf::SweepResult result = pf::run_sweep(config);
    std::filesystem::create_directories(sweep_out_dir);
    pf::write_sweep_outputs(result, sweep_out_dir + "/report.csv", sweep_out_dir + "/report.json");
    std::cout << pf::format_report(result.json);
    if (!result.all_ok) {
      std::cerr << "sweep finished with failed points\n";
      throw CLI::RuntimeError(1);
    }
  });

  // --- compare -------------------------------------------------------------
  std::string compare_a, compare_b, compare_csv, name_a = "A", name_b = "B";
  auto* compare = app.add_subcommand("compare", "side-by-side table of two sweep reports");
  compare->add_option("report_a", compare_a, "first report.json")->required();
  compare->add_option("report_b", compare_b, "second report.json")->required();
  compare->add_option("--name-a", name_a, "label for the first report");
  compare->add_option("--name-b", name_b, "label for the second report");
  compare->add_option("--csv", compare_csv, "also write the comparison as CSV");
  compare->callback([&] {
    auto load = [](const std::string& path) {
      std::ifstream in(path);
      if (!in) throw std::runtime_error("cannot open report: " + path);
      return json::parse(in);
    };
    const std::vector<pf::CompareRow> rows =
        pf::compare_representations(load(compare_a), load(compare_b));
    std::cout << pf::format_comparison(rows, name_a, name_b);
    if (!compare_csv.empty()) {
      std::string csv = "point,accuracy_a,selectivity_a,accuracy_b,selectivity_b,"
                        "delta_accuracy,delta_selectivity\n";
      char line[256];
      for (const pf::CompareRow& row : rows) {
        std::snprintf(line, sizeof line, "%s,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f\n", row.point.c_str(),
                      row.accuracy_a, row.selectivity_a, row.accuracy_b, row.selectivity_b,
                      row.delta_accuracy, row.delta_selectivity);
        csv += line;
      }
      write_text(compare_csv, csv);
    }
  });

  // --- report ---------------------------------------------------------------
  std::string report_path;
  auto* report = app.add_subcommand("report", "render a sweep report as a table");
  report->add_option("report_json", report_path, "report.json from a sweep")->required();
  report->callback([&] {
    std::ifstream in(report_path);
    if (!in) throw std::runtime_error("cannot open report: " + report_path);
    std::cout << pf::format_report(json::parse(in));
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "probeforge: " << e.what() << '\n';
    return 1;
  }
}
