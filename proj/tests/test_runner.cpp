#include <catch_amalgamated.hpp>

#include <filesystem>

#include "probeforge/runner.hpp"
#include "support/fixtures.hpp"

using namespace probeforge;

namespace {

// Writes a small POS corpus plus label-oracle representations and returns a
// ready ExperimentConfig pointing at the files.
ExperimentConfig make_pos_experiment(const std::filesystem::path& dir, std::uint64_t seed) {
  const Corpus corpus = fixtures::make_synthetic_corpus({.num_types = 30,
                                                         .num_tags = 6,
                                                         .train_sentences = 60,
                                                         .dev_sentences = 16,
                                                         .seed = seed});
  const ColumnSchema schema = default_schema();
  fixtures::write_corpus_files(corpus, dir, schema);

  const Vocabulary vocab = build_vocabulary(corpus);
  auto labels_of = [&](const Split& split) {
    LabelSeqs labels;
    for (const Sentence& s : split) {
      std::vector<int> seq;
      for (const Token& t : s.tokens) seq.push_back(t.tag_id);
      labels.push_back(seq);
    }
    return labels;
  };
  const ReprFile train = gen_label_oracle_reprs(corpus.train, SplitId::train,
                                                labels_of(corpus.train), corpus.tags.size(), 0.1,
                                                1.0, 4, 16, vocab, seed + 1);
  const ReprFile dev = gen_label_oracle_reprs(corpus.dev, SplitId::dev, labels_of(corpus.dev),
                                              corpus.tags.size(), 0.1, 1.0, 4, 16, vocab, seed + 1);
  write_repr_file(train, (dir / "train.rpr").string());
  write_repr_file(dev, (dir / "dev.rpr").string());

  ExperimentConfig config;
  config.task = TaskKind::pos;
  config.family = ProbeFamily::linear;
  config.corpus_train = (dir / "train.tsv").string();
  config.corpus_dev = (dir / "dev.tsv").string();
  config.reprs_train = (dir / "train.rpr").string();
  config.reprs_dev = (dir / "dev.rpr").string();
  config.control_seed = 17;
  config.base_seed = 171;
  config.defaults.max_steps = 250;
  config.defaults.batch_size = 8;
  config.defaults.learning_rate = 0.01;
  return config;
}

}  // namespace

TEST_CASE("an empty grid produces a header-only CSV") {
  ExperimentConfig config;  // no grid axes, no files needed
  const SweepResult result = run_sweep(config);
  REQUIRE(result.csv == std::string(kReportCsvHeader));
  REQUIRE(result.points.empty());
  REQUIRE(result.all_ok);
}

TEST_CASE("a 2x2 grid runs four points in config-index order") {
  const auto dir = fixtures::scratch_dir("grid2x2");
  ExperimentConfig config = make_pos_experiment(dir, 300);
  config.defaults.max_steps = 40;
  config.grid.ranks = {2, 4};
  config.grid.weight_decays = {0.0, 0.1};
  const SweepResult result = run_sweep(config);
  REQUIRE(result.points.size() == 4);
  REQUIRE(result.all_ok);
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(result.points[i].config_index == i);
  // two CSV rows per point plus the header
  std::size_t lines = 0;
  for (char c : result.csv) lines += c == '\n';
  REQUIRE(lines == 9);
  REQUIRE(result.points[0].config.weight_decay == 0.0);
  REQUIRE(result.points[1].config.weight_decay == 0.1);
  REQUIRE(result.points[2].config.rank == 4);
}

TEST_CASE("the stock rank sweep for POS holds four points") {
  GridAxes grid;
  grid.ranks = default_rank_sweep(TaskKind::pos);
  REQUIRE(grid.points() == 4);
  REQUIRE(grid.ranks == std::vector<int>{2, 4, 10, 45});
  REQUIRE(default_rank_sweep(TaskKind::dep) == std::vector<int>{5, 10, 50, 100});
}

TEST_CASE("untrained probes sit near chance with selectivity near zero") {
  const auto dir = fixtures::scratch_dir("untrained");
  ExperimentConfig config = make_pos_experiment(dir, 301);
  config.defaults.max_steps = 0;
  config.grid.ranks = {4};
  const SweepResult result = run_sweep(config);
  REQUIRE(result.all_ok);
  const PointOutcome& p = result.points.at(0);
  REQUIRE(p.accuracy_linguistic < 0.6);
  REQUIRE(p.accuracy_control < 0.6);
  REQUIRE(std::abs(p.selectivity_value) < 0.35);
  REQUIRE(p.steps_linguistic == 0);
}

TEST_CASE("a trained linear probe on label-oracle data is selective") {
  const auto dir = fixtures::scratch_dir("selective");
  ExperimentConfig config = make_pos_experiment(dir, 302);
  config.grid.ranks = {6};
  const SweepResult result = run_sweep(config);
  REQUIRE(result.all_ok);
  const PointOutcome& p = result.points.at(0);
  REQUIRE(p.accuracy_linguistic > 0.9);
  REQUIRE(p.accuracy_control <= p.ceiling + 0.05);
  REQUIRE(p.selectivity_value > 0.2);
}

TEST_CASE("sweeps rerun byte-identically") {
  const auto dir = fixtures::scratch_dir("determinism");
  ExperimentConfig config = make_pos_experiment(dir, 303);
  config.defaults.max_steps = 60;
  config.grid.ranks = {2, 6};
  const SweepResult a = run_sweep(config);
  const SweepResult b = run_sweep(config);
  REQUIRE(a.csv == b.csv);
  REQUIRE(a.json.dump(2) == b.json.dump(2));

  // and written files match too
  write_sweep_outputs(a, (dir / "r1.csv").string(), (dir / "r1.json").string());
  write_sweep_outputs(b, (dir / "r2.csv").string(), (dir / "r2.json").string());
  REQUIRE(fixtures::read_file(dir / "r1.csv") == fixtures::read_file(dir / "r2.csv"));
  REQUIRE(fixtures::read_file(dir / "r1.json") == fixtures::read_file(dir / "r2.json"));
}

TEST_CASE("per-point failures are recorded without aborting the sweep") {
  const auto dir = fixtures::scratch_dir("failures");
  ExperimentConfig config = make_pos_experiment(dir, 304);
  config.defaults.max_steps = 20;
  config.grid.train_ns = {4, 1000000};  // the second exceeds the split size
  const SweepResult result = run_sweep(config);
  REQUIRE(result.points.size() == 2);
  REQUIRE(result.points[0].ok);
  REQUIRE_FALSE(result.points[1].ok);
  REQUIRE_FALSE(result.all_ok);
  REQUIRE_THAT(result.points[1].error, Catch::Matchers::ContainsSubstring("config point 1"));
  const nlohmann::json& p1 = result.json.at("points").at(1);
  REQUIRE(p1.at("ok") == false);
  REQUIRE_THAT(p1.at("error").get<std::string>(),
               Catch::Matchers::ContainsSubstring("exceeds population size"));
}

TEST_CASE("a dependency sweep follows the evaluation protocol end to end") {
  const auto dir = fixtures::scratch_dir("dep_sweep");
  const Corpus corpus = fixtures::make_synthetic_corpus({.num_types = 40,
                                                         .num_tags = 5,
                                                         .train_sentences = 40,
                                                         .dev_sentences = 10,
                                                         .dev_len = 8,
                                                         .seed = 400});
  fixtures::write_corpus_files(corpus, dir, default_schema());
  const Vocabulary vocab = build_vocabulary(corpus);
  const SplitReprs reprs = gen_type_identity_reprs(corpus, vocab, 12, 401);
  write_repr_file(reprs.train, (dir / "train.rpr").string());
  write_repr_file(reprs.dev, (dir / "dev.rpr").string());

  ExperimentConfig config;
  config.task = TaskKind::dep;
  config.family = ProbeFamily::bilinear;
  config.corpus_train = (dir / "train.tsv").string();
  config.corpus_dev = (dir / "dev.tsv").string();
  config.reprs_train = (dir / "train.rpr").string();
  config.reprs_dev = (dir / "dev.rpr").string();
  config.control_seed = 402;
  config.base_seed = 403;
  config.defaults.max_steps = 120;
  config.defaults.batch_size = 8;
  config.defaults.learning_rate = 0.01;
  config.grid.ranks = {6};
  const SweepResult result = run_sweep(config);
  REQUIRE(result.all_ok);
  const PointOutcome& p = result.points.at(0);
  REQUIRE(p.accuracy_linguistic >= 0.0);
  REQUIRE(p.accuracy_linguistic <= 1.0);
  REQUIRE(p.accuracy_control <= 1.0);
  // linguistic evaluation drops one root per sentence; control keeps all
  long long dev_tokens = 0;
  for (const Sentence& s : corpus.dev) dev_tokens += s.length();
  REQUIRE(p.eval_tokens_linguistic == dev_tokens - (long long)corpus.dev.size());
  REQUIRE(p.eval_tokens_control == dev_tokens);
  // the dependency chance term is the token-averaged 1/T (all dev lengths 8)
  REQUIRE_THAT(p.ceiling, Catch::Matchers::WithinAbs(
      control_ceiling(train_type_coverage(corpus.dev, vocab,
                                          train_seen_types(corpus.train, vocab)),
                      1.0 / 8.0), 1e-12));
  const nlohmann::json& point = result.json.at("points").at(0);
  REQUIRE(point.at("linguistic").at("root_excluded") == true);
  REQUIRE(point.at("control").at("root_excluded") == false);
  REQUIRE_THAT(p.selectivity_value, Catch::Matchers::WithinAbs(
      p.accuracy_linguistic - p.accuracy_control, 1e-12));
}

TEST_CASE("sweep reports echo the effective config") {
  const auto dir = fixtures::scratch_dir("echo");
  ExperimentConfig config = make_pos_experiment(dir, 305);
  config.defaults.max_steps = 10;
  config.grid.ranks = {3};
  const SweepResult result = run_sweep(config);
  const nlohmann::json& echoed = result.json.at("config");
  REQUIRE(echoed.at("task") == "pos");
  REQUIRE(echoed.at("control_seed") == 17);
  REQUIRE(echoed.at("defaults").at("batch_size") == 8);
  // a re-parsed echo reproduces the same sweep
  ExperimentConfig round = experiment_config_from_json(echoed);
  REQUIRE(round.grid.ranks == config.grid.ranks);
  REQUIRE(round.base_seed == config.base_seed);
  const SweepResult again = run_sweep(round);
  REQUIRE(again.csv == result.csv);
}

namespace {

nlohmann::json mini_report(double ling_acc, double ctl_acc, double sel) {
  nlohmann::json point;
  point["config_index"] = 0;
  point["ok"] = true;
  point["config"] = {{"dropout", 0.0}, {"weight_decay", 0.0}, {"max_steps", 100},
                     {"rank", 10}, {"train_n", -1}};
  point["resolved_rank"] = 10;
  point["resolved_train_n"] = 50;
  point["task"] = "pos";
  point["probe"] = "linear";
  point["ceiling"] = 100.0;
  point["selectivity"] = sel;
  point["linguistic"] = {{"accuracy", ling_acc}};
  point["control"] = {{"accuracy", ctl_acc}};
  nlohmann::json report;
  report["config"] = {{"task", "pos"}, {"probe", "linear"}};
  report["points"] = nlohmann::json::array({point});
  return report;
}

}  // namespace

TEST_CASE("representation comparison") {
  SECTION("identical reports have zero deltas") {
    const nlohmann::json r = mini_report(97.2, 71.2, 26.0);
    const std::vector<CompareRow> rows = compare_representations(r, r);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].delta_accuracy == 0.0);
    REQUIRE(rows[0].delta_selectivity == 0.0);
  }
  SECTION("accuracy loss and selectivity gain are signed B - A") {
    const std::vector<CompareRow> rows = compare_representations(
        mini_report(97.2, 71.2, 26.0), mini_report(96.6, 65.2, 31.4));
    REQUIRE_THAT(rows[0].delta_accuracy, Catch::Matchers::WithinAbs(-0.6, 1e-9));
    REQUIRE_THAT(rows[0].delta_selectivity, Catch::Matchers::WithinAbs(5.4, 1e-9));
  }
  SECTION("random pairs match direct subtraction") {
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
      const double a1 = 100 * rng.next_unit(), s1 = 100 * rng.next_unit() - 50;
      const double a2 = 100 * rng.next_unit(), s2 = 100 * rng.next_unit() - 50;
      const std::vector<CompareRow> rows =
          compare_representations(mini_report(a1, 50, s1), mini_report(a2, 50, s2));
      REQUIRE_THAT(rows[0].delta_accuracy, Catch::Matchers::WithinAbs(a2 - a1, 1e-9));
      REQUIRE_THAT(rows[0].delta_selectivity, Catch::Matchers::WithinAbs(s2 - s1, 1e-9));
    }
  }
  SECTION("mismatched task or family is rejected") {
    nlohmann::json dep = mini_report(90, 80, 10);
    dep["config"]["task"] = "dep";
    REQUIRE_THROWS_WITH(compare_representations(mini_report(90, 80, 10), dep),
                        Catch::Matchers::ContainsSubstring("task mismatch"));
    nlohmann::json mlp = mini_report(90, 80, 10);
    mlp["config"]["probe"] = "mlp1";
    REQUIRE_THROWS_WITH(compare_representations(mini_report(90, 80, 10), mlp),
                        Catch::Matchers::ContainsSubstring("probe family mismatch"));
  }
  SECTION("formatting renders one line per row") {
    const std::vector<CompareRow> rows = compare_representations(
        mini_report(97.2, 71.2, 26.0), mini_report(96.6, 65.2, 31.4));
    const std::string table = format_comparison(rows, "ELMo1", "ELMo2");
    REQUIRE_THAT(table, Catch::Matchers::ContainsSubstring("ELMo1 acc"));
    REQUIRE_THAT(table, Catch::Matchers::ContainsSubstring("-0.60"));
    REQUIRE_THAT(table, Catch::Matchers::ContainsSubstring("+5.40"));
  }
}
