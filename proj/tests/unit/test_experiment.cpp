#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "qeforge/config.hpp"
#include "qeforge/error.hpp"
#include "qeforge/experiment.hpp"
#include "qeforge/synthetic.hpp"
#include "support.hpp"

using namespace qeforge;
using qeforge::testing::TempDir;

namespace {

ExperimentConfig tiny_config() {
  auto c = ExperimentConfig::desk();
  c.synthetic.lexicon_size = 12;
  c.synthetic.parallel_low = 20;
  c.synthetic.parallel_high = 30;
  c.synthetic.augmentation = 20;
  c.synthetic.qe_train_low = 20;
  c.synthetic.qe_train_high = 30;
  c.synthetic.qe_valid = 20;
  c.synthetic.qe_test = 20;
  c.predictor.embedding_dim = 8;
  c.predictor.hidden = 8;
  c.estimator.input_dim = c.predictor.state_dim();
  c.estimator.hidden = 4;
  c.predictor_train.epochs = 1;
  c.pretrain_epochs = 1;
  c.estimator_train.epochs = 2;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CommandResult {
  int status = 0;
  std::string output;
};

CommandResult run(const std::string& cmd) {
  CommandResult r;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return {-1, ""};
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  r.status = ::pclose(pipe);
  return r;
}

}  // namespace

// -- config ------------------------------------------------------------------------

TEST(Config, FullDefaultsAndDeskProfile) {
  const ExperimentConfig full;
  EXPECT_EQ(full.predictor.hidden, 400);
  EXPECT_EQ(full.predictor.layers, 2);
  EXPECT_EQ(full.predictor_train.batch_size, 64);
  EXPECT_DOUBLE_EQ(full.predictor_train.adam.learning_rate, 2e-3);
  EXPECT_DOUBLE_EQ(full.predictor_train.dropout, 0.5);
  EXPECT_EQ(full.estimator.hidden, 400);
  EXPECT_EQ(full.ensemble.folds, 5);
  const auto desk = ExperimentConfig::from_json({{"profile", "desk"}});
  EXPECT_EQ(desk.to_json(), ExperimentConfig::desk().to_json());
  EXPECT_THROW(ExperimentConfig::from_json({{"profile", "laptop"}}), ConfigError);
}

TEST(Config, JsonRoundTripAndPartialOverrides) {
  auto c = tiny_config();
  c.seed = 99;
  EXPECT_EQ(ExperimentConfig::from_json(c.to_json()).to_json(), c.to_json());
  const auto o = ExperimentConfig::from_json(
      {{"profile", "desk"}, {"predictor_train", {{"epochs", 3}}}, {"seed", 11}});
  EXPECT_EQ(o.predictor_train.epochs, 3);
  EXPECT_EQ(o.predictor_train.batch_size, ExperimentConfig::desk().predictor_train.batch_size);
  EXPECT_EQ(o.seed, 11u);
}

TEST(Config, HashIgnoresPresetAndThreads) {
  auto a = tiny_config();
  auto b = a;
  b.preset = "nce";
  b.threads = 4;
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.seed = a.seed + 1;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, DegenerateSettingsRejected) {
  auto c = tiny_config();
  c.predictor_train.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.ensemble.folds = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.data_dir = "/nonexistent/qeforge";
  EXPECT_THROW(c.validate(), ConfigError);
}

// -- synthetic benchmark -------------------------------------------------------------

TEST(Synthetic, DeterministicSizesAndStandardizedScores) {
  const auto cfg = tiny_config().synthetic;
  const auto a = synthetic::generate(cfg, 5);
  const auto b = synthetic::generate(cfg, 5);
  ASSERT_EQ(a.pairs.size(), 5u);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    const auto& p = a.pairs[i];
    EXPECT_EQ(p.qe_train.size(), static_cast<std::size_t>(p.spec.low_resource ? cfg.qe_train_low : cfg.qe_train_high));
    EXPECT_EQ(p.augmentation.size(), p.spec.low_resource ? static_cast<std::size_t>(cfg.augmentation) : 0u);
    ASSERT_EQ(p.qe_valid.size(), b.pairs[i].qe_valid.size());
    for (std::size_t k = 0; k < p.qe_valid.size(); ++k) {
      EXPECT_EQ(p.qe_valid[k].score, b.pairs[i].qe_valid[k].score);
      EXPECT_EQ(p.qe_valid[k].target_tokens, b.pairs[i].qe_valid[k].target_tokens);
    }
    double mean = 0.0, sq = 0.0;
    for (const auto& s : p.qe_train) mean += s.score;
    mean /= static_cast<double>(p.qe_train.size());
    for (const auto& s : p.qe_train) sq += (s.score - mean) * (s.score - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(sq / static_cast<double>(p.qe_train.size()), 1.0, 1e-9);
  }
  EXPECT_EQ(a.pair("en-de").spec.low_resource, true);
  EXPECT_THROW(a.pair("fr-en"), ConfigError);
}

TEST(Synthetic, ParallelDataCoversLexiconAndFollowsCipher) {
  auto cfg = tiny_config().synthetic;
  const synthetic::PairGenerator gen({"ro", "en", false}, cfg, 3);
  Rng rng(4);
  const auto data = gen.parallel(cfg.parallel_high, rng);
  std::set<std::string> seen;
  for (const auto& p : data) {
    ASSERT_EQ(p.source_tokens.size(), p.target_tokens.size());
    for (std::size_t i = 0; i < p.source_tokens.size(); ++i) {
      seen.insert(p.source_tokens[i]);
      EXPECT_EQ(gen.translate(p.source_tokens[i]), p.target_tokens[i]);
    }
  }
  EXPECT_EQ(seen.size(), gen.source_lexicon().size());
}

TEST(Synthetic, WriteLoadRoundTrip) {
  const auto bench = synthetic::generate(tiny_config().synthetic, 6);
  TempDir dir("bench");
  synthetic::write_benchmark(bench, dir.path());
  const auto back = synthetic::load_benchmark(dir.path());
  ASSERT_EQ(back.pairs.size(), bench.pairs.size());
  for (std::size_t i = 0; i < bench.pairs.size(); ++i) {
    EXPECT_EQ(back.pairs[i].parallel.size(), bench.pairs[i].parallel.size());
    EXPECT_EQ(back.pairs[i].augmentation.size(), bench.pairs[i].augmentation.size());
    ASSERT_EQ(back.pairs[i].qe_test.size(), bench.pairs[i].qe_test.size());
    EXPECT_EQ(back.pairs[i].qe_test[3].score, bench.pairs[i].qe_test[3].score);
  }
}

// -- presets ----------------------------------------------------------------------

TEST(Presets, NamesMembersAndSubModels) {
  const auto names = experiment::preset_names();
  for (const char* n : {"baseline", "transformer", "nce", "neg", "D1", "D2", "D3", "D5", "pretrain-de", "pretrain-ne",
                        "ensemble-ridge", "ensemble-gbt", "ensemble-all"})
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  EXPECT_TRUE(experiment::ensemble_members("baseline").empty());
  EXPECT_EQ(experiment::ensemble_members("ensemble-all"),
            (std::vector<std::string>{"base", "D1", "D2", "D3", "D5", "de", "zh", "ro", "et", "ne"}));
  EXPECT_EQ(experiment::submodel_spec("D2").augmentation, 200);
  EXPECT_EQ(experiment::submodel_spec("D5").augmentation, 500);
  EXPECT_EQ(experiment::submodel_spec("zh").pretrain_pair, "en-zh");
  EXPECT_EQ(experiment::submodel_spec("neg").loss, predictor::LossKind::kNeg);
  EXPECT_THROW(experiment::submodel_spec("D4"), ConfigError);
}

TEST(Presets, UnknownPresetListsValidTags) {
  auto c = tiny_config();
  c.preset = "bogus";
  TempDir dir("preset");
  try {
    experiment::run_preset(c, dir.path());
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("ensemble-gbt"), std::string::npos);
  }
}

TEST(Presets, ZeroEpochBaselineRejected) {
  auto c = tiny_config();
  c.predictor_train.epochs = 0;
  TempDir dir("preset");
  EXPECT_THROW(experiment::run_preset(c, dir.path()), ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "baseline"));
}

TEST(Presets, TinyRunsWriteArtifactsAndOneRowPerPreset) {
  auto c = tiny_config();
  TempDir dir("preset");
  const auto base = experiment::run_preset(c, dir.path());
  EXPECT_TRUE(std::filesystem::exists(base.predictions));
  EXPECT_TRUE(std::filesystem::exists(dir / "baseline" / "report.json"));
  EXPECT_NE(base.report.find("et+ne+ro"), nullptr);
  const auto first = slurp(base.predictions);
  experiment::run_preset(c, dir.path());
  EXPECT_EQ(slurp(base.predictions), first);

  c.preset = "ensemble-gbt";
  const auto ens = experiment::run_preset(c, dir.path());
  EXPECT_TRUE(std::filesystem::exists(dir / "ensemble-gbt" / "meta_model.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ensemble-gbt" / "features_dev.csv"));
  EXPECT_EQ(estimator::read_predictions(ens.predictions).size(), 100u);

  std::ifstream table(dir / "results.tsv");
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(table, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rfind("preset\tconfig_hash\tseed", 0), 0u);
  EXPECT_EQ(rows[1].rfind("baseline\t" + c.hash(), 0), 0u);
  EXPECT_EQ(rows[2].rfind("ensemble-gbt\t" + c.hash(), 0), 0u);
}

TEST(ResultsTable, UpsertReplacesMatchingKey) {
  TempDir dir("table");
  const std::vector<eval::ScoredPair> pairs = {{1, 1, "de"}, {2, 2, "de"}, {3, 1, "de"}};
  const auto rep = eval::report(pairs, eval::parse_grouping("zh+de"));
  const auto table = dir / "results.tsv";
  experiment::upsert_results(table, "baseline", "aaaa", 7, rep);
  experiment::upsert_results(table, "nce", "aaaa", 7, rep);
  experiment::upsert_results(table, "baseline", "aaaa", 7, rep);
  experiment::upsert_results(table, "baseline", "bbbb", 7, rep);
  std::ifstream in(table);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 4);
}

// -- command line -------------------------------------------------------------------

TEST(Cli, EvaluatePerfectCorrelation) {
  TempDir dir("cli");
  const std::vector<estimator::ScoredPrediction> pred = {{1, "en-de", 0}, {2, "en-de", 1}, {3, "en-de", 2}};
  const std::vector<estimator::ScoredPrediction> gold = {{2, "en-de", 0}, {4, "en-de", 1}, {6, "en-de", 2}};
  estimator::write_predictions(dir / "p.tsv", pred);
  estimator::write_predictions(dir / "g.tsv", gold);
  const auto r = run(std::string(QEFORGE_CLI) + " evaluate --json --groups de --pred " + (dir / "p.tsv").string() +
                     " --gold " + (dir / "g.tsv").string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto j = nlohmann::json::parse(r.output);
  EXPECT_NEAR(j["languages"]["de"]["pearson"].get<double>(), 1.0, 1e-12);
  const auto table = run(std::string(QEFORGE_CLI) + " evaluate --groups de --pred " + (dir / "p.tsv").string() +
                         " --gold " + (dir / "g.tsv").string());
  EXPECT_NE(table.output.find("1.0000"), std::string::npos) << table.output;
}

TEST(Cli, ErrorsExitNonZero) {
  EXPECT_NE(run(std::string(QEFORGE_CLI) + " evaluate --pred /nonexistent.tsv --gold /nonexistent.tsv").status, 0);
  EXPECT_NE(run(std::string(QEFORGE_CLI) + " frobnicate").status, 0);
  TempDir dir("cli");
  const auto r = run(std::string(QEFORGE_CLI) + " --out-dir " + dir.path().string() + " experiment --preset bogus");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
}
