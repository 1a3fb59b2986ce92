#include "qeforge/experiment.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "qeforge/checkpoint.hpp"
#include "qeforge/error.hpp"
#include "qeforge/parallel.hpp"
#include "qeforge/stacking.hpp"

namespace qeforge::experiment {

namespace fs = std::filesystem;

Vocabularies build_vocabularies(const synthetic::Benchmark& bench) {
  std::vector<corpus::Tokens> src, tgt;
  for (const auto& p : bench.pairs) {
    for (const auto* set : {&p.parallel, &p.augmentation})
      for (const auto& x : *set) {
        src.push_back(x.source_tokens);
        tgt.push_back(x.target_tokens);
      }
    for (const auto& s : p.qe_train) {
      src.push_back(s.source_tokens);
      tgt.push_back(s.target_tokens);
    }
  }
  return {corpus::build_vocab(src), corpus::build_vocab(tgt)};
}

std::vector<predictor::EncodedPair> encode_parallel(std::span<const corpus::ParallelPair> data,
                                                    const Vocabularies& vocabs) {
  std::vector<predictor::EncodedPair> out;
  out.reserve(data.size());
  for (const auto& p : data)
    out.push_back(predictor::encode_pair(p.source_tokens, p.target_tokens, vocabs.source, vocabs.target));
  return out;
}

predictor::PredictorShape shape_for(predictor::PredictorShape base, const Vocabularies& vocabs) {
  base.source_vocab_size = vocabs.source.size();
  base.target_vocab_size = vocabs.target.size();
  if (base.architecture == predictor::Architecture::kTransformer) base.embedding_dim = base.hidden;
  base.validate();
  return base;
}

predictor::PredictorParams init_params(const predictor::PredictorShape& shape, const Vocabularies& vocabs,
                                       Rng& rng) {
  predictor::PredictorParams p(shape, vocabs.source.fingerprint(), vocabs.target.fingerprint());
  predictor::init_predictor(p, rng);
  return p;
}

predictor::PredictorParams fit_predictor(predictor::PredictorParams initial,
                                         const predictor::PredictorTrainConfig& config,
                                         std::span<const corpus::ParallelPair> data,
                                         const Vocabularies& vocabs, Rng& rng) {
  const auto encoded = encode_parallel(data, vocabs);
  std::optional<corpus::NoiseDistribution> noise;
  if (config.loss != predictor::LossKind::kCrossEntropy)
    noise = corpus::noise_distribution(vocabs.target, config.noise_exponent);
  auto result = predictor::train_predictor(std::move(initial), config, encoded, {},
                                           noise ? &*noise : nullptr, rng);
  return std::move(result.params);
}

estimator::EstimatorTrainResult fit_estimator(const predictor::PredictorParams& predictor,
                                              estimator::EstimatorShape shape,
                                              const estimator::EstimatorTrainConfig& config,
                                              std::span<const corpus::QESample> train,
                                              std::span<const corpus::QESample> valid,
                                              const Vocabularies& vocabs, Rng& rng) {
  shape.input_dim = predictor.shape.state_dim();
  estimator::EstimatorParams params(shape);
  estimator::init_estimator(params, rng);
  const auto tr = estimator::encode_samples(train, vocabs.source, vocabs.target);
  const auto va = estimator::encode_samples(valid, vocabs.source, vocabs.target);
  return estimator::train_estimator(std::move(params), config, predictor, tr, va, rng);
}

double pearson_against(std::span<const estimator::ScoredPrediction> preds,
                       std::span<const corpus::QESample> gold) {
  if (preds.size() != gold.size()) throw ShapeError("pearson_against: size mismatch");
  std::vector<double> p, g;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(preds[i].score);
    g.push_back(gold[i].score);
  }
  return eval::pearson(p, g);
}

std::vector<corpus::QESample> qe_split(const synthetic::Benchmark& bench,
                                       std::vector<corpus::QESample> synthetic::PairData::*split) {
  std::vector<corpus::QESample> out;
  for (const auto& p : bench.pairs) out.insert(out.end(), (p.*split).begin(), (p.*split).end());
  return out;
}

SubModelSpec submodel_spec(const std::string& name) {
  SubModelSpec s;
  s.name = name;
  if (name == "base") return s;
  if (name == "transformer") {
    s.architecture = predictor::Architecture::kTransformer;
    return s;
  }
  if (name == "nce" || name == "neg") {
    s.loss = predictor::parse_loss_kind(name);
    return s;
  }
  static const std::map<std::string, int> tiers = {{"D1", 100}, {"D2", 200}, {"D3", 300}, {"D5", 500}};
  if (const auto it = tiers.find(name); it != tiers.end()) {
    s.augmentation = it->second;
    return s;
  }
  for (const auto& p : synthetic::default_pairs()) {
    const auto lang = eval::language_of(p.name());
    if (name == lang) {
      s.pretrain_pair = p.name();
      return s;
    }
  }
  throw ConfigError("unknown sub-model '" + name + "'");
}

namespace {

std::vector<corpus::ParallelPair> predictor_corpus(const synthetic::Benchmark& bench, int augmentation) {
  std::vector<corpus::ParallelPair> out;
  for (const auto& p : bench.pairs) {
    out.insert(out.end(), p.parallel.begin(), p.parallel.end());
    if (!p.spec.low_resource || augmentation == 0) continue;
    if (static_cast<std::size_t>(augmentation) > p.augmentation.size())
      throw ConfigError(fmt::format("{} has {} augmentation pairs, {} requested", p.spec.name(),
                                    p.augmentation.size(), augmentation));
    out.insert(out.end(), p.augmentation.begin(), p.augmentation.begin() + augmentation);
  }
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

// Sub-models get a one-thread budget each when several run side by side.
ExperimentConfig with_inner_threads(ExperimentConfig c, int threads) {
  c.estimator_train.threads = threads;
  return c;
}

}  // namespace

SubModelArtifacts run_submodel(const SubModelSpec& spec, const ExperimentConfig& config,
                               const synthetic::Benchmark& bench, const Vocabularies& vocabs,
                               const fs::path& root) {
  const auto hash = config.hash();
  SubModelArtifacts art;
  art.spec = spec;
  art.dir = root / "submodels" / (spec.name + "-" + hash.substr(0, 8));
  const auto dev_gold = qe_split(bench, &synthetic::PairData::qe_valid);
  const auto test_gold = qe_split(bench, &synthetic::PairData::qe_test);

  const auto manifest_path = art.dir / "manifest.json";
  if (fs::exists(manifest_path) && fs::exists(art.dir / "dev.tsv") && fs::exists(art.dir / "test.tsv")) {
    try {
      const auto m = read_json(manifest_path);
      if (m.value("config_hash", std::string()) == hash && m.value("complete", false)) {
        art.dev = estimator::read_predictions(art.dir / "dev.tsv");
        art.test = estimator::read_predictions(art.dir / "test.tsv");
        art.dev_pearson = m.at("dev_pearson").get<double>();
        if (art.dev.size() == dev_gold.size() && art.test.size() == test_gold.size()) return art;
      }
    } catch (const std::exception&) {
    }
  }
  fs::create_directories(art.dir);

  Rng rng(derive_seed(config.seed, "submodel:" + spec.name));
  auto shape_base = config.predictor;
  shape_base.architecture = spec.architecture;
  const auto shape = shape_for(shape_base, vocabs);
  auto train_cfg = config.predictor_train;
  train_cfg.loss = spec.loss;

  predictor::PredictorParams initial = init_params(shape, vocabs, rng);
  if (!spec.pretrain_pair.empty()) {
    const auto& pair = bench.pair(spec.pretrain_pair);
    std::vector<corpus::ParallelPair> data = pair.parallel;
    data.insert(data.end(), pair.augmentation.begin(), pair.augmentation.end());
    auto pre_cfg = train_cfg;
    pre_cfg.epochs = config.pretrain_epochs;
    const auto pretrained = fit_predictor(init_params(shape, vocabs, rng), pre_cfg, data, vocabs, rng);
    checkpoint::save_predictor(pretrained, art.dir / "pretrained.qfc");
    initial = checkpoint::load_pretrained_excluding_embeddings(art.dir / "pretrained.qfc", std::move(initial));
  }
  const auto pred = fit_predictor(std::move(initial), train_cfg, predictor_corpus(bench, spec.augmentation),
                                  vocabs, rng);
  checkpoint::save_predictor(pred, art.dir / "predictor.qfc");

  const auto train = qe_split(bench, &synthetic::PairData::qe_train);
  const auto est = fit_estimator(pred, config.estimator, config.estimator_train, train, dev_gold, vocabs, rng);
  estimator::save_estimator(est.params, art.dir / "estimator.qfc");

  const int threads = config.estimator_train.threads;
  art.dev = estimator::predict_batch(pred, est.params,
                                     estimator::encode_samples(dev_gold, vocabs.source, vocabs.target), threads);
  art.test = estimator::predict_batch(pred, est.params,
                                      estimator::encode_samples(test_gold, vocabs.source, vocabs.target), threads);
  art.dev_pearson = pearson_against(art.dev, dev_gold);
  estimator::write_predictions(art.dir / "dev.tsv", art.dev);
  estimator::write_predictions(art.dir / "test.tsv", art.test);
  write_json(manifest_path, {{"submodel", spec.name},
                             {"config_hash", hash},
                             {"seed", config.seed},
                             {"best_estimator_epoch", est.best_epoch},
                             {"dev_pearson", art.dev_pearson},
                             {"complete", true}});
  return art;
}

std::vector<std::string> preset_names() {
  return {"baseline",    "transformer", "nce",         "neg",         "D1",
          "D2",          "D3",          "D5",          "pretrain-de", "pretrain-zh",
          "pretrain-ro", "pretrain-et", "pretrain-ne", "ensemble-ridge", "ensemble-gbt",
          "ensemble-all"};
}

std::vector<std::string> ensemble_members(const std::string& preset) {
  if (preset == "ensemble-ridge") return {"base", "de", "zh", "ro", "et", "ne"};
  if (preset == "ensemble-gbt") return {"base", "de", "zh", "ro"};
  if (preset == "ensemble-all") return {"base", "D1", "D2", "D3", "D5", "de", "zh", "ro", "et", "ne"};
  return {};
}

namespace {

std::string single_submodel(const std::string& preset) {
  if (preset == "baseline") return "base";
  if (preset.rfind("pretrain-", 0) == 0) return preset.substr(9);
  return preset;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

}  // namespace

PresetResult run_preset(const ExperimentConfig& config, const fs::path& out_dir) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), config.preset) == names.end())
    throw ConfigError(fmt::format("unknown preset '{}'; valid presets: {}", config.preset, join(names, ", ")));
  config.validate();

  fs::create_directories(out_dir);
  synthetic::Benchmark bench;
  if (config.data_dir) {
    bench = synthetic::load_benchmark(*config.data_dir);
  } else {
    bench = synthetic::generate(config.synthetic, config.seed);
    synthetic::write_benchmark(bench, out_dir / "data");
  }
  const auto vocabs = build_vocabularies(bench);
  const auto dev_gold = qe_split(bench, &synthetic::PairData::qe_valid);
  const auto test_gold = qe_split(bench, &synthetic::PairData::qe_test);

  const auto members = ensemble_members(config.preset);
  std::vector<std::string> to_train = members.empty() ? std::vector<std::string>{single_submodel(config.preset)} : members;
  std::vector<SubModelSpec> specs;
  for (const auto& n : to_train) specs.push_back(submodel_spec(n));

  std::vector<SubModelArtifacts> arts(specs.size());
  const int outer = std::min<int>(config.threads, static_cast<int>(specs.size()));
  const auto inner = with_inner_threads(config, outer > 1 ? 1 : config.threads);
  parallel_for(specs.size(), outer,
               [&](std::size_t i) { arts[i] = run_submodel(specs[i], inner, bench, vocabs, out_dir); });

  const auto dir = out_dir / config.preset;
  fs::create_directories(dir);
  PresetResult res;
  res.preset = config.preset;
  res.predictions = dir / "predictions.tsv";
  nlohmann::json manifest = {{"preset", config.preset},
                             {"config_hash", config.hash()},
                             {"seed", config.seed},
                             {"config", config.to_json()},
                             {"submodels", to_train}};
  nlohmann::json dev_scores = nlohmann::json::object();
  for (const auto& a : arts) dev_scores[a.spec.name] = a.dev_pearson;
  manifest["submodel_dev_pearson"] = dev_scores;

  std::vector<estimator::ScoredPrediction> test_pred;
  if (members.empty()) {
    test_pred = arts.front().test;
  } else {
    const auto kind = config.preset == "ensemble-ridge" ? ensemble::RegressorKind::kRidge
                                                        : ensemble::RegressorKind::kGbt;
    std::vector<std::vector<estimator::ScoredPrediction>> dev_preds, test_preds;
    for (const auto& a : arts) {
      dev_preds.push_back(a.dev);
      test_preds.push_back(a.test);
    }
    const auto dev_rows = ensemble::assemble_features(dev_preds, dev_gold);
    const auto test_rows = ensemble::assemble_features(test_preds, test_gold, false);
    ensemble::write_features_csv(dir / "features_dev.csv", dev_rows);
    ensemble::write_features_csv(dir / "features_test.csv", test_rows);
    Rng rng(derive_seed(config.seed, "stack:" + config.preset));
    const auto stacked = ensemble::stack_fit(dev_rows, kind, config.ensemble.folds, config.ensemble.grid, rng);
    stacked.model.save(dir / "meta_model.json");
    write_json(dir / "cv_report.json", stacked.report.to_json());
    const auto scores = stacked.model.predict(test_rows.matrix());
    for (std::size_t i = 0; i < test_gold.size(); ++i)
      test_pred.push_back({scores(static_cast<Eigen::Index>(i)), test_gold[i].language_pair, i});
    manifest["regressor"] = ensemble::to_string(kind);
    manifest["cv_best"] = stacked.report.settings[stacked.report.best].params;
    manifest["cv_oof_pearson"] = stacked.report.settings[stacked.report.best].oof_pearson;
  }
  estimator::write_predictions(res.predictions, test_pred);

  std::vector<eval::ScoredPair> scored;
  for (std::size_t i = 0; i < test_pred.size(); ++i)
    scored.push_back({test_pred[i].score, test_gold[i].score, eval::language_of(test_gold[i].language_pair)});
  res.report = eval::report(scored, eval::parse_grouping(config.groups));
  write_json(dir / "report.json", res.report.to_json());
  {
    std::ofstream t(dir / "report.txt", std::ios::binary | std::ios::trunc);
    t << res.report.to_table();
  }
  write_json(dir / "manifest.json", manifest);
  res.manifest = std::move(manifest);
  upsert_results(out_dir / "results.tsv", config.preset, config.hash(), config.seed, res.report);
  return res;
}

namespace {

const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols = {"et", "ne", "ro", "et+ne+ro", "de", "zh", "zh+de"};
  return cols;
}

class FileLock {
 public:
  explicit FileLock(const fs::path& path) : fd_(::open(path.c_str(), O_RDWR | O_CREAT, 0644)) {
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) throw Error("cannot lock " + path.string());
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_;
};

}  // namespace

void upsert_results(const fs::path& table, const std::string& preset, const std::string& config_hash,
                    std::uint64_t seed, const eval::EvalReport& report) {
  FileLock lock(table.string() + ".lock");
  const std::string header = "preset\tconfig_hash\tseed\t" + join(result_columns(), "\t");
  std::string row = fmt::format("{}\t{}\t{}", preset, config_hash, seed);
  for (const auto& c : result_columns()) {
    const auto* g = report.find(c);
    row += g ? fmt::format("\t{:.4f}", g->r) : std::string("\t-");
  }

  std::vector<std::string> lines;
  bool replaced = false;
  if (std::ifstream in(table, std::ios::binary); in) {
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      const auto key = preset + "\t" + config_hash + "\t";
      if (line.rfind(key, 0) == 0) {
        if (!replaced) lines.push_back(row);
        replaced = true;
      } else {
        lines.push_back(line);
      }
    }
  }
  if (!replaced) lines.push_back(row);
  const auto tmp = fs::path(table.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << header << '\n';
    for (const auto& l : lines) out << l << '\n';
  }
  fs::rename(tmp, table);
}

}  // namespace qeforge::experiment
