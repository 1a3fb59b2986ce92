#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "qeforge/checkpoint.hpp"
#include "qeforge/config.hpp"
#include "qeforge/error.hpp"
#include "qeforge/estimator.hpp"
#include "qeforge/eval.hpp"
#include "qeforge/experiment.hpp"
#include "qeforge/predictor_train.hpp"
#include "qeforge/stacking.hpp"

namespace fs = std::filesystem;
using namespace qeforge;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out_dir = "qeforge-out";
};

ExperimentConfig effective_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig::desk() : ExperimentConfig::load(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.config.empty()) c.threads = estimator::threads_from_env();
  c.estimator_train.threads = c.threads;
  return c;
}

// "[PAIR=]PATH"; without a pair the parent directory name is used, which
// matches the generated data layout (data/en-de/train.tsv).
std::pair<std::string, fs::path> split_pair(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos) return {arg.substr(0, eq), arg.substr(eq + 1)};
  fs::path p(arg);
  return {p.parent_path().filename().string(), p};
}

std::vector<corpus::QESample> load_qe_all(const std::vector<std::string>& args) {
  std::vector<corpus::QESample> out;
  for (const auto& a : args) {
    const auto [pair, path] = split_pair(a);
    auto s = corpus::load_qe_dataset(path, pair.empty() ? "unknown" : pair);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const nlohmann::json& settings,
                    std::uint64_t seed) {
  nlohmann::json m = {{"command", command},
                      {"seed", seed},
                      {"config_hash", checkpoint::hash_to_hex(fnv1a(settings.dump()))},
                      {"settings", settings}};
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  out << m.dump(2) << '\n';
}

experiment::Vocabularies load_vocabs(const fs::path& dir) {
  return {corpus::Vocab::load(dir / "source.vocab"), corpus::Vocab::load(dir / "target.vocab")};
}

std::vector<std::vector<estimator::ScoredPrediction>> read_all_predictions(const std::vector<std::string>& paths) {
  std::vector<std::vector<estimator::ScoredPrediction>> out;
  for (const auto& p : paths) out.push_back(estimator::read_predictions(p));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qeforge: predictor-estimator quality estimation for machine translation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (default from config, 7)");
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

  // train-predictor
  auto* tp = app.add_subcommand("train-predictor", "Train the word predictor on parallel data");
  std::vector<std::string> tp_train, tp_valid, tp_vocab_qe;
  std::string tp_pretrained, tp_arch, tp_loss;
  int tp_epochs = 0;
  tp->add_option("--train", tp_train, "Parallel corpus (source<TAB>target)")->required()->check(CLI::ExistingFile);
  tp->add_option("--valid", tp_valid, "Held-out parallel corpus")->check(CLI::ExistingFile);
  tp->add_option("--vocab-qe", tp_vocab_qe, "QE datasets whose tokens join the vocabularies");
  tp->add_option("--pretrained", tp_pretrained, "Predictor checkpoint to transfer (embeddings excluded)")
      ->check(CLI::ExistingFile);
  tp->add_option("--arch", tp_arch, "rnn or transformer");
  tp->add_option("--loss", tp_loss, "ce, nce or neg");
  tp->add_option("--epochs", tp_epochs, "Training epochs");

  // train-estimator
  auto* te = app.add_subcommand("train-estimator", "Train the estimator with a frozen predictor");
  std::string te_predictor;
  std::vector<std::string> te_train, te_valid;
  int te_epochs = 0;
  te->add_option("--predictor", te_predictor, "Predictor checkpoint")->required()->check(CLI::ExistingFile);
  te->add_option("--train", te_train, "[PAIR=]QE dataset")->required();
  te->add_option("--valid", te_valid, "[PAIR=]QE dataset");
  te->add_option("--epochs", te_epochs, "Training epochs");

  // predict
  auto* pr = app.add_subcommand("predict", "Score QE data with a predictor and estimator");
  std::string pr_predictor, pr_estimator, pr_out;
  std::vector<std::string> pr_data;
  pr->add_option("--predictor", pr_predictor)->required()->check(CLI::ExistingFile);
  pr->add_option("--estimator", pr_estimator)->required()->check(CLI::ExistingFile);
  pr->add_option("--data", pr_data, "[PAIR=]QE dataset")->required();
  pr->add_option("--out", pr_out, "Predictions file (default <out-dir>/predictions.tsv)");

  // ensemble-fit
  auto* ef = app.add_subcommand("ensemble-fit", "Stack sub-model dev predictions");
  std::vector<std::string> ef_pred, ef_data;
  std::string ef_regressor = "gbt";
  int ef_folds = 0;
  ef->add_option("--pred", ef_pred, "Sub-model predictions on the dev set")->required()->check(CLI::ExistingFile);
  ef->add_option("--data", ef_data, "[PAIR=]dev QE dataset with gold scores")->required();
  ef->add_option("--regressor", ef_regressor, "ridge or gbt")->capture_default_str();
  ef->add_option("--folds", ef_folds, "Cross-validation folds");

  // ensemble-predict
  auto* ep = app.add_subcommand("ensemble-predict", "Apply a fitted meta-model");
  std::string ep_model, ep_out;
  std::vector<std::string> ep_pred, ep_data;
  ep->add_option("--model", ep_model, "meta_model.json")->required()->check(CLI::ExistingFile);
  ep->add_option("--pred", ep_pred, "Sub-model predictions, same order as at fit time")->required()->check(CLI::ExistingFile);
  ep->add_option("--data", ep_data, "[PAIR=]QE dataset (for length features)")->required();
  ep->add_option("--out", ep_out, "Predictions file (default <out-dir>/predictions.tsv)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Pearson correlation per language and pooled groups");
  std::string ev_pred, ev_gold, ev_groups = "et+ne+ro,zh+de";
  std::vector<std::string> ev_gold_data;
  bool ev_json = false;
  ev->add_option("--pred", ev_pred, "Predictions file")->required()->check(CLI::ExistingFile);
  auto* gold_opt = ev->add_option("--gold", ev_gold, "Gold scores in predictions format")->check(CLI::ExistingFile);
  ev->add_option("--gold-data", ev_gold_data, "[PAIR=]QE dataset(s) holding the gold scores")->excludes(gold_opt);
  ev->add_option("--groups", ev_groups, "Pooled groups, e.g. et+ne+ro,zh+de")->capture_default_str();
  ev->add_flag("--json", ev_json, "Print JSON instead of a table");

  // experiment
  auto* ex = app.add_subcommand("experiment", "Run a preset on the synthetic benchmark");
  std::string ex_preset;
  ex->add_option("--preset", ex_preset, "Preset tag")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out_dir(g.out_dir);
    auto config = effective_config(g);

    if (*tp) {
      fs::create_directories(out_dir);
      std::vector<corpus::ParallelPair> train, valid;
      for (const auto& p : tp_train) {
        auto v = corpus::load_parallel(p);
        train.insert(train.end(), v.begin(), v.end());
      }
      for (const auto& p : tp_valid) {
        auto v = corpus::load_parallel(p);
        valid.insert(valid.end(), v.begin(), v.end());
      }
      std::vector<corpus::Tokens> src, tgt;
      for (const auto& p : train) {
        src.push_back(p.source_tokens);
        tgt.push_back(p.target_tokens);
      }
      for (const auto& s : load_qe_all(tp_vocab_qe)) {
        src.push_back(s.source_tokens);
        tgt.push_back(s.target_tokens);
      }
      experiment::Vocabularies vocabs{corpus::build_vocab(src), corpus::build_vocab(tgt)};
      vocabs.source.save(out_dir / "source.vocab");
      vocabs.target.save(out_dir / "target.vocab");

      auto shape = config.predictor;
      if (!tp_arch.empty()) shape.architecture = predictor::parse_architecture(tp_arch);
      shape = experiment::shape_for(shape, vocabs);
      auto tcfg = config.predictor_train;
      if (!tp_loss.empty()) tcfg.loss = predictor::parse_loss_kind(tp_loss);
      if (tp->count("--epochs")) tcfg.epochs = tp_epochs;
      tcfg.validate();

      Rng rng(derive_seed(config.seed, "train-predictor"));
      auto initial = experiment::init_params(shape, vocabs, rng);
      if (!tp_pretrained.empty())
        initial = checkpoint::load_pretrained_excluding_embeddings(tp_pretrained, std::move(initial));
      const auto enc_train = experiment::encode_parallel(train, vocabs);
      const auto enc_valid = experiment::encode_parallel(valid, vocabs);
      std::optional<corpus::NoiseDistribution> noise;
      if (tcfg.loss != predictor::LossKind::kCrossEntropy)
        noise = corpus::noise_distribution(vocabs.target, tcfg.noise_exponent);
      const auto result = predictor::train_predictor(std::move(initial), tcfg, enc_train, enc_valid,
                                                     noise ? &*noise : nullptr, rng);
      for (const auto& l : result.log)
        fmt::print("epoch {:3d}  train {:.4f}  valid {:.4f}  acc {:.4f}\n", l.epoch, l.train_loss,
                   l.valid_loss, l.valid_accuracy);
      checkpoint::save_predictor(result.params, out_dir / "predictor.qfc");
      write_manifest(out_dir, "train-predictor",
                     {{"shape", shape.to_json()}, {"train", tcfg.to_json()}, {"inputs", tp_train},
                      {"pretrained", tp_pretrained}},
                     config.seed);
      fmt::print("best epoch {}; wrote {}\n", result.best_epoch, (out_dir / "predictor.qfc").string());
      return 0;
    }

    if (*te) {
      fs::create_directories(out_dir);
      const auto pred = checkpoint::load_predictor(te_predictor);
      const auto vocabs = load_vocabs(fs::path(te_predictor).parent_path());
      auto ecfg = config.estimator_train;
      if (te->count("--epochs")) ecfg.epochs = te_epochs;
      const auto train = load_qe_all(te_train);
      const auto valid = load_qe_all(te_valid);
      Rng rng(derive_seed(config.seed, "train-estimator"));
      const auto result = experiment::fit_estimator(pred, config.estimator, ecfg, train, valid, vocabs, rng);
      for (const auto& l : result.log)
        fmt::print("epoch {:3d}  train mse {:.4f}  valid mse {:.4f}  valid r {:.4f}\n", l.epoch, l.train_mse,
                   l.valid_mse, l.valid_pearson);
      estimator::save_estimator(result.params, out_dir / "estimator.qfc");
      write_manifest(out_dir, "train-estimator",
                     {{"shape", result.params.shape.to_json()}, {"train", ecfg.to_json()}, {"inputs", te_train},
                      {"predictor", te_predictor}},
                     config.seed);
      fmt::print("best epoch {}; wrote {}\n", result.best_epoch, (out_dir / "estimator.qfc").string());
      return 0;
    }

    if (*pr) {
      const auto pred = checkpoint::load_predictor(pr_predictor);
      const auto est = estimator::load_estimator(pr_estimator);
      const auto vocabs = load_vocabs(fs::path(pr_predictor).parent_path());
      const auto data = load_qe_all(pr_data);
      const auto preds = estimator::predict_batch(
          pred, est, estimator::encode_samples(data, vocabs.source, vocabs.target), config.threads);
      const fs::path out = pr_out.empty() ? out_dir / "predictions.tsv" : fs::path(pr_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      estimator::write_predictions(out, preds);
      fmt::print("wrote {} predictions to {}\n", preds.size(), out.string());
      return 0;
    }

    if (*ef) {
      fs::create_directories(out_dir);
      const auto preds = read_all_predictions(ef_pred);
      const auto data = load_qe_all(ef_data);
      const auto rows = ensemble::assemble_features(preds, data);
      ensemble::write_features_csv(out_dir / "features.csv", rows);
      const int folds = ef->count("--folds") ? ef_folds : config.ensemble.folds;
      Rng rng(derive_seed(config.seed, "ensemble-fit"));
      const auto result = ensemble::stack_fit(rows, ensemble::parse_regressor_kind(ef_regressor), folds,
                                              config.ensemble.grid, rng);
      result.model.save(out_dir / "meta_model.json");
      {
        std::ofstream cv(out_dir / "cv_report.json", std::ios::binary | std::ios::trunc);
        cv << result.report.to_json().dump(2) << '\n';
      }
      write_manifest(out_dir, "ensemble-fit",
                     {{"regressor", ef_regressor}, {"folds", folds}, {"grid", config.ensemble.grid.to_json()},
                      {"predictions", ef_pred}},
                     config.seed);
      const auto& best = result.report.settings[result.report.best];
      fmt::print("best {} mean fold r {:.4f} (out-of-fold r {:.4f}); wrote {}\n", best.params.dump(),
                 best.mean_pearson, best.oof_pearson, (out_dir / "meta_model.json").string());
      return 0;
    }

    if (*ep) {
      const auto model = ensemble::MetaModel::load(ep_model);
      const auto preds = read_all_predictions(ep_pred);
      const auto data = load_qe_all(ep_data);
      const auto rows = ensemble::assemble_features(preds, data, false);
      if (rows.names != model.feature_names)
        throw ConfigError(fmt::format("meta-model expects {} features, got {}", model.feature_names.size(),
                                      rows.names.size()));
      const auto scores = model.predict(rows.matrix());
      std::vector<estimator::ScoredPrediction> out;
      for (std::size_t i = 0; i < data.size(); ++i)
        out.push_back({scores(static_cast<Eigen::Index>(i)), data[i].language_pair, i});
      const fs::path path = ep_out.empty() ? out_dir / "predictions.tsv" : fs::path(ep_out);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      estimator::write_predictions(path, out);
      fmt::print("wrote {} predictions to {}\n", out.size(), path.string());
      return 0;
    }

    if (*ev) {
      const auto preds = estimator::read_predictions(ev_pred);
      std::vector<double> gold;
      std::vector<std::string> pairs;
      if (!ev_gold.empty()) {
        for (const auto& p : estimator::read_predictions(ev_gold)) {
          gold.push_back(p.score);
          pairs.push_back(p.language_pair);
        }
      } else if (!ev_gold_data.empty()) {
        for (const auto& s : load_qe_all(ev_gold_data)) {
          gold.push_back(s.score);
          pairs.push_back(s.language_pair);
        }
      } else {
        throw ConfigError("evaluate needs --gold or --gold-data");
      }
      if (gold.size() != preds.size())
        throw ShapeError(fmt::format("{} predictions but {} gold scores", preds.size(), gold.size()));
      std::vector<eval::ScoredPair> scored;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].language_pair != pairs[i])
          throw ShapeError(fmt::format("line {}: prediction is for {} but gold is for {}", i + 1,
                                       preds[i].language_pair, pairs[i]));
        scored.push_back({preds[i].score, gold[i], eval::language_of(pairs[i])});
      }
      const auto rep = eval::report(scored, eval::parse_grouping(ev_groups));
      if (ev_json)
        std::cout << rep.to_json().dump(2) << '\n';
      else
        std::cout << rep.to_table();
      return 0;
    }

    if (*ex) {
      config.preset = ex_preset;
      const auto res = experiment::run_preset(config, out_dir);
      std::cout << "preset " << res.preset << " (config " << res.manifest.at("config_hash").get<std::string>()
                << ", seed " << config.seed << ")\n"
                << res.report.to_table() << "predictions: " << res.predictions.string() << '\n';
      return 0;
    }
  } catch (const qeforge::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
