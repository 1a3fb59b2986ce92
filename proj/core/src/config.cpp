#include "qeforge/config.hpp"

#include <fstream>

#include "qeforge/checkpoint.hpp"
#include "qeforge/error.hpp"

namespace qeforge {

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.predictor.embedding_dim = 32;
  c.predictor.hidden = 32;
  c.predictor.layers = 1;
  c.predictor.heads = 2;
  c.predictor_train.epochs = 10;
  c.predictor_train.batch_size = 16;
  c.predictor_train.adam.learning_rate = 1e-2;
  c.predictor_train.negatives = 20;
  c.pretrain_epochs = 10;
  c.estimator.input_dim = c.predictor.state_dim();
  c.estimator.hidden = 16;
  c.estimator_train.epochs = 20;
  c.estimator_train.batch_size = 16;
  return c;
}

namespace {

template <class T>
T merged(const T& base, const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return base;
  if (!j.at(key).is_object()) throw ConfigError(std::string("config: '") + key + "' must be an object");
  nlohmann::json m = base.to_json();
  m.merge_patch(j.at(key));
  return T::from_json(m);
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = {{"seed", seed},
                      {"preset", preset},
                      {"synthetic", synthetic.to_json()},
                      {"predictor", predictor.to_json()},
                      {"predictor_train", predictor_train.to_json()},
                      {"pretrain_epochs", pretrain_epochs},
                      {"estimator", estimator.to_json()},
                      {"estimator_train", estimator_train.to_json()},
                      {"ensemble", {{"folds", ensemble.folds}, {"grid", ensemble.grid.to_json()}}},
                      {"groups", groups},
                      {"threads", threads}};
  if (data_dir) j["data_dir"] = data_dir->string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto profile = j.value("profile", std::string("full"));
  if (profile != "full" && profile != "desk")
    throw ConfigError("config: profile must be 'full' or 'desk'");
  ExperimentConfig c = profile == "desk" ? desk() : ExperimentConfig{};
  try {
    c.seed = j.value("seed", c.seed);
    c.preset = j.value("preset", c.preset);
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    c.synthetic = merged(c.synthetic, j, "synthetic");
    c.predictor = merged(c.predictor, j, "predictor");
    c.predictor_train = merged(c.predictor_train, j, "predictor_train");
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.estimator = merged(c.estimator, j, "estimator");
    c.estimator_train = merged(c.estimator_train, j, "estimator_train");
    if (j.contains("ensemble")) {
      const auto& e = j.at("ensemble");
      c.ensemble.folds = e.value("folds", c.ensemble.folds);
      if (e.contains("grid")) c.ensemble.grid = ensemble::StackGrid::from_json(e.at("grid"));
    }
    c.groups = j.value("groups", c.groups);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.estimator.input_dim = c.predictor.state_dim();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  if (data_dir && !std::filesystem::is_directory(*data_dir))
    throw ConfigError("data_dir " + data_dir->string() + " does not exist");
  synthetic.validate();
  predictor_train.validate();
  estimator_train.validate();
  if (pretrain_epochs < 1) throw ConfigError("pretrain_epochs must be >= 1");
  if (predictor.hidden < 1 || predictor.layers < 1 || predictor.embedding_dim < 1)
    throw ConfigError("predictor: hidden, layers and embedding_dim must be positive");
  if (predictor.architecture == predictor::Architecture::kTransformer &&
      (predictor.heads < 1 || predictor.hidden % predictor.heads != 0))
    throw ConfigError("predictor: hidden size must be divisible by the head count");
  if (estimator.hidden < 1 || estimator.layers < 1) throw ConfigError("estimator: hidden and layers must be positive");
  if (ensemble.folds < 2) throw ConfigError("ensemble: folds must be >= 2");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("preset");
  j.erase("threads");
  return checkpoint::hash_to_hex(fnv1a(j.dump()));
}

}  // namespace qeforge
