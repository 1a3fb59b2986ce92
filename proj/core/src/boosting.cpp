#include "qeforge/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "qeforge/error.hpp"

namespace qeforge::ensemble {

int RegressionTree::route(const double* row) const {
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = row[n.feature] < n.threshold ? n.left : n.right;
  }
  return i;
}

double RegressionTree::predict(const double* row) const {
  return nodes[static_cast<std::size_t>(route(row))].weight;
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.is_leaf()) continue;
    d[static_cast<std::size_t>(n.left)] = d[i] + 1;
    d[static_cast<std::size_t>(n.right)] = d[i] + 1;
    deepest = std::max(deepest, d[i] + 1);
  }
  return deepest;
}

namespace {

nlohmann::json node_json(const RegressionTree& t, int i) {
  const auto& n = t.nodes[static_cast<std::size_t>(i)];
  if (n.is_leaf()) return {{"leaf", n.weight}};
  return {{"feature", n.feature},
          {"threshold", n.threshold},
          {"left", node_json(t, n.left)},
          {"right", node_json(t, n.right)}};
}

int parse_node(const nlohmann::json& j, RegressionTree& t) {
  const int index = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  if (j.contains("leaf")) {
    t.nodes.back().weight = j.at("leaf").get<double>();
    if (!std::isfinite(t.nodes.back().weight)) throw ConfigError("tree leaf weight is not finite");
    return index;
  }
  TreeNode n;
  n.feature = j.at("feature").get<int>();
  if (n.feature < 0) throw ConfigError("tree split feature must be >= 0");
  n.threshold = j.at("threshold").get<double>();
  n.left = parse_node(j.at("left"), t);
  n.right = parse_node(j.at("right"), t);
  t.nodes[static_cast<std::size_t>(index)] = n;
  return index;
}

}  // namespace

nlohmann::json RegressionTree::to_json() const { return node_json(*this, 0); }

RegressionTree RegressionTree::from_json(const nlohmann::json& j, int max_depth) {
  RegressionTree t;
  t.max_depth = max_depth;
  parse_node(j, t);
  return t;
}

nlohmann::json GbtConfig::to_json() const {
  nlohmann::json j = {{"rounds", rounds}, {"eta", eta},           {"lambda", lambda},
                      {"gamma", gamma},   {"max_depth", max_depth}};
  if (base_score) j["base_score"] = *base_score;
  return j;
}

GbtConfig GbtConfig::from_json(const nlohmann::json& j) {
  GbtConfig c;
  c.rounds = j.value("rounds", c.rounds);
  c.eta = j.value("eta", c.eta);
  c.lambda = j.value("lambda", c.lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.max_depth = j.value("max_depth", c.max_depth);
  if (j.contains("base_score")) c.base_score = j.at("base_score").get<double>();
  return c;
}

void GbtConfig::validate() const {
  if (rounds < 0) throw ConfigError("gbt: rounds must be >= 0");
  if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("gbt: eta must be in (0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("gbt: lambda must be >= 0");
  if (!(gamma >= 0.0)) throw ConfigError("gbt: gamma must be >= 0");
  if (max_depth < 0) throw ConfigError("gbt: max_depth must be >= 0");
}

nlohmann::json BoostedModel::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& tree : trees) t.push_back(tree.to_json());
  return {{"kind", "gbt"},   {"base", base},   {"eta", eta},     {"lambda", lambda},
          {"gamma", gamma},  {"features", feature_count},       {"trees", t}};
}

BoostedModel BoostedModel::from_json(const nlohmann::json& j) {
  BoostedModel m;
  m.base = j.at("base").get<double>();
  m.eta = j.at("eta").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.gamma = j.at("gamma").get<double>();
  m.feature_count = j.at("features").get<int>();
  for (const auto& t : j.at("trees")) {
    m.trees.push_back(RegressionTree::from_json(t, 0));
    m.trees.back().max_depth = m.trees.back().depth();
    for (const auto& n : m.trees.back().nodes)
      if (!n.is_leaf() && n.feature >= m.feature_count)
        throw ConfigError("gbt model: split feature out of range");
  }
  return m;
}

namespace {

struct Grower {
  const Tensor2& x;
  const std::vector<double>& g;
  const GbtConfig& cfg;
  RegressionTree tree;

  double leaf_weight(double G, double H) const { return -G / (H + cfg.lambda); }
  double score(double G, double H) const { return G * G / (H + cfg.lambda); }

  int grow(std::vector<std::size_t>& rows, int depth) {
    double G = 0.0;
    for (auto r : rows) G += g[r];
    const auto H = static_cast<double>(rows.size());
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.back().weight = leaf_weight(G, H);
    if (depth >= cfg.max_depth || rows.size() < 2) return index;

    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order = rows;
    for (int f = 0; f < static_cast<int>(x.cols()); ++f) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
      double gl = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        gl += g[order[i]];
        const double v = x(order[i], f);
        const double next = x(order[i + 1], f);
        if (!(v < next)) continue;
        const auto hl = static_cast<double>(i + 1);
        const double gain =
            0.5 * (score(gl, hl) + score(G - gl, H - hl) - score(G, H)) - cfg.gamma;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = v + 0.5 * (next - v);
        }
      }
    }
    if (best_feature < 0) return index;

    std::vector<std::size_t> left, right;
    for (auto r : rows) (x(r, best_feature) < best_threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& n = tree.nodes[static_cast<std::size_t>(index)];
    n.feature = best_feature;
    n.threshold = best_threshold;
    n.left = l;
    n.right = r;
    return index;
  }
};

}  // namespace

BoostedModel gbt_fit(const Tensor2& x, const Vector& y, const GbtConfig& config,
                     std::vector<double>* train_mse) {
  config.validate();
  if (x.rows() < 2) throw ConfigError("gbt_fit: need at least two rows");
  if (x.rows() != y.size()) throw ShapeError("gbt_fit: feature and target row counts differ");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("gbt_fit: non-finite input");

  BoostedModel m;
  m.base = config.base_score.value_or(y.mean());
  m.eta = config.eta;
  m.lambda = config.lambda;
  m.gamma = config.gamma;
  m.feature_count = static_cast<int>(x.cols());

  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<double> pred(n, m.base), g(n);
  if (train_mse) train_mse->clear();
  for (int round = 0; round < config.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) g[i] = pred[i] - y(static_cast<Eigen::Index>(i));
    Grower grower{x, g, config, {}};
    grower.tree.max_depth = config.max_depth;
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    grower.grow(rows, 0);
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] += m.eta * grower.tree.predict(x.row(static_cast<Eigen::Index>(i)).data());
      const double e = pred[i] - y(static_cast<Eigen::Index>(i));
      sse += e * e;
    }
    if (train_mse) train_mse->push_back(sse / static_cast<double>(n));
    m.trees.push_back(std::move(grower.tree));
  }
  return m;
}

Vector gbt_predict(const BoostedModel& model, const Tensor2& x) {
  if (x.cols() != model.feature_count)
    throw ShapeError(fmt::format("gbt_predict: {} features but the model has {}", x.cols(),
                                 model.feature_count));
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (const auto& t : model.trees) s += t.predict(x.row(i).data());
    out(i) = model.base + model.eta * s;
  }
  return out;
}

}  // namespace qeforge::ensemble
