#include "qeforge/stacking.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "qeforge/error.hpp"
#include "qeforge/eval.hpp"

namespace qeforge::ensemble {

Tensor2 FeatureSet::matrix() const {
  const auto cols = static_cast<Eigen::Index>(names.size());
  Tensor2 m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].features.size()) != cols)
      throw ShapeError(fmt::format("feature row {} has {} values, expected {}", i,
                                   rows[i].features.size(), cols));
    for (Eigen::Index c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(i), c) = rows[i].features[static_cast<std::size_t>(c)];
  }
  return m;
}

Vector FeatureSet::targets() const {
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].target) throw ConfigError(fmt::format("feature row {} has no target", i));
    y(static_cast<Eigen::Index>(i)) = *rows[i].target;
  }
  return y;
}

FeatureSet assemble_features(std::span<const std::vector<estimator::ScoredPrediction>> predictions,
                             std::span<const corpus::QESample> samples, bool with_target) {
  if (predictions.empty()) throw ConfigError("assemble_features: no sub-model predictions to stack");
  for (std::size_t m = 0; m < predictions.size(); ++m) {
    if (predictions[m].size() != samples.size())
      throw ShapeError(fmt::format("assemble_features: model {} has {} predictions for {} samples",
                                   m + 1, predictions[m].size(), samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& p = predictions[m][i];
      if (p.index != i || p.language_pair != samples[i].language_pair)
        throw ShapeError(fmt::format(
            "assemble_features: model {} prediction {} is not aligned with the samples", m + 1, i));
    }
  }
  FeatureSet set;
  for (std::size_t m = 0; m < predictions.size(); ++m) set.names.push_back(fmt::format("m{}", m + 1));
  set.names.insert(set.names.end(), {"src_len", "tgt_len", "len_ratio"});
  set.rows.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    FeatureRow row;
    for (const auto& model : predictions) row.features.push_back(model[i].score);
    const auto src = static_cast<double>(samples[i].source_tokens.size());
    const auto tgt = static_cast<double>(samples[i].target_tokens.size());
    if (src == 0.0) throw ShapeError(fmt::format("assemble_features: sample {} has an empty source", i));
    row.features.insert(row.features.end(), {src, tgt, tgt / src});
    for (double v : row.features)
      if (!std::isfinite(v)) throw NumericError(fmt::format("assemble_features: row {} is not finite", i));
    if (with_target) row.target = samples[i].score;
    set.rows.push_back(std::move(row));
  }
  return set;
}

void write_features_csv(const std::filesystem::path& path, const FeatureSet& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& n : set.names) out << n << ',';
  out << "target\n";
  for (const auto& row : set.rows) {
    for (double v : row.features) out << fmt::format("{:.17g},", v);
    if (row.target) out << fmt::format("{:.17g}", *row.target);
    out << '\n';
  }
}

FeatureSet read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string(), 0, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  FeatureSet set;
  set.names = split(line);
  if (set.names.size() < 5 || set.names.back() != "target")
    throw ParseError(path.string(), 1, "expected header m1..mM,src_len,tgt_len,len_ratio,target");
  set.names.pop_back();
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != set.names.size() + 1)
      throw ParseError(path.string(), n, fmt::format("expected {} cells", set.names.size() + 1));
    FeatureRow row;
    auto number = [&](const std::string& c) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc{} || ptr != c.data() + c.size() || !std::isfinite(v))
        throw ParseError(path.string(), n, "bad number '" + c + "'");
      return v;
    };
    for (std::size_t c = 0; c < set.names.size(); ++c) row.features.push_back(number(cells[c]));
    if (!cells.back().empty()) row.target = number(cells.back());
    set.rows.push_back(std::move(row));
  }
  return set;
}

std::string to_string(RegressorKind k) { return k == RegressorKind::kRidge ? "ridge" : "gbt"; }

RegressorKind parse_regressor_kind(const std::string& s) {
  if (s == "ridge") return RegressorKind::kRidge;
  if (s == "gbt") return RegressorKind::kGbt;
  throw ConfigError("unknown regressor '" + s + "' (expected ridge or gbt)");
}

StackGrid StackGrid::defaults() {
  StackGrid g;
  g.alphas = {0.01, 0.1, 0.5, 1.0, 5.0, 10.0};
  for (int depth : {1, 2, 3})
    for (double eta : {0.05, 0.1}) {
      GbtConfig c;
      c.max_depth = depth;
      c.eta = eta;
      g.gbt.push_back(c);
    }
  return g;
}

nlohmann::json StackGrid::to_json() const {
  nlohmann::json gb = nlohmann::json::array();
  for (const auto& c : gbt) gb.push_back(c.to_json());
  return {{"alphas", alphas}, {"gbt", gb}};
}

StackGrid StackGrid::from_json(const nlohmann::json& j) {
  StackGrid g = defaults();
  if (j.contains("alphas")) g.alphas = j.at("alphas").get<std::vector<double>>();
  if (j.contains("gbt")) {
    g.gbt.clear();
    for (const auto& c : j.at("gbt")) g.gbt.push_back(GbtConfig::from_json(c));
  }
  return g;
}

Vector MetaModel::predict(const Tensor2& x) const {
  return kind == RegressorKind::kRidge ? ridge_predict(ridge, x) : gbt_predict(gbt, x);
}

nlohmann::json MetaModel::to_json() const {
  return {{"regressor", to_string(kind)},
          {"features", feature_names},
          {"model", kind == RegressorKind::kRidge ? ridge.to_json() : gbt.to_json()}};
}

MetaModel MetaModel::from_json(const nlohmann::json& j) {
  MetaModel m;
  m.kind = parse_regressor_kind(j.at("regressor").get<std::string>());
  m.feature_names = j.at("features").get<std::vector<std::string>>();
  if (m.kind == RegressorKind::kRidge)
    m.ridge = RidgeModel::from_json(j.at("model"));
  else
    m.gbt = BoostedModel::from_json(j.at("model"));
  const auto width = m.kind == RegressorKind::kRidge ? m.ridge.feature_count() : m.gbt.feature_count;
  if (width != static_cast<int>(m.feature_names.size()))
    throw ConfigError("meta-model: feature names do not match the model width");
  return m;
}

void MetaModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

MetaModel MetaModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

nlohmann::json CvReport::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& c : settings) {
    nlohmann::json folds = nlohmann::json::array();
    for (double r : c.fold_pearson) folds.push_back(std::isfinite(r) ? nlohmann::json(r) : nlohmann::json());
    nlohmann::json e = {{"params", c.params}, {"fold_pearson", folds}, {"mean_pearson", c.mean_pearson},
                        {"oof_pearson", c.oof_pearson}};
    if (!c.error.empty()) e["error"] = c.error;
    s.push_back(e);
  }
  return {{"folds", folds}, {"best", best}, {"settings", s}};
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int k, Rng& rng) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  if (n < static_cast<std::size_t>(k))
    throw ConfigError(fmt::format("cannot split {} rows into {} folds", n, k));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  qeforge::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return folds;
}

namespace {

Tensor2 take_rows(const Tensor2& x, const std::vector<std::size_t>& idx) {
  Tensor2 out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

Vector take(const Vector& y, const std::vector<std::size_t>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(idx[i]));
  return out;
}

double pearson_or_nan(const Vector& a, const Vector& b) {
  try {
    return eval::pearson({a.data(), static_cast<std::size_t>(a.size())},
                         {b.data(), static_cast<std::size_t>(b.size())});
  } catch (const Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

MetaModel fit_one(RegressorKind kind, const nlohmann::json& params, const Tensor2& x, const Vector& y) {
  MetaModel m;
  m.kind = kind;
  if (kind == RegressorKind::kRidge)
    m.ridge = ridge_fit(x, y, params.at("alpha").get<double>());
  else
    m.gbt = gbt_fit(x, y, GbtConfig::from_json(params));
  return m;
}

}  // namespace

StackResult stack_fit(const FeatureSet& dev, RegressorKind kind, int k, const StackGrid& grid, Rng& rng) {
  const Tensor2 x = dev.matrix();
  const Vector y = dev.targets();
  auto folds = make_folds(static_cast<std::size_t>(x.rows()), k, rng);

  std::vector<nlohmann::json> settings;
  if (kind == RegressorKind::kRidge)
    for (double a : grid.alphas) settings.push_back({{"alpha", a}});
  else
    for (const auto& c : grid.gbt) settings.push_back(c.to_json());
  if (settings.empty()) throw ConfigError("stack_fit: empty hyperparameter grid");

  StackResult result;
  result.report.folds = k;
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& params : settings) {
    CvSetting s;
    s.params = params;
    Vector oof = Vector::Zero(x.rows());
    try {
      for (const auto& held : folds) {
        std::vector<std::size_t> train;
        for (const auto& other : folds)
          if (&other != &held) train.insert(train.end(), other.begin(), other.end());
        const auto model = fit_one(kind, params, take_rows(x, train), take(y, train));
        const Vector p = model.predict(take_rows(x, held));
        for (std::size_t i = 0; i < held.size(); ++i) oof(static_cast<Eigen::Index>(held[i])) = p(static_cast<Eigen::Index>(i));
        s.fold_pearson.push_back(pearson_or_nan(p, take(y, held)));
      }
    } catch (const Error& e) {
      s.error = e.what();
    }
    if (s.error.empty()) {
      double sum = 0.0;
      for (double r : s.fold_pearson) sum += std::isfinite(r) ? r : 0.0;
      s.mean_pearson = sum / static_cast<double>(s.fold_pearson.size());
      s.oof_pearson = pearson_or_nan(oof, y);
      if (s.mean_pearson > best) {
        best = s.mean_pearson;
        result.report.best = result.report.settings.size();
        result.report.best_oof_predictions = oof;
        any = true;
      }
    }
    result.report.settings.push_back(std::move(s));
  }
  if (!any)
    throw NumericError("stack_fit: no hyperparameter setting could be fitted: " +
                       result.report.settings.front().error);

  result.model = fit_one(kind, result.report.settings[result.report.best].params, x, y);
  result.model.feature_names = dev.names;
  return result;
}

}  // namespace qeforge::ensemble
