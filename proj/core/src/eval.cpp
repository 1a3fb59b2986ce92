#include "qeforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "qeforge/error.hpp"

namespace qeforge::eval {

double pearson(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) throw ShapeError("pearson: sequences differ in length");
  if (pred.size() < 2) throw NumericError("pearson: need at least two points");
  const auto n = static_cast<double>(pred.size());
  double mp = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mg += gold[i];
  }
  mp /= n;
  mg /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp;
    const double b = gold[i] - mg;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: constant sequence, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

const GroupResult* EvalReport::find(const std::string& name) const {
  for (const auto& g : languages)
    if (g.name == name) return &g;
  for (const auto& g : groups)
    if (g.name == name) return &g;
  return nullptr;
}

nlohmann::json EvalReport::to_json() const {
  auto encode = [](const std::vector<GroupResult>& v) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& g : v) out[g.name] = {{"pearson", g.r}, {"count", g.count}};
    return out;
  };
  return {{"languages", encode(languages)}, {"groups", encode(groups)}, {"warnings", warnings}};
}

std::string EvalReport::to_table() const {
  std::vector<const GroupResult*> cols;
  for (const auto& g : languages) cols.push_back(&g);
  for (const auto& g : groups) cols.push_back(&g);
  std::string header, values, counts;
  for (const auto* c : cols) {
    const std::size_t w = std::max<std::size_t>(c->name.size(), 8) + 2;
    header += fmt::format("{:>{}}", c->name, w);
    values += fmt::format("{:>{}.4f}", c->r, w);
    counts += fmt::format("{:>{}}", c->count, w);
  }
  std::string out = fmt::format("{:<8}{}\n{:<8}{}\n{:<8}{}\n", "", header, "pearson", values, "n", counts);
  for (const auto& w : warnings) out += "warning: " + w + "\n";
  return out;
}

EvalReport report(std::span<const ScoredPair> pairs, const Grouping& grouping) {
  EvalReport rep;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_lang;
  for (const auto& p : pairs) {
    auto& slot = by_lang[p.language];
    slot.first.push_back(p.predicted);
    slot.second.push_back(p.gold);
  }

  auto score = [&rep](const std::string& name, const std::vector<double>& pred,
                      const std::vector<double>& gold, std::vector<GroupResult>& out) {
    if (pred.size() < 2) {
      rep.warnings.push_back(fmt::format("{}: {} sample(s), correlation omitted", name, pred.size()));
      return;
    }
    try {
      out.push_back({name, pearson(pred, gold), pred.size()});
    } catch (const NumericError& e) {
      rep.warnings.push_back(name + ": " + e.what());
    }
  };

  for (const auto& [lang, pg] : by_lang) score(lang, pg.first, pg.second, rep.languages);

  for (const auto& [name, members] : grouping) {
    std::vector<double> pred, gold;
    for (const auto& m : members) {
      const auto it = by_lang.find(m);
      if (it == by_lang.end()) continue;
      pred.insert(pred.end(), it->second.first.begin(), it->second.first.end());
      gold.insert(gold.end(), it->second.second.begin(), it->second.second.end());
    }
    score(name, pred, gold, rep.groups);
  }
  return rep;
}

std::string language_of(const std::string& pair) {
  const auto dash = pair.find('-');
  if (dash == std::string::npos) return pair;
  const auto a = pair.substr(0, dash);
  const auto b = pair.substr(dash + 1);
  if (a == "en" && b != "en") return b;
  if (b == "en" && a != "en") return a;
  return pair;
}

Grouping parse_grouping(const std::string& spec) {
  Grouping g;
  std::stringstream ss(spec);
  std::string group;
  while (std::getline(ss, group, ',')) {
    if (group.empty()) continue;
    std::vector<std::string> members;
    std::stringstream gs(group);
    std::string m;
    while (std::getline(gs, m, '+')) {
      if (m.empty()) throw ConfigError("empty language in group '" + group + "'");
      members.push_back(m);
    }
    if (members.empty() || group.back() == '+') throw ConfigError("empty language in group '" + group + "'");
    g.emplace_back(group, std::move(members));
  }
  return g;
}

}  // namespace qeforge::eval
