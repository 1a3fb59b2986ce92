#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace qeforge::eval {

/// Pearson's r. Throws on unequal lengths, fewer than two points, or a
/// constant sequence (correlation undefined).
double pearson(std::span<const double> pred, std::span<const double> gold);

struct ScoredPair {
  double predicted = 0.0;
  double gold = 0.0;
  std::string language;
};

struct GroupResult {
  std::string name;
  double r = 0.0;
  std::size_t count = 0;
};

/// Per-language and pooled correlations. Pooled groups correlate the
/// concatenation of their members' (pred, gold) pairs.
struct EvalReport {
  std::vector<GroupResult> languages;
  std::vector<GroupResult> groups;
  std::vector<std::string> warnings;

  const GroupResult* find(const std::string& name) const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Grouping: group name -> member languages.
using Grouping = std::vector<std::pair<std::string, std::vector<std::string>>>;

/// Groups with fewer than two samples, or with an undefined correlation, are
/// omitted and noted in `warnings`.
EvalReport report(std::span<const ScoredPair> pairs, const Grouping& grouping);

/// Language key of a pair such as "en-de" or "ro-en": the side that is not
/// English, or the whole identifier when neither side is.
std::string language_of(const std::string& pair);

/// Parses "et+ne+ro,zh+de" style group lists.
Grouping parse_grouping(const std::string& spec);

}  // namespace qeforge::eval
