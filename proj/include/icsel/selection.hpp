#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "icsel/condacc.hpp"

namespace icsel {

// A chosen train subset plus how it was produced. example_ids are sorted
// ascending; ordering within prompts is decided at evaluation time.
struct SubsetSpec {
  std::string method;
  int e = 0;
  std::vector<int> example_ids;
  std::map<int, long> per_class_counts;
  std::string source;  // score file, pool dir, or seed the subset came from

  json to_json() const {
    json pcc = json::object();
    for (const auto& [y, c] : per_class_counts) pcc[std::to_string(y)] = c;
    return json{{"method", method},
                {"e", e},
                {"example_ids", example_ids},
                {"per_class_counts", pcc},
                {"source", source}};
  }
  static SubsetSpec from_json(const json& j) {
    SubsetSpec s;
    s.method = j.at("method").get<std::string>();
    s.e = j.at("e").get<int>();
    s.example_ids = j.at("example_ids").get<std::vector<int>>();
    for (const auto& [y, c] : j.at("per_class_counts").items())
      s.per_class_counts[std::stoi(y)] = c.get<long>();
    s.source = j.value("source", "");
    return s;
  }
};

namespace detail {

inline void finalize_subset(SubsetSpec& s, const Dataset& ds) {
  std::sort(s.example_ids.begin(), s.example_ids.end());
  for (int id : s.example_ids) s.per_class_counts[ds.train_by_id(id).label]++;
}

// Train ids of one class ranked by score: descending when top is true,
// ascending otherwise; ties always resolve to the lower id.
inline std::vector<int> ranked_class_ids(const ScoreVector& scores,
                                         const Dataset& ds, int label,
                                         bool top) {
  std::vector<int> ids = ds.train_ids_of_class(label);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    double sa = scores.scores[static_cast<size_t>(a)];
    double sb = scores.scores[static_cast<size_t>(b)];
    if (sa != sb) return top ? sa > sb : sa < sb;
    return a < b;
  });
  return ids;
}

inline SubsetSpec select_by_rank(const ScoreVector& scores, const Dataset& ds,
                                 int e, bool top) {
  if (scores.size() != ds.n_train())
    throw Error("select: score vector does not match the train split");
  int c = ds.num_classes();
  if (e < c || e % c != 0)
    throw ConfigError("select: subset size " + std::to_string(e) +
                      " must be a positive multiple of the " +
                      std::to_string(c) + " classes");
  int per_class = e / c;
  SubsetSpec s;
  s.method = (top ? "top-" : "bottom-") + scores.method;
  s.e = e;
  for (int y = 0; y < c; ++y) {
    std::vector<int> ranked = ranked_class_ids(scores, ds, y, top);
    if (static_cast<int>(ranked.size()) < per_class)
      throw ConfigError("select: class " + std::to_string(y) + " has only " +
                        std::to_string(ranked.size()) + " examples, need " +
                        std::to_string(per_class));
    s.example_ids.insert(s.example_ids.end(), ranked.begin(),
                         ranked.begin() + per_class);
  }
  finalize_subset(s, ds);
  return s;
}

}  // namespace detail

// Class-balanced head of the ranking: the e/C highest-scoring examples of
// each class.
inline SubsetSpec select_top(const ScoreVector& scores, const Dataset& ds,
                             int e) {
  return detail::select_by_rank(scores, ds, e, true);
}

// Mirror image of select_top, used as the negative control.
inline SubsetSpec select_bottom(const ScoreVector& scores, const Dataset& ds,
                                int e) {
  return detail::select_by_rank(scores, ds, e, false);
}

// Union of the examples appearing in the n most accurate pool prompts whole;
// ties on accuracy keep the earlier record. No class balancing, size at most
// n * k.
inline SubsetSpec select_topprompts(const PromptPool& pool, const Dataset& ds,
                                    int n) {
  if (n < 1) throw ConfigError("select_topprompts: n must be >= 1");
  if (static_cast<long>(pool.records.size()) < n)
    throw ConfigError("select_topprompts: pool has only " +
                      std::to_string(pool.records.size()) + " records");
  std::vector<long> order(pool.records.size());
  std::iota(order.begin(), order.end(), 0l);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    double da = pool.records[static_cast<size_t>(a)].dev_accuracy;
    double db = pool.records[static_cast<size_t>(b)].dev_accuracy;
    if (da != db) return da > db;
    return a < b;
  });
  std::set<int> ids;
  for (long r = 0; r < n; ++r)
    for (int id : pool.records[static_cast<size_t>(order[static_cast<size_t>(r)])]
                      .prompt.example_ids)
      ids.insert(id);
  SubsetSpec s;
  s.method = "topprompts";
  s.e = static_cast<int>(ids.size());
  s.example_ids.assign(ids.begin(), ids.end());
  detail::finalize_subset(s, ds);
  return s;
}

// Seeded class-balanced uniform draw; the baseline everything is judged
// against.
inline SubsetSpec select_random(const Dataset& ds, int e, uint64_t seed) {
  int c = ds.num_classes();
  if (e < c || e % c != 0)
    throw ConfigError("select_random: subset size " + std::to_string(e) +
                      " must be a positive multiple of the " +
                      std::to_string(c) + " classes");
  int per_class = e / c;
  Rng rng(mix_seed(seed, fnv1a("select-random")));
  SubsetSpec s;
  s.method = "random";
  s.e = e;
  s.source = "seed:" + std::to_string(seed);
  for (int y = 0; y < c; ++y) {
    std::vector<int> ids = ds.train_ids_of_class(y);
    if (static_cast<int>(ids.size()) < per_class)
      throw ConfigError("select_random: class " + std::to_string(y) +
                        " has only " + std::to_string(ids.size()) +
                        " examples, need " + std::to_string(per_class));
    std::shuffle(ids.begin(), ids.end(), rng);
    s.example_ids.insert(s.example_ids.end(), ids.begin(), ids.begin() + per_class);
  }
  detail::finalize_subset(s, ds);
  return s;
}

// How many selected examples carry their gold label; only meaningful in the
// unlabeled setup where relabeled copies compete.
inline long count_gold(const SubsetSpec& subset, const Dataset& ds) {
  long gold = 0;
  for (int id : subset.example_ids) {
    const auto& ex = ds.train_by_id(id);
    if (ex.gold.has_value() && *ex.gold) ++gold;
  }
  return gold;
}

// Replaces every non-gold selection by its gold-labeled sibling (the copy of
// the same underlying input whose label is correct). Answers how much of a
// subset's value survives fixing its labels.
inline SubsetSpec correct_labels(const SubsetSpec& subset, const Dataset& ds) {
  if (!ds.unlabeled)
    throw Error("correct_labels: dataset has no relabeled siblings");
  std::map<int, int> gold_by_origin;
  for (const auto& ex : ds.train)
    if (ex.gold.has_value() && *ex.gold) gold_by_origin[ex.origin] = ex.id;
  SubsetSpec out;
  out.method = subset.method + "+gold";
  out.source = subset.source;
  std::set<int> ids;
  for (int id : subset.example_ids) {
    const auto& ex = ds.train_by_id(id);
    auto it = gold_by_origin.find(ex.origin);
    if (it == gold_by_origin.end())
      throw Error("correct_labels: input " + std::to_string(ex.origin) +
                  " has no gold-labeled copy");
    ids.insert(it->second);
  }
  out.example_ids.assign(ids.begin(), ids.end());
  out.e = static_cast<int>(out.example_ids.size());
  detail::finalize_subset(out, ds);
  return out;
}

inline void save_subset(const SubsetSpec& s, const std::string& path) {
  write_json_file(path, s.to_json());
}

inline SubsetSpec load_subset(const std::string& path) {
  return SubsetSpec::from_json(read_json_file(path));
}

}  // namespace icsel
