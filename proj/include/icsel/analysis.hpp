#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "icsel/backend.hpp"
#include "icsel/selection.hpp"

namespace icsel {

// Lexical diversity of a subset: type-token ratio of the concatenated inputs
// (distinct whitespace tokens over total tokens). Always in (0, 1].
inline double div_i(const std::vector<int>& example_ids, const Dataset& ds) {
  if (example_ids.empty()) throw Error("div_i: empty subset");
  std::set<std::string> types;
  long total = 0;
  for (int id : example_ids) {
    for (auto& tok : split_ws(input_text(ds.train_by_id(id)))) {
      types.insert(std::move(tok));
      ++total;
    }
  }
  if (total == 0) throw Error("div_i: subset has no tokens");
  return static_cast<double>(types.size()) / static_cast<double>(total);
}

// Feature diversity: mean pairwise Euclidean distance between the examples'
// embedding vectors. Subsets with fewer than two members have no pairs and
// score 0.
inline double div_f(const std::vector<int>& example_ids,
                    const std::vector<std::vector<double>>& embeddings) {
  size_t n = example_ids.size();
  if (n < 2) return 0.0;
  double sum = 0.0;
  long pairs = 0;
  for (size_t a = 0; a < n; ++a) {
    const auto& va = embeddings.at(static_cast<size_t>(example_ids[a]));
    for (size_t b = a + 1; b < n; ++b) {
      const auto& vb = embeddings.at(static_cast<size_t>(example_ids[b]));
      if (va.size() != vb.size()) throw Error("div_f: ragged embeddings");
      double d2 = 0.0;
      for (size_t q = 0; q < va.size(); ++q) {
        double d = va[q] - vb[q];
        d2 += d * d;
      }
      sum += std::sqrt(d2);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

struct Summary5 {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;

  static Summary5 of(std::vector<double> v) {
    if (v.empty()) throw Error("summary of empty vector");
    std::sort(v.begin(), v.end());
    return {quantile_sorted(v, 0.0), quantile_sorted(v, 0.25),
            quantile_sorted(v, 0.5), quantile_sorted(v, 0.75),
            quantile_sorted(v, 1.0)};
  }
  json to_json() const {
    return json{{"min", min}, {"q1", q1}, {"median", median}, {"q3", q3}, {"max", max}};
  }
};

// Reference distribution: diversity of many random class-balanced subsets of
// the same size, so a selected subset's diversity can be placed against
// chance.
struct DiversityBaseline {
  long n_random = 0;
  Summary5 div_i;
  std::optional<Summary5> div_f;

  json to_json() const {
    json j{{"n_random", n_random}, {"div_i", div_i.to_json()}};
    if (div_f.has_value()) j["div_f"] = div_f->to_json();
    return j;
  }
};

inline DiversityBaseline diversity_baseline(
    const Dataset& ds, int e, long n_random, uint64_t seed,
    const std::vector<std::vector<double>>* embeddings = nullptr) {
  if (n_random < 1) throw ConfigError("diversity_baseline: n_random must be >= 1");
  std::vector<double> dis, dfs;
  dis.reserve(static_cast<size_t>(n_random));
  for (long t = 0; t < n_random; ++t) {
    SubsetSpec s = select_random(ds, e, mix_seed(seed, static_cast<uint64_t>(t)));
    dis.push_back(div_i(s.example_ids, ds));
    if (embeddings != nullptr) dfs.push_back(div_f(s.example_ids, *embeddings));
  }
  DiversityBaseline base;
  base.n_random = n_random;
  base.div_i = Summary5::of(std::move(dis));
  if (embeddings != nullptr) base.div_f = Summary5::of(std::move(dfs));
  return base;
}

struct DiversityReport {
  std::string method;
  double div_i = 0.0;
  std::optional<double> div_f;
  int baseline_e = 0;  // baseline draws are class-balanced, so their size is
                       // the subset size rounded down to a multiple of C
  DiversityBaseline baseline;

  json to_json() const {
    json j{{"method", method},
           {"div_i", div_i},
           {"baseline_e", baseline_e},
           {"baseline", baseline.to_json()}};
    if (div_f.has_value()) j["div_f"] = *div_f;
    return j;
  }
};

inline DiversityReport diversity_report(
    const SubsetSpec& subset, const Dataset& ds, long n_random, uint64_t seed,
    const std::vector<std::vector<double>>* embeddings = nullptr) {
  DiversityReport rep;
  rep.method = subset.method;
  rep.div_i = div_i(subset.example_ids, ds);
  if (embeddings != nullptr) rep.div_f = div_f(subset.example_ids, *embeddings);
  int c = ds.num_classes();
  rep.baseline_e = std::max(c, subset.e / c * c);
  rep.baseline = diversity_baseline(ds, rep.baseline_e, n_random, seed, embeddings);
  return rep;
}

// Surface statistics per train example, next to its valuation score: token
// length of the rendered demonstration and perplexity of the raw input.
// Correlations say whether a valuation just rediscovers length or fluency.
struct ExampleProfile {
  int id = 0;
  int token_length = 0;
  std::optional<double> perplexity;
  double score = 0.0;
};

struct ProfileResult {
  std::vector<ExampleProfile> profiles;
  std::optional<double> r_length;      // Pearson, absent if degenerate
  std::optional<double> r_perplexity;  // absent without perplexity support
};

inline ProfileResult profile_examples(const Dataset& ds, Backend& backend,
                                      const ScoreVector& scores) {
  if (scores.size() != ds.n_train())
    throw Error("profile: score vector does not match the train split");
  ProfileResult out;
  bool have_ppl = true;
  std::vector<double> lengths, ppls;
  for (const auto& ex : ds.train) {
    ExampleProfile p;
    p.id = ex.id;
    p.token_length = backend.count_tokens(render_example(ex, ds));
    p.score = scores.scores[static_cast<size_t>(ex.id)];
    if (have_ppl) {
      try {
        p.perplexity = backend.perplexity(input_text(ex));
      } catch (const UnsupportedError&) {
        have_ppl = false;
        for (auto& prev : out.profiles) prev.perplexity.reset();
        ppls.clear();
      }
    }
    lengths.push_back(static_cast<double>(p.token_length));
    if (p.perplexity.has_value()) ppls.push_back(*p.perplexity);
    out.profiles.push_back(std::move(p));
  }
  out.r_length = pearson(lengths, scores.scores);
  if (have_ppl && ppls.size() == out.profiles.size())
    out.r_perplexity = pearson(ppls, scores.scores);
  return out;
}

// --- serialization -----------------------------------------------------------

namespace detail {

inline std::string num_str(double v) { return json(v).dump(); }

}  // namespace detail

inline void save_profile_csv(const ProfileResult& res, const std::string& path) {
  std::string out = "id,token_length,perplexity,score\n";
  for (const auto& p : res.profiles) {
    out += std::to_string(p.id) + "," + std::to_string(p.token_length) + ",";
    if (p.perplexity.has_value()) out += detail::num_str(*p.perplexity);
    out += "," + detail::num_str(p.score) + "\n";
  }
  write_text_file(path, out);
}

inline void save_embeddings(const std::vector<std::vector<double>>& emb,
                            const std::string& path) {
  std::string lines;
  for (size_t i = 0; i < emb.size(); ++i)
    lines += json{{"id", i}, {"vector", emb[i]}}.dump() + "\n";
  write_text_file(path, lines);
}

inline std::vector<std::vector<double>> load_embeddings(const std::string& path) {
  std::vector<std::vector<double>> emb;
  for_each_jsonl(path, [&](const json& j, size_t lineno) {
    size_t id = j.at("id").get<size_t>();
    if (id != emb.size())
      throw LoadError(path + ":" + std::to_string(lineno) +
                      ": embedding ids must be dense and ordered");
    emb.push_back(j.at("vector").get<std::vector<double>>());
  });
  if (emb.empty()) throw LoadError("empty embedding file: " + path);
  return emb;
}

}  // namespace icsel
