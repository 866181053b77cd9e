#pragma once

#include <string>
#include <vector>

#include "icsel/pool.hpp"

namespace icsel {

// A per-train-example valuation. scores[i] belongs to train id i; support[i]
// counts the observations behind it (pool records containing i, or fitted
// weights inspected, depending on the method).
struct ScoreVector {
  std::string method;
  std::vector<double> scores;
  std::vector<long> support;

  int size() const { return static_cast<int>(scores.size()); }
};

// Mean dev accuracy over the pool records whose prompt contains the example.
inline ScoreVector condacc_scores(const PromptPool& pool) {
  int n = pool.n_tr();
  ScoreVector sv;
  sv.method = "condacc";
  sv.scores.assign(static_cast<size_t>(n), 0.0);
  sv.support.assign(static_cast<size_t>(n), 0);
  for (const auto& rec : pool.records) {
    for (int id : rec.prompt.example_ids) {
      sv.scores[static_cast<size_t>(id)] += rec.dev_accuracy;
      sv.support[static_cast<size_t>(id)]++;
    }
  }
  for (int i = 0; i < n; ++i) {
    if (sv.support[static_cast<size_t>(i)] == 0)
      throw Error("condacc: example " + std::to_string(i) +
                  " never occurs in the pool");
    sv.scores[static_cast<size_t>(i)] /=
        static_cast<double>(sv.support[static_cast<size_t>(i)]);
  }
  return sv;
}

// Sampling-based Shapley value over prompt membership. With prompts drawn
// uniformly, the value reduces to an affine rescaling of the conditional
// accuracy around the pool's overall mean accuracy A:
//
//   shapley(i) = (N / (N - K)) * (condacc(i) - A)
//
// so it preserves the condacc ranking exactly; it recenters scores such that
// an average example gets 0.
inline ScoreVector shapley_scores(const ScoreVector& condacc,
                                  const PromptPool& pool) {
  int n = pool.n_tr();
  int k = pool.k();
  if (condacc.size() != n) throw Error("shapley: score/pool size mismatch");
  if (n <= k)
    throw Error("shapley: needs more train examples than prompt slots (n=" +
                std::to_string(n) + ", k=" + std::to_string(k) + ")");
  if (pool.records.empty()) throw Error("shapley: empty pool");
  double a = 0.0;
  for (const auto& rec : pool.records) a += rec.dev_accuracy;
  a /= static_cast<double>(pool.records.size());
  double scale = static_cast<double>(n) / static_cast<double>(n - k);

  ScoreVector sv;
  sv.method = "shapley";
  sv.support = condacc.support;
  sv.scores.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    sv.scores[static_cast<size_t>(i)] =
        scale * (condacc.scores[static_cast<size_t>(i)] - a);
  return sv;
}

// Dev accuracy of the one-shot prompt built from each train example alone.
inline ScoreVector oneshot_scores(const Dataset& ds, Backend& backend,
                                  int workers = 1) {
  if (ds.dev.empty()) throw Error("oneshot: empty dev split");
  int n = ds.n_train();
  ScoreVector sv;
  sv.method = "oneshot";
  sv.scores.assign(static_cast<size_t>(n), 0.0);
  sv.support.assign(static_cast<size_t>(n), static_cast<long>(ds.dev.size()));

  auto score_one = [&](int i) {
    std::vector<int> ids{i};
    long correct = 0;
    for (const auto& dev_ex : ds.dev) {
      RenderedPrompt rp = render(ids, dev_ex, ds);
      if (is_correct(backend.score_labels(rp), dev_ex.label)) ++correct;
    }
    sv.scores[static_cast<size_t>(i)] =
        static_cast<double>(correct) / static_cast<double>(ds.dev.size());
  };

  if (workers <= 1) {
    for (int i = 0; i < n; ++i) score_one(i);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      while (true) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        score_one(i);
      }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  return sv;
}

// Rank agreement between two models' valuations: Pearson correlation of the
// score vectors plus the overlap between their top-e selections.
struct Agreement {
  std::optional<double> correlation;
  int top_overlap = 0;
};

inline Agreement cross_model_agreement(const ScoreVector& a,
                                       const ScoreVector& b,
                                       const std::vector<int>& top_a,
                                       const std::vector<int>& top_b) {
  if (a.size() != b.size()) throw Error("agreement: score size mismatch");
  Agreement out;
  out.correlation = pearson(a.scores, b.scores);
  std::set<int> sa(top_a.begin(), top_a.end());
  for (int id : top_b)
    if (sa.count(id)) out.top_overlap++;
  return out;
}

inline void save_scores(const ScoreVector& sv, const std::string& path) {
  std::string lines;
  for (int i = 0; i < sv.size(); ++i)
    lines += json{{"id", i},
                  {"method", sv.method},
                  {"score", sv.scores[static_cast<size_t>(i)]},
                  {"support", sv.support[static_cast<size_t>(i)]}}
                 .dump() +
             "\n";
  write_text_file(path, lines);
}

inline ScoreVector load_scores(const std::string& path) {
  ScoreVector sv;
  for_each_jsonl(path, [&](const json& j, size_t lineno) {
    int id = j.at("id").get<int>();
    if (id != sv.size())
      throw LoadError(path + ":" + std::to_string(lineno) +
                      ": score ids must be dense and ordered");
    sv.method = j.at("method").get<std::string>();
    sv.scores.push_back(j.at("score").get<double>());
    sv.support.push_back(j.at("support").get<long>());
  });
  if (sv.scores.empty()) throw LoadError("empty score file: " + path);
  return sv;
}

}  // namespace icsel
