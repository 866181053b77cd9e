#pragma once

#include <atomic>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "icsel/backend.hpp"
#include "icsel/selection.hpp"

namespace icsel {

inline std::vector<double> softmax(const std::vector<double>& scores) {
  if (scores.empty()) throw Error("softmax of empty vector");
  double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double z = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    z += out[i];
  }
  for (auto& p : out) p /= z;
  return out;
}

// Contextual calibration: estimate the prompt's label prior from content-free
// queries, then divide it out at prediction time.
struct Calibrator {
  std::vector<double> q;  // prior per class, positive, sums to 1
};

inline const std::vector<std::string>& calibration_probes() {
  static const std::vector<std::string> probes = {"N/A", "", "[MASK]"};
  return probes;
}

inline Calibrator fit_calibrator(const std::vector<int>& example_ids,
                                 const Dataset& ds, Backend& backend) {
  Calibrator cal;
  cal.q.assign(static_cast<size_t>(ds.num_classes()), 0.0);
  for (const auto& probe : calibration_probes()) {
    RenderedPrompt rp = render_probe(example_ids, probe, ds);
    std::vector<double> p = softmax(backend.score_labels(rp).scores);
    if (p.size() != cal.q.size())
      throw Error("fit_calibrator: backend returned wrong class count");
    for (size_t y = 0; y < p.size(); ++y) cal.q[y] += p[y];
  }
  for (auto& v : cal.q) v /= static_cast<double>(calibration_probes().size());
  return cal;
}

inline int calibrated_predict(const LabelScores& scores, const Calibrator& cal) {
  std::vector<double> p = softmax(scores.scores);
  if (p.size() != cal.q.size())
    throw Error("calibrated_predict: score/prior size mismatch");
  int best = 0;
  double best_v = p[0] / cal.q[0];
  for (size_t y = 1; y < p.size(); ++y) {
    double v = p[y] / cal.q[y];
    if (v > best_v) {  // ties keep the lowest class
      best_v = v;
      best = static_cast<int>(y);
    }
  }
  return best;
}

struct EvalMeta {
  std::string protocol;
  std::string dataset;
  std::string backend_id;
  std::string subset_method;
  uint64_t seed = 0;
  int k = 0;
  bool calibrated = false;
  std::string constraint;

  json to_json() const {
    return json{{"protocol", protocol},   {"dataset", dataset},
                {"backend_id", backend_id}, {"subset_method", subset_method},
                {"seed", seed},           {"k", k},
                {"calibrated", calibrated}, {"constraint", constraint}};
  }
  static EvalMeta from_json(const json& j) {
    EvalMeta m;
    m.protocol = j.value("protocol", "");
    m.dataset = j.value("dataset", "");
    m.backend_id = j.value("backend_id", "");
    m.subset_method = j.value("subset_method", "");
    m.seed = j.value("seed", 0ull);
    m.k = j.value("k", 0);
    m.calibrated = j.value("calibrated", false);
    m.constraint = j.value("constraint", "");
    return m;
  }
};

struct PromptOutcome {
  Prompt prompt;
  double accuracy = 0.0;
};

// Stability summary over the sampled prompts: a subset is only as good as its
// worst ordering, so min sits next to avg.
struct EvalReport {
  int n_prompts = 0;
  double avg = 0.0;
  double std_dev = 0.0;  // population standard deviation
  double min = 0.0;
  std::vector<PromptOutcome> per_prompt;
  EvalMeta meta;

  json to_json() const {
    json pp = json::array();
    for (const auto& o : per_prompt)
      pp.push_back(json{{"example_ids", o.prompt.example_ids},
                        {"label_pattern", o.prompt.label_pattern},
                        {"accuracy", o.accuracy}});
    return json{{"n_prompts", n_prompts}, {"avg", avg},
                {"std_dev", std_dev},     {"min", min},
                {"meta", meta.to_json()}, {"per_prompt", pp}};
  }
  static EvalReport from_json(const json& j) {
    EvalReport r;
    r.n_prompts = j.at("n_prompts").get<int>();
    r.avg = j.at("avg").get<double>();
    r.std_dev = j.at("std_dev").get<double>();
    r.min = j.at("min").get<double>();
    r.meta = EvalMeta::from_json(j.at("meta"));
    for (const auto& o : j.at("per_prompt")) {
      PromptOutcome po;
      po.prompt.example_ids = o.at("example_ids").get<std::vector<int>>();
      po.prompt.label_pattern = o.at("label_pattern").get<std::vector<int>>();
      po.accuracy = o.at("accuracy").get<double>();
      r.per_prompt.push_back(std::move(po));
    }
    return r;
  }
};

struct EvalOptions {
  int k = 4;
  int n_prompts = 50;
  uint64_t seed = 0;
  bool min_one_per_class = true;
  bool calibrate = false;
  int rejection_cap = 10000;  // draws per prompt for the class constraint
  int workers = 1;
};

namespace detail {

// K distinct subset members (distinct underlying inputs) in uniform random
// order.
inline std::vector<int> draw_eval_prompt(const std::vector<int>& candidates,
                                         const Dataset& ds, int k, Rng& rng) {
  std::vector<int> ids;
  std::set<int> used_origins;
  long attempts = 0;
  while (static_cast<int>(ids.size()) < k) {
    int id = candidates[std::uniform_int_distribution<size_t>(
        0, candidates.size() - 1)(rng)];
    int origin = ds.train_by_id(id).origin;
    if (!used_origins.count(origin)) {
      ids.push_back(id);
      used_origins.insert(origin);
    } else if (++attempts > 10000l * k) {
      throw Error("evaluate: cannot fill a prompt with distinct inputs");
    }
  }
  return ids;
}

inline bool covers_all_classes(const std::vector<int>& ids, const Dataset& ds) {
  std::set<int> seen;
  for (int id : ids) seen.insert(ds.train_by_id(id).label);
  return static_cast<int>(seen.size()) == ds.num_classes();
}

inline void check_subset_feasible(const std::vector<int>& candidates,
                                  const Dataset& ds, const EvalOptions& opts,
                                  bool constrain_classes) {
  if (static_cast<int>(candidates.size()) < opts.k)
    throw ConfigError("evaluate: subset of size " +
                      std::to_string(candidates.size()) +
                      " cannot fill k=" + std::to_string(opts.k) + " slots");
  std::set<int> origins;
  std::set<int> classes;
  for (int id : candidates) {
    origins.insert(ds.train_by_id(id).origin);
    classes.insert(ds.train_by_id(id).label);
  }
  if (static_cast<int>(origins.size()) < opts.k)
    throw ConfigError("evaluate: subset spans only " +
                      std::to_string(origins.size()) +
                      " distinct inputs, cannot fill k=" +
                      std::to_string(opts.k) + " slots");
  if (constrain_classes) {
    if (opts.k < ds.num_classes())
      throw ConfigError("evaluate: k=" + std::to_string(opts.k) +
                        " cannot cover all " +
                        std::to_string(ds.num_classes()) + " classes");
    for (int y = 0; y < ds.num_classes(); ++y)
      if (!classes.count(y))
        throw ConfigError("evaluate: subset has no example of class " +
                          std::to_string(y) +
                          ", the class-coverage constraint is unsatisfiable");
  }
}

// Accuracy of one fixed prompt over the query list. Queries are rendered with
// render_ds (which owns the template and the demonstrations); they may come
// from a different dataset's test split.
inline double prompt_accuracy(const std::vector<int>& ids,
                              const Dataset& render_ds,
                              const std::vector<TrainingExample>& queries,
                              Backend& backend, bool calibrate) {
  if (queries.empty()) throw Error("evaluate: empty query split");
  std::optional<Calibrator> cal;
  if (calibrate) cal = fit_calibrator(ids, render_ds, backend);
  long correct = 0;
  for (const auto& q : queries) {
    RenderedPrompt rp = render(ids, q, render_ds);
    LabelScores scores = backend.score_labels(rp);
    bool ok = cal.has_value() ? calibrated_predict(scores, *cal) == q.label
                              : is_correct(scores, q.label);
    if (ok) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(queries.size());
}

inline EvalReport score_prompts(std::vector<Prompt> prompts,
                                const Dataset& render_ds,
                                const std::vector<TrainingExample>& queries,
                                Backend& backend, const EvalOptions& opts,
                                EvalMeta meta) {
  std::vector<double> accs(prompts.size(), 0.0);
  auto score_one = [&](size_t t) {
    accs[t] = prompt_accuracy(prompts[t].example_ids, render_ds, queries,
                              backend, opts.calibrate);
  };
  if (opts.workers <= 1) {
    for (size_t t = 0; t < prompts.size(); ++t) score_one(t);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&] {
      while (true) {
        size_t t = next.fetch_add(1);
        if (t >= prompts.size()) return;
        score_one(t);
      }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < opts.workers; ++w) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }

  EvalReport rep;
  rep.meta = std::move(meta);
  rep.n_prompts = static_cast<int>(prompts.size());
  rep.avg = mean_of(accs);
  rep.std_dev = population_stddev(accs);
  rep.min = *std::min_element(accs.begin(), accs.end());
  for (size_t t = 0; t < prompts.size(); ++t)
    rep.per_prompt.push_back({std::move(prompts[t]), accs[t]});
  return rep;
}

}  // namespace detail

// Standard protocol: n_prompts random orderings drawn from the subset, each
// scored on the full test split. The class-coverage constraint rejects draws
// whose label multiset misses a class.
inline EvalReport evaluate_subset(const SubsetSpec& subset, const Dataset& ds,
                                  Backend& backend, const EvalOptions& opts) {
  detail::check_subset_feasible(subset.example_ids, ds, opts,
                                opts.min_one_per_class);
  if (opts.n_prompts < 1) throw ConfigError("evaluate: n_prompts must be >= 1");
  Rng rng(mix_seed(opts.seed, fnv1a("eval-prompts")));
  std::vector<Prompt> prompts;
  prompts.reserve(static_cast<size_t>(opts.n_prompts));
  for (int t = 0; t < opts.n_prompts; ++t) {
    int draws = 0;
    while (true) {
      std::vector<int> ids =
          detail::draw_eval_prompt(subset.example_ids, ds, opts.k, rng);
      if (!opts.min_one_per_class || detail::covers_all_classes(ids, ds)) {
        prompts.push_back(make_prompt(std::move(ids), ds));
        break;
      }
      if (++draws >= opts.rejection_cap)
        throw Error("evaluate: class-coverage constraint unmet after " +
                    std::to_string(opts.rejection_cap) + " draws for prompt " +
                    std::to_string(t));
    }
  }
  EvalMeta meta;
  meta.protocol = "standard";
  meta.dataset = ds.name;
  meta.backend_id = backend.id();
  meta.subset_method = subset.method;
  meta.seed = opts.seed;
  meta.k = opts.k;
  meta.calibrated = opts.calibrate;
  meta.constraint = opts.min_one_per_class ? "min-one-per-class" : "none";
  return detail::score_prompts(std::move(prompts), ds, ds.test, backend, opts,
                               std::move(meta));
}

// Binary-only ablation: prompts whose demonstrations all carry one label.
// Returns one report per class side.
inline std::map<int, EvalReport> evaluate_single_label(const SubsetSpec& subset,
                                                       const Dataset& ds,
                                                       Backend& backend,
                                                       EvalOptions opts) {
  if (ds.num_classes() != 2)
    throw ConfigError("single-label protocol requires a binary task");
  std::map<int, EvalReport> out;
  opts.min_one_per_class = false;  // one label per prompt by construction
  for (int y = 0; y < 2; ++y) {
    std::vector<int> side;
    for (int id : subset.example_ids)
      if (ds.train_by_id(id).label == y) side.push_back(id);
    if (static_cast<int>(side.size()) < opts.k)
      throw ConfigError("single-label: class " + std::to_string(y) +
                        " side has " + std::to_string(side.size()) +
                        " examples, needs at least k=" + std::to_string(opts.k));
    detail::check_subset_feasible(side, ds, opts, false);
    Rng rng(mix_seed(opts.seed, fnv1a("single-label-" + std::to_string(y))));
    std::vector<Prompt> prompts;
    for (int t = 0; t < opts.n_prompts; ++t)
      prompts.push_back(
          make_prompt(detail::draw_eval_prompt(side, ds, opts.k, rng), ds));
    EvalMeta meta;
    meta.protocol = "single-label";
    meta.dataset = ds.name;
    meta.backend_id = backend.id();
    meta.subset_method = subset.method;
    meta.seed = opts.seed;
    meta.k = opts.k;
    meta.calibrated = opts.calibrate;
    meta.constraint = "all-label-" + std::to_string(y);
    out.emplace(y, detail::score_prompts(std::move(prompts), ds, ds.test,
                                         backend, opts, std::move(meta)));
  }
  return out;
}

// Out-of-distribution transfer: demonstrations, template and selection come
// from the source task; queries come from the target task's test split. The
// label spaces must agree verbatim, and target inputs must provide the source
// template's fields.
inline EvalReport evaluate_ood(const SubsetSpec& subset, const Dataset& source,
                               const Dataset& target, Backend& backend,
                               const EvalOptions& opts) {
  if (source.verbalizers != target.verbalizers)
    throw ConfigError("evaluate_ood: verbalizer mismatch between " +
                      source.name + " and " + target.name);
  if (target.test.empty())
    throw Error("evaluate_ood: target test split is empty");
  EvalReport rep = [&] {
    // Prompt sampling is identical to the standard protocol; only the query
    // split differs.
    detail::check_subset_feasible(subset.example_ids, source, opts,
                                  opts.min_one_per_class);
    Rng rng(mix_seed(opts.seed, fnv1a("eval-prompts")));
    std::vector<Prompt> prompts;
    for (int t = 0; t < opts.n_prompts; ++t) {
      int draws = 0;
      while (true) {
        std::vector<int> ids =
            detail::draw_eval_prompt(subset.example_ids, source, opts.k, rng);
        if (!opts.min_one_per_class || detail::covers_all_classes(ids, source)) {
          prompts.push_back(make_prompt(std::move(ids), source));
          break;
        }
        if (++draws >= opts.rejection_cap)
          throw Error("evaluate_ood: class-coverage constraint unmet after " +
                      std::to_string(opts.rejection_cap) + " draws");
      }
    }
    EvalMeta meta;
    meta.protocol = "ood";
    meta.dataset = source.name + "->" + target.name;
    meta.backend_id = backend.id();
    meta.subset_method = subset.method;
    meta.seed = opts.seed;
    meta.k = opts.k;
    meta.calibrated = opts.calibrate;
    meta.constraint = opts.min_one_per_class ? "min-one-per-class" : "none";
    return detail::score_prompts(std::move(prompts), source, target.test,
                                 backend, opts, std::move(meta));
  }();
  return rep;
}

// Many-shot reference point: class-balanced prompts of k_max demonstrations
// drawn from the whole train split. Prompts that cannot fit the context
// window alongside the longest query are resampled a bounded number of times.
inline EvalReport evaluate_maxshot(const Dataset& ds, Backend& backend,
                                   int k_max, const EvalOptions& opts) {
  int c = ds.num_classes();
  if (k_max < c || k_max % c != 0)
    throw ConfigError("evaluate_maxshot: k_max " + std::to_string(k_max) +
                      " must be a positive multiple of the " +
                      std::to_string(c) + " classes");
  int per_class = k_max / c;
  for (int y = 0; y < c; ++y)
    if (static_cast<int>(ds.train_ids_of_class(y).size()) < per_class)
      throw ConfigError("evaluate_maxshot: class " + std::to_string(y) +
                        " has fewer than " + std::to_string(per_class) +
                        " train examples");

  int window = backend.context_window();
  int max_query_tokens = 0;
  for (const auto& q : ds.test)
    max_query_tokens = std::max(
        max_query_tokens, backend.count_tokens(render_query_stub(q.input, ds)));

  Rng rng(mix_seed(opts.seed, fnv1a("maxshot-prompts")));
  std::vector<Prompt> prompts;
  const int kResampleCap = 10;
  for (int t = 0; t < opts.n_prompts; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt < kResampleCap && !placed; ++attempt) {
      std::vector<int> ids;
      std::set<int> used_origins;
      for (int y = 0; y < c; ++y) {
        std::vector<int> cls = ds.train_ids_of_class(y);
        std::shuffle(cls.begin(), cls.end(), rng);
        int taken = 0;
        for (int id : cls) {
          if (taken == per_class) break;
          int origin = ds.train_by_id(id).origin;
          if (used_origins.count(origin)) continue;
          ids.push_back(id);
          used_origins.insert(origin);
          ++taken;
        }
        if (taken < per_class)
          throw Error("evaluate_maxshot: class " + std::to_string(y) +
                      " cannot supply " + std::to_string(per_class) +
                      " distinct inputs");
      }
      std::shuffle(ids.begin(), ids.end(), rng);
      std::vector<std::string> parts;
      for (int id : ids) parts.push_back(render_example(ds.train_by_id(id), ds));
      int demo_tokens = backend.count_tokens(join(parts, ds.separator));
      if (demo_tokens + max_query_tokens <= window) {
        prompts.push_back(make_prompt(std::move(ids), ds));
        placed = true;
      }
    }
    if (!placed)
      throw ContextOverflowError(
          "evaluate_maxshot: no prompt of " + std::to_string(k_max) +
          " demonstrations fit the context window after " +
          std::to_string(kResampleCap) + " resamples");
  }

  EvalMeta meta;
  meta.protocol = "maxshot";
  meta.dataset = ds.name;
  meta.backend_id = backend.id();
  meta.subset_method = "full-train";
  meta.seed = opts.seed;
  meta.k = k_max;
  meta.calibrated = opts.calibrate;
  meta.constraint = "balanced";
  return detail::score_prompts(std::move(prompts), ds, ds.test, backend, opts,
                               std::move(meta));
}

inline void save_report(const EvalReport& rep, const std::string& path) {
  write_json_file(path, rep.to_json());
}

inline EvalReport load_report(const std::string& path) {
  return EvalReport::from_json(read_json_file(path));
}

}  // namespace icsel
