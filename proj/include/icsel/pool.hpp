#pragma once

#include <atomic>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "icsel/backend.hpp"
#include "icsel/corpus.hpp"

namespace icsel {

struct Prompt {
  std::vector<int> example_ids;    // ordered, position 0 first
  std::vector<int> label_pattern;  // labels of the examples, same order
};

inline Prompt make_prompt(std::vector<int> ids, const Dataset& ds) {
  Prompt p;
  p.label_pattern.reserve(ids.size());
  for (int id : ids) p.label_pattern.push_back(ds.train_by_id(id).label);
  p.example_ids = std::move(ids);
  return p;
}

inline std::string pattern_key(const std::vector<int>& pattern) {
  std::vector<std::string> parts;
  parts.reserve(pattern.size());
  for (int y : pattern) parts.push_back(std::to_string(y));
  return join(parts, ",");
}

// One scored prompt: the margin of every dev query under this prompt, plus
// the resulting dev accuracy.
struct PromptRecord {
  int prompt_index = -1;
  Prompt prompt;
  std::vector<double> dev_outcomes;
  double dev_accuracy = 0.0;
};

struct PoolManifest {
  std::string dataset;
  std::string setup;  // "labeled" or "unlabeled"
  std::string backend_id;
  uint64_t seed = 0;
  int k = 0;
  long m = 0;
  bool balanced = false;
  int min_occurrence = 0;
  int n_tr = 0;
  int dev_size = 0;
  std::vector<long> failed_indices;
  std::vector<std::string> notes;

  json to_json() const {
    return json{{"dataset", dataset},     {"setup", setup},
                {"backend_id", backend_id}, {"seed", seed},
                {"k", k},                 {"m", m},
                {"balanced", balanced},   {"min_occurrence", min_occurrence},
                {"n_tr", n_tr},           {"dev_size", dev_size},
                {"failed_indices", failed_indices}, {"notes", notes}};
  }
  static PoolManifest from_json(const json& j) {
    PoolManifest mf;
    mf.dataset = j.at("dataset").get<std::string>();
    mf.setup = j.value("setup", "labeled");
    mf.backend_id = j.at("backend_id").get<std::string>();
    mf.seed = j.at("seed").get<uint64_t>();
    mf.k = j.at("k").get<int>();
    mf.m = j.at("m").get<long>();
    mf.balanced = j.value("balanced", false);
    mf.min_occurrence = j.value("min_occurrence", 0);
    mf.n_tr = j.at("n_tr").get<int>();
    mf.dev_size = j.at("dev_size").get<int>();
    mf.failed_indices = j.value("failed_indices", std::vector<long>{});
    mf.notes = j.value("notes", std::vector<std::string>{});
    return mf;
  }
  // The fields that must agree for two pools to be interchangeable; notes and
  // failure bookkeeping are excluded.
  std::string settings_key() const {
    json j = to_json();
    j.erase("failed_indices");
    j.erase("notes");
    return j.dump();
  }
};

struct Occurrence {
  long record = -1;
  int position = -1;
};

struct PromptPool {
  PoolManifest manifest;
  std::vector<PromptRecord> records;
  std::vector<std::vector<Occurrence>> occurrence_index;  // keyed by train id

  int n_tr() const { return manifest.n_tr; }
  int k() const { return manifest.k; }
  int dev_size() const { return manifest.dev_size; }

  void rebuild_occurrence_index() {
    occurrence_index.assign(static_cast<size_t>(manifest.n_tr), {});
    for (size_t r = 0; r < records.size(); ++r) {
      const auto& ids = records[r].prompt.example_ids;
      for (size_t j = 0; j < ids.size(); ++j) {
        int id = ids[j];
        if (id < 0 || id >= manifest.n_tr)
          throw LoadError("pool record references id " + std::to_string(id) +
                          " outside train split of size " +
                          std::to_string(manifest.n_tr));
        occurrence_index[static_cast<size_t>(id)].push_back(
            {static_cast<long>(r), static_cast<int>(j)});
      }
    }
  }
};

struct SampleOptions {
  int k = 4;
  long m = 0;
  bool balanced = false;
  uint64_t seed = 0;
  // Minimum occurrence count per train example. The sampler starts uniform
  // and switches to targeted prompts for the most deficient examples exactly
  // when the remaining budget requires it, so the floor is met within m
  // prompts. 0 disables the floor (pure uniform sampling).
  int min_occurrence = 20;
};

namespace detail {

// Incremental sampler state. Prompts never repeat an underlying input: ids
// are distinct and, in the unlabeled setup where several ids share an origin,
// origins are distinct too. For labeled data origin == id, so the origin rule
// subsumes the id rule.
class PoolSampler {
 public:
  PoolSampler(const Dataset& ds, const SampleOptions& opts)
      : ds_(ds), opts_(opts), rng_(mix_seed(opts.seed, fnv1a("pool-sample"))) {
    n_ = ds.n_train();
    if (opts_.k < 1) throw ConfigError("sample_pool: k must be >= 1");
    if (opts_.m < 1) throw ConfigError("sample_pool: m must be >= 1");
    if (opts_.k > 64) throw ConfigError("sample_pool: k larger than 64 is not supported");
    std::set<int> origins;
    for (const auto& ex : ds.train) origins.insert(ex.origin);
    n_origins_ = static_cast<int>(origins.size());
    if (opts_.k > n_origins_)
      throw ConfigError("sample_pool: k=" + std::to_string(opts_.k) +
                        " exceeds the " + std::to_string(n_origins_) +
                        " distinct inputs in the train split");
    if (opts_.balanced) {
      if (opts_.k != ds.num_classes())
        throw ConfigError("sample_pool: balanced sampling needs k == number of classes");
      for (int y = 0; y < ds.num_classes(); ++y) {
        class_ids_.push_back(ds.train_ids_of_class(y));
        if (class_ids_.back().empty())
          throw ConfigError("sample_pool: class " + std::to_string(y) +
                            " has no train examples");
      }
    }
    occ_.assign(static_cast<size_t>(n_), 0);
    if (opts_.min_occurrence > 0) {
      total_def_ = static_cast<long>(n_) * opts_.min_occurrence;
      class_def_.assign(static_cast<size_t>(ds.num_classes()), 0);
      for (const auto& ex : ds.train) {
        class_def_[static_cast<size_t>(ex.label)] += opts_.min_occurrence;
        origin_def_[ex.origin] += opts_.min_occurrence;
      }
      for (const auto& [o, d] : origin_def_)
        origin_bound_ = std::max(origin_bound_, d);
      check_floor_feasible();
    }
  }

  std::vector<Prompt> run() {
    std::vector<Prompt> prompts;
    prompts.reserve(static_cast<size_t>(opts_.m));
    for (long t = 0; t < opts_.m; ++t) {
      long after = opts_.m - t - 1;  // budget left once this prompt is spent
      std::vector<int> ids =
          needs_targeting(after) ? targeted_prompt(after) : uniform_prompt();
      for (int id : ids) note_occurrence(id);
      prompts.push_back(make_prompt(std::move(ids), ds_));
    }
    if (opts_.min_occurrence > 0 && opts_.k > 1) fix_position_spread(prompts);
    warn_missing_patterns(prompts);
    return prompts;
  }

  // Draws one prompt without floor bookkeeping; used for held-out sampling.
  std::vector<int> draw_uniform() { return uniform_prompt(); }

 private:
  void check_floor_feasible() {
    long need;
    if (opts_.balanced) {
      need = 0;
      for (const auto& cls : class_ids_)
        need = std::max(need, static_cast<long>(cls.size()) *
                                  static_cast<long>(opts_.min_occurrence));
    } else {
      need = (total_def_ + opts_.k - 1) / opts_.k;
    }
    // Ids sharing an origin also share per-prompt capacity.
    need = std::max(need, origin_bound_);
    if (need > opts_.m)
      throw ConfigError("sample_pool: min_occurrence " +
                        std::to_string(opts_.min_occurrence) + " needs at least " +
                        std::to_string(need) + " prompts, but m=" +
                        std::to_string(opts_.m));
  }

  long deficit(int id) const {
    return std::max(0l, static_cast<long>(opts_.min_occurrence) -
                            occ_[static_cast<size_t>(id)]);
  }

  void note_occurrence(int id) {
    size_t si = static_cast<size_t>(id);
    if (opts_.min_occurrence > 0 && occ_[si] < opts_.min_occurrence) {
      const auto& ex = ds_.train_by_id(id);
      --total_def_;
      --class_def_[static_cast<size_t>(ex.label)];
      --origin_def_[ex.origin];
    }
    ++occ_[si];
  }

  // True when a prompt that happens to help no deficient example would make
  // the occurrence floor unreachable within the remaining budget.
  bool needs_targeting(long after) const {
    if (opts_.min_occurrence <= 0 || total_def_ == 0) return false;
    if (opts_.balanced) {
      for (long dc : class_def_)
        if (dc > after) return true;  // one slot per class per prompt
    } else if (total_def_ > after * opts_.k) {
      return true;
    }
    // origin_bound_ never increases, so the per-origin scan only runs in the
    // endgame where it can actually bind.
    if (std::min(total_def_, origin_bound_) > after) {
      for (const auto& [o, d] : origin_def_)
        if (d > after) return true;
    }
    return false;
  }

  // Fills the prompt with the most deficient examples first. Origins whose
  // summed deficit equals the remaining budget must be served every prompt
  // from now on, so they are seated before anything else.
  std::vector<int> targeted_prompt(long after) {
    std::vector<int> ids;
    std::set<int> used_origins;
    std::set<int> used_classes;
    auto try_add = [&](int id) {
      if (static_cast<int>(ids.size()) >= opts_.k) return false;
      const auto& ex = ds_.train_by_id(id);
      if (used_origins.count(ex.origin)) return false;
      if (opts_.balanced && used_classes.count(ex.label)) return false;
      ids.push_back(id);
      used_origins.insert(ex.origin);
      used_classes.insert(ex.label);
      return true;
    };

    std::vector<int> order(static_cast<size_t>(n_));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      long da = deficit(a), db = deficit(b);
      if (da != db) return da > db;
      return a < b;
    });

    if (std::min(total_def_, origin_bound_) > after) {
      std::set<int> forced;
      for (const auto& [o, d] : origin_def_)
        if (d > after) forced.insert(o);
      for (int id : order) {
        if (forced.empty()) break;
        if (deficit(id) == 0) break;
        int origin = ds_.train_by_id(id).origin;
        if (forced.count(origin) && try_add(id)) forced.erase(origin);
      }
      if (!forced.empty())
        throw Error("sample_pool: cannot satisfy min_occurrence for inputs "
                    "competing for the same prompt slots");
    }
    for (int id : order) {
      if (deficit(id) == 0) break;
      try_add(id);
      if (static_cast<int>(ids.size()) == opts_.k) break;
    }
    // Remaining slots are ordinary uniform draws.
    long attempts = 0;
    while (static_cast<int>(ids.size()) < opts_.k) {
      int id;
      if (opts_.balanced) {
        int y = first_missing_class(used_classes);
        const auto& cls = class_ids_[static_cast<size_t>(y)];
        id = cls[std::uniform_int_distribution<size_t>(0, cls.size() - 1)(rng_)];
      } else {
        id = std::uniform_int_distribution<int>(0, n_ - 1)(rng_);
      }
      if (!try_add(id) && ++attempts > 10000l * opts_.k)
        throw Error("sample_pool: cannot complete a targeted prompt");
    }
    std::shuffle(ids.begin(), ids.end(), rng_);
    return ids;
  }

  int first_missing_class(const std::set<int>& used) const {
    for (int y = 0; y < ds_.num_classes(); ++y)
      if (!used.count(y)) return y;
    throw Error("sample_pool: no class slot left");
  }

  std::vector<int> uniform_prompt() {
    std::vector<int> ids;
    std::set<int> used_origins;
    long attempts = 0;
    if (opts_.balanced) {
      std::vector<int> classes(static_cast<size_t>(ds_.num_classes()));
      std::iota(classes.begin(), classes.end(), 0);
      std::shuffle(classes.begin(), classes.end(), rng_);
      for (int y : classes) {
        const auto& cls = class_ids_[static_cast<size_t>(y)];
        while (true) {
          int id = cls[std::uniform_int_distribution<size_t>(0, cls.size() - 1)(rng_)];
          int origin = ds_.train_by_id(id).origin;
          if (!used_origins.count(origin)) {
            ids.push_back(id);
            used_origins.insert(origin);
            break;
          }
          if (++attempts > 10000l * opts_.k)
            throw Error("sample_pool: cannot draw a balanced prompt with distinct inputs");
        }
      }
    } else {
      while (static_cast<int>(ids.size()) < opts_.k) {
        int id = std::uniform_int_distribution<int>(0, n_ - 1)(rng_);
        int origin = ds_.train_by_id(id).origin;
        if (!used_origins.count(origin)) {
          ids.push_back(id);
          used_origins.insert(origin);
        } else if (++attempts > 10000l * opts_.k) {
          throw Error("sample_pool: cannot draw a prompt with distinct inputs");
        }
      }
    }
    return ids;
  }

  // An example whose occurrences all landed on one position gets one of its
  // prompts reordered. Swapping two slots keeps the example set intact.
  void fix_position_spread(std::vector<Prompt>& prompts) {
    for (int pass = 0; pass < 10; ++pass) {
      std::vector<uint64_t> mask(static_cast<size_t>(n_), 0);
      std::vector<long> first(static_cast<size_t>(n_), -1);
      std::vector<long> count(static_cast<size_t>(n_), 0);
      for (size_t t = 0; t < prompts.size(); ++t) {
        const auto& ids = prompts[t].example_ids;
        for (size_t j = 0; j < ids.size(); ++j) {
          size_t i = static_cast<size_t>(ids[j]);
          mask[i] |= 1ull << j;
          count[i]++;
          if (first[i] < 0) first[i] = static_cast<long>(t);
        }
      }
      bool changed = false;
      for (int i = 0; i < n_; ++i) {
        size_t si = static_cast<size_t>(i);
        if (count[si] >= 2 && (mask[si] & (mask[si] - 1)) == 0) {
          auto& p = prompts[static_cast<size_t>(first[si])];
          size_t j = 0;
          while (p.example_ids[j] != i) ++j;
          size_t j2 = (j + 1) % p.example_ids.size();
          std::swap(p.example_ids[j], p.example_ids[j2]);
          std::swap(p.label_pattern[j], p.label_pattern[j2]);
          changed = true;
        }
      }
      if (!changed) return;
    }
    throw Error("sample_pool: could not spread occurrences over two positions");
  }

  void warn_missing_patterns(const std::vector<Prompt>& prompts) const {
    if (ds_.num_classes() != 2 || opts_.balanced || opts_.k > 20) return;
    std::set<std::string> seen;
    for (const auto& p : prompts) seen.insert(pattern_key(p.label_pattern));
    long want = 1l << opts_.k;
    if (static_cast<long>(seen.size()) < want)
      std::cerr << "sample_pool: only " << seen.size() << " of " << want
                << " label patterns present; pattern-bucketed fits will fall "
                   "back for the missing ones\n";
  }

  const Dataset& ds_;
  SampleOptions opts_;
  Rng rng_;
  int n_ = 0;
  int n_origins_ = 0;
  std::vector<std::vector<int>> class_ids_;
  std::vector<long> occ_;
  long total_def_ = 0;
  std::vector<long> class_def_;
  std::map<int, long> origin_def_;
  long origin_bound_ = 0;
};

}  // namespace detail

inline std::vector<Prompt> sample_pool(const Dataset& ds,
                                       const SampleOptions& opts) {
  return detail::PoolSampler(ds, opts).run();
}

// Prompts whose unordered example sets never occur in the existing pool; used
// to measure datamodel generalization. Draws are uniform (no occurrence
// floor) and rejection-sampled against the existing pool's combinations.
inline std::vector<Prompt> sample_heldout_pool(const Dataset& ds, int k, long n,
                                               const PromptPool& existing,
                                               uint64_t seed) {
  std::unordered_set<std::string> seen;
  for (const auto& r : existing.records) {
    std::vector<int> s = r.prompt.example_ids;
    std::sort(s.begin(), s.end());
    seen.insert(pattern_key(s));
  }
  SampleOptions opts;
  opts.k = k;
  opts.m = std::max(n, 1l);
  opts.balanced = existing.manifest.balanced;
  opts.seed = seed;
  opts.min_occurrence = 0;
  detail::PoolSampler sampler(ds, opts);

  std::vector<Prompt> out;
  out.reserve(static_cast<size_t>(n));
  long consecutive_rejects = 0;
  const long kRejectCap = 10000;
  while (static_cast<long>(out.size()) < n) {
    std::vector<int> ids = sampler.draw_uniform();
    std::vector<int> s = ids;
    std::sort(s.begin(), s.end());
    if (seen.count(pattern_key(s))) {
      if (++consecutive_rejects >= kRejectCap)
        throw Error("sample_heldout_pool: insufficient unseen combinations (" +
                    std::to_string(kRejectCap) + " consecutive rejections)");
      continue;
    }
    consecutive_rejects = 0;
    out.push_back(make_prompt(std::move(ids), ds));
  }
  return out;
}

struct CollectOptions {
  std::string out_dir;  // empty: keep the pool in memory only
  int workers = 1;
  double abort_failure_fraction = 0.01;
};

namespace detail {

inline json record_to_json(const PromptRecord& r) {
  return json{{"prompt_index", r.prompt_index},
              {"example_ids", r.prompt.example_ids},
              {"label_pattern", r.prompt.label_pattern},
              {"dev_outcomes", r.dev_outcomes},
              {"dev_accuracy", r.dev_accuracy}};
}

inline PromptRecord record_from_json(const json& j) {
  PromptRecord r;
  r.prompt_index = j.at("prompt_index").get<int>();
  r.prompt.example_ids = j.at("example_ids").get<std::vector<int>>();
  r.prompt.label_pattern = j.at("label_pattern").get<std::vector<int>>();
  r.dev_outcomes = j.at("dev_outcomes").get<std::vector<double>>();
  r.dev_accuracy = j.at("dev_accuracy").get<double>();
  return r;
}

}  // namespace detail

// Scores every prompt against the full dev split. Failures are recorded and
// skipped; more than abort_failure_fraction of them aborts the run after all
// prompts were attempted. With out_dir set, results are persisted and an
// interrupted run resumes from the records already on disk.
inline PromptPool collect(const std::vector<Prompt>& prompts, const Dataset& ds,
                          Backend& backend, const SampleOptions& sample_opts,
                          const CollectOptions& copts = {}) {
  namespace fs = std::filesystem;
  if (ds.dev.empty()) throw Error("collect: empty dev split");

  PoolManifest mf;
  mf.dataset = ds.name;
  mf.setup = ds.unlabeled ? "unlabeled" : "labeled";
  mf.backend_id = backend.id();
  mf.seed = sample_opts.seed;
  mf.k = sample_opts.k;
  mf.m = static_cast<long>(prompts.size());
  mf.balanced = sample_opts.balanced;
  mf.min_occurrence = sample_opts.min_occurrence;
  mf.n_tr = ds.n_train();
  mf.dev_size = static_cast<int>(ds.dev.size());

  std::vector<std::optional<PromptRecord>> slots(prompts.size());
  std::vector<std::pair<long, std::string>> failures;

  fs::path dir = copts.out_dir.empty() ? fs::path() : fs::path(copts.out_dir);
  if (!dir.empty()) {
    fs::create_directories(dir);
    if (fs::exists(dir / "manifest.json")) {
      PoolManifest prev = PoolManifest::from_json(read_json_file(dir / "manifest.json"));
      PoolManifest prev_cmp = prev;
      prev_cmp.failed_indices.clear();
      prev_cmp.notes.clear();
      if (prev_cmp.settings_key() != mf.settings_key())
        throw ConfigError("collect: " + dir.string() +
                          " holds a pool with different settings; refuse to mix");
      if (fs::exists(dir / "records.jsonl")) {
        for_each_jsonl(dir / "records.jsonl", [&](const json& j, size_t) {
          PromptRecord r = detail::record_from_json(j);
          if (r.prompt_index < 0 || r.prompt_index >= static_cast<int>(slots.size()))
            throw LoadError("collect: record index out of range on resume");
          slots[static_cast<size_t>(r.prompt_index)] = std::move(r);
        });
      }
    }
  }

  auto score_one = [&](long t) {
    if (slots[static_cast<size_t>(t)].has_value()) return;  // resumed
    PromptRecord rec;
    rec.prompt_index = static_cast<int>(t);
    rec.prompt = prompts[static_cast<size_t>(t)];
    rec.dev_outcomes.reserve(ds.dev.size());
    long correct = 0;
    for (const auto& dev_ex : ds.dev) {
      RenderedPrompt rp = render(rec.prompt.example_ids, dev_ex, ds);
      double m = outcome(backend.score_labels(rp), dev_ex.label);
      rec.dev_outcomes.push_back(m);
      if (m > 0.0) ++correct;
    }
    rec.dev_accuracy =
        static_cast<double>(correct) / static_cast<double>(ds.dev.size());
    slots[static_cast<size_t>(t)] = std::move(rec);
  };

  int workers = std::max(1, copts.workers);
  if (workers == 1) {
    for (long t = 0; t < static_cast<long>(prompts.size()); ++t) {
      try {
        score_one(t);
      } catch (const std::exception& e) {
        failures.emplace_back(t, e.what());
      }
    }
  } else {
    std::atomic<long> next{0};
    std::mutex fail_mu;
    auto worker = [&] {
      while (true) {
        long t = next.fetch_add(1);
        if (t >= static_cast<long>(prompts.size())) return;
        try {
          score_one(t);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(fail_mu);
          failures.emplace_back(t, e.what());
        }
      }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
    std::sort(failures.begin(), failures.end());
  }

  PromptPool pool;
  pool.manifest = mf;
  for (auto& slot : slots)
    if (slot.has_value()) pool.records.push_back(std::move(*slot));
  for (const auto& [t, msg] : failures) {
    pool.manifest.failed_indices.push_back(t);
    pool.manifest.notes.push_back("prompt " + std::to_string(t) + " failed: " + msg);
  }

  if (ds.num_classes() == 2 && !mf.balanced && mf.k <= 20) {
    std::set<std::string> patterns;
    for (const auto& r : pool.records) patterns.insert(pattern_key(r.prompt.label_pattern));
    long want = 1l << mf.k;
    if (static_cast<long>(patterns.size()) < want)
      pool.manifest.notes.push_back("only " + std::to_string(patterns.size()) +
                                    " of " + std::to_string(want) +
                                    " label patterns present");
  }

  if (!dir.empty()) {
    std::string lines;
    for (const auto& r : pool.records) lines += detail::record_to_json(r).dump() + "\n";
    write_text_file(dir / "records.jsonl", lines);
    std::string fail_lines;
    for (const auto& [t, msg] : failures)
      fail_lines += json{{"prompt_index", t}, {"error", msg}}.dump() + "\n";
    write_text_file(dir / "failures.jsonl", fail_lines);
    write_json_file(dir / "manifest.json", pool.manifest.to_json());
  }

  double frac = prompts.empty() ? 0.0
                                : static_cast<double>(failures.size()) /
                                      static_cast<double>(prompts.size());
  if (!failures.empty() && frac > copts.abort_failure_fraction)
    throw Error("collect: " + std::to_string(failures.size()) + " of " +
                std::to_string(prompts.size()) +
                " prompts failed, above the abort threshold; first error: " +
                failures.front().second);

  pool.rebuild_occurrence_index();
  return pool;
}

inline void save_pool(const PromptPool& pool, const std::string& dir_str) {
  namespace fs = std::filesystem;
  fs::path dir(dir_str);
  fs::create_directories(dir);
  std::string lines;
  for (const auto& r : pool.records) lines += detail::record_to_json(r).dump() + "\n";
  write_text_file(dir / "records.jsonl", lines);
  write_text_file(dir / "failures.jsonl", "");
  write_json_file(dir / "manifest.json", pool.manifest.to_json());
}

inline PromptPool load_pool(const std::string& dir_str) {
  namespace fs = std::filesystem;
  fs::path dir(dir_str);
  PromptPool pool;
  pool.manifest = PoolManifest::from_json(read_json_file(dir / "manifest.json"));
  std::set<long> failed(pool.manifest.failed_indices.begin(),
                        pool.manifest.failed_indices.end());
  std::set<long> seen;
  for_each_jsonl(dir / "records.jsonl", [&](const json& j, size_t) {
    pool.records.push_back(detail::record_from_json(j));
    seen.insert(pool.records.back().prompt_index);
  });
  for (long t = 0; t < pool.manifest.m; ++t)
    if (!seen.count(t) && !failed.count(t))
      throw LoadError("pool incomplete: missing record " + std::to_string(t) +
                      " in " + dir.string());
  std::sort(pool.records.begin(), pool.records.end(),
            [](const PromptRecord& a, const PromptRecord& b) {
              return a.prompt_index < b.prompt_index;
            });
  pool.rebuild_occurrence_index();
  return pool;
}

// Invariant check: every train example reaches the occurrence floor, spread
// over at least two positions when k > 1.
inline void check_pool_coverage(const PromptPool& pool) {
  if (pool.manifest.min_occurrence <= 0) return;
  for (int i = 0; i < pool.n_tr(); ++i) {
    const auto& occs = pool.occurrence_index[static_cast<size_t>(i)];
    if (static_cast<int>(occs.size()) < pool.manifest.min_occurrence)
      throw Error("example " + std::to_string(i) + " occurs " +
                  std::to_string(occs.size()) + " times, below the floor of " +
                  std::to_string(pool.manifest.min_occurrence));
    if (pool.k() > 1) {
      std::set<int> positions;
      for (const auto& o : occs) positions.insert(o.position);
      if (positions.size() < 2)
        throw Error("example " + std::to_string(i) +
                    " always sits at one position");
    }
  }
}

}  // namespace icsel
