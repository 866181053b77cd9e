#pragma once

#include <chrono>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "icsel/analysis.hpp"
#include "icsel/condacc.hpp"
#include "icsel/corpus.hpp"
#include "icsel/datamodels.hpp"
#include "icsel/evaluation.hpp"
#include "icsel/pool.hpp"
#include "icsel/remote.hpp"
#include "icsel/replay.hpp"
#include "icsel/selection.hpp"
#include "icsel/synthetic.hpp"

namespace icsel {

// Flat key/value configuration: INI-style sections, `key = value` lines,
// quoted strings, and # comments. Keys are addressed as "section.key".
class Config {
 public:
  Config() = default;

  static Config from_string(const std::string& text, const std::string& origin = "<string>") {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto where = [&] { return origin + ":" + std::to_string(lineno); };
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError(where() + ": unterminated section header");
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ConfigError(where() + ": empty section name");
        continue;
      }
      size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(where() + ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      std::string raw = trim(s.substr(eq + 1));
      if (key.empty()) throw ConfigError(where() + ": empty key");
      std::string value;
      if (!raw.empty() && raw.front() == '"') {
        size_t i = 1;
        bool closed = false;
        while (i < raw.size()) {
          char c = raw[i++];
          if (c == '\\' && i < raw.size()) {
            char e = raw[i++];
            value += e == 'n' ? '\n' : e == 't' ? '\t' : e;
          } else if (c == '"') {
            closed = true;
            break;
          } else {
            value += c;
          }
        }
        if (!closed) throw ConfigError(where() + ": unterminated string");
        if (!trim(raw.substr(i)).empty() && trim(raw.substr(i))[0] != '#')
          throw ConfigError(where() + ": trailing garbage after string");
      } else {
        size_t hash = raw.find('#');
        value = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      }
      std::string full = section.empty() ? key : section + "." + key;
      if (cfg.kv_.count(full))
        throw ConfigError(where() + ": duplicate key " + full);
      cfg.kv_[full] = value;
    }
    return cfg;
  }

  static Config from_file(const std::string& path) {
    return from_string(read_text_file(path), path);
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  const std::map<std::string, std::string>& values() const { return kv_; }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  std::string req_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("config: missing required key " + key);
    return it->second;
  }
  long get_int(const std::string& key, long dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return parse_int(key, it->second);
  }
  long req_int(const std::string& key) const { return parse_int(key, req_str(key)); }
  uint64_t get_u64(const std::string& key, uint64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return parse_u64(key, it->second);
  }
  uint64_t req_u64(const std::string& key) const { return parse_u64(key, req_str(key)); }
  double get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t used = 0;
      double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trail");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key " + key + " is not a number: " + it->second);
    }
  }
  bool get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError("config: key " + key + " must be true or false");
  }

  // Order-independent content hash; two configs with the same effective
  // settings hash alike regardless of file formatting.
  std::string hash() const {
    uint64_t h = kFnvOffset;
    for (const auto& [k, v] : kv_) {
      h = fnv1a(k, h);
      h = fnv1a("=", h);
      h = fnv1a(v, h);
      h = fnv1a("\n", h);
    }
    return hash_hex(h);
  }

 private:
  static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  static long parse_int(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      long x = std::stol(v, &used);
      if (used != v.size()) throw std::invalid_argument("trail");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config: key " + key + " is not an integer: " + v);
    }
  }
  static uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      uint64_t x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument("trail");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config: key " + key + " is not an unsigned integer: " + v);
    }
  }

  std::map<std::string, std::string> kv_;
};

// --- backend construction ----------------------------------------------------

struct BackendDescriptor {
  std::string kind;  // synthetic | remote | replay
  json oracle;       // synthetic parameters
  RemoteConfig remote;
  std::string replay_store;
  std::string replay_model;
  int replay_context_window = 1 << 20;
  std::string record_store;  // non-empty: wrap the backend and record traffic

  static BackendDescriptor from_json(const json& j) {
    BackendDescriptor d;
    if (!j.is_object() || !j.contains("kind"))
      throw ConfigError("backend descriptor needs a kind");
    d.kind = j.at("kind").get<std::string>();
    auto forbid = [&](const char* field) {
      if (j.contains(field))
        throw ConfigError("backend descriptor: field '" + std::string(field) +
                          "' does not belong to kind '" + d.kind + "'");
    };
    if (d.kind == "synthetic") {
      forbid("endpoint");
      forbid("store");
      if (!j.contains("oracle"))
        throw ConfigError("synthetic backend needs an oracle object");
      d.oracle = j.at("oracle");
    } else if (d.kind == "remote") {
      forbid("oracle");
      forbid("store");
      d.remote.endpoint = j.value("endpoint", "");
      d.remote.model = j.value("model", "");
      d.remote.api_key_env = j.value("api_key_env", std::string("ICSEL_API_KEY"));
      d.remote.context_window_tokens = j.value("context_window", 2048);
      d.remote.top_logprobs = j.value("top_logprobs", 50);
      d.remote.max_attempts = j.value("max_attempts", 5);
      d.remote.backoff_initial_ms = j.value("backoff_initial_ms", 200);
      if (d.remote.endpoint.empty() || d.remote.model.empty())
        throw ConfigError("remote backend needs endpoint and model");
    } else if (d.kind == "replay") {
      forbid("oracle");
      forbid("endpoint");
      d.replay_store = j.value("store", "");
      d.replay_model = j.value("model", "");
      d.replay_context_window = j.value("context_window", 1 << 20);
      if (d.replay_store.empty() || d.replay_model.empty())
        throw ConfigError("replay backend needs store and model");
    } else {
      throw ConfigError("unknown backend kind: " + d.kind);
    }
    d.record_store = j.value("record_store", "");
    if (d.kind == "replay" && !d.record_store.empty())
      throw ConfigError("backend descriptor: replay backends do not record");
    return d;
  }

  static BackendDescriptor from_file(const std::string& path) {
    BackendDescriptor d = from_json(read_json_file(path));
    // Store paths resolve relative to the descriptor file.
    auto resolve = [&](std::string& p) {
      if (!p.empty() && std::filesystem::path(p).is_relative())
        p = (std::filesystem::path(path).parent_path() / p).string();
    };
    resolve(d.replay_store);
    resolve(d.record_store);
    return d;
  }
};

// Owns whichever chain of objects the descriptor asked for and hands out the
// outermost backend.
struct BackendHandle {
  std::unique_ptr<Backend> inner;
  std::unique_ptr<Backend> outer;
  std::shared_ptr<ReplayStore> store;
  RecordingBackend* recorder = nullptr;

  Backend& get() { return outer ? *outer : *inner; }
};

inline BackendHandle make_backend(const BackendDescriptor& desc,
                                  const Dataset* dataset) {
  BackendHandle h;
  if (desc.kind == "synthetic") {
    h.inner = std::make_unique<SyntheticBackend>(
        SyntheticOracleSpec::from_json(desc.oracle), dataset);
  } else if (desc.kind == "remote") {
    h.inner = std::make_unique<RemoteBackend>(desc.remote);
  } else {
    h.store = std::make_shared<ReplayStore>(desc.replay_store);
    h.inner = std::make_unique<ReplayBackend>(h.store, desc.replay_model,
                                              desc.replay_context_window);
  }
  if (!desc.record_store.empty()) {
    h.store = std::make_shared<ReplayStore>(desc.record_store);
    auto rec = std::make_unique<RecordingBackend>(h.store, *h.inner);
    h.recorder = rec.get();
    h.outer = std::move(rec);
  }
  return h;
}

// --- pipeline ----------------------------------------------------------------

struct StageResult {
  std::string name;
  std::string config_hash;
  bool skipped = false;
  double wall_ms = 0.0;  // informational only, never part of any comparison
  std::string status;    // "ok" or "skipped"
  std::vector<std::string> outputs;

  json to_json() const {
    return json{{"name", name},       {"config_hash", config_hash},
                {"skipped", skipped}, {"wall_ms", wall_ms},
                {"status", status},   {"outputs", outputs}};
  }
  static StageResult from_json(const json& j) {
    StageResult s;
    s.name = j.at("name").get<std::string>();
    s.config_hash = j.value("config_hash", "");
    s.skipped = j.value("skipped", false);
    s.wall_ms = j.value("wall_ms", 0.0);
    s.status = j.value("status", "");
    s.outputs = j.value("outputs", std::vector<std::string>{});
    return s;
  }
};

struct RunManifest {
  std::string config_hash;
  std::string backend_id;
  std::vector<StageResult> stages;

  json to_json() const {
    json st = json::array();
    for (const auto& s : stages) st.push_back(s.to_json());
    return json{{"config_hash", config_hash},
                {"backend_id", backend_id},
                {"stages", st}};
  }
  static RunManifest from_json(const json& j) {
    RunManifest m;
    m.config_hash = j.value("config_hash", "");
    m.backend_id = j.value("backend_id", "");
    if (j.contains("stages"))
      for (const auto& s : j.at("stages")) m.stages.push_back(StageResult::from_json(s));
    return m;
  }
};

inline const std::vector<std::string>& pipeline_stage_names() {
  static const std::vector<std::string> names = {"collect", "score", "select",
                                                 "eval", "analyze"};
  return names;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

// Checks everything that can be checked without touching a backend: key
// presence, stage names, method names, and the subset size against the class
// count from the dataset descriptor.
inline void validate_pipeline_config(const Config& cfg) {
  cfg.req_str("run.out_dir");
  cfg.req_u64("run.seed");
  std::string ds_path = cfg.req_str("dataset.descriptor");
  cfg.req_str("backend.descriptor");

  auto stages = detail::split_csv(
      cfg.get_str("run.stages", "collect,score,select,eval,analyze"));
  if (stages.empty()) throw ConfigError("config: run.stages is empty");
  for (const auto& s : stages) {
    const auto& known = pipeline_stage_names();
    if (std::find(known.begin(), known.end(), s) == known.end())
      throw ConfigError("config: unknown stage '" + s + "'");
  }

  DatasetDescriptor desc = DatasetDescriptor::from_file(ds_path);
  int c = static_cast<int>(desc.verbalizers.size());

  bool wants_select =
      std::find(stages.begin(), stages.end(), "select") != stages.end();
  if (wants_select) {
    long e = cfg.req_int("select.e");
    if (e < c || e % c != 0)
      throw ConfigError("config: select.e = " + std::to_string(e) +
                        " must be a positive multiple of the " +
                        std::to_string(c) + " classes in " + desc.name);
    for (const auto& m : detail::split_csv(
             cfg.get_str("select.methods", "condacc,shapley,datamodels,random"))) {
      std::string base = m.rfind("bottom-", 0) == 0 ? m.substr(7) : m;
      if (base != "condacc" && base != "shapley" && base != "datamodels" &&
          base != "oneshot" && base != "random" && base != "topprompts")
        throw ConfigError("config: unknown selection method '" + m + "'");
    }
  }
  if (std::find(stages.begin(), stages.end(), "collect") != stages.end())
    if (cfg.req_int("pool.m") < 1)
      throw ConfigError("config: pool.m must be >= 1");
}

// Runs the requested stages in order, writing artifacts under run.out_dir.
// A stage is skipped when the previous run's manifest shows it completed with
// the same config hash and its outputs still exist; collect additionally
// resumes record-by-record through its own persistence.
inline RunManifest run_pipeline(const Config& cfg, std::ostream& log = std::cout) {
  namespace fs = std::filesystem;
  validate_pipeline_config(cfg);

  const std::string out_dir = cfg.req_str("run.out_dir");
  const uint64_t seed = cfg.req_u64("run.seed");
  const int workers = static_cast<int>(cfg.get_int("run.workers", 1));
  const std::string cfg_hash = cfg.hash();
  auto stages = detail::split_csv(
      cfg.get_str("run.stages", "collect,score,select,eval,analyze"));

  Dataset ds = load_dataset(cfg.req_str("dataset.descriptor"));
  if (cfg.get_bool("dataset.unlabeled", false)) ds = build_unlabeled(ds);
  BackendDescriptor bdesc = BackendDescriptor::from_file(cfg.req_str("backend.descriptor"));
  BackendHandle backend = make_backend(bdesc, &ds);
  verify_single_token_verbalizers(ds, backend.get());

  const int pool_k = static_cast<int>(cfg.get_int("pool.k", ds.k));
  const int eval_k = static_cast<int>(cfg.get_int("eval.k", pool_k));
  auto methods = detail::split_csv(
      cfg.get_str("select.methods", "condacc,shapley,datamodels,random"));
  const bool with_datamodels = cfg.get_bool("datamodels.enable", true);
  const long heldout_n = cfg.get_int("heldout.n", 0);

  fs::create_directories(out_dir);
  RunManifest prev;
  if (fs::exists(fs::path(out_dir) / "manifest.json")) {
    prev = RunManifest::from_json(read_json_file(fs::path(out_dir) / "manifest.json"));
  }
  RunManifest manifest;
  manifest.config_hash = cfg_hash;
  manifest.backend_id = backend.get().id();

  auto out_path = [&](const std::string& rel) {
    return (fs::path(out_dir) / rel).string();
  };

  auto stage_done_before = [&](const std::string& name,
                               const std::vector<std::string>& outputs) {
    for (const auto& s : prev.stages)
      if (s.name == name && s.config_hash == cfg_hash &&
          (s.status == "ok" || s.status == "skipped")) {
        for (const auto& o : outputs)
          if (!fs::exists(out_path(o))) return false;
        return true;
      }
    return false;
  };

  auto run_stage = [&](const std::string& name,
                       const std::vector<std::string>& outputs,
                       const std::function<void()>& body) {
    StageResult sr;
    sr.name = name;
    sr.config_hash = cfg_hash;
    sr.outputs = outputs;
    if (stage_done_before(name, outputs)) {
      sr.skipped = true;
      sr.status = "skipped";
      log << "[" << name << "] skipped (outputs exist, config unchanged)\n";
    } else {
      auto t0 = std::chrono::steady_clock::now();
      body();
      sr.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
      sr.status = "ok";
      log << "[" << name << "] ok (" << static_cast<long>(sr.wall_ms) << " ms)\n";
    }
    manifest.stages.push_back(sr);
    write_json_file(fs::path(out_dir) / "manifest.json", manifest.to_json());
  };

  for (const auto& stage : stages) {
    if (stage == "collect") {
      std::vector<std::string> outputs = {"pool/manifest.json"};
      if (heldout_n > 0) outputs.push_back("heldout/manifest.json");
      run_stage("collect", outputs, [&] {
        SampleOptions sopts;
        sopts.k = pool_k;
        sopts.m = cfg.req_int("pool.m");
        sopts.balanced = cfg.get_bool("pool.balanced", false);
        sopts.seed = mix_seed(seed, fnv1a("pool"));
        sopts.min_occurrence = static_cast<int>(cfg.get_int("pool.min_occurrence", 20));
        CollectOptions copts;
        copts.out_dir = out_path("pool");
        copts.workers = workers;
        auto prompts = sample_pool(ds, sopts);
        PromptPool pool = collect(prompts, ds, backend.get(), sopts, copts);
        if (heldout_n > 0) {
          SampleOptions hopts = sopts;
          hopts.m = heldout_n;
          hopts.seed = mix_seed(seed, fnv1a("heldout"));
          hopts.min_occurrence = 0;
          CollectOptions hcopts;
          hcopts.out_dir = out_path("heldout");
          hcopts.workers = workers;
          auto hprompts =
              sample_heldout_pool(ds, pool_k, heldout_n, pool, hopts.seed);
          collect(hprompts, ds, backend.get(), hopts, hcopts);
        }
      });
    } else if (stage == "score") {
      std::vector<std::string> outputs = {"scores/condacc.jsonl",
                                          "scores/shapley.jsonl"};
      if (with_datamodels) {
        outputs.push_back("scores/datamodels.jsonl");
        outputs.push_back("suite/config.json");
        if (heldout_n > 0) outputs.push_back("reports/heldout.json");
      }
      if (cfg.get_bool("score.oneshot", false))
        outputs.push_back("scores/oneshot.jsonl");
      run_stage("score", outputs, [&] {
        PromptPool pool = load_pool(out_path("pool"));
        fs::create_directories(fs::path(out_dir) / "scores");
        ScoreVector ca = condacc_scores(pool);
        save_scores(ca, out_path("scores/condacc.jsonl"));
        save_scores(shapley_scores(ca, pool), out_path("scores/shapley.jsonl"));
        if (with_datamodels) {
          RidgeOptions ropts;
          ropts.lambda = cfg.get_double("datamodels.lambda", 1e-6);
          ropts.bucket_threshold = cfg.get_int("datamodels.bucket_threshold", 50);
          DatamodelSuite suite = fit_suite(pool, ropts);
          save_suite(suite, out_path("suite"));
          DmScoreOptions dopts;
          dopts.per_bucket = cfg.get_bool("datamodels.per_bucket", true);
          dopts.count_positive = cfg.get_bool("datamodels.count_positive", true);
          save_scores(datamodels_scores(suite, dopts),
                      out_path("scores/datamodels.jsonl"));
          if (heldout_n > 0) {
            PromptPool heldout = load_pool(out_path("heldout"));
            fs::create_directories(fs::path(out_dir) / "reports");
            write_json_file(out_path("reports/heldout.json"),
                            heldout_eval(suite, heldout).to_json());
          }
        }
        if (cfg.get_bool("score.oneshot", false))
          save_scores(oneshot_scores(ds, backend.get(), workers),
                      out_path("scores/oneshot.jsonl"));
      });
    } else if (stage == "select") {
      std::vector<std::string> outputs;
      for (const auto& m : methods) outputs.push_back("subsets/" + m + ".json");
      run_stage("select", outputs, [&] {
        int e = static_cast<int>(cfg.req_int("select.e"));
        fs::create_directories(fs::path(out_dir) / "subsets");
        for (const auto& m : methods) {
          SubsetSpec subset;
          bool bottom = m.rfind("bottom-", 0) == 0;
          std::string base = bottom ? m.substr(7) : m;
          if (base == "random") {
            subset = select_random(ds, e, mix_seed(seed, fnv1a("subset-random")));
          } else if (base == "topprompts") {
            PromptPool pool = load_pool(out_path("pool"));
            subset = select_topprompts(
                pool, ds, static_cast<int>(cfg.get_int("select.topprompts_n", 10)));
            subset.source = "pool";
          } else {
            ScoreVector sv = load_scores(out_path("scores/" + base + ".jsonl"));
            subset = bottom ? select_bottom(sv, ds, e) : select_top(sv, ds, e);
            subset.source = "scores/" + base + ".jsonl";
          }
          save_subset(subset, out_path("subsets/" + m + ".json"));
        }
      });
    } else if (stage == "eval") {
      std::vector<std::string> outputs;
      for (const auto& m : methods) outputs.push_back("reports/" + m + ".json");
      run_stage("eval", outputs, [&] {
        fs::create_directories(fs::path(out_dir) / "reports");
        EvalOptions eopts;
        eopts.k = eval_k;
        eopts.n_prompts = static_cast<int>(cfg.get_int("eval.n_prompts", 50));
        eopts.seed = mix_seed(seed, fnv1a("eval"));
        eopts.min_one_per_class = cfg.get_bool("eval.min_one_per_class", true);
        eopts.calibrate = cfg.get_bool("eval.calibrate", false);
        eopts.workers = workers;
        for (const auto& m : methods) {
          SubsetSpec subset = load_subset(out_path("subsets/" + m + ".json"));
          EvalReport rep = evaluate_subset(subset, ds, backend.get(), eopts);
          save_report(rep, out_path("reports/" + m + ".json"));
        }
      });
    } else if (stage == "analyze") {
      std::vector<std::string> outputs = {"analysis/profile.csv"};
      if (with_datamodels) {
        outputs.push_back("analysis/embeddings.jsonl");
        outputs.push_back("analysis/projection.csv");
      }
      for (const auto& m : methods)
        outputs.push_back("analysis/diversity_" + m + ".json");
      run_stage("analyze", outputs, [&] {
        fs::create_directories(fs::path(out_dir) / "analysis");
        ScoreVector ca = load_scores(out_path("scores/condacc.jsonl"));
        save_profile_csv(profile_examples(ds, backend.get(), ca),
                         out_path("analysis/profile.csv"));
        std::vector<std::vector<double>> emb;
        if (with_datamodels) {
          DatamodelSuite suite = load_suite(out_path("suite"));
          emb = datamodel_embeddings(suite);
          save_embeddings(emb, out_path("analysis/embeddings.jsonl"));
          Projection2D proj = project_2d(emb);
          std::string csv = "id,x,y\n";
          for (size_t i = 0; i < proj.points.size(); ++i)
            csv += std::to_string(i) + "," + detail::num_str(proj.points[i][0]) +
                   "," + detail::num_str(proj.points[i][1]) + "\n";
          write_text_file(out_path("analysis/projection.csv"), csv);
        }
        long n_random = cfg.get_int("analyze.n_random", 5000);
        uint64_t dseed = mix_seed(seed, fnv1a("diversity"));
        for (const auto& m : methods) {
          SubsetSpec subset = load_subset(out_path("subsets/" + m + ".json"));
          DiversityReport rep = diversity_report(
              subset, ds, n_random, dseed, with_datamodels ? &emb : nullptr);
          write_json_file(out_path("analysis/diversity_" + m + ".json"),
                          rep.to_json());
        }
      });
    }
  }
  return manifest;
}

}  // namespace icsel
