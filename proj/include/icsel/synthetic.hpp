#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "icsel/backend.hpp"

namespace icsel {

// Ground-truth scoring rule for desk-scale experiments: the margin of a
// prompt is a fixed linear function of which train example sits at which
// position, plus optional Gaussian noise. Because the valuation methods under
// test assume exactly this structure in the noiseless case, the oracle gives
// every estimator a known target to recover.
struct SyntheticOracleSpec {
  int n_tr = 0;
  int k = 0;
  int num_classes = 2;
  std::vector<double> weights;  // n_tr x k, row-major
  double bias = 0.0;
  double noise_std = 0.0;
  uint64_t seed = 0;
  long vocab_size = 50000;
  double ppl_jitter = 0.0;  // 0 keeps every token equally likely
  int context_window_tokens = 1 << 20;

  // When a prompt's label pattern matches an override, that override's
  // parameters replace the base ones. Lets tests create pools whose margin
  // structure genuinely depends on the pattern.
  struct PatternWeights {
    std::vector<int> pattern;
    std::vector<double> weights;
    double bias = 0.0;
  };
  std::vector<PatternWeights> pattern_overrides;

  double w(int i, int j) const {
    return weights[static_cast<size_t>(i) * static_cast<size_t>(k) +
                   static_cast<size_t>(j)];
  }

  void validate() const {
    if (n_tr < 1 || k < 1) throw ConfigError("oracle: n_tr and k must be >= 1");
    if (num_classes < 1) throw ConfigError("oracle: num_classes must be >= 1");
    if (weights.size() != static_cast<size_t>(n_tr) * static_cast<size_t>(k))
      throw ConfigError("oracle: weights must have n_tr * k entries");
    if (noise_std < 0) throw ConfigError("oracle: noise_std must be >= 0");
    for (const auto& o : pattern_overrides) {
      if (static_cast<int>(o.pattern.size()) != k)
        throw ConfigError("oracle: override pattern length must equal k");
      if (o.weights.size() != weights.size())
        throw ConfigError("oracle: override weights must have n_tr * k entries");
    }
  }

  static SyntheticOracleSpec random(int n_tr, int k, int num_classes,
                                    uint64_t seed, double weight_scale = 0.1,
                                    double noise_std = 0.0) {
    SyntheticOracleSpec s;
    s.n_tr = n_tr;
    s.k = k;
    s.num_classes = num_classes;
    s.seed = seed;
    s.noise_std = noise_std;
    Rng rng(mix_seed(seed, fnv1a("oracle-weights")));
    std::uniform_real_distribution<double> u(-weight_scale, weight_scale);
    s.weights.resize(static_cast<size_t>(n_tr) * static_cast<size_t>(k));
    for (auto& w : s.weights) w = u(rng);
    s.bias = u(rng);
    return s;
  }

  json to_json() const {
    json j{{"n_tr", n_tr},
           {"k", k},
           {"num_classes", num_classes},
           {"weights", weights},
           {"bias", bias},
           {"noise_std", noise_std},
           {"seed", seed},
           {"vocab_size", vocab_size},
           {"ppl_jitter", ppl_jitter},
           {"context_window_tokens", context_window_tokens}};
    if (!pattern_overrides.empty()) {
      json ov = json::array();
      for (const auto& o : pattern_overrides)
        ov.push_back(json{{"pattern", o.pattern},
                          {"weights", o.weights},
                          {"bias", o.bias}});
      j["pattern_overrides"] = ov;
    }
    return j;
  }

  static SyntheticOracleSpec from_json(const json& j) {
    SyntheticOracleSpec s;
    s.n_tr = j.at("n_tr").get<int>();
    s.k = j.at("k").get<int>();
    s.num_classes = j.value("num_classes", 2);
    s.weights = j.at("weights").get<std::vector<double>>();
    s.bias = j.value("bias", 0.0);
    s.noise_std = j.value("noise_std", 0.0);
    s.seed = j.value("seed", 0ull);
    s.vocab_size = j.value("vocab_size", 50000l);
    s.ppl_jitter = j.value("ppl_jitter", 0.0);
    s.context_window_tokens = j.value("context_window_tokens", 1 << 20);
    if (j.contains("pattern_overrides")) {
      for (const auto& o : j.at("pattern_overrides"))
        s.pattern_overrides.push_back(
            {o.at("pattern").get<std::vector<int>>(),
             o.at("weights").get<std::vector<double>>(),
             o.value("bias", 0.0)});
    }
    s.validate();
    return s;
  }
};

class SyntheticBackend : public Backend {
 public:
  // The dataset is only needed to resolve label patterns for overrides.
  explicit SyntheticBackend(SyntheticOracleSpec spec,
                            const Dataset* dataset = nullptr)
      : spec_(std::move(spec)), dataset_(dataset) {
    spec_.validate();
    if (!spec_.pattern_overrides.empty() && dataset_ == nullptr)
      throw ConfigError("oracle: pattern overrides need a dataset");
    if (dataset_ != nullptr && dataset_->n_train() != spec_.n_tr)
      throw ConfigError("oracle: n_tr " + std::to_string(spec_.n_tr) +
                        " does not match dataset train size " +
                        std::to_string(dataset_->n_train()));
    id_ = "synthetic:" + hash_hex(fnv1a(spec_.to_json().dump()));
  }

  const SyntheticOracleSpec& spec() const { return spec_; }

  std::string id() const override { return id_; }

  // Noise is a pure function of (seed, prompt ids, query ref): re-scoring the
  // same prompt and query always reproduces the same margin, regardless of
  // call order or thread count.
  double margin(const std::vector<int>& ids, long test_ref) const {
    const std::vector<double>* w = &spec_.weights;
    double bias = spec_.bias;
    if (!spec_.pattern_overrides.empty()) {
      std::vector<int> pattern;
      pattern.reserve(ids.size());
      for (int id : ids)
        pattern.push_back(dataset_->train_by_id(id).label);
      for (const auto& o : spec_.pattern_overrides) {
        if (o.pattern == pattern) {
          w = &o.weights;
          bias = o.bias;
          break;
        }
      }
    }
    double m = bias;
    for (size_t j = 0; j < ids.size(); ++j) {
      int i = ids[j];
      if (i < 0 || i >= spec_.n_tr)
        throw Error("oracle: example id out of range: " + std::to_string(i));
      // Prompts longer than K (max-shot probes) reuse position columns
      // cyclically; shorter prompts use a prefix.
      size_t col = j % static_cast<size_t>(spec_.k);
      m += (*w)[static_cast<size_t>(i) * static_cast<size_t>(spec_.k) + col];
    }
    if (spec_.noise_std > 0.0) {
      uint64_t h = fnv1a_u64(static_cast<uint64_t>(ids.size()));
      for (int id : ids) h = fnv1a_u64(static_cast<uint64_t>(id), h);
      h = fnv1a_u64(static_cast<uint64_t>(test_ref), h);
      Rng eng(mix_seed(spec_.seed, h));
      std::normal_distribution<double> noise(0.0, spec_.noise_std);
      m += noise(eng);
    }
    return m;
  }

  // The margin lands on the gold class and every other class scores zero, so
  // outcome() recovers the margin exactly. Queries with unknown gold (probes)
  // put it on class 1, keeping binary scores in the (0, m) shape.
  LabelScores score_labels(const RenderedPrompt& prompt) override {
    int n = count_tokens(prompt.text);
    if (n > spec_.context_window_tokens)
      throw ContextOverflowError("prompt is " + std::to_string(n) +
                                 " tokens, context window is " +
                                 std::to_string(spec_.context_window_tokens));
    int c = static_cast<int>(prompt.label_candidates.size());
    if (c < 1) throw Error("oracle: prompt has no label candidates");
    double m = margin(prompt.example_ids, prompt.test_ref);
    int g = prompt.test_gold;
    if (g < 0 || g >= c) g = std::min(1, c - 1);
    LabelScores out;
    out.scores.assign(static_cast<size_t>(c), 0.0);
    out.scores[static_cast<size_t>(g)] = m;
    return out;
  }

  double perplexity(const std::string& text) override {
    auto toks = split_ws(text);
    if (toks.empty()) throw Error("perplexity of empty text");
    double lv = std::log(static_cast<double>(spec_.vocab_size));
    double sum = 0.0;
    for (const auto& t : toks) {
      double u = static_cast<double>(mix_seed(spec_.seed, fnv1a(t)) >> 11) /
                 9007199254740992.0;  // 2^53
      sum += -lv + spec_.ppl_jitter * (2.0 * u - 1.0);
    }
    return std::exp(-sum / static_cast<double>(toks.size()));
  }

  int count_tokens(const std::string& text) override {
    return static_cast<int>(split_ws(text).size());
  }

  int context_window() const override { return spec_.context_window_tokens; }

 private:
  SyntheticOracleSpec spec_;
  const Dataset* dataset_;
  std::string id_;
};

// Deterministic corpus for tests and demos: one text field, class-balanced
// splits, word counts varied by hash so token-length profiles are not flat.
inline Dataset make_oracle_dataset(int train_per_class, int dev_per_class,
                                   int test_per_class, int num_classes, int k,
                                   uint64_t seed) {
  static const std::vector<std::string> kLabelWords = {
      "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"};
  if (num_classes < 1 || num_classes > static_cast<int>(kLabelWords.size()))
    throw ConfigError("oracle dataset supports 1.." +
                      std::to_string(kLabelWords.size()) + " classes");
  Dataset ds;
  ds.name = "oracle";
  ds.template_text = "Input: {text}\nLabel: {label}";
  ds.fields = {"text"};
  ds.verbalizers.assign(kLabelWords.begin(), kLabelWords.begin() + num_classes);
  ds.k = k;

  int next_id = 0;
  auto emit = [&](int per_class, std::vector<TrainingExample>& out) {
    for (int i = 0; i < per_class * num_classes; ++i) {
      TrainingExample ex;
      ex.id = next_id++;
      ex.source_id = ex.id;
      ex.origin = ex.id;
      ex.label = i % num_classes;
      ex.gold = true;
      uint64_t h = mix_seed(seed, static_cast<uint64_t>(ex.id));
      int words = 2 + static_cast<int>(h % 9);
      std::vector<std::string> toks;
      toks.push_back("sample" + std::to_string(ex.id));
      for (int wd = 0; wd < words; ++wd) {
        uint64_t hw = mix_seed(h, static_cast<uint64_t>(wd));
        toks.push_back("tok" + std::to_string(hw % 4096));
      }
      ex.input.emplace_back("text", join(toks, " "));
      out.push_back(std::move(ex));
    }
  };
  emit(train_per_class, ds.train);
  emit(dev_per_class, ds.dev);
  emit(test_per_class, ds.test);
  return ds;
}

}  // namespace icsel
