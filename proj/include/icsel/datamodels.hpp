#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icsel/condacc.hpp"
#include "icsel/pool.hpp"

namespace icsel {

// Linear surrogate for one dev query: predicts the query's margin from which
// train example occupies which prompt position. Feature (i, j) fires when
// train example i sits at position j.
struct Datamodel {
  int n_tr = 0;
  int k = 0;
  std::vector<double> weights;  // n_tr x k, row-major
  double bias = 0.0;
  int dev_index = -1;
  std::string bucket = "phase1";  // "phase1" or the label-pattern key

  double w(int i, int j) const {
    return weights[static_cast<size_t>(i) * static_cast<size_t>(k) +
                   static_cast<size_t>(j)];
  }

  double predict(const Prompt& prompt) const {
    if (static_cast<int>(prompt.example_ids.size()) != k)
      throw Error("datamodel predict: prompt has " +
                  std::to_string(prompt.example_ids.size()) +
                  " examples, model expects " + std::to_string(k));
    double out = bias;
    for (int j = 0; j < k; ++j) out += w(prompt.example_ids[static_cast<size_t>(j)], j);
    return out;
  }
};

struct RidgeOptions {
  double lambda = 1e-6;
  long bucket_threshold = 50;  // buckets below this reuse the shared fit
};

namespace detail {

struct RidgeFit {
  std::vector<Datamodel> models;      // one per dev index
  std::vector<uint8_t> feature_seen;  // n_tr*k: did (i, j) occur in the fit set
};

// Ridge regression of every dev query's margins onto the shared indicator
// design. The Gram matrix and its factorization depend only on the prompts,
// so one LDLT serves all dev queries as a multi-column solve.
//
// Objective per dev query: sum_r (x_r . theta - f_r)^2 + lambda*|w|^2 with
// the intercept unpenalized. The intercept column equals the sum of each
// position's indicator columns, which makes the unpenalized system singular;
// that is why lambda must be strictly positive.
inline RidgeFit fit_ridge(const PromptPool& pool,
                          const std::vector<long>& record_idx, double lambda,
                          const std::string& bucket_name) {
  if (lambda <= 0.0)
    throw ConfigError(
        "ridge: lambda must be > 0 (each position's indicators sum to the "
        "intercept column, so the unpenalized normal equations are singular)");
  if (record_idx.empty()) throw Error("ridge: no records to fit");
  const int n = pool.n_tr();
  const int k = pool.k();
  const int dev = pool.dev_size();
  const int p = n * k + 1;  // weights plus intercept

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(p, dev);
  std::vector<uint8_t> seen(static_cast<size_t>(n) * static_cast<size_t>(k), 0);
  std::vector<int> nz(static_cast<size_t>(k) + 1);
  for (long r : record_idx) {
    const auto& rec = pool.records[static_cast<size_t>(r)];
    const auto& ids = rec.prompt.example_ids;
    if (static_cast<int>(ids.size()) != k)
      throw Error("ridge: pool record " + std::to_string(rec.prompt_index) +
                  " has wrong prompt length");
    for (int j = 0; j < k; ++j) {
      nz[static_cast<size_t>(j)] = ids[static_cast<size_t>(j)] * k + j;
      seen[static_cast<size_t>(nz[static_cast<size_t>(j)])] = 1;
    }
    nz[static_cast<size_t>(k)] = p - 1;
    for (int a = 0; a <= k; ++a)
      for (int b = 0; b <= k; ++b)
        gram(nz[static_cast<size_t>(a)], nz[static_cast<size_t>(b)]) += 1.0;
    if (static_cast<int>(rec.dev_outcomes.size()) != dev)
      throw Error("ridge: record " + std::to_string(rec.prompt_index) +
                  " has wrong dev width");
    for (int a = 0; a <= k; ++a)
      for (int d = 0; d < dev; ++d)
        rhs(nz[static_cast<size_t>(a)], d) += rec.dev_outcomes[static_cast<size_t>(d)];
  }
  for (int q = 0; q < p - 1; ++q) gram(q, q) += lambda;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success)
    throw Error("ridge: factorization failed; try a larger lambda");
  Eigen::MatrixXd theta = ldlt.solve(rhs);

  // First-order optimality guard: the solve must actually minimize the
  // penalized objective, not just return something finite.
  double resid = (gram * theta - rhs).cwiseAbs().maxCoeff();
  double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
  if (!(resid / scale < 1e-8))
    throw Error("ridge: normal equations solved poorly (residual " +
                std::to_string(resid / scale) + "); try a larger lambda");

  RidgeFit fit;
  fit.feature_seen = std::move(seen);
  fit.models.reserve(static_cast<size_t>(dev));
  for (int d = 0; d < dev; ++d) {
    Datamodel dm;
    dm.n_tr = n;
    dm.k = k;
    dm.dev_index = d;
    dm.bucket = bucket_name;
    dm.weights.resize(static_cast<size_t>(n) * static_cast<size_t>(k));
    for (int q = 0; q < p - 1; ++q) dm.weights[static_cast<size_t>(q)] = theta(q, d);
    dm.bias = theta(p - 1, d);
    fit.models.push_back(std::move(dm));
  }
  return fit;
}

}  // namespace detail

// Shared fit over the whole pool for a single dev query.
inline Datamodel fit_datamodel(const PromptPool& pool, int dev_index,
                               double lambda) {
  if (dev_index < 0 || dev_index >= pool.dev_size())
    throw Error("fit_datamodel: dev index out of range");
  std::vector<long> all(pool.records.size());
  std::iota(all.begin(), all.end(), 0l);
  return std::move(
      detail::fit_ridge(pool, all, lambda, "phase1")
          .models[static_cast<size_t>(dev_index)]);
}

// Full two-phase ensemble: a shared fit on all records, then one refit per
// label-pattern bucket. Buckets smaller than the threshold keep the shared
// model. Within a fitted bucket, features that never occur there have no
// signal of their own, so they retain their shared-fit weights while observed
// features take the bucket's values; the two groups touch disjoint normal
// equations, so the splice does not perturb the bucket solution.
struct DatamodelSuite {
  int n_tr = 0;
  int k = 0;
  int dev_count = 0;
  RidgeOptions options;
  std::vector<Datamodel> phase1;
  std::map<std::string, std::vector<Datamodel>> phase2;
  std::map<std::string, long> bucket_sizes;  // every pattern in the pool

  bool bucket_fitted(const std::string& pattern) const {
    return phase2.count(pattern) > 0;
  }

  const Datamodel& model_for(const std::string& pattern, int dev_index) const {
    if (dev_index < 0 || dev_index >= dev_count)
      throw Error("suite: dev index out of range");
    auto it = phase2.find(pattern);
    const auto& models = it != phase2.end() ? it->second : phase1;
    return models[static_cast<size_t>(dev_index)];
  }
};

inline DatamodelSuite fit_suite(const PromptPool& pool,
                                const RidgeOptions& options = {}) {
  DatamodelSuite suite;
  suite.n_tr = pool.n_tr();
  suite.k = pool.k();
  suite.dev_count = pool.dev_size();
  suite.options = options;

  std::vector<long> all(pool.records.size());
  std::iota(all.begin(), all.end(), 0l);
  detail::RidgeFit shared = detail::fit_ridge(pool, all, options.lambda, "phase1");
  suite.phase1 = std::move(shared.models);

  std::map<std::string, std::vector<long>> buckets;
  for (long r = 0; r < static_cast<long>(pool.records.size()); ++r)
    buckets[pattern_key(pool.records[static_cast<size_t>(r)].prompt.label_pattern)]
        .push_back(r);
  for (const auto& [key, idx] : buckets) {
    suite.bucket_sizes[key] = static_cast<long>(idx.size());
    if (static_cast<long>(idx.size()) < options.bucket_threshold) continue;
    detail::RidgeFit fit = detail::fit_ridge(pool, idx, options.lambda, key);
    for (size_t d = 0; d < fit.models.size(); ++d) {
      auto& dm = fit.models[d];
      for (size_t q = 0; q < dm.weights.size(); ++q)
        if (!fit.feature_seen[q]) dm.weights[q] = suite.phase1[d].weights[q];
    }
    suite.phase2[key] = std::move(fit.models);
  }
  return suite;
}

// Generalization of the fitted surrogates to prompts whose example sets were
// never used in fitting: per dev query, the Pearson correlation and mean
// absolute error between predicted and observed margins.
struct HeldoutReport {
  double mean_correlation = 0.0;  // over models with defined correlation
  double mean_l1 = 0.0;           // over all models
  int n_models = 0;
  int n_excluded = 0;  // models whose predictions or targets had no variance

  json to_json() const {
    return json{{"mean_correlation", mean_correlation},
                {"mean_l1", mean_l1},
                {"n_models", n_models},
                {"n_excluded", n_excluded}};
  }
};

inline HeldoutReport heldout_eval(const DatamodelSuite& suite,
                                  const PromptPool& heldout,
                                  bool route_buckets = true) {
  if (heldout.records.empty()) throw Error("heldout_eval: empty pool");
  if (heldout.dev_size() != suite.dev_count)
    throw Error("heldout_eval: dev split mismatch");
  HeldoutReport rep;
  rep.n_models = suite.dev_count;
  double corr_sum = 0.0;
  int corr_n = 0;
  double l1_sum = 0.0;
  for (int d = 0; d < suite.dev_count; ++d) {
    std::vector<double> pred, truth;
    pred.reserve(heldout.records.size());
    truth.reserve(heldout.records.size());
    for (const auto& rec : heldout.records) {
      const Datamodel& dm =
          route_buckets ? suite.model_for(pattern_key(rec.prompt.label_pattern), d)
                        : suite.phase1[static_cast<size_t>(d)];
      pred.push_back(dm.predict(rec.prompt));
      truth.push_back(rec.dev_outcomes[static_cast<size_t>(d)]);
    }
    double l1 = 0.0;
    for (size_t r = 0; r < pred.size(); ++r) l1 += std::abs(pred[r] - truth[r]);
    l1_sum += l1 / static_cast<double>(pred.size());
    if (auto c = pearson(pred, truth)) {
      corr_sum += *c;
      ++corr_n;
    } else {
      rep.n_excluded++;
    }
  }
  rep.mean_l1 = l1_sum / static_cast<double>(suite.dev_count);
  rep.mean_correlation = corr_n > 0 ? corr_sum / corr_n : 0.0;
  return rep;
}

struct DmScoreOptions {
  // Aggregate over the effective model set of every pattern bucket; false
  // restricts to the shared phase-1 set alone.
  bool per_bucket = true;
  // Count strictly positive weights; false averages the weights instead.
  bool count_positive = true;
};

// Example value from fitted surrogates: how often (or how strongly) does
// placing the example anywhere in the prompt push a dev query's margin up.
inline ScoreVector datamodels_scores(const DatamodelSuite& suite,
                                     const DmScoreOptions& opts = {}) {
  std::vector<const std::vector<Datamodel>*> sets;
  if (opts.per_bucket) {
    for (const auto& [key, size] : suite.bucket_sizes) {
      auto it = suite.phase2.find(key);
      sets.push_back(it != suite.phase2.end() ? &it->second : &suite.phase1);
    }
  }
  if (sets.empty()) sets.push_back(&suite.phase1);

  ScoreVector sv;
  sv.method = opts.count_positive ? "datamodels" : "datamodels-avg";
  size_t n = static_cast<size_t>(suite.n_tr);
  sv.scores.assign(n, 0.0);
  long per_example =
      static_cast<long>(sets.size()) * suite.dev_count * suite.k;
  sv.support.assign(n, per_example);
  for (const auto* set : sets)
    for (const auto& dm : *set)
      for (size_t i = 0; i < n; ++i)
        for (int j = 0; j < suite.k; ++j) {
          double w = dm.w(static_cast<int>(i), j);
          sv.scores[i] += opts.count_positive ? (w > 0.0 ? 1.0 : 0.0) : w;
        }
  if (!opts.count_positive)
    for (auto& s : sv.scores) s /= static_cast<double>(per_example);
  return sv;
}

// Per-example representation taken from the shared fit: example i maps to its
// weight rows across every dev query's model, giving a dev_count*k vector.
inline std::vector<std::vector<double>> datamodel_embeddings(
    const DatamodelSuite& suite) {
  size_t n = static_cast<size_t>(suite.n_tr);
  std::vector<std::vector<double>> emb(n);
  for (size_t i = 0; i < n; ++i) {
    emb[i].reserve(static_cast<size_t>(suite.dev_count) *
                   static_cast<size_t>(suite.k));
    for (const auto& dm : suite.phase1)
      for (int j = 0; j < suite.k; ++j)
        emb[i].push_back(dm.w(static_cast<int>(i), j));
  }
  return emb;
}

struct Projection2D {
  std::vector<std::array<double, 2>> points;
};

// Top-2 principal components of the mean-centered embeddings. Component signs
// are pinned to the largest-magnitude loading so the output is reproducible.
inline Projection2D project_2d(const std::vector<std::vector<double>>& emb) {
  if (emb.empty()) throw Error("project_2d: no embeddings");
  const int n = static_cast<int>(emb.size());
  const int d = static_cast<int>(emb.front().size());
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(emb[static_cast<size_t>(i)].size()) != d)
      throw Error("project_2d: ragged embeddings");
    for (int j = 0; j < d; ++j) x(i, j) = emb[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }
  Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  Projection2D out;
  out.points.assign(static_cast<size_t>(n), {0.0, 0.0});
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  int comps = std::min<int>(2, static_cast<int>(svd.singularValues().size()));
  for (int c = 0; c < comps; ++c) {
    if (svd.singularValues()(c) <= 0.0) break;
    Eigen::VectorXd v = svd.matrixV().col(c);
    int pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0.0) v = -v;
    Eigen::VectorXd proj = x * v;
    for (int i = 0; i < n; ++i) out.points[static_cast<size_t>(i)][static_cast<size_t>(c)] = proj(i);
  }
  return out;
}

// --- persistence -------------------------------------------------------------
//
// Model files are raw little-endian doubles behind a three-field header
// (n_tr, k, dev_count as 64-bit unsigned), one weight matrix row-major plus
// its intercept per dev query.

namespace detail {

inline void write_models_bin(const std::filesystem::path& path,
                             const std::vector<Datamodel>& models) {
  if (models.empty()) throw Error("write_models_bin: no models");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  uint64_t header[3] = {static_cast<uint64_t>(models.front().n_tr),
                        static_cast<uint64_t>(models.front().k),
                        static_cast<uint64_t>(models.size())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (const auto& dm : models) {
    out.write(reinterpret_cast<const char*>(dm.weights.data()),
              static_cast<std::streamsize>(dm.weights.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(&dm.bias), sizeof(double));
  }
  if (!out) throw Error("short write: " + path.string());
}

inline std::vector<Datamodel> read_models_bin(const std::filesystem::path& path,
                                              const std::string& bucket) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  uint64_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw LoadError("truncated model file: " + path.string());
  size_t wsize = static_cast<size_t>(header[0]) * static_cast<size_t>(header[1]);
  std::vector<Datamodel> models;
  for (uint64_t d = 0; d < header[2]; ++d) {
    Datamodel dm;
    dm.n_tr = static_cast<int>(header[0]);
    dm.k = static_cast<int>(header[1]);
    dm.dev_index = static_cast<int>(d);
    dm.bucket = bucket;
    dm.weights.resize(wsize);
    in.read(reinterpret_cast<char*>(dm.weights.data()),
            static_cast<std::streamsize>(wsize * sizeof(double)));
    in.read(reinterpret_cast<char*>(&dm.bias), sizeof(double));
    if (!in) throw LoadError("truncated model file: " + path.string());
    models.push_back(std::move(dm));
  }
  return models;
}

inline std::string bucket_file_name(const std::string& key) {
  std::string safe = key;
  for (char& c : safe)
    if (c == ',') c = '-';
  return "bucket_" + safe + ".bin";
}

}  // namespace detail

inline void save_suite(const DatamodelSuite& suite, const std::string& dir_str) {
  namespace fs = std::filesystem;
  fs::path dir(dir_str);
  fs::create_directories(dir);
  detail::write_models_bin(dir / "phase1.bin", suite.phase1);
  json buckets = json::array();
  for (const auto& [key, size] : suite.bucket_sizes) {
    bool fitted = suite.bucket_fitted(key);
    json b{{"pattern", key}, {"size", size}, {"fitted", fitted}};
    if (fitted) {
      std::string file = detail::bucket_file_name(key);
      detail::write_models_bin(dir / file, suite.phase2.at(key));
      b["file"] = file;
    }
    buckets.push_back(b);
  }
  write_json_file(dir / "config.json",
                  json{{"lambda", suite.options.lambda},
                       {"bucket_threshold", suite.options.bucket_threshold},
                       {"n_tr", suite.n_tr},
                       {"k", suite.k},
                       {"dev_count", suite.dev_count},
                       {"buckets", buckets}});
}

inline DatamodelSuite load_suite(const std::string& dir_str) {
  namespace fs = std::filesystem;
  fs::path dir(dir_str);
  json cfg = read_json_file(dir / "config.json");
  DatamodelSuite suite;
  suite.options.lambda = cfg.at("lambda").get<double>();
  suite.options.bucket_threshold = cfg.at("bucket_threshold").get<long>();
  suite.n_tr = cfg.at("n_tr").get<int>();
  suite.k = cfg.at("k").get<int>();
  suite.dev_count = cfg.at("dev_count").get<int>();
  suite.phase1 = detail::read_models_bin(dir / "phase1.bin", "phase1");
  for (const auto& b : cfg.at("buckets")) {
    std::string key = b.at("pattern").get<std::string>();
    suite.bucket_sizes[key] = b.at("size").get<long>();
    if (b.value("fitted", false))
      suite.phase2[key] =
          detail::read_models_bin(dir / b.at("file").get<std::string>(), key);
  }
  return suite;
}

}  // namespace icsel
