#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "icsel/icsel.hpp"
#include "test_util.hpp"

using namespace icsel;
using icsel_test::TempDir;

namespace {

PromptPool collect_pool(const Dataset& ds, Backend& backend, long m,
                        uint64_t seed, int min_occ = 0) {
  SampleOptions opts;
  opts.k = ds.k;
  opts.m = m;
  opts.seed = seed;
  opts.min_occurrence = min_occ;
  return collect(sample_pool(ds, opts), ds, backend, opts);
}

// Independent reference: dense design matrix, normal equations solved with a
// different factorization than the library uses.
Eigen::VectorXd dense_ridge(const PromptPool& pool, int dev_index,
                            double lambda) {
  int n = pool.n_tr(), k = pool.k();
  int p = n * k + 1;
  int m = static_cast<int>(pool.records.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(m, p);
  Eigen::VectorXd y(m);
  for (int r = 0; r < m; ++r) {
    const auto& rec = pool.records[static_cast<size_t>(r)];
    for (int j = 0; j < k; ++j)
      x(r, rec.prompt.example_ids[static_cast<size_t>(j)] * k + j) = 1.0;
    x(r, p - 1) = 1.0;
    y(r) = rec.dev_outcomes[static_cast<size_t>(dev_index)];
  }
  Eigen::MatrixXd reg = Eigen::MatrixXd::Identity(p, p) * lambda;
  reg(p - 1, p - 1) = 0.0;
  Eigen::MatrixXd lhs = x.transpose() * x + reg;
  return lhs.colPivHouseholderQr().solve(x.transpose() * y);
}

TEST(RidgeFitTest, AgreesWithADenseReferenceSolver) {
  Dataset ds = icsel_test::tiny_dataset(2, 2, 1, 2, 2);  // n=4, k=2
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 31, 0.2));
  PromptPool pool = collect_pool(ds, backend, 30, 5);

  for (int d = 0; d < pool.dev_size(); ++d) {
    Datamodel dm = fit_datamodel(pool, d, 0.5);
    Eigen::VectorXd ref = dense_ridge(pool, d, 0.5);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j)
        EXPECT_NEAR(dm.w(i, j), ref(i * 2 + j), 1e-10);
    EXPECT_NEAR(dm.bias, ref(4 * 2), 1e-10);
  }
}

TEST(RidgeFitTest, ConstantTargetsPutEverythingInTheBias) {
  Dataset ds = icsel_test::tiny_dataset(2, 1, 1, 2, 2);
  PromptPool pool;
  pool.manifest.n_tr = 4;
  pool.manifest.k = 2;
  pool.manifest.dev_size = 1;
  int t = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      if (a == b) continue;
      PromptRecord rec;
      rec.prompt_index = t++;
      rec.prompt = make_prompt({a, b}, ds);
      rec.dev_outcomes = {0.625};
      rec.dev_accuracy = 1.0;
      pool.records.push_back(rec);
    }
  pool.manifest.m = t;
  pool.rebuild_occurrence_index();

  Datamodel dm = fit_datamodel(pool, 0, 1e-10);
  EXPECT_NEAR(dm.bias, 0.625, 1e-7);
  for (double w : dm.weights) EXPECT_NEAR(w, 0.0, 1e-7);
}

TEST(RidgeFitTest, ZeroLambdaIsRejectedWithAnExplanation) {
  Dataset ds = icsel_test::tiny_dataset(2, 1, 1, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds));
  PromptPool pool = collect_pool(ds, backend, 20, 2);
  try {
    fit_datamodel(pool, 0, 0.0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("singular"), std::string::npos);
  }
  EXPECT_THROW(fit_datamodel(pool, 0, -1.0), ConfigError);
}

TEST(RidgeFitTest, NoiselessLinearMarginsAreRecoveredOnHeldoutPrompts) {
  Dataset ds = icsel_test::tiny_dataset(8, 3, 1, 2, 2);  // n=16
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 77, 0.0));
  PromptPool pool = collect_pool(ds, backend, 150, 9, 8);
  DatamodelSuite suite = fit_suite(pool, {1e-8, 1000000});

  auto heldout_prompts = sample_heldout_pool(ds, 2, 20, pool, 4);
  for (const auto& p : heldout_prompts) {
    for (int d = 0; d < suite.dev_count; ++d) {
      double truth = outcome(
          backend.score_labels(render(p.example_ids, ds.dev[static_cast<size_t>(d)], ds)),
          ds.dev[static_cast<size_t>(d)].label);
      double pred = suite.phase1[static_cast<size_t>(d)].predict(p);
      EXPECT_NEAR(pred, truth, 1e-5);
    }
  }
}

TEST(DatamodelTest, PredictRequiresTheFittedPromptLength) {
  Datamodel dm;
  dm.n_tr = 3;
  dm.k = 2;
  dm.weights = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  dm.bias = 1.0;
  Prompt p;
  p.example_ids = {2, 0};
  EXPECT_DOUBLE_EQ(dm.predict(p), 1.0 + 0.5 + 0.2);
  p.example_ids = {2};
  EXPECT_THROW(dm.predict(p), Error);
  p.example_ids = {2, 0, 1};
  EXPECT_THROW(dm.predict(p), Error);
}

TEST(SuiteTest, BucketsBelowTheThresholdFallBackToTheSharedFit) {
  Dataset ds = icsel_test::tiny_dataset(4, 2, 1, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 3, 0.1));
  PromptPool pool = collect_pool(ds, backend, 120, 8, 6);
  RidgeOptions opts;
  opts.lambda = 1e-6;
  opts.bucket_threshold = 25;
  DatamodelSuite suite = fit_suite(pool, opts);

  ASSERT_FALSE(suite.bucket_sizes.empty());
  long total = 0;
  for (const auto& [key, size] : suite.bucket_sizes) {
    total += size;
    EXPECT_EQ(suite.bucket_fitted(key), size >= 25) << key;
    if (!suite.bucket_fitted(key)) {
      const Datamodel& routed = suite.model_for(key, 0);
      EXPECT_EQ(routed.weights, suite.phase1[0].weights);
    }
  }
  EXPECT_EQ(total, static_cast<long>(pool.records.size()));
}

TEST(SuiteTest, UnseenFeaturesCarrySharedWeightsIntoFittedBuckets) {
  Dataset ds = icsel_test::tiny_dataset(2, 2, 1, 2, 2);  // labels 0,1,0,1
  PromptPool pool;
  pool.manifest.n_tr = 4;
  pool.manifest.k = 2;
  pool.manifest.dev_size = 2;
  int t = 0;
  auto add = [&](std::vector<int> ids, double m0, double m1, int copies) {
    for (int c = 0; c < copies; ++c) {
      PromptRecord rec;
      rec.prompt_index = t++;
      rec.prompt = make_prompt(ids, ds);
      rec.dev_outcomes = {m0, m1};
      rec.dev_accuracy = (m0 > 0) ? 1.0 : 0.0;
      pool.records.push_back(rec);
    }
  };
  // Bucket "1,0" only ever sees ids {1,3} in slot 0 and {0,2} in slot 1.
  add({0, 1}, 0.6, -0.2, 4);
  add({0, 3}, 0.1, 0.3, 4);
  add({1, 0}, -0.4, 0.2, 3);
  add({1, 2}, 0.9, -0.5, 3);
  add({3, 2}, 0.2, 0.1, 3);
  add({3, 0}, -0.1, 0.4, 3);
  pool.manifest.m = t;
  pool.rebuild_occurrence_index();

  RidgeOptions opts;
  opts.lambda = 1e-4;
  opts.bucket_threshold = 10;
  DatamodelSuite suite = fit_suite(pool, opts);
  ASSERT_TRUE(suite.bucket_fitted("1,0"));  // 12 records
  EXPECT_FALSE(suite.bucket_fitted("0,1"));  // 8 records, below threshold

  for (int d = 0; d < 2; ++d) {
    const Datamodel& bucket = suite.model_for("1,0", d);
    const Datamodel& shared = suite.phase1[static_cast<size_t>(d)];
    // No occurrences inside the bucket: exact carry-over.
    EXPECT_EQ(bucket.w(0, 0), shared.w(0, 0));
    EXPECT_EQ(bucket.w(2, 0), shared.w(2, 0));
    EXPECT_EQ(bucket.w(1, 1), shared.w(1, 1));
    EXPECT_EQ(bucket.w(3, 1), shared.w(3, 1));
    // Observed features move away from the shared fit.
    EXPECT_NE(bucket.w(1, 0), shared.w(1, 0));
    EXPECT_NE(bucket.w(0, 1), shared.w(0, 1));
  }
}

TEST(SuiteTest, PatternRoutingBeatsTheSharedFitWhenWeightsArePatternBound) {
  Dataset ds = icsel_test::tiny_dataset(16, 3, 1, 2, 2);  // n=32
  SyntheticOracleSpec spec = icsel_test::tiny_oracle(ds, 13, 0.0);
  Rng rng(99);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (auto pat : {std::vector<int>{0, 1}, std::vector<int>{1, 0},
                   std::vector<int>{0, 0}, std::vector<int>{1, 1}}) {
    SyntheticOracleSpec::PatternWeights ov;
    ov.pattern = pat;
    ov.weights.resize(spec.weights.size());
    for (auto& w : ov.weights) w = u(rng);
    ov.bias = u(rng);
    spec.pattern_overrides.push_back(ov);
  }
  SyntheticBackend backend(spec, &ds);
  PromptPool pool = collect_pool(ds, backend, 600, 6, 10);

  RidgeOptions opts;
  opts.lambda = 1e-8;
  opts.bucket_threshold = 50;
  DatamodelSuite suite = fit_suite(pool, opts);
  for (const auto& [key, size] : suite.bucket_sizes)
    ASSERT_TRUE(suite.bucket_fitted(key)) << key << " too small (" << size << ")";

  auto heldout_prompts = sample_heldout_pool(ds, 2, 60, pool, 12);
  SampleOptions hopts;
  hopts.k = 2;
  hopts.m = 60;
  hopts.seed = 12;
  hopts.min_occurrence = 0;
  PromptPool heldout = collect(heldout_prompts, ds, backend, hopts);

  HeldoutReport routed = heldout_eval(suite, heldout, true);
  HeldoutReport shared = heldout_eval(suite, heldout, false);
  EXPECT_LT(routed.mean_l1, shared.mean_l1);
  EXPECT_LT(routed.mean_l1, 1e-6);  // per-pattern linear truth, noiseless
}

DatamodelSuite hand_suite() {
  DatamodelSuite suite;
  suite.n_tr = 3;
  suite.k = 2;
  suite.dev_count = 2;
  auto model = [](std::vector<double> w) {
    Datamodel dm;
    dm.n_tr = 3;
    dm.k = 2;
    dm.weights = std::move(w);
    dm.bias = 0.0;
    return dm;
  };
  suite.phase1 = {model({1, -1, 2, 3, -5, 0}), model({-1, -1, 1, -1, 1, 1})};
  suite.phase2["0,1"] = {model({1, 1, 1, 1, 1, 1}),
                         model({-1, -1, -1, -1, -1, -1})};
  suite.bucket_sizes["0,1"] = 60;
  suite.bucket_sizes["1,0"] = 10;  // unfitted: routes to phase1
  return suite;
}

TEST(DmScoreTest, CountsPositiveWeightsAcrossEffectiveModelSets) {
  DatamodelSuite suite = hand_suite();
  ScoreVector sv = datamodels_scores(suite);
  EXPECT_EQ(sv.method, "datamodels");
  // Bucket "0,1" contributes its own models, bucket "1,0" the shared ones.
  EXPECT_EQ(sv.scores, (std::vector<double>{3.0, 5.0, 4.0}));
  EXPECT_EQ(sv.support, (std::vector<long>{8, 8, 8}));
  for (double s : sv.scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 8.0);
  }
}

TEST(DmScoreTest, SharedOnlyModeIgnoresBuckets) {
  DatamodelSuite suite = hand_suite();
  DmScoreOptions opts;
  opts.per_bucket = false;
  ScoreVector sv = datamodels_scores(suite, opts);
  EXPECT_EQ(sv.scores, (std::vector<double>{1.0, 3.0, 2.0}));
  EXPECT_EQ(sv.support, (std::vector<long>{4, 4, 4}));
}

TEST(DmScoreTest, AveragingModeReportsMeanWeights) {
  DatamodelSuite suite = hand_suite();
  DmScoreOptions opts;
  opts.count_positive = false;
  ScoreVector sv = datamodels_scores(suite, opts);
  EXPECT_EQ(sv.method, "datamodels-avg");
  EXPECT_DOUBLE_EQ(sv.scores[0], -2.0 / 8.0);
  EXPECT_DOUBLE_EQ(sv.scores[1], 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(sv.scores[2], -3.0 / 8.0);
}

TEST(DmScoreTest, FittedSuitesStayInsideTheCountBounds) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Dataset ds = icsel_test::tiny_dataset(3, 2, 1, 2, 2);
    SyntheticBackend backend(icsel_test::tiny_oracle(ds, seed, 0.3));
    PromptPool pool = collect_pool(ds, backend, 80, seed, 4);
    RidgeOptions opts;
    opts.bucket_threshold = 15;
    DatamodelSuite suite = fit_suite(pool, opts);
    ScoreVector sv = datamodels_scores(suite);
    double cap = static_cast<double>(suite.bucket_sizes.size()) *
                 suite.dev_count * suite.k;
    for (int i = 0; i < sv.size(); ++i) {
      EXPECT_GE(sv.scores[static_cast<size_t>(i)], 0.0);
      EXPECT_LE(sv.scores[static_cast<size_t>(i)], cap);
      EXPECT_EQ(sv.support[static_cast<size_t>(i)], static_cast<long>(cap));
    }
  }
}

TEST(EmbeddingTest, ConcatenatesWeightRowsAcrossDevModels) {
  DatamodelSuite suite = hand_suite();
  auto emb = datamodel_embeddings(suite);
  ASSERT_EQ(emb.size(), 3u);
  EXPECT_EQ(emb[0], (std::vector<double>{1, -1, -1, -1}));
  EXPECT_EQ(emb[1], (std::vector<double>{2, 3, 1, -1}));
  EXPECT_EQ(emb[2], (std::vector<double>{-5, 0, 1, 1}));
}

TEST(ProjectionTest, CollinearEmbeddingsCollapseToOneAxis) {
  std::vector<std::vector<double>> emb = {
      {0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};
  Projection2D proj = project_2d(emb);
  ASSERT_EQ(proj.points.size(), 4u);
  for (const auto& pt : proj.points) EXPECT_NEAR(pt[1], 0.0, 1e-12);
  // Sign pinning keeps the dominant loading positive, so x increases.
  for (size_t i = 1; i < proj.points.size(); ++i)
    EXPECT_GT(proj.points[i][0], proj.points[i - 1][0]);

  Projection2D again = project_2d(emb);
  for (size_t i = 0; i < proj.points.size(); ++i) {
    EXPECT_DOUBLE_EQ(proj.points[i][0], again.points[i][0]);
    EXPECT_DOUBLE_EQ(proj.points[i][1], again.points[i][1]);
  }
}

TEST(SuiteIoTest, SaveLoadKeepsEveryWeightBitIdentical) {
  TempDir dir("suite");
  Dataset ds = icsel_test::tiny_dataset(3, 2, 1, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 21, 0.2));
  PromptPool pool = collect_pool(ds, backend, 90, 7, 5);
  RidgeOptions opts;
  opts.bucket_threshold = 20;
  DatamodelSuite suite = fit_suite(pool, opts);

  save_suite(suite, dir.str("suite"));
  DatamodelSuite back = load_suite(dir.str("suite"));
  EXPECT_EQ(back.n_tr, suite.n_tr);
  EXPECT_EQ(back.k, suite.k);
  EXPECT_EQ(back.dev_count, suite.dev_count);
  EXPECT_EQ(back.bucket_sizes, suite.bucket_sizes);
  ASSERT_EQ(back.phase1.size(), suite.phase1.size());
  for (size_t d = 0; d < suite.phase1.size(); ++d) {
    EXPECT_EQ(back.phase1[d].weights, suite.phase1[d].weights);
    EXPECT_EQ(back.phase1[d].bias, suite.phase1[d].bias);
  }
  ASSERT_EQ(back.phase2.size(), suite.phase2.size());
  for (const auto& [key, models] : suite.phase2) {
    ASSERT_TRUE(back.phase2.count(key));
    for (size_t d = 0; d < models.size(); ++d)
      EXPECT_EQ(back.phase2.at(key)[d].weights, models[d].weights);
  }
}

TEST(HeldoutReportTest, FlagsModelsWithoutVariance) {
  DatamodelSuite suite;
  suite.n_tr = 2;
  suite.k = 1;
  suite.dev_count = 1;
  Datamodel dm;
  dm.n_tr = 2;
  dm.k = 1;
  dm.weights = {0.0, 0.0};
  dm.bias = 0.5;
  suite.phase1 = {dm};

  Dataset ds = icsel_test::tiny_dataset(1, 1, 1, 2, 1);
  PromptPool heldout;
  heldout.manifest.n_tr = 2;
  heldout.manifest.k = 1;
  heldout.manifest.dev_size = 1;
  heldout.manifest.m = 2;
  for (int i = 0; i < 2; ++i) {
    PromptRecord rec;
    rec.prompt_index = i;
    rec.prompt = make_prompt({i}, ds);
    rec.dev_outcomes = {0.25 * (i + 1)};
    rec.dev_accuracy = 1.0;
    heldout.records.push_back(rec);
  }
  heldout.rebuild_occurrence_index();

  HeldoutReport rep = heldout_eval(suite, heldout);
  EXPECT_EQ(rep.n_models, 1);
  EXPECT_EQ(rep.n_excluded, 1);  // constant predictions have no correlation
  EXPECT_NEAR(rep.mean_l1, (0.25 + 0.0) / 2.0, 1e-12);
}

}  // namespace
