#include <gtest/gtest.h>

#include "icsel/icsel.hpp"
#include "test_util.hpp"

using namespace icsel;
using icsel_test::TempDir;

namespace {

TEST(SoftmaxTest, NormalizesAndSurvivesLargeInputs) {
  std::vector<double> p = softmax({0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);

  p = softmax({1000.0, 1000.0, 999.0});
  double z = p[0] + p[1] + p[2];
  EXPECT_NEAR(z, 1.0, 1e-12);
  EXPECT_GT(p[0], p[2]);
  EXPECT_THROW(softmax({}), Error);
}

TEST(CalibratorTest, UniformPriorLeavesArgmaxUnchanged) {
  Calibrator cal{{0.5, 0.5}};
  Rng rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    LabelScores s{{u(rng), u(rng)}};
    EXPECT_EQ(calibrated_predict(s, cal), argmax_label(s));
  }
}

TEST(CalibratorTest, SkewedPriorFlipsTheBiasedWinner) {
  // Raw scores prefer class 0, but the prompt assigns class 0 a 0.9 prior:
  // dividing it out hands the prediction to class 1.
  Calibrator cal{{0.9, 0.1}};
  LabelScores s{{0.6, 0.4}};
  EXPECT_EQ(argmax_label(s), 0);
  EXPECT_EQ(calibrated_predict(s, cal), 1);
}

TEST(CalibratorTest, TiedRatiosKeepTheLowestClass) {
  Calibrator cal{{0.5, 0.5}};
  LabelScores s{{1.0, 1.0}};
  EXPECT_EQ(calibrated_predict(s, cal), 0);
  Calibrator mism{{0.3, 0.3, 0.4}};
  EXPECT_THROW(calibrated_predict(s, mism), Error);
}

TEST(CalibratorTest, FitAveragesProbeDistributions) {
  Dataset ds = icsel_test::tiny_dataset(2, 1, 1, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 3, 0.0));
  Calibrator cal = fit_calibrator({0, 1}, ds, backend);
  ASSERT_EQ(cal.q.size(), 2u);
  EXPECT_NEAR(cal.q[0] + cal.q[1], 1.0, 1e-12);

  double q0 = 0.0, q1 = 0.0;
  for (const auto& probe : calibration_probes()) {
    auto p = softmax(backend.score_labels(render_probe({0, 1}, probe, ds)).scores);
    q0 += p[0];
    q1 += p[1];
  }
  EXPECT_DOUBLE_EQ(cal.q[0], q0 / 3.0);
  EXPECT_DOUBLE_EQ(cal.q[1], q1 / 3.0);
}

TEST(EvaluateSubsetTest, ReportMatchesIndependentRescoring) {
  Dataset ds = icsel_test::tiny_dataset(4, 2, 4, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 17, 0.2));
  SubsetSpec subset;
  subset.method = "random";
  subset.example_ids = {0, 1, 2, 5};
  subset.e = 4;

  EvalOptions opts;
  opts.k = 2;
  opts.n_prompts = 25;
  opts.seed = 3;
  EvalReport rep = evaluate_subset(subset, ds, backend, opts);

  ASSERT_EQ(rep.n_prompts, 25);
  ASSERT_EQ(rep.per_prompt.size(), 25u);
  std::vector<double> accs;
  for (const auto& po : rep.per_prompt) {
    long correct = 0;
    for (const auto& q : ds.test)
      if (is_correct(backend.score_labels(render(po.prompt.example_ids, q, ds)),
                     q.label))
        ++correct;
    double acc = static_cast<double>(correct) / static_cast<double>(ds.test.size());
    EXPECT_DOUBLE_EQ(po.accuracy, acc);
    accs.push_back(acc);
  }
  EXPECT_DOUBLE_EQ(rep.avg, mean_of(accs));
  EXPECT_DOUBLE_EQ(rep.std_dev, population_stddev(accs));
  EXPECT_DOUBLE_EQ(rep.min, *std::min_element(accs.begin(), accs.end()));
  EXPECT_EQ(rep.meta.protocol, "standard");
  EXPECT_EQ(rep.meta.constraint, "min-one-per-class");
}

TEST(EvaluateSubsetTest, EveryPromptCoversEveryClassUnderTheConstraint) {
  Dataset ds = icsel_test::tiny_dataset(5, 1, 2, 3, 3);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 5, 0.1));
  SubsetSpec subset;
  subset.method = "random";
  subset.example_ids = {0, 1, 2, 3, 4, 5};
  subset.e = 6;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    EvalOptions opts;
    opts.k = 3;
    opts.n_prompts = 20;
    opts.seed = seed;
    EvalReport rep = evaluate_subset(subset, ds, backend, opts);
    for (const auto& po : rep.per_prompt) {
      std::set<int> labels(po.prompt.label_pattern.begin(),
                           po.prompt.label_pattern.end());
      EXPECT_EQ(labels.size(), 3u);
    }
  }
}

TEST(EvaluateSubsetTest, PromptsComeFromTheSubsetWithDistinctOrigins) {
  Dataset ds = build_unlabeled(icsel_test::tiny_dataset(4, 1, 2, 2, 2));
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 2, 0.0), &ds);
  SubsetSpec subset;
  subset.method = "random";
  subset.example_ids = {0, 1, 4, 7, 10, 13};  // mixed gold and relabeled
  subset.e = 6;
  EvalOptions opts;
  opts.k = 2;
  opts.n_prompts = 30;
  opts.seed = 9;
  EvalReport rep = evaluate_subset(subset, ds, backend, opts);
  std::set<int> allowed(subset.example_ids.begin(), subset.example_ids.end());
  for (const auto& po : rep.per_prompt) {
    std::set<int> origins;
    for (int id : po.prompt.example_ids) {
      EXPECT_TRUE(allowed.count(id));
      origins.insert(ds.train_by_id(id).origin);
    }
    EXPECT_EQ(origins.size(), po.prompt.example_ids.size());
  }
}

TEST(EvaluateSubsetTest, SameSeedSamePromptsDifferentSeedDifferentPrompts) {
  Dataset ds = icsel_test::tiny_dataset(4, 1, 2, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 1, 0.1));
  SubsetSpec subset;
  subset.example_ids = {0, 1, 2, 3, 4, 5};
  subset.e = 6;
  EvalOptions opts;
  opts.k = 2;
  opts.n_prompts = 15;
  opts.seed = 21;
  EvalReport a = evaluate_subset(subset, ds, backend, opts);
  EvalReport b = evaluate_subset(subset, ds, backend, opts);
  EXPECT_EQ(a.to_json(), b.to_json());
  opts.seed = 22;
  EvalReport c = evaluate_subset(subset, ds, backend, opts);
  EXPECT_NE(a.to_json(), c.to_json());
}

TEST(EvaluateSubsetTest, InfeasibleSubsetsAreRejectedUpFront) {
  Dataset ds = icsel_test::tiny_dataset(4, 1, 1, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds));
  EvalOptions opts;
  opts.k = 3;
  opts.seed = 0;

  SubsetSpec small;
  small.example_ids = {0, 1};
  EXPECT_THROW(evaluate_subset(small, ds, backend, opts), ConfigError);

  // One class only: the coverage constraint can never hold.
  SubsetSpec lopsided;
  lopsided.example_ids = {0, 2, 4, 6};
  EXPECT_THROW(evaluate_subset(lopsided, ds, backend, opts), ConfigError);
  opts.min_one_per_class = false;
  EXPECT_NO_THROW(evaluate_subset(lopsided, ds, backend, opts));

  // k below the class count cannot cover all classes either.
  Dataset three = icsel_test::tiny_dataset(3, 1, 1, 3, 3);
  SyntheticBackend backend3(icsel_test::tiny_oracle(three));
  SubsetSpec full;
  full.example_ids = {0, 1, 2, 3, 4, 5};
  EvalOptions opts3;
  opts3.k = 2;
  EXPECT_THROW(evaluate_subset(full, three, backend3, opts3), ConfigError);
}

TEST(EvaluateSubsetTest, CalibrationChangesPredictionsNotPrompts) {
  Dataset ds = icsel_test::tiny_dataset(4, 1, 3, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 8, 0.4));
  SubsetSpec subset;
  subset.example_ids = {0, 1, 2, 3};
  subset.e = 4;
  EvalOptions opts;
  opts.k = 2;
  opts.n_prompts = 10;
  opts.seed = 4;
  EvalReport raw = evaluate_subset(subset, ds, backend, opts);
  opts.calibrate = true;
  EvalReport cal = evaluate_subset(subset, ds, backend, opts);
  EXPECT_TRUE(cal.meta.calibrated);
  for (size_t t = 0; t < raw.per_prompt.size(); ++t)
    EXPECT_EQ(raw.per_prompt[t].prompt.example_ids,
              cal.per_prompt[t].prompt.example_ids);
}

TEST(SingleLabelTest, EachSideUsesOnlyItsOwnLabel) {
  Dataset ds = icsel_test::tiny_dataset(5, 1, 3, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 12, 0.2));
  SubsetSpec subset;
  subset.example_ids = {0, 1, 2, 3, 4, 5, 6, 7};
  subset.e = 8;
  EvalOptions opts;
  opts.k = 3;
  opts.n_prompts = 12;
  opts.seed = 6;
  auto reports = evaluate_single_label(subset, ds, backend, opts);
  ASSERT_EQ(reports.size(), 2u);
  for (int y = 0; y < 2; ++y) {
    const EvalReport& rep = reports.at(y);
    EXPECT_EQ(rep.meta.constraint, "all-label-" + std::to_string(y));
    EXPECT_EQ(rep.meta.protocol, "single-label");
    for (const auto& po : rep.per_prompt)
      for (int label : po.prompt.label_pattern) EXPECT_EQ(label, y);
  }
}

TEST(SingleLabelTest, RejectsNonBinaryTasksAndThinSides) {
  Dataset three = icsel_test::tiny_dataset(3, 1, 1, 3, 3);
  SyntheticBackend b3(icsel_test::tiny_oracle(three));
  SubsetSpec subset;
  subset.example_ids = {0, 1, 2, 3, 4, 5};
  EvalOptions opts;
  opts.k = 2;
  EXPECT_THROW(evaluate_single_label(subset, three, b3, opts), ConfigError);

  Dataset ds = icsel_test::tiny_dataset(4, 1, 1, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds));
  SubsetSpec thin;
  thin.example_ids = {0, 1, 2, 4};  // class 1 side has one example < k
  EXPECT_THROW(evaluate_single_label(thin, ds, backend, opts), ConfigError);
}

TEST(OodTest, QueriesComeFromTheTargetButRenderingStaysSource) {
  Dataset source = icsel_test::tiny_dataset(4, 1, 2, 2, 2);
  Dataset target = icsel_test::tiny_dataset(2, 1, 5, 2, 2);
  target.name = "shifted";
  target.template_text = "X: {text} Y: {label}";  // must not be used
  SyntheticBackend backend(icsel_test::tiny_oracle(source, 9, 0.1));

  SubsetSpec subset;
  subset.method = "top-condacc";
  subset.example_ids = {0, 1, 2, 3};
  subset.e = 4;
  EvalOptions opts;
  opts.k = 2;
  opts.n_prompts = 8;
  opts.seed = 2;
  EvalReport rep = evaluate_ood(subset, source, target, backend, opts);
  EXPECT_EQ(rep.meta.dataset, "tiny->shifted");
  EXPECT_EQ(rep.meta.protocol, "ood");
  ASSERT_EQ(rep.per_prompt.size(), 8u);

  // Re-render by hand with the source template against target test queries.
  for (const auto& po : rep.per_prompt) {
    long correct = 0;
    for (const auto& q : target.test) {
      RenderedPrompt rp = render(po.prompt.example_ids, q, source);
      EXPECT_EQ(rp.text.find("X:"), std::string::npos);
      if (is_correct(backend.score_labels(rp), q.label)) ++correct;
    }
    EXPECT_DOUBLE_EQ(po.accuracy, static_cast<double>(correct) /
                                      static_cast<double>(target.test.size()));
  }

  target.verbalizers = {"A", "C"};
  EXPECT_THROW(evaluate_ood(subset, source, target, backend, opts), ConfigError);
}

TEST(MaxShotTest, BalancedPromptsOfTheRequestedLength) {
  Dataset ds = icsel_test::tiny_dataset(6, 1, 2, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 15, 0.1));
  EvalOptions opts;
  opts.n_prompts = 6;
  opts.seed = 11;
  EvalReport rep = evaluate_maxshot(ds, backend, 8, opts);
  EXPECT_EQ(rep.meta.protocol, "maxshot");
  EXPECT_EQ(rep.meta.subset_method, "full-train");
  EXPECT_EQ(rep.meta.k, 8);
  for (const auto& po : rep.per_prompt) {
    ASSERT_EQ(po.prompt.example_ids.size(), 8u);
    int count[2] = {0, 0};
    for (int label : po.prompt.label_pattern) count[label]++;
    EXPECT_EQ(count[0], 4);
    EXPECT_EQ(count[1], 4);
    std::set<int> distinct(po.prompt.example_ids.begin(),
                           po.prompt.example_ids.end());
    EXPECT_EQ(distinct.size(), 8u);
  }
  EXPECT_THROW(evaluate_maxshot(ds, backend, 7, opts), ConfigError);
  EXPECT_THROW(evaluate_maxshot(ds, backend, 14, opts), ConfigError);
}

TEST(MaxShotTest, OverflowingEveryResampleRaisesContextError) {
  Dataset ds = icsel_test::tiny_dataset(6, 1, 2, 2, 2);
  SyntheticOracleSpec spec = icsel_test::tiny_oracle(ds, 15, 0.0);
  spec.context_window_tokens = 10;  // far below any 8-shot prompt
  SyntheticBackend backend(spec);
  EvalOptions opts;
  opts.n_prompts = 2;
  opts.seed = 1;
  EXPECT_THROW(evaluate_maxshot(ds, backend, 8, opts), ContextOverflowError);
}

TEST(ReportIoTest, RoundTripsBitIdentically) {
  TempDir dir("report");
  Dataset ds = icsel_test::tiny_dataset(4, 1, 2, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds, 30, 0.3));
  SubsetSpec subset;
  subset.method = "random";
  subset.example_ids = {0, 1, 2, 3};
  subset.e = 4;
  EvalOptions opts;
  opts.k = 2;
  opts.n_prompts = 5;
  opts.seed = 8;
  EvalReport rep = evaluate_subset(subset, ds, backend, opts);
  save_report(rep, dir.str("r.json"));
  EvalReport back = load_report(dir.str("r.json"));
  EXPECT_EQ(back.to_json().dump(), rep.to_json().dump());
}

TEST(StatsTest, PopulationStdAndQuantiles) {
  std::vector<double> v{2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0};
  EXPECT_DOUBLE_EQ(mean_of(v), 5.0);
  EXPECT_DOUBLE_EQ(population_stddev(v), 2.0);

  std::vector<double> sorted{1.0, 2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(quantile_sorted(sorted, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(sorted, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(sorted, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_sorted(sorted, 0.25), 1.75);
}

}  // namespace
