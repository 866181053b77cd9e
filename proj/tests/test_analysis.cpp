#include <gtest/gtest.h>

#include "icsel/icsel.hpp"
#include "test_util.hpp"

using namespace icsel;
using icsel_test::TempDir;

namespace {

// Dataset whose train inputs are chosen token strings, for exact diversity
// arithmetic.
Dataset worded_dataset(const std::vector<std::string>& texts) {
  Dataset ds = icsel_test::tiny_dataset(
      static_cast<int>(texts.size() + 1) / 2, 1, 1, 2, 2);
  ds.train.resize(texts.size());
  for (size_t i = 0; i < texts.size(); ++i)
    ds.train[i].input = {{"text", texts[i]}};
  return ds;
}

TEST(DivITest, TypeTokenRatioExactOnHandInputs) {
  Dataset ds = worded_dataset({"a", "a", "a", "a b"});
  EXPECT_DOUBLE_EQ(div_i({0, 1, 2}, ds), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(div_i({0}, ds), 1.0);
  EXPECT_DOUBLE_EQ(div_i({0, 3}, ds), 2.0 / 3.0);
  EXPECT_THROW(div_i({}, ds), Error);
}

TEST(DivFTest, MeanPairwiseDistanceExactOnCollinearPoints) {
  std::vector<std::vector<double>> emb = {{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}};
  EXPECT_DOUBLE_EQ(div_f({0, 1, 2}, emb), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(div_f({0, 2}, emb), 2.0);
  EXPECT_DOUBLE_EQ(div_f({1}, emb), 0.0);
  EXPECT_DOUBLE_EQ(div_f({}, emb), 0.0);

  std::vector<std::vector<double>> ragged = {{0.0, 0.0}, {1.0}};
  EXPECT_THROW(div_f({0, 1}, ragged), Error);
}

TEST(DivITest, AppendingADuplicateNeverRaisesTheRatio) {
  Rng rng(41);
  std::vector<std::string> vocab = {"red", "blue", "green", "cold", "warm",
                                    "fast", "slow", "old", "new", "dry"};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> texts;
    int n = 4 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      int words = 1 + static_cast<int>(rng() % 4);
      std::vector<std::string> ws;
      for (int w = 0; w < words; ++w) ws.push_back(vocab[rng() % vocab.size()]);
      texts.push_back(join(ws, " "));
    }
    Dataset ds = worded_dataset(texts);
    std::vector<int> subset;
    for (int i = 0; i < n; ++i)
      if (rng() % 2 == 0) subset.push_back(i);
    if (subset.empty()) subset.push_back(0);
    double before = div_i(subset, ds);
    std::vector<int> with_dup = subset;
    with_dup.push_back(subset[rng() % subset.size()]);
    EXPECT_LE(div_i(with_dup, ds), before);
  }
}

TEST(Summary5Test, QuartilesByLinearInterpolation) {
  Summary5 s = Summary5::of({4.0, 1.0, 3.0, 2.0});
  EXPECT_DOUBLE_EQ(s.min, 1.0);
  EXPECT_DOUBLE_EQ(s.q1, 1.75);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.q3, 3.25);
  EXPECT_DOUBLE_EQ(s.max, 4.0);
  EXPECT_THROW(Summary5::of({}), Error);

  Summary5 one = Summary5::of({7.0});
  EXPECT_DOUBLE_EQ(one.min, 7.0);
  EXPECT_DOUBLE_EQ(one.max, 7.0);
  EXPECT_DOUBLE_EQ(one.median, 7.0);
}

TEST(DiversityBaselineTest, DrawsTheRequestedNumberOfBalancedSubsets) {
  Dataset ds = icsel_test::tiny_dataset(6, 1, 1, 2, 2);
  DiversityBaseline base = diversity_baseline(ds, 4, 25, 13);
  EXPECT_EQ(base.n_random, 25);
  EXPECT_FALSE(base.div_f.has_value());
  EXPECT_GT(base.div_i.min, 0.0);
  EXPECT_LE(base.div_i.max, 1.0);
  EXPECT_LE(base.div_i.q1, base.div_i.median);
  EXPECT_LE(base.div_i.median, base.div_i.q3);
  EXPECT_THROW(diversity_baseline(ds, 4, 0, 13), ConfigError);

  std::vector<std::vector<double>> emb(ds.n_train(),
                                       std::vector<double>{0.0, 0.0});
  for (size_t i = 0; i < emb.size(); ++i) emb[i][0] = static_cast<double>(i);
  DiversityBaseline with_f = diversity_baseline(ds, 4, 25, 13, &emb);
  ASSERT_TRUE(with_f.div_f.has_value());
  EXPECT_GT(with_f.div_f->min, 0.0);
}

TEST(DiversityReportTest, BaselineSizeRoundsDownToAClassMultiple) {
  Dataset ds = icsel_test::tiny_dataset(6, 1, 1, 2, 2);
  SubsetSpec subset;
  subset.method = "top-condacc";
  subset.example_ids = {0, 1, 2, 4, 6};
  subset.e = 5;
  DiversityReport rep = diversity_report(subset, ds, 10, 3);
  EXPECT_EQ(rep.baseline_e, 4);
  EXPECT_EQ(rep.method, "top-condacc");
  EXPECT_DOUBLE_EQ(rep.div_i, div_i(subset.example_ids, ds));
  EXPECT_FALSE(rep.div_f.has_value());

  subset.example_ids = {0};
  subset.e = 1;
  DiversityReport tiny = diversity_report(subset, ds, 10, 3);
  EXPECT_EQ(tiny.baseline_e, 2);
}

TEST(ProfileTest, JoinsLengthsPerplexityAndScoresById) {
  Dataset ds = make_oracle_dataset(3, 1, 1, 2, 2, 77);
  SyntheticOracleSpec spec = icsel_test::tiny_oracle(ds, 7, 0.0);
  spec.ppl_jitter = 0.5;
  SyntheticBackend backend(spec);

  ScoreVector scores;
  scores.method = "condacc";
  scores.scores.resize(static_cast<size_t>(ds.n_train()));
  for (size_t i = 0; i < scores.scores.size(); ++i)
    scores.scores[i] = 0.1 * static_cast<double>(i);

  ProfileResult res = profile_examples(ds, backend, scores);
  ASSERT_EQ(res.profiles.size(), static_cast<size_t>(ds.n_train()));
  for (const auto& p : res.profiles) {
    const TrainingExample& ex = ds.train_by_id(p.id);
    EXPECT_EQ(p.token_length, backend.count_tokens(render_example(ex, ds)));
    ASSERT_TRUE(p.perplexity.has_value());
    EXPECT_DOUBLE_EQ(*p.perplexity, backend.perplexity(input_text(ex)));
    EXPECT_DOUBLE_EQ(p.score, 0.1 * static_cast<double>(p.id));
  }
  ASSERT_TRUE(res.r_length.has_value());
  ASSERT_TRUE(res.r_perplexity.has_value());

  ScoreVector wrong = scores;
  wrong.scores.pop_back();
  EXPECT_THROW(profile_examples(ds, backend, wrong), Error);
}

TEST(ProfileTest, ConstantLengthsGiveNoCorrelation) {
  Dataset ds = icsel_test::tiny_dataset(3, 1, 1, 2, 2);
  SyntheticBackend backend(icsel_test::tiny_oracle(ds));
  ScoreVector scores;
  scores.method = "condacc";
  scores.scores = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  ProfileResult res = profile_examples(ds, backend, scores);
  EXPECT_FALSE(res.r_length.has_value());
}

class NoPerplexityBackend : public SyntheticBackend {
 public:
  using SyntheticBackend::SyntheticBackend;
  double perplexity(const std::string&) override {
    throw UnsupportedError("no perplexity here");
  }
};

TEST(ProfileTest, BackendsWithoutPerplexityDegradeCleanly) {
  Dataset ds = icsel_test::tiny_dataset(3, 1, 1, 2, 2);
  NoPerplexityBackend backend(icsel_test::tiny_oracle(ds));
  ScoreVector scores;
  scores.method = "condacc";
  scores.scores = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  ProfileResult res = profile_examples(ds, backend, scores);
  ASSERT_EQ(res.profiles.size(), 6u);
  for (const auto& p : res.profiles) EXPECT_FALSE(p.perplexity.has_value());
  EXPECT_FALSE(res.r_perplexity.has_value());
}

TEST(ProfileTest, CsvSerializationIsExact) {
  TempDir dir("profile");
  ProfileResult res;
  res.profiles.push_back({0, 4, std::nullopt, 0.5});
  res.profiles.push_back({1, 3, 2.5, -0.25});
  save_profile_csv(res, dir.str("p.csv"));
  EXPECT_EQ(read_text_file(dir.str("p.csv")),
            "id,token_length,perplexity,score\n"
            "0,4,,0.5\n"
            "1,3,2.5,-0.25\n");
}

TEST(EmbeddingIoTest, RoundTripsAndRejectsSparseIds) {
  TempDir dir("emb");
  std::vector<std::vector<double>> emb = {{0.25, -1.5}, {1.0 / 3.0, 2.0}};
  save_embeddings(emb, dir.str("e.jsonl"));
  EXPECT_EQ(load_embeddings(dir.str("e.jsonl")), emb);

  write_text_file(dir.str("sparse.jsonl"),
                  "{\"id\":0,\"vector\":[1.0]}\n{\"id\":2,\"vector\":[2.0]}\n");
  EXPECT_THROW(load_embeddings(dir.str("sparse.jsonl")), LoadError);
  write_text_file(dir.str("empty.jsonl"), "");
  EXPECT_THROW(load_embeddings(dir.str("empty.jsonl")), LoadError);
}

TEST(NumStrTest, ShortestRoundTripFormatting) {
  EXPECT_EQ(detail::num_str(0.1), "0.1");
  EXPECT_EQ(detail::num_str(2.0), "2.0");
  EXPECT_EQ(detail::num_str(-0.25), "-0.25");
  double third = 1.0 / 3.0;
  EXPECT_EQ(std::stod(detail::num_str(third)), third);
}

}  // namespace
