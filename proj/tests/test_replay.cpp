#include <gtest/gtest.h>

#include "icsel/icsel.hpp"
#include "test_util.hpp"

using namespace icsel;
using icsel_test::TempDir;

namespace {

TEST(RequestHashTest, FieldBoundariesCannotBeForged) {
  // Moving characters across field boundaries must change the hash, or two
  // different requests would collide in the store.
  EXPECT_NE(request_hash("scores", "m", "ab", {}),
            request_hash("scores", "ma", "b", {}));
  EXPECT_NE(request_hash("scores", "m", "a", {"b", "c"}),
            request_hash("scores", "m", "a", {"bc"}));
  EXPECT_NE(request_hash("scores", "m", "a", {"b"}),
            request_hash("scores", "m", "ab", {}));
  EXPECT_NE(request_hash("ppl", "m", "a", {}),
            request_hash("tokens", "m", "a", {}));
  EXPECT_EQ(request_hash("scores", "m", "a", {"x", "y"}),
            request_hash("scores", "m", "a", {"x", "y"}));
}

TEST(ReplayStoreTest, RecordsLookUpAndPersists) {
  TempDir dir("store");
  std::string path = dir.str("cache.jsonl");
  uint64_t h1 = request_hash("scores", "m", "p1", {"A", "B"});
  uint64_t h2 = request_hash("ppl", "m", "text", {});
  {
    ReplayStore store(path);
    EXPECT_EQ(store.size(), 0u);
    EXPECT_FALSE(store.lookup(h1).has_value());
    store.append(h1, "scores", {0.0, 1.5});
    store.append(h2, "ppl", {42.0});
    ASSERT_TRUE(store.lookup(h1).has_value());
    EXPECT_EQ(*store.lookup(h1), (std::vector<double>{0.0, 1.5}));
  }
  ReplayStore reopened(path);
  EXPECT_EQ(reopened.size(), 2u);
  EXPECT_EQ(*reopened.lookup(h2), (std::vector<double>{42.0}));
}

TEST(ReplayStoreTest, DuplicateAppendsAreNoOpsConflictsAreErrors) {
  TempDir dir("store");
  std::string path = dir.str("cache.jsonl");
  uint64_t h = request_hash("scores", "m", "p", {"A"});
  {
    ReplayStore store(path);
    store.append(h, "scores", {1.0});
    store.append(h, "scores", {1.0});
    EXPECT_EQ(store.size(), 1u);
    EXPECT_THROW(store.append(h, "scores", {2.0}), Error);
  }
  // Two lines with the same hash but different values poison the file.
  std::string line = json{{"hash", hash_hex(h)},
                          {"kind", "scores"},
                          {"values", std::vector<double>{3.0}}}.dump();
  write_text_file(dir.str("bad.jsonl"),
                  json{{"hash", hash_hex(h)},
                       {"kind", "scores"},
                       {"values", std::vector<double>{1.0}}}.dump() +
                      "\n" + line + "\n");
  EXPECT_THROW((ReplayStore{dir.str("bad.jsonl")}), LoadError);
}

TEST(ReplayBackendTest, MissesNameTheStoreKindAndHash) {
  TempDir dir("replay");
  auto store = std::make_shared<ReplayStore>(dir.str("cache.jsonl"));
  ReplayBackend backend(store, "oracle-1");
  EXPECT_EQ(backend.id(), "replay:oracle-1");

  RenderedPrompt rp;
  rp.text = "In: t0\nOut:";
  rp.label_candidates = {"A", "B"};
  uint64_t h = request_hash("scores", "oracle-1", rp.text, rp.label_candidates);
  try {
    backend.score_labels(rp);
    FAIL() << "expected CacheMissError";
  } catch (const CacheMissError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find(dir.str("cache.jsonl")), std::string::npos);
    EXPECT_NE(msg.find("scores"), std::string::npos);
    EXPECT_NE(msg.find(hash_hex(h)), std::string::npos);
  }

  store->append(h, "scores", {0.0, 2.25});
  EXPECT_EQ(backend.score_labels(rp).scores, (std::vector<double>{0.0, 2.25}));
  EXPECT_THROW(backend.perplexity("unseen"), CacheMissError);
  EXPECT_THROW(backend.count_tokens("unseen"), CacheMissError);

  store->append(request_hash("tokens", "oracle-1", "a b c", {}), "tokens", {3.0});
  EXPECT_EQ(backend.count_tokens("a b c"), 3);
}

TEST(RecordingBackendTest, WritesThroughOnceThenServesFromTheStore) {
  TempDir dir("record");
  Dataset ds = icsel_test::tiny_dataset(3, 1, 1, 2, 2);
  SyntheticBackend oracle(icsel_test::tiny_oracle(ds, 19, 0.3));
  auto store = std::make_shared<ReplayStore>(dir.str("cache.jsonl"));
  RecordingBackend rec(store, oracle);
  EXPECT_EQ(rec.id(), oracle.id());

  RenderedPrompt rp = render({0, 1}, ds.dev[0], ds);
  LabelScores first = rec.score_labels(rp);
  EXPECT_EQ(rec.inner_calls(), 1);
  LabelScores again = rec.score_labels(rp);
  EXPECT_EQ(rec.inner_calls(), 1);
  EXPECT_EQ(first.scores, again.scores);
  EXPECT_EQ(first.scores, oracle.score_labels(rp).scores);

  EXPECT_DOUBLE_EQ(rec.perplexity("t0"), oracle.perplexity("t0"));
  EXPECT_EQ(rec.count_tokens("a b"), 2);
  EXPECT_EQ(rec.inner_calls(), 3);
  rec.perplexity("t0");
  rec.count_tokens("a b");
  EXPECT_EQ(rec.inner_calls(), 3);
}

TEST(RecordingBackendTest, ReplayedPoolNeverTouchesTheModel) {
  TempDir dir("roundtrip");
  Dataset ds = icsel_test::tiny_dataset(4, 2, 1, 2, 2);
  SyntheticBackend oracle(icsel_test::tiny_oracle(ds, 23, 0.2));

  SampleOptions opts;
  opts.m = 40;
  opts.k = 2;
  opts.min_occurrence = 0;
  opts.seed = 11;
  std::vector<Prompt> prompts = sample_pool(ds, opts);

  PromptPool recorded = [&] {
    auto store = std::make_shared<ReplayStore>(dir.str("cache.jsonl"));
    RecordingBackend rec(store, oracle);
    PromptPool pool = collect(prompts, ds, rec, opts);
    EXPECT_GT(rec.inner_calls(), 0);
    return pool;
  }();

  // Same collection against the frozen store: identical records, zero model
  // calls, even though the replay backend has a different id.
  auto store = std::make_shared<ReplayStore>(dir.str("cache.jsonl"));
  ReplayBackend replay(store, oracle.id());
  PromptPool replayed = collect(prompts, ds, replay, opts);
  ASSERT_EQ(replayed.records.size(), recorded.records.size());
  for (size_t r = 0; r < recorded.records.size(); ++r) {
    EXPECT_EQ(replayed.records[r].prompt.example_ids,
              recorded.records[r].prompt.example_ids);
    EXPECT_EQ(replayed.records[r].dev_outcomes, recorded.records[r].dev_outcomes);
  }
}

}  // namespace
