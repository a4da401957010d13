#include <gtest/gtest.h>

#include <fstream>

#include "temp_dir.hpp"
#include "toxtraj/corpus.hpp"
#include "toxtraj/error.hpp"

using namespace toxtraj;
using testing_support::TempDir;

namespace {

PostRecord post(std::string id, std::string user, Timestamp t, std::optional<int> raw = {}) {
  PostRecord p;
  p.post_id = std::move(id);
  p.user_id = std::move(user);
  p.timestamp = t;
  p.toxicity_raw = raw;
  if (raw) p.toxicity = normalize_toxicity(*raw);
  return p;
}

}  // namespace

TEST(Window, DefaultsAndIso) {
  const auto w = study_window();
  EXPECT_EQ(w.t0, parse_iso8601("2023-04-17T00:00:00Z"));
  EXPECT_EQ(w.t_end, parse_iso8601("2023-10-27T23:59:00Z"));
  EXPECT_EQ(w.n_daily_grid, 194);
  EXPECT_EQ(w.n_weeks(), 27);
  EXPECT_DOUBLE_EQ(w.grid_time(193), 1.0);
  EXPECT_DOUBLE_EQ(w.grid_time(1), 1.0 / 193.0);
  EXPECT_EQ(format_iso8601(w.t0), "2023-04-17T00:00:00Z");
  EXPECT_THROW(parse_iso8601("2023-13-01"), InvalidArgument);
  EXPECT_THROW(study_window({.t0 = 10, .t_end = 5}), InvalidArgument);
}

TEST(Toxicity, LinearMap) {
  EXPECT_EQ(normalize_toxicity(1), 0.0);
  EXPECT_EQ(normalize_toxicity(2), 25.0);
  EXPECT_EQ(normalize_toxicity(3), 50.0);
  EXPECT_EQ(normalize_toxicity(5), 100.0);
  EXPECT_THROW(normalize_toxicity(0), InvalidArgument);
  EXPECT_THROW(normalize_toxicity(6), InvalidArgument);
}

TEST(Corpus, WindowBoundsAreInclusive) {
  const auto w = study_window();
  std::vector<PostRecord> posts{post("a", "u", w.t0), post("b", "u", w.t_end), post("c", "u", w.t0 - 1),
                                post("d", "u", w.t_end + 1)};
  const auto c = assemble_corpus(posts, std::nullopt, w);
  ASSERT_EQ(c.posts().size(), 2u);
  EXPECT_EQ(c.dropped_outside_window(), 2u);
  EXPECT_TRUE(c.find_post("a"));
  EXPECT_FALSE(c.find_post("c"));
}

TEST(Corpus, DuplicateIdsRejected) {
  EXPECT_THROW(assemble_corpus({post("a", "u", study_window().t0), post("a", "v", study_window().t0)}, std::nullopt,
                               study_window()),
               FormatError);
}

TEST(Corpus, EmbeddingsFollowKeptPosts) {
  const auto w = study_window();
  EmbeddingMatrix e;
  e.values = Matrix(3, 2);
  e.values.values = {1, 2, 3, 4, 5, 6};
  e.row_ids = {"late", "x", "early"};
  const auto c = assemble_corpus({post("early", "u", w.t0 + 5), post("x", "u", w.t0 - 100), post("late", "u", w.t0 + 9)},
                                 e, w);
  ASSERT_TRUE(c.embeddings());
  ASSERT_EQ(c.embeddings()->n(), 2u);
  const auto& early = c.posts()[*c.find_post("early")];
  EXPECT_EQ(c.embeddings()->row(*early.embedding_row)[0], 5.0);
  EmbeddingMatrix bad = e;
  bad.row_ids[1] = "ghost";
  EXPECT_THROW(assemble_corpus({post("early", "u", w.t0), post("late", "u", w.t0)}, bad, w), FormatError);
}

TEST(Corpus, RoundTripsThroughDisk) {
  TempDir dir("corpus");
  const auto w = study_window();
  std::vector<PostRecord> posts{post("p1", "u1", w.t0 + 1, 3), post("p2", "u2", w.t0 + 2, 5)};
  posts[0].text = "hello\nworld";
  posts[1].toxicity = 100.0;
  EmbeddingMatrix e;
  e.values = Matrix(2, 3);
  e.values.values = {0.25, -1, 2, 3, 4.5, 5};
  e.row_ids = {"p1", "p2"};
  const auto c = assemble_corpus(posts, e, w);
  save_corpus(c, dir.path());
  EXPECT_EQ(load_corpus_dir(dir.path()), c);
}

TEST(Corpus, RejectsMalformedRecords) {
  TempDir dir("badposts");
  const auto path = dir / "posts.jsonl";
  std::ofstream(path) << R"({"post_id":"a","user_id":"u"})" << '\n';
  EXPECT_THROW(read_posts(path), FormatError);
  std::ofstream(path) << R"({"post_id":"a","user_id":"u","timestamp":5,"toxicity":140})" << '\n';
  EXPECT_THROW(read_posts(path), FormatError);
  std::ofstream(path) << R"({"post_id":"a","user_id":"u","timestamp":5,"toxicity_raw":5,"toxicity":20})" << '\n';
  EXPECT_THROW(read_posts(path), FormatError);
}

TEST(Embeddings, FormatErrors) {
  TempDir dir("emb");
  const auto path = dir / "e.emb";
  std::ofstream(path) << "NOPE";
  EXPECT_THROW(read_embeddings(path), FormatError);
  EmbeddingMatrix e;
  e.values = Matrix(2, 1);
  e.row_ids = {"a", "a"};
  write_embeddings(path, e);
  EXPECT_THROW(read_embeddings(path), FormatError);
}

TEST(ToxicityExchange, RequestsAndResponses) {
  TempDir dir("tox");
  std::vector<PostRecord> posts{post("a", "u", 1), post("b", "u", 2), post("c", "u", 3, 2)};
  posts[0].text = "first";
  posts[2].text = "already rated";
  write_toxicity_requests(dir / "req.jsonl", posts);
  std::ifstream in(dir / "req.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_NE(line.find("first"), std::string::npos);
  }
  EXPECT_EQ(n, 1);
  EXPECT_NE(std::string(kToxicityPrompt).find("{text}"), std::string::npos);

  std::ofstream(dir / "resp.jsonl") << R"({"post_id":"a","toxicity_raw":4})" << '\n';
  apply_toxicity_responses(posts, dir / "resp.jsonl");
  EXPECT_EQ(posts[0].toxicity, 75.0);
  std::ofstream(dir / "resp.jsonl") << R"({"post_id":"zz","toxicity_raw":4})" << '\n';
  EXPECT_THROW(apply_toxicity_responses(posts, dir / "resp.jsonl"), FormatError);
}
