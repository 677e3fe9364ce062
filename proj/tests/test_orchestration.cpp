#include <gtest/gtest.h>

#include <chrono>
#include <set>

#include "reviewgraph/orchestration.hpp"
#include "test_support.hpp"

using namespace rvg;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Usage;
}

PaperInput sample_paper(const std::string& id = "p1") {
  PaperInput p;
  p.paper_id = id;
  p.title = "Sparse Routing for Graph Transformers";
  p.body = "We propose sparse routing. Experiments on three benchmarks show gains.";
  p.attachments = {{"figure", "https://example.org/fig1.png", "Architecture overview"},
                   {"table", "", "Table 1: main results"}};
  return p;
}

RetryPolicy no_sleep(std::size_t retries = 3) {
  RetryPolicy p;
  p.max_retries = retries;
  p.backoff_base_ms = 10;
  p.sleep = nullptr;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// transcript

TEST(Transcript, SimulationFollowsProtocol) {
  MockClient client(3);
  const Transcript t = simulate_debate(sample_paper(), client, {}, no_sleep());
  ASSERT_EQ(t.stages.size(), 4u);
  EXPECT_EQ(t.stages[0].stage, Stage::InitialReview);
  EXPECT_EQ(t.stages[1].stage, Stage::AuthorRebuttal);
  EXPECT_EQ(t.stages[2].stage, Stage::ReEvaluation);
  EXPECT_EQ(t.stages[3].stage, Stage::MetaReview);
  EXPECT_EQ(t.stages[0].messages.size(), 3u);
  EXPECT_EQ(t.stages[3].messages[0].role, AgentRole::SeniorReviewer);
  EXPECT_TRUE(transcript_violations(t).empty());
  EXPECT_EQ(client.chat_calls(), 8u);
  EXPECT_EQ(t.stages[0].messages[0].attachments.size(), 2u);
}

TEST(Transcript, WithoutMetaReviewHasThreeStages) {
  MockClient client(3);
  const Transcript t = simulate_debate(sample_paper(), client, {}, no_sleep(), false);
  EXPECT_EQ(t.stages.size(), 3u);
  EXPECT_EQ(client.chat_calls(), 7u);
}

TEST(Transcript, MockIsDeterministic) {
  MockClient a(5), b(5), c(6);
  const Transcript ta = simulate_debate(sample_paper(), a, {}, no_sleep());
  EXPECT_EQ(ta, simulate_debate(sample_paper(), b, {}, no_sleep()));
  EXPECT_EQ(to_json(ta).dump(), to_json(simulate_debate(sample_paper(), a, {}, no_sleep())).dump());
  EXPECT_NE(ta, simulate_debate(sample_paper(), c, {}, no_sleep()));
}

TEST(Transcript, ReviewersDiffer) {
  MockClient client(1);
  const Transcript t = simulate_debate(sample_paper(), client, {}, no_sleep());
  std::set<std::string> reviews;
  for (const auto& m : t.stages[0].messages) reviews.insert(m.content);
  EXPECT_EQ(reviews.size(), 3u);
}

TEST(Transcript, JsonRoundTrip) {
  MockClient client(2);
  const Transcript t = simulate_debate(sample_paper(), client, {}, no_sleep());
  EXPECT_EQ(transcript_from_json(Json::parse(to_json(t).dump())), t);
  EXPECT_EQ(kind_of([] { transcript_from_json(Json{{"paper_id", "x"}}); }), ErrorKind::BadGraphFile);
}

TEST(Transcript, ViolationsAreReported) {
  Transcript t;
  t.paper_id = "x";
  t.stages = {{Stage::AuthorRebuttal, {}}, {Stage::InitialReview, {{AgentRole::Reviewer1, "a", {}}}},
              {Stage::ReEvaluation, {}}};
  const auto v = transcript_violations(t);
  EXPECT_GE(v.size(), 2u);
}

TEST(Transcript, EmptyBodyRejected) {
  MockClient client;
  PaperInput p = sample_paper();
  p.body = "  ";
  EXPECT_EQ(kind_of([&] { simulate_debate(p, client); }), ErrorKind::BadGraphFile);
  EXPECT_EQ(client.total_calls(), 0u);
}

TEST(Transcript, EmptyCompletionIsAnError) {
  MockOptions o;
  o.scripted_replies = {"   "};
  MockClient client(o);
  EXPECT_EQ(kind_of([&] { simulate_debate(sample_paper(), client, {}, no_sleep()); }), ErrorKind::EmptyCompletion);
}

TEST(Prompts, PaperContextCarriesAttachments) {
  const auto m = prompt::paper_context(sample_paper());
  ASSERT_EQ(m.size(), 9u);
  EXPECT_EQ(m[0].role, "system");
  EXPECT_NE(m[5].content.find("fig1.png"), std::string::npos);
  EXPECT_EQ(m[6].content, "Received the figure of the research paper.");
  EXPECT_EQ(m[8].content, "Received the table of the research paper.");
}

TEST(Prompts, ReviewFileSlotsAndNoMetaReview) {
  MockClient client(4);
  const Transcript t = simulate_debate(sample_paper(), client, {}, no_sleep());
  const std::string file = prompt::review_file(t);
  const auto init = file.find("### Initial Review Comments:");
  const auto auth = file.find("### Author's Responses:");
  const auto resp = file.find("### Reviewers' Responses:");
  ASSERT_NE(init, std::string::npos);
  EXPECT_LT(init, auth);
  EXPECT_LT(auth, resp);
  EXPECT_NE(file.find("##Reviewer 3:"), std::string::npos);
  EXPECT_NE(file.find("##Author:"), std::string::npos);
  EXPECT_EQ(file.find(t.stages[3].messages[0].content), std::string::npos);
}

TEST(Prompts, PromptsJsonRoundTrip) {
  Prompts p;
  p.review_guidelines = "Be brief.";
  const Prompts back = prompts_from_json(to_json(p));
  EXPECT_EQ(back.review_guidelines, "Be brief.");
  EXPECT_EQ(back.author_guidelines, Prompts{}.author_guidelines);
}

// ---------------------------------------------------------------------------
// extraction

TEST(Extract, MockRepliesParseIntoTriples) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MockClient client(seed);
    const Transcript t = simulate_debate(sample_paper("p" + std::to_string(seed)), client, {}, no_sleep());
    const TripleBatch b = extract_triples(t, client, no_sleep());
    EXPECT_TRUE(b.malformed.empty());
    EXPECT_FALSE(b.reviewer_author.empty());
    EXPECT_EQ(b.graph_id, t.paper_id);
    EXPECT_EQ(client.chat_calls(), 9u);
  }
}

TEST(Extract, SampleReplyGivesSevenAndEight) {
  MockClient sim(1);
  const Transcript t = simulate_debate(sample_paper(), sim, {}, no_sleep());
  MockOptions o;
  o.scripted_replies = {rvg::testing::sample_triples_json(true)};
  MockClient client(o);
  const TripleBatch b = extract_triples(t, client, no_sleep());
  EXPECT_EQ(b.reviewer_author.size(), 7u);
  EXPECT_EQ(b.inter_reviewer.size(), 8u);
}

TEST(Extract, ProseAroundJsonIsTolerated) {
  MockClient sim(1);
  const Transcript t = simulate_debate(sample_paper(), sim, {}, no_sleep());
  MockOptions o;
  o.scripted_replies = {"Sure! Here you go:\n" + rvg::testing::sample_triples_json(false) + "\nHope this helps."};
  MockClient client(o);
  const TripleBatch b = extract_triples(t, client, no_sleep());
  EXPECT_EQ(b.reviewer_author.size() + b.inter_reviewer.size(), 14u);
}

TEST(Extract, RetriesOnceThenFails) {
  MockClient sim(1);
  const Transcript t = simulate_debate(sample_paper(), sim, {}, no_sleep());
  MockOptions o;
  o.scripted_replies = {"no relations found"};
  MockClient client(o);
  EXPECT_EQ(kind_of([&] { extract_triples(t, client, no_sleep()); }), ErrorKind::ExtractionFailed);
  EXPECT_EQ(client.chat_calls(), 2u);

  MockOptions o2;
  o2.scripted_replies = {"no relations found", rvg::testing::sample_triples_json(true)};
  MockClient second(o2);
  EXPECT_EQ(extract_triples(t, second, no_sleep()).reviewer_author.size(), 7u);
}

TEST(Extract, IncompleteTranscriptRejected) {
  Transcript t;
  t.paper_id = "x";
  MockClient client;
  EXPECT_EQ(kind_of([&] { extract_triples(t, client); }), ErrorKind::ExtractionFailed);
  EXPECT_EQ(client.total_calls(), 0u);
}

// ---------------------------------------------------------------------------
// classification

TEST(Classify, OneRequestPerDistinctComment) {
  const TripleBatch batch = parse_triple_batch(rvg::testing::sample_triples_json(true), "r");
  const std::size_t distinct = distinct_reviewer_opinions(batch).size();
  MockClient client(0);
  const auto dims = classify_dimensions(batch, client, 3, no_sleep());
  EXPECT_EQ(client.chat_calls(), distinct);
  EXPECT_EQ(dims.size(), distinct);
  const auto keys = distinct_reviewer_opinions(batch);
  for (std::size_t i = 0; i < dims.size(); ++i) EXPECT_EQ(dims[i].key(), keys[i]);
}

TEST(Classify, SixDistinctTextsSixRequests) {
  TripleBatch batch;
  batch.graph_id = "six";
  for (int i = 0; i < 6; ++i)
    batch.reviewer_author.push_back({kReviewers[i % 3], "Comment number " + std::to_string(i) + " on experiments.",
                                     AgentRole::Author, "Reply " + std::to_string(i), "Accept",
                                     TripleGroup::ReviewerAuthor});
  batch.reviewer_author.push_back(batch.reviewer_author.front());
  MockClient client(0);
  classify_dimensions(batch, client, 2, no_sleep());
  EXPECT_EQ(client.chat_calls(), 6u);
}

TEST(Classify, KeywordRuleOnSampleComment) {
  EXPECT_EQ(MockClient::keyword_dimension(
                "The experimental section could be more robust, as it only includes two case studies."),
            Dimension::ExperimentalCompleteness);
  EXPECT_EQ(MockClient::keyword_dimension("The motivation is unclear."), Dimension::MotivationClarity);
  EXPECT_EQ(MockClient::keyword_dimension("The writing is hard to follow."), Dimension::WritingFluency);
  EXPECT_EQ(MockClient::keyword_dimension("The idea is novel."), Dimension::MethodologicalNovelty);
}

TEST(Classify, PersistentBadCategoryNamesComment) {
  TripleBatch batch;
  batch.graph_id = "bad";
  batch.reviewer_author.push_back({AgentRole::Reviewer2, "The baselines are weak.", AgentRole::Author, "We disagree.",
                                   "Reject", TripleGroup::ReviewerAuthor});
  MockOptions o;
  o.scripted_replies = {R"({"category": "Soundness"})"};
  MockClient client(o);
  try {
    classify_dimensions(batch, client, 1, no_sleep());
    FAIL() << "expected ClassificationFailed";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ClassificationFailed);
    EXPECT_NE(std::string(e.what()).find("The baselines are weak."), std::string::npos);
  }
  EXPECT_EQ(client.chat_calls(), 2u);
}

TEST(Classify, SecondAttemptRecovers) {
  TripleBatch batch;
  batch.reviewer_author.push_back({AgentRole::Reviewer1, "Some comment.", AgentRole::Author, "Reply.", "Neutral",
                                   TripleGroup::ReviewerAuthor});
  MockOptions o;
  o.scripted_replies = {"I think it is about writing", R"({"category": "Writing Fluency"})"};
  MockClient client(o);
  const auto dims = classify_dimensions(batch, client, 1, no_sleep());
  ASSERT_EQ(dims.size(), 1u);
  EXPECT_EQ(dims[0].dimension, Dimension::WritingFluency);
}

// ---------------------------------------------------------------------------
// embeddings

TEST(Embed, RepeatedTextsShareVectorsAndCache) {
  MockClient client(0);
  EmbeddingStore cache;
  const auto v = embed_texts({"alpha", "beta", "alpha"}, client, cache, 2, no_sleep());
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0], v[2]);
  EXPECT_EQ(v[0].size(), 64u);
  EXPECT_EQ(client.embed_calls(), 2u);
  embed_texts({"beta", "alpha", "gamma"}, client, cache, 2, no_sleep());
  EXPECT_EQ(client.embed_calls(), 3u);
  embed_texts({"gamma"}, client, cache, 2, no_sleep());
  EXPECT_EQ(client.embed_calls(), 3u);
}

TEST(Embed, MockVectorsAreUnitAndDeterministic) {
  MockClient a(9), b(9);
  const auto va = a.embed("text"), vb = b.embed("text");
  EXPECT_EQ(va, vb);
  double norm = 0;
  for (double x : va) norm += x * x;
  EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(Embed, InconsistentDimensionRejected) {
  MockOptions o;
  o.embedding_dim = 8;
  MockClient client(o);
  EmbeddingStore cache;
  cache.put("seed text", std::vector<double>(4, 0.5));
  EXPECT_EQ(kind_of([&] { embed_texts({"other"}, client, cache, 1, no_sleep()); }), ErrorKind::InconsistentDimension);
  EXPECT_EQ(kind_of([&] { embed_texts({}, client, cache, 1, no_sleep()); }), ErrorKind::EmptyVector);
}

// ---------------------------------------------------------------------------
// retry, backoff and concurrency

TEST(Retry, DelaysDoubleAndFailuresAreRetried) {
  MockOptions o;
  o.fail_first = 2;
  MockClient client(o);
  std::vector<std::chrono::milliseconds> delays;
  RetryPolicy p;
  p.max_retries = 3;
  p.backoff_base_ms = 100;
  p.sleep = [&](std::chrono::milliseconds d) { delays.push_back(d); };
  const auto v = with_retry(p, [&] { return client.embed("x"); });
  EXPECT_EQ(v.size(), 64u);
  ASSERT_EQ(delays.size(), 2u);
  EXPECT_EQ(delays[0].count(), 100);
  EXPECT_EQ(delays[1].count(), 200);
  for (std::size_t k = 1; k < 6; ++k) EXPECT_GT(p.delay(k), p.delay(k - 1));
}

TEST(Retry, GivesUpAfterLimit) {
  MockOptions o;
  o.fail_first = 10;
  MockClient client(o);
  EXPECT_EQ(kind_of([&] { with_retry(no_sleep(2), [&] { return client.embed("x"); }); }), ErrorKind::EndpointError);
  EXPECT_EQ(client.embed_calls(), 3u);
}

TEST(Retry, NonRetryableFailsImmediately) {
  int calls = 0;
  EXPECT_EQ(kind_of([&] {
              with_retry(no_sleep(5), [&]() -> int {
                ++calls;
                throw EndpointFailure("HTTP 401", 401, false);
              });
            }),
            ErrorKind::EndpointError);
  EXPECT_EQ(calls, 1);
}

TEST(Retry, SimulationSurvivesTransientFailures) {
  MockOptions o;
  o.seed = 3;
  o.fail_first = 2;
  MockClient flaky(o);
  MockClient clean(3);
  EXPECT_EQ(simulate_debate(sample_paper(), flaky, {}, no_sleep()), simulate_debate(sample_paper(), clean, {}, no_sleep()));
  EXPECT_EQ(flaky.chat_calls(), clean.chat_calls() + 2);
}

TEST(FanOut, KeepsOrderAndBoundsConcurrency) {
  MockOptions o;
  o.latency = std::chrono::milliseconds(5);
  MockClient client(o);
  std::vector<std::string> texts;
  for (int i = 0; i < 24; ++i) texts.push_back("t" + std::to_string(i));
  EmbeddingStore cache;
  const auto v = embed_texts(texts, client, cache, 3, no_sleep());
  EXPECT_LE(client.max_in_flight(), 3u);
  EXPECT_GE(client.max_in_flight(), 2u);
  MockClient serial(0);
  for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_EQ(v[i], serial.embed(texts[i]));
}

TEST(FanOut, RethrowsLowestIndexError) {
  try {
    fan_out<int>(10, 4, [](std::size_t i) -> int {
      if (i == 3 || i == 7) throw Error(ErrorKind::EndpointError, "item " + std::to_string(i));
      return static_cast<int>(i);
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("item 3"), std::string::npos);
  }
}

TEST(EndpointConfig, JsonRoundTripAndKeyPolicy) {
  EndpointConfig c;
  c.base_url = "http://localhost:8080";
  c.temperature = 0.2;
  c.max_concurrency = 2;
  const EndpointConfig back = endpoint_config_from_json(to_json(c));
  EXPECT_EQ(back.base_url, c.base_url);
  EXPECT_EQ(back.temperature, c.temperature);
  EXPECT_EQ(back.max_concurrency, 2u);
  EXPECT_FALSE(to_json(c).contains("api_key"));
  EXPECT_EQ(kind_of([] { endpoint_config_from_json(Json{{"api_key", "sk-123"}}); }), ErrorKind::BadConfig);
  EXPECT_EQ(kind_of([] { endpoint_config_from_json(Json{{"max_concurrency", 0}}); }), ErrorKind::BadConfig);
}

// ---------------------------------------------------------------------------
// end to end through graph construction

TEST(Pipeline, RequestAccountingAndValidGraph) {
  MockClient client(7);
  const Transcript t = simulate_debate(sample_paper(), client, {}, no_sleep());
  const TripleBatch batch = extract_triples(t, client, no_sleep());
  const auto dims = classify_dimensions(batch, client, 2, no_sleep());
  const DebateGraph g = build_graph(sample_paper().title, batch, dims, {});
  EmbeddingStore cache;
  const auto texts = node_texts(g);
  embed_texts(texts, client, cache, 2, no_sleep());
  const std::size_t expected = 3 + 1 + 3 + 1 + 1 + distinct_reviewer_opinions(batch).size() + texts.size();
  EXPECT_EQ(client.total_calls(), expected);
  EXPECT_TRUE(validate_graph(g).ok) << validate_graph(g).violations.size();
  EXPECT_NO_THROW(node_embeddings(g, cache));
}
