#pragma once

// LLM-facing pipeline stages: debate simulation, triple extraction, dimension
// classification and text embedding, all through the ChatClient interface.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "reviewgraph/embeddings.hpp"
#include "reviewgraph/error.hpp"
#include "reviewgraph/extraction.hpp"
#include "reviewgraph/graph.hpp"

namespace rvg {

// ---------------------------------------------------------------------------
// Transcript

enum class Stage { InitialReview, AuthorRebuttal, ReEvaluation, MetaReview };

inline constexpr std::array<std::pair<Stage, std::string_view>, 4> kStageNames = {{
    {Stage::InitialReview, "initial_review"},
    {Stage::AuthorRebuttal, "author_rebuttal"},
    {Stage::ReEvaluation, "re_evaluation"},
    {Stage::MetaReview, "meta_review"},
}};

inline std::string_view to_string(Stage s) { return detail::name_of(kStageNames, s); }
inline std::optional<Stage> parse_stage(std::string_view s) { return detail::lookup(kStageNames, s); }

/// Figure or table handed to the endpoint as-is (URL and/or caption).
struct Attachment {
  std::string kind;  // "figure" or "table"
  std::string url;
  std::string description;

  bool operator==(const Attachment&) const = default;
};

struct AgentMessage {
  AgentRole role = AgentRole::Reviewer1;
  std::string content;
  std::vector<std::string> attachments;

  bool operator==(const AgentMessage&) const = default;
};

struct StageRecord {
  Stage stage = Stage::InitialReview;
  std::vector<AgentMessage> messages;

  bool operator==(const StageRecord&) const = default;
};

struct Transcript {
  std::string paper_id;
  std::vector<StageRecord> stages;

  const StageRecord* find(Stage s) const {
    for (const auto& r : stages)
      if (r.stage == s) return &r;
    return nullptr;
  }

  bool operator==(const Transcript&) const = default;
};

/// Empty when the transcript follows the protocol; otherwise one line per problem.
inline std::vector<std::string> transcript_violations(const Transcript& t) {
  std::vector<std::string> out;
  static constexpr Stage kOrder[] = {Stage::InitialReview, Stage::AuthorRebuttal, Stage::ReEvaluation,
                                     Stage::MetaReview};
  if (t.stages.size() < 3 || t.stages.size() > 4)
    out.push_back("expected 3 or 4 stages, found " + std::to_string(t.stages.size()));
  for (std::size_t i = 0; i < t.stages.size() && i < 4; ++i)
    if (t.stages[i].stage != kOrder[i])
      out.push_back("stage " + std::to_string(i) + " is " + std::string(to_string(t.stages[i].stage)) +
                    ", expected " + std::string(to_string(kOrder[i])));
  if (const auto* init = t.find(Stage::InitialReview)) {
    std::vector<AgentRole> roles;
    for (const auto& m : init->messages) roles.push_back(m.role);
    if (roles != std::vector<AgentRole>(kReviewers.begin(), kReviewers.end()))
      out.push_back("initial review must hold one message from each of the three reviewers");
  }
  return out;
}

inline Json to_json(const Transcript& t) {
  Json stages = Json::array();
  for (const auto& s : t.stages) {
    Json messages = Json::array();
    for (const auto& m : s.messages)
      messages.push_back(
          {{"role", std::string(to_string(m.role))}, {"content", m.content}, {"attachments", m.attachments}});
    stages.push_back({{"stage", std::string(to_string(s.stage))}, {"messages", messages}});
  }
  return Json{{"paper_id", t.paper_id}, {"stages", stages}};
}

inline Transcript transcript_from_json(const Json& j) {
  try {
    Transcript t;
    t.paper_id = j.at("paper_id").get<std::string>();
    for (const Json& js : j.at("stages")) {
      StageRecord rec;
      auto stage = parse_stage(js.at("stage").get<std::string>());
      if (!stage) throw Error(ErrorKind::BadGraphFile, "unknown stage " + js.at("stage").dump());
      rec.stage = *stage;
      for (const Json& jm : js.at("messages")) {
        AgentMessage m;
        auto role = parse_role(jm.at("role").get<std::string>());
        if (!role) throw Error(ErrorKind::BadGraphFile, "unknown role " + jm.at("role").dump());
        m.role = *role;
        m.content = jm.at("content").get<std::string>();
        m.attachments = jm.value("attachments", std::vector<std::string>{});
        rec.messages.push_back(std::move(m));
      }
      t.stages.push_back(std::move(rec));
    }
    return t;
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadGraphFile, std::string("transcript: ") + ex.what());
  }
}

struct PaperInput {
  std::string paper_id;
  std::string title;
  std::string body;
  std::vector<Attachment> attachments;
};

inline PaperInput paper_from_json(const Json& j, const std::string& fallback_id = "") {
  try {
    PaperInput p;
    p.paper_id = j.value("paper_id", fallback_id);
    p.title = j.at("title").get<std::string>();
    p.body = j.at("body").get<std::string>();
    for (const Json& a : j.value("attachments", Json::array()))
      p.attachments.push_back({a.value("kind", "figure"), a.value("url", ""), a.value("description", "")});
    return p;
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadGraphFile, std::string("paper file: ") + ex.what());
  }
}

inline Json to_json(const PaperInput& p) {
  Json atts = Json::array();
  for (const auto& a : p.attachments) atts.push_back({{"kind", a.kind}, {"url", a.url}, {"description", a.description}});
  return Json{{"paper_id", p.paper_id}, {"title", p.title}, {"body", p.body}, {"attachments", atts}};
}

// ---------------------------------------------------------------------------
// Endpoint configuration and client interface

struct EndpointConfig {
  std::string base_url = "https://api.openai.com";
  std::string model = "gpt-4.1-mini";
  std::string embedding_model = "text-embedding-3-small";
  std::string api_key_env = "OPENAI_API_KEY";  // variable name only; the key itself is never stored
  std::string chat_path = "/v1/chat/completions";
  std::string embedding_path = "/v1/embeddings";
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
  std::size_t max_concurrency = 4;
  double timeout_seconds = 60.0;
  std::size_t max_retries = 3;
  double backoff_base_ms = 500.0;
  std::optional<double> temperature;
  std::optional<std::size_t> embedding_dim;  // forwarded as "dimensions" when set

  void validate() const {
    if (max_concurrency == 0) throw Error(ErrorKind::BadConfig, "max_concurrency must be at least 1");
    if (!(timeout_seconds > 0)) throw Error(ErrorKind::BadConfig, "timeout must be positive");
    if (!(backoff_base_ms >= 0)) throw Error(ErrorKind::BadConfig, "backoff base must be non-negative");
  }
};

inline Json to_json(const EndpointConfig& c) {
  Json j{{"base_url", c.base_url},
         {"model", c.model},
         {"embedding_model", c.embedding_model},
         {"api_key_env", c.api_key_env},
         {"chat_path", c.chat_path},
         {"embedding_path", c.embedding_path},
         {"auth_header", c.auth_header},
         {"auth_prefix", c.auth_prefix},
         {"max_concurrency", c.max_concurrency},
         {"timeout_seconds", c.timeout_seconds},
         {"max_retries", c.max_retries},
         {"backoff_base_ms", c.backoff_base_ms}};
  if (c.temperature) j["temperature"] = *c.temperature;
  if (c.embedding_dim) j["embedding_dim"] = *c.embedding_dim;
  return j;
}

inline EndpointConfig endpoint_config_from_json(const Json& j) {
  EndpointConfig c;
  try {
    if (j.contains("api_key")) throw Error(ErrorKind::BadConfig, "endpoint config must name an environment variable (api_key_env), not hold a key");
    c.base_url = j.value("base_url", c.base_url);
    c.model = j.value("model", c.model);
    c.embedding_model = j.value("embedding_model", c.embedding_model);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.chat_path = j.value("chat_path", c.chat_path);
    c.embedding_path = j.value("embedding_path", c.embedding_path);
    c.auth_header = j.value("auth_header", c.auth_header);
    c.auth_prefix = j.value("auth_prefix", c.auth_prefix);
    c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
    if (j.contains("temperature") && !j["temperature"].is_null()) c.temperature = j["temperature"].get<double>();
    if (j.contains("embedding_dim") && !j["embedding_dim"].is_null())
      c.embedding_dim = j["embedding_dim"].get<std::size_t>();
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadConfig, std::string("endpoint config: ") + ex.what());
  }
  c.validate();
  return c;
}

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Failure talking to the endpoint. Transport errors, 429 and 5xx are
/// retryable; anything else is reported immediately.
class EndpointFailure : public Error {
 public:
  EndpointFailure(const std::string& message, int status, bool retryable)
      : Error(ErrorKind::EndpointError, message), status_(status), retryable_(retryable) {}
  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

/// One call = one request; implementations must be safe to call concurrently.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
  virtual std::vector<double> embed(const std::string& text) = 0;
};

// ---------------------------------------------------------------------------
// Retry and fan-out

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
  std::size_t max_retries = 3;
  double backoff_base_ms = 500.0;
  Sleeper sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

  static RetryPolicy from(const EndpointConfig& c) {
    RetryPolicy p;
    p.max_retries = c.max_retries;
    p.backoff_base_ms = c.backoff_base_ms;
    return p;
  }

  /// Delay before retry number k (0-based): base * 2^k.
  std::chrono::milliseconds delay(std::size_t k) const {
    return std::chrono::milliseconds(static_cast<long long>(backoff_base_ms * std::ldexp(1.0, static_cast<int>(k))));
  }
};

template <typename F>
auto with_retry(const RetryPolicy& policy, F&& call) -> decltype(call()) {
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return call();
    } catch (const EndpointFailure& e) {
      if (!e.retryable() || attempt >= policy.max_retries) {
        if (attempt == 0) throw;
        throw EndpointFailure(std::string(e.what()) + " (after " + std::to_string(attempt + 1) + " attempts)",
                              e.status(), false);
      }
      if (policy.sleep) policy.sleep(policy.delay(attempt));
    }
  }
}

/// Runs fn(0..n-1) on up to `jobs` threads; results keep index order. The
/// first exception (lowest index) is rethrown after all workers finish.
template <typename R>
std::vector<R> fan_out(std::size_t n, std::size_t jobs, const std::function<R(std::size_t)>& fn) {
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < jobs; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

struct Prompts {
  std::string review_guidelines =
      "Summarize the paper, then list its strengths and weaknesses as separate bullet points, one argument "
      "sentence per bullet. Recognize substantive contributions and give positive feedback where it is due. "
      "Raise concerns about weaknesses and about any part that is ambiguous or underspecified. Cover "
      "methodological novelty, experimental completeness, motivation clarity and writing fluency. Finish "
      "with an overall rating from 1 to 10.";
  std::string author_guidelines =
      "Respond point by point to every reviewer comment, one bullet per point, naming the reviewer and the "
      "point. Clarify misunderstandings, answer technical questions and defend the contributions where they "
      "are challenged.";
  std::string reevaluation_guidelines =
      "Read the authors' responses to your comments. For each of your points state, in one bullet, whether "
      "the response resolves your concern, and update your overall rating.";
  std::string area_chair_guidelines =
      "Weigh the reviews, the rebuttal and the reviewers' follow-up responses. Write a meta-review that "
      "summarizes the discussion and ends with a score from 1 to 10.";
};

inline Json to_json(const Prompts& p) {
  return Json{{"review_guidelines", p.review_guidelines},
              {"author_guidelines", p.author_guidelines},
              {"reevaluation_guidelines", p.reevaluation_guidelines},
              {"area_chair_guidelines", p.area_chair_guidelines}};
}

inline Prompts prompts_from_json(const Json& j) {
  Prompts p;
  p.review_guidelines = j.value("review_guidelines", p.review_guidelines);
  p.author_guidelines = j.value("author_guidelines", p.author_guidelines);
  p.reevaluation_guidelines = j.value("reevaluation_guidelines", p.reevaluation_guidelines);
  p.area_chair_guidelines = j.value("area_chair_guidelines", p.area_chair_guidelines);
  return p;
}

namespace prompt {

inline constexpr std::string_view kParticipant =
    "You are a participant in the paper review and you need to fully understand the content of the paper.";
inline constexpr std::string_view kReviewerRole =
    "You are a reviewer. You write peer review of academic papers by evaluating their technical quality, "
    "originality, and clarity.";
inline constexpr std::string_view kAuthorRole =
    "You are an author. You write research papers and submit them to conferences. During the rebuttal phase, "
    "you carefully read the reviews from the reviewers and respond to each of them.";
inline constexpr std::string_view kReevaluationHeading = "## Re-evaluation Guidelines";
inline constexpr std::string_view kAreaChairRole =
    "You are a very knowledgeable and experienced area chair in a top-tier machine learning conference.\n\n"
    "You evaluate the reviews provided by reviewers and write metareviews.";
inline constexpr std::string_view kExtractionSystem =
    "You are an expert in argument mining and peer review analysis.\n\n"
    "You are given a review file that contains:\n\n"
    "- The initial review comments from three reviewers.\n\n"
    "- The author's responses to each reviewer.\n\n"
    "- The reviewers' subsequent responses to the author's replies.";
inline constexpr std::string_view kExtractionTask = R"p(### Task:

Please carefully read the provided text and extract the argumentative relationships in the following two categories:

1. **Reviewer-Author Relationships:**
Identify the relationships between each reviewer's argument sentence and the corresponding author's response.
Use the following relation types:
- Accept: The author fully accepts or agrees with the reviewer's comment.
- Reject: The author disagrees with or does not adopt the reviewer's comment.
- Clarify: The author provides additional explanations or clarifications.
- Compromise: The author partially accepts the reviewer's comment and proposes a middle-ground solution.
- Extend: The author expands or supplements their response based on the reviewer's comment.
- Neutral: The author's response does not clearly express an attitude or is neutral.

2. **Inter-Reviewer Relationships:**
Identify the relationships between argument sentences from different reviewers.
Use the following relation types:
- Agree: The reviewers hold consistent viewpoints or mutually support each other's comments.
- Disagree: The reviewers present conflicting viewpoints or directly refute each other.
- Complement: Reviewers' comments are complementary and cover different but related aspects.
- Progressive: One reviewer's comment builds upon or deepens another's.
- Independent: Reviewers' comments are unrelated and focus on different issues independently.

### Output Format:
Please provide the extracted triples in the following format:
- (Reviewer X: [argument sentence], Author: [argument sentence], [relation type])
- (Reviewer X: [argument sentence], Reviewer Y: [argument sentence], [relation type])

### Notes:
- "Argument sentence" refers to a concise sentence that clearly expresses a viewpoint, criticism, suggestion, or justification.
- Please focus on argument sentences and ignore background descriptions or non-argumentative text.
- If no clear relation exists, skip that pair.

### Example Output:
{"Reviewer_Author_Relations": ["(Reviewer 1: 'The experiment settings lack sufficient diversity to fully validate the generalizability of the proposed method.', Author: 'We have added new experiments on additional datasets from different domains to enhance diversity and support generalization.', Accept)", ...],
 "Inter_Reviewer_Relations": ["(Reviewer 1: 'The proposed model demonstrates significant novelty in its hierarchical reasoning structure.', Reviewer 2: 'The hierarchical reasoning structure introduced is indeed novel and well-motivated.', Agree)", ...]}

Please extract all relevant triples from the provided text. Each triple must directly quote the original sentences without any paraphrasing, summarizing, or abbreviation. Ensure that the wording is fully preserved as in the original text. Follow the example and provide the final output in a single JSON object. Please strive to cover the full diversity of relationship types as comprehensively as possible. The extracted relationships should be complete, diverse, and richly capture the different types of interactions present in the text.)p";
inline constexpr std::string_view kJsonOnly =
    "Your previous reply could not be parsed. Reply with the JSON object only, with no other text.";
inline constexpr std::string_view kClassificationSystem = R"p(### Task:

Your task is to classify the given comment into one of the following categories based on their primary evaluation focus:

1. Methodological Novelty — Is the comment evaluating whether the proposed method is novel, creative, or technically original?

2. Motivation Clarity — Is the comment assessing whether the motivation or problem statement is clear and compelling?

3. Experimental Completeness — Is the comment about the quality, completeness, or reliability of the experiments and empirical evaluation?

4. Writing Fluency — Is the comment about the writing quality, fluency, or readability of the paper?

Return your answer as JSON in the format: {"category": "category_name"})p";
inline constexpr std::string_view kCommentPrefix = "Comment to classify: ";

inline std::string reviewer_identity(AgentRole r) { return "You are " + speaker_tag(r) + "."; }

inline std::vector<ChatMessage> paper_context(const PaperInput& paper) {
  std::vector<ChatMessage> m = {
      {"system", std::string(kParticipant)},
      {"user", "The following is the text content, figures and tables of a research paper."},
      {"assistant", "Okay, please provide the content of the research paper."},
      {"user", "Title: " + paper.title + "\n\n" + paper.body},
      {"assistant", "Received the text content of the research paper."},
  };
  for (const auto& a : paper.attachments) {
    m.push_back({"user", a.url + (a.url.empty() || a.description.empty() ? "" : "\n") + a.description});
    m.push_back({"assistant", "Received the " + std::string(a.kind == "table" ? "table" : "figure") +
                                  " of the research paper."});
  }
  return m;
}

inline std::string review_request(AgentRole r, const Prompts& p) {
  return "You are a helpful assistant. Your role:\n\n" + std::string(kReviewerRole) + "\n" + reviewer_identity(r) +
         "\n\n## Review Guidelines\n\n" + p.review_guidelines;
}

inline std::string labelled_blocks(const std::vector<AgentMessage>& messages, bool newline_after_tag) {
  std::string out;
  for (const auto& m : messages)
    out += "##" + speaker_tag(m.role) + ":" + (newline_after_tag ? "\n" : " ") + m.content + "\n\n";
  return out;
}

inline std::string rebuttal_request(const std::vector<AgentMessage>& reviews, const Prompts& p) {
  return "You are a helpful assistant. Your role:\n\n" + std::string(kAuthorRole) + "\n\n## Author Guidelines\n\n" +
         p.author_guidelines + "\n\n## Reviews\n\n" + labelled_blocks(reviews, false);
}

inline std::string reevaluation_request(AgentRole r, const std::string& rebuttal, const Prompts& p) {
  return "You are a helpful assistant. Your role:\n\n" + std::string(kReviewerRole) + "\n" + reviewer_identity(r) +
         "\n\n" + std::string(kReevaluationHeading) + "\n\n" + p.reevaluation_guidelines +
         "\n\n## Author's Response\n\n" + rebuttal;
}

inline std::string meta_review_request(const Transcript& t, const Prompts& p) {
  std::string out = "You are a helpful assistant. Your role:\n\n" + std::string(kAreaChairRole) +
                    "\n\n## Area Chair Guidelines\n\n" + p.area_chair_guidelines + "\n\n";
  for (const auto& s : t.stages) {
    out += "### " + std::string(to_string(s.stage)) + "\n\n" + labelled_blocks(s.messages, false);
  }
  return out;
}

/// The review file shown to the extractor. The meta-review has no slot.
inline std::string review_file(const Transcript& t) {
  auto block = [&](Stage s, bool newline) {
    const auto* rec = t.find(s);
    return rec ? labelled_blocks(rec->messages, newline) : std::string();
  };
  return "### Initial Review Comments:\n\n" + block(Stage::InitialReview, false) + "### Author's Responses:\n\n" +
         block(Stage::AuthorRebuttal, false) + "### Reviewers' Responses:\n\n" + block(Stage::ReEvaluation, true);
}

inline std::vector<ChatMessage> extraction_messages(const Transcript& t) {
  return {{"system", std::string(kExtractionSystem)},
          {"user", review_file(t)},
          {"assistant", "Received the review contents."},
          {"user", std::string(kExtractionTask)}};
}

inline std::vector<ChatMessage> classification_messages(const std::string& comment) {
  return {{"system", std::string(kClassificationSystem)}, {"user", std::string(kCommentPrefix) + comment}};
}

}  // namespace prompt

// ---------------------------------------------------------------------------
// Stages

inline std::string checked_completion(ChatClient& client, const std::vector<ChatMessage>& messages,
                                      const RetryPolicy& policy, const std::string& what) {
  std::string reply = with_retry(policy, [&] { return client.complete(messages); });
  if (trim(reply).empty()) throw Error(ErrorKind::EmptyCompletion, what + " came back empty");
  return reply;
}

/// Initial reviews, rebuttal, re-evaluations and (optionally) the meta-review,
/// issued strictly in sequence.
inline Transcript simulate_debate(const PaperInput& paper, ChatClient& client, const Prompts& prompts = {},
                                  const RetryPolicy& policy = {}, bool meta_review = true) {
  if (trim(paper.body).empty()) throw Error(ErrorKind::BadGraphFile, "paper " + paper.paper_id + " has an empty body");
  const auto context = prompt::paper_context(paper);
  std::vector<std::string> attachment_refs;
  for (const auto& a : paper.attachments) attachment_refs.push_back(a.url.empty() ? a.description : a.url);

  Transcript t;
  t.paper_id = paper.paper_id;
  auto ask = [&](std::vector<ChatMessage> messages, const std::string& what) {
    return checked_completion(client, messages, policy, what + " for " + paper.paper_id);
  };

  StageRecord initial{Stage::InitialReview, {}};
  std::vector<std::string> review_requests;
  for (AgentRole r : kReviewers) {
    auto m = context;
    review_requests.push_back(prompt::review_request(r, prompts));
    m.push_back({"user", review_requests.back()});
    initial.messages.push_back({r, ask(m, speaker_tag(r) + " review"), attachment_refs});
  }
  t.stages.push_back(initial);

  auto m = context;
  m.push_back({"user", prompt::rebuttal_request(initial.messages, prompts)});
  const std::string rebuttal = ask(m, "rebuttal");
  t.stages.push_back({Stage::AuthorRebuttal, {{AgentRole::Author, rebuttal, {}}}});

  StageRecord follow{Stage::ReEvaluation, {}};
  for (std::size_t k = 0; k < kReviewers.size(); ++k) {
    auto mk = context;
    mk.push_back({"user", review_requests[k]});
    mk.push_back({"assistant", initial.messages[k].content});
    mk.push_back({"user", prompt::reevaluation_request(kReviewers[k], rebuttal, prompts)});
    follow.messages.push_back({kReviewers[k], ask(mk, speaker_tag(kReviewers[k]) + " re-evaluation"), {}});
  }
  t.stages.push_back(follow);

  if (meta_review) {
    auto mm = context;
    mm.push_back({"user", prompt::meta_review_request(t, prompts)});
    t.stages.push_back({Stage::MetaReview, {{AgentRole::SeniorReviewer, ask(mm, "meta-review"), {}}}});
  }
  return t;
}

/// One extraction request, plus one JSON-only retry when the reply has no
/// parseable JSON object.
inline TripleBatch extract_triples(const Transcript& t, ChatClient& client, const RetryPolicy& policy = {}) {
  const auto problems = transcript_violations(t);
  for (Stage s : {Stage::InitialReview, Stage::AuthorRebuttal, Stage::ReEvaluation})
    if (!t.find(s))
      throw Error(ErrorKind::ExtractionFailed, t.paper_id + ": transcript lacks stage " + std::string(to_string(s)));
  if (!problems.empty()) throw Error(ErrorKind::ExtractionFailed, t.paper_id + ": " + problems.front());

  auto messages = prompt::extraction_messages(t);
  std::string first_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string reply = with_retry(policy, [&] { return client.complete(messages); });
    try {
      return parse_triple_batch(reply, t.paper_id);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotJson) throw;
      if (attempt == 0) first_error = e.what();
      messages.push_back({"assistant", reply});
      messages.push_back({"user", std::string(prompt::kJsonOnly)});
    }
  }
  throw Error(ErrorKind::ExtractionFailed, t.paper_id + ": no parseable JSON after retry (" + first_error + ")");
}

/// One request per distinct reviewer opinion, one retry per comment on an
/// unusable reply. Output follows first-appearance order.
inline std::vector<DimensionAssignment> classify_dimensions(const TripleBatch& batch, ChatClient& client,
                                                            std::size_t jobs = 1, const RetryPolicy& policy = {}) {
  const auto keys = distinct_reviewer_opinions(batch);
  struct Outcome {
    std::optional<Dimension> dim;
    std::string error;
  };
  const auto results = fan_out<Outcome>(keys.size(), jobs, [&](std::size_t i) {
    const auto messages = prompt::classification_messages(keys[i].second);
    Outcome out;
    for (int attempt = 0; attempt < 2 && !out.dim; ++attempt) {
      const std::string reply = with_retry(policy, [&] { return client.complete(messages); });
      try {
        out.dim = parse_dimension_reply(reply);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UnknownCategory && e.kind() != ErrorKind::NotJson) throw;
        out.error = e.what();
      }
    }
    return out;
  });
  std::vector<DimensionAssignment> out;
  std::string failures;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (results[i].dim) {
      out.push_back({keys[i].first, keys[i].second, *results[i].dim});
    } else {
      ++failed;
      failures += "\n  " + speaker_tag(keys[i].first) + ": \"" + keys[i].second + "\" (" + results[i].error + ")";
    }
  }
  if (failed)
    throw Error(ErrorKind::ClassificationFailed,
                batch.graph_id + ": " + std::to_string(failed) + " comment(s) could not be classified" + failures);
  return out;
}

/// Vectors for `texts` (in order). Texts missing from `cache` are requested
/// once each and added to it.
inline std::vector<std::vector<double>> embed_texts(const std::vector<std::string>& texts, ChatClient& client,
                                                    EmbeddingStore& cache, std::size_t jobs = 1,
                                                    const RetryPolicy& policy = {}) {
  if (texts.empty()) throw Error(ErrorKind::EmptyVector, "embed_texts needs at least one text");
  std::vector<std::string> missing;
  std::set<std::string> seen;
  for (const auto& t : texts)
    if (!cache.contains(t) && seen.insert(t).second) missing.push_back(t);
  if (!missing.empty()) {
    auto fetched = fan_out<std::vector<double>>(missing.size(), jobs, [&](std::size_t i) {
      return with_retry(policy, [&] { return client.embed(missing[i]); });
    });
    for (std::size_t i = 0; i < missing.size(); ++i) cache.put(missing[i], std::move(fetched[i]));
  }
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(*cache.find(t));
  return out;
}

// ---------------------------------------------------------------------------
// Offline mock

struct MockOptions {
  std::uint64_t seed = 0;
  std::size_t embedding_dim = 64;
  /// The first N requests fail with a retryable 503.
  std::size_t fail_first = 0;
  /// When set, chat requests are answered from this list in order (the last
  /// entry repeats) instead of by the keyword rules.
  std::vector<std::string> scripted_replies;
  /// Simulated latency per request, to make concurrency observable.
  std::chrono::milliseconds latency{0};
};

/// Deterministic stand-in for an endpoint: canned reviews, rebuttals and
/// follow-ups built from templates, triple JSON assembled from the transcript
/// sentences, keyword-rule classification and hashed embeddings.
class MockClient : public ChatClient {
 public:
  explicit MockClient(std::uint64_t seed = 0) { options_.seed = seed; }
  explicit MockClient(MockOptions options) : options_(std::move(options)) {}

  std::string complete(const std::vector<ChatMessage>& messages) override {
    Guard g(*this);
    ++chat_calls_;
    fail_if_scheduled();
    if (!options_.scripted_replies.empty()) {
      std::lock_guard lock(mutex_);
      const std::size_t k = std::min(script_pos_++, options_.scripted_replies.size() - 1);
      return options_.scripted_replies[k];
    }
    return respond(messages);
  }

  std::vector<double> embed(const std::string& text) override {
    Guard g(*this);
    ++embed_calls_;
    fail_if_scheduled();
    return hash_embedding(text, options_.embedding_dim, options_.seed);
  }

  std::size_t chat_calls() const { return chat_calls_; }
  std::size_t embed_calls() const { return embed_calls_; }
  std::size_t total_calls() const { return chat_calls_ + embed_calls_; }
  std::size_t max_in_flight() const { return max_in_flight_; }

  /// Keyword rule behind the mock classifier.
  static Dimension keyword_dimension(std::string_view text, std::uint64_t seed = 0) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    static const std::vector<std::pair<Dimension, std::vector<std::string>>> kRules = {
        {Dimension::ExperimentalCompleteness, {"experiment", "empirical", "baseline", "benchmark", "ablation", "dataset"}},
        {Dimension::MotivationClarity, {"motivat", "problem statement", "why the problem"}},
        {Dimension::WritingFluency, {"writing", "written", "fluen", "readab", "typo", "grammar", "presentation"}},
        {Dimension::MethodologicalNovelty, {"novel", "original", "method", "idea", "technique"}},
    };
    for (const auto& [dim, words] : kRules)
      for (const auto& w : words)
        if (lower.find(w) != std::string::npos) return dim;
    return kDimensions[text_seed(text, seed) % kDimensions.size()];
  }

 private:
  struct Guard {
    MockClient& c;
    explicit Guard(MockClient& client) : c(client) {
      const std::size_t now = ++c.in_flight_;
      std::size_t seen = c.max_in_flight_;
      while (now > seen && !c.max_in_flight_.compare_exchange_weak(seen, now)) {
      }
      if (c.options_.latency.count() > 0) std::this_thread::sleep_for(c.options_.latency);
    }
    ~Guard() { --c.in_flight_; }
  };

  void fail_if_scheduled() {
    const std::size_t n = failures_++;
    if (n < options_.fail_first) throw EndpointFailure("mock endpoint unavailable (HTTP 503)", 503, true);
  }

  std::uint64_t pick(const std::string& key, std::uint64_t n) const { return text_seed(key, options_.seed) % n; }

  static std::string last_user(const std::vector<ChatMessage>& messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
      if (it->role == "user") return it->content;
    return {};
  }

  static bool contains(std::string_view hay, std::string_view needle) { return hay.find(needle) != std::string_view::npos; }

  static std::string paper_title(const std::vector<ChatMessage>& messages) {
    for (const auto& m : messages)
      if (m.role == "user" && m.content.rfind("Title: ", 0) == 0) return m.content.substr(7, m.content.find('\n') - 7);
    return "the submission";
  }

  static AgentRole reviewer_in(std::string_view text) {
    for (AgentRole r : kReviewers)
      if (contains(text, prompt::reviewer_identity(r))) return r;
    return AgentRole::Reviewer1;
  }

  /// Bulleted lines ("- ...") under each "##Speaker:" header of a block.
  static std::vector<std::pair<AgentRole, std::vector<std::string>>> bullets_by_speaker(std::string_view text) {
    std::vector<std::pair<AgentRole, std::vector<std::string>>> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      std::string line = trim(text.substr(pos, nl - pos));
      pos = nl + 1;
      if (line.rfind("##", 0) == 0 && line.rfind("###", 0) != 0) {
        const std::size_t colon = line.find(':');
        const std::string tag = trim(line.substr(2, colon == std::string::npos ? std::string::npos : colon - 2));
        std::optional<AgentRole> role;
        for (AgentRole r : {AgentRole::Reviewer1, AgentRole::Reviewer2, AgentRole::Reviewer3, AgentRole::Author})
          if (speaker_tag(r) == tag) role = r;
        if (!role) continue;
        out.push_back({*role, {}});
        if (colon != std::string::npos) line = trim(line.substr(colon + 1));
        else continue;
      }
      if (!out.empty() && line.rfind("- ", 0) == 0) out.back().second.push_back(trim(line.substr(2)));
    }
    return out;
  }

  // Review sentence templates: [dimension][positive?]
  static std::string review_sentence(Dimension d, bool positive, const std::string& title, std::size_t variant) {
    static const char* kNeg[4][2] = {
        {"The proposed method in {} offers limited methodological novelty over prior work.",
         "The core technique of {} appears to be an incremental combination of known ideas."},
        {"The experimental section of {} could be more robust, as it only includes two case studies.",
         "The experiments in {} lack comparisons with strong baselines."},
        {"The motivation of {} is not clearly stated in the introduction.",
         "The problem statement of {} does not explain why the problem matters."},
        {"The writing of {} is hard to follow in several sections.",
         "The presentation of {} contains many typos and grammar errors."}};
    static const char* kPos[4][2] = {
        {"The proposed method in {} is novel and technically original.",
         "The core idea of {} is creative and clearly new."},
        {"The experiments in {} are thorough and cover several benchmarks.",
         "The empirical evaluation of {} is complete and convincing."},
        {"The motivation of {} is clear and compelling.",
         "The problem statement of {} is well motivated."},
        {"The paper {} is well written and easy to read.",
         "The writing of {} is fluent and well organized."}};
    std::string s = (positive ? kPos : kNeg)[static_cast<int>(d)][variant % 2];
    s.replace(s.find("{}"), 2, title);
    return s;
  }

  static std::optional<std::pair<Dimension, bool>> classify_review_sentence(std::string_view s) {
    for (int d = 0; d < 4; ++d)
      for (bool positive : {false, true})
        for (std::size_t v = 0; v < 2; ++v) {
          std::string tmpl = review_sentence(kDimensions[d], positive, "\x01", v);
          const std::size_t hole = tmpl.find('\x01');
          if (s.size() > tmpl.size() - 1 && s.substr(0, hole) == tmpl.substr(0, hole) &&
              s.substr(s.size() - (tmpl.size() - hole - 1)) == tmpl.substr(hole + 1))
            return std::pair(kDimensions[d], positive);
        }
    return std::nullopt;
  }

  static constexpr std::array<const char*, 6> kResponseOpeners = {
      "We agree with this comment and have revised the paper accordingly",
      "We respectfully disagree with this assessment",
      "We clarify that this point is already addressed in the method section",
      "We partially agree and have added a short discussion as a middle ground",
      "We have extended the paper with additional material on this point",
      "We thank the reviewer for this comment"};
  static constexpr std::array<const char*, 6> kResponseLabels = {"Accept", "Reject", "Clarify",
                                                                 "Compromise", "Extend", "Neutral"};

  std::string review(const std::vector<ChatMessage>& messages, const std::string& request) const {
    const AgentRole who = reviewer_in(request);
    const std::string title = paper_title(messages);
    const std::string key = title + "|" + speaker_tag(who);
    const std::size_t n = 2 + pick(key + "|count", 3);
    std::vector<Dimension> dims(kDimensions.begin(), kDimensions.end());
    for (std::size_t i = dims.size(); i > 1; --i) std::swap(dims[i - 1], dims[pick(key + "|shuffle" + std::to_string(i), i)]);
    std::string out = "Summary: The paper " + title + " is assessed below.\n\nStrengths and weaknesses:\n";
    std::size_t positives = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool positive = pick(key + "|polarity" + std::to_string(j), 2) == 0;
      positives += positive;
      out += "- " + review_sentence(dims[j], positive, title, pick(key + "|variant" + std::to_string(j), 2)) + "\n";
    }
    out += "\nOverall rating: " + std::to_string(std::min<std::size_t>(10, 3 + 2 * positives + pick(key + "|rating", 2))) + "\n";
    return out;
  }

  std::string rebuttal(const std::string& request) const {
    std::string out = "Response:\n";
    for (const auto& [who, points] : bullets_by_speaker(request)) {
      for (std::size_t j = 0; j < points.size(); ++j) {
        const std::size_t label = pick(points[j] + "|response", kResponseOpeners.size());
        out += "- Regarding point " + std::to_string(j + 1) + " of " + speaker_tag(who) + ": " +
               kResponseOpeners[label] + ".\n";
      }
    }
    return out;
  }

  std::string reevaluation(const std::string& request) const {
    const AgentRole who = reviewer_in(request);
    std::string out = "Follow-up:\n";
    const std::string marker = " of " + speaker_tag(who) + ": ";
    std::size_t k = 0;
    const std::size_t at = request.find("## Author's Response");
    const std::string rebuttal_text = at == std::string::npos ? "" : request.substr(at);
    for (const auto& block : bullets_by_speaker("##Author:\n" + rebuttal_text))
      for (const auto& line : block.second)
        if (contains(line, marker)) {
          const bool resolved = contains(line, "agree") && !contains(line, "disagree");
          out += "- " + std::string(resolved ? "The response to point " : "My concern about point ") +
                 std::to_string(++k) + (resolved ? " resolves my concern." : " remains after the rebuttal.") + "\n";
        }
    if (k == 0) out += "- I have read the response and keep my assessment.\n";
    return out;
  }

  std::string meta_review(const std::string& request) const {
    return "Summary: The reviewers discussed the submission and the authors responded to each point.\n\nScore: " +
           std::to_string(3 + pick(request, 6)) + "\n";
  }

  std::string extraction(const std::vector<ChatMessage>& messages) const {
    std::string file;
    for (const auto& m : messages)
      if (m.role == "user" && contains(m.content, "### Initial Review Comments:")) file = m.content;
    const std::size_t a = file.find("### Author's Responses:"), r = file.find("### Reviewers' Responses:");
    const auto reviews = bullets_by_speaker(file.substr(0, a));
    const auto responses = bullets_by_speaker(file.substr(a, r - a));

    TripleBatch batch;
    for (const auto& [who, points] : reviews)
      for (std::size_t j = 0; j < points.size(); ++j) {
        const std::string marker = "Regarding point " + std::to_string(j + 1) + " of " + speaker_tag(who) + ": ";
        for (const auto& [author, lines] : responses)
          for (const auto& line : lines) {
            if (line.rfind(marker, 0) != 0) continue;
            std::string label = "Neutral";
            for (std::size_t k = 0; k < kResponseOpeners.size(); ++k)
              if (contains(line, kResponseOpeners[k])) label = kResponseLabels[k];
            batch.reviewer_author.push_back({who, points[j], author, line, label, TripleGroup::ReviewerAuthor});
          }
      }
    for (std::size_t x = 0; x < reviews.size(); ++x)
      for (std::size_t y = x + 1; y < reviews.size(); ++y)
        for (const auto& s : reviews[x].second)
          for (const auto& u : reviews[y].second) {
            const auto cs = classify_review_sentence(s), cu = classify_review_sentence(u);
            if (!cs || !cu) continue;
            std::string label;
            if (cs->first == cu->first) label = cs->second == cu->second ? "Agree" : "Disagree";
            else if (cs->second == cu->second && pick(s + "|" + u, 3) == 0) label = "Complement";
            if (label.empty()) continue;
            batch.inter_reviewer.push_back({reviews[x].first, s, reviews[y].first, u, label, TripleGroup::InterReviewer});
          }
    return "Here are the extracted relations.\n" + batch_to_json(batch).dump(2);
  }

  std::string respond(const std::vector<ChatMessage>& messages) const {
    const std::string system = messages.empty() ? "" : messages.front().content;
    const std::string request = last_user(messages);
    if (contains(system, "argument mining")) return extraction(messages);
    if (contains(system, "classify the given comment")) {
      const std::string comment = request.substr(std::min(request.size(), prompt::kCommentPrefix.size()));
      return "{\"category\": \"" + std::string(display_name(keyword_dimension(comment, options_.seed))) + "\"}";
    }
    if (contains(request, prompt::kReevaluationHeading)) return reevaluation(request);
    if (contains(request, "area chair")) return meta_review(request);
    if (contains(request, "You are an author.")) return rebuttal(request);
    if (contains(request, "You are a reviewer.")) return review(messages, request);
    return "Received.";
  }

  MockOptions options_;
  std::atomic<std::size_t> chat_calls_{0}, embed_calls_{0}, failures_{0};
  std::atomic<std::size_t> in_flight_{0}, max_in_flight_{0};
  std::mutex mutex_;
  std::size_t script_pos_ = 0;
};

}  // namespace rvg
