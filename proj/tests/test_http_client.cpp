#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "reviewgraph/http_client.hpp"

using namespace rvg;

namespace {

/// Local OpenAI-style server; status codes for the first requests can be
/// scripted.
class FakeEndpoint {
 public:
  FakeEndpoint() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = Json::parse(req.body);
      if (fail_next_ > 0) {
        --fail_next_;
        res.status = fail_status_;
        res.set_content("{\"error\":\"busy\"}", "application/json");
        return;
      }
      const std::string echo = last_body_["messages"].back()["content"];
      res.set_content(Json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo: " + echo}}}}}}}.dump(),
                      "application/json");
    });
    server_.Post("/prefix/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      last_body_ = Json::parse(req.body);
      res.set_content(Json{{"data", {{{"embedding", {0.5, -0.25, 1.0}}}}}}.dump(), "application/json");
    });
    server_.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  EndpointConfig config(const std::string& prefix = "") const {
    EndpointConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_) + prefix;
    c.api_key_env = "RVG_TEST_API_KEY";
    c.timeout_seconds = 5;
    return c;
  }

  void fail(int count, int status) {
    fail_next_ = count;
    fail_status_ = status;
  }

  std::string last_auth_;
  Json last_body_;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> fail_next_{0};
  int fail_status_ = 503;
};

}  // namespace

TEST(HttpClient, ChatRoundTripWithAuthFromEnvironment) {
  FakeEndpoint server;
  ::setenv("RVG_TEST_API_KEY", "sk-test", 1);
  auto cfg = server.config();
  cfg.temperature = 0.3;
  HttpChatClient client(cfg);
  EXPECT_EQ(client.complete({{"system", "s"}, {"user", "hello"}}), "echo: hello");
  EXPECT_EQ(server.last_auth_, "Bearer sk-test");
  EXPECT_EQ(server.last_body_["model"], cfg.model);
  EXPECT_EQ(server.last_body_["messages"].size(), 2u);
  EXPECT_DOUBLE_EQ(server.last_body_["temperature"].get<double>(), 0.3);
  ::unsetenv("RVG_TEST_API_KEY");
}

TEST(HttpClient, NoKeyNoHeader) {
  FakeEndpoint server;
  ::unsetenv("RVG_TEST_API_KEY");
  HttpChatClient client(server.config());
  client.complete({{"user", "x"}});
  EXPECT_EQ(server.last_auth_, "");
  EXPECT_FALSE(server.last_body_.contains("temperature"));
}

TEST(HttpClient, EmbeddingWithPathPrefix) {
  FakeEndpoint server;
  auto cfg = server.config("/prefix/");
  cfg.embedding_dim = 3;
  HttpChatClient client(cfg);
  EXPECT_EQ(client.embed("abc"), (std::vector<double>{0.5, -0.25, 1.0}));
  EXPECT_EQ(server.last_body_["input"], "abc");
  EXPECT_EQ(server.last_body_["dimensions"], 3);
}

TEST(HttpClient, ServerErrorsAreRetryable) {
  FakeEndpoint server;
  HttpChatClient client(server.config());
  server.fail(2, 503);
  RetryPolicy p;
  p.sleep = nullptr;
  EXPECT_EQ(with_retry(p, [&] { return client.complete({{"user", "again"}}); }), "echo: again");

  server.fail(1, 429);
  try {
    client.complete({{"user", "x"}});
    FAIL();
  } catch (const EndpointFailure& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_EQ(e.status(), 429);
  }
}

TEST(HttpClient, ClientErrorsAreNotRetried) {
  FakeEndpoint server;
  HttpChatClient client(server.config());
  server.fail(5, 401);
  RetryPolicy p;
  p.sleep = nullptr;
  try {
    with_retry(p, [&] { return client.complete({{"user", "x"}}); });
    FAIL();
  } catch (const EndpointFailure& e) {
    EXPECT_FALSE(e.retryable());
    EXPECT_EQ(e.status(), 401);
  }
}

TEST(HttpClient, MalformedReplyAndUnreachableHost) {
  FakeEndpoint server;
  HttpChatClient client(server.config());
  try {
    client.embed("x");
    FAIL();
  } catch (const EndpointFailure& e) {
    EXPECT_FALSE(e.retryable());
  }

  EndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.timeout_seconds = 1;
  HttpChatClient down(cfg);
  try {
    down.complete({{"user", "x"}});
    FAIL();
  } catch (const EndpointFailure& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_EQ(e.kind(), ErrorKind::EndpointError);
  }
}

TEST(HttpClient, BadBaseUrl) {
  EndpointConfig cfg;
  cfg.base_url = "localhost:8080";
  EXPECT_THROW(HttpChatClient{cfg}, Error);
}
