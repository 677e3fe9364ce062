#pragma once

// ChatClient over an OpenAI-compatible HTTP(S) endpoint.

#include <cstdlib>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "reviewgraph/orchestration.hpp"

namespace rvg {

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(EndpointConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto scheme = config_.base_url.find("://");
    if (scheme == std::string::npos) throw Error(ErrorKind::BadConfig, "base_url needs a scheme: " + config_.base_url);
    const auto slash = config_.base_url.find('/', scheme + 3);
    origin_ = config_.base_url.substr(0, slash);
    if (slash != std::string::npos) prefix_ = config_.base_url.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (!config_.api_key_env.empty())
      if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  }

  std::string complete(const std::vector<ChatMessage>& messages) override {
    Json body{{"model", config_.model}, {"messages", Json::array()}};
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    if (config_.temperature) body["temperature"] = *config_.temperature;
    const Json reply = post(config_.chat_path, body);
    try {
      const Json& content = reply.at("choices").at(0).at("message").at("content");
      return content.is_null() ? std::string() : content.get<std::string>();
    } catch (const Json::exception& ex) {
      throw EndpointFailure(std::string("unexpected chat reply shape: ") + ex.what(), 200, false);
    }
  }

  std::vector<double> embed(const std::string& text) override {
    Json body{{"model", config_.embedding_model}, {"input", text}};
    if (config_.embedding_dim) body["dimensions"] = *config_.embedding_dim;
    const Json reply = post(config_.embedding_path, body);
    try {
      return reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const Json::exception& ex) {
      throw EndpointFailure(std::string("unexpected embedding reply shape: ") + ex.what(), 200, false);
    }
  }

  const EndpointConfig& config() const { return config_; }

 private:
  Json post(const std::string& path, const Json& body) {
    // A client per request: httplib clients are not meant to be shared
    // across threads.
    httplib::Client cli(origin_);
    const auto secs = static_cast<time_t>(config_.timeout_seconds);
    const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace(config_.auth_header, config_.auth_prefix + api_key_);

    const std::string url = prefix_ + path;
    auto res = cli.Post(url, headers, body.dump(), "application/json");
    if (!res)
      throw EndpointFailure("POST " + origin_ + url + " failed: " + httplib::to_string(res.error()), 0, true);
    if (res->status != 200) {
      const bool retryable = res->status == 429 || res->status >= 500;
      std::string snippet = res->body.substr(0, 200);
      throw EndpointFailure("POST " + origin_ + url + " returned HTTP " + std::to_string(res->status) + ": " + snippet,
                            res->status, retryable);
    }
    try {
      return Json::parse(res->body);
    } catch (const Json::parse_error& ex) {
      throw EndpointFailure(std::string("reply is not JSON: ") + ex.what(), res->status, false);
    }
  }

  EndpointConfig config_;
  std::string origin_;
  std::string prefix_;
  std::string api_key_;
};

}  // namespace rvg
