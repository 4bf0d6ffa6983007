#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tabreason/common.hpp"
#include "tabreason/rewards.hpp"

namespace tabreason::llm {

struct ChatRequest {
  std::string model;
  std::optional<std::string> system;
  std::string user;
  double temperature = 0.0;
  std::size_t max_tokens = 1024;

  void validate() const;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  Usage usage;
};

class ClientError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public ClientError {
 public:
  explicit TimeoutError(const std::string& what)
      : ClientError("timeout: " + what) {}
};

class HttpStatusError : public ClientError {
 public:
  HttpStatusError(int status, const std::string& body)
      : ClientError("http status " + std::to_string(status) + ": " + body),
        status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class ExhaustedRetries : public ClientError {
 public:
  ExhaustedRetries(std::size_t attempts, const std::string& last)
      : ClientError("gave up after " + std::to_string(attempts) +
                    " attempts; last error: " + last),
        attempts_(attempts) {}
  std::size_t attempts() const { return attempts_; }

 private:
  std::size_t attempts_;
};

/// Response body that is not a chat completion.
class ProtocolError : public ClientError {
 public:
  explicit ProtocolError(const std::string& what)
      : ClientError("protocol error: " + what) {}
};

/// Anything that answers single-turn chat requests. Implementations must be
/// safe to call from several threads at once.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
};

struct ClientConfig {
  std::string endpoint_url = "http://127.0.0.1:8000";
  std::string api_key_env_var = "OPENAI_API_KEY";
  std::chrono::milliseconds timeout{60000};
  std::size_t max_retries = 3;
  std::size_t max_in_flight = 8;
  std::chrono::milliseconds backoff_initial{500};

  void validate() const;
};

nlohmann::json request_to_json(const ChatRequest& request);
/// First choice's message content; throws ProtocolError otherwise.
ChatResponse response_from_json(const nlohmann::json& body);

/// Caps concurrent holders at a runtime limit.
class AdmissionGate {
 public:
  explicit AdmissionGate(std::size_t limit);
  void acquire();
  void release();
  std::size_t limit() const { return limit_; }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t limit_;
  std::size_t in_use_ = 0;
};

/// OpenAI-compatible POST {endpoint}/v1/chat/completions.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(ClientConfig config);
  ChatResponse chat(const ChatRequest& request) override;

 private:
  ChatResponse attempt(const ChatRequest& request);

  ClientConfig config_;
  AdmissionGate gate_;
};

struct MockBehavior {
  double consistency_rate = 1.0;
  double verbosity_rate = 0.0;
  double judge_agree_rate = 1.0;
  // Whitespace tokens a verbose trace is padded past.
  std::size_t verbose_tokens = 1600;

  void validate() const;
};

/// Deterministic stand-in for both the trace generator and the judges.
/// Every reply depends only on (seed, request), never on call order.
class MockChatClient final : public ChatClient {
 public:
  MockChatClient(std::uint64_t seed, MockBehavior behavior,
                 rewards::MatchConfig match = {});
  ChatResponse chat(const ChatRequest& request) override;

 private:
  ChatResponse generate(const ChatRequest& request, Rng& rng) const;
  ChatResponse judge_trace(const ChatRequest& request, Rng& rng) const;
  ChatResponse judge_prediction(const ChatRequest& request, Rng& rng) const;

  std::uint64_t seed_;
  MockBehavior behavior_;
  rewards::MatchConfig match_;
};

}  // namespace tabreason::llm
