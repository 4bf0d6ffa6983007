#include "tabreason/llm_client.hpp"

#include <cstdlib>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "tabreason/decimal.hpp"
#include "tabreason/prompts.hpp"

namespace tabreason::llm {

using nlohmann::json;

void ChatRequest::validate() const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature < 0");
  if (max_tokens < 1) throw std::invalid_argument("max_tokens < 1");
}

void ClientConfig::validate() const {
  if (max_in_flight < 1) throw std::invalid_argument("max_in_flight < 1");
  if (timeout.count() <= 0) throw std::invalid_argument("timeout must be > 0");
}

void MockBehavior::validate() const {
  for (double r : {consistency_rate, verbosity_rate, judge_agree_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw std::invalid_argument("mock rates must be in [0, 1]");
    }
  }
}

json request_to_json(const ChatRequest& request) {
  json messages = json::array();
  if (request.system) {
    messages.push_back({{"role", "system"}, {"content", *request.system}});
  }
  messages.push_back({{"role", "user"}, {"content", request.user}});
  json body = json::object();
  body["model"] = request.model;
  body["messages"] = std::move(messages);
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  return body;
}

ChatResponse response_from_json(const json& body) {
  const auto choices = body.find("choices");
  if (choices == body.end() || !choices->is_array() || choices->empty()) {
    throw ProtocolError("response has no choices");
  }
  const auto& first = (*choices)[0];
  if (!first.contains("message") || !first["message"].contains("content") ||
      !first["message"]["content"].is_string()) {
    throw ProtocolError("first choice has no message content");
  }
  ChatResponse out;
  out.text = first["message"]["content"].get<std::string>();
  if (auto u = body.find("usage"); u != body.end() && u->is_object()) {
    out.usage.prompt_tokens = u->value("prompt_tokens", 0);
    out.usage.completion_tokens = u->value("completion_tokens", 0);
  }
  return out;
}

AdmissionGate::AdmissionGate(std::size_t limit) : limit_(limit) {
  if (limit == 0) throw std::invalid_argument("admission limit must be >= 1");
}

void AdmissionGate::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_use_ < limit_; });
  ++in_use_;
}

void AdmissionGate::release() {
  {
    std::lock_guard lock(mu_);
    --in_use_;
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------------------

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // full request path
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto slash = url.find('/', host_begin);
  Endpoint ep;
  ep.origin = url.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  ep.path = prefix + "/v1/chat/completions";
  return ep;
}

bool transient_status(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpChatClient::HttpChatClient(ClientConfig config)
    : config_(std::move(config)), gate_(config_.max_in_flight) {
  config_.validate();
}

ChatResponse HttpChatClient::attempt(const ChatRequest& request) {
  const Endpoint ep = split_endpoint(config_.endpoint_url);
  httplib::Client cli(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(
      config_.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!config_.api_key_env_var.empty()) {
    if (const char* key = std::getenv(config_.api_key_env_var.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const std::string body = request_to_json(request).dump();

  const auto started = std::chrono::steady_clock::now();
  auto res = cli.Post(ep.path, headers, body, "application/json");
  if (!res) {
    const auto err = res.error();
    const auto elapsed = std::chrono::steady_clock::now() - started;
    if (err == httplib::Error::Read || err == httplib::Error::Write ||
        elapsed >= config_.timeout) {
      throw TimeoutError(httplib::to_string(err));
    }
    throw ClientError("transport error: " + httplib::to_string(err));
  }
  if (res->status != 200) throw HttpStatusError(res->status, res->body);
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(e.what());
  }
  return response_from_json(parsed);
}

ChatResponse HttpChatClient::chat(const ChatRequest& request) {
  request.validate();
  gate_.acquire();
  struct Release {
    AdmissionGate& g;
    ~Release() { g.release(); }
  } release{gate_};

  auto backoff = config_.backoff_initial;
  std::string last;
  const std::size_t attempts = config_.max_retries + 1;
  for (std::size_t i = 0; i < attempts; ++i) {
    try {
      return attempt(request);
    } catch (const HttpStatusError& e) {
      if (!transient_status(e.status()) || config_.max_retries == 0) throw;
      last = e.what();
    } catch (const ProtocolError&) {
      throw;
    } catch (const ClientError& e) {
      // Timeouts and transport failures.
      if (config_.max_retries == 0) throw;
      last = e.what();
    }
    if (i + 1 < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw ExhaustedRetries(attempts, last);
}

// ---------------------------------------------------------------------------

MockChatClient::MockChatClient(std::uint64_t seed, MockBehavior behavior,
                               rewards::MatchConfig match)
    : seed_(seed), behavior_(behavior), match_(std::move(match)) {
  behavior_.validate();
}

ChatResponse MockChatClient::chat(const ChatRequest& request) {
  request.validate();
  std::uint64_t h = fnv1a64(request.model);
  h = fnv1a64(request.system.value_or(""), h);
  h = fnv1a64(request.user, h);
  Rng rng(seed_ ^ h);
  const std::string& u = request.user;
  if (u.find(prompts::kExtractedLabel) != std::string::npos ||
      u.find(prompts::kFullResponseLabel) != std::string::npos) {
    return judge_prediction(request, rng);
  }
  if (u.find(prompts::kTraceAnswerLabel) != std::string::npos) {
    return judge_trace(request, rng);
  }
  if (u.find(prompts::kGoldLabel) != std::string::npos) {
    return generate(request, rng);
  }
  return {"I am not sure what you are asking.", {}};
}

namespace {

// A value that the matcher will not accept as `gold`.
std::string perturb(const std::string& gold, Rng& rng) {
  const std::string g = trim(gold);
  const std::string lower = to_lower(g);
  if (lower == "true") return "false";
  if (lower == "false") return "true";
  if (auto d = Decimal::parse(g)) {
    std::int64_t step = 1;
    for (int i = 0; i < d->scale(); ++i) step *= 10;
    const auto delta = rng.between(1, 9) * (rng.bernoulli(0.5) ? 1 : -1);
    return Decimal::from_parts(d->unscaled() + delta * step, d->scale())
        .to_string();
  }
  return "not " + g;
}

}  // namespace

ChatResponse MockChatClient::generate(const ChatRequest& request,
                                      Rng& rng) const {
  const std::string gold =
      prompts::field_after(request.user, prompts::kGoldLabel).value_or("");
  const std::string question =
      prompts::field_after(request.user, prompts::kQuestionLabel).value_or("");
  const bool consistent = rng.bernoulli(behavior_.consistency_rate);
  const bool verbose = rng.bernoulli(behavior_.verbosity_rate);
  const std::string answer = consistent ? gold : perturb(gold, rng);

  std::string text =
      "Step 1: The question asks: " + question +
      "\nStep 2: Locate the rows and columns of the table that the question "
      "names.\nStep 3: Apply the operation the question asks for to those "
      "cells.\nStep 4: The result is " + answer + ".";
  if (verbose) {
    std::size_t tokens = 0;
    for (char c : text) tokens += c == ' ' ? 1 : 0;
    text += "\nStep 5: Re-reading the table once more to double check:";
    while (tokens <= behavior_.verbose_tokens) {
      text += " checking again";
      tokens += 2;
    }
  }
  text += "\n";
  text += prompts::kFinalAnswerMarker;
  text += " " + answer;
  return {text, {}};
}

ChatResponse MockChatClient::judge_trace(const ChatRequest& request,
                                         Rng& rng) const {
  const auto ref = prompts::field_after(request.user, prompts::kReferenceLabel);
  const auto concl =
      prompts::field_after(request.user, prompts::kTraceAnswerLabel);
  const bool rule = ref && concl && rewards::answer_matches(*concl, *ref, match_);
  const bool agree = rng.bernoulli(behavior_.judge_agree_rate);
  const bool verdict = agree ? rule : !rule;
  return {std::string("The trace was checked against the table.\n") +
              (verdict ? "YES" : "NO"),
          {}};
}

ChatResponse MockChatClient::judge_prediction(const ChatRequest& request,
                                              Rng& rng) const {
  const std::string& u = request.user;
  bool rule = false;
  const auto extracted = u.find(prompts::kExtractedLabel);
  const auto golds_at = u.find(prompts::kGoldListLabel);
  if (extracted != std::string::npos && golds_at != std::string::npos) {
    const std::string pred =
        u.substr(extracted + std::char_traits<char>::length(prompts::kExtractedLabel));
    std::string gold_block =
        u.substr(golds_at + std::char_traits<char>::length(prompts::kGoldListLabel),
                 extracted - golds_at -
                     std::char_traits<char>::length(prompts::kGoldListLabel));
    std::vector<std::string> golds;
    std::size_t pos = 0;
    while (pos < gold_block.size()) {
      auto nl = gold_block.find('\n', pos);
      if (nl == std::string::npos) nl = gold_block.size();
      const std::string line = gold_block.substr(pos, nl - pos);
      if (line.rfind("- ", 0) == 0) golds.push_back(line.substr(2));
      pos = nl + 1;
    }
    if (!golds.empty()) {
      rule = rewards::accuracy_reward("<answer>" + trim(pred) + "</answer>",
                                      golds, match_) == 1;
    }
  }
  // A prediction without answer tags is never correct under the rule.
  const bool agree = rng.bernoulli(behavior_.judge_agree_rate);
  const bool verdict = agree ? rule : !rule;
  return {std::string("Compared the prediction with the ground truth.\n") +
              (verdict ? "CORRECT" : "INCORRECT"),
          {}};
}

}  // namespace tabreason::llm
