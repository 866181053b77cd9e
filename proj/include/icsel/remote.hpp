#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "icsel/backend.hpp"

namespace icsel {

struct RemoteConfig {
  std::string endpoint;  // e.g. "http://127.0.0.1:8080"
  std::string model;
  std::string api_key_env = "ICSEL_API_KEY";  // name of the env var, not the key
  int context_window_tokens = 2048;
  int top_logprobs = 50;
  int max_attempts = 5;
  int backoff_initial_ms = 200;
  double backoff_factor = 2.0;
  int backoff_max_ms = 5000;
  int timeout_s = 60;
};

// Completion-API client. score_labels asks for one generated token with top
// log-probabilities and reads the candidates off the next-position
// distribution; perplexity echoes the text and averages its token
// log-probabilities; count_tokens uses the service's tokenizer endpoint.
//
// Transient failures (connection errors, 429, 5xx) retry with bounded
// exponential backoff; anything else fails immediately.
class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig cfg)
      : cfg_(std::move(cfg)), client_(cfg_.endpoint) {
    if (cfg_.endpoint.empty()) throw ConfigError("remote: endpoint required");
    if (cfg_.model.empty()) throw ConfigError("remote: model required");
    client_.set_read_timeout(cfg_.timeout_s, 0);
    client_.set_connection_timeout(cfg_.timeout_s, 0);
    if (const char* key = std::getenv(cfg_.api_key_env.c_str());
        key != nullptr && key[0] != '\0')
      client_.set_default_headers({{"Authorization", std::string("Bearer ") + key}});
  }

  std::string id() const override { return "remote:" + cfg_.model; }

  LabelScores score_labels(const RenderedPrompt& prompt) override {
    json body{{"model", cfg_.model},
              {"prompt", prompt.text},
              {"max_tokens", 1},
              {"echo", false},
              {"logprobs", cfg_.top_logprobs}};
    json resp = post("/v1/completions", body);
    const json& top = resp.at("choices").at(0).at("logprobs").at("top_logprobs").at(0);
    LabelScores out;
    for (const auto& cand : prompt.label_candidates) {
      // Completion tokenizers usually attach the leading space to the token.
      if (top.contains(cand))
        out.scores.push_back(top.at(cand).get<double>());
      else if (top.contains(" " + cand))
        out.scores.push_back(top.at(" " + cand).get<double>());
      else
        throw Error("remote: candidate '" + cand + "' not in the top " +
                    std::to_string(cfg_.top_logprobs) +
                    " log-probs; raise top_logprobs or change verbalizers");
    }
    return out;
  }

  double perplexity(const std::string& text) override {
    if (text.empty()) throw Error("perplexity of empty text");
    json body{{"model", cfg_.model},
              {"prompt", text},
              {"max_tokens", 0},
              {"echo", true},
              {"logprobs", 0}};
    json resp = post("/v1/completions", body);
    const json& lps = resp.at("choices").at(0).at("logprobs").at("token_logprobs");
    double sum = 0.0;
    long n = 0;
    for (const auto& lp : lps) {
      if (lp.is_null()) continue;  // first token has no conditional probability
      sum += lp.get<double>();
      ++n;
    }
    if (n == 0) throw Error("remote: no token log-probs returned");
    return std::exp(-sum / static_cast<double>(n));
  }

  int count_tokens(const std::string& text) override {
    json resp = post("/v1/tokenize", json{{"model", cfg_.model}, {"text", text}});
    if (resp.contains("count")) return resp.at("count").get<int>();
    return static_cast<int>(resp.at("tokens").size());
  }

  int context_window() const override { return cfg_.context_window_tokens; }

 private:
  json post(const std::string& path, const json& body) {
    std::string payload = body.dump();
    int delay_ms = cfg_.backoff_initial_ms;
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      if (attempt > 1) {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        delay_ms = std::min(static_cast<int>(delay_ms * cfg_.backoff_factor),
                            cfg_.backoff_max_ms);
      }
      auto res = client_.Post(path, payload, "application/json");
      if (!res) {
        last_error = "connection error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      json parsed = json::parse(res->body, nullptr, false);
      if (res->status != 200) {
        std::string code, message = res->body;
        if (parsed.is_object() && parsed.contains("error")) {
          code = parsed["error"].value("code", "");
          message = parsed["error"].value("message", message);
        }
        if (code == "context_length_exceeded")
          throw ContextOverflowError("remote: " + message);
        throw TransportError("remote: HTTP " + std::to_string(res->status) +
                             ": " + message);
      }
      if (parsed.is_discarded())
        throw TransportError("remote: invalid JSON response from " + path);
      return parsed;
    }
    throw TransportError("remote: " + path + " failed after " +
                         std::to_string(cfg_.max_attempts) +
                         " attempts; last error: " + last_error);
  }

  RemoteConfig cfg_;
  httplib::Client client_;
};

}  // namespace icsel
