#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ipoe/backend.hpp"
#include "ipoe/errors.hpp"

namespace ipoe {

struct HttpBackendConfig {
    std::string base_url;  // e.g. http://localhost:8000/v1
    std::string model;
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_seconds = 120;
    int max_attempts = 3;
    std::vector<int> backoff_ms = {1000, 4000};
    double rate_limit_per_second = 0.0;  // <= 0 disables limiting
};

// OpenAI-compatible chat-completions client. Transient failures (transport,
// 429, 5xx) are retried with bounded backoff; auth failures are not.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config)
        : config_(std::move(config)),
          bucket_(config_.rate_limit_per_second, std::max(1.0, config_.rate_limit_per_second)) {
        if (config_.base_url.empty()) throw ConfigError("http backend requires base_url");
        if (config_.model.empty()) throw ConfigError("http backend requires model");
        split_base_url();
    }

    Completion complete(const std::vector<ChatMessage>& messages,
                        const DecodeConfig& decode) override {
        validate(decode);
        const std::string payload = build_payload(messages, decode).dump();
        std::string last_error;
        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            if (attempt > 1) backoff(attempt - 2);
            bucket_.acquire();
            auto result = post(payload);
            if (!result) {
                last_error = "transport failure: " + httplib::to_string(result.error());
                continue;
            }
            if (result->status == 401 || result->status == 403) {
                throw AuthError("backend rejected credentials (HTTP " +
                                std::to_string(result->status) + ")");
            }
            if (result->status == 429 || result->status >= 500) {
                last_error = "HTTP " + std::to_string(result->status);
                continue;
            }
            if (result->status != 200) {
                throw TransportError("unexpected HTTP status " + std::to_string(result->status) +
                                     ": " + result->body);
            }
            return Completion{extract_content(result->body), attempt};
        }
        throw TransportError("backend unreachable after " + std::to_string(config_.max_attempts) +
                             " attempts (" + last_error + ")");
    }

    std::string descriptor() const override {
        return "http:" + config_.base_url + ":" + config_.model;
    }

private:
    nlohmann::json build_payload(const std::vector<ChatMessage>& messages,
                                 const DecodeConfig& decode) const {
        nlohmann::json payload{{"model", config_.model},
                               {"messages", messages_to_json(messages)},
                               {"max_tokens", decode.max_new_tokens}};
        if (decode.mode == DecodeMode::greedy) {
            payload["temperature"] = 0.0;
        } else {
            payload["temperature"] = decode.temperature;
            payload["top_p"] = decode.top_p;
            payload["top_k"] = decode.top_k;
        }
        return payload;
    }

    httplib::Result post(const std::string& payload) {
        httplib::Client client(host_);
        client.set_connection_timeout(config_.timeout_seconds, 0);
        client.set_read_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        return client.Post(path_prefix_ + "/chat/completions", headers, payload,
                           "application/json");
    }

    static std::string extract_content(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            throw MalformedResponseError("response body is not JSON");
        }
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
            throw MalformedResponseError("response has no choices");
        }
        const auto& first = j["choices"][0];
        if (!first.contains("message") || !first["message"].contains("content") ||
            !first["message"]["content"].is_string()) {
            throw MalformedResponseError("response choice has no message content");
        }
        return first["message"]["content"].get<std::string>();
    }

    void backoff(int step) {
        int ms = 1000;
        if (!config_.backoff_ms.empty()) {
            const size_t i = std::min<size_t>(static_cast<size_t>(std::max(step, 0)),
                                              config_.backoff_ms.size() - 1);
            ms = config_.backoff_ms[i];
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    }

    // Splits "http://host:port/v1" into the client target and a path prefix.
    void split_base_url() {
        const std::string& url = config_.base_url;
        size_t scheme_end = url.find("//");
        size_t path_start =
            url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 2);
        if (path_start == std::string::npos) {
            host_ = url;
            path_prefix_.clear();
        } else {
            host_ = url.substr(0, path_start);
            path_prefix_ = url.substr(path_start);
            while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        }
    }

    HttpBackendConfig config_;
    std::string host_;
    std::string path_prefix_;
    TokenBucket bucket_;
};

}  // namespace ipoe
