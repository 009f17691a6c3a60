#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ipoe/errors.hpp"
#include "ipoe/hash.hpp"

namespace ipoe {

enum class Role { system, user };

inline std::string to_string(Role role) { return role == Role::system ? "system" : "user"; }

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

inline ChatMessage system_message(std::string content) {
    if (content.empty()) throw DataError("chat message content must not be empty");
    return ChatMessage{Role::system, std::move(content)};
}

inline ChatMessage user_message(std::string content) {
    if (content.empty()) throw DataError("chat message content must not be empty");
    return ChatMessage{Role::user, std::move(content)};
}

enum class DecodeMode { greedy, sampled };

// Decode settings. In greedy mode the sampling fields are ignored by
// contract. Sampled defaults are top_p=0.9, temperature=0.6, top_k=50.
struct DecodeConfig {
    DecodeMode mode = DecodeMode::greedy;
    double top_p = 0.9;
    double temperature = 0.6;
    int top_k = 50;
    int max_new_tokens = 512;

    static DecodeConfig greedy() { return DecodeConfig{}; }

    static DecodeConfig sampled() {
        DecodeConfig d;
        d.mode = DecodeMode::sampled;
        return d;
    }
};

inline void validate(const DecodeConfig& d) {
    if (d.top_p <= 0.0 || d.top_p > 1.0) throw ConfigError("top_p must be in (0, 1]");
    if (d.temperature < 0.0) throw ConfigError("temperature must be non-negative");
    if (d.top_k < 1) throw ConfigError("top_k must be positive");
    if (d.max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
}

inline nlohmann::json decode_to_json(const DecodeConfig& d) {
    if (d.mode == DecodeMode::greedy) {
        // Sampling fields are contractually ignored, so they stay out of the
        // serialized form (and out of cache keys).
        return nlohmann::json{{"mode", "greedy"}, {"max_new_tokens", d.max_new_tokens}};
    }
    return nlohmann::json{{"mode", "sampled"},
                          {"top_p", d.top_p},
                          {"temperature", d.temperature},
                          {"top_k", d.top_k},
                          {"max_new_tokens", d.max_new_tokens}};
}

inline nlohmann::json messages_to_json(const std::vector<ChatMessage>& messages) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : messages) {
        arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return arr;
}

// Stable digest of the request triple (backend, messages, decode); this is
// the cache key.
inline std::string request_digest(const std::string& backend_descriptor,
                                  const std::vector<ChatMessage>& messages,
                                  const DecodeConfig& decode) {
    nlohmann::json j{{"backend", backend_descriptor},
                     {"messages", messages_to_json(messages)},
                     {"decode", decode_to_json(decode)}};
    return digest128(j.dump());
}

struct Completion {
    std::string text;
    int attempts = 1;
};

// Uniform access to a text-generation backend. Implementations must be safe
// for concurrent complete() calls.
class Backend {
public:
    virtual ~Backend() = default;
    virtual Completion complete(const std::vector<ChatMessage>& messages,
                                const DecodeConfig& decode) = 0;
    virtual std::string descriptor() const = 0;
};

// --- Scripted backend -------------------------------------------------------

// One scripted rule. Either a set of literal substrings that must all occur
// in the concatenated message text, or a regex. Regex rules may reference
// capture groups in the response via $1..$9.
struct ScriptedRule {
    std::vector<std::string> contains;
    std::optional<std::string> pattern;
    std::string response;
};

// Deterministic stand-in for an LLM: first matching rule wins, otherwise the
// default response. A pure function of the request, which makes it the test
// oracle for everything above the gateway.
class ScriptedBackend : public Backend {
public:
    ScriptedBackend() = default;

    explicit ScriptedBackend(std::vector<ScriptedRule> rules, std::string default_response)
        : rules_(std::move(rules)), default_response_(std::move(default_response)) {
        compile();
    }

    ScriptedBackend(ScriptedBackend&& other) noexcept
        : rules_(std::move(other.rules_)), regexes_(std::move(other.regexes_)),
          default_response_(std::move(other.default_response_)),
          rules_digest_(std::move(other.rules_digest_)),
          calls_(other.calls_.load(std::memory_order_relaxed)) {}

    static ScriptedBackend from_json(const nlohmann::json& j) {
        std::vector<ScriptedRule> rules;
        if (j.contains("rules")) {
            for (const auto& r : j["rules"]) {
                ScriptedRule rule;
                if (r.contains("contains")) {
                    if (r["contains"].is_array())
                        rule.contains = r["contains"].get<std::vector<std::string>>();
                    else
                        rule.contains.push_back(r["contains"].get<std::string>());
                }
                if (r.contains("pattern")) rule.pattern = r["pattern"].get<std::string>();
                rule.response = r.at("response").get<std::string>();
                rules.push_back(std::move(rule));
            }
        }
        std::string default_response =
            j.contains("default_response") ? j["default_response"].get<std::string>() : "";
        return ScriptedBackend(std::move(rules), std::move(default_response));
    }

    Completion complete(const std::vector<ChatMessage>& messages,
                        const DecodeConfig& decode) override {
        validate(decode);
        calls_.fetch_add(1, std::memory_order_relaxed);
        std::string text;
        for (const auto& m : messages) {
            if (!text.empty()) text.push_back('\n');
            text += m.content;
        }
        for (size_t i = 0; i < rules_.size(); ++i) {
            const auto& rule = rules_[i];
            bool ok = true;
            for (const auto& needle : rule.contains) {
                if (text.find(needle) == std::string::npos) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            if (rule.pattern) {
                std::smatch m;
                if (!std::regex_search(text, m, regexes_[i])) continue;
                return Completion{m.format(rule.response), 1};
            }
            return Completion{rule.response, 1};
        }
        return Completion{default_response_, 1};
    }

    std::string descriptor() const override { return "scripted:" + rules_digest_; }

    std::uint64_t call_count() const { return calls_.load(std::memory_order_relaxed); }
    void reset_call_count() { calls_.store(0, std::memory_order_relaxed); }

private:
    void compile() {
        nlohmann::json fingerprint = nlohmann::json::array();
        regexes_.resize(rules_.size());
        for (size_t i = 0; i < rules_.size(); ++i) {
            const auto& rule = rules_[i];
            if (rule.pattern) {
                try {
                    regexes_[i] = std::regex(*rule.pattern);
                } catch (const std::regex_error& e) {
                    throw ConfigError("invalid scripted rule pattern '" + *rule.pattern +
                                      "': " + e.what());
                }
            }
            fingerprint.push_back({{"contains", rule.contains},
                                   {"pattern", rule.pattern ? *rule.pattern : ""},
                                   {"response", rule.response}});
        }
        fingerprint.push_back(default_response_);
        rules_digest_ = digest64(fingerprint.dump());
    }

    std::vector<ScriptedRule> rules_;
    std::vector<std::regex> regexes_;
    std::string default_response_;
    std::string rules_digest_;
    std::atomic<std::uint64_t> calls_{0};
};

// --- Rate limiting ----------------------------------------------------------

// Token bucket; acquire() blocks until a token is available. A non-positive
// rate disables limiting.
class TokenBucket {
public:
    TokenBucket(double tokens_per_second, double burst)
        : rate_(tokens_per_second), capacity_(burst), tokens_(burst),
          last_(std::chrono::steady_clock::now()) {}

    void acquire() {
        if (rate_ <= 0.0) return;
        std::unique_lock<std::mutex> lock(mutex_);
        for (;;) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
            cv_.wait_for(lock, wait);
        }
    }

private:
    void refill() {
        const auto now = std::chrono::steady_clock::now();
        const double elapsed = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(capacity_, tokens_ + elapsed * rate_);
    }

    double rate_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
    std::condition_variable cv_;
};

}  // namespace ipoe
