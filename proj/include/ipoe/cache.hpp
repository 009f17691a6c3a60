#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/backend.hpp"
#include "ipoe/errors.hpp"

namespace ipoe {

// One request/response pair, as persisted on disk.
struct BackendExchange {
    std::string backend_descriptor;
    std::vector<ChatMessage> messages;
    DecodeConfig decode;
    std::string response;
    std::int64_t timestamp = 0;
    int attempt_count = 1;

    std::string key() const { return request_digest(backend_descriptor, messages, decode); }
};

inline nlohmann::json exchange_to_json(const BackendExchange& e) {
    return nlohmann::json{{"request",
                           {{"backend", e.backend_descriptor},
                            {"messages", messages_to_json(e.messages)},
                            {"decode", decode_to_json(e.decode)}}},
                          {"response", e.response},
                          {"timestamp", e.timestamp},
                          {"attempt_count", e.attempt_count}};
}

// Disk-backed exchange store: one file per key digest, atomic writes,
// concurrent readers with serialized writers.
class ExchangeCache {
public:
    explicit ExchangeCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw CacheIoError("cannot create cache directory " + dir_.string());
    }

    std::optional<std::string> load(const std::string& key) const {
        std::shared_lock lock(mutex_);
        const auto path = entry_path(key);
        std::ifstream in(path, std::ios::binary);
        if (!in) return std::nullopt;
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(content);
            return j.at("response").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw CacheIoError("corrupt cache entry " + path.string() + ": " + e.what());
        }
    }

    void store(const BackendExchange& exchange) {
        std::unique_lock lock(mutex_);
        const auto path = entry_path(exchange.key());
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw CacheIoError("cannot write cache entry " + path.string());
            out << exchange_to_json(exchange).dump();
            if (!out) throw CacheIoError("short write on cache entry " + path.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw CacheIoError("cannot finalize cache entry " + path.string());
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path entry_path(const std::string& key) const {
        return dir_ / (key + ".json");
    }

    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
};

// Wraps a backend with the persistent cache. Greedy requests are cached
// always; sampled requests only when the run carries an explicit seed
// (cache_sampled), so caching never freezes intended stochasticity.
// Cache I/O failures degrade to an uncached call with a warning.
class CachingBackend : public Backend {
public:
    CachingBackend(Backend& inner, std::filesystem::path cache_dir, bool cache_sampled)
        : inner_(inner), cache_(std::move(cache_dir)), cache_sampled_(cache_sampled) {}

    Completion complete(const std::vector<ChatMessage>& messages,
                        const DecodeConfig& decode) override {
        const bool cacheable = decode.mode == DecodeMode::greedy || cache_sampled_;
        if (!cacheable) return inner_.complete(messages, decode);

        const std::string key = request_digest(inner_.descriptor(), messages, decode);
        try {
            if (auto cached = cache_.load(key)) {
                hits_.fetch_add(1, std::memory_order_relaxed);
                return Completion{*cached, 0};
            }
        } catch (const CacheIoError& e) {
            warn(e.what());
        }
        misses_.fetch_add(1, std::memory_order_relaxed);
        Completion completion = inner_.complete(messages, decode);
        BackendExchange exchange;
        exchange.backend_descriptor = inner_.descriptor();
        exchange.messages = messages;
        exchange.decode = decode;
        exchange.response = completion.text;
        exchange.timestamp = std::chrono::duration_cast<std::chrono::seconds>(
                                 std::chrono::system_clock::now().time_since_epoch())
                                 .count();
        exchange.attempt_count = completion.attempts;
        try {
            cache_.store(exchange);
        } catch (const CacheIoError& e) {
            warn(e.what());
        }
        return completion;
    }

    std::string descriptor() const override { return inner_.descriptor(); }

    std::uint64_t hits() const { return hits_.load(std::memory_order_relaxed); }
    std::uint64_t misses() const { return misses_.load(std::memory_order_relaxed); }

private:
    void warn(const std::string& msg) {
        warnings_.fetch_add(1, std::memory_order_relaxed);
        std::cerr << "warning: cache degraded to uncached call: " << msg << '\n';
    }

    Backend& inner_;
    ExchangeCache cache_;
    bool cache_sampled_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
    std::atomic<std::uint64_t> warnings_{0};
};

}  // namespace ipoe
