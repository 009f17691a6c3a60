#include <catch2/catch.hpp>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "ipoe/backend.hpp"
#include "ipoe/cache.hpp"
#include "ipoe/http_backend.hpp"

#include "helpers.hpp"

using namespace ipoe;

namespace {

std::vector<ChatMessage> classify_messages(const std::string& text) {
    return {system_message("Respond with one label."), user_message(text)};
}

ScriptedBackend boredom_backend() {
    std::vector<ScriptedRule> rules;
    ScriptedRule rule;
    rule.pattern = "classify.*boredom";
    rule.response = "{\"label\": \"boredom\"}";
    rules.push_back(rule);
    return ScriptedBackend(std::move(rules), "{\"label\": \"unknown\"}");
}

}  // namespace

TEST_CASE("scripted backend applies the first matching rule") {
    ScriptedBackend backend = boredom_backend();
    const auto hit =
        backend.complete(classify_messages("classify this text about boredom"), DecodeConfig::greedy());
    CHECK(hit.text == "{\"label\": \"boredom\"}");

    const auto miss = backend.complete(classify_messages("something else"), DecodeConfig::greedy());
    CHECK(miss.text == "{\"label\": \"unknown\"}");
    CHECK(backend.call_count() == 2);
}

TEST_CASE("scripted backend is a pure function of the request") {
    ScriptedBackend backend = boredom_backend();
    const auto messages = classify_messages("please classify: boredom?");
    const auto first = backend.complete(messages, DecodeConfig::greedy());
    for (int i = 0; i < 5; ++i) {
        CHECK(backend.complete(messages, DecodeConfig::greedy()).text == first.text);
    }
}

TEST_CASE("scripted rules support literal contains sets and capture groups") {
    std::vector<ScriptedRule> rules;
    ScriptedRule both;
    both.contains = {"alpha", "beta"};
    both.response = "both";
    rules.push_back(both);
    ScriptedRule capture;
    capture.pattern = "echo (\\w+)";
    capture.response = "got $1";
    rules.push_back(capture);
    ScriptedBackend backend(std::move(rules), "none");

    CHECK(backend.complete(classify_messages("beta then alpha"), DecodeConfig::greedy()).text ==
          "both");
    CHECK(backend.complete(classify_messages("echo hello"), DecodeConfig::greedy()).text ==
          "got hello");
    CHECK(backend.complete(classify_messages("alpha only"), DecodeConfig::greedy()).text ==
          "none");
}

TEST_CASE("http backend retries transient failures with bounded attempts") {
    std::atomic<int> requests{0};
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        const int n = ++requests;
        if (n <= 2) {
            res.status = 503;
            res.set_content("busy", "text/plain");
            return;
        }
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"pong"}}]})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    config.model = "test-model";
    config.backoff_ms = {1, 2};
    HttpBackend backend(config);

    const Completion completion =
        backend.complete(classify_messages("ping"), DecodeConfig::greedy());
    CHECK(completion.text == "pong");
    CHECK(completion.attempts == 3);
    CHECK(requests.load() == 3);

    server.stop();
    server_thread.join();
}

TEST_CASE("http backend surfaces auth and malformed-response errors") {
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (req.body.find("denied") != std::string::npos) {
            res.status = 401;
            res.set_content("no", "text/plain");
            return;
        }
        res.set_content("{\"not\": \"a completion\"}", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    config.model = "test-model";
    config.backoff_ms = {1, 1};
    HttpBackend backend(config);

    CHECK_THROWS_AS(backend.complete(classify_messages("denied request"), DecodeConfig::greedy()),
                    AuthError);
    CHECK_THROWS_AS(backend.complete(classify_messages("ok request"), DecodeConfig::greedy()),
                    MalformedResponseError);

    server.stop();
    server_thread.join();
}

TEST_CASE("unreachable backend raises a transport error after retries") {
    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:1/v1";  // nothing listens there
    config.model = "test-model";
    config.backoff_ms = {1, 1};
    HttpBackend backend(config);
    CHECK_THROWS_AS(backend.complete(classify_messages("ping"), DecodeConfig::greedy()),
                    TransportError);
}

TEST_CASE("cache returns stored responses without backend calls") {
    ipoe::test::TempDir dir;
    ScriptedBackend inner = boredom_backend();
    CachingBackend cached(inner, dir.path(), /*cache_sampled=*/false);

    const auto messages = classify_messages("classify: boredom text");
    const auto first = cached.complete(messages, DecodeConfig::greedy());
    CHECK(inner.call_count() == 1);

    const auto second = cached.complete(messages, DecodeConfig::greedy());
    CHECK(second.text == first.text);
    CHECK(inner.call_count() == 1);  // zero extra backend invocations
    CHECK(cached.hits() == 1);
    CHECK(cached.misses() == 1);
}

TEST_CASE("cache keys include the decode config") {
    ipoe::test::TempDir dir;
    ScriptedBackend inner = boredom_backend();
    CachingBackend cached(inner, dir.path(), /*cache_sampled=*/true);

    const auto messages = classify_messages("classify: boredom text");
    cached.complete(messages, DecodeConfig::greedy());
    cached.complete(messages, DecodeConfig::sampled());
    CHECK(inner.call_count() == 2);  // separate entries

    cached.complete(messages, DecodeConfig::greedy());
    cached.complete(messages, DecodeConfig::sampled());
    CHECK(inner.call_count() == 2);
}

TEST_CASE("sampled calls stay uncached without an explicit seed") {
    ipoe::test::TempDir dir;
    ScriptedBackend inner = boredom_backend();
    CachingBackend cached(inner, dir.path(), /*cache_sampled=*/false);

    const auto messages = classify_messages("classify: boredom text");
    cached.complete(messages, DecodeConfig::sampled());
    cached.complete(messages, DecodeConfig::sampled());
    CHECK(inner.call_count() == 2);
}

TEST_CASE("exchange cache round-trips byte-exactly") {
    ipoe::test::TempDir dir;
    ExchangeCache cache(dir.path());

    BackendExchange exchange;
    exchange.backend_descriptor = "scripted:test";
    exchange.messages = classify_messages("round trip \"quotes\" and \n newlines");
    exchange.decode = DecodeConfig::sampled();
    exchange.response = "exact é bytes \t here";
    exchange.timestamp = 1234567;
    exchange.attempt_count = 2;

    cache.store(exchange);
    const auto loaded = cache.load(exchange.key());
    REQUIRE(loaded.has_value());
    CHECK(*loaded == exchange.response);
    CHECK_FALSE(cache.load("0000000000000000ffffffffffffffff").has_value());
}

TEST_CASE("the token bucket throttles bursts beyond its capacity") {
    using clock = std::chrono::steady_clock;

    TokenBucket unlimited(0.0, 1.0);
    const auto t0 = clock::now();
    for (int i = 0; i < 100; ++i) unlimited.acquire();
    CHECK(std::chrono::duration<double>(clock::now() - t0).count() < 0.5);

    // 2 burst tokens, 50/s refill: the third acquire must wait ~20ms.
    TokenBucket bucket(50.0, 2.0);
    bucket.acquire();
    bucket.acquire();
    const auto t1 = clock::now();
    bucket.acquire();
    CHECK(std::chrono::duration<double>(clock::now() - t1).count() >= 0.01);
}
