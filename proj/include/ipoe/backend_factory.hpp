#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "ipoe/backend.hpp"
#include "ipoe/cache.hpp"
#include "ipoe/config.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/http_backend.hpp"

namespace ipoe {

// Owns the configured backend and its optional cache wrapper; `active()` is
// what the pipeline talks to.
struct BackendStack {
    std::unique_ptr<Backend> inner;
    std::unique_ptr<CachingBackend> caching;

    Backend& active() { return caching ? static_cast<Backend&>(*caching) : *inner; }
};

inline std::unique_ptr<Backend> make_inner_backend(const BackendSettings& settings) {
    if (settings.type == "scripted") {
        if (settings.script_path.empty())
            throw ConfigError("scripted backend requires backend.script");
        std::ifstream in(settings.script_path);
        if (!in) throw ConfigError("cannot open backend script: " + settings.script_path);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded())
            throw ConfigError("backend script is not valid JSON: " + settings.script_path);
        return std::make_unique<ScriptedBackend>(ScriptedBackend::from_json(j));
    }
    HttpBackendConfig http;
    http.base_url = settings.base_url;
    http.model = settings.model;
    http.api_key_env = settings.api_key_env;
    http.timeout_seconds = settings.timeout_seconds;
    http.backoff_ms = settings.backoff_ms;
    http.rate_limit_per_second = settings.rate_limit_per_second;
    return std::make_unique<HttpBackend>(std::move(http));
}

// cache_sampled follows the run seed: only explicitly seeded runs may cache
// sampled-decode generations.
inline BackendStack make_backend_stack(const RunConfig& cfg,
                                       const std::filesystem::path& default_cache_dir) {
    BackendStack stack;
    stack.inner = make_inner_backend(cfg.backend);
    if (cfg.backend.cache_enabled) {
        const std::filesystem::path dir =
            cfg.backend.cache_dir.empty() ? default_cache_dir
                                          : std::filesystem::path(cfg.backend.cache_dir);
        stack.caching =
            std::make_unique<CachingBackend>(*stack.inner, dir, cfg.seed_explicit());
    }
    return stack;
}

}  // namespace ipoe
