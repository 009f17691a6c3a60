#pragma once

#include <stdexcept>
#include <string>

namespace ipoe {

// Error families map one-to-one onto the CLI exit codes, so every failure
// a command can hit lands in exactly one of these.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BackendError : std::runtime_error {
    explicit BackendError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TransportError : BackendError {
    explicit TransportError(const std::string& msg) : BackendError(msg) {}
};

struct AuthError : BackendError {
    explicit AuthError(const std::string& msg) : BackendError(msg) {}
};

struct MalformedResponseError : BackendError {
    explicit MalformedResponseError(const std::string& msg) : BackendError(msg) {}
};

// Raised when a generation call keeps producing output that cannot be
// unwrapped from the structured JSON envelope, after all re-asks.
struct GenerationParseError : BackendError {
    explicit GenerationParseError(const std::string& msg) : BackendError(msg) {}
};

struct StoreError : std::runtime_error {
    explicit StoreError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CacheIoError : std::runtime_error {
    explicit CacheIoError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int backend = 4;
inline constexpr int store = 5;
}  // namespace exit_code

}  // namespace ipoe
