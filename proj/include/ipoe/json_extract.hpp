#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ipoe {

// Finds the first syntactically valid JSON object embedded in free text.
// Scans '{' positions left to right, extracts the balanced candidate
// (string- and escape-aware), and returns the first one that parses.
inline std::optional<nlohmann::json> first_json_object(std::string_view raw) {
    for (size_t start = 0; start < raw.size(); ++start) {
        if (raw[start] != '{') continue;
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (size_t i = start; i < raw.size(); ++i) {
            const char c = raw[i];
            if (in_string) {
                if (escaped)
                    escaped = false;
                else if (c == '\\')
                    escaped = true;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    const auto candidate = raw.substr(start, i - start + 1);
                    auto parsed = nlohmann::json::parse(candidate, nullptr, false);
                    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
                    break;  // not valid JSON; try the next '{'
                }
            }
        }
    }
    return std::nullopt;
}

// Reads a field from a JSON object, matching the field name
// case-insensitively. Scalar values are stringified.
inline std::optional<std::string> get_field_ci(const nlohmann::json& object,
                                               std::string_view field) {
    auto matches = [&](std::string_view key) {
        if (key.size() != field.size()) return false;
        for (size_t i = 0; i < key.size(); ++i) {
            if (std::tolower(static_cast<unsigned char>(key[i])) !=
                std::tolower(static_cast<unsigned char>(field[i])))
                return false;
        }
        return true;
    };
    for (auto it = object.begin(); it != object.end(); ++it) {
        if (!matches(it.key())) continue;
        const auto& value = it.value();
        if (value.is_string()) return value.get<std::string>();
        if (value.is_number() || value.is_boolean()) return value.dump();
        return std::nullopt;
    }
    return std::nullopt;
}

// Unwraps the single-field structured envelope: first JSON object in raw,
// then the named field of it.
inline std::optional<std::string> unwrap_envelope(std::string_view raw, std::string_view field) {
    auto object = first_json_object(raw);
    if (!object) return std::nullopt;
    return get_field_ci(*object, field);
}

}  // namespace ipoe
