#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"

namespace ipoe {

using json = nlohmann::json;

// --- Instance <-> JSON ------------------------------------------------------
// Dataset line format: {"id": ..., "text": ..., "label": ...,
//                       "explanation": ..., "explanation_kind": ...}
// The last two are optional and must appear together.

inline json instance_to_json(const Instance& instance) {
    json j{{"id", instance.id}, {"text", instance.text}, {"label", instance.gold_label}};
    if (instance.explanation) j["explanation"] = *instance.explanation;
    if (instance.explanation_kind) j["explanation_kind"] = to_string(*instance.explanation_kind);
    return j;
}

inline Instance instance_from_json(const json& j) {
    if (!j.is_object()) throw DataError("instance record must be a JSON object");
    Instance instance;
    try {
        instance.id = j.at("id").get<std::string>();
        instance.text = j.at("text").get<std::string>();
        instance.gold_label = j.at("label").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(std::string("instance record missing required field: ") + e.what());
    }
    if (j.contains("explanation") && !j["explanation"].is_null()) {
        instance.explanation = j["explanation"].get<std::string>();
    }
    if (j.contains("explanation_kind") && !j["explanation_kind"].is_null()) {
        instance.explanation_kind = explanation_kind_from(j["explanation_kind"].get<std::string>());
    }
    return instance;
}

// --- Guideline <-> JSON -----------------------------------------------------

inline json provenance_to_json(const Provenance& p) {
    json j{{"explanation_source", to_string(p.explanation_source)},
           {"instance_id", p.instance_id},
           {"backend", p.backend_descriptor}};
    if (p.explanation_kind) j["explanation_kind"] = to_string(*p.explanation_kind);
    if (!p.parent_ids.empty()) j["parent_ids"] = p.parent_ids;
    return j;
}

inline Provenance provenance_from_json(const json& j) {
    Provenance p;
    if (j.contains("explanation_source"))
        p.explanation_source = explanation_source_from(j["explanation_source"].get<std::string>());
    if (j.contains("explanation_kind") && !j["explanation_kind"].is_null())
        p.explanation_kind = explanation_kind_from(j["explanation_kind"].get<std::string>());
    if (j.contains("instance_id")) p.instance_id = j["instance_id"].get<std::string>();
    if (j.contains("backend")) p.backend_descriptor = j["backend"].get<std::string>();
    if (j.contains("parent_ids")) p.parent_ids = j["parent_ids"].get<std::vector<std::string>>();
    return p;
}

inline json guideline_to_json(const Guideline& g) {
    return json{{"id", g.id},
                {"text", g.text},
                {"source_label", g.source_label},
                {"provenance", provenance_to_json(g.provenance)}};
}

inline Guideline guideline_from_json(const json& j) {
    Guideline g;
    try {
        g.text = j.at("text").get<std::string>();
        g.source_label = j.at("source_label").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(std::string("guideline record missing required field: ") + e.what());
    }
    // Hand-written pool files may omit the id; derive it from content.
    g.id = j.contains("id") ? j["id"].get<std::string>() : guideline_id(g.text, g.source_label);
    if (j.contains("provenance")) g.provenance = provenance_from_json(j["provenance"]);
    return g;
}

// --- JSONL files ------------------------------------------------------------

template <typename Fn>
inline void for_each_jsonl_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": invalid JSON: " + e.what());
        }
        try {
            fn(j);
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline std::vector<Instance> read_instances(const std::filesystem::path& path,
                                            const LabelSet& labels) {
    std::vector<Instance> out;
    std::unordered_set<std::string> seen_ids;
    for_each_jsonl_line(path, [&](const json& j) {
        Instance instance = instance_from_json(j);
        validate_instance(instance, labels);
        if (!seen_ids.insert(instance.id).second) {
            throw DataError("duplicate instance id: " + instance.id);
        }
        out.push_back(std::move(instance));
    });
    return out;
}

inline void write_instances(const std::filesystem::path& path,
                            const std::vector<Instance>& instances) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path.string());
    for (const auto& instance : instances) out << instance_to_json(instance).dump() << '\n';
}

inline GuidelinePool read_pool(const std::filesystem::path& path) {
    GuidelinePool pool;
    for_each_jsonl_line(path, [&](const json& j) { pool.add(guideline_from_json(j)); });
    return pool;
}

inline void write_pool(const std::filesystem::path& path, const GuidelinePool& pool) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path.string());
    for (const auto& g : pool.guidelines()) out << guideline_to_json(g).dump() << '\n';
}

inline std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return digest128(content);
}

}  // namespace ipoe
