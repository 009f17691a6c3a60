#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/backend.hpp"
#include "ipoe/cache.hpp"
#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/meta_prompts.hpp"
#include "ipoe/optimizer.hpp"
#include "ipoe/pool_builder.hpp"

namespace ipoe {

struct BackendSettings {
    std::string type = "http";  // http | scripted
    std::string script_path;    // scripted: rules file
    std::string base_url;
    std::string model;
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_seconds = 120;
    std::vector<int> backoff_ms = {1000, 4000};
    double rate_limit_per_second = 0.0;
    std::string cache_dir;  // empty: per-run cache directory
    bool cache_enabled = true;
};

// Everything a run needs, loaded from the JSON config file. CLI flags
// override individual fields.
struct RunConfig {
    std::string task_name;
    std::vector<std::string> labels;
    std::string prompt_prefix;

    std::string train_path;
    std::string validation_path;
    std::string test_path;
    std::string pool_path;

    PoolSource explanation_source = PoolSource::human;
    ExplanationKind explanation_kind = ExplanationKind::natural_language;

    SamplingStrategy strategy = SamplingStrategy::no_control;
    int k = 3;
    int max_iterations = 300;
    double subsample_proportion = 1.0;
    SubsampleMode subsample_mode = SubsampleMode::fixed;
    SelectionMode selection = SelectionMode::argmax;
    std::vector<OpKind> operators = all_operators();
    std::optional<std::uint64_t> seed;

    BackendSettings backend;
    std::string label_field = "label";
    std::string output_root = "runs";
    int parallelism = 1;
    double max_skip_fraction = 1.0;

    MetaPrompts prompts;

    LabelSet label_set() const { return LabelSet(labels); }
    PromptPrefix prefix() const { return make_prompt_prefix(prompt_prefix); }

    // A missing seed means intended stochasticity: one is drawn at run time
    // and sampled-decode responses stay uncached.
    bool seed_explicit() const { return seed.has_value(); }
};

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        cfg.task_name = j.at("task_name").get<std::string>();
        cfg.labels = j.at("labels").get<std::vector<std::string>>();
        cfg.prompt_prefix = j.at("prompt_prefix").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config missing required field: ") + e.what());
    }

    if (j.contains("datasets")) {
        const auto& d = j["datasets"];
        if (d.contains("train")) cfg.train_path = d["train"].get<std::string>();
        if (d.contains("validation")) cfg.validation_path = d["validation"].get<std::string>();
        if (d.contains("test")) cfg.test_path = d["test"].get<std::string>();
    }
    if (j.contains("pool")) cfg.pool_path = j["pool"].get<std::string>();

    if (j.contains("explanation")) {
        const auto& e = j["explanation"];
        if (e.contains("source")) cfg.explanation_source = pool_source_from(e["source"].get<std::string>());
        if (e.contains("kind")) cfg.explanation_kind = explanation_kind_from(e["kind"].get<std::string>());
    }

    if (j.contains("sampler")) {
        const auto& s = j["sampler"];
        if (s.contains("strategy")) cfg.strategy = sampling_strategy_from(s["strategy"].get<std::string>());
        if (s.contains("k")) cfg.k = s["k"].get<int>();
    }
    if (j.contains("max_iterations")) cfg.max_iterations = j["max_iterations"].get<int>();
    if (j.contains("subsample")) {
        const auto& s = j["subsample"];
        if (s.contains("proportion")) cfg.subsample_proportion = s["proportion"].get<double>();
        if (s.contains("mode")) {
            const auto mode = s["mode"].get<std::string>();
            if (mode == "fixed") cfg.subsample_mode = SubsampleMode::fixed;
            else if (mode == "per-iteration") cfg.subsample_mode = SubsampleMode::per_iteration;
            else throw ConfigError("unknown subsample mode: " + mode);
        }
    }
    if (j.contains("selection")) cfg.selection = selection_mode_from(j["selection"].get<std::string>());
    if (j.contains("operators")) {
        cfg.operators.clear();
        for (const auto& op : j["operators"]) cfg.operators.push_back(op_kind_from(op.get<std::string>()));
    }
    if (j.contains("seed") && !j["seed"].is_null()) cfg.seed = j["seed"].get<std::uint64_t>();

    if (j.contains("backend")) {
        const auto& b = j["backend"];
        if (b.contains("type")) cfg.backend.type = b["type"].get<std::string>();
        if (b.contains("script")) cfg.backend.script_path = b["script"].get<std::string>();
        if (b.contains("base_url")) cfg.backend.base_url = b["base_url"].get<std::string>();
        if (b.contains("model")) cfg.backend.model = b["model"].get<std::string>();
        if (b.contains("api_key_env")) cfg.backend.api_key_env = b["api_key_env"].get<std::string>();
        if (b.contains("timeout_s")) cfg.backend.timeout_seconds = b["timeout_s"].get<int>();
        if (b.contains("backoff_ms")) cfg.backend.backoff_ms = b["backoff_ms"].get<std::vector<int>>();
        if (b.contains("rate_limit_per_s"))
            cfg.backend.rate_limit_per_second = b["rate_limit_per_s"].get<double>();
        if (b.contains("cache_dir")) cfg.backend.cache_dir = b["cache_dir"].get<std::string>();
        if (b.contains("cache")) cfg.backend.cache_enabled = b["cache"].get<bool>();
    }

    if (j.contains("label_field")) cfg.label_field = j["label_field"].get<std::string>();
    if (j.contains("output_root")) cfg.output_root = j["output_root"].get<std::string>();
    if (j.contains("parallelism")) cfg.parallelism = j["parallelism"].get<int>();
    if (j.contains("max_skip_fraction")) cfg.max_skip_fraction = j["max_skip_fraction"].get<double>();

    if (j.contains("meta_prompts")) {
        const auto& m = j["meta_prompts"];
        auto override_template = [&](const char* key, MetaPromptTemplate& tmpl) {
            if (m.contains(key)) tmpl.text = m[key].get<std::string>();
        };
        override_template("explain_natural", cfg.prompts.explain_natural);
        override_template("explain_feature", cfg.prompts.explain_feature);
        override_template("guideline_from_natural", cfg.prompts.guideline_from_natural);
        override_template("guideline_from_feature", cfg.prompts.guideline_from_feature);
        override_template("merge", cfg.prompts.merge);
        override_template("structured_system", cfg.prompts.structured_system);
    }

    return cfg;
}

inline void validate(const RunConfig& cfg) {
    LabelSet labels(cfg.labels);  // throws on empty/duplicates
    if (trim(cfg.prompt_prefix).empty()) throw ConfigError("prompt_prefix must not be blank");
    if (cfg.k < 1) throw ConfigError("sampler k must be at least 1");
    if (cfg.max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
    if (cfg.subsample_proportion <= 0.0 || cfg.subsample_proportion > 1.0)
        throw ConfigError("subsample proportion must be in (0, 1]");
    if (cfg.operators.empty()) throw ConfigError("operator list must not be empty");
    if (cfg.backend.type != "http" && cfg.backend.type != "scripted")
        throw ConfigError("backend type must be http or scripted");
    if (cfg.parallelism < 1) throw ConfigError("parallelism must be at least 1");
    for (const auto* path : {&cfg.train_path, &cfg.validation_path, &cfg.test_path}) {
        if (!path->empty() && !std::filesystem::exists(*path))
            throw ConfigError("dataset file does not exist: " + *path);
    }
}

// Loads, parses, and validates; also returns the raw bytes so run manifests
// can pin the config byte-exactly.
inline std::pair<RunConfig, std::string> load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    nlohmann::json j = nlohmann::json::parse(bytes, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    RunConfig cfg = config_from_json(j);
    validate(cfg);
    return {std::move(cfg), std::move(bytes)};
}

inline OptimizerConfig optimizer_config_from(const RunConfig& cfg, std::uint64_t run_seed) {
    OptimizerConfig out;
    out.max_iterations = cfg.max_iterations;
    out.operators = cfg.operators;
    out.selection = cfg.selection;
    out.sampler.strategy = cfg.strategy;
    out.sampler.k = cfg.k;
    out.sampler.seed = run_seed;
    out.eval.proportion = cfg.subsample_proportion;
    out.eval.seed = run_seed;
    out.subsample_mode = cfg.subsample_mode;
    out.root_seed = run_seed;
    return out;
}

}  // namespace ipoe
