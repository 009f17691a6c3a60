#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ipoe/backend.hpp"
#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/json_extract.hpp"
#include "ipoe/meta_prompts.hpp"
#include "ipoe/parallel.hpp"

namespace ipoe {

// Which explanations feed guideline generation. mixed uses the human
// explanation when an instance has one and generates otherwise.
enum class PoolSource { human, llm, mixed };

inline std::string to_string(PoolSource source) {
    switch (source) {
        case PoolSource::human: return "human";
        case PoolSource::llm: return "llm";
        case PoolSource::mixed: return "mixed";
    }
    return "unknown";
}

inline PoolSource pool_source_from(std::string_view s) {
    if (s == "human") return PoolSource::human;
    if (s == "llm") return PoolSource::llm;
    if (s == "mixed") return PoolSource::mixed;
    throw ConfigError("unknown explanation source: " + std::string(s));
}

struct PoolBuildOptions {
    PoolSource source = PoolSource::human;
    ExplanationKind kind = ExplanationKind::natural_language;
    std::string task_name;
    // Task instruction placed above the meta prompt, so "the above task"
    // in the explanation prompt refers to something.
    std::string task_preamble;
    DecodeConfig decode = DecodeConfig::sampled();
    int max_parse_attempts = 3;  // initial ask + two re-asks
    int parallelism = 1;
    // Fail the build when more than this fraction of instances is skipped.
    double max_skip_fraction = 1.0;
};

struct PoolBuildResult {
    GuidelinePool pool;
    int processed = 0;
    int skipped = 0;
    int deduplicated = 0;
    std::vector<std::string> skip_reasons;
};

// Generates explanations (when needed) and converts each (instance, gold
// label, explanation) triple into one pool guideline.
class PoolBuilder {
public:
    PoolBuilder(Backend& backend, MetaPrompts prompts, PoolBuildOptions options)
        : backend_(backend), prompts_(std::move(prompts)), options_(std::move(options)) {}

    // Asks the backend for an explanation of the instance's gold label.
    // Throws GenerationParseError once all re-asks produced output that
    // cannot be unwrapped from the JSON envelope.
    std::string generate_explanation(const Instance& instance, ExplanationKind kind) const {
        const auto& tmpl = prompts_.explain_template(kind);
        const std::string body =
            tmpl.render({{"text", instance.text}, {"label", instance.gold_label}});
        return ask("explanation", body, "instance " + instance.id);
    }

    Guideline generate_guideline(const Instance& instance, const std::string& explanation,
                                 ExplanationKind kind, ExplanationSource source) const {
        if (trim(explanation).empty())
            throw DataError("instance " + instance.id + ": explanation must not be empty");
        const auto& tmpl = prompts_.guideline_template(kind);
        const std::string body = tmpl.render({{"text", instance.text},
                                              {"label", instance.gold_label},
                                              {"explanation", explanation},
                                              {"task_name", options_.task_name}});
        std::string text = ask("guideline", body, "instance " + instance.id);
        Provenance prov;
        prov.explanation_source = source;
        prov.explanation_kind = kind;
        prov.instance_id = instance.id;
        prov.backend_descriptor = backend_.descriptor();
        return make_guideline(std::move(text), instance.gold_label, std::move(prov));
    }

    PoolBuildResult build_pool(const std::vector<Instance>& dataset, const LabelSet& labels) const {
        struct Produced {
            std::optional<Guideline> guideline;
            std::string skip_reason;
        };

        auto process = [&](const Instance& instance) -> Produced {
            try {
                validate_instance(instance, labels);
            } catch (const DataError& e) {
                return {std::nullopt, e.what()};
            }
            const bool has_human = instance.explanation.has_value();
            try {
                if (options_.source == PoolSource::human ||
                    (options_.source == PoolSource::mixed && has_human)) {
                    if (!has_human) {
                        return {std::nullopt,
                                "instance " + instance.id + ": no human explanation"};
                    }
                    const ExplanationKind kind =
                        instance.explanation_kind.value_or(options_.kind);
                    return {generate_guideline(instance, *instance.explanation, kind,
                                               ExplanationSource::human),
                            ""};
                }
                const std::string explanation = generate_explanation(instance, options_.kind);
                return {generate_guideline(instance, explanation, options_.kind,
                                           ExplanationSource::llm),
                        ""};
            } catch (const GenerationParseError& e) {
                return {std::nullopt, e.what()};
            } catch (const DataError& e) {
                return {std::nullopt, e.what()};
            }
        };

        const auto produced = parallel_map(dataset, process, options_.parallelism);

        PoolBuildResult result;
        for (const auto& p : produced) {
            if (!p.guideline) {
                ++result.skipped;
                result.skip_reasons.push_back(p.skip_reason);
                std::cerr << "warning: skipped: " << p.skip_reason << '\n';
                continue;
            }
            ++result.processed;
            if (!result.pool.add(*p.guideline)) ++result.deduplicated;
        }

        if (result.pool.empty()) {
            throw DataError("guideline pool is empty: no instance produced a guideline");
        }
        if (!dataset.empty() &&
            static_cast<double>(result.skipped) / static_cast<double>(dataset.size()) >
                options_.max_skip_fraction) {
            throw DataError("too many skipped instances: " + std::to_string(result.skipped) +
                            " of " + std::to_string(dataset.size()));
        }
        return result;
    }

    const PoolBuildOptions& options() const { return options_; }

private:
    // One structured-envelope generation round trip with bounded re-asks.
    std::string ask(const std::string& field, const std::string& body,
                    const std::string& context) const {
        std::vector<ChatMessage> messages{prompts_.structured_message(field)};
        if (!options_.task_preamble.empty()) {
            messages.push_back(user_message(options_.task_preamble + "\n" + body));
        } else {
            messages.push_back(user_message(body));
        }
        for (int attempt = 1; attempt <= options_.max_parse_attempts; ++attempt) {
            const Completion completion = backend_.complete(messages, options_.decode);
            auto unwrapped = unwrap_envelope(completion.text, field);
            if (unwrapped && !trim(*unwrapped).empty()) return *unwrapped;
        }
        throw GenerationParseError(context + ": no parsable " + field + " after " +
                                   std::to_string(options_.max_parse_attempts) + " attempts");
    }

    Backend& backend_;
    MetaPrompts prompts_;
    PoolBuildOptions options_;
};

}  // namespace ipoe
