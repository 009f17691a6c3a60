#pragma once

#include <cctype>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/backend.hpp"
#include "ipoe/domain.hpp"

#include "helpers.hpp"

namespace ipoe::test {

// Synthetic 3-label classification task driven entirely by a scripted
// backend. Without guidelines every prediction is cyclically wrong (macro F1
// = 0). The pool holds one "marker" guideline per label plus decoys; when a
// marker is in the prompt, that label's instances predict correctly, so the
// full marker set scores 1.0. Merges preserve markers, so the optimum stays
// reachable under every operator.
struct SyntheticTask {
    ipoe::LabelSet labels{std::vector<std::string>{"alpha", "beta", "gamma"}};
    ipoe::PromptPrefix prefix{
        "Classify the following synthetic item using one of the labels alpha, beta, gamma."};
    std::vector<ipoe::Instance> train;
    ipoe::GuidelinePool pool;
    nlohmann::json rules_json;
    std::unique_ptr<ipoe::ScriptedBackend> backend;
};

inline std::string synthetic_marker(const std::string& label) {
    std::string upper = label;
    for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return "MARKER-" + upper;
}

inline std::string synthetic_text(const std::string& label, int i) {
    return label + " item " + std::to_string(i) + " payload";
}

// The scripted rule table, as the JSON accepted by ScriptedBackend::from_json
// and by the CLI's backend script file.
inline nlohmann::json synthetic_rules_json(int instances_per_label = 10) {
    const std::vector<std::string> labels{"alpha", "beta", "gamma"};
    auto wrong = [&](size_t i) { return labels[(i + 1) % labels.size()]; };

    nlohmann::json rules = nlohmann::json::array();
    auto add_rule = [&](std::vector<std::string> contains, std::string response) {
        rules.push_back({{"contains", contains}, {"response", response}});
    };

    // Generation requests (used by the CLI pipeline tests).
    add_rule({"Provide a brief explanation"},
             R"({"explanation": "The item phrasing names its own label."})");
    add_rule({"Highlight the words or phrases"},
             R"({"explanation": "item payload"})");
    for (const auto& label : labels) {
        add_rule({"rule-based guideline", "Label: " + label},
                 "{\"guideline\": \"Choose " + label + " for " + label + "-type items. " +
                     synthetic_marker(label) + "\"}");
    }

    // Merge requests: keep the marker when one is among the inputs.
    for (const auto& label : labels) {
        add_rule({"rewrite the following guidelines into one guideline",
                  synthetic_marker(label)},
                 "{\"guideline\": \"Merged " + label + " guidance. " + synthetic_marker(label) +
                     "\"}");
    }
    add_rule({"rewrite the following guidelines into one guideline"},
             R"({"guideline": "Merged guidance without markers."})");

    // Predictions: the marker fixes its label's instances, otherwise the
    // prediction is cyclically wrong.
    for (size_t l = 0; l < labels.size(); ++l) {
        for (int i = 0; i < instances_per_label; ++i) {
            add_rule({synthetic_marker(labels[l]), synthetic_text(labels[l], i)},
                     "{\"label\": \"" + labels[l] + "\"}");
        }
    }
    for (size_t l = 0; l < labels.size(); ++l) {
        for (int i = 0; i < instances_per_label; ++i) {
            add_rule({synthetic_text(labels[l], i)}, "{\"label\": \"" + wrong(l) + "\"}");
        }
    }

    return nlohmann::json{{"rules", rules}, {"default_response", "(no script rule matched)"}};
}

inline SyntheticTask make_synthetic_task(int instances_per_label = 10, int decoys_per_label = 3) {
    SyntheticTask task;
    const std::vector<std::string> labels{"alpha", "beta", "gamma"};

    task.rules_json = synthetic_rules_json(instances_per_label);
    task.backend =
        std::make_unique<ipoe::ScriptedBackend>(ipoe::ScriptedBackend::from_json(task.rules_json));

    for (const auto& label : labels) {
        for (int i = 0; i < instances_per_label; ++i) {
            task.train.push_back(make_instance("it-" + label + "-" + std::to_string(i),
                                               synthetic_text(label, i), label));
        }
    }

    for (const auto& label : labels) {
        task.pool.add(make_test_guideline(
            "Choose " + label + " for " + label + "-type items. " + synthetic_marker(label),
            label));
        for (int d = 0; d < decoys_per_label; ++d) {
            task.pool.add(make_test_guideline(
                "Decoy rule " + std::to_string(d) + " that says nothing useful about " + label +
                    " items.",
                label));
        }
    }
    return task;
}

}  // namespace ipoe::test
