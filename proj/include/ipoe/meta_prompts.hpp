#pragma once

#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ipoe/backend.hpp"
#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"

namespace ipoe {

enum class MetaPromptKind {
    explain_natural,
    explain_feature,
    guideline_from_natural,
    guideline_from_feature,
    merge,
    structured_system,
};

inline std::string to_string(MetaPromptKind kind) {
    switch (kind) {
        case MetaPromptKind::explain_natural: return "explain_natural";
        case MetaPromptKind::explain_feature: return "explain_feature";
        case MetaPromptKind::guideline_from_natural: return "guideline_from_natural";
        case MetaPromptKind::guideline_from_feature: return "guideline_from_feature";
        case MetaPromptKind::merge: return "merge";
        case MetaPromptKind::structured_system: return "structured_system";
    }
    return "unknown";
}

// A template with {placeholder} slots. Rendering requires every placeholder
// in the template to be bound; literal braces that do not form a
// {lower_snake} token pass through untouched (the structured system prompt
// contains literal JSON braces).
struct MetaPromptTemplate {
    MetaPromptKind kind = MetaPromptKind::explain_natural;
    std::string text;

    std::string render(const std::map<std::string, std::string>& values) const {
        std::string out;
        out.reserve(text.size());
        for (size_t i = 0; i < text.size(); ++i) {
            if (text[i] != '{') {
                out.push_back(text[i]);
                continue;
            }
            const size_t close = text.find('}', i + 1);
            bool is_placeholder = close != std::string::npos && close > i + 1;
            if (is_placeholder) {
                for (size_t j = i + 1; j < close; ++j) {
                    const char c = text[j];
                    if (!(std::islower(static_cast<unsigned char>(c)) || c == '_')) {
                        is_placeholder = false;
                        break;
                    }
                }
            }
            if (!is_placeholder) {
                out.push_back(text[i]);
                continue;
            }
            const std::string name = text.substr(i + 1, close - i - 1);
            auto it = values.find(name);
            if (it == values.end()) {
                throw ConfigError("meta prompt placeholder {" + name + "} is not bound (" +
                                  to_string(kind) + ")");
            }
            out += it->second;
            i = close;
        }
        return out;
    }
};

// The fixed prompt texts used for explanation generation, guideline
// generation, merging, and the structured output envelope.
struct MetaPrompts {
    MetaPromptTemplate explain_natural{
        MetaPromptKind::explain_natural,
        "Provide a brief explanation for why the given label was chosen in the above task. "
        "When writing the explanation, you may describe the key cause or feature that led to "
        "your decision, link it to the general rule, principle, or pattern defined in the task, "
        "and keep only relevant details.\n"
        "Text: {text}\n"
        "Label: {label}"};

    MetaPromptTemplate explain_feature{
        MetaPromptKind::explain_feature,
        "Highlight the words or phrases in the text that contribute most significantly to the "
        "assignment of the given label.\n"
        "Text: {text}\n"
        "Label: {label}"};

    // The two guideline templates are kept distinct so either can be
    // customized per task even though their stock wording coincides.
    MetaPromptTemplate guideline_from_natural{
        MetaPromptKind::guideline_from_natural,
        "Using the provided sample text and its corresponding human annotation, along with a "
        "list of feature attribution explanations that are most responsible for why the label "
        "was chosen, provide a rule-based guideline for performing this {task_name} task. The "
        "guideline should be written in one paragraph.\n"
        "Text: {text}\n"
        "Label: {label}\n"
        "Explanation: {explanation}"};

    MetaPromptTemplate guideline_from_feature{
        MetaPromptKind::guideline_from_feature,
        "Using the provided sample text and its corresponding human annotation, along with a "
        "list of feature attribution explanations that are most responsible for why the label "
        "was chosen, provide a rule-based guideline for performing this {task_name} task. The "
        "guideline should be written in one paragraph.\n"
        "Text: {text}\n"
        "Label: {label}\n"
        "Explanation: {explanation}"};

    MetaPromptTemplate merge{MetaPromptKind::merge,
                             "Please rewrite the following guidelines into one guideline."};

    MetaPromptTemplate structured_system{
        MetaPromptKind::structured_system,
        "Provide the explanation in exactly one valid JSON object — nothing else. The JSON "
        "object must have exactly one field:\n"
        "{\n"
        "  \"{feature_name}\": \"<{feature}>\"\n"
        "}"};

    const MetaPromptTemplate& explain_template(ExplanationKind kind) const {
        return kind == ExplanationKind::natural_language ? explain_natural : explain_feature;
    }

    const MetaPromptTemplate& guideline_template(ExplanationKind kind) const {
        return kind == ExplanationKind::natural_language ? guideline_from_natural
                                                         : guideline_from_feature;
    }

    // System message that pins the output to a one-field JSON envelope.
    ChatMessage structured_message(const std::string& field) const {
        return system_message(
            structured_system.render({{"feature_name", field}, {"feature", field}}));
    }

    // Merge request body: header sentence, then the inputs numbered "1: ...".
    std::string merge_prompt(const std::vector<const Guideline*>& inputs) const {
        std::string out = merge.render({});
        for (size_t i = 0; i < inputs.size(); ++i) {
            out += '\n';
            out += std::to_string(i + 1);
            out += ": ";
            out += inputs[i]->text;
        }
        return out;
    }
};

}  // namespace ipoe
