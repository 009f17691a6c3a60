#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ipoe/errors.hpp"
#include "ipoe/hash.hpp"

namespace ipoe {

// Trim + ASCII case-fold. This is the single canonical form used everywhere
// labels are compared; the original casing is kept for display.
inline std::string canonical_form(std::string_view raw) {
    size_t begin = 0;
    size_t end = raw.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(raw[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(raw[end - 1]))) --end;
    std::string out;
    out.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) {
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(raw[i]))));
    }
    return out;
}

inline std::string trim(std::string_view raw) {
    size_t begin = 0;
    size_t end = raw.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(raw[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(raw[end - 1]))) --end;
    return std::string(raw.substr(begin, end - begin));
}

// Ordered label vocabulary of a task. Order is stable and defines the class
// order of per-label metrics.
class LabelSet {
public:
    LabelSet() = default;

    explicit LabelSet(std::vector<std::string> labels) : display_(std::move(labels)) {
        if (display_.empty()) throw DataError("label set must not be empty");
        for (size_t i = 0; i < display_.size(); ++i) {
            std::string canon = canonical_form(display_[i]);
            if (canon.empty()) throw DataError("label must not be blank");
            if (!index_.emplace(canon, i).second) {
                throw DataError("duplicate label after canonicalization: " + display_[i]);
            }
            canonical_.push_back(std::move(canon));
        }
    }

    const std::vector<std::string>& labels() const { return display_; }
    size_t size() const { return display_.size(); }

    std::optional<size_t> index_of(std::string_view raw) const {
        auto it = index_.find(canonical_form(raw));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool contains(std::string_view raw) const { return index_of(raw).has_value(); }

    const std::string& display(size_t i) const { return display_[i]; }
    const std::string& canonical(size_t i) const { return canonical_[i]; }

private:
    std::vector<std::string> display_;
    std::vector<std::string> canonical_;
    std::unordered_map<std::string, size_t> index_;
};

// Resolves raw model or dataset text to a member label (display form).
// No-match is a value, not an error.
inline std::optional<std::string> canonicalize_label(std::string_view raw, const LabelSet& labels) {
    auto idx = labels.index_of(raw);
    if (!idx) return std::nullopt;
    return labels.display(*idx);
}

enum class ExplanationKind { natural_language, feature_attribution };
enum class ExplanationSource { human, llm };

inline std::string to_string(ExplanationKind kind) {
    return kind == ExplanationKind::natural_language ? "natural_language" : "feature_attribution";
}

inline ExplanationKind explanation_kind_from(std::string_view s) {
    if (s == "natural_language") return ExplanationKind::natural_language;
    if (s == "feature_attribution") return ExplanationKind::feature_attribution;
    throw DataError("unknown explanation_kind: " + std::string(s));
}

inline std::string to_string(ExplanationSource source) {
    return source == ExplanationSource::human ? "human" : "llm";
}

inline ExplanationSource explanation_source_from(std::string_view s) {
    if (s == "human") return ExplanationSource::human;
    if (s == "llm") return ExplanationSource::llm;
    throw DataError("unknown explanation source: " + std::string(s));
}

// One labeled text, optionally with an explanation of the labeling decision.
struct Instance {
    std::string id;
    std::string text;
    std::string gold_label;
    std::optional<std::string> explanation;
    std::optional<ExplanationKind> explanation_kind;
};

inline void validate_instance(const Instance& instance, const LabelSet& labels) {
    if (instance.id.empty()) throw DataError("instance id must not be empty");
    if (!labels.contains(instance.gold_label)) {
        throw DataError("instance " + instance.id + ": gold label '" + instance.gold_label +
                        "' is not in the label set");
    }
    if (instance.explanation.has_value() != instance.explanation_kind.has_value()) {
        throw DataError("instance " + instance.id +
                        ": explanation and explanation_kind must be present together");
    }
}

// Where a guideline came from: the source instance and backend for generated
// ones, the parent guideline ids for merged ones.
struct Provenance {
    ExplanationSource explanation_source = ExplanationSource::human;
    std::optional<ExplanationKind> explanation_kind;
    std::string instance_id;
    std::string backend_descriptor;
    std::vector<std::string> parent_ids;  // non-empty only for merged guidelines

    bool merged() const { return !parent_ids.empty(); }
};

// One rule-like statement instructing when to assign source_label.
struct Guideline {
    std::string id;
    std::string text;
    std::string source_label;
    Provenance provenance;
};

// Content hash of (text, canonical label); identical rules for the same label
// dedup to one id no matter how often or where they were generated.
inline std::string guideline_id(std::string_view text, std::string_view source_label) {
    std::string key;
    key.reserve(text.size() + source_label.size() + 1);
    key.append(text);
    key.push_back('\x1e');
    key.append(canonical_form(source_label));
    return digest64(key);
}

inline Guideline make_guideline(std::string text, std::string source_label, Provenance provenance) {
    if (trim(text).empty()) throw DataError("guideline text must not be blank");
    Guideline g;
    g.id = guideline_id(text, source_label);
    g.text = std::move(text);
    g.source_label = std::move(source_label);
    g.provenance = std::move(provenance);
    return g;
}

// The full collection of guidelines the optimizer samples from.
// Deduplicates by id on insert; by_label buckets partition the ids.
class GuidelinePool {
public:
    bool add(Guideline g) {
        if (index_.count(g.id)) return false;
        index_.emplace(g.id, guidelines_.size());
        by_label_[canonical_form(g.source_label)].push_back(g.id);
        guidelines_.push_back(std::move(g));
        return true;
    }

    const std::vector<Guideline>& guidelines() const { return guidelines_; }
    size_t size() const { return guidelines_.size(); }
    bool empty() const { return guidelines_.empty(); }

    const std::map<std::string, std::vector<std::string>>& by_label() const { return by_label_; }

    std::vector<std::string> labels_present() const {
        std::vector<std::string> out;
        out.reserve(by_label_.size());
        for (const auto& [label, ids] : by_label_) out.push_back(label);
        return out;
    }

    const Guideline* find(std::string_view id) const {
        auto it = index_.find(std::string(id));
        if (it == index_.end()) return nullptr;
        return &guidelines_[it->second];
    }

private:
    std::vector<Guideline> guidelines_;
    std::unordered_map<std::string, size_t> index_;
    std::map<std::string, std::vector<std::string>> by_label_;
};

// The ordered set G under optimization. Order matters (Shuffle permutes it);
// ids stay unique within the set.
class GuidelineSet {
public:
    GuidelineSet() = default;

    explicit GuidelineSet(std::vector<Guideline> guidelines) {
        for (auto& g : guidelines) push_back(std::move(g));
    }

    // Appends unless the id is already present; returns whether it was added.
    bool push_back(Guideline g) {
        if (ids_.count(g.id)) return false;
        ids_.insert(g.id);
        members_.push_back(std::move(g));
        return true;
    }

    bool contains(std::string_view id) const { return ids_.count(std::string(id)) > 0; }

    const std::vector<Guideline>& members() const { return members_; }
    size_t size() const { return members_.size(); }
    bool empty() const { return members_.empty(); }

    const Guideline& operator[](size_t i) const { return members_[i]; }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(members_.size());
        for (const auto& g : members_) out.push_back(g.id);
        return out;
    }

private:
    std::vector<Guideline> members_;
    std::unordered_set<std::string> ids_;
};

inline std::string set_digest(const GuidelineSet& set) {
    std::string joined;
    for (const auto& g : set.members()) {
        joined += g.id;
        joined.push_back(',');
    }
    return digest64(joined);
}

// The fixed task instruction preceding the guideline block.
struct PromptPrefix {
    std::string text;
};

inline PromptPrefix make_prompt_prefix(std::string text) {
    if (trim(text).empty()) throw DataError("prompt prefix must not be blank");
    return PromptPrefix{std::move(text)};
}

struct RenderedPrompt {
    std::string text;
    PromptPrefix prefix;
    std::vector<std::string> guideline_ids;
};

inline constexpr std::string_view kGuidelineConnective =
    "Think through the following guidelines before giving the final answer. guidelines:";

// An empty set renders to the prefix alone (the vanilla prompt). Otherwise
// the prefix is followed by the connective sentence and the guidelines
// numbered in set order, all single-space separated.
inline RenderedPrompt render_prompt(const PromptPrefix& prefix, const GuidelineSet& set) {
    RenderedPrompt out;
    out.prefix = prefix;
    out.guideline_ids = set.ids();
    if (set.empty()) {
        out.text = prefix.text;
        return out;
    }
    std::string text = prefix.text;
    text += ' ';
    text += kGuidelineConnective;
    for (size_t i = 0; i < set.size(); ++i) {
        text += ' ';
        text += std::to_string(i + 1);
        text += ". ";
        text += set[i].text;
    }
    out.text = std::move(text);
    return out;
}

}  // namespace ipoe
