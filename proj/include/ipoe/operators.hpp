#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ipoe/backend.hpp"
#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/json_extract.hpp"
#include "ipoe/meta_prompts.hpp"
#include "ipoe/rng.hpp"

namespace ipoe {

enum class SamplingStrategy { no_control, label_control };

inline std::string to_string(SamplingStrategy s) {
    return s == SamplingStrategy::no_control ? "no-control" : "label-control";
}

inline SamplingStrategy sampling_strategy_from(std::string_view s) {
    if (s == "no-control" || s == "no_control") return SamplingStrategy::no_control;
    if (s == "label-control" || s == "label_control") return SamplingStrategy::label_control;
    throw ConfigError("unknown sampling strategy: " + std::string(s));
}

struct SamplerConfig {
    SamplingStrategy strategy = SamplingStrategy::no_control;
    int k = 3;
    std::uint64_t seed = 0;
};

inline void validate(const SamplerConfig& cfg) {
    if (cfg.k < 1) throw ConfigError("sampler k must be at least 1");
}

// Draws up to k distinct guidelines from the pool. no_control samples
// uniformly without replacement. label_control walks a seeded random
// permutation of the labels present in the pool round-robin, drawing one
// unused guideline per visited label, so whenever k >= #labels every label
// contributes at least one guideline.
inline std::vector<Guideline> sample_guidelines(const GuidelinePool& pool,
                                                const SamplerConfig& cfg, Substream& rng) {
    validate(cfg);
    if (pool.empty()) throw DataError("cannot sample from an empty pool");
    const size_t k = std::min<size_t>(static_cast<size_t>(cfg.k), pool.size());

    if (cfg.strategy == SamplingStrategy::no_control) {
        std::vector<size_t> idx(pool.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::vector<Guideline> out;
        out.reserve(k);
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + static_cast<size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
            out.push_back(pool.guidelines()[idx[i]]);
        }
        return out;
    }

    // label_control: per-label id buckets, consumed round-robin over a
    // random label permutation.
    std::vector<std::vector<const Guideline*>> buckets;
    for (const auto& [label, ids] : pool.by_label()) {
        std::vector<const Guideline*> bucket;
        for (const auto& id : ids) bucket.push_back(pool.find(id));
        buckets.push_back(std::move(bucket));
    }
    const auto order = rng.permutation(buckets.size());

    std::vector<Guideline> out;
    out.reserve(k);
    size_t cursor = 0;
    size_t exhausted = 0;
    while (out.size() < k && exhausted < buckets.size()) {
        auto& bucket = buckets[order[cursor % order.size()]];
        ++cursor;
        if (bucket.empty()) continue;
        const size_t pick = static_cast<size_t>(rng.below(bucket.size()));
        out.push_back(*bucket[pick]);
        bucket.erase(bucket.begin() + static_cast<std::ptrdiff_t>(pick));
        if (bucket.empty()) ++exhausted;
    }
    return out;
}

inline std::vector<Guideline> sample_guidelines(const GuidelinePool& pool,
                                                const SamplerConfig& cfg) {
    Substream rng(substream_seed(cfg.seed, "sampling"));
    return sample_guidelines(pool, cfg, rng);
}

// --- Edit operators ---------------------------------------------------------
// Each operator builds a candidate set from (G, g). Inapplicable is a value:
// such candidates are simply excluded from selection.

// Appends the sampled guidelines not already in G, in sample order.
inline GuidelineSet op_add(const GuidelineSet& current, const std::vector<Guideline>& sampled) {
    GuidelineSet out = current;
    for (const auto& g : sampled) out.push_back(g);
    return out;
}

// Vanilla: removes |g| members uniformly (or exactly 1 when |G| < |g|).
// Label-control: removes one random member per label shared between g and G.
// Inapplicable when G is empty.
inline std::optional<GuidelineSet> op_remove(const GuidelineSet& current,
                                             const std::vector<Guideline>& sampled,
                                             SamplingStrategy strategy, Substream& rng) {
    if (current.empty()) return std::nullopt;

    std::set<size_t> victims;
    if (strategy == SamplingStrategy::no_control) {
        const size_t n = current.size() < sampled.size() ? 1 : sampled.size();
        std::vector<size_t> idx(current.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (size_t i = 0; i < n && i < idx.size(); ++i) {
            const size_t j = i + static_cast<size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
            victims.insert(idx[i]);
        }
    } else {
        // Labels of g in first-appearance order; draw one victim per label
        // that also occurs in G.
        std::vector<std::string> labels;
        for (const auto& g : sampled) {
            const std::string canon = canonical_form(g.source_label);
            if (std::find(labels.begin(), labels.end(), canon) == labels.end())
                labels.push_back(canon);
        }
        for (const auto& label : labels) {
            std::vector<size_t> candidates;
            for (size_t i = 0; i < current.size(); ++i) {
                if (canonical_form(current[i].source_label) == label) candidates.push_back(i);
            }
            if (candidates.empty()) continue;
            victims.insert(candidates[static_cast<size_t>(rng.below(candidates.size()))]);
        }
    }

    GuidelineSet out;
    for (size_t i = 0; i < current.size(); ++i) {
        if (!victims.count(i)) out.push_back(current[i]);
    }
    return out;
}

// Remove followed by appending g. The removal victims come from the caller's
// dedicated stream, so Remove and Replace candidates within one step draw
// independently. Inapplicable exactly when op_remove is.
inline std::optional<GuidelineSet> op_replace(const GuidelineSet& current,
                                              const std::vector<Guideline>& sampled,
                                              SamplingStrategy strategy, Substream& rng) {
    auto removed = op_remove(current, sampled, strategy, rng);
    if (!removed) return std::nullopt;
    return op_add(*removed, sampled);
}

// Seeded uniform permutation of G.
inline GuidelineSet op_shuffle(const GuidelineSet& current, Substream& rng) {
    const auto order = rng.permutation(current.size());
    GuidelineSet out;
    for (size_t i : order) out.push_back(current[i]);
    return out;
}

struct MergeOutcome {
    bool applicable = false;
    GuidelineSet set;
    // Labels whose merge generation failed to parse; their originals were
    // kept in place.
    std::vector<std::string> skipped_labels;
    int merged_label_count = 0;
};

// For every label shared between g and G, rewrites all of that label's
// guidelines (current members first, then sampled ones) into a single
// guideline via the merge meta prompt, placed where the label first appeared
// in G. Sampled guidelines whose label is absent from G are appended
// unchanged. Inapplicable only when g is empty.
inline MergeOutcome op_merge(const GuidelineSet& current, const std::vector<Guideline>& sampled,
                             Backend& backend, const MetaPrompts& prompts,
                             const DecodeConfig& decode, int max_parse_attempts = 3) {
    MergeOutcome outcome;
    if (sampled.empty()) return outcome;
    outcome.applicable = true;

    // Sampled guidelines grouped by canonical label, first-appearance order.
    std::vector<std::string> sampled_labels;
    std::map<std::string, std::vector<const Guideline*>> sampled_by_label;
    for (const auto& g : sampled) {
        const std::string canon = canonical_form(g.source_label);
        if (!sampled_by_label.count(canon)) sampled_labels.push_back(canon);
        sampled_by_label[canon].push_back(&g);
    }

    std::map<std::string, std::vector<size_t>> current_by_label;
    for (size_t i = 0; i < current.size(); ++i) {
        current_by_label[canonical_form(current[i].source_label)].push_back(i);
    }

    // Merged replacement (or none) per shared label.
    std::map<std::string, std::optional<Guideline>> merged;
    for (const auto& label : sampled_labels) {
        auto it = current_by_label.find(label);
        if (it == current_by_label.end()) continue;

        std::vector<const Guideline*> inputs;
        for (size_t i : it->second) inputs.push_back(&current[i]);
        for (const auto* g : sampled_by_label[label]) inputs.push_back(g);

        const std::vector<ChatMessage> messages{prompts.structured_message("guideline"),
                                                user_message(prompts.merge_prompt(inputs))};
        std::optional<std::string> text;
        for (int attempt = 1; attempt <= max_parse_attempts && !text; ++attempt) {
            const Completion completion = backend.complete(messages, decode);
            auto unwrapped = unwrap_envelope(completion.text, "guideline");
            if (unwrapped && !trim(*unwrapped).empty()) text = *unwrapped;
        }
        if (!text) {
            outcome.skipped_labels.push_back(label);
            merged.emplace(label, std::nullopt);
            continue;
        }
        Provenance prov;
        prov.explanation_source = inputs.front()->provenance.explanation_source;
        prov.backend_descriptor = backend.descriptor();
        for (const auto* g : inputs) prov.parent_ids.push_back(g->id);
        merged.emplace(label,
                       make_guideline(*text, inputs.front()->source_label, std::move(prov)));
        ++outcome.merged_label_count;
    }

    // Rebuild G: the first member of a merged label becomes the merged
    // guideline, its other members drop out; skipped labels keep originals.
    std::set<std::string> emitted;
    for (size_t i = 0; i < current.size(); ++i) {
        const std::string label = canonical_form(current[i].source_label);
        auto it = merged.find(label);
        if (it == merged.end() || !it->second) {
            outcome.set.push_back(current[i]);
            continue;
        }
        if (!emitted.count(label)) {
            emitted.insert(label);
            outcome.set.push_back(*it->second);
        }
    }
    // Append sampled guidelines for labels G does not cover.
    for (const auto& g : sampled) {
        if (!current_by_label.count(canonical_form(g.source_label))) outcome.set.push_back(g);
    }
    return outcome;
}

}  // namespace ipoe
