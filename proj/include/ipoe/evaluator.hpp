#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/backend.hpp"
#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/json_extract.hpp"
#include "ipoe/meta_prompts.hpp"
#include "ipoe/parallel.hpp"
#include "ipoe/rng.hpp"

namespace ipoe {

// One model prediction. parsed_label is empty when no requested label could
// be extracted from the output (that is a value, not an error).
struct Prediction {
    std::string instance_id;
    std::string raw_output;
    std::optional<std::string> parsed_label;
};

struct LabelScore {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int support = 0;
};

struct EvalReport {
    double f1_macro = 0.0;
    std::vector<LabelScore> per_label;
    int unparsed_count = 0;
    int n = 0;
};

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json per_label = nlohmann::json::array();
    for (const auto& s : r.per_label) {
        per_label.push_back({{"label", s.label},
                             {"precision", s.precision},
                             {"recall", s.recall},
                             {"f1", s.f1},
                             {"support", s.support}});
    }
    return nlohmann::json{{"f1_macro", r.f1_macro},
                          {"per_label", per_label},
                          {"unparsed_count", r.unparsed_count},
                          {"n", r.n}};
}

inline std::string report_to_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "label,precision,recall,f1,support\n";
    for (const auto& s : r.per_label) {
        out << s.label << ',' << s.precision << ',' << s.recall << ',' << s.f1 << ','
            << s.support << '\n';
    }
    out << "macro,,," << r.f1_macro << ',' << r.n << '\n';
    return out.str();
}

// Extracts a requested label from raw model output: first valid JSON object,
// configured field (case-insensitive), canonicalized against the label set.
inline std::optional<std::string> parse_label_json(std::string_view raw, std::string_view field,
                                                   const LabelSet& labels) {
    auto value = unwrap_envelope(raw, field);
    if (!value) return std::nullopt;
    return canonicalize_label(*value, labels);
}

// Per-label precision/recall/F1 with the 0-convention on empty denominators.
// An unparsed prediction counts as a false negative for its gold label and
// as a false positive for no label. Macro averages over the full label set.
inline EvalReport f1_macro_report(const std::vector<Prediction>& preds,
                                  const std::vector<std::string>& golds, const LabelSet& labels) {
    if (preds.size() != golds.size()) {
        throw DataError("predictions and golds differ in length: " +
                        std::to_string(preds.size()) + " vs " + std::to_string(golds.size()));
    }
    if (preds.empty()) throw DataError("cannot score an empty prediction list");

    const size_t label_count = labels.size();
    std::vector<long> tp(label_count, 0), fp(label_count, 0), fn(label_count, 0),
        support(label_count, 0);
    int unparsed = 0;

    for (size_t i = 0; i < preds.size(); ++i) {
        const auto gold_idx = labels.index_of(golds[i]);
        if (!gold_idx) throw DataError("gold label '" + golds[i] + "' is not in the label set");
        ++support[*gold_idx];
        if (!preds[i].parsed_label) {
            ++unparsed;
            ++fn[*gold_idx];
            continue;
        }
        const auto pred_idx = labels.index_of(*preds[i].parsed_label);
        if (!pred_idx) {
            throw DataError("parsed label '" + *preds[i].parsed_label +
                            "' is not in the label set");
        }
        if (*pred_idx == *gold_idx) {
            ++tp[*gold_idx];
        } else {
            ++fn[*gold_idx];
            ++fp[*pred_idx];
        }
    }

    EvalReport report;
    report.n = static_cast<int>(preds.size());
    report.unparsed_count = unparsed;
    double f1_sum = 0.0;
    for (size_t l = 0; l < label_count; ++l) {
        LabelScore score;
        score.label = labels.display(l);
        score.support = static_cast<int>(support[l]);
        const double p_den = static_cast<double>(tp[l] + fp[l]);
        const double r_den = static_cast<double>(tp[l] + fn[l]);
        score.precision = p_den > 0 ? static_cast<double>(tp[l]) / p_den : 0.0;
        score.recall = r_den > 0 ? static_cast<double>(tp[l]) / r_den : 0.0;
        const double pr = score.precision + score.recall;
        score.f1 = pr > 0 ? 2.0 * score.precision * score.recall / pr : 0.0;
        f1_sum += score.f1;
        report.per_label.push_back(std::move(score));
    }
    report.f1_macro = f1_sum / static_cast<double>(label_count);
    return report;
}

struct SubsampleSpec {
    double proportion = 1.0;
    std::uint64_t seed = 0;
};

inline void validate(const SubsampleSpec& spec) {
    if (spec.proportion <= 0.0 || spec.proportion > 1.0)
        throw ConfigError("subsample proportion must be in (0, 1]");
}

// Draws max(1, floor(p*n)) instances without replacement, deterministic for
// a fixed dataset order and stream position. Original order is preserved.
inline std::vector<Instance> subsample(const std::vector<Instance>& dataset, double proportion,
                                       Substream& rng) {
    if (dataset.empty()) throw DataError("cannot subsample an empty dataset");
    const size_t n = dataset.size();
    const size_t m = std::max<size_t>(
        1, static_cast<size_t>(std::floor(proportion * static_cast<double>(n))));
    if (m >= n) return dataset;

    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = 0; i < m; ++i) {
        const size_t j = i + static_cast<size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    std::vector<Instance> out;
    out.reserve(m);
    for (size_t i : idx) out.push_back(dataset[i]);
    return out;
}

inline std::vector<Instance> subsample(const std::vector<Instance>& dataset,
                                       const SubsampleSpec& spec) {
    validate(spec);
    Substream rng(substream_seed(spec.seed, "subsample"));
    return subsample(dataset, spec.proportion, rng);
}

// Scores rendered prompts on datasets: zero-shot greedy prediction per
// instance, JSON label extraction, F1-macro aggregation.
class Evaluator {
public:
    Evaluator(Backend& backend, MetaPrompts prompts, std::string label_field = "label",
              int parallelism = 1)
        : backend_(backend), prompts_(std::move(prompts)),
          label_field_(std::move(label_field)), parallelism_(parallelism) {}

    Prediction predict_label(const RenderedPrompt& prompt, const Instance& instance,
                             const LabelSet& labels) const {
        const std::vector<ChatMessage> messages{
            prompts_.structured_message(label_field_),
            user_message(prompt.text + "\nText: " + instance.text)};
        const Completion completion = backend_.complete(messages, DecodeConfig::greedy());
        Prediction pred;
        pred.instance_id = instance.id;
        pred.raw_output = completion.text;
        pred.parsed_label = parse_label_json(completion.text, label_field_, labels);
        return pred;
    }

    std::vector<Prediction> predict_all(const RenderedPrompt& prompt,
                                        const std::vector<Instance>& dataset,
                                        const LabelSet& labels) const {
        return parallel_map(
            dataset, [&](const Instance& inst) { return predict_label(prompt, inst, labels); },
            parallelism_);
    }

    EvalReport evaluate(const RenderedPrompt& prompt, const std::vector<Instance>& dataset,
                        const LabelSet& labels) const {
        const auto preds = predict_all(prompt, dataset, labels);
        std::vector<std::string> golds;
        golds.reserve(dataset.size());
        for (const auto& inst : dataset) golds.push_back(inst.gold_label);
        return f1_macro_report(preds, golds, labels);
    }

    const std::string& label_field() const { return label_field_; }

private:
    Backend& backend_;
    MetaPrompts prompts_;
    std::string label_field_;
    int parallelism_;
};

}  // namespace ipoe
