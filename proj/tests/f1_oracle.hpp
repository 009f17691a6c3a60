#pragma once

#include <optional>
#include <string>
#include <vector>

// Brute-force F1-macro oracle, independent of the library implementation:
// explicit per-label TP/FP/FN counting loops over the raw (pred, gold)
// pairs. Unparsed predictions match no label.
namespace ipoe::test {

inline double f1_macro_brute(const std::vector<std::optional<std::string>>& preds,
                             const std::vector<std::string>& golds,
                             const std::vector<std::string>& labels) {
    double f1_sum = 0.0;
    for (const auto& label : labels) {
        long tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            const bool pred_is = preds[i].has_value() && *preds[i] == label;
            const bool gold_is = golds[i] == label;
            if (pred_is && gold_is) ++tp;
            if (pred_is && !gold_is) ++fp;
            if (!pred_is && gold_is) ++fn;
        }
        const double precision = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 0.0;
        const double recall = (tp + fn) > 0 ? double(tp) / double(tp + fn) : 0.0;
        const double f1 =
            (precision + recall) > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        f1_sum += f1;
    }
    return f1_sum / static_cast<double>(labels.size());
}

}  // namespace ipoe::test
