#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/config.hpp"
#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/optimizer.hpp"
#include "ipoe/run_store.hpp"

namespace ipoe {

// Everything a report needs from one run directory.
struct RunReportData {
    std::filesystem::path dir;
    RunManifest manifest;
    RunConfig config;
    std::vector<StepOutcome> trace;
    std::map<int, Checkpoint> checkpoints;
};

inline RunReportData load_run_report_data(const std::filesystem::path& dir) {
    RunStore store = RunStore::open(dir);
    RunReportData data;
    data.dir = dir;
    data.manifest = store.manifest();
    nlohmann::json cj = nlohmann::json::parse(store.config_bytes(), nullptr, false);
    if (cj.is_discarded()) throw StoreError("stored config is not valid JSON in " + dir.string());
    data.config = config_from_json(cj);
    data.trace = store.read_trace();
    for (int iteration : store.list_checkpoints()) {
        data.checkpoints.emplace(iteration, store.load_checkpoint(iteration));
    }
    return data;
}

// iteration, current train score, accepted flag, validation score where a
// checkpoint has one. One row per optimization step.
inline std::string learning_curve_csv(const RunReportData& data) {
    std::ostringstream out;
    out << "iteration,train_score,accepted,validation_score\n";
    for (const auto& step : data.trace) {
        out << step.iteration << ',' << step.score_after << ',' << (step.accepted ? 1 : 0) << ',';
        auto it = data.checkpoints.find(step.iteration);
        if (it != data.checkpoints.end() && it->second.validation_score) {
            out << *it->second.validation_score;
        }
        out << '\n';
    }
    return out.str();
}

struct OperatorStats {
    int attempted = 0;  // applicable candidates that were evaluated
    int accepted = 0;   // steps this operator won
};

inline std::map<OpKind, OperatorStats> operator_stats(const std::vector<StepOutcome>& trace) {
    std::map<OpKind, OperatorStats> stats;
    for (OpKind op : all_operators()) stats[op];
    for (const auto& step : trace) {
        for (const auto& c : step.candidates) {
            if (c.applicable) ++stats[c.op].attempted;
        }
        if (step.accepted && step.winner) ++stats[*step.winner].accepted;
    }
    return stats;
}

inline std::string operator_stats_csv(const std::map<OpKind, OperatorStats>& stats) {
    std::ostringstream out;
    out << "operator,attempted,accepted\n";
    for (const auto& [op, s] : stats) {
        out << to_string(op) << ',' << s.attempted << ',' << s.accepted << '\n';
    }
    return out.str();
}

// The run's final guideline set: the last accepted checkpoint, or empty.
inline GuidelineSet final_set(const RunReportData& data) {
    if (data.checkpoints.empty()) return GuidelineSet{};
    return GuidelineSet(data.checkpoints.rbegin()->second.guidelines);
}

inline std::string prompt_markdown(const PromptPrefix& prefix, const GuidelineSet& set) {
    std::ostringstream out;
    out << "# Optimized prompt\n\n" << prefix.text << "\n";
    if (!set.empty()) {
        out << "\n## Guidelines\n\n";
        for (size_t i = 0; i < set.size(); ++i) {
            out << (i + 1) << ". **[" << set[i].source_label << "]** " << set[i].text << "\n";
        }
    }
    return out.str();
}

inline std::string label_counts_csv(const GuidelineSet& set, const LabelSet& labels) {
    std::map<std::string, int> counts;
    for (size_t i = 0; i < labels.size(); ++i) counts[labels.display(i)] = 0;
    for (const auto& g : set.members()) {
        auto display = canonicalize_label(g.source_label, labels);
        ++counts[display ? *display : g.source_label];
    }
    std::ostringstream out;
    out << "label,guidelines\n";
    for (const auto& [label, count] : counts) out << label << ',' << count << '\n';
    return out.str();
}

struct RoundSummary {
    std::string run_id;
    std::filesystem::path dir;
    std::uint64_t seed = 0;
    double initial_score = 0.0;
    double final_train_score = 0.0;
    std::optional<double> best_validation_score;
    std::optional<int> best_validation_iteration;
    int accepted_steps = 0;
};

inline RoundSummary summarize_round(const RunReportData& data) {
    RoundSummary s;
    s.run_id = data.manifest.run_id;
    s.dir = data.dir;
    s.seed = data.manifest.root_seed;
    s.initial_score = data.manifest.initial_score;
    s.final_train_score =
        data.trace.empty() ? data.manifest.initial_score : data.trace.back().score_after;
    for (const auto& step : data.trace) {
        if (step.accepted) ++s.accepted_steps;
    }
    for (const auto& [iteration, checkpoint] : data.checkpoints) {
        if (!checkpoint.validation_score) continue;
        if (!s.best_validation_score || *checkpoint.validation_score > *s.best_validation_score) {
            s.best_validation_score = checkpoint.validation_score;
            s.best_validation_iteration = iteration;
        }
    }
    return s;
}

// Best round by validation score (falling back to final train score when no
// validation was evaluated); ties go to the earlier round.
inline size_t best_round(const std::vector<RoundSummary>& rounds) {
    size_t best = 0;
    auto key = [](const RoundSummary& r) {
        return r.best_validation_score ? *r.best_validation_score : r.final_train_score;
    };
    for (size_t i = 1; i < rounds.size(); ++i) {
        if (key(rounds[i]) > key(rounds[best])) best = i;
    }
    return best;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot write " + path.string());
    out << content;
}

// Emits the per-run bundle: learning curve, operator table, final prompt
// (plain + markdown), and guideline counts per label.
inline void write_run_report(const RunReportData& data, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "curve.csv", learning_curve_csv(data));
    write_text_file(out_dir / "operators.csv", operator_stats_csv(operator_stats(data.trace)));

    const auto prefix = data.config.prefix();
    const auto set = final_set(data);
    write_text_file(out_dir / "prompt.txt", render_prompt(prefix, set).text + "\n");
    write_text_file(out_dir / "prompt.md", prompt_markdown(prefix, set));
    write_text_file(out_dir / "labels.csv", label_counts_csv(set, data.config.label_set()));
}

inline void write_aggregate_report(const std::vector<RoundSummary>& rounds,
                                   const std::filesystem::path& out_dir) {
    std::ostringstream csv;
    csv << "run_id,seed,initial_score,final_train_score,best_validation_score,"
           "best_validation_iteration,accepted_steps,best\n";
    const size_t best = rounds.empty() ? 0 : best_round(rounds);
    nlohmann::json rows = nlohmann::json::array();
    for (size_t i = 0; i < rounds.size(); ++i) {
        const auto& r = rounds[i];
        csv << r.run_id << ',' << r.seed << ',' << r.initial_score << ','
            << r.final_train_score << ',';
        if (r.best_validation_score) csv << *r.best_validation_score;
        csv << ',';
        if (r.best_validation_iteration) csv << *r.best_validation_iteration;
        csv << ',' << r.accepted_steps << ',' << (i == best ? 1 : 0) << '\n';

        nlohmann::json row{{"run_id", r.run_id},
                           {"seed", r.seed},
                           {"initial_score", r.initial_score},
                           {"final_train_score", r.final_train_score},
                           {"accepted_steps", r.accepted_steps},
                           {"best", i == best}};
        if (r.best_validation_score) row["best_validation_score"] = *r.best_validation_score;
        if (r.best_validation_iteration)
            row["best_validation_iteration"] = *r.best_validation_iteration;
        rows.push_back(std::move(row));
    }
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "summary.csv", csv.str());
    write_text_file(out_dir / "summary.json", nlohmann::json{{"rounds", rows}}.dump(2) + "\n");
}

}  // namespace ipoe
