#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/backend.hpp"
#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/evaluator.hpp"
#include "ipoe/meta_prompts.hpp"
#include "ipoe/operators.hpp"
#include "ipoe/rng.hpp"

namespace ipoe {

enum class OpKind { add, remove, replace, merge, shuffle };

// Fixed precedence; also the tie-break order among equal-scoring candidates.
inline int precedence(OpKind op) { return static_cast<int>(op); }

inline std::string to_string(OpKind op) {
    switch (op) {
        case OpKind::add: return "add";
        case OpKind::remove: return "remove";
        case OpKind::replace: return "replace";
        case OpKind::merge: return "merge";
        case OpKind::shuffle: return "shuffle";
    }
    return "unknown";
}

inline OpKind op_kind_from(std::string_view s) {
    if (s == "add") return OpKind::add;
    if (s == "remove") return OpKind::remove;
    if (s == "replace") return OpKind::replace;
    if (s == "merge") return OpKind::merge;
    if (s == "shuffle") return OpKind::shuffle;
    throw ConfigError("unknown operator: " + std::string(s));
}

inline std::vector<OpKind> all_operators() {
    return {OpKind::add, OpKind::remove, OpKind::replace, OpKind::merge, OpKind::shuffle};
}

enum class SelectionMode { argmax, sequential };

inline std::string to_string(SelectionMode m) {
    return m == SelectionMode::argmax ? "argmax" : "sequential";
}

inline SelectionMode selection_mode_from(std::string_view s) {
    if (s == "argmax") return SelectionMode::argmax;
    if (s == "sequential") return SelectionMode::sequential;
    throw ConfigError("unknown selection mode: " + std::string(s));
}

enum class SubsampleMode { fixed, per_iteration };

struct OptimizerConfig {
    int max_iterations = 300;
    std::vector<OpKind> operators = all_operators();
    SelectionMode selection = SelectionMode::argmax;
    SamplerConfig sampler;
    SubsampleSpec eval;
    SubsampleMode subsample_mode = SubsampleMode::fixed;
    std::uint64_t root_seed = 0;
    DecodeConfig merge_decode = DecodeConfig::sampled();
    int merge_parse_attempts = 3;
};

inline void validate(const OptimizerConfig& cfg) {
    if (cfg.max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
    if (cfg.operators.empty()) throw ConfigError("operator set must not be empty");
    std::vector<OpKind> seen;
    for (OpKind op : cfg.operators) {
        if (std::find(seen.begin(), seen.end(), op) != seen.end())
            throw ConfigError("duplicate operator: " + to_string(op));
        seen.push_back(op);
    }
    validate(cfg.sampler);
    validate(cfg.eval);
}

struct CandidateOutcome {
    OpKind op = OpKind::add;
    bool applicable = false;
    std::string digest;
    double score = 0.0;
    std::vector<std::string> merge_skipped_labels;
};

// One optimization step record; the trace unit. Carries the RNG counters and
// set ids needed to replay or resume the run exactly.
struct StepOutcome {
    int iteration = 0;
    std::vector<std::string> sampled_ids;
    std::vector<CandidateOutcome> candidates;
    std::optional<OpKind> winner;
    bool accepted = false;
    double score_before = 0.0;
    double score_after = 0.0;
    std::vector<std::string> pre_ids;
    std::vector<std::string> post_ids;
    std::map<std::string, std::uint64_t> rng_before;
    std::map<std::string, std::uint64_t> rng_after;
};

inline nlohmann::json step_to_json(const StepOutcome& s) {
    nlohmann::json candidates = nlohmann::json::array();
    for (const auto& c : s.candidates) {
        nlohmann::json cj{{"op", to_string(c.op)},
                          {"applicable", c.applicable},
                          {"digest", c.digest},
                          {"score", c.score}};
        if (!c.merge_skipped_labels.empty()) cj["merge_skipped"] = c.merge_skipped_labels;
        candidates.push_back(std::move(cj));
    }
    return nlohmann::json{{"iteration", s.iteration},
                          {"sampled_ids", s.sampled_ids},
                          {"candidates", candidates},
                          {"winner", s.winner ? nlohmann::json(to_string(*s.winner))
                                              : nlohmann::json(nullptr)},
                          {"accepted", s.accepted},
                          {"score_before", s.score_before},
                          {"score_after", s.score_after},
                          {"pre_ids", s.pre_ids},
                          {"post_ids", s.post_ids},
                          {"rng_before", s.rng_before},
                          {"rng_after", s.rng_after}};
}

inline StepOutcome step_from_json(const nlohmann::json& j) {
    StepOutcome s;
    s.iteration = j.at("iteration").get<int>();
    s.sampled_ids = j.at("sampled_ids").get<std::vector<std::string>>();
    for (const auto& cj : j.at("candidates")) {
        CandidateOutcome c;
        c.op = op_kind_from(cj.at("op").get<std::string>());
        c.applicable = cj.at("applicable").get<bool>();
        c.digest = cj.at("digest").get<std::string>();
        c.score = cj.at("score").get<double>();
        if (cj.contains("merge_skipped"))
            c.merge_skipped_labels = cj["merge_skipped"].get<std::vector<std::string>>();
        s.candidates.push_back(std::move(c));
    }
    if (!j.at("winner").is_null()) s.winner = op_kind_from(j["winner"].get<std::string>());
    s.accepted = j.at("accepted").get<bool>();
    s.score_before = j.at("score_before").get<double>();
    s.score_after = j.at("score_after").get<double>();
    s.pre_ids = j.at("pre_ids").get<std::vector<std::string>>();
    s.post_ids = j.at("post_ids").get<std::vector<std::string>>();
    s.rng_before = j.at("rng_before").get<std::map<std::string, std::uint64_t>>();
    s.rng_after = j.at("rng_after").get<std::map<std::string, std::uint64_t>>();
    return s;
}

// Live search state. Reconstructable from a run directory (manifest +
// checkpoints + trace) for exact resume.
struct OptimizerState {
    GuidelineSet set;
    double score = 0.0;
    int next_iteration = 1;
    RngSuite rng{0};
    std::vector<Instance> train_subset;
};

struct OptimizeHooks {
    std::function<void(const StepOutcome&)> on_step;
    std::function<void(int iteration, const GuidelineSet&, double score)> on_accept;
};

struct OptimizeResult {
    RenderedPrompt final_prompt;
    GuidelineSet final_set;
    double initial_score = 0.0;
    double final_score = 0.0;
    std::vector<StepOutcome> trace;
    std::vector<std::string> subsample_ids;
};

// The hill-climbing loop: sample guidelines, build one candidate per
// operator, select (argmax or sequential), accept on strict improvement.
class Optimizer {
public:
    Optimizer(PromptPrefix prefix, LabelSet labels, OptimizerConfig config, Evaluator& evaluator,
              Backend& backend, MetaPrompts prompts = {})
        : prefix_(std::move(prefix)), labels_(std::move(labels)), config_(std::move(config)),
          evaluator_(evaluator), backend_(backend), prompts_(std::move(prompts)) {
        validate(config_);
    }

    // Builds the seeded RNG suite: sampler and subsample streams honor their
    // own config seeds, everything else derives from the root seed.
    RngSuite make_rng() const {
        RngSuite rng(config_.root_seed);
        rng.seed_stream("sampling", substream_seed(config_.sampler.seed, "sampling"));
        rng.seed_stream("subsample", substream_seed(config_.eval.seed, "subsample"));
        // Touch every stream so counters are complete from the start.
        rng.stream("remove");
        rng.stream("replace");
        rng.stream("shuffle");
        return rng;
    }

    // Draws the training subsample and scores the empty set (vanilla).
    OptimizerState init_state(const std::vector<Instance>& train) {
        OptimizerState state;
        state.rng = make_rng();
        state.train_subset =
            subsample(train, config_.eval.proportion, state.rng.stream("subsample"));
        state.score = evaluator_
                          .evaluate(render_prompt(prefix_, state.set), state.train_subset,
                                    labels_)
                          .f1_macro;
        state.next_iteration = 1;
        return state;
    }

    StepOutcome step(OptimizerState& state, const GuidelinePool& pool,
                     const std::vector<Instance>& train) {
        StepOutcome out;
        out.iteration = state.next_iteration;
        out.rng_before = state.rng.counters();
        out.pre_ids = state.set.ids();

        if (config_.subsample_mode == SubsampleMode::per_iteration) {
            state.train_subset =
                subsample(train, config_.eval.proportion, state.rng.stream("subsample"));
            // Rebase the current score on this iteration's subsample so the
            // improvement comparison stays apples-to-apples.
            state.score = score_of(state.set, state.train_subset);
        }
        out.score_before = state.score;

        const auto sampled =
            sample_guidelines(pool, config_.sampler, state.rng.stream("sampling"));
        for (const auto& g : sampled) out.sampled_ids.push_back(g.id);

        if (config_.selection == SelectionMode::argmax) {
            run_argmax(state, sampled, out);
        } else {
            run_sequential(state, sampled, out);
        }

        out.score_after = state.score;
        out.post_ids = state.set.ids();
        out.rng_after = state.rng.counters();
        ++state.next_iteration;
        return out;
    }

    OptimizeResult optimize(const GuidelinePool& pool, const std::vector<Instance>& train,
                            const OptimizeHooks& hooks = {}) {
        if (pool.empty()) throw DataError("cannot optimize with an empty guideline pool");
        OptimizerState state = init_state(train);
        OptimizeResult result;
        result.initial_score = state.score;
        for (const auto& inst : state.train_subset) result.subsample_ids.push_back(inst.id);
        run_steps(state, pool, train, config_.max_iterations, hooks, &result.trace);
        result.final_set = state.set;
        result.final_score = state.score;
        result.final_prompt = render_prompt(prefix_, state.set);
        return result;
    }

    // Runs steps until next_iteration exceeds last_iteration. Shared by
    // optimize() and resume.
    void run_steps(OptimizerState& state, const GuidelinePool& pool,
                   const std::vector<Instance>& train, int last_iteration,
                   const OptimizeHooks& hooks = {}, std::vector<StepOutcome>* sink = nullptr) {
        while (state.next_iteration <= last_iteration) {
            StepOutcome outcome = step(state, pool, train);
            if (outcome.accepted && hooks.on_accept) {
                hooks.on_accept(outcome.iteration, state.set, state.score);
            }
            if (hooks.on_step) hooks.on_step(outcome);
            if (sink) sink->push_back(std::move(outcome));
        }
    }

    double score_of(const GuidelineSet& set, const std::vector<Instance>& subset) const {
        return evaluator_.evaluate(render_prompt(prefix_, set), subset, labels_).f1_macro;
    }

    const PromptPrefix& prefix() const { return prefix_; }
    const LabelSet& labels() const { return labels_; }
    const OptimizerConfig& config() const { return config_; }

private:
    struct BuiltCandidate {
        CandidateOutcome outcome;
        std::optional<GuidelineSet> set;
    };

    // Builds the candidate for one operator against `base`, consuming draws
    // from that operator's dedicated stream.
    BuiltCandidate build_candidate(OpKind op, const GuidelineSet& base,
                                   const std::vector<Guideline>& sampled, RngSuite& rng) {
        BuiltCandidate built;
        built.outcome.op = op;
        switch (op) {
            case OpKind::add:
                built.set = op_add(base, sampled);
                break;
            case OpKind::remove:
                built.set =
                    op_remove(base, sampled, config_.sampler.strategy, rng.stream("remove"));
                break;
            case OpKind::replace:
                built.set =
                    op_replace(base, sampled, config_.sampler.strategy, rng.stream("replace"));
                break;
            case OpKind::merge: {
                MergeOutcome merged = op_merge(base, sampled, backend_, prompts_,
                                               config_.merge_decode, config_.merge_parse_attempts);
                built.outcome.merge_skipped_labels = merged.skipped_labels;
                if (merged.applicable) built.set = std::move(merged.set);
                break;
            }
            case OpKind::shuffle:
                built.set = op_shuffle(base, rng.stream("shuffle"));
                break;
        }
        built.outcome.applicable = built.set.has_value();
        if (built.set) built.outcome.digest = set_digest(*built.set);
        return built;
    }

    void run_argmax(OptimizerState& state, const std::vector<Guideline>& sampled,
                    StepOutcome& out) {
        // Candidates are built and evaluated in fixed precedence order, so
        // the winner under ties never depends on configuration order.
        std::vector<OpKind> ops = config_.operators;
        std::sort(ops.begin(), ops.end(),
                  [](OpKind a, OpKind b) { return precedence(a) < precedence(b); });

        std::optional<size_t> best;
        std::vector<BuiltCandidate> built;
        for (OpKind op : ops) {
            BuiltCandidate candidate = build_candidate(op, state.set, sampled, state.rng);
            if (candidate.set) {
                candidate.outcome.score = score_of(*candidate.set, state.train_subset);
                if (!best || candidate.outcome.score > built[*best].outcome.score) {
                    best = built.size();
                }
            }
            built.push_back(std::move(candidate));
        }
        for (const auto& c : built) out.candidates.push_back(c.outcome);

        if (best && built[*best].outcome.score > state.score) {
            out.winner = built[*best].outcome.op;
            out.accepted = true;
            state.set = std::move(*built[*best].set);
            state.score = built[*best].outcome.score;
        }
    }

    // Algorithm-literal mode: operators run in configured order and every
    // strict improvement is taken immediately.
    void run_sequential(OptimizerState& state, const std::vector<Guideline>& sampled,
                        StepOutcome& out) {
        for (OpKind op : config_.operators) {
            BuiltCandidate candidate = build_candidate(op, state.set, sampled, state.rng);
            if (candidate.set) {
                candidate.outcome.score = score_of(*candidate.set, state.train_subset);
                if (candidate.outcome.score > state.score) {
                    out.winner = op;
                    out.accepted = true;
                    state.set = std::move(*candidate.set);
                    state.score = candidate.outcome.score;
                }
            }
            out.candidates.push_back(std::move(candidate.outcome));
        }
    }

    PromptPrefix prefix_;
    LabelSet labels_;
    OptimizerConfig config_;
    Evaluator& evaluator_;
    Backend& backend_;
    MetaPrompts prompts_;
};

}  // namespace ipoe
