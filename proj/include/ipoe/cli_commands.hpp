#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/backend_factory.hpp"
#include "ipoe/config.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/evaluator.hpp"
#include "ipoe/jsonl.hpp"
#include "ipoe/optimizer.hpp"
#include "ipoe/pool_builder.hpp"
#include "ipoe/report.hpp"
#include "ipoe/run_store.hpp"

namespace ipoe {

inline nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json j{{"task_name", cfg.task_name},
                     {"labels", cfg.labels},
                     {"prompt_prefix", cfg.prompt_prefix},
                     {"pool", cfg.pool_path},
                     {"max_iterations", cfg.max_iterations},
                     {"selection", to_string(cfg.selection)},
                     {"label_field", cfg.label_field},
                     {"output_root", cfg.output_root},
                     {"parallelism", cfg.parallelism},
                     {"max_skip_fraction", cfg.max_skip_fraction}};
    nlohmann::json datasets;
    if (!cfg.train_path.empty()) datasets["train"] = cfg.train_path;
    if (!cfg.validation_path.empty()) datasets["validation"] = cfg.validation_path;
    if (!cfg.test_path.empty()) datasets["test"] = cfg.test_path;
    j["datasets"] = datasets;
    j["explanation"] = {{"source", to_string(cfg.explanation_source)},
                        {"kind", to_string(cfg.explanation_kind)}};
    j["sampler"] = {{"strategy", to_string(cfg.strategy)}, {"k", cfg.k}};
    j["subsample"] = {{"proportion", cfg.subsample_proportion},
                      {"mode", cfg.subsample_mode == SubsampleMode::fixed ? "fixed"
                                                                          : "per-iteration"}};
    nlohmann::json ops = nlohmann::json::array();
    for (OpKind op : cfg.operators) ops.push_back(to_string(op));
    j["operators"] = ops;
    if (cfg.seed) j["seed"] = *cfg.seed;
    j["backend"] = {{"type", cfg.backend.type},
                    {"script", cfg.backend.script_path},
                    {"base_url", cfg.backend.base_url},
                    {"model", cfg.backend.model},
                    {"api_key_env", cfg.backend.api_key_env},
                    {"timeout_s", cfg.backend.timeout_seconds},
                    {"backoff_ms", cfg.backend.backoff_ms},
                    {"rate_limit_per_s", cfg.backend.rate_limit_per_second},
                    {"cache_dir", cfg.backend.cache_dir},
                    {"cache", cfg.backend.cache_enabled}};
    const MetaPrompts defaults;
    nlohmann::json prompts;
    auto keep_override = [&](const char* key, const MetaPromptTemplate& tmpl,
                             const MetaPromptTemplate& def) {
        if (tmpl.text != def.text) prompts[key] = tmpl.text;
    };
    keep_override("explain_natural", cfg.prompts.explain_natural, defaults.explain_natural);
    keep_override("explain_feature", cfg.prompts.explain_feature, defaults.explain_feature);
    keep_override("guideline_from_natural", cfg.prompts.guideline_from_natural,
                  defaults.guideline_from_natural);
    keep_override("guideline_from_feature", cfg.prompts.guideline_from_feature,
                  defaults.guideline_from_feature);
    keep_override("merge", cfg.prompts.merge, defaults.merge);
    keep_override("structured_system", cfg.prompts.structured_system, defaults.structured_system);
    if (!prompts.empty()) j["meta_prompts"] = prompts;
    return j;
}

inline std::filesystem::path default_cache_dir(const RunConfig& cfg) {
    return std::filesystem::path(cfg.output_root) / "cache";
}

// Task names become directory components; keep them filesystem-friendly.
inline std::string slug(const std::string& name) {
    std::string out;
    for (char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!out.empty() && out.back() != '-') {
            out.push_back('-');
        }
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out.empty() ? "task" : out;
}

inline PoolBuildOptions pool_build_options(const RunConfig& cfg) {
    PoolBuildOptions opts;
    opts.source = cfg.explanation_source;
    opts.kind = cfg.explanation_kind;
    opts.task_name = cfg.task_name;
    opts.task_preamble = cfg.prompt_prefix;
    opts.parallelism = cfg.parallelism;
    opts.max_skip_fraction = cfg.max_skip_fraction;
    return opts;
}

// --- gen-explanations ---------------------------------------------------

struct GenExplanationsOptions {
    std::string dataset_path;  // defaults to the train split
    std::string out_path;
    bool only_missing = false;
};

struct GenExplanationsResult {
    int generated = 0;
    int kept = 0;
    int skipped = 0;
};

// Writes a copy of the dataset with explanation and explanation_kind filled.
// The output file appears only after every instance was processed, so a
// backend failure leaves no partial file behind.
inline GenExplanationsResult cmd_gen_explanations(const RunConfig& cfg,
                                                  const GenExplanationsOptions& options) {
    const std::string dataset_path =
        options.dataset_path.empty() ? cfg.train_path : options.dataset_path;
    if (dataset_path.empty()) throw ConfigError("gen-explanations requires a dataset path");
    if (options.out_path.empty()) throw ConfigError("gen-explanations requires an output path");

    const LabelSet labels = cfg.label_set();
    std::vector<Instance> instances = read_instances(dataset_path, labels);

    BackendStack backend = make_backend_stack(cfg, default_cache_dir(cfg));
    PoolBuilder builder(backend.active(), cfg.prompts, pool_build_options(cfg));

    GenExplanationsResult result;
    struct Annotated {
        Instance instance;
        bool generated = false;
        bool skipped = false;
    };
    auto annotate = [&](const Instance& instance) -> Annotated {
        if (options.only_missing && instance.explanation) return {instance, false, false};
        Annotated out{instance, false, false};
        try {
            out.instance.explanation =
                builder.generate_explanation(instance, cfg.explanation_kind);
            out.instance.explanation_kind = cfg.explanation_kind;
            out.generated = true;
        } catch (const GenerationParseError& e) {
            std::cerr << "warning: " << e.what() << '\n';
            out.skipped = true;
        }
        return out;
    };
    const auto annotated = parallel_map(instances, annotate, cfg.parallelism);

    std::vector<Instance> output;
    output.reserve(annotated.size());
    for (const auto& a : annotated) {
        output.push_back(a.instance);
        if (a.generated) ++result.generated;
        else if (a.skipped) ++result.skipped;
        else ++result.kept;
    }

    const std::string tmp = options.out_path + ".tmp";
    write_instances(tmp, output);
    std::filesystem::rename(tmp, options.out_path);

    std::cout << "annotated " << result.generated << " instance(s), kept " << result.kept
              << ", skipped " << result.skipped << " -> " << options.out_path << '\n';
    return result;
}

// --- build-pool -----------------------------------------------------------

struct BuildPoolOptions {
    std::string dataset_path;  // defaults to the train split
    std::string out_path;      // defaults to cfg.pool_path
};

inline PoolBuildResult cmd_build_pool(const RunConfig& cfg, const BuildPoolOptions& options) {
    const std::string dataset_path =
        options.dataset_path.empty() ? cfg.train_path : options.dataset_path;
    if (dataset_path.empty()) throw ConfigError("build-pool requires a train dataset");
    const std::string out_path = options.out_path.empty() ? cfg.pool_path : options.out_path;
    if (out_path.empty()) throw ConfigError("build-pool requires a pool output path");

    const LabelSet labels = cfg.label_set();
    const std::vector<Instance> instances = read_instances(dataset_path, labels);

    BackendStack backend = make_backend_stack(cfg, default_cache_dir(cfg));
    PoolBuilder builder(backend.active(), cfg.prompts, pool_build_options(cfg));
    PoolBuildResult result = builder.build_pool(instances, labels);

    if (const auto parent = std::filesystem::path(out_path).parent_path(); !parent.empty()) {
        std::filesystem::create_directories(parent);
    }
    write_pool(out_path, result.pool);

    nlohmann::json manifest{{"dataset", dataset_path},
                            {"dataset_digest", file_digest(dataset_path)},
                            {"backend", backend.active().descriptor()},
                            {"source", to_string(cfg.explanation_source)},
                            {"kind", to_string(cfg.explanation_kind)},
                            {"pool_size", result.pool.size()},
                            {"processed", result.processed},
                            {"skipped", result.skipped},
                            {"deduplicated", result.deduplicated}};
    if (cfg.seed) manifest["seed"] = *cfg.seed;
    write_text_file(out_path + ".manifest.json", manifest.dump(2) + "\n");

    std::cout << "pool of " << result.pool.size() << " guideline(s) (" << result.processed
              << " processed, " << result.skipped << " skipped, " << result.deduplicated
              << " duplicate(s)) -> " << out_path << '\n';
    return result;
}

// --- optimize ---------------------------------------------------------------

struct OptimizeOptions {
    int rounds = 1;
    std::string resume_dir;
};

struct RoundOutcome {
    std::filesystem::path dir;
    std::uint64_t seed = 0;
    double initial_score = 0.0;
    double final_score = 0.0;
    std::optional<double> best_validation_score;
    std::optional<int> best_validation_iteration;
};

namespace detail {

inline OptimizeHooks store_hooks(RunStore& store) {
    OptimizeHooks hooks;
    hooks.on_step = [&store](const StepOutcome& outcome) { store.append_trace(outcome); };
    hooks.on_accept = [&store](int iteration, const GuidelineSet& set, double score) {
        Checkpoint checkpoint;
        checkpoint.iteration = iteration;
        checkpoint.guidelines = set.members();
        checkpoint.train_score = score;
        store.save_checkpoint(checkpoint);
    };
    return hooks;
}

inline void maybe_select_best(const RunConfig& cfg, RunStore& store, const Evaluator& evaluator,
                              const LabelSet& labels, RoundOutcome& outcome) {
    if (cfg.validation_path.empty() || store.list_checkpoints().empty()) return;
    const auto validation = read_instances(cfg.validation_path, labels);
    const Checkpoint best = select_best(store, evaluator, cfg.prefix(), validation, labels);
    outcome.best_validation_score = best.validation_score;
    outcome.best_validation_iteration = best.iteration;
}

inline RoundOutcome run_one_round(const RunConfig& cfg, std::uint64_t run_seed, int round_index,
                                  const GuidelinePool& pool,
                                  const std::vector<Instance>& train) {
    RunConfig round_cfg = cfg;
    round_cfg.seed = run_seed;

    const std::string run_id = slug(cfg.task_name) + "-round" + std::to_string(round_index + 1) +
                               "-seed" + std::to_string(run_seed);
    const std::filesystem::path dir = std::filesystem::path(cfg.output_root) / run_id;
    if (std::filesystem::exists(dir)) {
        throw StoreError("run directory already exists (use --resume or remove it): " +
                         dir.string());
    }

    const LabelSet labels = cfg.label_set();

    RunManifest manifest;
    manifest.run_id = run_id;
    manifest.root_seed = run_seed;
    manifest.status = RunStatus::running;
    manifest.backend_descriptors = {make_inner_backend(round_cfg.backend)->descriptor()};
    if (!cfg.train_path.empty()) manifest.dataset_digests["train"] = file_digest(cfg.train_path);
    if (!cfg.validation_path.empty())
        manifest.dataset_digests["validation"] = file_digest(cfg.validation_path);
    if (!cfg.test_path.empty()) manifest.dataset_digests["test"] = file_digest(cfg.test_path);

    RunStore store = RunStore::create(dir, std::move(manifest),
                                      config_to_json(round_cfg).dump(2) + "\n");
    store.save_pool(pool);

    BackendStack backend = make_backend_stack(round_cfg, store.cache_dir());
    Evaluator evaluator(backend.active(), cfg.prompts, cfg.label_field, cfg.parallelism);
    Optimizer optimizer(cfg.prefix(), labels, optimizer_config_from(cfg, run_seed), evaluator,
                        backend.active(), cfg.prompts);

    OptimizerState state = optimizer.init_state(train);
    std::vector<std::string> subsample_ids;
    for (const auto& inst : state.train_subset) subsample_ids.push_back(inst.id);
    store.set_initial_state(state.score, subsample_ids);

    RoundOutcome outcome;
    outcome.dir = dir;
    outcome.seed = run_seed;
    outcome.initial_score = state.score;

    optimizer.run_steps(state, pool, train, cfg.max_iterations, store_hooks(store));
    outcome.final_score = state.score;
    store.set_status(RunStatus::completed);

    maybe_select_best(cfg, store, evaluator, labels, outcome);
    return outcome;
}

inline RoundOutcome resume_round(const std::filesystem::path& dir) {
    ResumePoint point = resume(dir);
    RoundOutcome outcome;
    outcome.dir = dir;
    outcome.seed = point.manifest.root_seed;
    outcome.initial_score = point.manifest.initial_score;
    if (point.already_completed) {
        std::cout << "run " << point.manifest.run_id << " is already completed; nothing to do\n";
        outcome.final_score = point.score;
        return outcome;
    }

    RunStore store = RunStore::open(dir, /*writer=*/true);
    nlohmann::json cj = nlohmann::json::parse(store.config_bytes());
    RunConfig cfg = config_from_json(cj);
    validate(cfg);
    if (!cfg.seed) throw StoreError("stored run config has no seed; cannot resume");

    const LabelSet labels = cfg.label_set();
    const auto train = read_instances(cfg.train_path, labels);
    const GuidelinePool pool = store.load_pool();

    BackendStack backend = make_backend_stack(cfg, store.cache_dir());
    Evaluator evaluator(backend.active(), cfg.prompts, cfg.label_field, cfg.parallelism);
    Optimizer optimizer(cfg.prefix(), labels, optimizer_config_from(cfg, *cfg.seed), evaluator,
                        backend.active(), cfg.prompts);

    OptimizerState state;
    if (store.manifest().subsample_ids.empty()) {
        // Interrupted before setup finished; redo it (deterministic).
        state = optimizer.init_state(train);
        std::vector<std::string> ids;
        for (const auto& inst : state.train_subset) ids.push_back(inst.id);
        store.set_initial_state(state.score, ids);
    } else {
        state.rng = optimizer.make_rng();
        state.train_subset = subsample(train, cfg.subsample_proportion,
                                       state.rng.stream("subsample"));
        std::vector<std::string> ids;
        for (const auto& inst : state.train_subset) ids.push_back(inst.id);
        if (ids != store.manifest().subsample_ids) {
            throw StoreError("training subsample does not reproduce; dataset changed? " +
                             dir.string());
        }
        state.set = point.set;
        state.score = point.next_iteration == 1 ? point.manifest.initial_score : point.score;
        state.next_iteration = point.next_iteration;
        state.rng.restore(point.rng_counters);
    }

    optimizer.run_steps(state, pool, train, cfg.max_iterations, store_hooks(store));
    outcome.final_score = state.score;
    store.set_status(RunStatus::completed);

    RoundOutcome scored = outcome;
    maybe_select_best(cfg, store, evaluator, labels, scored);
    return scored;
}

}  // namespace detail

// Runs `rounds` independent optimizations with seeds derived from the root
// seed, one run directory each; or resumes an interrupted one.
inline std::vector<RoundOutcome> cmd_optimize(const RunConfig& cfg,
                                              const OptimizeOptions& options) {
    if (!options.resume_dir.empty()) {
        RoundOutcome outcome = detail::resume_round(options.resume_dir);
        std::cout << "resumed: seed " << outcome.seed << ", train " << outcome.initial_score
                  << " -> " << outcome.final_score;
        if (outcome.best_validation_score) {
            std::cout << ", best validation " << *outcome.best_validation_score << " (iteration "
                      << *outcome.best_validation_iteration << ")";
        }
        std::cout << " [" << outcome.dir.string() << "]\n";
        return {std::move(outcome)};
    }
    if (options.rounds < 1) throw ConfigError("rounds must be at least 1");
    if (cfg.train_path.empty()) throw ConfigError("optimize requires a train dataset");
    if (cfg.pool_path.empty()) throw ConfigError("optimize requires a pool path");
    if (!std::filesystem::exists(cfg.pool_path))
        throw ConfigError("pool file does not exist: " + cfg.pool_path);

    const LabelSet labels = cfg.label_set();
    const auto train = read_instances(cfg.train_path, labels);
    const GuidelinePool pool = read_pool(cfg.pool_path);
    if (pool.empty()) throw DataError("guideline pool is empty: " + cfg.pool_path);

    const std::uint64_t root_seed = cfg.seed ? *cfg.seed : std::random_device{}();

    std::vector<RoundOutcome> outcomes;
    for (int round = 0; round < options.rounds; ++round) {
        const std::uint64_t run_seed =
            options.rounds == 1 ? root_seed : round_seed(root_seed, round);
        RoundOutcome outcome = detail::run_one_round(cfg, run_seed, round, pool, train);
        std::cout << "round " << (round + 1) << ": seed " << outcome.seed << ", train "
                  << outcome.initial_score << " -> " << outcome.final_score;
        if (outcome.best_validation_score) {
            std::cout << ", best validation " << *outcome.best_validation_score << " (iteration "
                      << *outcome.best_validation_iteration << ")";
        }
        std::cout << " [" << outcome.dir.string() << "]\n";
        outcomes.push_back(std::move(outcome));
    }
    return outcomes;
}

// --- evaluate -----------------------------------------------------------------

struct EvaluateOptions {
    std::string source = "vanilla";  // vanilla | cot | random[:n] | file:<path> | checkpoint:<path>
    std::string dataset_path;        // defaults to the test split
    std::string out_dir;
};

inline constexpr std::string_view kCotInstruction = "Let's think step by step.";

// Resolves a prompt source spec to the prompt to score.
inline RenderedPrompt resolve_prompt_source(const RunConfig& cfg, const std::string& source) {
    const PromptPrefix prefix = cfg.prefix();
    if (source == "vanilla") {
        return render_prompt(prefix, GuidelineSet{});
    }
    if (source == "cot") {
        RenderedPrompt prompt;
        prompt.prefix = prefix;
        prompt.text = prefix.text + " " + std::string(kCotInstruction);
        return prompt;
    }
    if (source == "random" || source.rfind("random:", 0) == 0) {
        if (cfg.pool_path.empty() || !std::filesystem::exists(cfg.pool_path))
            throw ConfigError("random baseline requires an existing pool file");
        const GuidelinePool pool = read_pool(cfg.pool_path);
        if (pool.empty()) throw DataError("guideline pool is empty: " + cfg.pool_path);
        size_t n = cfg.label_set().size();  // paper convention: one per label
        if (source.rfind("random:", 0) == 0) {
            const int parsed = std::stoi(source.substr(7));
            if (parsed < 1) throw ConfigError("random baseline size must be at least 1");
            n = static_cast<size_t>(parsed);
        }
        SamplerConfig sampler;
        sampler.strategy = SamplingStrategy::no_control;
        sampler.k = static_cast<int>(n);
        sampler.seed = cfg.seed.value_or(0);
        GuidelineSet set;
        for (auto& g : sample_guidelines(pool, sampler)) set.push_back(std::move(g));
        return render_prompt(prefix, set);
    }
    if (source.rfind("file:", 0) == 0) {
        const std::string path = source.substr(5);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open guideline file: " + path);
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        while (!content.empty() && (content.back() == '\n' || content.back() == '\r'))
            content.pop_back();
        if (content.empty()) throw DataError("guideline file is empty: " + path);
        // Human-written guidelines are kept as a verbatim block.
        RenderedPrompt prompt;
        prompt.prefix = prefix;
        prompt.text = prefix.text + "\n" + content;
        return prompt;
    }
    if (source.rfind("checkpoint:", 0) == 0) {
        const std::string path = source.substr(11);
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open checkpoint: " + path);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded()) throw StoreError("checkpoint is not valid JSON: " + path);
        const Checkpoint checkpoint = checkpoint_from_json(j);
        return render_prompt(prefix, GuidelineSet(checkpoint.guidelines));
    }
    throw ConfigError("unknown prompt source: " + source +
                      " (expected vanilla, cot, random[:n], file:<path>, checkpoint:<path>)");
}

inline EvalReport cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& options) {
    const std::string dataset_path =
        options.dataset_path.empty() ? cfg.test_path : options.dataset_path;
    if (dataset_path.empty()) throw ConfigError("evaluate requires a dataset path");

    const LabelSet labels = cfg.label_set();
    const auto dataset = read_instances(dataset_path, labels);
    const RenderedPrompt prompt = resolve_prompt_source(cfg, options.source);

    BackendStack backend = make_backend_stack(cfg, default_cache_dir(cfg));
    Evaluator evaluator(backend.active(), cfg.prompts, cfg.label_field, cfg.parallelism);
    const EvalReport report = evaluator.evaluate(prompt, dataset, labels);

    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        nlohmann::json j{{"source", options.source},
                         {"dataset", dataset_path},
                         {"dataset_digest", file_digest(dataset_path)},
                         {"backend", backend.active().descriptor()},
                         {"prompt_text", prompt.text},
                         {"guideline_ids", prompt.guideline_ids},
                         {"report", report_to_json(report)}};
        write_text_file(std::filesystem::path(options.out_dir) / "report.json",
                        j.dump(2) + "\n");
        write_text_file(std::filesystem::path(options.out_dir) / "report.csv",
                        report_to_csv(report));
    }

    std::cout << "f1_macro " << report.f1_macro << " on " << report.n << " instance(s), "
              << report.unparsed_count << " unparsed\n";
    return report;
}

// --- report ------------------------------------------------------------------

inline std::vector<RoundSummary> cmd_report(const std::vector<std::string>& run_dirs,
                                            const std::string& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report requires at least one run directory");
    std::vector<RoundSummary> rounds;
    for (const auto& dir : run_dirs) {
        // Globs over an output root can pick up cache or scratch dirs.
        if (!std::filesystem::exists(std::filesystem::path(dir) / "manifest.json")) {
            std::cerr << "skipping " << dir << " (not a run directory)\n";
            continue;
        }
        RunReportData data = load_run_report_data(dir);
        write_run_report(data, std::filesystem::path(out_dir) / data.manifest.run_id);
        rounds.push_back(summarize_round(data));
    }
    if (rounds.empty()) throw StoreError("no run directories among the given paths");
    write_aggregate_report(rounds, out_dir);

    const size_t best = best_round(rounds);
    for (size_t i = 0; i < rounds.size(); ++i) {
        const auto& r = rounds[i];
        std::cout << r.run_id << ": train " << r.initial_score << " -> " << r.final_train_score;
        if (r.best_validation_score) std::cout << ", best validation " << *r.best_validation_score;
        if (i == best && rounds.size() > 1) std::cout << "  (best round)";
        std::cout << '\n';
    }
    return rounds;
}

// Maps the error taxonomy onto process exit codes.
template <typename Fn>
int run_with_exit_codes(Fn&& fn) noexcept {
    try {
        fn();
        return exit_code::ok;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_code::data;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << '\n';
        return exit_code::backend;
    } catch (const StoreError& e) {
        std::cerr << "store error: " << e.what() << '\n';
        return exit_code::store;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code::failure;
    }
}

}  // namespace ipoe
