// ipoe: interpretable prompt optimization via explanation-derived guidelines.
//
// Subcommands cover the full pipeline: gen-explanations, build-pool,
// optimize, evaluate, report. All of them read the JSON run config; flags
// override individual fields.

#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

#include "ipoe/cli_commands.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> iterations;
    std::optional<std::string> strategy;
    std::optional<int> k;
    std::optional<double> proportion;
    std::optional<std::string> selection;
    std::optional<std::string> backend;
    std::optional<std::string> cache_dir;
    std::optional<std::string> source;
    std::optional<std::string> output_root;
    std::optional<double> max_skip_fraction;
};

CLI::Option* add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    auto* config = cmd->add_option("--config", flags.config_path, "Run config file (JSON)");
    config->required();
    cmd->add_option("--seed", flags.seed, "Root seed (overrides config)");
    cmd->add_option("--iterations", flags.iterations, "Maximum optimization iterations");
    cmd->add_option("--strategy", flags.strategy, "Sampling strategy (no-control|label-control)");
    cmd->add_option("--k", flags.k, "Sampled guidelines per iteration");
    cmd->add_option("--proportion", flags.proportion, "Training subsample proportion");
    cmd->add_option("--selection", flags.selection, "Candidate selection (argmax|sequential)");
    cmd->add_option("--backend", flags.backend,
                    "Backend override: scripted:<rules.json> or http:<base_url>");
    cmd->add_option("--cache-dir", flags.cache_dir, "Exchange cache directory");
    cmd->add_option("--out-root", flags.output_root, "Output root directory");
    return config;
}

ipoe::RunConfig load_config(const CommonFlags& flags) {
    auto [cfg, bytes] = ipoe::load_run_config(flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.iterations) cfg.max_iterations = *flags.iterations;
    if (flags.strategy) cfg.strategy = ipoe::sampling_strategy_from(*flags.strategy);
    if (flags.k) cfg.k = *flags.k;
    if (flags.proportion) cfg.subsample_proportion = *flags.proportion;
    if (flags.selection) cfg.selection = ipoe::selection_mode_from(*flags.selection);
    if (flags.cache_dir) cfg.backend.cache_dir = *flags.cache_dir;
    if (flags.output_root) cfg.output_root = *flags.output_root;
    if (flags.source) cfg.explanation_source = ipoe::pool_source_from(*flags.source);
    if (flags.max_skip_fraction) cfg.max_skip_fraction = *flags.max_skip_fraction;
    if (flags.backend) {
        const std::string& spec = *flags.backend;
        if (spec.rfind("scripted:", 0) == 0) {
            cfg.backend.type = "scripted";
            cfg.backend.script_path = spec.substr(9);
        } else if (spec.rfind("http:", 0) == 0) {
            cfg.backend.type = "http";
            cfg.backend.base_url = spec.substr(5);
        } else {
            throw ipoe::ConfigError("bad --backend spec: " + spec);
        }
    }
    ipoe::validate(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interpretable prompt optimization via explanation-derived guidelines"};
    app.require_subcommand(1);

    // gen-explanations
    CommonFlags gen_flags;
    ipoe::GenExplanationsOptions gen_options;
    auto* gen = app.add_subcommand("gen-explanations",
                                   "Fill missing explanations for a labeled dataset");
    add_common_flags(gen, gen_flags);
    gen->add_option("--dataset", gen_options.dataset_path, "Dataset JSONL (default: train split)");
    gen->add_option("--out", gen_options.out_path, "Annotated output JSONL")->required();
    gen->add_flag("--only-missing", gen_options.only_missing,
                  "Keep existing explanations untouched");

    // build-pool
    CommonFlags pool_flags;
    ipoe::BuildPoolOptions pool_options;
    auto* pool = app.add_subcommand("build-pool", "Generate the guideline pool from a dataset");
    add_common_flags(pool, pool_flags);
    pool->add_option("--dataset", pool_options.dataset_path, "Dataset JSONL (default: train split)");
    pool->add_option("--out", pool_options.out_path, "Pool output JSONL (default: config pool)");
    pool->add_option("--source", pool_flags.source, "Explanation source (human|llm|mixed)");
    pool->add_option("--max-skip-fraction", pool_flags.max_skip_fraction,
                     "Fail when more than this fraction of instances is skipped");

    // optimize
    CommonFlags opt_flags;
    ipoe::OptimizeOptions opt_options;
    auto* opt = app.add_subcommand("optimize", "Run the guideline search");
    auto* opt_config = add_common_flags(opt, opt_flags);
    opt->add_option("--rounds", opt_options.rounds, "Independent rounds (distinct derived seeds)");
    auto* opt_resume =
        opt->add_option("--resume", opt_options.resume_dir, "Resume an interrupted run directory");
    // A resumed run reads its stored config; --config is required otherwise.
    opt_config->required(false);
    opt_config->excludes(opt_resume);

    // evaluate
    CommonFlags eval_flags;
    ipoe::EvaluateOptions eval_options;
    auto* eval = app.add_subcommand("evaluate", "Score a prompt source on a dataset");
    add_common_flags(eval, eval_flags);
    eval->add_option("--source", eval_options.source,
                     "vanilla | cot | random[:n] | file:<path> | checkpoint:<path>");
    eval->add_option("--dataset", eval_options.dataset_path, "Dataset JSONL (default: test split)");
    eval->add_option("--out", eval_options.out_dir, "Report output directory");

    // report
    std::vector<std::string> report_dirs;
    std::string report_out = "report";
    auto* report = app.add_subcommand("report", "Emit curves, operator stats, and prompts");
    report->add_option("runs", report_dirs, "Run directories")->required();
    report->add_option("--out", report_out, "Report output directory");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        return ipoe::run_with_exit_codes(
            [&] { ipoe::cmd_gen_explanations(load_config(gen_flags), gen_options); });
    }
    if (pool->parsed()) {
        return ipoe::run_with_exit_codes(
            [&] { ipoe::cmd_build_pool(load_config(pool_flags), pool_options); });
    }
    if (opt->parsed()) {
        return ipoe::run_with_exit_codes([&] {
            if (!opt_options.resume_dir.empty()) {
                ipoe::cmd_optimize(ipoe::RunConfig{}, opt_options);
                return;
            }
            if (opt_flags.config_path.empty())
                throw ipoe::ConfigError("optimize requires --config (or --resume)");
            ipoe::cmd_optimize(load_config(opt_flags), opt_options);
        });
    }
    if (eval->parsed()) {
        return ipoe::run_with_exit_codes(
            [&] { ipoe::cmd_evaluate(load_config(eval_flags), eval_options); });
    }
    if (report->parsed()) {
        return ipoe::run_with_exit_codes([&] { ipoe::cmd_report(report_dirs, report_out); });
    }
    return ipoe::exit_code::failure;
}
