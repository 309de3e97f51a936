#include <cstdio>
#include <cstdlib>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "text2loc/cli/commands.hpp"
#include "text2loc/common/errors.hpp"

namespace cli = text2loc::cli;

namespace {

struct Args
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::string> data;
    std::optional<std::string> coarse;
    std::optional<std::string> fine;
    std::optional<std::string> resume;
    std::optional<std::size_t> max_epochs;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Args& args)
{
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "JSON run configuration (flat keys)")->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "Global seed; overrides the config's 'seed'");
    sub->add_option("--out", args.out, "Output directory")->required();
    return sub;
}

void add_data(CLI::App* sub, Args& args)
{
    sub->add_option("--data", args.data, "Dataset file (default <out>/dataset.t2l)");
}

void add_training(CLI::App* sub, Args& args)
{
    add_data(sub, args);
    sub->add_option("--resume", args.resume, "Continue from this checkpoint");
    sub->add_option("--max-epochs", args.max_epochs, "Stop after this many epochs in this run");
}

void add_eval(CLI::App* sub, Args& args)
{
    add_data(sub, args);
    sub->add_option("--coarse", args.coarse, "Coarse checkpoint (default <out>/coarse.ckpt)");
    sub->add_option("--fine", args.fine, "Fine checkpoint (default <out>/fine.ckpt when present)");
}

cli::CommandOptions resolve(const Args& args)
{
    cli::CommandOptions o;
    if (!args.config.empty()) {
        o.config = cli::load_run_config(args.config);
    }
    if (args.seed) {
        o.config.set_seed(*args.seed);
    }
    o.out = args.out;
    if (args.data) {
        o.data = *args.data;
    }
    if (args.coarse) {
        o.coarse = *args.coarse;
    }
    if (args.fine) {
        o.fine = *args.fine;
    }
    if (args.resume) {
        o.resume = *args.resume;
    }
    o.max_epochs = args.max_epochs;
    return o;
}

} // namespace

int main(int argc, char** argv)
{
    spdlog::set_default_logger(spdlog::stderr_color_mt("text2loc"));
    spdlog::set_level(spdlog::level::info);
    /* SPDLOG_LEVEL=debug|info|warn|error|off */
    spdlog::cfg::load_env_levels();

    CLI::App app { "Text-to-point-cloud localization on synthetic city scenes" };
    app.require_subcommand(1);
    Args args;
    auto* gen = add_command(app, "gen-data", "Generate the synthetic dataset", args);
    auto* coarse = add_command(app, "train-coarse", "Train the text/submap retrieval model", args);
    add_training(coarse, args);
    auto* fine = add_command(app, "train-fine", "Train the fine position regressor", args);
    add_training(fine, args);
    auto* eval = add_command(app, "eval", "Retrieval and localization reports", args);
    add_eval(eval, args);
    auto* perturb = add_command(app, "perturb-eval", "Evaluation with one hint per query replaced", args);
    add_eval(perturb, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cli::kExitOk : cli::kExitConfig;
    }

    return cli::run_guarded([&] {
        const auto options = resolve(args);
        if (gen->parsed()) {
            cli::cmd_gen_data(options);
        } else if (coarse->parsed()) {
            cli::cmd_train_coarse(options);
        } else if (fine->parsed()) {
            cli::cmd_train_fine(options);
        } else if (eval->parsed()) {
            cli::cmd_eval(options);
        } else if (perturb->parsed()) {
            cli::cmd_perturb_eval(options);
        }
    });
}
