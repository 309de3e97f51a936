#pragma once

#include <exception>
#include <filesystem>
#include <functional>
#include <optional>

#include "text2loc/cli/run_config.hpp"

namespace text2loc::cli {

/* Process exit codes */
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitCheckpoint = 4,
};

struct CommandOptions
{
    RunConfig config;
    std::filesystem::path out;
    /* Inputs; unset means the conventional file name inside `out` */
    std::optional<std::filesystem::path> data;
    std::optional<std::filesystem::path> coarse;
    std::optional<std::filesystem::path> fine;
    /* Training: continue from this checkpoint */
    std::optional<std::filesystem::path> resume;
    /* Training: stop after this many epochs in this invocation */
    std::optional<std::size_t> max_epochs;
};

/* File names inside the output directory */
inline constexpr const char* kDatasetFile = "dataset.t2l";
inline constexpr const char* kCoarseCheckpoint = "coarse.ckpt";
inline constexpr const char* kFineCheckpoint = "fine.ckpt";
inline constexpr const char* kConfigFile = "config.json";

/*
 * Every command writes config.json (the resolved configuration) and
 * <command>.manifest.json (config echo, format versions, and the size and
 * SHA-256 of each input and output file) into `out`.
 *
 *   gen-data      dataset.t2l
 *   train-coarse  coarse.ckpt, coarse_loss.log
 *   train-fine    fine.ckpt, fine_loss.log
 *   eval          report.txt, report.json, scatter.tsv
 *   perturb-eval  perturb_report.txt, perturb_report.json
 */
void cmd_gen_data(const CommandOptions& options);
void cmd_train_coarse(const CommandOptions& options);
void cmd_train_fine(const CommandOptions& options);
void cmd_eval(const CommandOptions& options);
void cmd_perturb_eval(const CommandOptions& options);

/* Runs `body`, logging any exception and mapping it to an exit code */
int run_guarded(const std::function<void()>& body);

} // namespace text2loc::cli
