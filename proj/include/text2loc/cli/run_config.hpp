#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "text2loc/coarse/model.hpp"
#include "text2loc/data/dataset.hpp"
#include "text2loc/fine/model.hpp"

namespace text2loc::cli {

/*
 * Flat run configuration. JSON keys:
 *
 *   seed
 *   dataset  extent cell stride density class_mix max_instances hints_per_query
 *            hint_radius train_queries val_queries test_queries
 *   coarse   coarse_embed_dim coarse_token_dim coarse_max_len coarse_heads
 *            coarse_point_hidden coarse_feature_dim coarse_max_points
 *            coarse_batch_size coarse_epochs coarse_lr coarse_lr_decay
 *            coarse_decay_step temperature margin no_htm no_number_encoder
 *            pairwise_ranking_loss
 *   fine     fine_embed_dim fine_token_dim fine_max_len fine_heads
 *            fine_point_hidden fine_feature_dim fine_max_points fine_batch_size
 *            fine_epochs fine_lr ccat_count no_pmc pmc_alpha pmc_beta
 *            pmc_max_mismatch
 *   eval     eval_split ("val" or "test"), eval_candidates (coarse top-k handed
 *            to the fine stage), perturb_hints (hints replaced per query, 0 or 1)
 *
 * Missing keys keep their defaults; unknown keys are a ConfigError.
 */
struct RunConfig
{
    std::uint64_t seed = 1;
    data::DatasetConfig dataset;
    coarse::CoarseConfig coarse;
    fine::FineConfig fine;
    std::string eval_split = "test";
    std::size_t eval_candidates = 10;
    std::size_t perturb_hints = 1;

    /* Keys the source JSON set explicitly */
    std::set<std::string> explicit_keys;

    /* Propagates the global seed into both stages */
    void set_seed(std::uint64_t seed);

    /* ConfigError naming the first offending field */
    void validate() const;

    bool has(std::string_view key) const { return explicit_keys.count(std::string(key)) > 0; }
};

/* Dataset keys in declaration order */
const std::vector<std::string>& dataset_keys();

RunConfig parse_run_config(const nlohmann::json& json);
RunConfig load_run_config(const std::filesystem::path& path);

/* Every key with its resolved value */
nlohmann::json to_json(const RunConfig& config);

/* Byte-stable text of to_json, sorted keys, two-space indent */
std::string dump_config(const RunConfig& config);

} // namespace text2loc::cli
