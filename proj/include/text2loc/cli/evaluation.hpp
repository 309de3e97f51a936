#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "text2loc/coarse/retrieval.hpp"
#include "text2loc/fine/localize.hpp"

namespace text2loc::cli {

/* Fine-stage numbers on gt-submap candidates next to the zero regressor */
struct GtLocalization
{
    double mean_error = 0.0;
    double baseline_mean_error = 0.0;
    double recall_at_5m = 0.0;
    double baseline_recall_at_5m = 0.0;
};

struct EvalReport
{
    std::string split;
    std::size_t queries = 0;
    std::size_t candidates = 0;
    coarse::RecallTable retrieval;
    /* Fine stage over the coarse top-k; absent for coarse-only evaluation */
    std::optional<fine::LocalizationGrid> localization;
    std::optional<double> mean_top1_error;
    std::optional<GtLocalization> gt;
};

/* Descriptors kept for the scatter file */
struct EvalArtifacts
{
    EvalReport report;
    std::vector<double> text_descriptors; /* queries x dim */
    coarse::RetrievalIndex index;
};

/*
 * Retrieval recall at k = 1, 3, 5, then, with a fine model, localization of
 * every query over its coarse top-`candidates` submaps (grid k = 1, 5, 10 by
 * eps = 5, 10, 15 m) and on its gt submap alone.
 */
EvalArtifacts evaluate(const data::Dataset& dataset, const std::vector<data::QueryDescription>& queries,
                       const std::string& split, const coarse::CoarseModel& coarse_model,
                       const fine::FineModel* fine_model, std::size_t candidates);

nlohmann::json report_json(const EvalReport& report);
std::string report_text(const EvalReport& report);

/* Rows of the 2D scatter: kind is "text" or "submap" */
struct ScatterPoint
{
    std::string kind;
    std::uint32_t id = 0;
    std::uint32_t label = 0;
    double x = 0.0;
    double y = 0.0;
};

/*
 * Projection of the stacked text and submap descriptors onto their two
 * leading principal axes. Each axis is signed so its largest-magnitude
 * component is positive, which keeps the file reproducible.
 */
std::vector<ScatterPoint> pca_scatter(const std::vector<double>& text_descriptors,
                                      const std::vector<std::uint32_t>& gt_ids,
                                      const coarse::RetrievalIndex& index);

/* Tab-separated "kind id label x y" with a header line */
std::string scatter_tsv(const std::vector<ScatterPoint>& points);

struct Perturbation
{
    std::vector<data::QueryDescription> queries;
    /* Hints replaced in each query */
    std::vector<std::size_t> replaced;
};

/*
 * For each query, `count` (0 or 1) hints are swapped for a hint about a
 * scene instance outside the query's gt submap and not already hinted.
 * The new hint describes that instance relative to the query's target.
 * Both choices are uniform draws from Rng::derive(seed, query index).
 */
Perturbation perturb_queries(const std::vector<data::QueryDescription>& queries, const data::Dataset& dataset,
                             std::size_t count, std::uint64_t seed);

nlohmann::json comparison_json(const EvalReport& base, const EvalReport& perturbed,
                               const std::vector<std::size_t>& replaced);
std::string comparison_text(const EvalReport& base, const EvalReport& perturbed,
                            const std::vector<std::size_t>& replaced);

} // namespace text2loc::cli
