#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "text2loc/fine/model.hpp"

namespace text2loc::fine {

/* Per query: candidates in rank order with their regressed world positions and errors (m) */
struct LocalizationResult
{
    std::vector<std::uint32_t> ids;
    std::vector<data::Point2> positions;
    std::vector<double> errors;
};

double planar_error(const data::Point2& a, const data::Point2& b);

/* One regression per candidate submap */
LocalizationResult localize(const data::QueryDescription& query, const std::vector<std::uint32_t>& candidates,
                            const FineModel& model, const std::vector<submap::SubmapInput>& submaps,
                            const data::Database& database);

/* Batched localize over many queries, each with its own candidate list */
std::vector<LocalizationResult> localize_all(const std::vector<data::QueryDescription>& queries,
                                             const std::vector<std::vector<std::uint32_t>>& candidates,
                                             const FineModel& model,
                                             const std::vector<submap::SubmapInput>& submaps,
                                             const data::Database& database);

/* Zero regressor: every candidate predicts its own center */
LocalizationResult center_baseline(const data::QueryDescription& query, const std::vector<std::uint32_t>& candidates,
                                   const data::Database& database);

/* (k, epsilon) -> fraction of queries with some top-k error strictly below epsilon */
using LocalizationGrid = std::map<std::pair<std::size_t, double>, double>;

LocalizationGrid localization_recall(const std::vector<LocalizationResult>& results,
                                     const std::vector<std::size_t>& ks = { 1, 5, 10 },
                                     const std::vector<double>& thresholds = { 5.0, 10.0, 15.0 });

/* Mean top-1 error (m) */
double mean_top1_error(const std::vector<LocalizationResult>& results);

} // namespace text2loc::fine
