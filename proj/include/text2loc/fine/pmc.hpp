#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "text2loc/common/rng.hpp"
#include "text2loc/data/dataset.hpp"

namespace text2loc::fine {

/* Prototype-based map cloning bounds (meters) */
struct PMCConfig
{
    /* center-to-center bound */
    double alpha = 15.0;
    /* center-to-target bound */
    double beta = 12.0;
    /* hinted instances a clone may miss */
    std::size_t max_mismatch = 1;

    void validate() const;
    bool operator==(const PMCConfig&) const = default;
};

/*
 * Submaps sorted by center x, so a candidate query scans only the x window
 * allowed by both bounds before the exact planar infinity-norm test.
 */
class PmcIndex
{
public:
    explicit PmcIndex(const data::Database& database);

    /*
     * { S_j : |s_j - s_i|_inf < alpha and |s_j - target|_inf < beta } on
     * planar (x, y) centers, ids ascending.
     */
    std::vector<std::uint32_t> candidates(std::uint32_t submap_id, const data::Point2& target,
                                          const PMCConfig& config) const;

private:
    const data::Database* database_;
    std::vector<std::pair<double, std::uint32_t>> by_x_;
};

/* Convenience wrapper building a throwaway index */
std::vector<std::uint32_t> pmc_candidates(const data::Database& database, std::uint32_t submap_id,
                                          const data::Point2& target, const PMCConfig& config);

/*
 * Hinted instances of the query with no same-class instance in the submap
 * whose center lies within 1 m of the hinted instance's center.
 */
std::size_t pmc_mismatch(const data::Submap& submap, const data::QueryDescription& query,
                         const data::Scene& scene);

/*
 * Uniform pick among candidates with at most max_mismatch mismatches, or
 * the query's own gt submap when none qualifies.
 */
std::uint32_t pmc_filter_and_sample(const std::vector<std::uint32_t>& candidates,
                                    const data::QueryDescription& query, const data::Scene& scene,
                                    const data::Database& database, const PMCConfig& config, Rng& rng);

} // namespace text2loc::fine
