#pragma once

// Random inputs and loop oracles shared by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <vector>

#include "support/oracles.hpp"
#include "text2loc/data/dataset.hpp"
#include "text2loc/fine/pmc.hpp"
#include "text2loc/submap/submap_encoder.hpp"

namespace text2loc::testing {

inline engine::Tensor unit_rows(std::size_t n, std::size_t c, Rng& rng, bool requires_grad = false)
{
    Mat m = random_mat(n, c, rng);
    for (auto& row : m)
        row = normalized(row);
    return to_tensor(m, requires_grad);
}

inline double log_sum_exp(const std::vector<double>& v)
{
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v)
        s += std::exp(x - mx);
    return mx + std::log(s);
}

/* Symmetric InfoNCE as a double loop over the batch, both directions */
inline double loss_oracle(const Mat& t, const Mat& s, double tau)
{
    const std::size_t n = t.size();
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k)
            d += a[k] * b[k];
        return d;
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> t2s, s2t;
        for (std::size_t j = 0; j < n; ++j) {
            t2s.push_back(dot(t[i], s[j]) / tau);
            s2t.push_back(dot(s[i], t[j]) / tau);
        }
        const double pos = dot(t[i], s[i]) / tau;
        total += (log_sum_exp(t2s) - pos) + (log_sum_exp(s2t) - pos);
    }
    return total / static_cast<double>(n);
}

inline data::Database database_from_centers(const std::vector<data::Point2>& centers)
{
    data::Database db;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        data::Submap s;
        s.id = static_cast<std::uint32_t>(i);
        s.center = { centers[i][0], centers[i][1], 15.0 };
        db.submaps.push_back(s);
    }
    return db;
}

/* Exhaustive scan of the PMC membership definition */
inline std::vector<std::uint32_t> pmc_oracle(const data::Database& db, std::uint32_t i, const data::Point2& c,
                                             const fine::PMCConfig& cfg)
{
    std::vector<std::uint32_t> out;
    const auto& si = db.submaps[i].center;
    for (const auto& s : db.submaps) {
        const double to_center = std::max(std::abs(s.center[0] - si[0]), std::abs(s.center[1] - si[1]));
        const double to_target = std::max(std::abs(s.center[0] - c[0]), std::abs(s.center[1] - c[1]));
        if (to_center < cfg.alpha && to_target < cfg.beta)
            out.push_back(s.id);
    }
    return out;
}

/* Query with random template hints (no scene behind it) */
inline data::QueryDescription random_query(const data::Vocabulary& vocab, Rng& rng, std::size_t hints = 6)
{
    data::QueryDescription q;
    for (std::size_t i = 0; i < hints; ++i) {
        const auto dir = static_cast<std::uint32_t>(rng.index(8));
        const auto color = static_cast<std::uint32_t>(rng.index(8));
        const auto cls = static_cast<std::uint32_t>(rng.index(8));
        data::Hint h;
        h.direction = dir;
        h.tokens = data::tokenize(data::hint_text(dir, color, cls), vocab);
        q.hints.push_back(h);
    }
    return q;
}

/* n points scattered around a random center in a 30 m cell */
inline data::ObjectInstance random_instance(Rng& rng, std::size_t n)
{
    data::ObjectInstance inst;
    inst.class_id = static_cast<std::uint32_t>(rng.index(8));
    data::Point3 sum {};
    const double cx = rng.uniform(0, 30);
    const double cy = rng.uniform(0, 30);
    for (std::size_t i = 0; i < n; ++i) {
        const double p[6] = { cx + rng.uniform(-2, 2), cy + rng.uniform(-2, 2), rng.uniform(0, 5),
                              rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1) };
        inst.points.insert(inst.points.end(), p, p + 6);
        for (int k = 0; k < 3; ++k)
            sum[k] += p[k];
    }
    for (int k = 0; k < 3; ++k)
        inst.center[k] = sum[k] / static_cast<double>(n);
    return inst;
}

inline submap::SubmapInput random_submap(Rng& rng, std::size_t instances, std::size_t max_points = 6)
{
    submap::SubmapInput s;
    for (std::size_t i = 0; i < instances; ++i)
        s.instances.push_back(submap::prepare_instance(random_instance(rng, 3 + rng.index(10)), { 15, 15, 15 },
                                                       30.0, max_points));
    return s;
}

} // namespace text2loc::testing
