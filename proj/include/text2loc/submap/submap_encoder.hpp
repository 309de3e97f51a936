#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "text2loc/data/dataset.hpp"
#include "text2loc/engine/nn.hpp"

namespace text2loc::submap {

using engine::Offsets;
using engine::Tensor;

struct SubmapEncoderConfig
{
    std::size_t point_hidden = 64;
    /* Width of every sub-encoder output */
    std::size_t feature_dim = 128;
    /* Instance and descriptor width C */
    std::size_t embed_dim = 256;
    /* false removes the point-count channel (w/o NE) */
    bool number_encoder = true;
    /* false builds the instance encoder only (the fine stage never aggregates) */
    bool aggregation = true;
};

struct SubmapBranch
{
    SubmapEncoderConfig config;
    engine::Mlp point_mlp;             /* 6 -> 64 -> 128, then max over points */
    engine::Mlp color_mlp;             /* 3 -> 128 -> 128 -> 128 */
    engine::Mlp position_mlp;          /* 3 -> 128 -> 128 -> 128 */
    std::optional<engine::Mlp> count_mlp; /* 1 -> 128 -> 128 -> 128 */
    engine::Mlp projection;            /* 512 (384 without counts) -> C -> C -> C */
    std::optional<engine::MultiHeadAttention> aggregation; /* single head over instances */
};

SubmapBranch make_submap_branch(engine::ParameterSet& params, const std::string& name,
                                const SubmapEncoderConfig& config, Rng& rng);

/* Encoder-ready view of one instance inside one submap */
struct InstanceInput
{
    /* m x 6 rows (x, y, z relative to the instance center; r, g, b) */
    std::vector<double> points;
    std::array<double, 3> mean_rgb {};
    /* Instance center relative to the submap center, divided by half the cell */
    std::array<double, 3> position {};
    /* Original point count before subsampling */
    std::size_t point_count = 0;

    std::size_t rows() const { return points.size() / data::kPointWidth; }
};

struct SubmapInput
{
    std::uint32_t id = 0;
    std::vector<InstanceInput> instances;
};

/*
 * At most max_points points by farthest-point sampling in a canonical
 * order (seeded from the lexicographically smallest point, ties broken
 * lexicographically), so the result does not depend on the input order.
 * Sampling stops early once only duplicates of chosen points remain.
 */
std::vector<double> canonical_subsample(std::span<const double> local_points, std::size_t max_points);

InstanceInput prepare_instance(const data::ObjectInstance& instance, const data::Point3& submap_center,
                               double cell, std::size_t max_points);

/* One input per database submap, in id order */
std::vector<SubmapInput> prepare_submaps(const data::Scene& scene, const data::Database& database,
                                         std::size_t max_points);

/* Shared per-point MLP then column max: [feature_dim] */
Tensor encode_points(const Tensor& points, const SubmapBranch& branch);

/* MLP over log10(n): [feature_dim] */
Tensor encode_count(std::size_t n, const SubmapBranch& branch);

/* Projection of the concatenated point, color, position and count features: [C] */
Tensor encode_instance(const InstanceInput& instance, const SubmapBranch& branch);

/* Batched encode_instance: [instances x C] */
Tensor encode_instances(std::span<const InstanceInput* const> instances, const SubmapBranch& branch);

/*
 * Residual self-attention over the valid rows only, column max, L2
 * normalization. Rows with valid[i] == false are padding and never reach
 * the softmax.
 */
Tensor aggregate_submap(const Tensor& embeddings, const std::vector<bool>& valid, const SubmapBranch& branch);

Tensor encode_submap(const SubmapInput& submap, const SubmapBranch& branch);

/* Batched encode_submap: [submaps x C], unit rows */
Tensor encode_submaps(std::span<const SubmapInput* const> submaps, const SubmapBranch& branch);

/* Instance embeddings for a batch with per-submap row offsets */
struct InstanceBatch
{
    Tensor embeddings;
    Offsets offsets;
};

InstanceBatch encode_submap_instances(std::span<const SubmapInput* const> submaps, const SubmapBranch& branch);

} // namespace text2loc::submap
