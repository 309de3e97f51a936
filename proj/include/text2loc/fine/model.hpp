#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "text2loc/data/dataset.hpp"
#include "text2loc/engine/adam.hpp"
#include "text2loc/engine/checkpoint.hpp"
#include "text2loc/fine/pmc.hpp"
#include "text2loc/submap/submap_encoder.hpp"
#include "text2loc/text/text_encoder.hpp"

namespace text2loc::fine {

using engine::Offsets;
using engine::Tensor;

constexpr std::size_t kMaxCcatUnits = 3;

struct FineConfig
{
    /* architecture */
    std::size_t embed_dim = 128;
    std::size_t token_dim = 64;
    std::size_t max_len = 16;
    std::size_t heads = 4;
    std::size_t point_hidden = 64;
    std::size_t feature_dim = 128;
    std::size_t max_points = 24;
    /* 0 means one plain cross-attention fusion */
    std::size_t ccat_count = 2;

    /* optimization */
    std::size_t batch_size = 32;
    std::size_t epochs = 35;
    double lr = 3e-4;
    bool no_pmc = false;
    PMCConfig pmc;
    std::uint64_t seed = 1;

    void validate() const;
};

std::map<std::string, std::string> to_metadata(const FineConfig& config);
FineConfig fine_config_from_metadata(const std::map<std::string, std::string>& metadata);

/* One cascaded unit: CAT1 enhances points with text, CAT2 enhances text with those points */
struct CcatUnit
{
    engine::TransformerBlock point_from_text;
    engine::TransformerBlock text_from_point;
};

struct FineModel
{
    FineConfig config;
    std::size_t vocab_size = 0;
    engine::ParameterSet params;
    text::TextBranch text;       /* per-hint vectors projected to embed_dim */
    submap::SubmapBranch points; /* instance encoder only */
    std::vector<CcatUnit> units;
    std::optional<engine::TransformerBlock> single_cat; /* ccat_count == 0 */
    engine::TransformerBlock pool;
    engine::Mlp regressor; /* embed_dim -> embed_dim -> 2 */

    FineModel() = default;
    FineModel(const FineModel&) = delete;
    FineModel& operator=(const FineModel&) = delete;
    FineModel(FineModel&&) = default;
    FineModel& operator=(FineModel&&) = default;
};

/* Parameters live under "fine.text.*", "fine.points.*", "fine.ccat.*", "fine.pool.*", "fine.regressor.*" */
FineModel make_fine_model(const FineConfig& config, std::size_t vocab_size);
FineModel load_fine_model(const engine::Checkpoint& checkpoint);

/* Cross-attention transformer: queries attend to context, per segment pair */
Tensor cat(const Tensor& queries, const Tensor& context, const engine::TransformerBlock& block,
           const Offsets& q_offsets, const Offsets& kv_offsets);

/*
 * Cascade over the model's units. Every unit reads the previous unit's text
 * output and the original point features. With no units, one plain CAT
 * with text as queries and points as context.
 */
Tensor ccat(const Tensor& text, const Tensor& points, const FineModel& model, const Offsets& text_offsets,
            const Offsets& point_offsets);

/* Attention unit and max pool over each query's hints, then the MLP: [queries x 2] in half-cell units */
Tensor regress_offsets(const Tensor& fused_text, const Offsets& text_offsets, const FineModel& model);

/* Batch of (query, submap) pairs; returns offsets in meters from each submap center: [pairs x 2] */
Tensor predict_offsets(const std::vector<const data::QueryDescription*>& queries,
                       const std::vector<const submap::SubmapInput*>& submaps, const FineModel& model,
                       double cell);

/* Mean over rows of the squared planar distance: [n x 2], [n x 2] -> scalar */
Tensor mse_loss(const Tensor& predicted, const Tensor& target);

/*
 * Epoch-at-a-time position regressor trainer. Each epoch shuffles the
 * training queries and, unless no_pmc, draws a PMC clone per query, both
 * from an RNG derived from (seed, epoch).
 */
class FineTrainer
{
public:
    FineTrainer(const FineConfig& config, const data::Dataset& dataset,
                const std::vector<submap::SubmapInput>& submaps);
    FineTrainer(const engine::Checkpoint& checkpoint, const data::Dataset& dataset,
                const std::vector<submap::SubmapInput>& submaps);

    /* Per-query mean squared error (m^2) of one epoch */
    double run_epoch();

    /* Mean planar error (m) of the current weights on gt submaps */
    double mean_error(const std::vector<data::QueryDescription>& queries) const;

    std::size_t next_epoch() const { return epoch_; }
    bool finished() const { return epoch_ >= model_.config.epochs; }
    const std::vector<double>& loss_trace() const { return losses_; }
    const FineModel& model() const { return model_; }
    engine::Checkpoint checkpoint() const;

    /* Submap used for each training query in the given epoch, in query order */
    std::vector<std::uint32_t> training_submaps(std::size_t epoch) const;

private:
    const data::Dataset& dataset_;
    const std::vector<submap::SubmapInput>& submaps_;
    FineModel model_;
    PmcIndex pmc_index_;
    engine::AdamState adam_;
    std::size_t epoch_ = 0;
    std::vector<double> losses_;

    struct Plan
    {
        std::vector<std::size_t> order;
        std::vector<std::uint32_t> submap_of; /* indexed by query */
    };
    Plan plan_epoch(std::size_t epoch) const;
};

} // namespace text2loc::fine
