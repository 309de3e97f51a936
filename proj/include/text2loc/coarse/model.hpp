#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "text2loc/data/dataset.hpp"
#include "text2loc/engine/adam.hpp"
#include "text2loc/engine/checkpoint.hpp"
#include "text2loc/submap/submap_encoder.hpp"
#include "text2loc/text/text_encoder.hpp"

namespace text2loc::coarse {

struct CoarseConfig
{
    /* architecture */
    std::size_t embed_dim = 256;
    std::size_t token_dim = 64;
    std::size_t max_len = 16;
    std::size_t heads = 4;
    std::size_t point_hidden = 64;
    std::size_t feature_dim = 128;
    std::size_t max_points = 24;
    bool no_htm = false;
    bool no_number_encoder = false;

    /* optimization */
    std::size_t batch_size = 64;
    std::size_t epochs = 20;
    double base_lr = 5e-4;
    double lr_decay = 0.4;
    std::size_t decay_step = 7;
    double temperature = 0.1;
    bool pairwise_ranking_loss = false;
    double margin = 0.2;
    std::uint64_t seed = 1;

    /* ValueError on tau <= 0, batch_size < 2, zero dims, ... */
    void validate() const;
};

/* Key/value echo of every field, used as checkpoint metadata */
std::map<std::string, std::string> to_metadata(const CoarseConfig& config);
CoarseConfig coarse_config_from_metadata(const std::map<std::string, std::string>& metadata);

/* Both branches; parameters live under "text.*" and "submap.*" */
struct CoarseModel
{
    CoarseConfig config;
    std::size_t vocab_size = 0;
    engine::ParameterSet params;
    text::TextBranch text;
    submap::SubmapBranch submap;

    CoarseModel() = default;
    CoarseModel(const CoarseModel&) = delete;
    CoarseModel& operator=(const CoarseModel&) = delete;
    CoarseModel(CoarseModel&&) = default;
    CoarseModel& operator=(CoarseModel&&) = default;
};

CoarseModel make_coarse_model(const CoarseConfig& config, std::size_t vocab_size);

/* Rebuilds the architecture from metadata, then restores the weights */
CoarseModel load_coarse_model(const engine::Checkpoint& checkpoint);

/*
 * Groups query indices into batches whose ground-truth submaps are all
 * distinct, in a random order drawn from rng. Batches smaller than 2 are
 * dropped (no negatives).
 */
std::vector<std::vector<std::size_t>> plan_batches(const std::vector<std::uint32_t>& gt_ids,
                                                    std::size_t batch_size, Rng& rng);

/*
 * Epoch-at-a-time contrastive trainer. Each epoch draws its batch order
 * from an RNG derived from (seed, epoch), so a run resumed from a
 * checkpoint continues exactly like an uninterrupted one.
 */
class CoarseTrainer
{
public:
    CoarseTrainer(const CoarseConfig& config, const data::Dataset& dataset,
                  const std::vector<submap::SubmapInput>& submaps);
    /* Resume: architecture, weights, optimizer state and loss trace from the checkpoint */
    CoarseTrainer(const engine::Checkpoint& checkpoint, const data::Dataset& dataset,
                  const std::vector<submap::SubmapInput>& submaps);

    /*
 * Per-query mean loss of the current weights over the epoch-0 batch plan,
 * without updating. Batches are weighted by their size, as in run_epoch.
 */
    double evaluate_loss() const;

    /* Trains one epoch and returns its per-query mean loss */
    double run_epoch();

    std::size_t next_epoch() const { return epoch_; }
    bool finished() const { return epoch_ >= model_.config.epochs; }
    const std::vector<double>& loss_trace() const { return losses_; }

    CoarseModel& model() { return model_; }
    const CoarseModel& model() const { return model_; }
    engine::Checkpoint checkpoint() const;

private:
    const data::Dataset& dataset_;
    const std::vector<submap::SubmapInput>& submaps_;
    CoarseModel model_;
    engine::AdamState adam_;
    std::size_t epoch_ = 0;
    std::vector<double> losses_;
    std::vector<std::uint32_t> gt_ids_;
};

/* Loss of a batch under the configured objective */
engine::Tensor coarse_objective(const CoarseModel& model, const engine::Tensor& text, const engine::Tensor& submap);

/* Objective of train queries `batch` against their ground-truth submaps */
engine::Tensor batch_forward(const CoarseModel& model, const data::Dataset& dataset,
                             const std::vector<submap::SubmapInput>& submaps,
                             const std::vector<std::size_t>& batch);

} // namespace text2loc::coarse
