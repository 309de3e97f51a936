#include "text2loc/coarse/model.hpp"

#include <algorithm>
#include <cmath>

#include "text2loc/coarse/loss.hpp"
#include "text2loc/common/errors.hpp"
#include "text2loc/common/text_format.hpp"

namespace text2loc::coarse {

using namespace engine;

namespace {

constexpr const char* kStage = "coarse";

const std::string& require(const std::map<std::string, std::string>& m, const std::string& key)
{
    auto it = m.find(key);
    if (it == m.end()) {
        throw CheckpointError("checkpoint metadata lacks '" + key + "'");
    }
    return it->second;
}

std::vector<const text2loc::data::QueryDescription*> query_ptrs(const data::Dataset& ds,
                                                               const std::vector<std::size_t>& batch)
{
    std::vector<const data::QueryDescription*> out;
    for (auto i : batch) {
        out.push_back(&ds.train[i]);
    }
    return out;
}

void check_inputs(const data::Dataset& ds, const std::vector<submap::SubmapInput>& submaps,
                  const CoarseConfig& config)
{
    if (submaps.size() != ds.database.submaps.size()) {
        throw DataError("prepared submaps do not match the dataset database");
    }
    if (ds.train.size() < config.batch_size) {
        throw DataError("training split has " + std::to_string(ds.train.size())
                        + " queries, fewer than the batch size " + std::to_string(config.batch_size));
    }
}

} // namespace

Tensor batch_forward(const CoarseModel& model, const data::Dataset& dataset,
                     const std::vector<submap::SubmapInput>& submaps, const std::vector<std::size_t>& batch)
{
    const auto queries = query_ptrs(dataset, batch);
    std::vector<const submap::SubmapInput*> maps;
    for (auto q : batch) {
        maps.push_back(&submaps.at(dataset.train[q].gt_submap_id));
    }
    const Tensor t = text::encode_texts(queries, model.text);
    const Tensor s = submap::encode_submaps(maps, model.submap);
    return coarse_objective(model, t, s);
}

void CoarseConfig::validate() const
{
    if (embed_dim == 0 || token_dim == 0 || max_len == 0 || heads == 0 || point_hidden == 0
        || feature_dim == 0 || max_points == 0) {
        throw ValueError("coarse model dimensions must be positive");
    }
    if (token_dim % heads != 0) {
        throw ValueError("token_dim must be divisible by heads");
    }
    if (batch_size < 2) {
        throw ValueError("batch_size must be at least 2 (in-batch negatives)");
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ValueError("temperature must be positive");
    }
    if (!(base_lr > 0.0) || !(lr_decay > 0.0) || decay_step == 0) {
        throw ValueError("learning-rate schedule must be positive");
    }
    if (!(margin >= 0.0)) {
        throw ValueError("margin must be non-negative");
    }
}

std::map<std::string, std::string> to_metadata(const CoarseConfig& c)
{
    return {
        { "stage", kStage },
        { "embed_dim", std::to_string(c.embed_dim) },
        { "token_dim", std::to_string(c.token_dim) },
        { "max_len", std::to_string(c.max_len) },
        { "heads", std::to_string(c.heads) },
        { "point_hidden", std::to_string(c.point_hidden) },
        { "feature_dim", std::to_string(c.feature_dim) },
        { "max_points", std::to_string(c.max_points) },
        { "no_htm", c.no_htm ? "true" : "false" },
        { "no_number_encoder", c.no_number_encoder ? "true" : "false" },
        { "batch_size", std::to_string(c.batch_size) },
        { "epochs", std::to_string(c.epochs) },
        { "base_lr", format_double(c.base_lr) },
        { "lr_decay", format_double(c.lr_decay) },
        { "decay_step", std::to_string(c.decay_step) },
        { "temperature", format_double(c.temperature) },
        { "pairwise_ranking_loss", c.pairwise_ranking_loss ? "true" : "false" },
        { "margin", format_double(c.margin) },
        { "seed", std::to_string(c.seed) },
    };
}

CoarseConfig coarse_config_from_metadata(const std::map<std::string, std::string>& m)
{
    if (require(m, "stage") != kStage) {
        throw CheckpointError("checkpoint stage '" + require(m, "stage") + "' is not a coarse model");
    }
    try {
        CoarseConfig c;
        c.embed_dim = parse_u64(require(m, "embed_dim"));
        c.token_dim = parse_u64(require(m, "token_dim"));
        c.max_len = parse_u64(require(m, "max_len"));
        c.heads = parse_u64(require(m, "heads"));
        c.point_hidden = parse_u64(require(m, "point_hidden"));
        c.feature_dim = parse_u64(require(m, "feature_dim"));
        c.max_points = parse_u64(require(m, "max_points"));
        c.no_htm = parse_bool(require(m, "no_htm"));
        c.no_number_encoder = parse_bool(require(m, "no_number_encoder"));
        c.batch_size = parse_u64(require(m, "batch_size"));
        c.epochs = parse_u64(require(m, "epochs"));
        c.base_lr = parse_double(require(m, "base_lr"));
        c.lr_decay = parse_double(require(m, "lr_decay"));
        c.decay_step = parse_u64(require(m, "decay_step"));
        c.temperature = parse_double(require(m, "temperature"));
        c.pairwise_ranking_loss = parse_bool(require(m, "pairwise_ranking_loss"));
        c.margin = parse_double(require(m, "margin"));
        c.seed = parse_u64(require(m, "seed"));
        c.validate();
        return c;
    } catch (const ValueError& e) {
        throw CheckpointError(std::string("bad coarse checkpoint metadata: ") + e.what());
    }
}

CoarseModel make_coarse_model(const CoarseConfig& config, std::size_t vocab_size)
{
    config.validate();
    CoarseModel m;
    m.config = config;
    m.vocab_size = vocab_size;
    Rng rng = Rng::derive(config.seed, 0xC0A25E);

    text::TextEncoderConfig tc;
    tc.vocab_size = vocab_size;
    tc.token_dim = config.token_dim;
    tc.max_len = config.max_len;
    tc.heads = config.heads;
    tc.embed_dim = config.embed_dim;
    tc.hierarchical = !config.no_htm;
    m.text = text::make_text_branch(m.params, "text", tc, rng);

    submap::SubmapEncoderConfig sc;
    sc.point_hidden = config.point_hidden;
    sc.feature_dim = config.feature_dim;
    sc.embed_dim = config.embed_dim;
    sc.number_encoder = !config.no_number_encoder;
    m.submap = submap::make_submap_branch(m.params, "submap", sc, rng);
    return m;
}

CoarseModel load_coarse_model(const Checkpoint& checkpoint)
{
    const CoarseConfig config = coarse_config_from_metadata(checkpoint.metadata);
    const std::size_t vocab = parse_u64(require(checkpoint.metadata, "vocab_size"));
    CoarseModel m = make_coarse_model(config, vocab);
    restore_parameters(checkpoint, m.params);
    return m;
}

std::vector<std::vector<std::size_t>> plan_batches(const std::vector<std::uint32_t>& gt_ids,
                                                    std::size_t batch_size, Rng& rng)
{
    if (batch_size < 2) {
        throw ValueError("batch_size must be at least 2");
    }
    std::vector<std::size_t> pending(gt_ids.size());
    for (std::size_t i = 0; i < pending.size(); ++i) {
        pending[i] = i;
    }
    rng.shuffle(pending.begin(), pending.end());

    std::vector<std::vector<std::size_t>> batches;
    while (!pending.empty()) {
        std::vector<std::size_t> batch;
        std::vector<std::size_t> rest;
        std::vector<std::uint32_t> used;
        for (auto q : pending) {
            const bool fresh = std::find(used.begin(), used.end(), gt_ids[q]) == used.end();
            if (batch.size() < batch_size && fresh) {
                batch.push_back(q);
                used.push_back(gt_ids[q]);
            } else {
                rest.push_back(q);
            }
        }
        if (batch.size() < 2) {
            /* leftovers all share one submap and cannot form negatives */
            break;
        }
        batches.push_back(std::move(batch));
        pending = std::move(rest);
    }
    return batches;
}

Tensor coarse_objective(const CoarseModel& model, const Tensor& text, const Tensor& submap)
{
    if (model.config.pairwise_ranking_loss) {
        return pairwise_ranking_loss(text, submap, model.config.margin);
    }
    return batch_loss(text, submap, model.config.temperature);
}

CoarseTrainer::CoarseTrainer(const CoarseConfig& config, const data::Dataset& dataset,
                             const std::vector<submap::SubmapInput>& submaps)
    : dataset_(dataset), submaps_(submaps),
      model_(make_coarse_model(config, data::Vocabulary::build_default().size()))
{
    check_inputs(dataset, submaps, config);
    for (const auto& q : dataset.train) {
        gt_ids_.push_back(q.gt_submap_id);
    }
}

CoarseTrainer::CoarseTrainer(const Checkpoint& checkpoint, const data::Dataset& dataset,
                             const std::vector<submap::SubmapInput>& submaps)
    : dataset_(dataset), submaps_(submaps), model_(load_coarse_model(checkpoint))
{
    check_inputs(dataset, submaps, model_.config);
    if (model_.vocab_size != data::Vocabulary::build_default().size()) {
        throw CheckpointError("checkpoint vocabulary size does not match the dataset vocabulary");
    }
    adam_ = restore_adam(checkpoint, model_.params);
    epoch_ = parse_u64(require(checkpoint.metadata, "next_epoch"));
    losses_ = split_doubles(require(checkpoint.metadata, "loss_trace"));
    if (losses_.size() != epoch_) {
        throw CheckpointError("loss trace length does not match the epoch counter");
    }
    for (const auto& q : dataset.train) {
        gt_ids_.push_back(q.gt_submap_id);
    }
}

double CoarseTrainer::evaluate_loss() const
{
    NoGradGuard no_grad;
    Rng rng = Rng::derive(model_.config.seed, 0);
    const auto batches = plan_batches(gt_ids_, model_.config.batch_size, rng);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& b : batches) {
        total += batch_forward(model_, dataset_, submaps_, b).item() * static_cast<double>(b.size());
        count += b.size();
    }
    return total / static_cast<double>(count);
}

double CoarseTrainer::run_epoch()
{
    if (finished()) {
        throw ValueError("coarse training already ran all epochs");
    }
    Rng rng = Rng::derive(model_.config.seed, epoch_);
    const auto batches = plan_batches(gt_ids_, model_.config.batch_size, rng);
    if (batches.empty()) {
        throw DataError("no training batch with at least two distinct submaps");
    }
    double total = 0.0;
    std::size_t count = 0;
    const auto& c = model_.config;
    const double lr = lr_schedule(epoch_, c.base_lr, c.lr_decay, c.decay_step);
    auto params = model_.params.tensors();
    for (const auto& b : batches) {
        const Tensor loss = batch_forward(model_, dataset_, submaps_, b);
        model_.params.zero_grad();
        backward(loss);
        adam_step(params, adam_, lr);
        total += loss.item() * static_cast<double>(b.size());
        count += b.size();
    }
    const double mean = total / static_cast<double>(count);
    losses_.push_back(mean);
    ++epoch_;
    return mean;
}

Checkpoint CoarseTrainer::checkpoint() const
{
    auto meta = to_metadata(model_.config);
    meta["vocab_size"] = std::to_string(model_.vocab_size);
    meta["next_epoch"] = std::to_string(epoch_);
    meta["loss_trace"] = join_doubles(losses_);
    return make_checkpoint(model_.params, &adam_, std::move(meta));
}

} // namespace text2loc::coarse
