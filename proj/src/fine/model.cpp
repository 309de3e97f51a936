#include "text2loc/fine/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "text2loc/common/errors.hpp"
#include "text2loc/common/text_format.hpp"

namespace text2loc::fine {

using namespace engine;

namespace {

constexpr const char* kStage = "fine";
constexpr std::size_t kEvalChunk = 64;

const std::string& require(const std::map<std::string, std::string>& m, const std::string& key)
{
    auto it = m.find(key);
    if (it == m.end()) {
        throw CheckpointError("checkpoint metadata lacks '" + key + "'");
    }
    return it->second;
}

void check_inputs(const data::Dataset& ds, const std::vector<submap::SubmapInput>& submaps)
{
    if (submaps.size() != ds.database.submaps.size()) {
        throw DataError("prepared submaps do not match the dataset database");
    }
    if (ds.train.empty()) {
        throw DataError("fine training needs at least one training query");
    }
}

/* Target offset from the submap center in meters: [n x 2] */
Tensor target_offsets(const std::vector<const data::QueryDescription*>& queries,
                      const std::vector<std::uint32_t>& submap_ids, const data::Database& db)
{
    std::vector<double> v;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& c = db.submaps.at(submap_ids[i]).center;
        v.push_back(queries[i]->target[0] - c[0]);
        v.push_back(queries[i]->target[1] - c[1]);
    }
    return Tensor({ queries.size(), 2 }, std::move(v));
}

} // namespace

void FineConfig::validate() const
{
    if (embed_dim == 0 || token_dim == 0 || max_len == 0 || heads == 0 || point_hidden == 0
        || feature_dim == 0 || max_points == 0) {
        throw ValueError("fine model dimensions must be positive");
    }
    if (token_dim % heads != 0 || embed_dim % heads != 0) {
        throw ValueError("token_dim and embed_dim must be divisible by heads");
    }
    if (ccat_count > kMaxCcatUnits) {
        throw ValueError("ccat_count must be in [0, 3]");
    }
    if (batch_size == 0) {
        throw ValueError("batch_size must be positive");
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ValueError("learning rate must be positive");
    }
    pmc.validate();
}

std::map<std::string, std::string> to_metadata(const FineConfig& c)
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
        { "ccat_count", std::to_string(c.ccat_count) },
        { "batch_size", std::to_string(c.batch_size) },
        { "epochs", std::to_string(c.epochs) },
        { "lr", format_double(c.lr) },
        { "no_pmc", c.no_pmc ? "true" : "false" },
        { "pmc_alpha", format_double(c.pmc.alpha) },
        { "pmc_beta", format_double(c.pmc.beta) },
        { "pmc_max_mismatch", std::to_string(c.pmc.max_mismatch) },
        { "seed", std::to_string(c.seed) },
    };
}

FineConfig fine_config_from_metadata(const std::map<std::string, std::string>& m)
{
    if (require(m, "stage") != kStage) {
        throw CheckpointError("checkpoint stage '" + require(m, "stage") + "' is not a fine model");
    }
    try {
        FineConfig c;
        c.embed_dim = parse_u64(require(m, "embed_dim"));
        c.token_dim = parse_u64(require(m, "token_dim"));
        c.max_len = parse_u64(require(m, "max_len"));
        c.heads = parse_u64(require(m, "heads"));
        c.point_hidden = parse_u64(require(m, "point_hidden"));
        c.feature_dim = parse_u64(require(m, "feature_dim"));
        c.max_points = parse_u64(require(m, "max_points"));
        c.ccat_count = parse_u64(require(m, "ccat_count"));
        c.batch_size = parse_u64(require(m, "batch_size"));
        c.epochs = parse_u64(require(m, "epochs"));
        c.lr = parse_double(require(m, "lr"));
        c.no_pmc = parse_bool(require(m, "no_pmc"));
        c.pmc.alpha = parse_double(require(m, "pmc_alpha"));
        c.pmc.beta = parse_double(require(m, "pmc_beta"));
        c.pmc.max_mismatch = parse_u64(require(m, "pmc_max_mismatch"));
        c.seed = parse_u64(require(m, "seed"));
        c.validate();
        return c;
    } catch (const ValueError& e) {
        throw CheckpointError(std::string("bad fine checkpoint metadata: ") + e.what());
    }
}

FineModel make_fine_model(const FineConfig& config, std::size_t vocab_size)
{
    config.validate();
    FineModel m;
    m.config = config;
    m.vocab_size = vocab_size;
    Rng rng = Rng::derive(config.seed, 0xF17E);
    const std::size_t d = config.embed_dim;

    text::TextEncoderConfig tc;
    tc.vocab_size = vocab_size;
    tc.token_dim = config.token_dim;
    tc.max_len = config.max_len;
    tc.heads = config.heads;
    tc.embed_dim = d;
    tc.inter_hint = false;
    m.text = text::make_text_branch(m.params, "fine.text", tc, rng);

    submap::SubmapEncoderConfig sc;
    sc.point_hidden = config.point_hidden;
    sc.feature_dim = config.feature_dim;
    sc.embed_dim = d;
    sc.aggregation = false;
    m.points = submap::make_submap_branch(m.params, "fine.points", sc, rng);

    if (config.ccat_count == 0) {
        m.single_cat = make_transformer_block(m.params, "fine.cat", d, config.heads, 2 * d, rng);
    }
    for (std::size_t u = 0; u < config.ccat_count; ++u) {
        const std::string name = "fine.ccat." + std::to_string(u);
        CcatUnit unit;
        unit.point_from_text = make_transformer_block(m.params, name + ".cat1", d, config.heads, 2 * d, rng);
        unit.text_from_point = make_transformer_block(m.params, name + ".cat2", d, config.heads, 2 * d, rng);
        m.units.push_back(std::move(unit));
    }
    m.pool = make_transformer_block(m.params, "fine.pool", d, config.heads, 2 * d, rng);
    m.regressor = make_mlp(m.params, "fine.regressor", { d, d, 2 }, rng);
    return m;
}

FineModel load_fine_model(const Checkpoint& checkpoint)
{
    const FineConfig config = fine_config_from_metadata(checkpoint.metadata);
    const std::size_t vocab = parse_u64(require(checkpoint.metadata, "vocab_size"));
    FineModel m = make_fine_model(config, vocab);
    restore_parameters(checkpoint, m.params);
    return m;
}

Tensor cat(const Tensor& queries, const Tensor& context, const TransformerBlock& block, const Offsets& q_offsets,
           const Offsets& kv_offsets)
{
    if (!context.defined() || context.rank() != 2 || context.rows() == 0) {
        throw ValueError("cross attention needs at least one key/value row");
    }
    return transformer_cross(queries, context, block, q_offsets, kv_offsets);
}

Tensor ccat(const Tensor& text, const Tensor& points, const FineModel& model, const Offsets& text_offsets,
            const Offsets& point_offsets)
{
    if (model.units.empty()) {
        return cat(text, points, *model.single_cat, text_offsets, point_offsets);
    }
    Tensor t = text;
    for (const auto& unit : model.units) {
        const Tensor enhanced = cat(points, t, unit.point_from_text, point_offsets, text_offsets);
        t = cat(t, enhanced, unit.text_from_point, text_offsets, point_offsets);
    }
    return t;
}

Tensor regress_offsets(const Tensor& fused_text, const Offsets& text_offsets, const FineModel& model)
{
    return model.regressor.forward(transformer_block_maxpool(fused_text, model.pool, text_offsets));
}

Tensor predict_offsets(const std::vector<const data::QueryDescription*>& queries,
                       const std::vector<const submap::SubmapInput*>& submaps, const FineModel& model, double cell)
{
    if (queries.size() != submaps.size() || queries.empty()) {
        throw ValueError("predict_offsets needs one submap per query");
    }
    const auto hints = text::encode_hints(queries, model.text);
    const Tensor text = model.text.projection.forward(hints.vectors);
    const auto instances = submap::encode_submap_instances(submaps, model.points);
    const Tensor fused = ccat(text, instances.embeddings, model, hints.hint_offsets, instances.offsets);
    return scale(regress_offsets(fused, hints.hint_offsets, model), cell / 2.0);
}

Tensor mse_loss(const Tensor& predicted, const Tensor& target)
{
    if (predicted.rank() != 2 || predicted.cols() != 2 || predicted.shape() != target.shape()) {
        throw ShapeError("mse_loss needs equal [n x 2] inputs");
    }
    const Tensor diff = sub(predicted, target);
    return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(predicted.rows()));
}

FineTrainer::FineTrainer(const FineConfig& config, const data::Dataset& dataset,
                         const std::vector<submap::SubmapInput>& submaps)
    : dataset_(dataset), submaps_(submaps),
      model_(make_fine_model(config, data::Vocabulary::build_default().size())), pmc_index_(dataset.database)
{
    check_inputs(dataset, submaps);
}

FineTrainer::FineTrainer(const Checkpoint& checkpoint, const data::Dataset& dataset,
                         const std::vector<submap::SubmapInput>& submaps)
    : dataset_(dataset), submaps_(submaps), model_(load_fine_model(checkpoint)), pmc_index_(dataset.database)
{
    check_inputs(dataset, submaps);
    if (model_.vocab_size != data::Vocabulary::build_default().size()) {
        throw CheckpointError("checkpoint vocabulary size does not match the dataset vocabulary");
    }
    adam_ = restore_adam(checkpoint, model_.params);
    epoch_ = parse_u64(require(checkpoint.metadata, "next_epoch"));
    losses_ = split_doubles(require(checkpoint.metadata, "loss_trace"));
    if (losses_.size() != epoch_) {
        throw CheckpointError("loss trace length does not match the epoch counter");
    }
}

FineTrainer::Plan FineTrainer::plan_epoch(std::size_t epoch) const
{
    Rng rng = Rng::derive(model_.config.seed, epoch);
    Plan plan;
    const auto& train = dataset_.train;
    plan.order.resize(train.size());
    std::iota(plan.order.begin(), plan.order.end(), 0);
    rng.shuffle(plan.order.begin(), plan.order.end());
    plan.submap_of.resize(train.size());
    for (auto q : plan.order) {
        const auto& query = train[q];
        if (model_.config.no_pmc) {
            plan.submap_of[q] = query.gt_submap_id;
            continue;
        }
        const auto g = pmc_index_.candidates(query.gt_submap_id, query.target, model_.config.pmc);
        plan.submap_of[q] = pmc_filter_and_sample(g, query, dataset_.scene, dataset_.database,
                                                  model_.config.pmc, rng);
    }
    return plan;
}

std::vector<std::uint32_t> FineTrainer::training_submaps(std::size_t epoch) const
{
    return plan_epoch(epoch).submap_of;
}

double FineTrainer::run_epoch()
{
    if (finished()) {
        throw ValueError("fine training already ran all epochs");
    }
    const Plan plan = plan_epoch(epoch_);
    const auto& train = dataset_.train;
    const double cell = dataset_.database.cell;
    auto params = model_.params.tensors();
    double total = 0.0;
    for (std::size_t begin = 0; begin < plan.order.size(); begin += model_.config.batch_size) {
        const std::size_t end = std::min(plan.order.size(), begin + model_.config.batch_size);
        std::vector<const data::QueryDescription*> queries;
        std::vector<const submap::SubmapInput*> maps;
        std::vector<std::uint32_t> ids;
        for (std::size_t i = begin; i < end; ++i) {
            const auto q = plan.order[i];
            queries.push_back(&train[q]);
            ids.push_back(plan.submap_of[q]);
            maps.push_back(&submaps_.at(plan.submap_of[q]));
        }
        const Tensor loss = mse_loss(predict_offsets(queries, maps, model_, cell),
                                     target_offsets(queries, ids, dataset_.database));
        model_.params.zero_grad();
        backward(loss);
        adam_step(params, adam_, model_.config.lr);
        total += loss.item() * static_cast<double>(queries.size());
    }
    const double mean = total / static_cast<double>(plan.order.size());
    losses_.push_back(mean);
    ++epoch_;
    return mean;
}

double FineTrainer::mean_error(const std::vector<data::QueryDescription>& queries) const
{
    if (queries.empty()) {
        throw ValueError("no queries to evaluate");
    }
    NoGradGuard no_grad;
    double total = 0.0;
    for (std::size_t begin = 0; begin < queries.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(queries.size(), begin + kEvalChunk);
        std::vector<const data::QueryDescription*> qs;
        std::vector<const submap::SubmapInput*> maps;
        std::vector<std::uint32_t> ids;
        for (std::size_t i = begin; i < end; ++i) {
            qs.push_back(&queries[i]);
            ids.push_back(queries[i].gt_submap_id);
            maps.push_back(&submaps_.at(queries[i].gt_submap_id));
        }
        const Tensor pred = predict_offsets(qs, maps, model_, dataset_.database.cell);
        const Tensor gt = target_offsets(qs, ids, dataset_.database);
        for (std::size_t i = 0; i < qs.size(); ++i) {
            const double dx = pred.values()[2 * i] - gt.values()[2 * i];
            const double dy = pred.values()[2 * i + 1] - gt.values()[2 * i + 1];
            total += std::hypot(dx, dy);
        }
    }
    return total / static_cast<double>(queries.size());
}

Checkpoint FineTrainer::checkpoint() const
{
    auto meta = to_metadata(model_.config);
    meta["vocab_size"] = std::to_string(model_.vocab_size);
    meta["next_epoch"] = std::to_string(epoch_);
    meta["loss_trace"] = join_doubles(losses_);
    return make_checkpoint(model_.params, &adam_, std::move(meta));
}

} // namespace text2loc::fine
