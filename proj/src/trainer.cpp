#include "vithash/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "vithash/rng.hpp"

namespace vith {

namespace {

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// batch_size chunks over the shuffled order; a trailing singleton joins the
// previous chunk so pairwise objectives always see at least two items
std::vector<std::vector<std::uint32_t>> make_chunks(const std::vector<std::uint32_t>& order,
                                                    std::size_t batch_size) {
    std::vector<std::vector<std::uint32_t>> chunks;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, order.size() - start);
        chunks.emplace_back(order.begin() + start, order.begin() + start + n);
    }
    if (chunks.size() >= 2 && chunks.back().size() == 1) {
        chunks[chunks.size() - 2].push_back(chunks.back()[0]);
        chunks.pop_back();
    }
    return chunks;
}

WeightMap full_snapshot(const Model& model, const ObjectiveState<float>& obj) {
    auto named = model.named();
    auto aux = obj.named();
    named.insert(named.end(), aux.begin(), aux.end());
    return snapshot(named);
}

}  // namespace

TrainResult train(Model& model, ObjectiveState<float>& objective, const Dataset& ds,
                  const TrainConfig& cfg, const std::string& config_echo,
                  const std::string& checkpoint_prefix, const ResumePoint* resume) {
    cfg.validate();
    model.config.validate();
    if (ds.train.empty() || ds.query.empty() || ds.database.empty())
        throw ConfigError("train: dataset is missing a split (train/query/database)");
    if (ds.map_cutoff == 0) throw ConfigError("train: dataset has no mAP cutoff (no protocol)");

    TrainResult res;
    std::size_t start_epoch = 0;
    std::uint64_t step = 0;
    Adam<float> adam(cfg.adam);
    if (resume) {
        start_epoch = resume->epoch;
        step = resume->step;
        adam.set_steps(resume->adam_steps);
        adam.moments() = resume->moments;
        res.best_epoch = resume->best_epoch;
        res.best_map = resume->best_map;
        res.map_history = resume->map_history;
        if (start_epoch >= cfg.epochs)
            throw ConfigError("train: checkpoint is already at epoch " +
                              std::to_string(start_epoch) + " of " + std::to_string(cfg.epochs));
    }

    std::string csv;
    if (!config_echo.empty()) csv += "# config " + config_echo + "\n";
    csv += "epoch,split,loss,map\n";

    auto params = model.named();
    {
        auto aux = objective.named();
        params.insert(params.end(), aux.begin(), aux.end());
    }
    for (auto& [name, t] : params) t.set_requires_grad(true);

    const EvalOptions eval_opt{std::min(ds.map_cutoff, std::size_t(ds.database.size())), false,
                               ApNorm::HitsInCutoff};

    auto labels_of = [&](const std::vector<std::uint32_t>& chunk) {
        std::vector<std::vector<std::uint32_t>> out;
        out.reserve(chunk.size());
        for (auto i : chunk) out.push_back(ds.items[i].labels);
        return out;
    };

    for (std::size_t epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::uint32_t> order = ds.train;
        Prng shuffle_rng(counter_hash(cfg.seed, 0x5348, epoch, 0));
        shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t item_count = 0;
        for (const auto& chunk : make_chunks(order, cfg.batch_size)) {
            auto patches = make_batch(ds, chunk, model.config);
            const ForwardCtx ctx{true, cfg.seed, step};
            auto te = encode_patches_batch(patches, model.encoder, ctx, false).te;
            auto h = hash_forward_batch(te, model.head, ctx);
            auto loss = compute_loss(objective, h, labels_of(chunk), step);
            const double lv = double(loss.item());
            if (!std::isfinite(lv))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step));
            for (auto& [name, t] : params) t.zero_grad();
            backward(loss);
            adam.step(params);
            loss_sum += lv * double(chunk.size());
            item_count += chunk.size();
            ++step;
        }
        csv += std::to_string(epoch) + ",train," + fmt9(loss_sum / double(item_count)) + ",\n";

        if (epoch % cfg.eval_every == 0) {
            auto query_codes = encode_split(model, ds, ds.query, cfg.batch_size);
            auto db_codes = encode_split(model, ds, ds.database, cfg.batch_size);
            const double map = map_at_k(query_codes, db_codes, eval_opt).map;
            csv += std::to_string(epoch) + ",eval,," + fmt9(map) + "\n";
            res.map_history.emplace_back(epoch, map);
            if (map > res.best_map) {
                res.best_map = map;
                res.best_epoch = epoch;
                res.best_weights = full_snapshot(model, objective);
            }
            if (!checkpoint_prefix.empty()) {
                Checkpoint ck;
                ck.meta.epoch = epoch;
                ck.meta.step = step;
                ck.meta.config_json = config_echo;
                ck.meta.map_history = res.map_history;
                ck.meta.best_epoch = res.best_epoch;
                ck.meta.best_map = res.best_map;
                ck.adam_steps = adam.steps();
                ck.moments = adam.moments();
                ck.weights = full_snapshot(model, objective);
                save_checkpoint(checkpoint_prefix + ".last", ck);
                if (res.best_epoch == epoch) {
                    ck.weights = res.best_weights;
                    save_checkpoint(checkpoint_prefix, ck);
                }
            }
        }
    }
    if (res.best_map < 0) {
        // eval_every <= epochs guarantees at least one evaluation ran
        throw ContractError("train: no evaluation happened");
    }
    if (res.best_weights.empty()) res.best_weights = full_snapshot(model, objective);
    res.metrics_csv = std::move(csv);
    res.final_step = step;
    return res;
}

}  // namespace vith
