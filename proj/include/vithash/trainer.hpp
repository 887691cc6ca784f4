#pragma once

// Training loop: Adam over shuffled mini-batches, periodic retrieval
// evaluation (encode query + database, mAP at the protocol cutoff), best
// checkpoint by mAP with earlier-epoch tie break. Deterministic: (seed,
// config, data) fix the metric log byte for byte.

#include <cstdint>
#include <string>
#include <vector>

#include "vithash/checkpoint.hpp"
#include "vithash/model.hpp"
#include "vithash/objectives.hpp"
#include "vithash/optim.hpp"

namespace vith {

struct TrainConfig {
    AdamConfig adam;                // lr default 1e-5
    std::size_t epochs = 150;
    std::size_t batch_size = 32;
    std::size_t eval_every = 30;    // epochs between retrieval evaluations
    std::uint64_t seed = 0;
    LossConfig loss;

    void validate() const {
        adam.validate();
        loss.validate();
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (eval_every < 1 || eval_every > epochs)
            throw ConfigError("train: eval_every must lie in [1, epochs]");
    }
};

struct TrainResult {
    std::string metrics_csv;        // "# config ..." + header + one row per epoch/eval
    std::size_t best_epoch = 0;
    double best_map = -1.0;
    WeightMap best_weights;         // model + objective aux tensors at the best eval
    std::uint64_t final_step = 0;
    std::vector<std::pair<std::size_t, double>> map_history;
};

// Continue from a saved checkpoint: epoch/step counters, optimizer moments,
// and the best-so-far record. Weights must already be restored by the caller.
struct ResumePoint {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    std::uint64_t adam_steps = 0;
    std::map<std::string, AdamMoments<float>> moments;
    std::size_t best_epoch = 0;
    double best_map = -1.0;
    std::vector<std::pair<std::size_t, double>> map_history;

    static ResumePoint from_checkpoint(const Checkpoint& ck) {
        ResumePoint r;
        r.epoch = ck.meta.epoch;
        r.step = ck.meta.step;
        r.adam_steps = ck.adam_steps;
        r.moments = ck.moments;
        r.best_epoch = ck.meta.best_epoch;
        r.best_map = ck.meta.best_map;
        r.map_history = ck.meta.map_history;
        return r;
    }
};

// `config_echo` is a one-line JSON object echoed into the CSV header and the
// checkpoint sidecar. `checkpoint_prefix` empty = keep everything in memory.
// The model and objective state are updated in place.
TrainResult train(Model& model, ObjectiveState<float>& objective, const Dataset& ds,
                  const TrainConfig& cfg, const std::string& config_echo,
                  const std::string& checkpoint_prefix = "",
                  const ResumePoint* resume = nullptr);

}  // namespace vith
