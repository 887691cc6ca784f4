#pragma once

// Checkpoint = <prefix>.vtsw (weights) + <prefix>.json sidecar holding the
// run-config echo, epoch/step counters, optimizer moments (base64 f32), and
// the evaluation history. Weights round-trip bit-exactly.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vithash/optim.hpp"
#include "vithash/serialize.hpp"

namespace vith {

struct CheckpointMeta {
    std::size_t epoch = 0;       // completed epochs
    std::uint64_t step = 0;      // optimizer steps taken
    std::string config_json;     // full run-config echo (one JSON object)
    std::vector<std::pair<std::size_t, double>> map_history;  // (epoch, mAP)
    std::size_t best_epoch = 0;
    double best_map = -1.0;      // -1 until the first evaluation
};

struct Checkpoint {
    WeightMap weights;
    CheckpointMeta meta;
    std::uint64_t adam_steps = 0;
    std::map<std::string, AdamMoments<float>> moments;
};

void save_checkpoint(const std::string& prefix, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& prefix);

// weights only, no sidecar required (plain .vtsw path)
inline std::string checkpoint_weights_path(const std::string& prefix) { return prefix + ".vtsw"; }
inline std::string checkpoint_meta_path(const std::string& prefix) { return prefix + ".json"; }

}  // namespace vith
