#pragma once

// Dataset ingestion and split protocols. Images are HWC-interleaved floats
// in [0,1]; per-channel normalization happens at batch time, not load time.

#include <cstdint>
#include <string>
#include <vector>

#include "vithash/errors.hpp"

namespace vith {

struct DataItem {
    std::uint64_t id = 0;
    std::vector<float> image;               // m*m*c, (row, col, channel)
    std::vector<std::uint32_t> labels;      // sorted ascending
    bool holdout = false;                   // came from the designated test pool
};

struct Dataset {
    std::string protocol;                   // name of the applied protocol, if any
    std::size_t image_size = 0;
    std::size_t channels = 0;
    std::size_t classes = 0;
    std::size_t map_cutoff = 0;             // 0 until a protocol is applied
    std::vector<DataItem> items;
    std::vector<std::uint32_t> train, query, database;  // indices into items, sorted
};

// How a protocol carves query/train/database out of the item pool.
enum class SplitScheme {
    PerClassDisjoint,    // sample train and query per class; database = the rest
    PerClassSharedTrain, // like PerClassDisjoint, but the train images stay in the database
    HoldoutQuery,        // sample classes; query = their holdout items, database = the rest
                         //   of their items, train sampled from the database
    PerConceptFromDb,    // query per concept; database = rest; train per concept from database
    TotalsFromDb,        // query by total count; database = rest; train by total from database
};

const char* to_string(SplitScheme s);
SplitScheme parse_split_scheme(const std::string& s);

struct ProtocolSpec {
    std::string name;
    SplitScheme scheme = SplitScheme::PerClassDisjoint;
    std::size_t train_per_class = 0;   // PerClassDisjoint/SharedTrain, PerConceptFromDb
    std::size_t query_per_class = 0;
    std::size_t train_total = 0;       // HoldoutQuery, TotalsFromDb
    std::size_t query_total = 0;       // TotalsFromDb
    std::size_t class_sample = 0;      // HoldoutQuery: number of classes kept (0 = all)
    std::size_t map_cutoff = 0;

    std::string to_json() const;
    static ProtocolSpec from_json(const std::string& text);
    // cifar10@54000, cifar10@all, imagenet, nuswide, coco, synth
    static ProtocolSpec builtin(const std::string& name);
};

// CIFAR-10 binary batches: data_batch_{1..5}.bin + test_batch.bin, 10000
// records each, record = label byte + 3072 channel-planar pixel bytes.
Dataset load_cifar10(const std::string& dir);

Dataset apply_protocol(Dataset dataset, const ProtocolSpec& spec, std::uint64_t seed);

struct SynthConfig {
    std::size_t classes = 10;
    std::size_t per_class = 100;
    std::size_t image_size = 32;
    std::size_t channels = 3;
    double noise_sigma = 0.1;
    bool multi_label = false;   // 1-3 labels per item, images overlap the patterns
};

Dataset synth_dataset(const SynthConfig& cfg, std::uint64_t seed);

// "VTSS" container: item pool only; splits are re-derived via apply_protocol.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

std::vector<float> resize_bilinear(const std::vector<float>& image, std::size_t m_in,
                                   std::size_t m_out, std::size_t channels);

struct Normalization {
    std::vector<float> mean{0.5f, 0.5f, 0.5f};
    std::vector<float> std{0.5f, 0.5f, 0.5f};

    void validate(std::size_t channels) const;
    // in-place (x - mean) / std per channel on an HWC image
    void apply(std::vector<float>& image, std::size_t channels) const;
};

}  // namespace vith
