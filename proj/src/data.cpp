#include "vithash/data.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "bytes.hpp"
#include "vithash/rng.hpp"

namespace vith {

using nlohmann::json;

const char* to_string(SplitScheme s) {
    switch (s) {
        case SplitScheme::PerClassDisjoint: return "per_class_disjoint";
        case SplitScheme::PerClassSharedTrain: return "per_class_shared_train";
        case SplitScheme::HoldoutQuery: return "holdout_query";
        case SplitScheme::PerConceptFromDb: return "per_concept_from_db";
        case SplitScheme::TotalsFromDb: return "totals_from_db";
    }
    return "?";
}

SplitScheme parse_split_scheme(const std::string& s) {
    if (s == "per_class_disjoint") return SplitScheme::PerClassDisjoint;
    if (s == "per_class_shared_train") return SplitScheme::PerClassSharedTrain;
    if (s == "holdout_query") return SplitScheme::HoldoutQuery;
    if (s == "per_concept_from_db") return SplitScheme::PerConceptFromDb;
    if (s == "totals_from_db") return SplitScheme::TotalsFromDb;
    throw ConfigError("unknown split scheme '" + s + "'");
}

std::string ProtocolSpec::to_json() const {
    json j;
    j["name"] = name;
    j["scheme"] = to_string(scheme);
    j["train_per_class"] = train_per_class;
    j["query_per_class"] = query_per_class;
    j["train_total"] = train_total;
    j["query_total"] = query_total;
    j["class_sample"] = class_sample;
    j["map_cutoff"] = map_cutoff;
    return j.dump(2);
}

ProtocolSpec ProtocolSpec::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("protocol JSON: ") + e.what());
    }
    static const char* known[] = {"name",        "scheme",      "train_per_class",
                                  "query_per_class", "train_total", "query_total",
                                  "class_sample",    "map_cutoff"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("protocol JSON: unknown key '" + it.key() + "'");
    }
    ProtocolSpec spec;
    try {
        spec.name = j.value("name", std::string{});
        spec.scheme = parse_split_scheme(j.at("scheme").get<std::string>());
        spec.train_per_class = j.value("train_per_class", std::size_t{0});
        spec.query_per_class = j.value("query_per_class", std::size_t{0});
        spec.train_total = j.value("train_total", std::size_t{0});
        spec.query_total = j.value("query_total", std::size_t{0});
        spec.class_sample = j.value("class_sample", std::size_t{0});
        spec.map_cutoff = j.value("map_cutoff", std::size_t{0});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("protocol JSON: ") + e.what());
    }
    return spec;
}

ProtocolSpec ProtocolSpec::builtin(const std::string& name) {
    ProtocolSpec s;
    s.name = name;
    if (name == "cifar10@54000") {
        s.scheme = SplitScheme::PerClassDisjoint;
        s.train_per_class = 500;
        s.query_per_class = 100;
        s.map_cutoff = 54000;
    } else if (name == "cifar10@all") {
        s.scheme = SplitScheme::PerClassSharedTrain;
        s.train_per_class = 500;
        s.query_per_class = 100;
        s.map_cutoff = 59000;
    } else if (name == "imagenet") {
        s.scheme = SplitScheme::HoldoutQuery;
        s.class_sample = 100;
        s.train_total = 13000;
        s.map_cutoff = 1000;
    } else if (name == "nuswide") {
        s.scheme = SplitScheme::PerConceptFromDb;
        s.query_per_class = 100;
        s.train_per_class = 500;
        s.map_cutoff = 5000;
    } else if (name == "coco") {
        s.scheme = SplitScheme::TotalsFromDb;
        s.query_total = 5000;
        s.train_total = 10000;
        s.map_cutoff = 5000;
    } else if (name == "synth") {
        s.scheme = SplitScheme::PerClassDisjoint;
        s.train_per_class = 200;
        s.query_per_class = 50;
        s.map_cutoff = 500;
    } else {
        throw ConfigError("unknown protocol '" + name + "'");
    }
    return s;
}

Dataset load_cifar10(const std::string& dir) {
    constexpr std::size_t kRecords = 10000;
    constexpr std::size_t kRecordBytes = 1 + 3 * 1024;
    constexpr std::size_t kFileBytes = kRecords * kRecordBytes;
    const std::string names[] = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                 "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
    Dataset ds;
    ds.image_size = 32;
    ds.channels = 3;
    ds.classes = 10;
    ds.items.reserve(60000);
    std::string missing;
    for (const auto& n : names) {
        std::ifstream probe(dir + "/" + n, std::ios::binary);
        if (!probe) missing += (missing.empty() ? "" : ", ") + n;
    }
    if (!missing.empty()) throw DataError("cifar10: missing files in '" + dir + "': " + missing);
    std::uint64_t next_id = 0;
    for (const auto& n : names) {
        const bool holdout = (n == "test_batch.bin");
        auto buf = bytes::slurp(dir + "/" + n, "cifar10 batch");
        if (buf.size() != kFileBytes)
            throw DataError("cifar10: '" + n + "' is " + std::to_string(buf.size()) +
                            " bytes, want " + std::to_string(kFileBytes));
        for (std::size_t r = 0; r < kRecords; ++r) {
            const std::uint8_t* rec = buf.data() + r * kRecordBytes;
            DataItem item;
            item.id = next_id++;
            item.holdout = holdout;
            if (rec[0] > 9)
                throw DataError("cifar10: '" + n + "' record " + std::to_string(r) +
                                " has label " + std::to_string(rec[0]));
            item.labels = {rec[0]};
            item.image.resize(32 * 32 * 3);
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t px = 0; px < 1024; ++px)
                    item.image[px * 3 + ch] = float(rec[1 + ch * 1024 + px]) / 255.0f;
            ds.items.push_back(std::move(item));
        }
    }
    return ds;
}

namespace {

// ascending candidate list -> seeded shuffle -> first n, removed from `free`
std::vector<std::uint32_t> take_sample(std::vector<std::uint32_t> candidates, std::size_t n,
                                       Prng& rng, const std::string& what) {
    if (candidates.size() < n)
        throw DataError("protocol: need " + std::to_string(n) + " items for " + what +
                        ", have " + std::to_string(candidates.size()));
    shuffle(candidates, rng);
    candidates.resize(n);
    return candidates;
}

std::vector<std::vector<std::uint32_t>> by_class(const Dataset& ds, std::size_t classes,
                                                 const std::vector<bool>& eligible) {
    std::vector<std::vector<std::uint32_t>> groups(classes);
    for (std::uint32_t i = 0; i < ds.items.size(); ++i) {
        if (!eligible[i]) continue;
        for (auto l : ds.items[i].labels) {
            if (l >= classes)
                throw DataError("protocol: item " + std::to_string(i) + " has label " +
                                std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
            groups[l].push_back(i);
        }
    }
    return groups;
}

void sort_unique(std::vector<std::uint32_t>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

Dataset apply_protocol(Dataset ds, const ProtocolSpec& spec, std::uint64_t seed) {
    if (ds.items.empty()) throw DataError("protocol: empty dataset");
    if (ds.classes == 0) throw DataError("protocol: dataset has no class count");
    Prng rng(seed);
    const std::size_t n = ds.items.size();
    ds.train.clear();
    ds.query.clear();
    ds.database.clear();
    // 0 = unassigned, 1 = train, 2 = query
    std::vector<std::uint8_t> role(n, 0);

    auto assign_per_class = [&](std::size_t per_class, std::uint8_t r, const char* what) {
        std::vector<bool> eligible(n);
        for (std::size_t i = 0; i < n; ++i) eligible[i] = role[i] == 0;
        auto groups = by_class(ds, ds.classes, eligible);
        for (std::size_t c = 0; c < ds.classes; ++c) {
            // items with several labels may appear in several groups; drop
            // the ones an earlier class already took
            std::vector<std::uint32_t> cand;
            for (auto i : groups[c])
                if (role[i] == 0) cand.push_back(i);
            auto picked = take_sample(std::move(cand), per_class, rng,
                                      std::string(what) + " of class " + std::to_string(c));
            for (auto i : picked) role[i] = r;
        }
    };

    switch (spec.scheme) {
        case SplitScheme::PerClassDisjoint:
        case SplitScheme::PerClassSharedTrain: {
            assign_per_class(spec.train_per_class, 1, "train");
            assign_per_class(spec.query_per_class, 2, "query");
            const bool shared = spec.scheme == SplitScheme::PerClassSharedTrain;
            for (std::uint32_t i = 0; i < n; ++i) {
                if (role[i] == 1) ds.train.push_back(i);
                else if (role[i] == 2) ds.query.push_back(i);
                if (role[i] == 0 || (shared && role[i] == 1)) ds.database.push_back(i);
            }
            break;
        }
        case SplitScheme::HoldoutQuery: {
            std::size_t keep = spec.class_sample == 0 ? ds.classes : spec.class_sample;
            if (keep > ds.classes)
                throw DataError("protocol: class_sample " + std::to_string(keep) + " > " +
                                std::to_string(ds.classes) + " classes");
            std::vector<std::uint32_t> class_ids(ds.classes);
            for (std::uint32_t c = 0; c < ds.classes; ++c) class_ids[c] = c;
            auto kept = take_sample(std::move(class_ids), keep, rng, "class sample");
            std::vector<bool> keep_class(ds.classes, false);
            for (auto c : kept) keep_class[c] = true;
            for (std::uint32_t i = 0; i < n; ++i) {
                bool in = false;
                for (auto l : ds.items[i].labels) in = in || keep_class[l];
                if (!in) continue;
                if (ds.items[i].holdout) ds.query.push_back(i);
                else ds.database.push_back(i);
            }
            if (ds.query.empty()) throw DataError("protocol: no holdout items for query split");
            ds.train = take_sample(ds.database, spec.train_total, rng, "train");
            break;
        }
        case SplitScheme::PerConceptFromDb: {
            assign_per_class(spec.query_per_class, 2, "query");
            for (std::uint32_t i = 0; i < n; ++i) {
                if (role[i] == 2) ds.query.push_back(i);
                else ds.database.push_back(i);
            }
            // train sampled from the database, per concept, without repeats
            std::vector<std::uint8_t> taken(n, 0);
            std::vector<bool> eligible(n);
            for (std::size_t i = 0; i < n; ++i) eligible[i] = role[i] == 0;
            auto groups = by_class(ds, ds.classes, eligible);
            for (std::size_t c = 0; c < ds.classes; ++c) {
                std::vector<std::uint32_t> cand;
                for (auto i : groups[c])
                    if (!taken[i]) cand.push_back(i);
                auto picked = take_sample(std::move(cand), spec.train_per_class, rng,
                                          "train of concept " + std::to_string(c));
                for (auto i : picked) {
                    taken[i] = 1;
                    ds.train.push_back(i);
                }
            }
            break;
        }
        case SplitScheme::TotalsFromDb: {
            std::vector<std::uint32_t> all(n);
            for (std::uint32_t i = 0; i < n; ++i) all[i] = i;
            auto q = take_sample(std::move(all), spec.query_total, rng, "query");
            for (auto i : q) role[i] = 2;
            for (std::uint32_t i = 0; i < n; ++i)
                (role[i] == 2 ? ds.query : ds.database).push_back(i);
            ds.train = take_sample(ds.database, spec.train_total, rng, "train");
            break;
        }
    }
    sort_unique(ds.train);
    sort_unique(ds.query);
    sort_unique(ds.database);
    if (ds.train.empty() || ds.query.empty() || ds.database.empty())
        throw DataError("protocol '" + spec.name + "': produced an empty split");
    ds.protocol = spec.name;
    ds.map_cutoff = spec.map_cutoff;
    return ds;
}

Dataset synth_dataset(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (cfg.per_class == 0 || cfg.image_size == 0 || cfg.channels == 0)
        throw ConfigError("synth: zero size parameter");
    Dataset ds;
    ds.image_size = cfg.image_size;
    ds.channels = cfg.channels;
    ds.classes = cfg.classes;
    const std::size_t dim = cfg.image_size * cfg.image_size * cfg.channels;
    Prng rng(seed);
    std::vector<std::vector<float>> patterns(cfg.classes);
    for (auto& p : patterns) {
        p.resize(dim);
        for (auto& v : p) v = float(rng.next_unit());
    }
    std::uint64_t next_id = 0;
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        for (std::size_t j = 0; j < cfg.per_class; ++j) {
            DataItem item;
            item.id = next_id++;
            item.labels = {std::uint32_t(c)};
            if (cfg.multi_label) {
                // up to two extra labels; the image blends the patterns
                for (int extra = 0; extra < 2; ++extra) {
                    if (rng.next_unit() < 0.3) {
                        auto o = std::uint32_t(rng.next_below(cfg.classes));
                        item.labels.push_back(o);
                    }
                }
                std::sort(item.labels.begin(), item.labels.end());
                item.labels.erase(std::unique(item.labels.begin(), item.labels.end()),
                                  item.labels.end());
            }
            item.image.resize(dim);
            for (std::size_t px = 0; px < dim; ++px) {
                double v = 0;
                for (auto l : item.labels) v += patterns[l][px];
                v /= double(item.labels.size());
                v += cfg.noise_sigma * rng.next_gaussian();
                item.image[px] = float(std::clamp(v, 0.0, 1.0));
            }
            ds.items.push_back(std::move(item));
        }
    }
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::vector<std::uint8_t> buf;
    bytes::put_bytes(buf, "VTSS", 4);
    bytes::put_u32(buf, 1);
    bytes::put_u64(buf, ds.items.size());
    bytes::put_u32(buf, std::uint32_t(ds.image_size));
    bytes::put_u32(buf, std::uint32_t(ds.channels));
    bytes::put_u32(buf, std::uint32_t(ds.classes));
    const std::size_t dim = ds.image_size * ds.image_size * ds.channels;
    for (const auto& item : ds.items) {
        if (item.image.size() != dim)
            throw ContractError("dataset save: item " + std::to_string(item.id) +
                                " image size mismatch");
        bytes::put_u64(buf, item.id);
        buf.push_back(item.holdout ? 1 : 0);
        bytes::put_u16(buf, std::uint16_t(item.labels.size()));
        for (auto l : item.labels) bytes::put_u32(buf, l);
        for (float v : item.image) bytes::put_f32(buf, v);
    }
    bytes::spill(path, buf, "dataset file");
}

Dataset load_dataset(const std::string& path) {
    auto buf = bytes::slurp(path, "dataset file");
    bytes::Cursor c{buf, 0, "dataset file '" + path + "'"};
    c.expect_magic("VTSS");
    const auto version = c.u32();
    if (version != 1) throw DataError(c.what + ": unsupported version " + std::to_string(version));
    const auto count = c.u64();
    Dataset ds;
    ds.image_size = c.u32();
    ds.channels = c.u32();
    ds.classes = c.u32();
    const std::size_t dim = ds.image_size * ds.image_size * ds.channels;
    for (std::uint64_t i = 0; i < count; ++i) {
        DataItem item;
        item.id = c.u64();
        item.holdout = c.u8() != 0;
        const auto label_count = c.u16();
        item.labels.resize(label_count);
        for (auto& l : item.labels) l = c.u32();
        std::sort(item.labels.begin(), item.labels.end());
        item.image.resize(dim);
        for (auto& v : item.image) v = c.f32();
        ds.items.push_back(std::move(item));
    }
    c.done();
    return ds;
}

std::vector<float> resize_bilinear(const std::vector<float>& image, std::size_t m_in,
                                   std::size_t m_out, std::size_t channels) {
    if (m_in == 0 || m_out == 0 || channels == 0)
        throw ConfigError("resize: zero dimension");
    if (image.size() != m_in * m_in * channels)
        throw ShapeError("resize: image has " + std::to_string(image.size()) +
                         " values, want " + std::to_string(m_in * m_in * channels));
    if (m_in == m_out) return image;
    std::vector<float> out(m_out * m_out * channels);
    const double scale = double(m_in) / double(m_out);
    for (std::size_t y = 0; y < m_out; ++y) {
        // half-pixel centers (align_corners = false)
        double sy = (double(y) + 0.5) * scale - 0.5;
        sy = std::clamp(sy, 0.0, double(m_in - 1));
        const std::size_t y0 = std::size_t(sy);
        const std::size_t y1 = std::min(y0 + 1, m_in - 1);
        const double fy = sy - double(y0);
        for (std::size_t x = 0; x < m_out; ++x) {
            double sx = (double(x) + 0.5) * scale - 0.5;
            sx = std::clamp(sx, 0.0, double(m_in - 1));
            const std::size_t x0 = std::size_t(sx);
            const std::size_t x1 = std::min(x0 + 1, m_in - 1);
            const double fx = sx - double(x0);
            for (std::size_t ch = 0; ch < channels; ++ch) {
                const double v00 = image[(y0 * m_in + x0) * channels + ch];
                const double v01 = image[(y0 * m_in + x1) * channels + ch];
                const double v10 = image[(y1 * m_in + x0) * channels + ch];
                const double v11 = image[(y1 * m_in + x1) * channels + ch];
                const double top = v00 + (v01 - v00) * fx;
                const double bot = v10 + (v11 - v10) * fx;
                out[(y * m_out + x) * channels + ch] = float(top + (bot - top) * fy);
            }
        }
    }
    return out;
}

void Normalization::validate(std::size_t channels) const {
    if (mean.size() < channels || std.size() < channels)
        throw ConfigError("normalization: need " + std::to_string(channels) +
                          " per-channel constants");
    for (std::size_t c = 0; c < channels; ++c)
        if (std[c] == 0.0f) throw ConfigError("normalization: zero std for channel " +
                                              std::to_string(c));
}

void Normalization::apply(std::vector<float>& image, std::size_t channels) const {
    validate(channels);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const std::size_t c = i % channels;
        image[i] = (image[i] - mean[c]) / std[c];
    }
}

}  // namespace vith
