#include "vithash/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace vith {

using nlohmann::json;

namespace {

const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::vector<float>& v) {
    std::vector<std::uint8_t> raw(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &v[i], 4);
        for (int b = 0; b < 4; ++b) raw[i * 4 + b] = std::uint8_t(u >> (8 * b));
    }
    std::string out;
    out.reserve((raw.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < raw.size(); i += 3) {
        std::uint32_t chunk = std::uint32_t(raw[i]) << 16;
        if (i + 1 < raw.size()) chunk |= std::uint32_t(raw[i + 1]) << 8;
        if (i + 2 < raw.size()) chunk |= std::uint32_t(raw[i + 2]);
        out.push_back(kB64[(chunk >> 18) & 63]);
        out.push_back(kB64[(chunk >> 12) & 63]);
        out.push_back(i + 1 < raw.size() ? kB64[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < raw.size() ? kB64[chunk & 63] : '=');
    }
    return out;
}

std::vector<float> b64_decode(const std::string& s, const std::string& what) {
    if (s.size() % 4 != 0) throw DataError(what + ": base64 length not a multiple of 4");
    std::vector<std::uint8_t> raw;
    raw.reserve(s.size() / 4 * 3);
    int val[4];
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = s[i + j];
            if (c == '=') {
                val[j] = 0;
                ++pad;
            } else {
                const char* p = std::strchr(kB64, c);
                if (!p || c == '\0') throw DataError(what + ": bad base64 character");
                val[j] = int(p - kB64);
            }
        }
        const std::uint32_t chunk = std::uint32_t(val[0]) << 18 | std::uint32_t(val[1]) << 12 |
                                    std::uint32_t(val[2]) << 6 | std::uint32_t(val[3]);
        raw.push_back(std::uint8_t(chunk >> 16));
        if (pad < 2) raw.push_back(std::uint8_t(chunk >> 8));
        if (pad < 1) raw.push_back(std::uint8_t(chunk));
    }
    if (raw.size() % 4 != 0) throw DataError(what + ": moment byte count not a multiple of 4");
    std::vector<float> out(raw.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t(raw[i * 4 + b]) << (8 * b);
        std::memcpy(&out[i], &u, 4);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& prefix, const Checkpoint& ck) {
    save_weights(checkpoint_weights_path(prefix), ck.weights);
    json j;
    j["format"] = "vtsh-checkpoint";
    j["version"] = 1;
    j["epoch"] = ck.meta.epoch;
    j["step"] = ck.meta.step;
    if (!ck.meta.config_json.empty()) {
        try {
            j["config"] = json::parse(ck.meta.config_json);
        } catch (const json::exception& e) {
            throw ContractError(std::string("checkpoint: config echo is not JSON: ") + e.what());
        }
    }
    j["best"] = {{"epoch", ck.meta.best_epoch}, {"map", ck.meta.best_map}};
    auto hist = json::array();
    for (const auto& [epoch, map] : ck.meta.map_history) hist.push_back({epoch, map});
    j["map_history"] = hist;
    json moments = json::object();
    for (const auto& [name, mv] : ck.moments)
        moments[name] = {{"m", b64_encode(mv.m)}, {"v", b64_encode(mv.v)}};
    j["adam"] = {{"steps", ck.adam_steps}, {"moments", moments}};
    std::ofstream out(checkpoint_meta_path(prefix), std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write '" + checkpoint_meta_path(prefix) + "'");
    out << j.dump(1) << "\n";
    if (!out) throw DataError("checkpoint: write failed for '" + checkpoint_meta_path(prefix) + "'");
}

Checkpoint load_checkpoint(const std::string& prefix) {
    Checkpoint ck;
    ck.weights = load_weights(checkpoint_weights_path(prefix));
    const std::string meta_path = checkpoint_meta_path(prefix);
    std::ifstream in(meta_path);
    if (!in) throw DataError("checkpoint: cannot open '" + meta_path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("checkpoint '" + meta_path + "': " + e.what());
    }
    try {
        if (j.value("format", std::string{}) != "vtsh-checkpoint")
            throw DataError("checkpoint '" + meta_path + "': not a checkpoint sidecar");
        if (j.value("version", 0) != 1)
            throw DataError("checkpoint '" + meta_path + "': unsupported version");
        ck.meta.epoch = j.value("epoch", std::size_t{0});
        ck.meta.step = j.value("step", std::uint64_t{0});
        if (j.contains("config")) ck.meta.config_json = j["config"].dump();
        if (j.contains("best")) {
            ck.meta.best_epoch = j["best"].value("epoch", std::size_t{0});
            ck.meta.best_map = j["best"].value("map", -1.0);
        }
        if (j.contains("map_history"))
            for (const auto& e : j["map_history"])
                ck.meta.map_history.emplace_back(e.at(0).get<std::size_t>(),
                                                 e.at(1).get<double>());
        if (j.contains("adam")) {
            ck.adam_steps = j["adam"].value("steps", std::uint64_t{0});
            if (j["adam"].contains("moments")) {
                for (auto it = j["adam"]["moments"].begin(); it != j["adam"]["moments"].end();
                     ++it) {
                    AdamMoments<float> mv;
                    mv.m = b64_decode(it.value().at("m").get<std::string>(),
                                      "checkpoint moment '" + it.key() + "'");
                    mv.v = b64_decode(it.value().at("v").get<std::string>(),
                                      "checkpoint moment '" + it.key() + "'");
                    if (mv.m.size() != mv.v.size())
                        throw DataError("checkpoint: m/v size mismatch for '" + it.key() + "'");
                    ck.moments.emplace(it.key(), std::move(mv));
                }
            }
        }
    } catch (const json::exception& e) {
        throw DataError("checkpoint '" + meta_path + "': " + e.what());
    }
    return ck;
}

}  // namespace vith
