#include "vithash/serialize.hpp"

#include "bytes.hpp"

namespace vith {

using namespace bytes;

namespace {
constexpr std::uint32_t kFormatVersion = 1;
}

void save_weights(const std::string& path, const WeightMap& weights) {
    std::vector<std::uint8_t> buf;
    put_bytes(buf, "VTSW", 4);
    put_u32(buf, kFormatVersion);
    put_u32(buf, std::uint32_t(weights.size()));
    for (const auto& [name, t] : weights) {
        if (name.size() > 0xffff) throw ContractError("tensor name too long: " + name);
        if (t.shape.size() > 0xff) throw ContractError("tensor rank too large: " + name);
        put_u16(buf, std::uint16_t(name.size()));
        put_bytes(buf, name.data(), name.size());
        buf.push_back(std::uint8_t(t.shape.size()));
        std::size_t n = 1;
        for (auto d : t.shape) {
            put_u32(buf, std::uint32_t(d));
            n *= d;
        }
        if (n != t.data.size())
            throw ContractError("tensor '" + name + "': shape/data size mismatch");
        for (float v : t.data) put_f32(buf, v);
    }
    spill(path, buf, "weight file");
}

WeightMap load_weights(const std::string& path) {
    auto buf = slurp(path, "weight file");
    Cursor c{buf, 0, "weight file '" + path + "'"};
    c.expect_magic("VTSW");
    const auto version = c.u32();
    if (version != kFormatVersion)
        throw DataError(c.what + ": unsupported version " + std::to_string(version));
    const auto count = c.u32();
    WeightMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = c.u16();
        std::string name = c.str(name_len);
        const std::uint8_t rank = c.u8();
        NamedTensor t;
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            t.shape.push_back(c.u32());
            n *= t.shape.back();
        }
        t.data.resize(n);
        for (std::size_t j = 0; j < n; ++j) t.data[j] = c.f32();
        if (!out.emplace(std::move(name), std::move(t)).second)
            throw DataError(c.what + ": duplicate tensor name");
    }
    c.done();
    return out;
}

void save_code_set(const std::string& path, const BinaryCodeSet& codes) {
    codes.validate();
    std::vector<std::uint8_t> buf;
    put_bytes(buf, "VTSC", 4);
    put_u32(buf, kFormatVersion);
    put_u64(buf, codes.size());
    put_u32(buf, std::uint32_t(codes.bits));
    for (std::size_t i = 0; i < codes.size(); ++i) {
        put_u64(buf, codes.ids[i]);
        if (codes.labels[i].size() > 0xffff) throw ContractError("label set too large");
        put_u16(buf, std::uint16_t(codes.labels[i].size()));
        for (auto l : codes.labels[i]) put_u32(buf, l);
        for (std::size_t w = 0; w < codes.words_per_code(); ++w)
            put_u64(buf, codes.code(i)[w]);
    }
    spill(path, buf, "code-set file");
}

BinaryCodeSet load_code_set(const std::string& path) {
    auto buf = slurp(path, "code-set file");
    Cursor c{buf, 0, "code-set file '" + path + "'"};
    c.expect_magic("VTSC");
    const auto version = c.u32();
    if (version != kFormatVersion)
        throw DataError(c.what + ": unsupported version " + std::to_string(version));
    const auto m = c.u64();
    const auto bits = c.u32();
    if (bits == 0) throw DataError(c.what + ": zero code width");
    BinaryCodeSet codes;
    codes.bits = bits;
    std::vector<std::uint64_t> item(codes.words_per_code());
    for (std::uint64_t i = 0; i < m; ++i) {
        const auto id = c.u64();
        const auto label_count = c.u16();
        std::vector<std::uint32_t> labels(label_count);
        for (auto& l : labels) l = c.u32();
        for (auto& w : item) w = c.u64();
        codes.push(id, std::move(labels), item);
    }
    c.done();
    try {
        codes.validate();
    } catch (const ContractError& e) {
        // in-memory invariants hold for code we built; a failure here means
        // the file content is bad, so surface it as a data problem
        throw DataError(c.what + ": " + e.what());
    }
    return codes;
}

}  // namespace vith
