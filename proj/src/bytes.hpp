#pragma once

// Little-endian byte packing and a bounds-checked read cursor, shared by the
// binary container readers/writers. Internal to src/.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vithash/errors.hpp"

namespace vith::bytes {

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(out, u);
}

struct Cursor {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    std::string what;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw DataError(what + ": truncated at byte " + std::to_string(pos));
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= std::uint16_t(buf[pos + i]) << (8 * i);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        std::uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
    void expect_magic(const char magic[4]) {
        need(4);
        if (std::memcmp(buf.data() + pos, magic, 4) != 0)
            throw DataError(what + ": bad magic, want \"" + std::string(magic, 4) + "\"");
        pos += 4;
    }
    void done() const {
        if (pos != buf.size())
            throw DataError(what + ": " + std::to_string(buf.size() - pos) +
                            " trailing bytes after payload");
    }
};

inline std::vector<std::uint8_t> slurp(const std::string& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(what + ": cannot open '" + path + "'");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    return buf;
}

inline void spill(const std::string& path, const std::vector<std::uint8_t>& buf,
                  const std::string& what) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(what + ": cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw DataError(what + ": write failed for '" + path + "'");
}

}  // namespace vith::bytes
