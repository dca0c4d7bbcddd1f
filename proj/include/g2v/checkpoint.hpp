#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "g2v/params.hpp"

namespace g2v::num {

// Weight checkpoint layout, little-endian throughout:
//   magic "G2VW", format version u16, then one record per parameter:
//   (name length u16, UTF-8 name, rank u8, dims as u32s, raw f32 payload).
// Records run to end of file. Write then read is bit-exact for f32 stores.
inline constexpr uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}
inline float get_f32(std::istream& is) {
    uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open checkpoint for writing: ", path);
    os.write("G2VW", 4);
    detail::put_u16(os, kCheckpointVersion);
    for (const auto& p : store.all()) {
        require(p.name.size() <= 0xffff, "parameter name too long: ", p.name);
        detail::put_u16(os, static_cast<uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        require(p.value.rank() <= 0xff, "parameter rank too large: ", p.name);
        os.put(static_cast<char>(p.value.rank()));
        for (int d : p.value.shape) detail::put_u32(os, static_cast<uint32_t>(d));
        for (T v : p.value.data) detail::put_f32(os, static_cast<float>(v));
    }
    require(os.good(), "I/O failure while writing checkpoint: ", path);
}

// Loads records into the store. Parameters are created if absent; existing
// ones must match shapes exactly.
template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open checkpoint: ", path);
    char magic[4];
    is.read(magic, 4);
    require(is.good() && std::memcmp(magic, "G2VW", 4) == 0,
            "not a weight checkpoint (bad magic): ", path);
    uint16_t version = detail::get_u16(is);
    require(version == kCheckpointVersion, "unsupported checkpoint version ", version,
            " in ", path);
    while (true) {
        int peek = is.peek();
        if (peek == std::char_traits<char>::eof()) break;
        uint16_t name_len = detail::get_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        int rank = is.get();
        require(rank >= 0, "truncated checkpoint record in ", path);
        Shape shape(static_cast<size_t>(rank));
        for (int i = 0; i < rank; ++i) shape[static_cast<size_t>(i)] = static_cast<int>(detail::get_u32(is));
        Tensor<T> t(shape);
        for (auto& v : t.data) v = static_cast<T>(detail::get_f32(is));
        require(is.good(), "truncated checkpoint payload for ", name, " in ", path);
        if (store.contains(name)) {
            Param<T>& p = store.at(name);
            require(same_shape(p.value.shape, shape), "checkpoint shape ", shape_str(shape),
                    " does not match parameter ", name, " ", shape_str(p.value.shape));
            p.value = std::move(t);
        } else {
            store.create(name, shape).value = std::move(t);
        }
    }
}

}  // namespace g2v::num
