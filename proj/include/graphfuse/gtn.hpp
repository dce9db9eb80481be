#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "graphfuse/tensor.hpp"

namespace graphfuse {

// GTN binary tensor format:
//   "GTN1" | u32 ndim | ndim x u32 dims | row-major IEEE-754 f32 payload
// All integers little endian. Round-trips bit-exactly for f32 data.

namespace detail {

inline void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t read_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t read_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> gtn_encode(const Tensor<T>& t) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + 4 * t.ndim() + 4 * t.data.size());
    out.push_back('G');
    out.push_back('T');
    out.push_back('N');
    out.push_back('1');
    detail::append_u32le(out, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.dims) {
        if (d < 0 || d > 0xffffffffll) throw ShapeError("gtn: dim out of u32 range");
        detail::append_u32le(out, static_cast<std::uint32_t>(d));
    }
    for (auto x : t.data) {
        const float f = static_cast<float>(x);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::append_u32le(out, bits);
    }
    return out;
}

template <typename T>
TensorPtr<T> gtn_decode(const std::uint8_t* bytes, std::size_t size) {
    if (size < 8 || std::memcmp(bytes, "GTN1", 4) != 0) {
        throw DataError("gtn: bad magic or truncated header");
    }
    const std::uint32_t ndim = detail::read_u32le(bytes + 4);
    if (size < 8 + 4ull * ndim) throw DataError("gtn: truncated dims");
    Dims dims(ndim);
    std::int64_t n = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
        dims[k] = detail::read_u32le(bytes + 8 + 4 * k);
        n *= dims[k];
    }
    const std::size_t payload_off = 8 + 4ull * ndim;
    if (size != payload_off + 4ull * n) {
        throw DataError("gtn: payload size mismatch for dims " + dims_to_string(dims));
    }
    std::vector<T> data(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint32_t bits = detail::read_u32le(bytes + payload_off + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        data[i] = static_cast<T>(f);
    }
    return Tensor<T>::create(std::move(dims), std::move(data));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write: " + path);
}

template <typename T>
void save_gtn(const std::string& path, const Tensor<T>& t) {
    write_file_bytes(path, gtn_encode(t));
}

template <typename T>
TensorPtr<T> load_gtn(const std::string& path) {
    auto bytes = read_file_bytes(path);
    return gtn_decode<T>(bytes.data(), bytes.size());
}

// Named archive of byte blobs (checkpoints bundle GTN tensors plus a JSON
// manifest in one file):
//   "GTA1" | u32 count | count x (u32 name_len | name | u64 size | bytes)
// Entries are written sorted by name, keeping output deterministic.
class Archive {
public:
    std::map<std::string, std::vector<std::uint8_t>> entries;

    bool has(const std::string& name) const { return entries.count(name) > 0; }

    template <typename T>
    void put_tensor(const std::string& name, const Tensor<T>& t) {
        entries[name] = gtn_encode(t);
    }

    template <typename T>
    TensorPtr<T> get_tensor(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw DataError("archive: missing entry " + name);
        return gtn_decode<T>(it->second.data(), it->second.size());
    }

    void put_string(const std::string& name, const std::string& s) {
        entries[name] = std::vector<std::uint8_t>(s.begin(), s.end());
    }

    std::string get_string(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw DataError("archive: missing entry " + name);
        return std::string(it->second.begin(), it->second.end());
    }

    std::vector<std::uint8_t> encode() const {
        std::vector<std::uint8_t> out;
        out.push_back('G');
        out.push_back('T');
        out.push_back('A');
        out.push_back('1');
        detail::append_u32le(out, static_cast<std::uint32_t>(entries.size()));
        for (const auto& [name, blob] : entries) {
            detail::append_u32le(out, static_cast<std::uint32_t>(name.size()));
            out.insert(out.end(), name.begin(), name.end());
            detail::append_u64le(out, blob.size());
            out.insert(out.end(), blob.begin(), blob.end());
        }
        return out;
    }

    static Archive decode(const std::vector<std::uint8_t>& bytes) {
        if (bytes.size() < 8 || std::memcmp(bytes.data(), "GTA1", 4) != 0) {
            throw DataError("archive: bad magic");
        }
        Archive a;
        const std::uint32_t count = detail::read_u32le(bytes.data() + 4);
        std::size_t off = 8;
        for (std::uint32_t i = 0; i < count; ++i) {
            if (off + 4 > bytes.size()) throw DataError("archive: truncated entry header");
            const std::uint32_t name_len = detail::read_u32le(bytes.data() + off);
            off += 4;
            if (off + name_len + 8 > bytes.size()) throw DataError("archive: truncated entry");
            std::string name(bytes.begin() + off, bytes.begin() + off + name_len);
            off += name_len;
            const std::uint64_t size = detail::read_u64le(bytes.data() + off);
            off += 8;
            if (off + size > bytes.size()) throw DataError("archive: truncated blob " + name);
            a.entries[name] =
                std::vector<std::uint8_t>(bytes.begin() + off, bytes.begin() + off + size);
            off += size;
        }
        return a;
    }

    void save(const std::string& path) const { write_file_bytes(path, encode()); }

    static Archive load(const std::string& path) { return decode(read_file_bytes(path)); }
};

}  // namespace graphfuse
