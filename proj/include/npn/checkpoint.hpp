#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "npn/adam.hpp"
#include "npn/param.hpp"
#include "npn/tensor.hpp"

namespace npn {

// Checkpoint layout (all integers and doubles little-endian):
//   "NPNCKPT"  7 bytes magic
//   u32        format version (1)
//   u64        entry count
//   entries:   u32 name length, name bytes, u32 rank, i64 dims..., f64 data...
// Optimizer state rides along as entries named "adam/m/<p>", "adam/v/<p>",
// "adam/t", "adam/lr".

namespace detail {

static_assert(sizeof(double) == 8, "checkpoint format requires 64-bit doubles");

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    if constexpr (std::endian::native == std::endian::big) {
        uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xff) << (8 * (7 - i));
        v = r;
    }
    os.write(reinterpret_cast<const char*>(&v), 8);
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}
inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}
inline double get_f64(std::istream& is) {
    uint64_t v = get_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace detail

constexpr char kCheckpointMagic[] = "NPNCKPT";
constexpr uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic, 7);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u64(os, entries.size());
    for (const auto& [name, t] : entries) {
        detail::put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) detail::put_u64(os, static_cast<uint64_t>(d));
        for (double v : t.data) detail::put_f64(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

inline std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[7];
    is.read(magic, 7);
    if (!is || std::memcmp(magic, kCheckpointMagic, 7) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' is not an NPNCKPT file");
    uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in '" + path + "'");
    uint64_t count = detail::get_u64(is);
    std::map<std::string, Tensor> entries;
    for (uint64_t e = 0; e < count; ++e) {
        uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rank = detail::get_u32(is);
        std::vector<int> shape(rank);
        long long n = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            shape[i] = static_cast<int>(detail::get_u64(is));
            n *= shape[i];
        }
        Tensor t = Tensor::zeros(shape);
        for (long long i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = detail::get_f64(is);
        if (!is) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
        entries.emplace(std::move(name), std::move(t));
    }
    return entries;
}

/// Save parameter values (and optionally optimizer state) for a store.
inline void save_params(const std::string& path, const ParamStore& store, const AdamState* adam = nullptr) {
    std::map<std::string, Tensor> entries;
    for (const Param* p : store.all()) entries.emplace(p->name, p->value);
    if (adam) {
        entries.emplace("adam/t", Tensor::scalar(static_cast<double>(adam->t)));
        entries.emplace("adam/lr", Tensor::scalar(adam->lr));
        for (const auto& [name, t] : adam->m) entries.emplace("adam/m/" + name, t);
        for (const auto& [name, t] : adam->v) entries.emplace("adam/v/" + name, t);
    }
    write_checkpoint(path, entries);
}

/// Load values into an existing store (shapes must match). Returns optimizer
/// state if the file carries one.
inline AdamState load_params(const std::string& path, ParamStore& store, bool* has_adam = nullptr) {
    auto entries = read_checkpoint(path);
    for (Param* p : store.all()) {
        auto it = entries.find(p->name);
        if (it == entries.end()) throw std::runtime_error("checkpoint: '" + path + "' missing parameter '" + p->name + "'");
        if (!it->second.same_shape(p->value))
            throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "': file " +
                                     shape_str(it->second.shape) + " vs model " + shape_str(p->value.shape));
        p->value = it->second;
    }
    AdamState adam;
    bool present = entries.count("adam/t") != 0;
    if (present) {
        adam.t = static_cast<long long>(entries.at("adam/t")[0]);
        adam.lr = entries.at("adam/lr")[0];
        for (auto& [name, t] : entries) {
            if (name.rfind("adam/m/", 0) == 0) adam.m.emplace(name.substr(7), t);
            else if (name.rfind("adam/v/", 0) == 0) adam.v.emplace(name.substr(7), t);
        }
    }
    if (has_adam) *has_adam = present;
    return adam;
}

}  // namespace npn
