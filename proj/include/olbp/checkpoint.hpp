#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "olbp/common.hpp"
#include "olbp/init.hpp"
#include "olbp/tensor.hpp"

namespace olbp {

// Checkpoint file layout:
//   bytes 0..4   magic "OLBP1"
//   bytes 5..8   u32 little-endian manifest length L
//   bytes 9..9+L manifest JSON: {"entries":[{name,shape,offset}...],"meta":{...}}
//   then         payload: little-endian float32 runs, one per entry
// Optimizer state rides along as entries named "opt.momentum.<param>".

constexpr char kCheckpointMagic[5] = {'O', 'L', 'B', 'P', '1'};

struct CheckpointEntry {
    std::string name;
    Shape4 shape;
    std::vector<float> values;
};

struct CheckpointData {
    std::vector<CheckpointEntry> entries;
    nlohmann::json meta;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

namespace detail {

inline void put_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline void put_f32_le(std::ostream& out, const float* data, std::size_t n) {
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data), std::streamsize(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u;
            std::memcpy(&u, &data[i], 4);
            put_u32_le(out, u);
        }
    }
}

inline void get_f32_le(std::istream& in, float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(data), std::streamsize(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t u = get_u32_le(in);
            std::memcpy(&data[i], &u, 4);
        }
    }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
    nlohmann::json manifest;
    manifest["meta"] = ckpt.meta;
    std::int64_t offset = 0;
    for (const auto& e : ckpt.entries) {
        manifest["entries"].push_back({{"name", e.name},
                                       {"shape", {e.shape.n, e.shape.c, e.shape.h, e.shape.w}},
                                       {"offset", offset}});
        offset += std::int64_t(e.values.size()) * 4;
    }
    const std::string mtext = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 5);
    detail::put_u32_le(out, static_cast<std::uint32_t>(mtext.size()));
    out.write(mtext.data(), std::streamsize(mtext.size()));
    for (const auto& e : ckpt.entries) detail::put_f32_le(out, e.values.data(), e.values.size());
    if (!out) throw DataError("write failure on checkpoint: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kCheckpointMagic, 5) != 0)
        throw DataError("bad checkpoint magic in " + path);
    const std::uint32_t mlen = detail::get_u32_le(in);
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), mlen);
    if (!in) throw DataError("truncated checkpoint manifest in " + path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("unparseable checkpoint manifest in " + path + ": " + e.what());
    }
    CheckpointData ckpt;
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& j : manifest.value("entries", nlohmann::json::array())) {
        CheckpointEntry e;
        e.name = j.at("name").get<std::string>();
        const auto& s = j.at("shape");
        e.shape = {s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>(),
                   s.at(2).get<std::int64_t>(), s.at(3).get<std::int64_t>()};
        e.values.resize(static_cast<std::size_t>(e.shape.numel()));
        ckpt.entries.push_back(std::move(e));
    }
    for (auto& e : ckpt.entries) {
        detail::get_f32_le(in, e.values.data(), e.values.size());
        if (!in) throw DataError("truncated checkpoint payload in " + path + " at " + e.name);
    }
    return ckpt;
}

template <typename T>
CheckpointEntry tensor_to_entry(const std::string& name, const Tensor4<T>& t) {
    CheckpointEntry e;
    e.name = name;
    e.shape = t.shape();
    e.values.resize(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        e.values[std::size_t(i)] = static_cast<float>(t.data()[i]);
    return e;
}

template <typename T>
void entry_to_tensor(const CheckpointEntry& e, Tensor4<T>& t) {
    if (!(e.shape == t.shape()))
        throw DataError("checkpoint entry " + e.name + " has shape " + e.shape.str() +
                        ", expected " + t.shape().str());
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<T>(e.values[std::size_t(i)]);
}

}  // namespace olbp
