#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "flex/nn.hpp"
#include "flex/optim.hpp"

namespace flex {

// Parameter checkpoint container.
//   magic "FLEXCKPT" | version u32 | parameter count u32
//   per parameter: name length u32 | UTF-8 name | rank u32 | extents u64[] |
//                  raw little-endian f32 payload
// An "FLEXOPTS" sibling with f64 payloads carries optimizer moments so resume
// is bit-exact; its layout mirrors the parameter container.

namespace ckpt_detail {

constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint '" + path + "': truncated while reading " + what);
    return v;
}

inline void write_magic(std::ofstream& os, const char* magic) { os.write(magic, 8); }

inline void check_magic(std::ifstream& is, const std::string& path, const char* magic) {
    char buf[8];
    is.read(buf, 8);
    if (!is || std::memcmp(buf, magic, 8) != 0)
        throw IoError("checkpoint '" + path + "': bad magic (expected " + magic + ")");
}

}  // namespace ckpt_detail

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    ckpt_detail::write_magic(os, "FLEXCKPT");
    ckpt_detail::write_pod<uint32_t>(os, ckpt_detail::kVersion);
    ckpt_detail::write_pod<uint32_t>(os, static_cast<uint32_t>(params.all().size()));
    for (const auto& p : params.all()) {
        ckpt_detail::write_pod<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const Shape& s = p.value.shape();
        ckpt_detail::write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
        for (int e : s) ckpt_detail::write_pod<uint64_t>(os, static_cast<uint64_t>(e));
        os.write(reinterpret_cast<const char*>(p.value.data().data()),
                 static_cast<std::streamsize>(p.value.data().size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint: short write to '" + path + "'");
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
    ckpt_detail::check_magic(is, path, "FLEXCKPT");
    const auto version = ckpt_detail::read_pod<uint32_t>(is, path, "version");
    if (version != ckpt_detail::kVersion)
        throw IoError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
    const auto count = ckpt_detail::read_pod<uint32_t>(is, path, "parameter count");
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const auto name_len = ckpt_detail::read_pod<uint32_t>(is, path, "name length");
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        if (!is) throw IoError("checkpoint '" + path + "': truncated name at entry " +
                               std::to_string(i));
        const auto rank = ckpt_detail::read_pod<uint32_t>(is, path, "rank");
        int64_t n = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            const auto ext = ckpt_detail::read_pod<uint64_t>(is, path, "extent");
            e.shape.push_back(static_cast<int>(ext));
            n *= static_cast<int64_t>(ext);
        }
        e.data.resize(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw IoError("checkpoint '" + path + "': truncated payload at entry " +
                               std::to_string(i) + " ('" + e.name + "')");
        entries.push_back(std::move(e));
    }
    return entries;
}

// Strict load: every registered parameter must be present with its exact shape.
inline void load_checkpoint(const std::string& path, ParamSet& params) {
    auto entries = read_checkpoint(path);
    std::map<std::string, CheckpointEntry*> by_name;
    for (auto& e : entries) by_name[e.name] = &e;
    for (auto& p : params.all()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw IoError("checkpoint '" + path + "': missing parameter '" + p.name + "'");
        if (it->second->shape != p.value.shape())
            throw IoError("checkpoint '" + path + "': shape mismatch for '" + p.name + "': file " +
                          shape_str(it->second->shape) + " vs model " + shape_str(p.value.shape()));
        p.value.data() = it->second->data;
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw IoError("checkpoint '" + path + "': unexpected extra parameter '" +
                      by_name.begin()->first + "'");
}

inline void save_optimizer_state(const std::string& path, const ParamSet& params, AdamW& opt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("optimizer state: cannot open '" + path + "' for writing");
    ckpt_detail::write_magic(os, "FLEXOPTS");
    ckpt_detail::write_pod<uint32_t>(os, ckpt_detail::kVersion);
    ckpt_detail::write_pod<uint64_t>(os, static_cast<uint64_t>(opt.step_count()));
    ckpt_detail::write_pod<uint32_t>(os, static_cast<uint32_t>(params.all().size()));
    auto& slots = opt.state();
    size_t idx = 0;
    for (const auto& p : params.all()) {
        const auto& slot = slots[idx++];
        ckpt_detail::write_pod<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        ckpt_detail::write_pod<uint64_t>(os, static_cast<uint64_t>(slot.m.size()));
        os.write(reinterpret_cast<const char*>(slot.m.data()),
                 static_cast<std::streamsize>(slot.m.size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(slot.v.data()),
                 static_cast<std::streamsize>(slot.v.size() * sizeof(double)));
    }
    if (!os) throw IoError("optimizer state: short write to '" + path + "'");
}

inline void load_optimizer_state(const std::string& path, const ParamSet& params, AdamW& opt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("optimizer state: cannot open '" + path + "'");
    ckpt_detail::check_magic(is, path, "FLEXOPTS");
    const auto version = ckpt_detail::read_pod<uint32_t>(is, path, "version");
    if (version != ckpt_detail::kVersion)
        throw IoError("optimizer state '" + path + "': unsupported version " +
                      std::to_string(version));
    const auto step = ckpt_detail::read_pod<uint64_t>(is, path, "step");
    const auto count = ckpt_detail::read_pod<uint32_t>(is, path, "entry count");
    if (count != params.all().size())
        throw IoError("optimizer state '" + path + "': entry count mismatch");
    auto& slots = opt.state();
    size_t idx = 0;
    for (const auto& p : params.all()) {
        auto& slot = slots[idx++];
        const auto name_len = ckpt_detail::read_pod<uint32_t>(is, path, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is || name != p.name)
            throw IoError("optimizer state '" + path + "': parameter order mismatch at '" +
                          p.name + "'");
        const auto n = ckpt_detail::read_pod<uint64_t>(is, path, "moment length");
        if (n != slot.m.size())
            throw IoError("optimizer state '" + path + "': moment size mismatch for '" + p.name +
                          "'");
        is.read(reinterpret_cast<char*>(slot.m.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        is.read(reinterpret_cast<char*>(slot.v.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw IoError("optimizer state '" + path + "': truncated moments for '" + p.name +
                               "'");
    }
    opt.set_step_count(static_cast<int64_t>(step));
}

}  // namespace flex
