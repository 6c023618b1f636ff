#pragma once

// FLEXDATA dataset files: magic, version, JSON config header, then
// length-prefixed binary clip records. Self-describing and seekable; the
// reader builds a record-offset index on open for random access.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flex/core.hpp"
#include "flex/worldsim.hpp"

namespace flex::data {

constexpr uint32_t kVersion = 1;

inline nlohmann::json config_json(const world::WorldConfig& cfg, uint64_t seed, int clips) {
    nlohmann::json j;
    j["cameras"] = cfg.cameras;
    j["timesteps"] = cfg.timesteps;
    j["horizon"] = cfg.horizon;
    j["height"] = cfg.height;
    j["width"] = cfg.width;
    j["stride"] = cfg.stride;
    j["future_dt"] = cfg.future_dt;
    j["probe_style"] = cfg.probe_style;
    j["seed"] = seed;
    j["clips"] = clips;
    nlohmann::json names = nlohmann::json::array();
    for (const auto& cam : world::camera_rig(cfg.cameras)) names.push_back(cam.name);
    j["camera_names"] = names;
    return j;
}

inline world::WorldConfig config_from_json(const nlohmann::json& j) {
    world::WorldConfig cfg;
    cfg.cameras = j.at("cameras").get<int>();
    cfg.timesteps = j.at("timesteps").get<int>();
    cfg.horizon = j.at("horizon").get<int>();
    cfg.height = j.at("height").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.stride = j.at("stride").get<int>();
    cfg.future_dt = j.at("future_dt").get<float>();
    cfg.probe_style = j.at("probe_style").get<bool>();
    return cfg;
}

namespace io_detail {

template <typename T>
void put(std::string& buf, T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof(T));
}

inline void put_floats(std::string& buf, const float* p, size_t n) {
    buf.append(reinterpret_cast<const char*>(p), n * sizeof(float));
}

template <typename T>
T take(const char*& p, const char* end, int record, const char* what) {
    if (p + sizeof(T) > end)
        throw IoError("dataset: truncated record " + std::to_string(record) + " while reading " +
                      what);
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
}

inline void take_floats(const char*& p, const char* end, float* out, size_t n, int record,
                        const char* what) {
    if (p + n * sizeof(float) > end)
        throw IoError("dataset: truncated record " + std::to_string(record) + " while reading " +
                      what);
    std::memcpy(out, p, n * sizeof(float));
    p += n * sizeof(float);
}

inline std::string encode_clip(const world::Clip& c) {
    std::string buf;
    put<uint64_t>(buf, c.clip_id);
    put<uint32_t>(buf, c.scenario);
    put<uint32_t>(buf, static_cast<uint32_t>(c.C));
    put<uint32_t>(buf, static_cast<uint32_t>(c.T));
    put<uint32_t>(buf, static_cast<uint32_t>(c.H));
    put<uint32_t>(buf, static_cast<uint32_t>(c.height));
    put<uint32_t>(buf, static_cast<uint32_t>(c.width));
    for (const auto& name : c.camera_ids) {
        put<uint32_t>(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
    }
    put_floats(buf, c.timestamps.data(), c.timestamps.size());
    for (const auto& img : c.images) put_floats(buf, img.px.data(), img.px.size());
    for (const auto& h : c.history) put_floats(buf, h.data(), 4);
    put_floats(buf, c.futures.data(), c.futures.size());
    return buf;
}

inline world::Clip decode_clip(const std::string& buf, int record) {
    const char* p = buf.data();
    const char* end = buf.data() + buf.size();
    world::Clip c;
    c.clip_id = take<uint64_t>(p, end, record, "clip id");
    c.scenario = take<uint32_t>(p, end, record, "scenario");
    c.C = static_cast<int>(take<uint32_t>(p, end, record, "camera count"));
    c.T = static_cast<int>(take<uint32_t>(p, end, record, "timestep count"));
    c.H = static_cast<int>(take<uint32_t>(p, end, record, "horizon"));
    c.height = static_cast<int>(take<uint32_t>(p, end, record, "height"));
    c.width = static_cast<int>(take<uint32_t>(p, end, record, "width"));
    if (c.C < 1 || c.T < 1 || c.H < 1 || c.height < 1 || c.width < 1)
        throw IoError("dataset: corrupt dimensions in record " + std::to_string(record));
    for (int i = 0; i < c.C; ++i) {
        const auto len = take<uint32_t>(p, end, record, "camera name length");
        if (p + len > end)
            throw IoError("dataset: truncated record " + std::to_string(record) +
                          " while reading camera name");
        c.camera_ids.emplace_back(p, len);
        p += len;
    }
    c.timestamps.resize(c.T);
    take_floats(p, end, c.timestamps.data(), c.T, record, "timestamps");
    const size_t px = static_cast<size_t>(c.height) * c.width * 3;
    c.images.assign(static_cast<size_t>(c.C) * c.T, world::Image(c.height, c.width));
    for (auto& img : c.images) take_floats(p, end, img.px.data(), px, record, "image");
    c.history.resize(c.T);
    for (auto& h : c.history) take_floats(p, end, h.data(), 4, record, "history");
    c.futures.resize(static_cast<size_t>(c.T) * c.H * 2);
    take_floats(p, end, c.futures.data(), c.futures.size(), record, "futures");
    if (p != end)
        throw IoError("dataset: trailing bytes in record " + std::to_string(record));
    return c;
}

}  // namespace io_detail

class DatasetWriter {
public:
    DatasetWriter(const std::string& path, const nlohmann::json& config, uint64_t expected)
        : path_(path), expected_(expected) {
        os_.open(path, std::ios::binary | std::ios::trunc);
        if (!os_) throw IoError("dataset: cannot open '" + path + "' for writing");
        os_.write("FLEXDATA", 8);
        const uint32_t version = kVersion;
        os_.write(reinterpret_cast<const char*>(&version), 4);
        header_ = config.dump();
        const auto hlen = static_cast<uint32_t>(header_.size());
        os_.write(reinterpret_cast<const char*>(&hlen), 4);
        os_.write(header_.data(), hlen);
        const uint64_t count = expected;
        os_.write(reinterpret_cast<const char*>(&count), 8);
    }

    void add(const world::Clip& clip) {
        const std::string buf = io_detail::encode_clip(clip);
        const uint64_t len = buf.size();
        os_.write(reinterpret_cast<const char*>(&len), 8);
        os_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!os_) throw IoError("dataset: short write to '" + path_ + "'");
        ++written_;
    }

    const std::string& header_json() const { return header_; }

    void finish() {
        if (written_ != expected_)
            throw IoError("dataset: wrote " + std::to_string(written_) + " of " +
                          std::to_string(expected_) + " promised records to '" + path_ + "'");
        os_.flush();
        if (!os_) throw IoError("dataset: short write to '" + path_ + "'");
        os_.close();
    }

private:
    std::string path_;
    std::string header_;
    std::ofstream os_;
    uint64_t expected_ = 0;
    uint64_t written_ = 0;
};

class DatasetReader {
public:
    explicit DatasetReader(const std::string& path) : path_(path) {
        is_.open(path, std::ios::binary);
        if (!is_) throw IoError("dataset: cannot open '" + path + "'");
        char magic[8];
        is_.read(magic, 8);
        if (!is_ || std::memcmp(magic, "FLEXDATA", 8) != 0)
            throw IoError("dataset '" + path + "': bad magic");
        uint32_t version = 0;
        is_.read(reinterpret_cast<char*>(&version), 4);
        if (!is_ || version != kVersion)
            throw IoError("dataset '" + path + "': unsupported version");
        uint32_t hlen = 0;
        is_.read(reinterpret_cast<char*>(&hlen), 4);
        header_.resize(hlen);
        is_.read(header_.data(), hlen);
        if (!is_) throw IoError("dataset '" + path + "': truncated header");
        uint64_t count = 0;
        is_.read(reinterpret_cast<char*>(&count), 8);
        if (!is_) throw IoError("dataset '" + path + "': truncated record count");
        // Index record offsets by walking the length prefixes.
        offsets_.reserve(count);
        lengths_.reserve(count);
        for (uint64_t i = 0; i < count; ++i) {
            uint64_t len = 0;
            is_.read(reinterpret_cast<char*>(&len), 8);
            if (!is_)
                throw IoError("dataset '" + path + "': truncated length prefix of record " +
                              std::to_string(i));
            offsets_.push_back(is_.tellg());
            lengths_.push_back(len);
            is_.seekg(static_cast<std::streamoff>(len), std::ios::cur);
            if (!is_.good())
                throw IoError("dataset '" + path + "': truncated record " + std::to_string(i));
        }
        // seekg past EOF only fails on the next read; verify the last record
        // is fully present.
        if (count > 0) {
            is_.clear();
            is_.seekg(0, std::ios::end);
            const auto size = static_cast<uint64_t>(is_.tellg());
            if (offsets_.back() + static_cast<std::streamoff>(lengths_.back()) >
                static_cast<std::streamoff>(size))
                throw IoError("dataset '" + path + "': truncated record " +
                              std::to_string(count - 1));
        }
        config_ = nlohmann::json::parse(header_);
    }

    size_t size() const { return offsets_.size(); }
    const std::string& header_json() const { return header_; }
    const nlohmann::json& config() const { return config_; }

    world::Clip read(size_t i) {
        if (i >= offsets_.size())
            throw IoError("dataset '" + path_ + "': record " + std::to_string(i) + " out of " +
                          std::to_string(offsets_.size()));
        is_.clear();
        is_.seekg(offsets_[i]);
        std::string buf(lengths_[i], '\0');
        is_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!is_)
            throw IoError("dataset '" + path_ + "': truncated record " + std::to_string(i));
        return io_detail::decode_clip(buf, static_cast<int>(i));
    }

    // Indices of the train or test split, by clip-id hash.
    std::vector<size_t> split_indices(world::Split want) {
        std::vector<size_t> out;
        for (size_t i = 0; i < size(); ++i) {
            is_.clear();
            is_.seekg(offsets_[i]);
            uint64_t clip_id = 0;
            is_.read(reinterpret_cast<char*>(&clip_id), 8);
            if (!is_)
                throw IoError("dataset '" + path_ + "': truncated record " + std::to_string(i));
            if (world::split_of(clip_id) == want) out.push_back(i);
        }
        return out;
    }

private:
    std::string path_;
    std::string header_;
    nlohmann::json config_;
    std::ifstream is_;
    std::vector<std::streamoff> offsets_;
    std::vector<uint64_t> lengths_;
};

inline void write_dataset(const std::string& path, const world::WorldConfig& cfg, uint64_t seed,
                          const std::vector<world::Clip>& clips) {
    DatasetWriter w(path, config_json(cfg, seed, static_cast<int>(clips.size())),
                    clips.size());
    for (const auto& c : clips) w.add(c);
    w.finish();
}

}  // namespace flex::data
