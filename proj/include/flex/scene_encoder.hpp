#pragma once

// Scene encoder: compresses all C x T token grids into exactly K learned scene
// tokens. Four attention variants share one weight set so ablations compare
// wiring, not parameter count:
//   joint_self      - scene tokens + all image tokens in one self-attention
//                     sequence (the main configuration)
//   joint_cross     - scene tokens cross-attend to the frozen concatenation of
//                     all image tokens; image tokens are never updated
//   per_image_self  - each image gets K/(C*T) scene tokens encoded with that
//                     image alone via self-attention
//   per_image_cross - ditto, but the slice cross-attends to its image

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "flex/core.hpp"
#include "flex/nn.hpp"
#include "flex/patchify.hpp"
#include "flex/tensor.hpp"

namespace flex::enc {

// ---------------------------------------------------------------------------
// Positional embeddings: sinusoidal timestep features through a learned
// two-layer map, plus a learned per-camera table.
// ---------------------------------------------------------------------------

constexpr int kTimeFrequencies = 8;  // 2 features (sin, cos) per frequency

inline std::vector<float> time_base_features(int timestep) {
    std::vector<float> feats(2 * kTimeFrequencies);
    for (int i = 0; i < kTimeFrequencies; ++i) {
        const double rate = std::pow(10000.0, -double(i) / double(kTimeFrequencies));
        feats[2 * i] = static_cast<float>(std::sin(timestep * rate));
        feats[2 * i + 1] = static_cast<float>(std::cos(timestep * rate));
    }
    return feats;
}

struct PositionalEmbeddings {
    Mlp time_map;                    // 2*kTimeFrequencies -> d_enc -> d_enc
    Parameter* cam_table = nullptr;  // num_cameras x d_enc
    int num_cameras = 0;
    int d_enc = 0;

    PositionalEmbeddings() = default;
    PositionalEmbeddings(ParamSet& ps, const std::string& name, int cameras, int width, Rng& rng)
        : time_map(ps, name + ".time", 2 * kTimeFrequencies, width, width, rng),
          num_cameras(cameras),
          d_enc(width) {
        if (cameras <= 0) fail_config("positional embeddings need at least one camera, got ", cameras);
        cam_table = ps.add(name + ".cam", init_uniform({cameras, width}, width, rng));
    }

    // 1 x d_enc embedding of an integer timestep.
    Tensor time_embed(int timestep) const {
        if (timestep < 0) fail_config("negative timestep ", timestep);
        return time_map.forward(Tensor::from({1, 2 * kTimeFrequencies}, time_base_features(timestep)));
    }

    // 1 x d_enc embedding of a camera id.
    Tensor cam_embed(int camera_id) const {
        if (camera_id < 0 || camera_id >= num_cameras)
            fail_config("camera id ", camera_id, " outside configured range [0, ", num_cameras, ")");
        return gather_rows(cam_table->value, {camera_id});
    }
};

// tokens += time_embed(t) + cam_embed(c), broadcast over every row of the grid.
inline patch::TokenGrid add_positional(const patch::TokenGrid& grid, const PositionalEmbeddings& pe) {
    if (grid.timestep < 0) fail_config("add_positional: grid has no timestep tag");
    const int d = pe.d_enc;
    Tensor shifted = add_row(add_row(grid.tokens, reshape(pe.time_embed(grid.timestep), {d})),
                             reshape(pe.cam_embed(grid.camera_id), {d}));
    patch::TokenGrid out = grid;
    out.tokens = shifted;
    return out;
}

// ---------------------------------------------------------------------------
// Encoder configuration.
// ---------------------------------------------------------------------------

enum class Variant { joint_self, joint_cross, per_image_self, per_image_cross };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::joint_self: return "joint_self";
        case Variant::joint_cross: return "joint_cross";
        case Variant::per_image_self: return "per_image_self";
        case Variant::per_image_cross: return "per_image_cross";
    }
    fail_config("unknown attention variant");
}

inline Variant variant_from_name(const std::string& name) {
    if (name == "joint_self") return Variant::joint_self;
    if (name == "joint_cross") return Variant::joint_cross;
    if (name == "per_image_self") return Variant::per_image_self;
    if (name == "per_image_cross") return Variant::per_image_cross;
    fail_config("unknown attention variant '", name, "'");
}

struct EncoderConfig {
    int scene_tokens = 90;  // K
    int layers = 4;         // L
    int heads = 4;
    int d_enc = 64;
    Variant variant = Variant::joint_self;

    void validate() const {
        if (scene_tokens <= 0) fail_config("scene_tokens must be positive, got ", scene_tokens);
        if (layers <= 0) fail_config("encoder layers must be positive, got ", layers);
        if (heads <= 0 || d_enc % heads != 0)
            fail_config("d_enc ", d_enc, " must be a positive multiple of heads ", heads);
    }
};

// ---------------------------------------------------------------------------
// Recorded scene->image attention (final layer, joint_self only).
// ---------------------------------------------------------------------------

struct SceneAttention {
    int heads = 0;
    int scene_tokens = 0;  // K
    int cameras = 0;       // C
    int timesteps = 0;     // T
    int grid_rows = 0;     // patch rows per image
    int grid_cols = 0;     // patch cols per image
    std::vector<float> weights;  // heads * K * (C*T*grid_rows*grid_cols)

    int image_tokens() const { return cameras * timesteps * grid_rows * grid_cols; }
    int tokens_per_image() const { return grid_rows * grid_cols; }

    float at(int head, int scene_row, int key) const {
        return weights[(size_t(head) * scene_tokens + scene_row) * image_tokens() + key];
    }

    // Decode a flat key index into (camera, timestep, patch row, patch col).
    // Keys follow the encoder's (t, c) image order, row-major within an image.
    void decode_key(int key, int* camera, int* timestep, int* prow, int* pcol) const {
        const int per = tokens_per_image();
        const int image = key / per;
        const int within = key % per;
        *timestep = image / cameras;
        *camera = image % cameras;
        *prow = within / grid_cols;
        *pcol = within % grid_cols;
    }
};

// ---------------------------------------------------------------------------
// The encoder.
// ---------------------------------------------------------------------------

class SceneEncoder {
public:
    SceneEncoder(ParamSet& ps, const EncoderConfig& cfg, int num_cameras, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        pe_ = PositionalEmbeddings(ps, "scene.pe", num_cameras, cfg_.d_enc, rng);
        scene_init_ = ps.add("scene.init", init_uniform({cfg_.scene_tokens, cfg_.d_enc}, cfg_.d_enc, rng));
        blocks_.reserve(cfg_.layers);
        for (int i = 0; i < cfg_.layers; ++i)
            blocks_.emplace_back(ps, "scene.block" + std::to_string(i), cfg_.d_enc, cfg_.heads, rng);
    }

    const EncoderConfig& config() const { return cfg_; }
    const PositionalEmbeddings& positional() const { return pe_; }
    Parameter* scene_init() const { return scene_init_; }

    // Joint self-attention encoding: prepend the learned scene
    // tokens to every image token, run L pre-norm blocks with an all-allow
    // mask, return only the first K rows.
    Tensor encode(const std::vector<patch::TokenGrid>& grids, AttnProbs* record = nullptr) const {
        if (cfg_.variant != Variant::joint_self)
            fail_config("encode() requires the joint_self variant, configured ",
                        variant_name(cfg_.variant));
        return encode_joint_self(grids, record);
    }

    // Variant dispatch used by ablations; all four emit exactly K rows.
    Tensor encode_variant(const std::vector<patch::TokenGrid>& grids) const {
        switch (cfg_.variant) {
            case Variant::joint_self: return encode_joint_self(grids, nullptr);
            case Variant::joint_cross: return encode_joint_cross(grids);
            case Variant::per_image_self: return encode_per_image(grids, /*cross=*/false);
            case Variant::per_image_cross: return encode_per_image(grids, /*cross=*/true);
        }
        fail_config("unknown attention variant");
    }

    // Final-layer attention from scene-token queries to image-token keys.
    SceneAttention attention_record(const std::vector<patch::TokenGrid>& grids) const {
        if (cfg_.variant != Variant::joint_self)
            fail_config("attention_record requires the joint_self variant (got ",
                        variant_name(cfg_.variant), "): other variants have no joint ",
                        "scene-to-image attention rows in a shared sequence");
        AttnProbs probs;
        NoGradGuard guard;
        encode_joint_self(grids, &probs);

        const std::vector<const patch::TokenGrid*> order = image_order(grids);
        const int K = cfg_.scene_tokens;
        const int per = order.front()->rows * order.front()->cols;
        const int M = static_cast<int>(order.size()) * per;

        SceneAttention rec;
        rec.heads = cfg_.heads;
        rec.scene_tokens = K;
        rec.timesteps = order.back()->timestep + 1;
        rec.cameras = static_cast<int>(order.size()) / rec.timesteps;
        rec.grid_rows = order.front()->rows;
        rec.grid_cols = order.front()->cols;
        rec.weights.resize(size_t(cfg_.heads) * K * M);
        for (int h = 0; h < cfg_.heads; ++h)
            for (int q = 0; q < K; ++q)
                for (int m = 0; m < M; ++m)
                    rec.weights[(size_t(h) * K + q) * M + m] = probs.at(h, q, K + m);
        return rec;
    }

private:
    // Validates tags and returns grids sorted by (timestep, camera); requires
    // a complete C x T set with consistent patch-grid shapes.
    std::vector<const patch::TokenGrid*> image_order(const std::vector<patch::TokenGrid>& grids) const {
        if (grids.empty()) fail_shape("scene encoder: no token grids supplied");
        std::vector<const patch::TokenGrid*> order;
        order.reserve(grids.size());
        int max_t = -1, max_c = -1;
        for (const auto& g : grids) {
            if (g.timestep < 0) fail_config("scene encoder: grid missing timestep tag");
            if (g.camera_id < 0 || g.camera_id >= pe_.num_cameras)
                fail_config("camera id ", g.camera_id, " outside configured range [0, ",
                            pe_.num_cameras, ")");
            if (g.rows != grids.front().rows || g.cols != grids.front().cols)
                fail_shape("scene encoder: mixed patch-grid shapes ", g.rows, "x", g.cols, " vs ",
                           grids.front().rows, "x", grids.front().cols);
            max_t = std::max(max_t, g.timestep);
            max_c = std::max(max_c, g.camera_id);
            order.push_back(&g);
        }
        const int T = max_t + 1, C = max_c + 1;
        if (static_cast<int>(grids.size()) != T * C)
            fail_shape("scene encoder: expected a full ", C, "x", T, " camera-by-timestep grid set, got ",
                       grids.size(), " grids");
        std::sort(order.begin(), order.end(), [](const patch::TokenGrid* a, const patch::TokenGrid* b) {
            return std::tie(a->timestep, a->camera_id) < std::tie(b->timestep, b->camera_id);
        });
        for (size_t i = 1; i < order.size(); ++i)
            if (std::tie(order[i - 1]->timestep, order[i - 1]->camera_id) ==
                std::tie(order[i]->timestep, order[i]->camera_id))
                fail_shape("scene encoder: duplicate grid for timestep ", order[i]->timestep,
                           " camera ", order[i]->camera_id);
        if (cfg_.scene_tokens % T != 0)
            fail_config("scene_tokens ", cfg_.scene_tokens, " not divisible by ", T, " timesteps");
        return order;
    }

    Tensor positional_tokens(const patch::TokenGrid& grid) const {
        return add_positional(grid, pe_).tokens;
    }

    Tensor encode_joint_self(const std::vector<patch::TokenGrid>& grids, AttnProbs* record) const {
        const auto order = image_order(grids);
        std::vector<Tensor> parts;
        parts.reserve(order.size() + 1);
        parts.push_back(scene_init_->value);
        for (const auto* g : order) parts.push_back(positional_tokens(*g));
        Tensor x = concat_rows(parts);
        const int total = static_cast<int>(x.shape()[0]);
        const BoolMatrix allow(total, total, true);
        for (int i = 0; i < cfg_.layers; ++i)
            x = blocks_[i].forward(x, allow, i + 1 == cfg_.layers ? record : nullptr);
        return slice_rows(x, 0, cfg_.scene_tokens);
    }

    Tensor encode_joint_cross(const std::vector<patch::TokenGrid>& grids) const {
        const auto order = image_order(grids);
        std::vector<Tensor> parts;
        parts.reserve(order.size());
        for (const auto* g : order) parts.push_back(positional_tokens(*g));
        Tensor context = concat_rows(parts);  // built once; never updated
        Tensor s = scene_init_->value;
        const BoolMatrix allow(cfg_.scene_tokens, static_cast<int>(context.shape()[0]), true);
        for (const auto& block : blocks_) s = block.forward_cross(s, context, allow);
        return s;
    }

    Tensor encode_per_image(const std::vector<patch::TokenGrid>& grids, bool cross) const {
        const auto order = image_order(grids);
        const int images = static_cast<int>(order.size());
        if (cfg_.scene_tokens % images != 0)
            fail_config("scene_tokens ", cfg_.scene_tokens, " not divisible by ", images,
                        " images (per-image variants)");
        const int per = cfg_.scene_tokens / images;
        std::vector<Tensor> outputs;
        outputs.reserve(images);
        for (int i = 0; i < images; ++i) {
            Tensor slice = slice_rows(scene_init_->value, i * per, per);
            Tensor tokens = positional_tokens(*order[i]);
            if (cross) {
                Tensor s = slice;
                const BoolMatrix allow(per, static_cast<int>(tokens.shape()[0]), true);
                for (const auto& block : blocks_) s = block.forward_cross(s, tokens, allow);
                outputs.push_back(s);
            } else {
                Tensor x = concat_rows({slice, tokens});
                const int total = static_cast<int>(x.shape()[0]);
                const BoolMatrix allow(total, total, true);
                for (const auto& block : blocks_) x = block.forward(x, allow);
                outputs.push_back(slice_rows(x, 0, per));
            }
        }
        return concat_rows(outputs);
    }

    EncoderConfig cfg_;
    PositionalEmbeddings pe_;
    Parameter* scene_init_ = nullptr;
    std::vector<TransformerBlock> blocks_;
};

// ---------------------------------------------------------------------------
// Attention dump file: magic "FLEXATTN", shape header, raw f32 weights.
// ---------------------------------------------------------------------------

namespace attn_io {

constexpr char kMagic[8] = {'F', 'L', 'E', 'X', 'A', 'T', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw IoError("attention dump: truncated while reading " + what);
    return v;
}

}  // namespace attn_io

inline void save_attention(const std::string& path, const SceneAttention& rec) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(attn_io::kMagic, sizeof attn_io::kMagic);
    attn_io::write_u32(os, attn_io::kVersion);
    attn_io::write_u32(os, static_cast<std::uint32_t>(rec.heads));
    attn_io::write_u32(os, static_cast<std::uint32_t>(rec.scene_tokens));
    attn_io::write_u32(os, static_cast<std::uint32_t>(rec.cameras));
    attn_io::write_u32(os, static_cast<std::uint32_t>(rec.timesteps));
    attn_io::write_u32(os, static_cast<std::uint32_t>(rec.grid_rows));
    attn_io::write_u32(os, static_cast<std::uint32_t>(rec.grid_cols));
    os.write(reinterpret_cast<const char*>(rec.weights.data()),
             static_cast<std::streamsize>(rec.weights.size() * sizeof(float)));
    if (!os) throw IoError("failed while writing attention dump '" + path + "'");
}

inline SceneAttention load_attention(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open attention dump '" + path + "'");
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, attn_io::kMagic, sizeof magic) != 0)
        throw IoError("'" + path + "' is not an attention dump (bad magic)");
    const std::uint32_t version = attn_io::read_u32(is, "version");
    if (version != attn_io::kVersion)
        throw IoError("attention dump version " + std::to_string(version) + " unsupported");
    SceneAttention rec;
    rec.heads = static_cast<int>(attn_io::read_u32(is, "heads"));
    rec.scene_tokens = static_cast<int>(attn_io::read_u32(is, "scene token count"));
    rec.cameras = static_cast<int>(attn_io::read_u32(is, "camera count"));
    rec.timesteps = static_cast<int>(attn_io::read_u32(is, "timestep count"));
    rec.grid_rows = static_cast<int>(attn_io::read_u32(is, "grid rows"));
    rec.grid_cols = static_cast<int>(attn_io::read_u32(is, "grid cols"));
    const size_t count = size_t(rec.heads) * rec.scene_tokens * rec.image_tokens();
    rec.weights.resize(count);
    if (!is.read(reinterpret_cast<char*>(rec.weights.data()),
                 static_cast<std::streamsize>(count * sizeof(float))))
        throw IoError("attention dump: truncated while reading weights");
    return rec;
}

}  // namespace flex::enc
