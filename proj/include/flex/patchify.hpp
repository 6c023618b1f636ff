#pragma once

// Image -> visual tokens: non-overlapping patch embedding with optional
// self-attention blocks (the patchifier-size ablation), differentiable token
// grid resizing, the 2-layer projection into the policy width, and the
// baseline concatenated scene representation.

#include <algorithm>
#include <vector>

#include "flex/nn.hpp"
#include "flex/worldsim.hpp"

namespace flex::patch {

struct TokenGrid {
    Tensor tokens;  // N x d_enc
    int rows = 0, cols = 0;
    int camera_id = -1;
    int timestep = -1;
};

struct PatchifierConfig {
    int patch_size = 8;
    int d_enc = 64;
    int depth = 0;  // 0 = linear embed only; 2/4 = ViT-style blocks
    int heads = 4;
    bool frozen_stage1 = true;
};

class Patchifier {
public:
    Patchifier(ParamSet& ps, const PatchifierConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.patch_size < 1) fail_config("Patchifier: patch_size ", cfg.patch_size, " < 1");
        if (cfg.depth < 0) fail_config("Patchifier: negative depth");
        const int in = cfg.patch_size * cfg.patch_size * 3;
        embed_ = Linear(ps, "patchify.embed", in, cfg.d_enc, rng);
        for (int i = 0; i < cfg.depth; ++i)
            blocks_.emplace_back(ps, "patchify.block" + std::to_string(i), cfg.d_enc, cfg.heads,
                                 rng);
    }

    const PatchifierConfig& config() const { return cfg_; }

    TokenGrid patchify(const world::Image& img, int camera_id, int timestep) const {
        const int p = cfg_.patch_size;
        if (img.height % p != 0 || img.width % p != 0)
            fail_config("patchify: image ", img.height, "x", img.width,
                        " not divisible by patch size ", p);
        const int rows = img.height / p, cols = img.width / p;
        const int n = rows * cols;
        Tensor flat = Tensor::zeros({n, p * p * 3});
        auto& d = flat.data();
        for (int pr = 0; pr < rows; ++pr)
            for (int pc = 0; pc < cols; ++pc) {
                float* dst = d.data() + static_cast<size_t>(pr * cols + pc) * p * p * 3;
                for (int r = 0; r < p; ++r)
                    for (int c = 0; c < p; ++c)
                        for (int ch = 0; ch < 3; ++ch)
                            *dst++ = img.at(pr * p + r, pc * p + c, ch);
            }
        Tensor tokens = embed_.forward(flat);
        if (!blocks_.empty()) {
            BoolMatrix all(n, n, true);
            for (const auto& b : blocks_) tokens = b.forward(tokens, all);
        }
        return TokenGrid{tokens, rows, cols, camera_id, timestep};
    }

private:
    PatchifierConfig cfg_;
    Linear embed_;
    std::vector<TransformerBlock> blocks_;
};

inline TokenGrid resize_tokens(const TokenGrid& grid, int target_rows, int target_cols) {
    if (target_rows < 1 || target_cols < 1)
        fail_config("resize_tokens: target ", target_rows, "x", target_cols);
    TokenGrid out;
    out.tokens = bilinear_resize_grid(grid.tokens, grid.rows, grid.cols, target_rows, target_cols);
    out.rows = target_rows;
    out.cols = target_cols;
    out.camera_id = grid.camera_id;
    out.timestep = grid.timestep;
    return out;
}

// The 2-layer projection into the policy width D_llm.
struct Projection {
    Mlp mlp;

    Projection() = default;
    Projection(ParamSet& ps, int d_enc, int d_llm, Rng& rng)
        : mlp(ps, "project", d_enc, 2 * d_enc, d_llm, rng) {}

    Tensor forward(const Tensor& tokens) const { return mlp.forward(tokens); }
};

// Baseline scene representation: resized grids, projected, concatenated in
// (timestep, camera) order. Row count is C*T*N' by construction.
inline Tensor baseline_scene(const std::vector<TokenGrid>& grids, const Projection& proj) {
    if (grids.empty()) fail_shape("baseline_scene: no grids");
    std::vector<const TokenGrid*> order;
    order.reserve(grids.size());
    const int64_t n0 = grids.front().tokens.shape()[0];
    for (const auto& g : grids) {
        if (g.tokens.shape()[0] != n0)
            fail_shape("baseline_scene: inconsistent per-grid token count ", g.tokens.shape()[0],
                       " vs ", n0);
        if (g.camera_id < 0 || g.timestep < 0)
            fail_shape("baseline_scene: grid missing (timestep, camera) tags");
        order.push_back(&g);
    }
    std::sort(order.begin(), order.end(), [](const TokenGrid* a, const TokenGrid* b) {
        if (a->timestep != b->timestep) return a->timestep < b->timestep;
        return a->camera_id < b->camera_id;
    });
    std::vector<Tensor> parts;
    parts.reserve(order.size());
    for (const auto* g : order) parts.push_back(g->tokens);
    return proj.forward(concat_rows(parts));
}

}  // namespace flex::patch
