#pragma once

// Post-hoc probes over recorded scene-token attention: per-token maximal
// responses, the sorted response curve, per-image heat maps, and the
// destination-marker localization probe against simulator ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flex/core.hpp"
#include "flex/patchify.hpp"
#include "flex/scene_encoder.hpp"
#include "flex/worldsim.hpp"

namespace flex::analysis {

struct TokenResponse {
    int token_index = 0;
    double max_response = 0.0;  // head-mean softmax weight, in [0, 1]
    int camera = 0, timestep = 0, row = 0, col = 0;
    int rank = 0;  // 0 = strongest token after sorting
};

namespace detail {

inline void validate_record(const enc::SceneAttention& attn) {
    if (attn.heads < 1 || attn.scene_tokens < 1 || attn.cameras < 1 || attn.timesteps < 1 ||
        attn.grid_rows < 1 || attn.grid_cols < 1)
        fail_shape("attention record has degenerate dimensions");
    const size_t want = static_cast<size_t>(attn.heads) * attn.scene_tokens * attn.image_tokens();
    if (attn.weights.size() != want)
        fail_shape("attention record holds ", attn.weights.size(), " weights, layout needs ",
                   want);
}

// Head-mean attention row of one scene token, length M, accumulated in
// double so the value is oracle-comparable at fine tolerances.
inline std::vector<double> head_mean_row(const enc::SceneAttention& attn, int token) {
    const int m = attn.image_tokens();
    std::vector<double> mean(m, 0.0);
    for (int h = 0; h < attn.heads; ++h)
        for (int k = 0; k < m; ++k) mean[k] += attn.at(h, token, k);
    for (double& v : mean) v /= attn.heads;
    return mean;
}

}  // namespace detail

// Head-mean then per-scene-token max over all image-token keys; ranks are the
// descending order of max_response (ties broken by token index).
inline std::vector<TokenResponse> token_responses(const enc::SceneAttention& attn) {
    detail::validate_record(attn);
    std::vector<TokenResponse> out(attn.scene_tokens);
    for (int tok = 0; tok < attn.scene_tokens; ++tok) {
        const std::vector<double> mean = detail::head_mean_row(attn, tok);
        int best = 0;
        for (int k = 1; k < attn.image_tokens(); ++k)
            if (mean[k] > mean[best]) best = k;
        TokenResponse r;
        r.token_index = tok;
        r.max_response = mean[best];
        attn.decode_key(best, &r.camera, &r.timestep, &r.row, &r.col);
        out[tok] = r;
    }
    std::vector<int> order(out.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return out[a].max_response > out[b].max_response;
    });
    for (size_t rank = 0; rank < order.size(); ++rank) out[order[rank]].rank = int(rank);
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation across clips.
// ---------------------------------------------------------------------------

struct AggregateResponse {
    int token_index = 0;
    double mean_max_response = 0.0;
    int rank = 0;
};

inline std::vector<AggregateResponse> aggregate_responses(
    const std::vector<std::vector<TokenResponse>>& per_clip) {
    if (per_clip.empty()) fail_config("aggregate_responses: no clips");
    const size_t k = per_clip.front().size();
    std::vector<AggregateResponse> out(k);
    for (size_t i = 0; i < k; ++i) out[i].token_index = int(i);
    for (const auto& clip : per_clip) {
        if (clip.size() != k)
            fail_shape("clip response count ", clip.size(), " != ", k);
        for (const auto& r : clip)
            out[r.token_index].mean_max_response += r.max_response / per_clip.size();
    }
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return out[a].mean_max_response > out[b].mean_max_response;
    });
    for (size_t rank = 0; rank < k; ++rank) out[order[rank]].rank = int(rank);
    return out;
}

// Per-token mean max_response over clips, sorted descending by rank.
inline std::vector<double> sorted_response_curve(
    const std::vector<std::vector<TokenResponse>>& per_clip) {
    const auto agg = aggregate_responses(per_clip);
    std::vector<double> curve(agg.size());
    for (const auto& a : agg) curve[a.rank] = a.mean_max_response;
    return curve;
}

// ---------------------------------------------------------------------------
// Spatial response maps.
// ---------------------------------------------------------------------------

struct ResponseMap {
    int camera = 0, timestep = 0;
    int rows = 0, cols = 0;
    std::vector<float> weights;  // rows*cols, renormalized over all images

    float at(int r, int c) const { return weights[static_cast<size_t>(r) * cols + c]; }
};

// One token's head-mean attention reshaped onto each image's patch grid. The
// row is renormalized over the image-token keys so the grids form a
// distribution: summed over every image they give 1.
inline std::vector<ResponseMap> response_map(int token_index, const enc::SceneAttention& attn) {
    detail::validate_record(attn);
    if (token_index < 0 || token_index >= attn.scene_tokens)
        fail_config("response_map: token ", token_index, " outside [0, ", attn.scene_tokens, ")");
    const std::vector<double> mean = detail::head_mean_row(attn, token_index);
    double mass = 0.0;
    for (double v : mean) mass += v;
    if (mass <= 0.0) fail_config("response_map: attention row has no mass on image tokens");

    const int per = attn.tokens_per_image();
    std::vector<ResponseMap> maps;
    for (int t = 0; t < attn.timesteps; ++t)
        for (int c = 0; c < attn.cameras; ++c) {
            ResponseMap m;
            m.camera = c;
            m.timestep = t;
            m.rows = attn.grid_rows;
            m.cols = attn.grid_cols;
            const int image = t * attn.cameras + c;
            m.weights.resize(per);
            for (int i = 0; i < per; ++i)
                m.weights[i] =
                    static_cast<float>(mean[static_cast<size_t>(image) * per + i] / mass);
            maps.push_back(std::move(m));
        }
    return maps;
}

// ---------------------------------------------------------------------------
// Exports.
// ---------------------------------------------------------------------------

inline std::string responses_csv(const std::vector<AggregateResponse>& agg) {
    std::ostringstream os;
    os << "token_index,mean_max_response,rank\n";
    for (const auto& a : agg)
        os << a.token_index << ',' << a.mean_max_response << ',' << a.rank << "\n";
    return os.str();
}

inline std::string curve_csv(const std::vector<double>& curve) {
    std::ostringstream os;
    os << "rank,mean_max_response\n";
    for (size_t i = 0; i < curve.size(); ++i) os << i << ',' << curve[i] << "\n";
    return os.str();
}

// ASCII PGM (P2), 255 grey levels, scaled by the map's own maximum so the
// hottest patch is white.
inline void write_pgm(std::ostream& os, const ResponseMap& m) {
    float peak = 0.0f;
    for (float v : m.weights) peak = std::max(peak, v);
    os << "P2\n" << m.cols << ' ' << m.rows << "\n255\n";
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            const int g =
                peak > 0.0f ? static_cast<int>(std::lround(255.0f * m.at(r, c) / peak)) : 0;
            os << g << (c + 1 < m.cols ? ' ' : '\n');
        }
    }
}

// ---------------------------------------------------------------------------
// Destination-marker localization probe.
// ---------------------------------------------------------------------------

// Patch cells covered by the destination marker's projection into camera
// `camera` at timestep `timestep`; empty when the marker is out of frame.
// Samples the marker billboard's vertical center line.
inline std::vector<std::pair<int, int>> marker_patches(const world::Clip& clip, int camera,
                                                       int timestep, int patch) {
    if (camera < 0 || camera >= clip.C || timestep < 0 || timestep >= clip.T)
        fail_config("marker_patches: image (", camera, ",", timestep, ") out of range");
    if (patch < 1 || clip.height % patch != 0 || clip.width % patch != 0)
        fail_config("marker_patches: patch size ", patch, " does not tile ", clip.height, "x",
                    clip.width);
    const auto rig = world::camera_rig(clip.C);
    const auto dest = world::destination_world(clip);
    world::WorldState w;
    w.ego_x = clip.history[timestep][0];
    w.ego_y = clip.history[timestep][1];
    w.ego_heading = clip.history[timestep][2];
    std::vector<std::pair<int, int>> out;
    for (float z : {0.2f, 1.0f, 1.75f, 2.6f, 3.4f}) {
        const auto px = world::project_point(w, rig[camera], dest[0], dest[1], z, clip.height,
                                             clip.width);
        if (!px) continue;
        const std::pair<int, int> cell{static_cast<int>(px->first) / patch,
                                       static_cast<int>(px->second) / patch};
        if (std::find(out.begin(), out.end(), cell) == out.end()) out.push_back(cell);
    }
    return out;
}

// True when the rank-0 token's argmax patch lies within a Chebyshev-1
// neighborhood of the marker's footprint in the same image.
inline bool destination_hit(const world::Clip& clip, const enc::SceneAttention& attn) {
    const auto responses = token_responses(attn);
    const TokenResponse* top = nullptr;
    for (const auto& r : responses)
        if (r.rank == 0) top = &r;
    const int patch = clip.height / attn.grid_rows;
    const auto cells = marker_patches(clip, top->camera, top->timestep, patch);
    for (const auto& cell : cells)
        if (std::abs(cell.first - top->row) <= 1 && std::abs(cell.second - top->col) <= 1)
            return true;
    return false;
}

struct ProbeResult {
    int hits = 0;
    int clips = 0;
    double rate() const { return clips > 0 ? double(hits) / clips : 0.0; }
};

// Runs the localization probe over probe-style clips (single bright marker):
// for each seed, encode, record attention, and test the rank-0 token.
inline ProbeResult localization_probe(const patch::Patchifier& patchifier,
                                      const enc::SceneEncoder& encoder,
                                      const world::WorldConfig& base,
                                      const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) fail_config("localization_probe: no seeds");
    world::WorldConfig wc = base;
    wc.probe_style = true;
    ProbeResult res;
    for (const std::uint64_t seed : seeds) {
        const world::Clip clip = world::generate_clip(seed, wc);
        std::vector<patch::TokenGrid> grids;
        for (int t = 0; t < clip.T; ++t)
            for (int c = 0; c < clip.C; ++c)
                grids.push_back(patchifier.patchify(clip.image(c, t), c, t));
        const enc::SceneAttention attn = encoder.attention_record(grids);
        if (destination_hit(clip, attn)) ++res.hits;
        ++res.clips;
    }
    return res;
}

}  // namespace flex::analysis
