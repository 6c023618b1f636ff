#pragma once

// Waypoint-vocabulary trajectory codec: per-waypoint (x-bin, y-bin)
// discretization over fixed ego-frame ranges, the inverse bin-center lookup,
// special-token allocation, and the single-token history encoder.

#include <cmath>
#include <utility>
#include <vector>

#include "flex/nn.hpp"
#include "flex/worldsim.hpp"

namespace flex::traj {

struct WaypointVocab {
    int x_bins = 32, y_bins = 32;
    float x_lo = -5.0f, x_hi = 40.0f;
    float y_lo = -10.0f, y_hi = 10.0f;

    void validate() const {
        if (x_bins < 1 || y_bins < 1) fail_config("WaypointVocab: bins must be positive");
        if (x_hi <= x_lo || y_hi <= y_lo) fail_config("WaypointVocab: empty range");
    }

    float x_width() const { return (x_hi - x_lo) / static_cast<float>(x_bins); }
    float y_width() const { return (y_hi - y_lo) / static_cast<float>(y_bins); }

    int waypoint_count() const { return x_bins * y_bins; }

    // Special tokens live after the waypoint ids: sequence start/end, then one
    // token per camera type (used by the baseline path's layout).
    int seq_start() const { return waypoint_count(); }
    int seq_end() const { return waypoint_count() + 1; }
    int camera_token(int camera_id) const { return waypoint_count() + 2 + camera_id; }
    int size(int num_cameras) const { return waypoint_count() + 2 + num_cameras; }

    int discretize_one(float x, float y) const {
        const auto xb = static_cast<int>(std::floor((x - x_lo) / x_width()));
        const auto yb = static_cast<int>(std::floor((y - y_lo) / y_width()));
        const int cx = std::clamp(xb, 0, x_bins - 1);
        const int cy = std::clamp(yb, 0, y_bins - 1);
        return cx * y_bins + cy;
    }

    std::pair<float, float> center(int id) const {
        if (id < 0 || id >= waypoint_count())
            fail_config("WaypointVocab: id ", id, " is not a waypoint token (vocab ",
                        waypoint_count(), ")");
        const int xb = id / y_bins, yb = id % y_bins;
        return {x_lo + (static_cast<float>(xb) + 0.5f) * x_width(),
                y_lo + (static_cast<float>(yb) + 0.5f) * y_width()};
    }
};

// xy: H pairs. Clamping out-of-range points to edge bins is the contract.
inline std::vector<int> discretize(const WaypointVocab& vocab, const float* xy, int count) {
    std::vector<int> ids(count);
    for (int i = 0; i < count; ++i) ids[i] = vocab.discretize_one(xy[i * 2], xy[i * 2 + 1]);
    return ids;
}

inline std::vector<float> detokenize(const WaypointVocab& vocab, const std::vector<int>& ids) {
    std::vector<float> xy(ids.size() * 2);
    for (size_t i = 0; i < ids.size(); ++i) {
        const auto [x, y] = vocab.center(ids[i]);
        xy[i * 2] = x;
        xy[i * 2 + 1] = y;
    }
    return xy;
}

// ---------------------------------------------------------------------------
// History encoding: a fixed-length window of ego states compressed into one
// policy-width token by a 2-layer MLP.
// ---------------------------------------------------------------------------

constexpr int kStateFeatures = 4;  // x, y, heading, speed

// Features for predicting at step k: the last `h_past` observed states
// expressed in the ego frame of step k (padded at the front by repeating the
// oldest state), ordered oldest to newest.
inline std::vector<float> history_features(const world::Clip& clip, int k, int h_past) {
    if (k < 0 || k >= clip.T) fail_config("history_features: step ", k, " outside clip T ", clip.T);
    std::vector<float> out;
    out.reserve(static_cast<size_t>(h_past) * kStateFeatures);
    const auto& ref = clip.history[k];
    const float ch = std::cos(ref[2]), sh = std::sin(ref[2]);
    for (int i = 0; i < h_past; ++i) {
        const int j = std::max(0, k - (h_past - 1) + i);
        const auto& st = clip.history[j];
        const float rx = st[0] - ref[0], ry = st[1] - ref[1];
        float dh = st[2] - ref[2];
        while (dh > world::kPi) dh -= 2 * world::kPi;
        while (dh < -world::kPi) dh += 2 * world::kPi;
        out.push_back(ch * rx + sh * ry);
        out.push_back(-sh * rx + ch * ry);
        out.push_back(dh);
        out.push_back(st[3]);
    }
    return out;
}

class HistoryEncoder {
public:
    HistoryEncoder() = default;
    HistoryEncoder(ParamSet& ps, int h_past, int d_llm, Rng& rng)
        : h_past_(h_past),
          mlp_(ps, "hist", h_past * kStateFeatures, 2 * d_llm, d_llm, rng) {}

    int h_past() const { return h_past_; }

    // states: h_past * kStateFeatures flattened floats -> 1 x D_llm token.
    Tensor forward(const std::vector<float>& states) const {
        const auto want = static_cast<size_t>(h_past_) * kStateFeatures;
        if (states.size() != want)
            fail_shape("encode_history: got ", states.size(), " features, want ", want);
        Tensor x = Tensor::from({1, static_cast<int>(want)}, states);
        return mlp_.forward(x);
    }

private:
    int h_past_ = 0;
    Mlp mlp_;
};

}  // namespace flex::traj
