#pragma once

// Autoregressive policy head. A single token sequence interleaves scene
// chunks, per-step history tokens, and per-step future spans:
//
//   [start, (scene_1, hist_1, fut_1), ..., (scene_T, hist_T, fut_T), end]
//
// A custom attention mask makes each (hist_k, fut_k) span behave as if the
// sequence had been physically truncated to [start, scene_1..k, hist_k,
// fut_k]: trajectory spans never see each other, and every span reads the
// scene stream only up to its own timestep. Logical position ids (the
// position each token would occupy in its own truncated prefix) make the
// equivalence exact, which is what lets one masked forward produce T
// supervision signals.

#include <algorithm>
#include <string>
#include <vector>

#include "flex/core.hpp"
#include "flex/nn.hpp"
#include "flex/tensor.hpp"
#include "flex/trajectory.hpp"

namespace flex::policy {

enum class SegmentKind { special, scene_chunk, image_tokens, history, future };
enum class Mode { interleaved, non_interleaved };
enum class Repr { flex, baseline };

inline const char* mode_name(Mode m) {
    return m == Mode::interleaved ? "interleaved" : "non_interleaved";
}
inline const char* repr_name(Repr r) { return r == Repr::flex ? "flex" : "baseline"; }

inline Mode mode_from_name(const std::string& s) {
    if (s == "interleaved") return Mode::interleaved;
    if (s == "non_interleaved") return Mode::non_interleaved;
    fail_config("unknown sequence mode '", s, "'");
}
inline Repr repr_from_name(const std::string& s) {
    if (s == "flex") return Repr::flex;
    if (s == "baseline") return Repr::baseline;
    fail_config("unknown scene representation '", s, "'");
}

struct Segment {
    SegmentKind kind;
    int timestep = -1;  // -1 for the start/end specials
    int start = 0;
    int length = 0;
    std::vector<int> token_ids;  // special segments: one vocabulary id per position
};

struct LayoutConfig {
    Mode mode = Mode::interleaved;
    Repr repr = Repr::flex;
    int timesteps = 9;  // T
    int horizon = 10;   // H future tokens per supervised step
    int chunk = 10;     // scene rows per timestep: K/T (flex) or N'*C (baseline)
    int cameras = 2;    // camera-type specials, baseline path only
    int start_id = 0;
    int end_id = 0;
    int first_camera_id = 0;

    void validate() const {
        if (timesteps <= 0) fail_config("layout needs positive timesteps, got ", timesteps);
        if (horizon <= 0) fail_config("layout needs positive horizon, got ", horizon);
        if (chunk <= 0) fail_config("layout needs positive scene rows per step, got ", chunk);
        if (repr == Repr::baseline && cameras <= 0)
            fail_config("baseline layout needs positive camera count, got ", cameras);
        if (start_id < 0 || end_id < 0 || first_camera_id < 0)
            fail_config("special token ids must be non-negative");
    }
};

struct SequenceLayout {
    LayoutConfig config;
    std::vector<Segment> segments;
    int total_len = 0;
    std::vector<int> logical_pos;  // per absolute position
    int max_logical = 0;

    const Segment& segment_of(SegmentKind kind, int timestep) const {
        for (const auto& s : segments)
            if (s.kind == kind && s.timestep == timestep) return s;
        fail_config("layout has no segment of the requested kind at timestep ", timestep);
    }

    // Supervised step indices: every k with a history segment.
    std::vector<int> supervised_steps() const {
        std::vector<int> ks;
        for (const auto& s : segments)
            if (s.kind == SegmentKind::history) ks.push_back(s.timestep);
        return ks;
    }

    int history_index(int k) const { return segment_of(SegmentKind::history, k).start; }
    const Segment& future_segment(int k) const { return segment_of(SegmentKind::future, k); }

    bool is_scene_stream(const Segment& s) const {
        return s.kind == SegmentKind::scene_chunk || s.kind == SegmentKind::image_tokens ||
               (s.kind == SegmentKind::special && s.timestep >= 0);
    }
};

// ---------------------------------------------------------------------------
// Chunk partition (Flex path).
// ---------------------------------------------------------------------------

inline std::vector<Tensor> partition_chunks(const Tensor& scene, int timesteps) {
    if (scene.shape().size() != 2) fail_shape("partition_chunks: expected a rank-2 scene");
    const int k = static_cast<int>(scene.shape()[0]);
    if (timesteps <= 0 || k % timesteps != 0)
        fail_config("cannot partition ", k, " scene tokens into ", timesteps, " equal chunks");
    const int per = k / timesteps;
    std::vector<Tensor> chunks;
    chunks.reserve(timesteps);
    for (int t = 0; t < timesteps; ++t) chunks.push_back(slice_rows(scene, t * per, per));
    return chunks;
}

// ---------------------------------------------------------------------------
// Layout construction.
// ---------------------------------------------------------------------------

inline SequenceLayout build_layout(const LayoutConfig& cfg) {
    cfg.validate();
    SequenceLayout layout;
    layout.config = cfg;
    const int T = cfg.timesteps, H = cfg.horizon;
    const int scene_span = cfg.chunk + (cfg.repr == Repr::baseline ? cfg.cameras : 0);

    int pos = 0;
    int scene_logical = 1;  // scene-stream positions start after the start token
    auto push = [&](SegmentKind kind, int timestep, int length, std::vector<int> ids,
                    int first_logical) {
        Segment s;
        s.kind = kind;
        s.timestep = timestep;
        s.start = pos;
        s.length = length;
        s.token_ids = std::move(ids);
        layout.segments.push_back(std::move(s));
        for (int i = 0; i < length; ++i) layout.logical_pos.push_back(first_logical + i);
        pos += length;
    };

    push(SegmentKind::special, -1, 1, {cfg.start_id}, 0);

    auto push_scene_block = [&](int t) {
        if (cfg.repr == Repr::baseline) {
            std::vector<int> cam_ids(cfg.cameras);
            for (int c = 0; c < cfg.cameras; ++c) cam_ids[c] = cfg.first_camera_id + c;
            push(SegmentKind::special, t, cfg.cameras, std::move(cam_ids), scene_logical);
            scene_logical += cfg.cameras;
            push(SegmentKind::image_tokens, t, cfg.chunk, {}, scene_logical);
            scene_logical += cfg.chunk;
        } else {
            push(SegmentKind::scene_chunk, t, cfg.chunk, {}, scene_logical);
            scene_logical += cfg.chunk;
        }
    };
    auto push_trajectory_block = [&](int t) {
        // History sits right after the scene content visible at step t; the
        // future span follows it. These are prefix positions, so they reuse
        // the range that later scene blocks occupy in the scene stream.
        const int hist_logical = 1 + (t + 1) * scene_span;
        push(SegmentKind::history, t, 1, {}, hist_logical);
        push(SegmentKind::future, t, H, {}, hist_logical + 1);
    };

    if (cfg.mode == Mode::interleaved) {
        for (int t = 0; t < T; ++t) {
            push_scene_block(t);
            push_trajectory_block(t);
        }
    } else {
        for (int t = 0; t < T; ++t) push_scene_block(t);
        push_trajectory_block(T - 1);
    }
    push(SegmentKind::special, -1, 1, {cfg.end_id}, 1 + T * scene_span + 1 + H);

    layout.total_len = pos;
    layout.max_logical = *std::max_element(layout.logical_pos.begin(), layout.logical_pos.end());
    return layout;
}

// ---------------------------------------------------------------------------
// Attention mask.
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_layout(const SequenceLayout& layout) {
    if (layout.segments.empty()) fail_config("malformed layout: no segments");
    int expect = 0;
    for (const auto& s : layout.segments) {
        if (s.start != expect || s.length <= 0)
            fail_config("malformed layout: segments not contiguous at position ", s.start);
        if (s.kind == SegmentKind::special &&
            static_cast<int>(s.token_ids.size()) != s.length)
            fail_config("malformed layout: special segment without ids at position ", s.start);
        expect += s.length;
    }
    if (expect != layout.total_len)
        fail_config("malformed layout: segments cover ", expect, " of ", layout.total_len,
                    " positions");
    if (static_cast<int>(layout.logical_pos.size()) != layout.total_len)
        fail_config("malformed layout: ", layout.logical_pos.size(), " logical positions for ",
                    layout.total_len, " tokens");
    // Per supervised step: scene block precedes history precedes future.
    for (int k : layout.supervised_steps()) {
        const Segment& hist = layout.segment_of(SegmentKind::history, k);
        const Segment& fut = layout.segment_of(SegmentKind::future, k);
        if (fut.start != hist.start + hist.length)
            fail_config("malformed layout: future span of step ", k, " does not follow history");
        for (const auto& s : layout.segments)
            if (layout.is_scene_stream(s) && s.timestep <= k && s.start >= hist.start)
                fail_config("malformed layout: scene content of step ", s.timestep,
                            " appears after history ", k);
    }
}

}  // namespace detail

// The interleaving mask. Rules, with q in segment S_q and key in S_k:
//   start/end specials: plain causal (key position <= query position)
//   scene stream (chunks / image tokens / camera specials): start token, plus
//     scene-stream keys at earlier-or-equal positions; never trajectory keys
//   history k / future k: start token, scene stream with timestep <= k,
//     history k, and the causal prefix of future k; never other steps'
//     history or future
inline BoolMatrix build_mask(const SequenceLayout& layout) {
    detail::validate_layout(layout);
    const int n = layout.total_len;
    BoolMatrix allow(n, n, false);
    for (const auto& sq : layout.segments) {
        for (int qi = 0; qi < sq.length; ++qi) {
            const int q = sq.start + qi;
            for (const auto& sk : layout.segments) {
                for (int ki = 0; ki < sk.length; ++ki) {
                    const int k = sk.start + ki;
                    bool ok = false;
                    const bool key_is_start = sk.kind == SegmentKind::special && k == 0;
                    if (sq.kind == SegmentKind::special && sq.timestep < 0) {
                        ok = k <= q;  // start/end: plain causal
                    } else if (layout.is_scene_stream(sq)) {
                        ok = key_is_start || (layout.is_scene_stream(sk) && k <= q);
                    } else {  // history or future at step sq.timestep
                        const int step = sq.timestep;
                        if (key_is_start)
                            ok = true;
                        else if (layout.is_scene_stream(sk))
                            ok = sk.timestep <= step;
                        else if (sk.kind == SegmentKind::history)
                            ok = sk.timestep == step;
                        else if (sk.kind == SegmentKind::future)
                            ok = sk.timestep == step && k <= q;
                    }
                    if (ok) allow.at(q, k) = true;
                }
            }
        }
    }
    return allow;
}

inline BoolMatrix build_interleaved_mask(const SequenceLayout& layout) {
    if (layout.config.mode != Mode::interleaved)
        fail_config("build_interleaved_mask requires an interleaved layout");
    return build_mask(layout);
}

// Absolute positions of the truncated prefix for step k: [start, scene
// stream with timestep <= k, history_k, future_k]. A plain forward over
// exactly these rows must reproduce the masked forward's logits there.
inline std::vector<int> prefix_positions(const SequenceLayout& layout, int k) {
    std::vector<int> idx;
    idx.push_back(0);
    for (const auto& s : layout.segments)
        if (layout.is_scene_stream(s) && s.timestep <= k)
            for (int i = 0; i < s.length; ++i) idx.push_back(s.start + i);
    const Segment& hist = layout.segment_of(SegmentKind::history, k);
    idx.push_back(hist.start);
    const Segment& fut = layout.segment_of(SegmentKind::future, k);
    for (int i = 0; i < fut.length; ++i) idx.push_back(fut.start + i);
    return idx;
}

// ---------------------------------------------------------------------------
// The decoder.
// ---------------------------------------------------------------------------

struct PolicyConfig {
    int d_llm = 128;
    int blocks = 3;
    int heads = 4;
    int vocab = 0;        // full trajectory vocabulary incl. specials
    int max_logical = 0;  // largest logical position the layout can produce

    void validate() const {
        if (d_llm <= 0 || heads <= 0 || d_llm % heads != 0)
            fail_config("d_llm ", d_llm, " must be a positive multiple of heads ", heads);
        if (blocks <= 0) fail_config("policy needs at least one block, got ", blocks);
        if (vocab <= 0) fail_config("policy vocab must be positive, got ", vocab);
        if (max_logical < 0) fail_config("negative max logical position");
    }
};

class PolicyHead {
public:
    PolicyHead(ParamSet& ps, const PolicyConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        embed_ = ps.add("policy.embed", init_uniform({cfg.vocab, cfg.d_llm}, cfg.d_llm, rng));
        pos_ = ps.add("policy.pos", init_uniform({cfg.max_logical + 1, cfg.d_llm}, cfg.d_llm, rng));
        blocks_.reserve(cfg.blocks);
        for (int i = 0; i < cfg.blocks; ++i)
            blocks_.emplace_back(ps, "policy.block" + std::to_string(i), cfg.d_llm, cfg.heads, rng);
        norm_ = LayerNorm(ps, "policy.norm", cfg.d_llm);
        head_ = Linear(ps, "policy.head", cfg.d_llm, cfg.vocab, rng);
    }

    const PolicyConfig& config() const { return cfg_; }

    // Token-id rows from the learned embedding table.
    Tensor embed_ids(const std::vector<int>& ids) const {
        for (int id : ids)
            if (id < 0 || id >= cfg_.vocab) fail_config("token id ", id, " outside vocab ", cfg_.vocab);
        return gather_rows(embed_->value, ids);
    }

    // x: total_len x d_llm content embeddings (no positions). Adds the learned
    // embedding of each row's logical position, runs the masked decoder, and
    // returns total_len x vocab logits.
    Tensor forward(const Tensor& x, const SequenceLayout& layout, const BoolMatrix& mask) const {
        if (x.shape().size() != 2 || x.shape()[1] != cfg_.d_llm)
            fail_shape("policy forward: expected total_len x ", cfg_.d_llm, " embeddings, got ",
                       shape_str(x.shape()));
        if (static_cast<int>(x.shape()[0]) != layout.total_len)
            fail_shape("policy forward: ", x.shape()[0], " rows vs layout length ", layout.total_len);
        if (mask.rows != layout.total_len || mask.cols != layout.total_len)
            fail_shape("policy forward: mask is ", mask.rows, "x", mask.cols, ", layout length ",
                       layout.total_len);
        if (layout.max_logical > cfg_.max_logical)
            fail_config("layout logical positions reach ", layout.max_logical,
                        " but the policy was sized for ", cfg_.max_logical);
        Tensor h = add(x, gather_rows(pos_->value, layout.logical_pos));
        for (const auto& block : blocks_) h = block.forward(h, mask);
        return head_.forward(norm_.forward(h));
    }

private:
    PolicyConfig cfg_;
    Parameter* embed_ = nullptr;
    Parameter* pos_ = nullptr;
    std::vector<TransformerBlock> blocks_;
    LayerNorm norm_;
    Linear head_;
};

// ---------------------------------------------------------------------------
// Sampling.
// ---------------------------------------------------------------------------

namespace detail {

// Draw from softmax(logits/temperature) over ids [0, support); temperature 0
// is argmax with lowest-id tie-breaking.
inline int sample_id(const float* logits, int support, float temperature, Rng& rng) {
    int best = 0;
    for (int i = 1; i < support; ++i)
        if (logits[i] > logits[best]) best = i;
    if (temperature <= 0.0f) return best;
    std::vector<double> p(support);
    double z = 0.0;
    for (int i = 0; i < support; ++i) {
        p[i] = std::exp(double(logits[i] - logits[best]) / temperature);
        z += p[i];
    }
    double u = rng.next_double() * z;
    for (int i = 0; i < support; ++i) {
        u -= p[i];
        if (u <= 0.0) return i;
    }
    return support - 1;
}

}  // namespace detail

struct Trajectories {
    std::vector<std::vector<int>> ids;  // k rollouts of H waypoint ids
    std::vector<std::vector<float>> xy;  // k rollouts of H (x, y) pairs, flattened
};

// k autoregressive rollouts of the final-step future span. `layout` must be
// non-interleaved; `prefix` provides content embeddings for every position
// before the future span (start, scene stream, history). Specials are masked
// out of the sampling head, so every emitted id is a waypoint id.
inline Trajectories sample_trajectories(const PolicyHead& policy, const SequenceLayout& layout,
                                        const Tensor& prefix, const traj::WaypointVocab& vocab,
                                        int k, float temperature, Rng& rng) {
    if (layout.config.mode != Mode::non_interleaved)
        fail_config("sampling expects a non-interleaved layout");
    if (k < 1) fail_config("need at least one rollout, got ", k);
    const int H = layout.config.horizon;
    const Segment& fut = layout.future_segment(layout.config.timesteps - 1);
    if (static_cast<int>(prefix.shape()[0]) != fut.start)
        fail_shape("sampling prefix has ", prefix.shape()[0], " rows; future span starts at ",
                   fut.start);
    const int d = policy.config().d_llm;
    const int support = vocab.waypoint_count();

    NoGradGuard guard;
    const BoolMatrix mask = build_mask(layout);
    const Tensor end_row = policy.embed_ids({layout.config.end_id});

    Trajectories out;
    out.ids.reserve(k);
    for (int rollout = 0; rollout < k; ++rollout) {
        std::vector<int> ids;
        for (int r = 0; r < H; ++r) {
            std::vector<Tensor> parts{prefix};
            if (!ids.empty()) parts.push_back(policy.embed_ids(ids));
            if (H - r > 0) parts.push_back(Tensor::zeros({H - r, d}));
            parts.push_back(end_row);
            Tensor logits = policy.forward(concat_rows(parts), layout, mask);
            const int row = fut.start - 1 + r;  // history row predicts fut[0]
            ids.push_back(
                detail::sample_id(logits.data().data() + size_t(row) * policy.config().vocab,
                                  support, temperature, rng));
        }
        out.xy.push_back(traj::detokenize(vocab, ids));
        out.ids.push_back(std::move(ids));
    }
    return out;
}

}  // namespace flex::policy
