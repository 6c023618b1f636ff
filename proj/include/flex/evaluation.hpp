#pragma once

// Driving metrics and benchmarking: minADE over k sampled trajectories
// (bucketed at 0.5/1/3/5 s), a constant-velocity comparator, and wall-clock
// inference throughput in clips/s.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flex/core.hpp"
#include "flex/dataset.hpp"
#include "flex/model.hpp"
#include "flex/training.hpp"
#include "flex/worldsim.hpp"

namespace flex::eval {

constexpr std::uint64_t kRolloutStreamBase = 5000;  // per-clip sampling RNG stream
constexpr std::array<double, 4> kBucketSeconds{0.5, 1.0, 3.0, 5.0};

// Minimum average displacement error: min over the k sampled trajectories of
// the mean L2 distance over the first `horizon_steps` waypoints.
inline double min_ade(const std::vector<std::vector<float>>& preds, const float* gt,
                      int horizon_steps) {
    if (preds.empty()) fail_config("min_ade: no predicted trajectories");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : preds) {
        const int h = static_cast<int>(p.size() / 2);
        if (horizon_steps < 1 || horizon_steps > h)
            fail_config("min_ade: horizon_steps ", horizon_steps, " outside [1, ", h, "]");
        double sum = 0.0;
        for (int t = 0; t < horizon_steps; ++t) {
            const double dx = double(p[2 * t]) - double(gt[2 * t]);
            const double dy = double(p[2 * t + 1]) - double(gt[2 * t + 1]);
            sum += std::sqrt(dx * dx + dy * dy);
        }
        best = std::min(best, sum / horizon_steps);
    }
    return best;
}

// Waypoint index of each horizon bucket under the configured spacing; with
// 0.5 s waypoints this is {1, 2, 6, 10}.
inline std::array<int, 4> bucket_steps(float future_dt, int horizon) {
    if (future_dt <= 0.0f) fail_config("bucket_steps: nonpositive waypoint spacing ", future_dt);
    std::array<int, 4> steps{};
    for (size_t i = 0; i < kBucketSeconds.size(); ++i) {
        steps[i] = static_cast<int>(std::lround(kBucketSeconds[i] / future_dt));
        if (steps[i] < 1 || steps[i] > horizon)
            fail_config("bucket ", kBucketSeconds[i], "s needs waypoint ", steps[i],
                        " but the horizon is ", horizon, " steps");
    }
    return steps;
}

// Linear extrapolation of the last history velocity, expressed in the ego
// frame of the final history state (the frame predictions live in).
inline std::vector<float> constant_velocity_baseline(
    const std::vector<std::array<float, 4>>& history, const std::vector<float>& timestamps,
    int horizon, float future_dt) {
    if (history.size() < 2) fail_config("constant-velocity baseline needs >= 2 history states");
    if (history.size() != timestamps.size())
        fail_shape("history has ", history.size(), " states but ", timestamps.size(),
                   " timestamps");
    const auto& a = history[history.size() - 2];
    const auto& b = history.back();
    const float dt = timestamps.back() - timestamps[timestamps.size() - 2];
    if (dt <= 0.0f) fail_config("non-increasing history timestamps");
    const float vx = (b[0] - a[0]) / dt;
    const float vy = (b[1] - a[1]) / dt;
    const float ch = std::cos(b[2]), sh = std::sin(b[2]);
    const float ex = ch * vx + sh * vy;   // ego-frame velocity
    const float ey = -sh * vx + ch * vy;
    std::vector<float> out(static_cast<size_t>(horizon) * 2);
    for (int i = 0; i < horizon; ++i) {
        const float t = future_dt * static_cast<float>(i + 1);
        out[2 * i] = ex * t;
        out[2 * i + 1] = ey * t;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full-split evaluation.
// ---------------------------------------------------------------------------

struct EvalReport {
    double minade6 = 0.0;              // mean of the four buckets
    std::array<double, 4> buckets{};   // 0.5 / 1 / 3 / 5 s
    int clips = 0;
    int samples = 6;
    double clips_per_s = 0.0;  // filled by the caller from a bench run, if any
    std::string config_hash;

    nlohmann::json to_json() const {
        return nlohmann::json{{"minade6", minade6},
                              {"minade6_0.5s", buckets[0]},
                              {"minade6_1.0s", buckets[1]},
                              {"minade6_3.0s", buckets[2]},
                              {"minade6_5.0s", buckets[3]},
                              {"clips", clips},
                              {"samples", samples},
                              {"clips_per_s", clips_per_s},
                              {"config_hash", config_hash}};
    }
};

struct EvalOptions {
    int k = 6;
    float temperature = 1.0f;
    std::uint64_t seed = 0;
    int max_clips = 0;  // 0 = use every supplied index
};

inline EvalReport evaluate(const model::Model& model, data::DatasetReader& reader,
                           const std::vector<std::size_t>& indices, const EvalOptions& opt = {}) {
    if (indices.empty()) fail_config("evaluate: no clips supplied");
    const world::WorldConfig wc = data::config_from_json(reader.config());
    const auto steps = bucket_steps(wc.future_dt, model.config().horizon);

    EvalReport rep;
    rep.samples = opt.k;
    const std::size_t count = opt.max_clips > 0
                                  ? std::min<std::size_t>(indices.size(), opt.max_clips)
                                  : indices.size();
    for (std::size_t i = 0; i < count; ++i) {
        world::Clip clip = reader.read(indices[i]);
        Rng rng(derive_seed(opt.seed, kRolloutStreamBase + i));
        policy::Trajectories t = model.predict(clip, opt.k, opt.temperature, rng);
        for (size_t b = 0; b < steps.size(); ++b)
            rep.buckets[b] += min_ade(t.xy, clip.final_future(), steps[b]);
        ++rep.clips;
    }
    for (auto& b : rep.buckets) b /= rep.clips;
    rep.minade6 = (rep.buckets[0] + rep.buckets[1] + rep.buckets[2] + rep.buckets[3]) / 4.0;
    return rep;
}

// Constant-velocity comparator over the same protocol (identical bucketing,
// k irrelevant since the extrapolation is deterministic).
inline EvalReport evaluate_constant_velocity(data::DatasetReader& reader,
                                             const std::vector<std::size_t>& indices,
                                             int horizon, int max_clips = 0) {
    if (indices.empty()) fail_config("evaluate: no clips supplied");
    const world::WorldConfig wc = data::config_from_json(reader.config());
    const auto steps = bucket_steps(wc.future_dt, horizon);
    EvalReport rep;
    rep.samples = 1;
    const std::size_t count =
        max_clips > 0 ? std::min<std::size_t>(indices.size(), max_clips) : indices.size();
    for (std::size_t i = 0; i < count; ++i) {
        world::Clip clip = reader.read(indices[i]);
        std::vector<std::vector<float>> preds{
            constant_velocity_baseline(clip.history, clip.timestamps, horizon, wc.future_dt)};
        for (size_t b = 0; b < steps.size(); ++b)
            rep.buckets[b] += min_ade(preds, clip.final_future(), steps[b]);
        ++rep.clips;
    }
    for (auto& b : rep.buckets) b /= rep.clips;
    rep.minade6 = (rep.buckets[0] + rep.buckets[1] + rep.buckets[2] + rep.buckets[3]) / 4.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Throughput.
// ---------------------------------------------------------------------------

struct BenchResult {
    double mean_clips_per_s = 0.0;
    double std_clips_per_s = 0.0;
    std::vector<double> reps;
};

// Wall-clock clips/s of the full inference path (patchify + scene encoding +
// greedy autoregressive rollout + detokenization), measured on preloaded
// clips so data loading is excluded. `timed_iters` clips per repetition,
// after `warmup_iters` untimed clips.
inline BenchResult throughput_bench(const model::Model& model,
                                    const std::vector<world::Clip>& clips, int warmup_iters,
                                    int timed_iters, int repetitions = 5,
                                    std::uint64_t seed = 0) {
    if (clips.empty()) fail_config("throughput_bench: no clips");
    if (timed_iters <= 0) fail_config("throughput_bench: timed_iters must be positive");
    std::size_t cursor = 0;
    auto next_clip = [&]() -> const world::Clip& {
        const world::Clip& c = clips[cursor % clips.size()];
        ++cursor;
        return c;
    };
    Rng rng(derive_seed(seed, kRolloutStreamBase));
    for (int i = 0; i < warmup_iters; ++i) model.predict(next_clip(), 1, 0.0f, rng);

    BenchResult result;
    for (int r = 0; r < repetitions; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < timed_iters; ++i) model.predict(next_clip(), 1, 0.0f, rng);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.reps.push_back(timed_iters / secs);
    }
    double mean = 0.0;
    for (double v : result.reps) mean += v / result.reps.size();
    double var = 0.0;
    for (double v : result.reps) var += (v - mean) * (v - mean) / result.reps.size();
    result.mean_clips_per_s = mean;
    result.std_clips_per_s = std::sqrt(var);
    return result;
}

// ---------------------------------------------------------------------------
// Sweep CSV (Pareto plotting).
// ---------------------------------------------------------------------------

inline std::string sweep_csv_header() {
    return "repr,variant,interleave,scene_tokens,enc_layers,enc_heads,cameras,timesteps,horizon,"
           "patch_depth,minade6,minade6_0.5s,minade6_1.0s,minade6_3.0s,minade6_5.0s,clips_per_s";
}

inline std::string sweep_csv_row(const train::RunConfig& rc, const EvalReport& rep) {
    std::ostringstream os;
    os << rc.repr << ',' << rc.variant << ',' << (rc.interleave ? 1 : 0) << ','
       << rc.scene_tokens << ',' << rc.enc_layers << ',' << rc.enc_heads << ',' << rc.cameras
       << ',' << rc.timesteps << ',' << rc.horizon << ',' << rc.patch_depth << ',' << rep.minade6
       << ',' << rep.buckets[0] << ',' << rep.buckets[1] << ',' << rep.buckets[2] << ','
       << rep.buckets[3] << ',' << rep.clips_per_s;
    return os.str();
}

// Trajectory CSV export: one row per sampled waypoint.
inline std::string trajectory_csv_header() { return "clip_id,sample_idx,step,x,y"; }

inline void append_trajectory_csv(std::ostream& os, std::uint64_t clip_id,
                                  const policy::Trajectories& t) {
    for (size_t s = 0; s < t.xy.size(); ++s)
        for (size_t i = 0; 2 * i + 1 < t.xy[s].size(); ++i)
            os << clip_id << ',' << s << ',' << i << ',' << t.xy[s][2 * i] << ','
               << t.xy[s][2 * i + 1] << "\n";
}

}  // namespace flex::eval
