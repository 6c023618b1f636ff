#pragma once

// Deterministic synthetic driving world: scripted scenarios with closed-form
// kinematics, rendered through an equiangular multi-camera rig. Every clip is
// a pure function of (seed, config). The telephoto camera is an exact 2x
// central zoom of the wide camera in angle space, which is what gives the
// scene encoder cross-view redundancy to exploit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flex/core.hpp"

namespace flex::world {

// Base simulation clock. Observation frames are sampled every `stride` ticks:
// stride 2 gives a 2 s window over 9 frames, stride 1 gives 1 s.
constexpr double kBaseDt = 0.125;
constexpr float kPi = 3.14159265358979f;
constexpr float kCamHeight = 1.5f;
constexpr float kCamPitch = -0.12f;  // fixed downward tilt, radians
constexpr float kWideFovAz = 1.6f;
constexpr float kWideFovEl = 0.8f;
constexpr float kLaneWidth = 3.5f;
constexpr float kRoadHalfWidth = kLaneWidth;  // two lanes centered on the road line
constexpr float kLaneCenter = kLaneWidth / 2.0f;

struct CameraSpec {
    std::string name;
    float yaw = 0.0f;   // mount yaw relative to ego heading
    float zoom = 1.0f;  // angular magnification; tele = 2 (half the FOV)
};

// Rig order is the camera_id order everywhere downstream.
inline std::vector<CameraSpec> camera_rig(int count) {
    static const std::vector<CameraSpec> full = {
        {"front_wide", 0.0f, 1.0f}, {"front_tele", 0.0f, 2.0f},  {"left", 1.2f, 1.0f},
        {"right", -1.2f, 1.0f},     {"rear_left", 2.2f, 1.0f},   {"rear_right", -2.2f, 1.0f},
        {"rear", kPi, 1.0f},
    };
    if (count < 1 || count > static_cast<int>(full.size()))
        fail_config("camera_rig: count ", count, " outside [1, ", full.size(), "]");
    return {full.begin(), full.begin() + count};
}

struct WorldConfig {
    int cameras = 2;
    int timesteps = 9;  // T observed frames
    int horizon = 10;   // H future waypoints at future_dt spacing
    int height = 32;
    int width = 64;
    int stride = 2;            // observation stride over the base clock
    float future_dt = 0.5f;    // waypoint spacing, seconds
    bool probe_style = false;  // markings/agents off: the marker is the one bright object

    void validate() const {
        if (cameras < 1) fail_config("WorldConfig: cameras ", cameras, " < 1");
        if (timesteps < 2) fail_config("WorldConfig: timesteps ", timesteps, " < 2");
        if (horizon < 1) fail_config("WorldConfig: horizon ", horizon, " < 1");
        if (height < 8 || width < 8)
            fail_config("WorldConfig: image ", height, "x", width, " too small");
        if (stride < 1) fail_config("WorldConfig: stride ", stride, " < 1");
        if (future_dt <= 0) fail_config("WorldConfig: future_dt must be positive");
        camera_rig(cameras);  // throws on an unsupported rig size
    }
};

struct Image {
    int height = 0, width = 0;
    std::vector<float> px;  // row-major H*W*3 in [0,1]

    Image() = default;
    Image(int h, int w) : height(h), width(w), px(static_cast<size_t>(h) * w * 3, 0.0f) {}
    float& at(int r, int c, int ch) { return px[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
    float at(int r, int c, int ch) const {
        return px[(static_cast<size_t>(r) * width + c) * 3 + ch];
    }
};

// ---------------------------------------------------------------------------
// Road geometry: a straight / arc / straight centerline with exact closed-form
// arclength parameterization and point-to-centerline queries.
// ---------------------------------------------------------------------------

struct RoadPath {
    // Piece 1: straight from the origin along +x for `s1` meters. Piece 2: arc
    // of radius `radius` sweeping `sweep` radians (sign = turn direction).
    // Piece 3: straight continuation. A pure straight road has sweep == 0.
    float s1 = 1e9f;
    float radius = 30.0f;
    float sweep = 0.0f;

    bool has_arc() const { return sweep != 0.0f; }
    float arc_len() const { return has_arc() ? radius * std::fabs(sweep) : 0.0f; }

    void pose(float s, float& x, float& y, float& heading) const {
        if (!has_arc() || s <= s1) {
            x = s;
            y = 0.0f;
            heading = 0.0f;
            return;
        }
        const float dir = sweep > 0 ? 1.0f : -1.0f;
        const float cy = dir * radius;  // arc center sits at (s1, cy)
        const float along = s - s1;
        if (along <= arc_len()) {
            const float phi = along / radius;  // unsigned turned angle
            x = s1 + radius * std::sin(phi);
            y = cy - dir * radius * std::cos(phi);
            heading = dir * phi;
            return;
        }
        const float phi = std::fabs(sweep);
        const float ex = s1 + radius * std::sin(phi);
        const float ey = cy - dir * radius * std::cos(phi);
        const float rest = along - arc_len();
        heading = sweep;
        x = ex + rest * std::cos(heading);
        y = ey + rest * std::sin(heading);
    }

    // Signed lateral offset (left of travel positive) and arclength of the
    // closest centerline point. Exact for the three-piece geometry.
    void lateral(float px_, float py_, float& d_lat, float& s_out) const {
        if (!has_arc()) {
            d_lat = py_;
            s_out = px_;
            return;
        }
        float best_cost = 1e30f;
        auto consider = [&](float qx, float qy, float d, float s) {
            const float dx = px_ - qx, dy = py_ - qy;
            const float cost = dx * dx + dy * dy;
            if (cost < best_cost) {
                best_cost = cost;
                d_lat = d;
                s_out = s;
            }
        };
        // Entry straight (x <= s1).
        {
            const float s = std::min(px_, s1);
            consider(s, 0.0f, py_, s);
        }
        // Arc, clamped to the sweep.
        const float dir = sweep > 0 ? 1.0f : -1.0f;
        const float cy = dir * radius;
        {
            const float vx = px_ - s1, vy = py_ - cy;
            float phi = std::atan2(vx, dir * (cy - py_));
            phi = std::clamp(phi, 0.0f, std::fabs(sweep));
            const float ax = s1 + radius * std::sin(phi);
            const float ay = cy - dir * radius * std::cos(phi);
            const float r = std::sqrt(vx * vx + vy * vy);
            consider(ax, ay, dir * (radius - r), s1 + radius * phi);
        }
        // Exit straight.
        {
            const float phi = std::fabs(sweep);
            const float hx = std::cos(sweep), hy = std::sin(sweep);
            const float ex = s1 + radius * std::sin(phi);
            const float ey = cy - dir * radius * std::cos(phi);
            const float rel_x = px_ - ex, rel_y = py_ - ey;
            const float along = std::max(0.0f, rel_x * hx + rel_y * hy);
            consider(ex + along * hx, ey + along * hy, rel_y * hx - rel_x * hy,
                     s1 + arc_len() + along);
        }
    }

    // Point at arclength s displaced `offset` to the left of travel.
    void offset_point(float s, float offset, float& x, float& y, float& heading) const {
        pose(s, x, y, heading);
        x += -std::sin(heading) * offset;
        y += std::cos(heading) * offset;
    }

    // Sampled centerline for the lane-geometry contract.
    std::vector<std::array<float, 2>> polyline(float s_lo, float s_hi, float step) const {
        std::vector<std::array<float, 2>> pts;
        for (float s = s_lo; s <= s_hi; s += step) {
            float x, y, h;
            pose(s, x, y, h);
            pts.push_back({x, y});
        }
        return pts;
    }
};

struct AgentInstance {
    float x = 0, y = 0, heading = 0, speed = 0;
    float half_width = 1.5f;  // effective billboard half-width, meters
    float height = 1.5f;
    std::array<float, 3> color{0.7f, 0.2f, 0.15f};
};

struct WorldState {
    float ego_x = 0, ego_y = 0, ego_heading = 0, ego_speed = 0;
    RoadPath road;
    bool has_road = false;
    float lane_width = kLaneWidth;
    bool markings = true;
    bool has_stop_line = false;
    float stop_line_s = 0;
    bool has_dest = false;
    float dest_x = 0, dest_y = 0;
    std::vector<AgentInstance> agents;
    uint64_t seed = 0;  // procedural texture stream
    double time = 0.0;
};

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace render_detail {

inline float wrap_pi(float a) {
    while (a > kPi) a -= 2 * kPi;
    while (a < -kPi) a += 2 * kPi;
    return a;
}

// Linear-ramp coverage of |x| <= half with an anti-aliasing edge width.
inline float cov(float x, float half, float edge) {
    return std::clamp((half - std::fabs(x)) / std::max(edge, 1e-4f) + 0.5f, 0.0f, 1.0f);
}

// Box-filtered 50%-duty square wave: the dash pattern along arclength.
inline float dash_cov(float s, float period, float w) {
    auto integral = [period](float u) {
        const float n = std::floor(u / period);
        const float f = u - n * period;
        return period * 0.5f * n + std::min(f, period * 0.5f);
    };
    w = std::max(w, 0.05f);
    return (integral(s + 0.5f * w) - integral(s - 0.5f * w)) / w;
}

inline void mix3(float* c, const float* b, float a) {
    for (int i = 0; i < 3; ++i) c[i] += (b[i] - c[i]) * a;
}

struct BillboardHit {
    float dist = 0;
    float alpha = 0;
    std::array<float, 3> color{};
};

}  // namespace render_detail

// Project a world point at height z into pixel coordinates of `cam`. Returns
// nullopt outside the field of view. Exposed for the analysis probes.
inline std::optional<std::pair<float, float>> project_point(const WorldState& w,
                                                            const CameraSpec& cam, float px,
                                                            float py, float pz, int height,
                                                            int width) {
    const float dx = px - w.ego_x, dy = py - w.ego_y;
    const float dist = std::sqrt(dx * dx + dy * dy);
    if (dist < 0.5f) return std::nullopt;
    const float az = render_detail::wrap_pi(std::atan2(dy, dx) - (w.ego_heading + cam.yaw));
    const float el = std::atan2(pz - kCamHeight, dist);
    const float fov_az = kWideFovAz / cam.zoom, fov_el = kWideFovEl / cam.zoom;
    const float el_cam = el - kCamPitch;
    const float col = (az / fov_az + 0.5f) * static_cast<float>(width) - 0.5f;
    const float row = (0.5f - el_cam / fov_el) * static_cast<float>(height) - 0.5f;
    if (col < 0 || col > static_cast<float>(width - 1) || row < 0 ||
        row > static_cast<float>(height - 1))
        return std::nullopt;
    return std::make_pair(row, col);
}

inline Image render_camera(const WorldState& w, const CameraSpec& cam, uint64_t jitter_seed,
                           int height = 32, int width = 64) {
    using namespace render_detail;
    Image img(height, width);
    const float fov_az = kWideFovAz / cam.zoom;
    const float fov_el = kWideFovEl / cam.zoom;
    const float pix_az = fov_az / static_cast<float>(width);
    const float pix_el = fov_el / static_cast<float>(height);
    const uint64_t seed = jitter_seed;

    std::vector<BillboardHit> hits;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const float az =
                fov_az * ((static_cast<float>(c) + 0.5f) / static_cast<float>(width) - 0.5f);
            const float el_cam =
                fov_el * (0.5f - (static_cast<float>(r) + 0.5f) / static_cast<float>(height));
            const float el = el_cam + kCamPitch;  // true elevation
            const float psi = w.ego_heading + cam.yaw + az;
            const float dirx = std::cos(psi), diry = std::sin(psi);

            // Sky shade (also the fog target). Keyed on world angle only, so
            // it is identical across cameras and static over time.
            const float t_sky = std::clamp(el * 2.5f, 0.0f, 1.0f);
            float sky[3] = {0.66f + (0.50f - 0.66f) * t_sky, 0.72f + (0.66f - 0.72f) * t_sky,
                            0.85f + (0.88f - 0.85f) * t_sky};
            const float sn = value_noise(std::cos(psi) * 2.5f + 7.3f,
                                         std::sin(psi) * 2.5f + el * 5.0f, seed ^ 0x51u);
            for (float& ch : sky) ch += (sn - 0.5f) * 0.06f;

            float color[3];
            float ground_dist = 1e30f;
            const bool hits_ground = el < -1e-4f;
            if (hits_ground) {
                const float d = kCamHeight / std::tan(-el);
                ground_dist = d;
                const float gx = w.ego_x + d * dirx;
                const float gy = w.ego_y + d * diry;
                // Ground footprints of this pixel, for mip-style coverage.
                const float fl = std::max(d * pix_az, 0.03f);
                const float fr = std::max((d * d + kCamHeight * kCamHeight) / kCamHeight * pix_el,
                                          0.03f);

                const float g1 = value_noise(gx * 0.61f, gy * 0.61f, seed ^ 0xA1u);
                const float g2 = value_noise(gx * 0.13f, gy * 0.13f, seed ^ 0xB2u);
                color[0] = 0.17f + (g1 - 0.5f) * 0.10f + (g2 - 0.5f) * 0.08f;
                color[1] = 0.33f + (g1 - 0.5f) * 0.10f + (g2 - 0.5f) * 0.08f;
                color[2] = 0.13f + (g1 - 0.5f) * 0.06f + (g2 - 0.5f) * 0.05f;

                if (w.has_road) {
                    float d_lat = 0, s_along = 0;
                    w.road.lateral(gx, gy, d_lat, s_along);
                    const float rn = value_noise(gx * 1.1f, gy * 1.1f, seed ^ 0xC3u);
                    const float road_col[3] = {0.245f + (rn - 0.5f) * 0.05f,
                                               0.25f + (rn - 0.5f) * 0.05f,
                                               0.27f + (rn - 0.5f) * 0.05f};
                    const float road_cov = cov(d_lat, kRoadHalfWidth, std::max(fl, 0.08f));
                    mix3(color, road_col, road_cov);

                    if (w.markings) {
                        const float edge_off = kRoadHalfWidth - 0.25f;
                        float m = cov(d_lat - edge_off, 0.14f, fl) +
                                  cov(d_lat + edge_off, 0.14f, fl) +
                                  cov(d_lat, 0.14f, fl) * dash_cov(s_along, 4.0f, fr);
                        m = std::min(m, 1.0f) * road_cov;
                        const float mark_col[3] = {0.86f, 0.86f, 0.76f};
                        mix3(color, mark_col, m);
                        if (w.has_stop_line) {
                            const float ms = cov(s_along - w.stop_line_s, 0.3f, fr) *
                                             cov(d_lat, 3.2f, fl) * road_cov;
                            const float stop_col[3] = {0.9f, 0.9f, 0.9f};
                            mix3(color, stop_col, ms);
                        }
                    }
                }
                // Distance fog toward the horizon shade.
                const float fog = 0.75f * (1.0f - std::exp(-std::max(d - 15.0f, 0.0f) / 55.0f));
                mix3(color, sky, fog);
            } else {
                color[0] = sky[0];
                color[1] = sky[1];
                color[2] = sky[2];
            }

            // Billboards: agents and the destination marker. Vertical slabs
            // standing on the ground plane, composited far-to-near.
            hits.clear();
            auto add_billboard = [&](float bx, float by, float half_w, float top_z,
                                     const std::array<float, 3>& col) {
                const float dx = bx - w.ego_x, dy = by - w.ego_y;
                const float d = std::sqrt(dx * dx + dy * dy);
                if (d < 0.75f) return;
                if (hits_ground && d > ground_dist) return;  // behind visible ground
                const float delta = wrap_pi(std::atan2(dy, dx) - psi);
                const float half_ang = std::atan(half_w / d);
                const float a_az = cov(delta, half_ang, std::max(0.7f * pix_az, 0.004f));
                if (a_az <= 0.0f) return;
                const float el_bot = std::atan2(-kCamHeight, d);
                const float el_top = std::atan2(top_z - kCamHeight, d);
                const float mid = 0.5f * (el_bot + el_top);
                const float half_el = 0.5f * (el_top - el_bot);
                const float a_el = cov(el - mid, half_el, std::max(0.7f * pix_el, 0.004f));
                const float alpha = a_az * a_el;
                if (alpha > 1e-3f) hits.push_back({d, alpha, col});
            };
            for (const auto& a : w.agents) add_billboard(a.x, a.y, a.half_width, a.height, a.color);
            if (w.has_dest)
                add_billboard(w.dest_x, w.dest_y, 1.0f, 3.5f, {1.0f, 0.35f, 0.92f});
            std::sort(hits.begin(), hits.end(),
                      [](const BillboardHit& a, const BillboardHit& b) { return a.dist > b.dist; });
            for (const auto& h : hits) mix3(color, h.color.data(), h.alpha);

            for (int ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) = std::clamp(color[ch], 0.0f, 1.0f);
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Scenario scripting and clip assembly
// ---------------------------------------------------------------------------

enum class Scenario : uint32_t { lane_follow = 0, lane_change = 1, turn = 2, stop = 3 };

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::lane_follow: return "lane_follow";
        case Scenario::lane_change: return "lane_change";
        case Scenario::turn: return "turn";
        case Scenario::stop: return "stop";
    }
    return "?";
}

struct Clip {
    uint64_t clip_id = 0;
    uint32_t scenario = 0;
    int C = 0, T = 0, H = 0;
    int height = 0, width = 0;
    std::vector<std::string> camera_ids;
    std::vector<float> timestamps;               // T, strictly increasing seconds
    std::vector<Image> images;                   // C*T, index c*T + t
    std::vector<std::array<float, 4>> history;   // T world states: x, y, heading, speed
    std::vector<float> futures;                  // T*H*2 ego-frame waypoints per step

    const Image& image(int c, int t) const { return images[static_cast<size_t>(c) * T + t]; }
    const float* future_at(int k) const { return futures.data() + static_cast<size_t>(k) * H * 2; }
    // The `future` field of the clip contract: the final observed step's future.
    const float* final_future() const { return future_at(T - 1); }
};

// World position of the destination marker, reconstructed from the clip's own
// final-step pose and last waypoint (the marker is placed there by design).
inline std::array<float, 2> destination_world(const Clip& c) {
    const auto& h = c.history.back();
    const float* f = c.future_at(c.T - 1) + (c.H - 1) * 2;
    const float ch = std::cos(h[2]), sh = std::sin(h[2]);
    return {h[0] + ch * f[0] - sh * f[1], h[1] + sh * f[0] + ch * f[1]};
}

namespace sim_detail {

// Closed-form ego trajectory in road coordinates: centerline arclength s(t)
// and signed lateral offset l(t), both exactly evaluable at any time.
struct EgoScript {
    Scenario scenario = Scenario::lane_follow;
    float v0 = 6.0f;
    float lane_from = -kLaneCenter;
    float lane_to = -kLaneCenter;
    float lc_start = 0.0f, lc_dur = 3.0f;  // lane-change window
    float brake_t = 1e9f;                  // braking start time (stop scenario)
    float decel = 0.0f;

    float s_at(double t) const {
        if (scenario != Scenario::stop || t <= brake_t) return static_cast<float>(v0 * t);
        const double tau = std::min(t - brake_t, static_cast<double>(v0 / decel));
        return static_cast<float>(v0 * brake_t + v0 * tau - 0.5 * decel * tau * tau);
    }
    float l_at(double t) const {
        if (scenario != Scenario::lane_change) return lane_from;
        const float u = std::clamp(static_cast<float>((t - lc_start) / lc_dur), 0.0f, 1.0f);
        const float ss = u * u * (3.0f - 2.0f * u);
        return lane_from + (lane_to - lane_from) * ss;
    }
    float l_rate(double t) const {
        if (scenario != Scenario::lane_change) return 0.0f;
        const float u = static_cast<float>((t - lc_start) / lc_dur);
        if (u <= 0.0f || u >= 1.0f) return 0.0f;
        return (lane_to - lane_from) * 6.0f * u * (1.0f - u) / lc_dur;
    }
    float s_rate(double t) const {
        if (scenario != Scenario::stop || t <= brake_t) return v0;
        const double tau = t - brake_t;
        return static_cast<float>(std::max(0.0, v0 - decel * tau));
    }
};

struct ClipScript {
    EgoScript ego;
    RoadPath road;
    bool has_stop_line = false;
    float stop_line_s = 0;
    std::vector<AgentInstance> agent_templates;  // x holds s0, y holds lane offset
    uint64_t noise_seed = 0;
};

inline void ego_pose_at(const ClipScript& sc, double t, float& x, float& y, float& heading,
                        float& speed) {
    const float s = sc.ego.s_at(t);
    const float l = sc.ego.l_at(t);
    float road_h;
    sc.road.offset_point(s, l, x, y, road_h);
    heading = road_h + std::atan2(sc.ego.l_rate(t), std::max(sc.ego.s_rate(t), 0.1f));
    speed = std::hypot(sc.ego.s_rate(t), sc.ego.l_rate(t));
}

inline ClipScript build_script(uint64_t seed, const WorldConfig& cfg) {
    ClipScript sc;
    Rng rng(derive_seed(seed, 1));
    const float u_scn = rng.next_float();
    Scenario scn = Scenario::lane_follow;
    if (u_scn >= 0.40f) scn = Scenario::lane_change;
    if (u_scn >= 0.65f) scn = Scenario::turn;
    if (u_scn >= 0.90f) scn = Scenario::stop;
    sc.ego.scenario = scn;
    sc.ego.v0 = rng.uniform(4.0f, 8.0f);

    const float dt_frame = static_cast<float>(cfg.stride * kBaseDt);
    const float t_last = static_cast<float>(cfg.timesteps - 1) * dt_frame;

    if (scn == Scenario::lane_change) {
        sc.ego.lane_to = kLaneCenter;
        sc.ego.lc_start = t_last - 1.0f + 3.0f * rng.next_float();
        sc.ego.lc_dur = 3.0f;
    } else if (scn == Scenario::turn) {
        const float entry_t = rng.uniform(0.3f * t_last, t_last + 1.5f);
        sc.road.s1 = sc.ego.v0 * entry_t;
        sc.road.radius = rng.uniform(25.0f, 40.0f);
        const float mag = rng.uniform(15.0f, 30.0f) * kPi / 180.0f;
        sc.road.sweep = rng.next_float() < 0.5f ? mag : -mag;
    } else if (scn == Scenario::stop) {
        sc.ego.brake_t = t_last;
        const float lo = std::max(5.0f, sc.ego.v0 * sc.ego.v0 / 7.0f);
        const float d_stop = rng.uniform(lo, 14.0f);
        sc.ego.decel = sc.ego.v0 * sc.ego.v0 / (2.0f * d_stop);
        sc.has_stop_line = !cfg.probe_style;
        sc.stop_line_s = sc.ego.v0 * t_last + d_stop + 1.0f;
    }

    if (!cfg.probe_style) {
        const int n_agents = static_cast<int>(rng.next_below(4));
        static const std::array<std::array<float, 3>, 4> palette = {{
            {0.75f, 0.20f, 0.15f},
            {0.15f, 0.25f, 0.70f},
            {0.80f, 0.50f, 0.10f},
            {0.60f, 0.60f, 0.65f},
        }};
        for (int i = 0; i < n_agents; ++i) {
            AgentInstance a;
            a.x = rng.uniform(8.0f, 35.0f);  // s offset ahead of the ego start
            a.y = rng.next_float() < 0.5f ? kLaneCenter : -kLaneCenter;
            a.speed = rng.uniform(3.0f, 7.0f);
            a.color = palette[rng.next_below(palette.size())];
            sc.agent_templates.push_back(a);
        }
    }
    sc.noise_seed = derive_seed(seed, 2);
    return sc;
}

inline WorldState world_at(const ClipScript& sc, const WorldConfig& cfg, double t,
                           const std::array<float, 2>& dest) {
    WorldState w;
    ego_pose_at(sc, t, w.ego_x, w.ego_y, w.ego_heading, w.ego_speed);
    w.road = sc.road;
    w.has_road = true;
    w.markings = !cfg.probe_style;
    w.has_stop_line = sc.has_stop_line;
    w.stop_line_s = sc.stop_line_s;
    w.has_dest = true;
    w.dest_x = dest[0];
    w.dest_y = dest[1];
    w.seed = sc.noise_seed;
    w.time = t;
    for (const auto& tpl : sc.agent_templates) {
        AgentInstance a = tpl;
        const float s = tpl.x + tpl.speed * static_cast<float>(t);
        sc.road.offset_point(s, tpl.y, a.x, a.y, a.heading);
        w.agents.push_back(a);
    }
    return w;
}

}  // namespace sim_detail

inline Clip generate_clip(uint64_t seed, const WorldConfig& cfg) {
    cfg.validate();
    using namespace sim_detail;
    const ClipScript sc = build_script(seed, cfg);

    const int T = cfg.timesteps, H = cfg.horizon, C = cfg.cameras;
    const double dt_frame = cfg.stride * kBaseDt;
    const double t_last = (T - 1) * dt_frame;

    Clip clip;
    clip.clip_id = seed;
    clip.scenario = static_cast<uint32_t>(sc.ego.scenario);
    clip.C = C;
    clip.T = T;
    clip.H = H;
    clip.height = cfg.height;
    clip.width = cfg.width;
    for (const auto& cam : camera_rig(C)) clip.camera_ids.push_back(cam.name);

    // Destination marker: the ego position at the end of the final future
    // horizon. World-fixed across the whole clip.
    std::array<float, 2> dest{};
    {
        float x, y, h, v;
        ego_pose_at(sc, t_last + cfg.future_dt * H, x, y, h, v);
        dest = {x, y};
    }

    clip.history.resize(T);
    clip.timestamps.resize(T);
    for (int k = 0; k < T; ++k) {
        const double t = k * dt_frame;
        clip.timestamps[k] = static_cast<float>(t);
        float x, y, h, v;
        ego_pose_at(sc, t, x, y, h, v);
        clip.history[k] = {x, y, h, 0.0f};
    }
    // Recorded speed is the backward finite difference of positions, which
    // makes the kinematic-consistency invariant exact by construction.
    for (int k = 1; k < T; ++k) {
        const float dx = clip.history[k][0] - clip.history[k - 1][0];
        const float dy = clip.history[k][1] - clip.history[k - 1][1];
        clip.history[k][3] = std::hypot(dx, dy) / static_cast<float>(dt_frame);
    }
    clip.history[0][3] = clip.history[1][3];

    clip.futures.resize(static_cast<size_t>(T) * H * 2);
    for (int k = 0; k < T; ++k) {
        const double t_k = k * dt_frame;
        const auto& hk = clip.history[k];
        const float ch = std::cos(hk[2]), sh = std::sin(hk[2]);
        for (int j = 0; j < H; ++j) {
            float x, y, h, v;
            ego_pose_at(sc, t_k + cfg.future_dt * (j + 1), x, y, h, v);
            const float rx = x - hk[0], ry = y - hk[1];
            clip.futures[(static_cast<size_t>(k) * H + j) * 2 + 0] = ch * rx + sh * ry;
            clip.futures[(static_cast<size_t>(k) * H + j) * 2 + 1] = -sh * rx + ch * ry;
        }
    }

    const auto rig = camera_rig(C);
    clip.images.resize(static_cast<size_t>(C) * T);
    for (int k = 0; k < T; ++k) {
        const WorldState w = world_at(sc, cfg, k * dt_frame, dest);
        for (int c = 0; c < C; ++c)
            clip.images[static_cast<size_t>(c) * T + k] =
                render_camera(w, rig[c], w.seed, cfg.height, cfg.width);
    }
    return clip;
}

// Deterministic 90/10 train/test split by clip-id hash.
enum class Split { train = 0, test = 1 };
inline Split split_of(uint64_t clip_id) {
    return splitmix64(clip_id ^ 0x5f1e6e1a7c0ddeadULL) % 10 == 9 ? Split::test : Split::train;
}

}  // namespace flex::world
