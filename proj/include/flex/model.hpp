#pragma once

// End-to-end model assembly: images -> patch tokens -> (scene encoder | raw
// baseline tokens) -> interleaved policy sequence -> waypoint logits. One
// Model owns every parameterized stage; the flex and baseline paths share the
// patchifier, history encoder, and policy head so representation comparisons
// differ only in the scene stream.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "flex/core.hpp"
#include "flex/nn.hpp"
#include "flex/patchify.hpp"
#include "flex/policy.hpp"
#include "flex/scene_encoder.hpp"
#include "flex/tensor.hpp"
#include "flex/trajectory.hpp"
#include "flex/worldsim.hpp"

namespace flex::model {

struct ModelConfig {
    policy::Repr repr = policy::Repr::flex;
    policy::Mode mode = policy::Mode::interleaved;
    enc::Variant variant = enc::Variant::joint_self;

    int cameras = 2, timesteps = 9, horizon = 10;
    int height = 32, width = 64;

    int patch_size = 8, patch_depth = 0, patch_heads = 4;
    int d_enc = 64;
    int scene_tokens = 90, enc_layers = 4, enc_heads = 4;

    int d_llm = 128, policy_blocks = 3, policy_heads = 4;
    int history_window = 4;

    int tokens_per_image() const { return (height / patch_size) * (width / patch_size); }

    // Scene rows per timestep in the policy sequence.
    int chunk() const {
        return repr == policy::Repr::flex ? scene_tokens / timesteps
                                          : tokens_per_image() * cameras;
    }

    void validate() const {
        if (cameras < 1 || cameras > 7) fail_config("cameras must be in [1, 7], got ", cameras);
        if (timesteps <= 0 || horizon <= 0)
            fail_config("timesteps and horizon must be positive, got ", timesteps, ", ", horizon);
        if (patch_size <= 0 || height % patch_size != 0 || width % patch_size != 0)
            fail_config(height, "x", width, " images not divisible into ", patch_size,
                        "-pixel patches");
        if (d_enc <= 0 || enc_heads <= 0 || d_enc % enc_heads != 0)
            fail_config("d_enc ", d_enc, " must be a positive multiple of enc_heads ", enc_heads);
        if (d_llm <= 0 || policy_heads <= 0 || d_llm % policy_heads != 0)
            fail_config("d_llm ", d_llm, " must be a positive multiple of policy_heads ",
                        policy_heads);
        if (history_window <= 0) fail_config("history_window must be positive, got ", history_window);
        if (repr == policy::Repr::flex) {
            if (scene_tokens <= 0 || scene_tokens % timesteps != 0)
                fail_config("scene_tokens ", scene_tokens, " must be a positive multiple of T=",
                            timesteps);
            const bool per_image = variant == enc::Variant::per_image_self ||
                                   variant == enc::Variant::per_image_cross;
            if (per_image && scene_tokens % (cameras * timesteps) != 0)
                fail_config("scene_tokens ", scene_tokens, " must divide across ",
                            cameras * timesteps, " images for per-image variants");
        }
    }
};

class Model {
public:
    struct Assembled {
        Tensor x;                                  // total_len x d_llm content embeddings
        std::vector<std::vector<int>> future_ids;  // per supervised step, H waypoint ids
    };

    Model(ParamSet& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        patch::PatchifierConfig pcfg;
        pcfg.patch_size = cfg_.patch_size;
        pcfg.d_enc = cfg_.d_enc;
        pcfg.depth = cfg_.patch_depth;
        pcfg.heads = cfg_.patch_heads;
        patchifier_.emplace(ps, pcfg, rng);

        if (cfg_.repr == policy::Repr::flex) {
            enc::EncoderConfig ecfg;
            ecfg.scene_tokens = cfg_.scene_tokens;
            ecfg.layers = cfg_.enc_layers;
            ecfg.heads = cfg_.enc_heads;
            ecfg.d_enc = cfg_.d_enc;
            ecfg.variant = cfg_.variant;
            encoder_.emplace(ps, ecfg, cfg_.cameras, rng);
            scene_proj_.emplace(ps, "scene.proj", cfg_.d_enc, cfg_.d_llm, rng);
        } else {
            baseline_proj_.emplace(ps, cfg_.d_enc, cfg_.d_llm, rng);
        }
        history_.emplace(ps, cfg_.history_window, cfg_.d_llm, rng);

        policy::LayoutConfig lcfg;
        lcfg.mode = cfg_.mode;
        lcfg.repr = cfg_.repr;
        lcfg.timesteps = cfg_.timesteps;
        lcfg.horizon = cfg_.horizon;
        lcfg.chunk = cfg_.chunk();
        lcfg.cameras = cfg_.cameras;
        lcfg.start_id = vocab_.seq_start();
        lcfg.end_id = vocab_.seq_end();
        lcfg.first_camera_id = vocab_.camera_token(0);
        layout_ = policy::build_layout(lcfg);
        mask_ = policy::build_mask(layout_);

        lcfg.mode = policy::Mode::non_interleaved;
        eval_layout_ = policy::build_layout(lcfg);
        eval_mask_ = policy::build_mask(eval_layout_);

        policy::PolicyConfig qcfg;
        qcfg.d_llm = cfg_.d_llm;
        qcfg.blocks = cfg_.policy_blocks;
        qcfg.heads = cfg_.policy_heads;
        qcfg.vocab = vocab_.size(cfg_.cameras);
        qcfg.max_logical = std::max(layout_.max_logical, eval_layout_.max_logical);
        policy_.emplace(ps, qcfg, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const traj::WaypointVocab& vocab() const { return vocab_; }
    const policy::SequenceLayout& layout() const { return layout_; }
    const policy::SequenceLayout& eval_layout() const { return eval_layout_; }
    const BoolMatrix& mask() const { return mask_; }
    const policy::PolicyHead& policy_head() const { return *policy_; }
    const patch::Patchifier& patchifier() const { return *patchifier_; }
    const enc::SceneEncoder& encoder() const {
        if (!encoder_) fail_config("baseline model has no scene encoder");
        return *encoder_;
    }

    std::vector<patch::TokenGrid> patchify_clip(const world::Clip& clip) const {
        check_clip(clip);
        std::vector<patch::TokenGrid> grids;
        grids.reserve(size_t(cfg_.cameras) * cfg_.timesteps);
        for (int t = 0; t < cfg_.timesteps; ++t)
            for (int c = 0; c < cfg_.cameras; ++c)
                grids.push_back(patchifier_->patchify(clip.image(c, t), c, t));
        return grids;
    }

    // Scene rows for the policy sequence, one tensor per timestep, each
    // chunk() x d_llm.
    std::vector<Tensor> scene_rows(const std::vector<patch::TokenGrid>& grids) const {
        if (cfg_.repr == policy::Repr::flex) {
            Tensor scene = scene_proj_->forward(encoder_->encode_variant(grids));
            return policy::partition_chunks(scene, cfg_.timesteps);
        }
        Tensor all = patch::baseline_scene(grids, *baseline_proj_);
        std::vector<Tensor> rows;
        rows.reserve(cfg_.timesteps);
        const int per = cfg_.chunk();
        for (int t = 0; t < cfg_.timesteps; ++t) rows.push_back(slice_rows(all, t * per, per));
        return rows;
    }

    Tensor history_token(const world::Clip& clip, int k) const {
        return history_->forward(traj::history_features(clip, k, cfg_.history_window));
    }

    // Teacher-forced training sequence plus per-step ground-truth ids.
    Assembled assemble(const world::Clip& clip) const {
        auto grids = patchify_clip(clip);
        auto scenes = scene_rows(grids);

        Assembled out;
        for (int k : layout_.supervised_steps())
            out.future_ids.push_back(traj::discretize(vocab_, clip.future_at(k), cfg_.horizon));

        const auto steps = layout_.supervised_steps();
        std::vector<Tensor> rows;
        rows.reserve(layout_.segments.size());
        for (const auto& s : layout_.segments) {
            switch (s.kind) {
                case policy::SegmentKind::special:
                    rows.push_back(policy_->embed_ids(s.token_ids));
                    break;
                case policy::SegmentKind::scene_chunk:
                case policy::SegmentKind::image_tokens:
                    rows.push_back(scenes[s.timestep]);
                    break;
                case policy::SegmentKind::history:
                    rows.push_back(history_token(clip, s.timestep));
                    break;
                case policy::SegmentKind::future: {
                    const auto it = std::find(steps.begin(), steps.end(), s.timestep);
                    rows.push_back(policy_->embed_ids(out.future_ids[it - steps.begin()]));
                    break;
                }
            }
        }
        out.x = concat_rows(rows);
        return out;
    }

    Tensor forward_logits(const Tensor& x) const { return policy_->forward(x, layout_, mask_); }

    // Inference-time context: every row before the final future span of the
    // non-interleaved layout.
    Tensor eval_prefix(const world::Clip& clip) const {
        auto grids = patchify_clip(clip);
        auto scenes = scene_rows(grids);
        std::vector<Tensor> rows;
        for (const auto& s : eval_layout_.segments) {
            if (s.kind == policy::SegmentKind::future) break;
            switch (s.kind) {
                case policy::SegmentKind::special:
                    rows.push_back(policy_->embed_ids(s.token_ids));
                    break;
                case policy::SegmentKind::scene_chunk:
                case policy::SegmentKind::image_tokens:
                    rows.push_back(scenes[s.timestep]);
                    break;
                case policy::SegmentKind::history:
                    rows.push_back(history_token(clip, s.timestep));
                    break;
                default:
                    break;
            }
        }
        return concat_rows(rows);
    }

    // k greedy/temperature rollouts of the final-step future.
    policy::Trajectories predict(const world::Clip& clip, int k, float temperature, Rng& rng) const {
        NoGradGuard guard;
        Tensor prefix = eval_prefix(clip);
        return policy::sample_trajectories(*policy_, eval_layout_, prefix, vocab_, k, temperature,
                                           rng);
    }

private:
    void check_clip(const world::Clip& clip) const {
        if (clip.C != cfg_.cameras || clip.T != cfg_.timesteps || clip.H < cfg_.horizon)
            fail_shape("clip geometry C=", clip.C, " T=", clip.T, " H=", clip.H,
                       " does not match model C=", cfg_.cameras, " T=", cfg_.timesteps,
                       " H=", cfg_.horizon);
        if (clip.height != cfg_.height || clip.width != cfg_.width)
            fail_shape("clip images ", clip.height, "x", clip.width, ", model expects ",
                       cfg_.height, "x", cfg_.width);
    }

    ModelConfig cfg_;
    traj::WaypointVocab vocab_;
    std::optional<patch::Patchifier> patchifier_;
    std::optional<enc::SceneEncoder> encoder_;
    std::optional<Linear> scene_proj_;
    std::optional<patch::Projection> baseline_proj_;
    std::optional<traj::HistoryEncoder> history_;
    std::optional<policy::PolicyHead> policy_;
    policy::SequenceLayout layout_;
    policy::SequenceLayout eval_layout_;
    BoolMatrix mask_;
    BoolMatrix eval_mask_;
};

}  // namespace flex::model
