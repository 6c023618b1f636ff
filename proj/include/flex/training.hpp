#pragma once

// Two-stage training: stage 1 trains the encoder and policy with the
// patchifier frozen; stage 2 fine-tunes everything at a small constant
// learning rate. Batch selection is stateless — the clip indices for step s
// are drawn from an RNG seeded by (run seed, s) — so resuming from a
// checkpoint reproduces the remaining steps bit-exactly with no extra
// bookkeeping.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flex/checkpoint.hpp"
#include "flex/core.hpp"
#include "flex/dataset.hpp"
#include "flex/model.hpp"
#include "flex/optim.hpp"

namespace flex::train {

// RNG stream tags: parameters use stream 10; step s draws its batch from
// stream 1000+s; evaluation rollouts use 5000+clip elsewhere.
constexpr std::uint64_t kParamStream = 10;
constexpr std::uint64_t kBatchStreamBase = 1000;

struct RunConfig {
    std::string repr = "flex";          // flex | baseline
    std::string variant = "joint_self";  // encoder attention wiring
    bool interleave = true;

    int cameras = 2, timesteps = 9, horizon = 10;
    int height = 32, width = 64;
    int patch_size = 8, patch_depth = 0, patch_heads = 4;
    int d_enc = 64, scene_tokens = 90, enc_layers = 4, enc_heads = 4;
    int d_llm = 128, policy_blocks = 3, policy_heads = 4, history_window = 4;

    int stage1_steps = 2000, stage2_steps = 500, warmup = 100, batch = 16;
    double stage1_peak_lr = 4e-4, stage2_lr = 1e-5;
    std::uint64_t seed = 7;
    std::string dataset;

    void validate() const {
        if (batch <= 0) fail_config("batch must be positive, got ", batch);
        if (stage1_steps < 0 || stage2_steps < 0) fail_config("negative step counts");
        if (warmup < 0 || warmup > stage1_steps)
            fail_config("warmup ", warmup, " outside [0, ", stage1_steps, "]");
        if (stage2_lr >= stage1_peak_lr)
            fail_config("stage-2 lr ", stage2_lr, " must be below the stage-1 peak ",
                        stage1_peak_lr);
        if (dataset.empty()) fail_config("run config needs a dataset path");
        model_config().validate();
    }

    model::ModelConfig model_config() const {
        model::ModelConfig m;
        m.repr = policy::repr_from_name(repr);
        m.mode = interleave ? policy::Mode::interleaved : policy::Mode::non_interleaved;
        m.variant = enc::variant_from_name(variant);
        m.cameras = cameras;
        m.timesteps = timesteps;
        m.horizon = horizon;
        m.height = height;
        m.width = width;
        m.patch_size = patch_size;
        m.patch_depth = patch_depth;
        m.patch_heads = patch_heads;
        m.d_enc = d_enc;
        m.scene_tokens = scene_tokens;
        m.enc_layers = enc_layers;
        m.enc_heads = enc_heads;
        m.d_llm = d_llm;
        m.policy_blocks = policy_blocks;
        m.policy_heads = policy_heads;
        m.history_window = history_window;
        return m;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"repr", repr},
                              {"variant", variant},
                              {"interleave", interleave},
                              {"cameras", cameras},
                              {"timesteps", timesteps},
                              {"horizon", horizon},
                              {"height", height},
                              {"width", width},
                              {"patch_size", patch_size},
                              {"patch_depth", patch_depth},
                              {"patch_heads", patch_heads},
                              {"d_enc", d_enc},
                              {"scene_tokens", scene_tokens},
                              {"enc_layers", enc_layers},
                              {"enc_heads", enc_heads},
                              {"d_llm", d_llm},
                              {"policy_blocks", policy_blocks},
                              {"policy_heads", policy_heads},
                              {"history_window", history_window},
                              {"stage1_steps", stage1_steps},
                              {"stage2_steps", stage2_steps},
                              {"warmup", warmup},
                              {"batch", batch},
                              {"stage1_peak_lr", stage1_peak_lr},
                              {"stage2_lr", stage2_lr},
                              {"seed", seed},
                              {"dataset", dataset}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig rc;
        rc.repr = j.value("repr", rc.repr);
        rc.variant = j.value("variant", rc.variant);
        rc.interleave = j.value("interleave", rc.interleave);
        rc.cameras = j.value("cameras", rc.cameras);
        rc.timesteps = j.value("timesteps", rc.timesteps);
        rc.horizon = j.value("horizon", rc.horizon);
        rc.height = j.value("height", rc.height);
        rc.width = j.value("width", rc.width);
        rc.patch_size = j.value("patch_size", rc.patch_size);
        rc.patch_depth = j.value("patch_depth", rc.patch_depth);
        rc.patch_heads = j.value("patch_heads", rc.patch_heads);
        rc.d_enc = j.value("d_enc", rc.d_enc);
        rc.scene_tokens = j.value("scene_tokens", rc.scene_tokens);
        rc.enc_layers = j.value("enc_layers", rc.enc_layers);
        rc.enc_heads = j.value("enc_heads", rc.enc_heads);
        rc.d_llm = j.value("d_llm", rc.d_llm);
        rc.policy_blocks = j.value("policy_blocks", rc.policy_blocks);
        rc.policy_heads = j.value("policy_heads", rc.policy_heads);
        rc.history_window = j.value("history_window", rc.history_window);
        rc.stage1_steps = j.value("stage1_steps", rc.stage1_steps);
        rc.stage2_steps = j.value("stage2_steps", rc.stage2_steps);
        rc.warmup = j.value("warmup", rc.warmup);
        rc.batch = j.value("batch", rc.batch);
        rc.stage1_peak_lr = j.value("stage1_peak_lr", rc.stage1_peak_lr);
        rc.stage2_lr = j.value("stage2_lr", rc.stage2_lr);
        rc.seed = j.value("seed", rc.seed);
        rc.dataset = j.value("dataset", rc.dataset);
        return rc;
    }
};

// ---------------------------------------------------------------------------
// Loss.
// ---------------------------------------------------------------------------

// Mean cross-entropy over every future-token position of every supervised
// step. The logits at history_k predict the step's first waypoint id; the
// logits at future_k[i] predict waypoint i+1.
inline Tensor interleaved_loss(const Tensor& logits, const policy::SequenceLayout& layout,
                               const std::vector<std::vector<int>>& future_ids) {
    const auto steps = layout.supervised_steps();
    if (future_ids.size() != steps.size())
        fail_shape("interleaved_loss: ", future_ids.size(), " target spans for ", steps.size(),
                   " supervised steps");
    std::vector<int> rows;
    std::vector<int> targets;
    for (size_t i = 0; i < steps.size(); ++i) {
        const auto& ids = future_ids[i];
        const auto& fut = layout.future_segment(steps[i]);
        if (static_cast<int>(ids.size()) != fut.length)
            fail_shape("interleaved_loss: step ", steps[i], " has ", ids.size(), " targets for a ",
                       fut.length, "-token future span");
        rows.push_back(layout.history_index(steps[i]));
        targets.push_back(ids[0]);
        for (int r = 0; r + 1 < fut.length; ++r) {
            rows.push_back(fut.start + r);
            targets.push_back(ids[r + 1]);
        }
    }
    return cross_entropy_mean(gather_rows(logits, rows), targets);
}

// ---------------------------------------------------------------------------
// Prefix-split oracle: recompute step k's logits on the physically truncated
// sequence [start, scene 1..k, history_k, future_k, end] laid out as its own
// non-interleaved sequence. The interleaved mask must reproduce these.
// ---------------------------------------------------------------------------

struct PrefixForward {
    Tensor logits;
    policy::SequenceLayout layout;
};

inline PrefixForward prefix_split_forward(const model::Model& m, const Tensor& x, int k) {
    const auto& full = m.layout();
    std::vector<int> idx = policy::prefix_positions(full, k);
    idx.push_back(full.total_len - 1);  // carry the end token along
    policy::LayoutConfig cfg = full.config;
    cfg.mode = policy::Mode::non_interleaved;
    cfg.timesteps = k + 1;
    policy::SequenceLayout tl = policy::build_layout(cfg);
    if (tl.total_len != static_cast<int>(idx.size()))
        fail_shape("prefix forward: layout length ", tl.total_len, " vs ", idx.size(), " rows");
    Tensor logits = m.policy_head().forward(gather_rows(x, idx), tl, policy::build_mask(tl));
    return {logits, tl};
}

inline double prefix_split_loss(const model::Model& m, const model::Model::Assembled& a, int k) {
    PrefixForward pf = prefix_split_forward(m, a.x, k);
    const auto steps = m.layout().supervised_steps();
    const auto it = std::find(steps.begin(), steps.end(), k);
    if (it == steps.end()) fail_config("step ", k, " is not supervised in this layout");
    Tensor loss = interleaved_loss(pf.logits, pf.layout, {a.future_ids[it - steps.begin()]});
    return loss.item();
}

// ---------------------------------------------------------------------------
// Trainer.
// ---------------------------------------------------------------------------

struct StepRecord {
    std::int64_t step = 0;
    int stage = 1;
    double loss = 0.0;
    double lr = 0.0;
    double clips_per_s = 0.0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"step", step},
                              {"stage", stage},
                              {"loss", loss},
                              {"lr", lr},
                              {"clips_per_s", clips_per_s}};
    }
};

class Trainer {
public:
    Trainer(RunConfig rc, std::string out_dir) : rc_(std::move(rc)), out_dir_(std::move(out_dir)) {
        rc_.validate();
        reader_.emplace(rc_.dataset);
        check_dataset();
        train_indices_ = reader_->split_indices(world::Split::train);
        if (train_indices_.empty()) fail_config("dataset '", rc_.dataset, "' has no training clips");
        Rng rng(derive_seed(rc_.seed, kParamStream));
        model_.emplace(params_, rc_.model_config(), rng);
        opt_.emplace(params_);
    }

    const RunConfig& run_config() const { return rc_; }
    model::Model& model() { return *model_; }
    ParamSet& params() { return params_; }
    AdamW& optimizer() { return *opt_; }
    std::int64_t global_step() const { return opt_->step_count(); }
    std::int64_t total_steps() const { return rc_.stage1_steps + rc_.stage2_steps; }
    data::DatasetReader& reader() { return *reader_; }
    const std::vector<std::size_t>& train_indices() const { return train_indices_; }

    double clip_loss_value(const world::Clip& clip) {
        NoGradGuard guard;
        auto a = model_->assemble(clip);
        return interleaved_loss(model_->forward_logits(a.x), model_->layout(), a.future_ids).item();
    }

    // One optimizer step. Draws `batch` clips from the step-keyed RNG stream,
    // accumulates per-clip gradients scaled by 1/batch, applies AdamW.
    StepRecord step_once() {
        const std::int64_t s = opt_->step_count() + 1;
        if (s > total_steps()) fail_config("training already complete at step ", s);
        const int stage = s <= rc_.stage1_steps ? 1 : 2;
        params_.set_frozen_prefix("patchify.", stage == 1);
        const double lr = stage == 1
                              ? lr_schedule(s, rc_.warmup, rc_.stage1_peak_lr, rc_.stage1_steps)
                              : rc_.stage2_lr;
        opt_->set_lr(lr);
        params_.zero_grad();

        const auto t0 = std::chrono::steady_clock::now();
        Rng batch_rng(derive_seed(rc_.seed, kBatchStreamBase + static_cast<std::uint64_t>(s)));
        double mean_loss = 0.0;
        for (int b = 0; b < rc_.batch; ++b) {
            const std::size_t idx =
                train_indices_[batch_rng.next_below(train_indices_.size())];
            world::Clip clip = reader_->read(idx);
            auto a = model_->assemble(clip);
            Tensor loss = interleaved_loss(model_->forward_logits(a.x), model_->layout(),
                                           a.future_ids);
            const double v = loss.item();
            if (!std::isfinite(v))
                throw std::runtime_error("training aborted: non-finite loss at step " +
                                         std::to_string(s) + " (clip index " +
                                         std::to_string(idx) + ")");
            backward(loss, 1.0f / static_cast<float>(rc_.batch));
            mean_loss += v / rc_.batch;
        }
        opt_->step();
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        StepRecord rec;
        rec.step = s;
        rec.stage = stage;
        rec.loss = mean_loss;
        rec.lr = lr;
        rec.clips_per_s = secs > 0 ? rc_.batch / secs : 0.0;
        return rec;
    }

    void save_state(const std::string& prefix) {
        save_checkpoint(prefix + ".ckpt", params_);
        save_optimizer_state(prefix + ".opt", params_, *opt_);
    }

    void load_state(const std::string& prefix) {
        load_checkpoint(prefix + ".ckpt", params_);
        load_optimizer_state(prefix + ".opt", params_, *opt_);
    }

    nlohmann::json manifest() const {
        return nlohmann::json{{"config", rc_.to_json()},
                              {"dataset_header_sha1", git_blob_sha1(reader_->header_json())},
                              {"train_clips", train_indices_.size()},
                              {"total_clips", reader_->size()},
                              {"parameters", params_.total_size()}};
    }

    void write_manifest() const {
        std::filesystem::create_directories(out_dir_);
        std::ofstream os(out_dir_ + "/manifest.json");
        if (!os) throw IoError("cannot write manifest in '" + out_dir_ + "'");
        os << manifest().dump(2) << "\n";
    }

    // Full two-stage run: manifest first, then every step with JSONL metrics,
    // with a checkpoint at the end of each stage.
    void run(std::ostream* metrics, std::ostream* progress = nullptr) {
        write_manifest();
        std::ofstream metrics_file;
        if (!metrics) {
            metrics_file.open(out_dir_ + "/metrics.jsonl");
            metrics = &metrics_file;
        }
        while (global_step() < total_steps()) {
            StepRecord rec = step_once();
            (*metrics) << rec.to_json().dump() << "\n";
            if (progress && (rec.step % 25 == 0 || rec.step == total_steps()))
                (*progress) << "step " << rec.step << "/" << total_steps() << " stage " << rec.stage
                            << " loss " << rec.loss << " lr " << rec.lr << "\n";
            if (rec.step == rc_.stage1_steps) save_state(out_dir_ + "/stage1");
            if (rec.step == total_steps()) save_state(out_dir_ + "/stage2");
        }
        metrics->flush();
    }

private:
    void check_dataset() {
        const world::WorldConfig dc = data::config_from_json(reader_->config());
        if (dc.cameras != rc_.cameras || dc.timesteps != rc_.timesteps ||
            dc.horizon < rc_.horizon || dc.height != rc_.height || dc.width != rc_.width)
            fail_config("dataset geometry (C=", dc.cameras, " T=", dc.timesteps, " H=", dc.horizon,
                        " ", dc.height, "x", dc.width, ") incompatible with run config (C=",
                        rc_.cameras, " T=", rc_.timesteps, " H=", rc_.horizon, " ", rc_.height,
                        "x", rc_.width, ")");
    }

    RunConfig rc_;
    std::string out_dir_;
    std::optional<data::DatasetReader> reader_;
    std::vector<std::size_t> train_indices_;
    ParamSet params_;
    std::optional<model::Model> model_;
    std::optional<AdamW> opt_;
};

}  // namespace flex::train
